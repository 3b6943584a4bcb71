//! Unit-hypersphere geometry.
//!
//! A [`FeatureSet`] is an immutable `N x m` row-major matrix whose rows lie on
//! `S^{m-1}`. Construction rejects rows whose norm deviates from 1 by more than
//! [`NORM_TOL`]; nothing is renormalized behind the caller's back.
//!
//! Random sampling uses ChaCha8 (`rand_chacha`) seeded through
//! `SeedableRng::seed_from_u64`, so a seed reproduces the same points on every
//! platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum allowed deviation of a row norm from 1.
pub const NORM_TOL: f64 = 1e-9;

/// Vectors with norm at or below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// The generator used for every seeded draw in the crate.
pub type SeedRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[inline]
pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scale `v` to unit length.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(Error::InvalidDimension { dim: v.len() });
    }
    let n = norm(v);
    if !(n > ZERO_NORM) {
        return Err(Error::ZeroVector { norm: n });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

pub(crate) fn normalize_in_place(v: &mut [f64]) -> Result<()> {
    let n = norm(v);
    if !(n > ZERO_NORM) {
        return Err(Error::ZeroVector { norm: n });
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

/// `||u - v||^2 = 2 - 2 u.v` for unit vectors, clamped to `[0, 4]`.
#[inline]
pub fn squared_distance(u: &[f64], v: &[f64]) -> f64 {
    (2.0 - 2.0 * dot(u, v)).clamp(0.0, 4.0)
}

/// Polar angle of a point on `S^1`, in `(-pi, pi]`.
pub fn angle_of(p: &[f64]) -> Result<f64> {
    if p.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: p.len(),
        });
    }
    Ok(p[1].atan2(p[0]))
}

/// `N` unit vectors in `R^m`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFeatureSet", into = "RawFeatureSet")]
pub struct FeatureSet {
    data: Vec<f64>,
    n_points: usize,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct RawFeatureSet {
    dim: usize,
    data: Vec<f64>,
}

impl TryFrom<RawFeatureSet> for FeatureSet {
    type Error = Error;
    fn try_from(raw: RawFeatureSet) -> Result<Self> {
        FeatureSet::from_flat(raw.data, raw.dim)
    }
}

impl From<FeatureSet> for RawFeatureSet {
    fn from(f: FeatureSet) -> Self {
        RawFeatureSet {
            dim: f.dim,
            data: f.data,
        }
    }
}

impl FeatureSet {
    /// Build from a flat row-major buffer, validating every row norm.
    pub fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension { dim });
        }
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::CountMismatch(format!(
                "buffer of length {} is not a multiple of dim {}",
                data.len(),
                dim
            )));
        }
        for (row, chunk) in data.chunks_exact(dim).enumerate() {
            let n = norm(chunk);
            if !((n - 1.0).abs() <= NORM_TOL) {
                return Err(Error::NormViolation {
                    row,
                    norm: n,
                    tol: NORM_TOL,
                });
            }
        }
        let n_points = data.len() / dim;
        Ok(Self {
            data,
            n_points,
            dim,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or(Error::EmptyInput)?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(data, dim)
    }

    /// Normalize every row of an arbitrary buffer and wrap the result.
    pub fn normalized_from_flat(mut data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension { dim });
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::EmptyInput);
        }
        for chunk in data.chunks_exact_mut(dim) {
            normalize_in_place(chunk)?;
        }
        Self::from_flat(data, dim)
    }

    /// `n` copies of the same unit vector.
    pub fn repeated(point: &[f64], n: usize) -> Result<Self> {
        let data = point
            .iter()
            .copied()
            .cycle()
            .take(point.len() * n)
            .collect();
        Self::from_flat(data, point.len())
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    /// Select rows by index.
    pub fn gather(&self, idx: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            if i >= self.n_points {
                return Err(Error::CountMismatch(format!(
                    "index {} out of range for {} points",
                    i, self.n_points
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::from_flat(data, self.dim)
    }

    /// Concatenate two sets with equal dimension.
    pub fn concat(&self, other: &FeatureSet) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::from_flat(data, self.dim)
    }

    /// Largest `| ||row|| - 1 |` over the set.
    pub fn max_norm_deviation(&self) -> f64 {
        self.rows()
            .map(|r| (norm(r) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Apply a linear map `x -> A x` (row-major `dim x dim`) to every row.
    /// Intended for orthogonal `A`; the result is revalidated.
    pub fn transform(&self, a: &[f64]) -> Result<Self> {
        let m = self.dim;
        if a.len() != m * m {
            return Err(Error::DimensionMismatch {
                expected: m * m,
                got: a.len(),
            });
        }
        let mut data = Vec::with_capacity(self.data.len());
        for r in self.rows() {
            for k in 0..m {
                data.push(dot(&a[k * m..(k + 1) * m], r));
            }
        }
        Self::from_flat(data, m)
    }
}

/// Positive pairs: row `i` of `left` pairs with row `i` of `right`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedFeatures {
    left: FeatureSet,
    right: FeatureSet,
}

impl PairedFeatures {
    pub fn new(left: FeatureSet, right: FeatureSet) -> Result<Self> {
        if left.dim() != right.dim() {
            return Err(Error::DimensionMismatch {
                expected: left.dim(),
                got: right.dim(),
            });
        }
        if left.n_points() != right.n_points() {
            return Err(Error::CountMismatch(format!(
                "left has {} rows, right has {}",
                left.n_points(),
                right.n_points()
            )));
        }
        Ok(Self { left, right })
    }

    /// Every point paired with itself.
    pub fn aligned(f: FeatureSet) -> Self {
        Self {
            left: f.clone(),
            right: f,
        }
    }

    pub fn left(&self) -> &FeatureSet {
        &self.left
    }

    pub fn right(&self) -> &FeatureSet {
        &self.right
    }

    pub fn len(&self) -> usize {
        self.left.n_points()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.left.dim()
    }

    pub fn swapped(&self) -> Self {
        Self {
            left: self.right.clone(),
            right: self.left.clone(),
        }
    }

    pub fn into_parts(self) -> (FeatureSet, FeatureSet) {
        (self.left, self.right)
    }
}

/// Draw one point uniformly from `S^{m-1}` (normalized standard Gaussian).
pub fn sample_uniform_point<R: rand::Rng + ?Sized>(rng: &mut R, m: usize) -> Vec<f64> {
    let mut v = vec![0.0; m];
    loop {
        for x in v.iter_mut() {
            *x = StandardNormal.sample(rng);
        }
        if normalize_in_place(&mut v).is_ok() {
            return v;
        }
    }
}

/// `n` i.i.d. uniform points on `S^{m-1}`, reproducible from `seed`.
pub fn sample_uniform_sphere(n: usize, m: usize, seed: u64) -> Result<FeatureSet> {
    if m < 2 {
        return Err(Error::InvalidDimension { dim: m });
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mut rng = seeded_rng(seed);
    let mut data = Vec::with_capacity(n * m);
    for _ in 0..n {
        data.extend(sample_uniform_point(&mut rng, m));
    }
    FeatureSet::from_flat(data, m)
}

/// Points at angles `offset + 2 pi k / n` on `S^1`.
pub fn evenly_spaced_circle(n: usize, offset: f64) -> Result<FeatureSet> {
    let data: Vec<f64> = (0..n)
        .flat_map(|k| {
            let a = offset + std::f64::consts::TAU * k as f64 / n as f64;
            [a.cos(), a.sin()]
        })
        .collect();
    FeatureSet::from_flat(data, 2)
}
