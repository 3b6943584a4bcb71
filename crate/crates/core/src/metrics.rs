//! Alignment, uniformity and contrastive-loss evaluations.
//!
//! Everything that averages exponentials is reduced in log-sum-exp form. Pair
//! sums are accumulated row by row (row `i` against `j > i`) and the row
//! partials are merged in ascending row order, so results do not depend on
//! how many threads computed the rows.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::log_vmf_normalizer;
use crate::sphere::{dot, squared_distance, FeatureSet, PairedFeatures};

/// Streaming `ln sum exp(x_i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl LogSumExp {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn merge(&mut self, other: &LogSumExp) {
        if other.sum == 0.0 {
            return;
        }
        if self.sum == 0.0 {
            *self = *other;
            return;
        }
        if other.max <= self.max {
            self.sum += other.sum * (other.max - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - other.max).exp() + other.sum;
            self.max = other.max;
        }
    }

    pub fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

impl FromIterator<f64> for LogSumExp {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = LogSumExp::new();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

fn merge_all(parts: &[LogSumExp]) -> LogSumExp {
    let mut acc = LogSumExp::new();
    for p in parts {
        acc.merge(p);
    }
    acc
}

/// Loss parameters and objective weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSpec {
    pub alpha: f64,
    pub t: f64,
    pub tau: f64,
    pub w_align: f64,
    pub w_unif: f64,
    pub w_contr: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            t: 2.0,
            tau: 0.5,
            w_align: 1.0,
            w_unif: 1.0,
            w_contr: 0.0,
        }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.t > 0.0 && self.tau > 0.0) {
            return Err(Error::InvalidConfig(
                "alpha, t and tau must all be > 0".into(),
            ));
        }
        let w = [self.w_align, self.w_unif, self.w_contr];
        if w.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::InvalidConfig("weights must be nonnegative".into()));
        }
        Ok(())
    }

    /// Validation for use as an optimization objective.
    pub fn validate_objective(&self) -> Result<()> {
        self.validate()?;
        if self.w_align + self.w_unif + self.w_contr <= 0.0 {
            return Err(Error::InvalidConfig(
                "at least one weight must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// A metric value together with the number of terms it aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub n_terms: usize,
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Gaussian potential `G_t(u, v) = exp(-t ||u - v||^2)`.
#[inline]
pub fn gaussian_potential(u: &[f64], v: &[f64], t: f64) -> f64 {
    (-t * squared_distance(u, v)).exp()
}

#[inline]
pub(crate) fn diff_norm_sq(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Mean of `||x_i - y_i||^alpha` over positive pairs.
pub fn align_loss(pairs: &PairedFeatures, alpha: f64) -> Result<MetricValue> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = pairs.len();
    let total: f64 = pairs
        .left()
        .rows()
        .zip(pairs.right().rows())
        .map(|(x, y)| diff_norm_sq(x, y).powf(alpha / 2.0))
        .sum();
    Ok(MetricValue {
        value: total / n as f64,
        n_terms: n,
    })
}

/// Per-row LSE of `-t ||f_i - f_j||^2` over `j > i`.
fn upper_pair_lse(f: &FeatureSet, t: f64) -> LogSumExp {
    let n = f.n_points();
    let parts: Vec<LogSumExp> = (0..n)
        .into_par_iter()
        .map(|i| {
            let fi = f.row(i);
            ((i + 1)..n)
                .map(|j| -t * squared_distance(fi, f.row(j)))
                .collect()
        })
        .collect();
    merge_all(&parts)
}

/// `ln` of the mean Gaussian potential over distinct pairs (self-pairs excluded).
pub fn unif_loss_pdist(f: &FeatureSet, t: f64) -> Result<MetricValue> {
    let n = f.n_points();
    if n < 2 {
        return Err(Error::NeedTwoPoints { got: n });
    }
    let pairs = n * (n - 1) / 2;
    let lse = upper_pair_lse(f, t);
    Ok(MetricValue {
        value: (lse.value() - (pairs as f64).ln()).min(0.0),
        n_terms: n * (n - 1),
    })
}

/// `ln` of the mean Gaussian potential over all `N^2` ordered pairs,
/// self-pairs included.
pub fn unif_loss_cdist(f: &FeatureSet, t: f64) -> Result<MetricValue> {
    let n = f.n_points();
    let nf = n as f64;
    let mut lse = LogSumExp::new();
    if n >= 2 {
        let upper = upper_pair_lse(f, t);
        lse.push(upper.value() + std::f64::consts::LN_2);
    }
    // N self-pairs of potential 1
    lse.push(nf.ln());
    Ok(MetricValue {
        value: (lse.value() - 2.0 * nf.ln()).min(0.0),
        n_terms: n * n,
    })
}

/// Uniformity of a batch measured against a feature queue.
///
/// Without `include_intra` this is `ln mean_{i,j} G_t(b_i, q_j)`. With it,
/// the `K(K-1)/2` distinct intra-batch pairs are added, each cross and intra
/// term weighted `2 / (2NK + K(K-1))`.
pub fn unif_loss_cross(
    batch: &FeatureSet,
    queue: &FeatureSet,
    t: f64,
    include_intra: bool,
) -> Result<MetricValue> {
    check_dims(batch.dim(), queue.dim())?;
    let k = batch.n_points();
    let nq = queue.n_points();
    if include_intra && k < 2 {
        return Err(Error::NeedTwoPoints { got: k });
    }
    let parts: Vec<LogSumExp> = (0..k)
        .into_par_iter()
        .map(|i| {
            let b = batch.row(i);
            queue.rows().map(|q| -t * squared_distance(b, q)).collect()
        })
        .collect();
    let mut lse = merge_all(&parts);
    let (kf, nf) = (k as f64, nq as f64);
    if include_intra {
        lse.merge(&upper_pair_lse(batch, t));
        let denom = 2.0 * nf * kf + kf * (kf - 1.0);
        Ok(MetricValue {
            value: (lse.value() + std::f64::consts::LN_2 - denom.ln()).min(0.0),
            n_terms: nq * k + k * (k - 1) / 2,
        })
    } else {
        Ok(MetricValue {
            value: (lse.value() - (nf * kf).ln()).min(0.0),
            n_terms: nq * k,
        })
    }
}

/// Single-sample contrastive loss with `M` negatives, each scored against `y`:
/// `-ln( e^{x.y/tau} / (e^{x.y/tau} + sum_i e^{n_i.y/tau}) )`.
pub fn contrastive_mc(x: &[f64], y: &[f64], negatives: &FeatureSet, tau: f64) -> Result<f64> {
    check_dims(x.len(), y.len())?;
    check_dims(x.len(), negatives.dim())?;
    let pos = dot(x, y) / tau;
    let mut lse = LogSumExp::new();
    lse.push(pos);
    for n in negatives.rows() {
        lse.push(dot(n, y) / tau);
    }
    Ok((lse.value() - pos).max(0.0))
}

/// Symmetric in-batch contrastive loss over `K` pairs: for each `x_i` the
/// negatives are `{y_j}_{j != i}`, for each `y_i` they are `{x_j}_{j != i}`,
/// and the `2K` terms are averaged.
pub fn contrastive_minibatch(pairs: &PairedFeatures, tau: f64) -> Result<MetricValue> {
    let k = pairs.len();
    if k < 2 {
        return Err(Error::NeedTwoPairs { got: k });
    }
    let (xs, ys) = (pairs.left(), pairs.right());
    let terms: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|i| {
            let pos = dot(xs.row(i), ys.row(i)) / tau;
            let row: LogSumExp = (0..k).map(|j| dot(xs.row(i), ys.row(j)) / tau).collect();
            let col: LogSumExp = (0..k).map(|j| dot(xs.row(j), ys.row(i)) / tau).collect();
            (row.value() - pos) + (col.value() - pos)
        })
        .collect();
    Ok(MetricValue {
        value: terms.iter().sum::<f64>() / (2 * k) as f64,
        n_terms: 2 * k,
    })
}

/// The two terms of the infinite-negative limit of the contrastive loss
/// (after subtracting `ln M`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitLoss {
    /// `-(1/tau) mean_i x_i.y_i`
    pub first_term: f64,
    /// `mean_i ln mean_j exp(f_i.f_j / tau)` over the pool, self-pairs included
    pub second_term: f64,
}

impl LimitLoss {
    pub fn total(&self) -> f64 {
        self.first_term + self.second_term
    }
}

/// `ln mean_j exp(q.f_j / tau)` for every row `q` of `f` against `f`.
pub(crate) fn pool_row_log_means(f: &FeatureSet, pool: &FeatureSet, tau: f64) -> Vec<f64> {
    let ln_n = (pool.n_points() as f64).ln();
    (0..f.n_points())
        .into_par_iter()
        .map(|i| {
            let q = f.row(i);
            let lse: LogSumExp = pool.rows().map(|p| dot(p, q) / tau).collect();
            lse.value() - ln_n
        })
        .collect()
}

pub fn limit_loss(pairs: &PairedFeatures, pool: &FeatureSet, tau: f64) -> Result<LimitLoss> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_dims(pairs.dim(), pool.dim())?;
    let n = pairs.len() as f64;
    let mean_dot: f64 = pairs
        .left()
        .rows()
        .zip(pairs.right().rows())
        .map(|(x, y)| dot(x, y))
        .sum::<f64>()
        / n;
    let logs = pool_row_log_means(pool, pool, tau);
    Ok(LimitLoss {
        first_term: -mean_dot / tau,
        second_term: logs.iter().sum::<f64>() / logs.len() as f64,
    })
}

/// `ln` of the vMF kernel density estimate at `query`.
pub fn log_vmf_kde_density(samples: &FeatureSet, query: &[f64], kappa: f64) -> Result<f64> {
    check_dims(samples.dim(), query.len())?;
    let log_z = log_vmf_normalizer(samples.dim(), kappa)?;
    let lse: LogSumExp = samples.rows().map(|s| kappa * dot(query, s)).collect();
    Ok(lse.value() - (samples.n_points() as f64).ln() - log_z)
}

/// vMF kernel density estimate `(1/N) sum_j exp(kappa q.f_j) / Z(m, kappa)`.
pub fn vmf_kde_density(samples: &FeatureSet, query: &[f64], kappa: f64) -> Result<f64> {
    Ok(log_vmf_kde_density(samples, query, kappa)?.exp())
}

/// Resubstitution entropy estimate with a vMF kernel of concentration `1/tau`.
pub fn resub_entropy(f: &FeatureSet, tau: f64) -> Result<f64> {
    let kappa = 1.0 / tau;
    let logs: Vec<f64> = (0..f.n_points())
        .into_par_iter()
        .map(|i| log_vmf_kde_density(f, f.row(i), kappa))
        .collect::<Result<_>>()?;
    Ok(-logs.iter().sum::<f64>() / logs.len() as f64)
}

/// Mean of `||f_i - f_j||^alpha` over unordered pairs sharing a label.
/// Lower means tighter classes.
pub fn class_concentration(f: &FeatureSet, labels: &[i64], alpha: f64) -> Result<MetricValue> {
    if labels.len() != f.n_points() {
        return Err(Error::CountMismatch(format!(
            "{} labels for {} points",
            labels.len(),
            f.n_points()
        )));
    }
    let mut classes: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        classes.entry(l).or_default().push(i);
    }
    if let Some((&label, _)) = classes.iter().find(|(_, m)| m.len() < 2) {
        return Err(Error::SingletonClass { label });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for members in classes.values() {
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                total += diff_norm_sq(f.row(i), f.row(j)).powf(alpha / 2.0);
                count += 1;
            }
        }
    }
    Ok(MetricValue {
        value: total / count as f64,
        n_terms: count,
    })
}
