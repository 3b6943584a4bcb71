//! Projected gradient descent on products of unit spheres.
//!
//! Each iteration computes the ambient Euclidean gradient, projects every row
//! onto the tangent space of its point, takes a backtracking (Armijo) step
//! along the negative projected gradient and retracts by renormalizing rows.
//! Objectives are evaluated on the flat row-major buffer of all points.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{align_loss, unif_loss_pdist, LogSumExp, LossSpec};
use crate::sphere::{dot, normalize_in_place, sample_uniform_sphere, FeatureSet, PairedFeatures};
use crate::synth::{init_embeddings, InitMode, SyntheticDataset};

const MIN_STEP: f64 = 1e-18;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    pub max_steps: usize,
    pub initial_step: f64,
    pub backtrack_factor: f64,
    pub armijo_c: f64,
    /// Stop once the Riemannian gradient norm falls to this value.
    pub grad_tol: f64,
    pub seed: u64,
    pub record_every: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            max_steps: 1000,
            initial_step: 1.0,
            backtrack_factor: 0.5,
            armijo_c: 1e-4,
            grad_tol: 1e-8,
            seed: 0,
            record_every: 10,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps < 1 {
            return Err(Error::InvalidConfig("max_steps must be >= 1".into()));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::InvalidConfig("initial_step must be > 0".into()));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidConfig(
                "backtrack_factor must be in (0, 1)".into(),
            ));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::InvalidConfig("armijo_c must be in (0, 1)".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidConfig("grad_tol must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub objective: f64,
    /// Not defined for the point-energy problem.
    pub align_metric: Option<f64>,
    pub unif_metric: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub steps_taken: usize,
    pub converged: bool,
}

impl Trajectory {
    pub fn last(&self) -> Option<&StepRecord> {
        self.steps.last()
    }

    /// True when recorded objectives never increase.
    pub fn is_monotone(&self) -> bool {
        self.steps
            .windows(2)
            .all(|w| w[1].objective <= w[0].objective)
    }
}

/// Remove the component of `g` along the unit vector `p`.
pub fn tangent_project(p: &[f64], g: &[f64]) -> Vec<f64> {
    let c = dot(g, p);
    g.iter().zip(p).map(|(gi, pi)| gi - c * pi).collect()
}

fn project_rows(x: &[f64], g: &mut [f64], dim: usize) {
    for (p, gr) in x.chunks_exact(dim).zip(g.chunks_exact_mut(dim)) {
        let c = dot(gr, p);
        gr.iter_mut().zip(p).for_each(|(gi, pi)| *gi -= c * pi);
    }
}

fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Objectives and their ambient gradients on raw row-major buffers.
///
/// These accept points off the sphere so that they can be checked against
/// finite differences; distances use `||u - v||^2` directly.
pub mod objectives {
    use super::*;

    /// `sum_{i<j} exp(-t ||u_i - u_j||^2)`.
    pub fn point_energy(x: &[f64], dim: usize, t: f64) -> f64 {
        let n = x.len() / dim;
        let rows: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let ui = &x[i * dim..(i + 1) * dim];
                ((i + 1)..n)
                    .map(|j| (-t * sq_dist(ui, &x[j * dim..(j + 1) * dim])).exp())
                    .sum()
            })
            .collect();
        rows.iter().sum()
    }

    /// Energy and its gradient: `d/du_i = sum_{j != i} 2t G_t(u_i, u_j) (u_j - u_i)`.
    pub fn point_energy_grad(x: &[f64], dim: usize, t: f64) -> (f64, Vec<f64>) {
        let n = x.len() / dim;
        let rows: Vec<(f64, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let ui = &x[i * dim..(i + 1) * dim];
                let mut g = vec![0.0; dim];
                let mut e = 0.0;
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let uj = &x[j * dim..(j + 1) * dim];
                    let pot = (-t * sq_dist(ui, uj)).exp();
                    if j > i {
                        e += pot;
                    }
                    let w = 2.0 * t * pot;
                    g.iter_mut()
                        .zip(ui.iter().zip(uj))
                        .for_each(|(gk, (a, b))| *gk += w * (b - a));
                }
                (e, g)
            })
            .collect();
        let energy = rows.iter().map(|r| r.0).sum();
        (energy, rows.into_iter().flat_map(|r| r.1).collect())
    }

    /// `(1/n) sum_i ||x_i - y_i||^alpha` where `x` holds the `n` left rows
    /// followed by the `n` right rows.
    pub fn align_grad(x: &[f64], dim: usize, alpha: f64) -> (f64, Vec<f64>) {
        let n = x.len() / dim / 2;
        let (left, right) = x.split_at(n * dim);
        let mut g = vec![0.0; x.len()];
        let mut total = 0.0;
        for i in 0..n {
            let a = &left[i * dim..(i + 1) * dim];
            let b = &right[i * dim..(i + 1) * dim];
            let d2 = sq_dist(a, b);
            total += d2.powf(alpha / 2.0);
            if d2 > 0.0 {
                let scale = alpha / n as f64 * d2.powf(alpha / 2.0 - 1.0);
                for k in 0..dim {
                    let v = scale * (a[k] - b[k]);
                    g[i * dim + k] = v;
                    g[(n + i) * dim + k] = -v;
                }
            }
        }
        (total / n as f64, g)
    }

    /// `ln mean_{i<j} exp(-t ||x_i - x_j||^2)` and its gradient. The mean is
    /// held in log space; pair weights are `exp(ln G_ij - ln S)`.
    pub fn unif_pdist_grad(x: &[f64], dim: usize, t: f64) -> (f64, Vec<f64>) {
        let n = x.len() / dim;
        let row = |i: usize| &x[i * dim..(i + 1) * dim];
        let parts: Vec<LogSumExp> = (0..n)
            .into_par_iter()
            .map(|i| ((i + 1)..n).map(|j| -t * sq_dist(row(i), row(j))).collect())
            .collect();
        let mut lse = LogSumExp::new();
        parts.iter().for_each(|p| lse.merge(p));
        let log_s = lse.value();
        let pairs = (n * (n - 1) / 2) as f64;
        let value = log_s - pairs.ln();
        let g: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let xi = row(i);
                let mut gi = vec![0.0; dim];
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let xj = row(j);
                    let w = 2.0 * t * (-t * sq_dist(xi, xj) - log_s).exp();
                    gi.iter_mut()
                        .zip(xi.iter().zip(xj))
                        .for_each(|(gk, (a, b))| *gk += w * (b - a));
                }
                gi
            })
            .collect();
        (value, g)
    }

    /// Symmetric in-batch contrastive loss with logits `x_i . y_j / tau`, and
    /// its gradient. Layout as in [`align_grad`].
    pub fn contrastive_grad(x: &[f64], dim: usize, tau: f64) -> (f64, Vec<f64>) {
        let k = x.len() / dim / 2;
        let (left, right) = x.split_at(k * dim);
        let xr = |i: usize| &left[i * dim..(i + 1) * dim];
        let yr = |i: usize| &right[i * dim..(i + 1) * dim];
        let logits: Vec<f64> = (0..k * k)
            .map(|ij| dot(xr(ij / k), yr(ij % k)) / tau)
            .collect();
        let row_lse: Vec<f64> = (0..k)
            .map(|i| {
                logits[i * k..(i + 1) * k]
                    .iter()
                    .copied()
                    .collect::<LogSumExp>()
                    .value()
            })
            .collect();
        let col_lse: Vec<f64> = (0..k)
            .map(|j| {
                (0..k)
                    .map(|i| logits[i * k + j])
                    .collect::<LogSumExp>()
                    .value()
            })
            .collect();
        let mut value = 0.0;
        for i in 0..k {
            value += row_lse[i] + col_lse[i] - 2.0 * logits[i * k + i];
        }
        let scale = 1.0 / (2 * k) as f64;
        value *= scale;
        // dL/dlogit_ij
        let mut dl = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                let l = logits[i * k + j];
                let mut v = (l - row_lse[i]).exp() + (l - col_lse[j]).exp();
                if i == j {
                    v -= 2.0;
                }
                dl[i * k + j] = v * scale / tau;
            }
        }
        let mut g = vec![0.0; x.len()];
        for i in 0..k {
            for j in 0..k {
                let w = dl[i * k + j];
                for d in 0..dim {
                    g[i * dim + d] += w * yr(j)[d];
                    g[(k + j) * dim + d] += w * xr(i)[d];
                }
            }
        }
        (value, g)
    }

    /// Weighted embedding objective
    /// `w_a L_align + w_u (L_unif(left) + L_unif(right)) / 2 + w_c L_contr`.
    pub fn embedding_grad(x: &[f64], dim: usize, spec: &LossSpec) -> (f64, Vec<f64>) {
        let n = x.len() / dim / 2;
        let mut value = 0.0;
        let mut g = vec![0.0; x.len()];
        let mut add = |w: f64, v: f64, gr: &[f64], offset: usize| {
            value += w * v;
            g[offset..offset + gr.len()]
                .iter_mut()
                .zip(gr)
                .for_each(|(a, b)| *a += w * b);
        };
        if spec.w_align > 0.0 {
            let (v, gr) = align_grad(x, dim, spec.alpha);
            add(spec.w_align, v, &gr, 0);
        }
        if spec.w_unif > 0.0 {
            let (vl, gl) = unif_pdist_grad(&x[..n * dim], dim, spec.t);
            let (vr, gr) = unif_pdist_grad(&x[n * dim..], dim, spec.t);
            add(spec.w_unif / 2.0, vl, &gl, 0);
            add(spec.w_unif / 2.0, vr, &gr, n * dim);
        }
        if spec.w_contr > 0.0 {
            let (v, gr) = contrastive_grad(x, dim, spec.tau);
            add(spec.w_contr, v, &gr, 0);
        }
        (value, g)
    }
}

/// Pair energy `sum_{i<j} G_t(u_i, u_j)` of a configuration and its ambient
/// (pre-projection) gradient as an `N x m` row-major buffer.
pub fn point_energy_grad(config: &FeatureSet, t: f64) -> Result<(f64, Vec<f64>)> {
    if config.n_points() < 2 {
        return Err(Error::NeedTwoPoints {
            got: config.n_points(),
        });
    }
    Ok(objectives::point_energy_grad(
        config.as_slice(),
        config.dim(),
        t,
    ))
}

struct Iterate {
    x: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
}

/// Run the descent loop. `f` returns value and ambient gradient; `record`
/// returns `(align_metric, unif_metric)` for a trajectory entry.
fn projected_descent<F, R>(
    x0: Vec<f64>,
    dim: usize,
    cfg: &OptConfig,
    f: F,
    record: R,
) -> Result<(Vec<f64>, Trajectory)>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
    R: Fn(&[f64]) -> Result<(Option<f64>, f64)>,
{
    cfg.validate()?;
    let (value, mut grad) = f(&x0);
    project_rows(&x0, &mut grad, dim);
    let mut cur = Iterate { x: x0, value, grad };
    let mut traj = Trajectory::default();
    let mut step_size = cfg.initial_step;
    let max_step = cfg.initial_step * 1e6;
    let every = cfg.record_every.max(1);

    let push = |traj: &mut Trajectory, step: usize, it: &Iterate| -> Result<()> {
        let (align_metric, unif_metric) = record(&it.x)?;
        traj.steps.push(StepRecord {
            step,
            objective: it.value,
            align_metric,
            unif_metric,
            grad_norm: dot(&it.grad, &it.grad).sqrt(),
        });
        Ok(())
    };
    push(&mut traj, 0, &cur)?;

    let mut step = 0;
    while step < cfg.max_steps {
        let g2 = dot(&cur.grad, &cur.grad);
        if g2.sqrt() <= cfg.grad_tol {
            break;
        }
        let mut s = step_size;
        let next = loop {
            let mut trial: Vec<f64> = cur
                .x
                .iter()
                .zip(&cur.grad)
                .map(|(a, g)| a - s * g)
                .collect();
            for row in trial.chunks_exact_mut(dim) {
                normalize_in_place(row)?;
            }
            let (v, g) = f(&trial);
            if v <= cur.value - cfg.armijo_c * s * g2 {
                break (trial, v, g);
            }
            s *= cfg.backtrack_factor;
            if s < MIN_STEP {
                return Err(Error::LineSearchStall { step: s });
            }
        };
        let (x, value, mut grad) = next;
        project_rows(&x, &mut grad, dim);
        cur = Iterate { x, value, grad };
        step += 1;
        step_size = (s / cfg.backtrack_factor).min(max_step);
        if step % every == 0 {
            push(&mut traj, step, &cur)?;
        }
    }
    traj.converged = dot(&cur.grad, &cur.grad).sqrt() <= cfg.grad_tol;
    traj.steps_taken = step;
    if traj.steps.last().map(|r| r.step) != Some(step) {
        push(&mut traj, step, &cur)?;
    }
    Ok((cur.x, traj))
}

/// Minimize the pairwise Gaussian energy of `n` points on `S^{m-1}`, starting
/// from `n` uniform samples drawn with `cfg.seed`.
pub fn minimize_point_energy(
    n: usize,
    m: usize,
    t: f64,
    cfg: &OptConfig,
) -> Result<(FeatureSet, Trajectory)> {
    if n < 2 {
        return Err(Error::NeedTwoPoints { got: n });
    }
    let start = sample_uniform_sphere(n, m, cfg.seed)?;
    minimize_point_energy_from(start, t, cfg)
}

/// As [`minimize_point_energy`] from a given starting configuration.
pub fn minimize_point_energy_from(
    start: FeatureSet,
    t: f64,
    cfg: &OptConfig,
) -> Result<(FeatureSet, Trajectory)> {
    if start.n_points() < 2 {
        return Err(Error::NeedTwoPoints {
            got: start.n_points(),
        });
    }
    if !(t > 0.0) {
        return Err(Error::InvalidConfig("t must be > 0".into()));
    }
    let dim = start.dim();
    let (x, traj) = projected_descent(
        start.into_flat(),
        dim,
        cfg,
        |x| objectives::point_energy_grad(x, dim, t),
        |x| {
            let f = FeatureSet::from_flat(x.to_vec(), dim)?;
            Ok((None, unif_loss_pdist(&f, t)?.value))
        },
    )?;
    Ok((FeatureSet::from_flat(x, dim)?, traj))
}

/// Optimize free per-view embeddings of a synthetic dataset under the
/// weighted alignment / uniformity / contrastive objective.
pub fn optimize_embeddings(
    dataset: &SyntheticDataset,
    spec: &LossSpec,
    init: InitMode,
    cfg: &OptConfig,
) -> Result<(PairedFeatures, Trajectory)> {
    if dataset.n_items < 2 {
        return Err(Error::InvalidConfig(
            "dataset needs at least 2 items".into(),
        ));
    }
    let start = init_embeddings(dataset, init, cfg.seed)?;
    optimize_embeddings_from(start, spec, cfg)
}

/// As [`optimize_embeddings`] from given initial embeddings.
pub fn optimize_embeddings_from(
    start: PairedFeatures,
    spec: &LossSpec,
    cfg: &OptConfig,
) -> Result<(PairedFeatures, Trajectory)> {
    spec.validate_objective()?;
    if start.len() < 2 {
        return Err(Error::NeedTwoPairs { got: start.len() });
    }
    let dim = start.dim();
    let n = start.len();
    let (left, right) = start.into_parts();
    let mut x0 = left.into_flat();
    x0.extend(right.into_flat());
    let spec = *spec;
    let split = |x: &[f64]| -> Result<PairedFeatures> {
        PairedFeatures::new(
            FeatureSet::from_flat(x[..n * dim].to_vec(), dim)?,
            FeatureSet::from_flat(x[n * dim..].to_vec(), dim)?,
        )
    };
    let (x, traj) = projected_descent(
        x0,
        dim,
        cfg,
        |x| objectives::embedding_grad(x, dim, &spec),
        |x| {
            let p = split(x)?;
            let a = align_loss(&p, spec.alpha)?.value;
            let u = (unif_loss_pdist(p.left(), spec.t)?.value
                + unif_loss_pdist(p.right(), spec.t)?.value)
                / 2.0;
            Ok((Some(a), u))
        },
    )?;
    Ok((split(&x)?, traj))
}
