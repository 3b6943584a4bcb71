//! Verification experiments.
//!
//! Each experiment produces an [`ExperimentReport`]: a list of labeled
//! measurements, some of which carry a target. The verdict is `pass` when
//! every targeted measurement lies within the report tolerance of its target,
//! `fail` otherwise, and `informational` when nothing is targeted.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::metrics::{diff_norm_sq, limit_loss, log_vmf_kde_density, resub_entropy, LogSumExp};
use crate::optimize::objectives;
use crate::special::log_vmf_normalizer;
use crate::sphere::{
    dot, evenly_spaced_circle, sample_uniform_sphere, seeded_rng, FeatureSet, PairedFeatures,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Informational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub label: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub params: BTreeMap<String, Value>,
    pub measurements: Vec<Measurement>,
    pub verdict: Verdict,
    pub tolerance: f64,
}

impl ExperimentReport {
    pub fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            params: BTreeMap::new(),
            measurements: Vec::new(),
            verdict: Verdict::Informational,
            tolerance,
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn info(&mut self, label: impl Into<String>, value: f64) {
        self.measurements.push(Measurement {
            label: label.into(),
            value,
            target: None,
        });
        self.update_verdict();
    }

    pub fn assert_near(&mut self, label: impl Into<String>, value: f64, target: f64) {
        self.measurements.push(Measurement {
            label: label.into(),
            value,
            target: Some(target),
        });
        self.update_verdict();
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.measurements
            .iter()
            .find(|m| m.label == label)
            .map(|m| m.value)
    }

    pub fn passed(&self) -> bool {
        self.verdict != Verdict::Fail
    }

    fn update_verdict(&mut self) {
        let mut any = false;
        let mut ok = true;
        for m in &self.measurements {
            if let Some(t) = m.target {
                any = true;
                // NaN fails
                ok &= (m.value - t).abs() <= self.tolerance;
            }
        }
        self.verdict = match (any, ok) {
            (false, _) => Verdict::Informational,
            (true, true) => Verdict::Pass,
            (true, false) => Verdict::Fail,
        };
    }
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
}

pub fn fit_loglog(points: &[(f64, f64)]) -> Result<LogLogFit> {
    if points.len() < 2 {
        return Err(Error::InvalidConfig(
            "slope needs at least two points".into(),
        ));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::InvalidConfig(
            "log-log fit needs positive values".into(),
        ));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = points.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig(
            "log-log fit needs distinct x values".into(),
        ));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| y - (intercept + slope * x))
        .collect();
    Ok(LogLogFit {
        slope,
        intercept,
        residuals,
    })
}

pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    Ok(fit_loglog(points)?.slope)
}

/// Per-`M` deviation statistics from [`asymptotics_experiment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationPoint {
    pub m: usize,
    /// Mean over trials of `|loss - ln M - pair limit|`.
    pub mean_abs_deviation: f64,
    /// `|mean over trials of (loss - ln M) - population limit|`.
    pub bias: f64,
}

/// Monte Carlo check of the `O(M^{-1/2})` convergence of the contrastive loss
/// (minus `ln M`) to its infinite-negative limit.
///
/// Each trial draws one positive pair and `M` negatives with replacement from
/// `pool`. The per-trial deviation is measured against that pair's own limit
/// `-x.y/tau + ln mean_pool exp(n.y/tau)`; its mean over trials is the
/// quantity whose decay is fitted. The deviation of the trial-averaged loss
/// from the population limit is reported alongside.
pub fn asymptotics_experiment(
    pairs: &PairedFeatures,
    pool: &FeatureSet,
    tau: f64,
    m_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    asymptotics_points(pairs, pool, tau, m_grid, trials, seed).map(|(_, r)| r)
}

pub fn asymptotics_points(
    pairs: &PairedFeatures,
    pool: &FeatureSet,
    tau: f64,
    m_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<(Vec<DeviationPoint>, ExperimentReport)> {
    if pool.n_points() == 0 {
        return Err(Error::EmptyPool);
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if pairs.dim() != pool.dim() {
        return Err(Error::DimensionMismatch {
            expected: pool.dim(),
            got: pairs.dim(),
        });
    }
    if m_grid.len() < 2 {
        return Err(Error::InvalidConfig(
            "M grid needs at least two values to fit a slope".into(),
        ));
    }
    if m_grid[0] < 1 || m_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(
            "M grid must be strictly ascending and >= 1".into(),
        ));
    }
    if trials < 1 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig("tau must be > 0".into()));
    }

    let limit = limit_loss(pairs, pool, tau)?;
    let ln_pool = (pool.n_points() as f64).ln();
    // pair limits with negatives scored against y
    let pair_limit: Vec<f64> = (0..pairs.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = (pairs.left().row(i), pairs.right().row(i));
            let lse: LogSumExp = pool.rows().map(|p| dot(p, y) / tau).collect();
            -dot(x, y) / tau + lse.value() - ln_pool
        })
        .collect();

    let mut points = Vec::with_capacity(m_grid.len());
    for (mi, &m) in m_grid.iter().enumerate() {
        let samples: Vec<(f64, f64)> = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = seeded_rng(seed);
                rng.set_stream((mi * trials + trial) as u64);
                let i = rng.random_range(0..pairs.len());
                let (x, y) = (pairs.left().row(i), pairs.right().row(i));
                let pos = dot(x, y) / tau;
                let mut lse = LogSumExp::new();
                lse.push(pos);
                for _ in 0..m {
                    let j = rng.random_range(0..pool.n_points());
                    lse.push(dot(pool.row(j), y) / tau);
                }
                let loss = lse.value() - pos - (m as f64).ln();
                (loss, (loss - pair_limit[i]).abs())
            })
            .collect();
        let t = trials as f64;
        let mean_loss = samples.iter().map(|s| s.0).sum::<f64>() / t;
        let mad = samples.iter().map(|s| s.1).sum::<f64>() / t;
        points.push(DeviationPoint {
            m,
            mean_abs_deviation: mad,
            bias: (mean_loss - limit.total()).abs(),
        });
    }

    let fit = fit_loglog(
        &points
            .iter()
            .map(|p| (p.m as f64, p.mean_abs_deviation))
            .collect::<Vec<_>>(),
    )?;

    let mut report = ExperimentReport::new("asymptotics", 0.25)
        .param("tau", tau)
        .param("trials", trials)
        .param("seed", seed)
        .param("pool_size", pool.n_points())
        .param("n_pairs", pairs.len())
        .param("m_grid", m_grid.to_vec());
    report.info("limit_first_term", limit.first_term);
    report.info("limit_second_term", limit.second_term);
    for p in &points {
        report.info(format!("deviation_M{}", p.m), p.mean_abs_deviation);
        report.info(format!("bias_M{}", p.m), p.bias);
    }
    let rms =
        (fit.residuals.iter().map(|r| r * r).sum::<f64>() / fit.residuals.len() as f64).sqrt();
    report.info("fit_intercept", fit.intercept);
    report.info("fit_residual_rms", rms);
    report.info(
        "deviation_all_positive",
        if points.iter().all(|p| p.mean_abs_deviation > 0.0) {
            1.0
        } else {
            0.0
        },
    );
    report.assert_near("loglog_slope", fit.slope, -0.5);
    report.assert_near(
        "decade_monotone",
        if decade_monotone(&points) { 1.0 } else { 0.0 },
        1.0,
    );
    Ok((points, report))
}

/// Geometric mean deviation per decade of `M` strictly decreases.
pub fn decade_monotone(points: &[DeviationPoint]) -> bool {
    let mut by_decade: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
    for p in points {
        let d = (p.m as f64).log10().floor() as i32;
        let e = by_decade.entry(d).or_insert((0.0, 0));
        e.0 += p.mean_abs_deviation.ln();
        e.1 += 1;
    }
    let means: Vec<f64> = by_decade.values().map(|(s, c)| s / *c as f64).collect();
    means.windows(2).all(|w| w[1] < w[0])
}

/// `|second term of the limit - (ln Z_vMF - H_resub)|` over `f` used as its own pool.
pub fn entropy_identity_residual(f: &FeatureSet, tau: f64) -> Result<f64> {
    let second = limit_loss(&PairedFeatures::aligned(f.clone()), f, tau)?.second_term;
    let h = resub_entropy(f, tau)?;
    let log_z = log_vmf_normalizer(f.dim(), 1.0 / tau)?;
    Ok((second - (-h + log_z)).abs())
}

pub fn entropy_identity_check(f: &FeatureSet, tau: f64) -> Result<ExperimentReport> {
    let residual = entropy_identity_residual(f, tau)?;
    let mut report = ExperimentReport::new("entropy-check", 1e-9)
        .param("tau", tau)
        .param("n_points", f.n_points())
        .param("dim", f.dim());
    report.info(
        "log_vmf_normalizer",
        log_vmf_normalizer(f.dim(), 1.0 / tau)?,
    );
    report.info("resub_entropy", resub_entropy(f, tau)?);
    report.assert_near("residual", residual, 0.0);
    Ok(report)
}

/// Cap on `grid_size^(2 n_items)` for [`brute_force_min_contrastive`].
pub const BRUTE_FORCE_CAP: u128 = 10_000_000;
const BRUTE_FORCE_TIE: f64 = 1e-9;
const SPREAD_T: f64 = 2.0;

/// Global minimizers of the single-negative contrastive loss over grid
/// assignments of all views.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub min_loss: f64,
    /// Grid index per view, ordered `[item0 view0, item0 view1, item1 view0, ...]`.
    pub minimizers: Vec<Vec<usize>>,
    /// Smallest pairwise Gaussian energy over all `n_items`-multisets of grid points.
    pub min_spread_energy: f64,
}

fn decode(mut a: u64, g: u64, out: &mut [usize]) {
    for v in out.iter_mut() {
        *v = (a % g) as usize;
        a /= g;
    }
}

/// Exact finite-data contrastive loss with `M = 1`: positive pairs are both
/// orders of each item's two views, negatives are uniform over all views.
fn grid_contrastive_loss(assign: &[usize], table: &[f64], g: usize) -> f64 {
    let v = assign.len();
    let mut total = 0.0;
    for item in 0..v / 2 {
        let (a, b) = (assign[2 * item], assign[2 * item + 1]);
        for (x, y) in [(a, b), (b, a)] {
            let dxy = (x + g - y) % g;
            for &z in assign {
                total += table[dxy * g + (z + g - y) % g];
            }
        }
    }
    total / (v * v) as f64
}

pub fn enumerate_contrastive_minimizers(
    n_items: usize,
    grid_size: usize,
    tau: f64,
) -> Result<BruteForceResult> {
    if !(2..=4).contains(&n_items) {
        return Err(Error::InvalidConfig(format!(
            "n_items must be in [2, 4], got {n_items}"
        )));
    }
    if !(4..=12).contains(&grid_size) {
        return Err(Error::InvalidConfig(format!(
            "grid_size must be in [4, 12], got {grid_size}"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig("tau must be > 0".into()));
    }
    let views = 2 * n_items;
    let count = (grid_size as u128).pow(views as u32);
    if count > BRUTE_FORCE_CAP {
        return Err(Error::TooLarge {
            count,
            cap: BRUTE_FORCE_CAP,
        });
    }
    let g = grid_size;
    let angle = |k: usize| TAU * k as f64 / g as f64;
    // table[dxy][dzy] = -ln(e^{x.y/tau} / (e^{x.y/tau} + e^{z.y/tau}))
    let mut table = vec![0.0; g * g];
    for dxy in 0..g {
        for dzy in 0..g {
            let d = (angle(dzy).cos() - angle(dxy).cos()) / tau;
            table[dxy * g + dzy] = if d > 0.0 {
                d + (-d).exp().ln_1p()
            } else {
                d.exp().ln_1p()
            };
        }
    }
    let count = count as u64;
    let chunk = 4096u64;
    let n_chunks = count.div_ceil(chunk);
    let min_loss = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut buf = vec![0usize; views];
            let mut best = f64::INFINITY;
            for a in c * chunk..((c + 1) * chunk).min(count) {
                decode(a, g as u64, &mut buf);
                best = best.min(grid_contrastive_loss(&buf, &table, g));
            }
            best
        })
        .reduce(|| f64::INFINITY, f64::min);
    let minimizers: Vec<Vec<usize>> = (0..n_chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut buf = vec![0usize; views];
            let mut found = Vec::new();
            for a in c * chunk..((c + 1) * chunk).min(count) {
                decode(a, g as u64, &mut buf);
                if grid_contrastive_loss(&buf, &table, g) <= min_loss + BRUTE_FORCE_TIE {
                    found.push(buf.clone());
                }
            }
            found
        })
        .collect();

    let circle = evenly_spaced_circle(g, 0.0)?;
    let spread_count = (g as u64).pow(n_items as u32);
    let mut buf = vec![0usize; n_items];
    let mut min_spread_energy = f64::INFINITY;
    for a in 0..spread_count {
        decode(a, g as u64, &mut buf);
        min_spread_energy = min_spread_energy.min(item_energy(&circle, &buf));
    }
    Ok(BruteForceResult {
        min_loss,
        minimizers,
        min_spread_energy,
    })
}

fn item_energy(circle: &FeatureSet, items: &[usize]) -> f64 {
    let mut e = 0.0;
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            e += (-SPREAD_T * diff_norm_sq(circle.row(items[i]), circle.row(items[j]))).exp();
        }
    }
    e
}

/// Exhaustive search for the minimizers of the `M = 1` contrastive loss over
/// grid placements on `S^1`. Asserts that every minimizer is perfectly aligned
/// and places the items in a maximally spread configuration.
pub fn brute_force_min_contrastive(
    n_items: usize,
    grid_size: usize,
    tau: f64,
    seed: u64,
) -> Result<ExperimentReport> {
    let res = enumerate_contrastive_minimizers(n_items, grid_size, tau)?;
    let circle = evenly_spaced_circle(grid_size, 0.0)?;
    let total = res.minimizers.len() as f64;
    let mut aligned = 0usize;
    let mut spread = 0usize;
    let mut max_align = 0.0f64;
    for a in &res.minimizers {
        let items: Vec<usize> = a.chunks_exact(2).map(|c| c[0]).collect();
        let al = a
            .chunks_exact(2)
            .map(|c| diff_norm_sq(circle.row(c[0]), circle.row(c[1])))
            .sum::<f64>()
            / n_items as f64;
        max_align = max_align.max(al);
        if a.chunks_exact(2).all(|c| c[0] == c[1]) {
            aligned += 1;
            if item_energy(&circle, &items) <= res.min_spread_energy + BRUTE_FORCE_TIE {
                spread += 1;
            }
        }
    }
    let mut report = ExperimentReport::new("bruteforce", BRUTE_FORCE_TIE)
        .param("n_items", n_items)
        .param("grid_size", grid_size)
        .param("tau", tau)
        .param("seed", seed);
    report.info("min_loss", res.min_loss);
    report.info("n_minimizers", total);
    report.info("min_spread_energy", res.min_spread_energy);
    report.assert_near("fraction_aligned", aligned as f64 / total, 1.0);
    report.assert_near("fraction_max_spread", spread as f64 / total, 1.0);
    report.assert_near("max_align_loss", max_align, 0.0);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradObjective {
    PointEnergy,
    Align,
    UnifPdist,
    ContrastiveMinibatch,
}

impl std::str::FromStr for GradObjective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point_energy" | "point-energy" => Ok(Self::PointEnergy),
            "align" => Ok(Self::Align),
            "unif_pdist" | "unif-pdist" => Ok(Self::UnifPdist),
            "contrastive_minibatch" | "contrastive-minibatch" | "contrastive" => {
                Ok(Self::ContrastiveMinibatch)
            }
            other => Err(Error::InvalidConfig(format!("unknown objective `{other}`"))),
        }
    }
}

pub const GRADCHECK_T: f64 = 2.0;
pub const GRADCHECK_ALPHA: f64 = 2.0;
pub const GRADCHECK_TAU: f64 = 0.5;
const GRADCHECK_TOL: f64 = 1e-5;
/// Components smaller than this are compared in absolute terms.
const GRADCHECK_FLOOR: f64 = 1e-3;

impl GradObjective {
    /// Value and analytic gradient at a flat buffer of rows. Pair objectives
    /// take left rows followed by right rows.
    pub fn value_grad(&self, x: &[f64], dim: usize) -> (f64, Vec<f64>) {
        match self {
            Self::PointEnergy => objectives::point_energy_grad(x, dim, GRADCHECK_T),
            Self::Align => objectives::align_grad(x, dim, GRADCHECK_ALPHA),
            Self::UnifPdist => objectives::unif_pdist_grad(x, dim, GRADCHECK_T),
            Self::ContrastiveMinibatch => objectives::contrastive_grad(x, dim, GRADCHECK_TAU),
        }
    }

    fn is_paired(&self) -> bool {
        matches!(self, Self::Align | Self::ContrastiveMinibatch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_analytic: f64,
    pub max_abs_fd: f64,
}

/// Compare the analytic gradient with central differences at `x`.
pub fn gradcheck_at(objective: GradObjective, x: &[f64], dim: usize, eps: f64) -> GradCheck {
    let (_, g) = objective.value_grad(x, dim);
    let mut xp = x.to_vec();
    let mut out = GradCheck {
        max_rel_err: 0.0,
        max_abs_analytic: 0.0,
        max_abs_fd: 0.0,
    };
    for k in 0..x.len() {
        xp[k] = x[k] + eps;
        let fp = objective.value_grad(&xp, dim).0;
        xp[k] = x[k] - eps;
        let fm = objective.value_grad(&xp, dim).0;
        xp[k] = x[k];
        let fd = (fp - fm) / (2.0 * eps);
        let denom = g[k].abs().max(fd.abs()).max(GRADCHECK_FLOOR);
        out.max_rel_err = out.max_rel_err.max((g[k] - fd).abs() / denom);
        out.max_abs_analytic = out.max_abs_analytic.max(g[k].abs());
        out.max_abs_fd = out.max_abs_fd.max(fd.abs());
    }
    out
}

/// Finite-difference check of a hand-derived gradient on a random instance of
/// `n` points (or `n` pairs) on `S^{m-1}`.
pub fn finite_diff_gradcheck(
    objective: GradObjective,
    n: usize,
    m: usize,
    seed: u64,
    eps: f64,
) -> Result<ExperimentReport> {
    if !(1e-8..=1e-4).contains(&eps) {
        return Err(Error::InvalidConfig(format!(
            "eps must be in [1e-8, 1e-4], got {eps}"
        )));
    }
    if n < 2 {
        return Err(Error::NeedTwoPoints { got: n });
    }
    let rows = if objective.is_paired() { 2 * n } else { n };
    let f = sample_uniform_sphere(rows, m, seed)?;
    let check = gradcheck_at(objective, f.as_slice(), m, eps);
    Ok(gradcheck_report(objective, n, m, seed, eps, check))
}

pub fn gradcheck_report(
    objective: GradObjective,
    n: usize,
    m: usize,
    seed: u64,
    eps: f64,
    check: GradCheck,
) -> ExperimentReport {
    let mut report = ExperimentReport::new("gradcheck", GRADCHECK_TOL)
        .param(
            "objective",
            serde_json::to_value(objective).unwrap_or(Value::Null),
        )
        .param("n", n)
        .param("dim", m)
        .param("seed", seed)
        .param("eps", eps);
    report.info("max_abs_analytic", check.max_abs_analytic);
    report.info("max_abs_fd", check.max_abs_fd);
    report.assert_near("max_rel_err", check.max_rel_err, 0.0);
    report
}

/// Leave-one-out `k`-NN accuracy with cosine distance.
///
/// Neighbors are ranked by `(distance, label)`; the vote goes to the most
/// frequent label, ties broken by smaller mean distance and then smaller label.
pub fn knn_eval(f: &FeatureSet, labels: &[i64], k: usize) -> Result<f64> {
    let n = f.n_points();
    if labels.len() != n {
        return Err(Error::InvalidConfig(format!(
            "{} labels for {} points",
            labels.len(),
            n
        )));
    }
    if k < 1 || k >= n {
        return Err(Error::InvalidConfig(format!(
            "k must satisfy 1 <= k < N = {n}, got {k}"
        )));
    }
    let correct: usize = (0..n)
        .into_par_iter()
        .map(|i| {
            let fi = f.row(i);
            let mut nb: Vec<(f64, i64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (1.0 - dot(fi, f.row(j)), labels[j]))
                .collect();
            let cmp = |a: &(f64, i64), b: &(f64, i64)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            nb.select_nth_unstable_by(k - 1, cmp);
            let mut votes: BTreeMap<i64, (usize, f64)> = BTreeMap::new();
            for &(d, l) in &nb[..k] {
                let e = votes.entry(l).or_insert((0, 0.0));
                e.0 += 1;
                e.1 += d;
            }
            let winner = votes
                .iter()
                .min_by(|a, b| {
                    let (ca, sa) = *a.1;
                    let (cb, sb) = *b.1;
                    cb.cmp(&ca)
                        .then((sa / ca as f64).total_cmp(&(sb / cb as f64)))
                        .then(a.0.cmp(b.0))
                })
                .map(|(l, _)| *l)
                .expect("k >= 1");
            usize::from(winner == labels[i])
        })
        .sum();
    Ok(correct as f64 / n as f64)
}

pub fn knn_report(f: &FeatureSet, labels: &[i64], k: usize) -> Result<ExperimentReport> {
    let acc = knn_eval(f, labels, k)?;
    let mut report = ExperimentReport::new("knn", 0.0)
        .param("k", k)
        .param("n_points", f.n_points());
    report.info("accuracy", acc);
    Ok(report)
}

/// vMF KDE of the points of `f` (on `S^1`) sampled at `resolution` evenly
/// spaced angles `-pi + 2 pi j / resolution`.
pub fn angle_kde_export(f: &FeatureSet, kappa: f64, resolution: usize) -> Result<Vec<(f64, f64)>> {
    if f.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: f.dim(),
        });
    }
    if resolution < 8 {
        return Err(Error::InvalidConfig(format!(
            "resolution must be >= 8, got {resolution}"
        )));
    }
    (0..resolution)
        .into_par_iter()
        .map(|j| {
            let a = -PI + TAU * j as f64 / resolution as f64;
            Ok((a, log_vmf_kde_density(f, &[a.cos(), a.sin()], kappa)?.exp()))
        })
        .collect()
}

/// Periodic trapezoid integral of an evenly sampled curve over one turn.
pub fn periodic_trapezoid(curve: &[(f64, f64)]) -> f64 {
    curve.iter().map(|p| p.1).sum::<f64>() * TAU / curve.len() as f64
}

pub fn kde_report(
    f: &FeatureSet,
    kappa: f64,
    resolution: usize,
) -> Result<(Vec<(f64, f64)>, ExperimentReport)> {
    let curve = angle_kde_export(f, kappa, resolution)?;
    let integral = periodic_trapezoid(&curve);
    let max = curve.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let min = curve.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let mut report = ExperimentReport::new("kde", 1e-3)
        .param("kappa", kappa)
        .param("resolution", resolution)
        .param("n_points", f.n_points());
    report.info("max_min_ratio", max / min);
    if resolution >= 1024 {
        report.assert_near("integral", integral, 1.0);
    } else {
        report.info("integral", integral);
    }
    Ok((curve, report))
}

/// Histogram of positive-pair distances over `bins` equal bins on `[0, 2]`,
/// returned as `(bin center, count)`.
pub fn pair_distance_histogram(pairs: &PairedFeatures, bins: usize) -> Result<Vec<(f64, usize)>> {
    if bins < 1 {
        return Err(Error::InvalidConfig("bins must be >= 1".into()));
    }
    let width = 2.0 / bins as f64;
    let mut counts = vec![0usize; bins];
    for (x, y) in pairs.left().rows().zip(pairs.right().rows()) {
        let d = diff_norm_sq(x, y).sqrt();
        let b = ((d / width).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| ((b as f64 + 0.5) * width, c))
        .collect())
}

pub fn pairhist_report(
    pairs: &PairedFeatures,
    bins: usize,
) -> Result<(Vec<(f64, usize)>, ExperimentReport)> {
    let hist = pair_distance_histogram(pairs, bins)?;
    let mut report = ExperimentReport::new("pairhist", 0.0)
        .param("bins", bins)
        .param("n_pairs", pairs.len());
    report.info("total", hist.iter().map(|h| h.1).sum::<usize>() as f64);
    let mean = pairs
        .left()
        .rows()
        .zip(pairs.right().rows())
        .map(|(x, y)| diff_norm_sq(x, y).sqrt())
        .sum::<f64>()
        / pairs.len() as f64;
    report.info("mean_distance", mean);
    Ok((hist, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_examples() {
        let s = fit_loglog_slope(&[(1.0, 1.0), (4.0, 0.5), (16.0, 0.25)]).unwrap();
        assert!((s + 0.5).abs() < 1e-14);
        assert_eq!(fit_loglog_slope(&[(1.0, 3.0), (10.0, 3.0)]).unwrap(), 0.0);
        assert!((fit_loglog_slope(&[(1.0, 1.0), (100.0, 0.1)]).unwrap() + 0.5).abs() < 1e-14);
        assert!(fit_loglog_slope(&[(1.0, 1.0)]).is_err());
        assert!(fit_loglog_slope(&[(1.0, 1.0), (2.0, 0.0)]).is_err());
        assert!(fit_loglog_slope(&[(-1.0, 1.0), (2.0, 1.0)]).is_err());
    }

    #[test]
    fn report_verdicts() {
        let mut r = ExperimentReport::new("x", 0.1);
        assert_eq!(r.verdict, Verdict::Informational);
        r.info("a", 3.0);
        assert_eq!(r.verdict, Verdict::Informational);
        r.assert_near("b", 1.05, 1.0);
        assert_eq!(r.verdict, Verdict::Pass);
        r.assert_near("c", f64::NAN, 1.0);
        assert_eq!(r.verdict, Verdict::Fail);
    }

    #[test]
    fn asymptotics_small_run() {
        let pool = sample_uniform_sphere(128, 2, 1).unwrap();
        let pairs = PairedFeatures::aligned(pool.clone());
        let grid: Vec<usize> = (4..=10).map(|e| 1usize << e).collect();
        let (pts, report) = asymptotics_points(&pairs, &pool, 0.5, &grid, 64, 3).unwrap();
        assert!(pts.last().unwrap().mean_abs_deviation < pts[0].mean_abs_deviation);
        assert!(pts.iter().all(|p| p.mean_abs_deviation > 0.0));
        let slope = report.get("loglog_slope").unwrap();
        assert!((-0.75..=-0.25).contains(&slope), "slope {slope}");
        // reproducible
        let (again, _) = asymptotics_points(&pairs, &pool, 0.5, &grid, 64, 3).unwrap();
        assert_eq!(pts, again);
        assert!(matches!(
            asymptotics_experiment(&pairs, &pool, 0.5, &[16], 4, 0),
            Err(Error::InvalidConfig(_))
        ));
        assert!(asymptotics_experiment(&pairs, &pool, 0.5, &[32, 16], 4, 0).is_err());
    }

    #[test]
    fn entropy_identity_examples() {
        let f = sample_uniform_sphere(128, 4, 0).unwrap();
        assert!(entropy_identity_residual(&f, 0.5).unwrap() < 1e-9);
        let one = sample_uniform_sphere(1, 3, 0).unwrap();
        assert!(entropy_identity_residual(&one, 0.5).unwrap() < 1e-12);
        let same = FeatureSet::repeated(&[0.0, 1.0, 0.0], 64).unwrap();
        assert!(entropy_identity_residual(&same, 0.5).unwrap() < 1e-12);
        assert_eq!(
            entropy_identity_check(&f, 0.5).unwrap().verdict,
            Verdict::Pass
        );
    }

    #[test]
    fn entropy_identity_extended_precision_oracle() {
        // recompute both sides with compensated sums of plain exponentials
        let f = sample_uniform_sphere(128, 4, 5).unwrap();
        let tau = 0.5;
        let n = f.n_points();
        let mut second = 0.0;
        for i in 0..n {
            let s: f64 = (0..n).map(|j| (dot(f.row(i), f.row(j)) / tau).exp()).sum();
            second += (s / n as f64).ln();
        }
        second /= n as f64;
        let lim = limit_loss(&PairedFeatures::aligned(f.clone()), &f, tau).unwrap();
        assert!((lim.second_term - second).abs() < 1e-12);
    }

    #[test]
    fn brute_force_two_items() {
        for g in [4usize, 8] {
            let res = enumerate_contrastive_minimizers(2, g, 0.5).unwrap();
            assert_eq!(res.minimizers.len(), g);
            for a in &res.minimizers {
                assert_eq!(a[0], a[1]);
                assert_eq!(a[2], a[3]);
                assert_eq!((a[0] + g / 2) % g, a[2]);
            }
            let r = brute_force_min_contrastive(2, g, 0.5, 0).unwrap();
            assert_eq!(r.verdict, Verdict::Pass);
            assert_eq!(r.get("max_align_loss").unwrap(), 0.0);
        }
    }

    #[test]
    fn brute_force_minimizers_are_symmetric() {
        for (n, g) in [(2usize, 6usize), (3, 6)] {
            let res = enumerate_contrastive_minimizers(n, g, 0.5).unwrap();
            let set: std::collections::BTreeSet<Vec<usize>> =
                res.minimizers.iter().cloned().collect();
            for a in &res.minimizers {
                let shifted: Vec<usize> = a.iter().map(|v| (v + 1) % g).collect();
                let reflected: Vec<usize> = a.iter().map(|v| (g - v) % g).collect();
                assert!(set.contains(&shifted));
                assert!(set.contains(&reflected));
            }
        }
    }

    #[test]
    fn brute_force_matches_direct_loss() {
        // table-driven loss against direct evaluation on one assignment
        let g = 8;
        let tau = 0.5;
        let assign = [0usize, 3, 5, 5];
        let ang = |k: usize| TAU * k as f64 / g as f64;
        let pt = |k: usize| [ang(k).cos(), ang(k).sin()];
        let mut direct = 0.0;
        for item in 0..2 {
            let (a, b) = (assign[2 * item], assign[2 * item + 1]);
            for (x, y) in [(a, b), (b, a)] {
                for &z in &assign {
                    let p = dot(&pt(x), &pt(y)) / tau;
                    let q = dot(&pt(z), &pt(y)) / tau;
                    direct += -(p.exp() / (p.exp() + q.exp())).ln();
                }
            }
        }
        direct /= 16.0;
        let mut table = vec![0.0; g * g];
        for dxy in 0..g {
            for dzy in 0..g {
                let d = (ang(dzy).cos() - ang(dxy).cos()) / tau;
                table[dxy * g + dzy] = d.exp().ln_1p();
            }
        }
        assert!((grid_contrastive_loss(&assign, &table, g) - direct).abs() < 1e-12);
    }

    #[test]
    fn brute_force_limits() {
        assert!(matches!(
            enumerate_contrastive_minimizers(4, 12, 0.5),
            Err(Error::TooLarge { .. })
        ));
        assert!(enumerate_contrastive_minimizers(1, 4, 0.5).is_err());
        assert!(enumerate_contrastive_minimizers(2, 3, 0.5).is_err());
    }

    #[test]
    fn gradcheck_examples() {
        let r = finite_diff_gradcheck(GradObjective::PointEnergy, 8, 3, 0, 1e-6).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        // aligned pairs: zero gradient
        let f = sample_uniform_sphere(5, 3, 1).unwrap();
        let mut x = f.as_slice().to_vec();
        x.extend_from_slice(f.as_slice());
        let c = gradcheck_at(GradObjective::Align, &x, 3, 1e-6);
        assert_eq!(c.max_abs_analytic, 0.0);
        assert!(c.max_abs_fd < 1e-8);
        // collapsed set: symmetric stationary point of the log-mean
        let same = FeatureSet::repeated(f.row(0), 6).unwrap();
        let c = gradcheck_at(GradObjective::UnifPdist, same.as_slice(), 3, 1e-6);
        assert!(c.max_abs_analytic < 1e-12);
        assert!(c.max_rel_err < 1e-5);
        assert!(finite_diff_gradcheck(GradObjective::Align, 4, 3, 0, 1e-2).is_err());
        assert_eq!(
            "contrastive_minibatch".parse::<GradObjective>().unwrap(),
            GradObjective::ContrastiveMinibatch
        );
        assert!("nope".parse::<GradObjective>().is_err());
    }

    fn two_clusters() -> (FeatureSet, Vec<i64>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..10 {
            rows.push(vec![1.0, 0.0, 0.0]);
            labels.push(0);
            rows.push(vec![0.0, 0.0, 1.0]);
            labels.push(1);
        }
        (FeatureSet::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn knn_examples() {
        let (f, labels) = two_clusters();
        assert_eq!(knn_eval(&f, &labels, 1).unwrap(), 1.0);
        assert!(knn_eval(&f, &labels, 20).is_err());
        assert!(knn_eval(&f, &labels, 0).is_err());

        let n = 1000;
        let u = sample_uniform_sphere(n, 3, 4).unwrap();
        let mut rng = seeded_rng(8);
        let random_labels: Vec<i64> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let acc = knn_eval(&u, &random_labels, 5).unwrap();
        assert!((0.42..=0.58).contains(&acc), "acc {acc}");
    }

    #[test]
    fn knn_permutation_invariant() {
        let f = sample_uniform_sphere(60, 2, 1).unwrap();
        let labels: Vec<i64> = (0..60).map(|i| (i % 3) as i64).collect();
        let acc = knn_eval(&f, &labels, 5).unwrap();
        let perm: Vec<usize> = (0..60).map(|i| (i * 7) % 60).collect();
        let g = f.gather(&perm).unwrap();
        let pl: Vec<i64> = perm.iter().map(|&i| labels[i]).collect();
        assert_eq!(knn_eval(&g, &pl, 5).unwrap(), acc);
        // exact ties: duplicated points with conflicting labels
        let dup =
            FeatureSet::from_rows(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
                .unwrap();
        let dl = [0i64, 1, 0, 1, 1];
        let a = knn_eval(&dup, &dl, 2).unwrap();
        let order = [4usize, 2, 0, 3, 1];
        let dup2 = dup.gather(&order).unwrap();
        let dl2: Vec<i64> = order.iter().map(|&i| dl[i]).collect();
        assert_eq!(knn_eval(&dup2, &dl2, 2).unwrap(), a);
    }

    #[test]
    fn kde_examples() {
        let u = sample_uniform_sphere(10_000, 2, 2).unwrap();
        let curve = angle_kde_export(&u, 4.0, 256).unwrap();
        let max = curve.iter().map(|p| p.1).fold(0.0, f64::max);
        let min = curve.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        assert!(max / min < 1.3);

        let one = FeatureSet::from_rows(&[[1.0, 0.0]]).unwrap();
        let curve = angle_kde_export(&one, 4.0, 64).unwrap();
        let best = curve.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert_eq!(best.0, 0.0);

        let few = sample_uniform_sphere(7, 2, 3).unwrap();
        let (curve, r) = kde_report(&few, 10.0, 4096).unwrap();
        assert!((periodic_trapezoid(&curve) - 1.0).abs() < 1e-3);
        assert_eq!(r.verdict, Verdict::Pass);

        assert!(angle_kde_export(&sample_uniform_sphere(3, 3, 0).unwrap(), 1.0, 64).is_err());
        assert!(angle_kde_export(&one, 1.0, 4).is_err());
    }

    #[test]
    fn pair_histogram_examples() {
        let f = sample_uniform_sphere(10, 2, 0).unwrap();
        let h = pair_distance_histogram(&PairedFeatures::aligned(f.clone()), 10).unwrap();
        assert_eq!(h[0].1, 10);
        let neg: Vec<f64> = f.as_slice().iter().map(|v| -v).collect();
        let anti =
            PairedFeatures::new(f.clone(), FeatureSet::from_flat(neg.clone(), 2).unwrap()).unwrap();
        let h = pair_distance_histogram(&anti, 10).unwrap();
        assert_eq!(h[9].1, 10);
        // half aligned, half antipodal
        let mut right = f.as_slice()[..10].to_vec();
        right.extend_from_slice(&neg[10..]);
        let mixed = PairedFeatures::new(f, FeatureSet::from_flat(right, 2).unwrap()).unwrap();
        let h = pair_distance_histogram(&mixed, 4).unwrap();
        assert_eq!(h.iter().map(|b| b.1).collect::<Vec<_>>(), vec![5, 0, 0, 5]);
        assert!(pair_distance_histogram(&mixed, 0).is_err());
    }
}
