//! Special functions and closed-form uniformity bounds.
//!
//! `0F1(;a;z)` is summed directly from its power series with the forward term
//! recurrence `t_{n+1} = t_n * z / ((a + n)(n + 1))`. Arguments are limited to
//! `z <= 1e4`, which covers Gaussian kernel scales `t <= 100`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `z` accepted by [`hyp0f1`].
pub const HYP0F1_MAX_Z: f64 = 1e4;
const MAX_TERMS: usize = 100_000;
const RESCALE: f64 = 1e280;

/// Rising factorial `(a)_n`.
pub fn pochhammer(a: f64, n: u32) -> f64 {
    (0..n).fold(1.0, |acc, k| acc * (a + k as f64))
}

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln |Gamma(x)|` by the Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let s = (std::f64::consts::PI * x).sin().abs();
        return std::f64::consts::PI.ln() - s.ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (k, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + k as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * std::f64::consts::TAU.ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn check_hyp_args(alpha: f64, z: f64) -> Result<()> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("0F1 needs alpha > 0, got {alpha}")));
    }
    if !(z >= 0.0) {
        return Err(Error::Domain(format!("0F1 needs z >= 0, got {z}")));
    }
    if z > HYP0F1_MAX_Z {
        return Err(Error::Domain(format!(
            "0F1 argument z = {z} exceeds the supported range (z <= {HYP0F1_MAX_Z})"
        )));
    }
    Ok(())
}

/// Sum the series, returning `(s, k)` with `0F1 = s * RESCALE^k`.
fn hyp0f1_scaled(alpha: f64, z: f64) -> Result<(f64, i32)> {
    check_hyp_args(alpha, z)?;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut scale = 0;
    if z == 0.0 {
        return Ok((sum, scale));
    }
    for n in 0..MAX_TERMS {
        let nf = n as f64;
        term *= z / ((alpha + nf) * (nf + 1.0));
        sum += term;
        if term < 1e-16 * sum {
            return Ok((sum, scale));
        }
        if sum > RESCALE {
            sum /= RESCALE;
            term /= RESCALE;
            scale += 1;
        }
    }
    Err(Error::NonConvergence { terms: MAX_TERMS })
}

/// Confluent hypergeometric limit function `0F1(;alpha;z)`.
pub fn hyp0f1(alpha: f64, z: f64) -> Result<f64> {
    let (s, k) = hyp0f1_scaled(alpha, z)?;
    Ok(s * RESCALE.powi(k))
}

/// `ln 0F1(;alpha;z)`, summed without forming the full value.
pub fn log_hyp0f1(alpha: f64, z: f64) -> Result<f64> {
    let (s, k) = hyp0f1_scaled(alpha, z)?;
    Ok(s.ln() + k as f64 * RESCALE.ln())
}

/// `ln I_nu(x)` for the modified Bessel function of the first kind,
/// via `I_nu(x) = (x/2)^nu / Gamma(nu + 1) * 0F1(; nu + 1; x^2 / 4)`.
pub fn log_bessel_i(nu: f64, x: f64) -> Result<f64> {
    if !(nu >= 0.0) {
        return Err(Error::Domain(format!(
            "Bessel order must be >= 0, got {nu}"
        )));
    }
    if !(x > 0.0) {
        return Err(Error::Domain(format!(
            "Bessel argument must be > 0, got {x}"
        )));
    }
    let lead = if nu == 0.0 { 0.0 } else { nu * (x / 2.0).ln() };
    Ok(lead - ln_gamma(nu + 1.0) + log_hyp0f1(nu + 1.0, x * x / 4.0)?)
}

fn check_dim_t(m: usize, t: f64) -> Result<()> {
    if m < 2 {
        return Err(Error::InvalidDimension { dim: m });
    }
    if !(t > 0.0) {
        return Err(Error::Domain(format!(
            "kernel scale t must be > 0, got {t}"
        )));
    }
    Ok(())
}

/// Population minimum of `L_unif(t)` on `S^{m-1}`: `-2t + ln 0F1(; m/2; t^2)`.
/// Attained only by the uniform distribution.
pub fn lunif_lower_bound(m: usize, t: f64) -> Result<f64> {
    check_dim_t(m, t)?;
    Ok(-2.0 * t + log_hyp0f1(m as f64 / 2.0, t * t)?)
}

/// Lower bound for the self-pair-excluded (pdist) uniformity estimate over a
/// batch of `batch` points.
///
/// Uses `ln((B e^{-2t} 0F1 - 1) / (B - 1))` when `0F1 > e^{2t} / B`, clipped
/// below by the trivial `-4t`; otherwise `-4t`.
pub fn pdist_estimator_lower_bound(m: usize, t: f64, batch: usize) -> Result<f64> {
    check_dim_t(m, t)?;
    if batch < 2 {
        return Err(Error::InvalidConfig(format!(
            "batch must be >= 2, got {batch}"
        )));
    }
    let naive = -4.0 * t;
    let pop = lunif_lower_bound(m, t)?;
    let b = batch as f64;
    // 0F1 > e^{2t}/B  <=>  pop + ln B > 0
    let shifted = pop + b.ln();
    if shifted > 0.0 {
        let log_num = shifted + (-(-shifted).exp()).ln_1p();
        Ok(naive.max(log_num - (b - 1.0).ln()))
    } else {
        Ok(naive)
    }
}

/// `ln Z` for the von Mises-Fisher density on `S^{m-1}` w.r.t. surface measure:
/// `Z = (2 pi)^{m/2} I_{m/2-1}(kappa) / kappa^{m/2-1}`.
pub fn log_vmf_normalizer(m: usize, kappa: f64) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidDimension { dim: m });
    }
    if !(kappa > 0.0) {
        return Err(Error::Domain(format!("kappa must be > 0, got {kappa}")));
    }
    let half = m as f64 / 2.0;
    let nu = half - 1.0;
    let tail = if nu == 0.0 { 0.0 } else { nu * kappa.ln() };
    Ok(half * std::f64::consts::TAU.ln() + log_bessel_i(nu, kappa)? - tail)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub m: usize,
    pub t: f64,
    pub batch: usize,
}

/// Range of `L_unif` and the pdist estimator's lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    #[serde(rename = "population_lower")]
    pub population_lower_bound: f64,
    #[serde(rename = "population_upper")]
    pub population_upper_bound: f64,
    #[serde(rename = "pdist_lower")]
    pub pdist_lower_bound: f64,
    pub params: BoundParams,
}

pub fn lunif_bounds(m: usize, t: f64, batch: usize) -> Result<BoundReport> {
    Ok(BoundReport {
        population_lower_bound: lunif_lower_bound(m, t)?,
        // only degenerate (single-point) distributions reach 0
        population_upper_bound: 0.0,
        pdist_lower_bound: pdist_estimator_lower_bound(m, t, batch)?,
        params: BoundParams { m, t, batch },
    })
}
