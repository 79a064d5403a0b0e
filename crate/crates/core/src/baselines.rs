//! Single-snapshot comparison estimators: MAD, MAD with a parametric
//! truncated-exponential refinement, and an iteratively trimmed mean.
//!
//! The original formulations are not spelled out in the literature these
//! stand in for, so these are reconstructions:
//!
//! * MAD works on the `2M` real and imaginary components of `ȳ` (component
//!   amplitudes, not powers). For Gaussian noise each component has standard
//!   deviation `σ = √(N0/2)` and `MAD ≈ 0.67449·σ`.
//! * The refinement and the trimmed mean both discard powers above
//!   `T = −ln(α)·μ` and undo the downward bias of the kept mean using the
//!   truncated-exponential mean
//!   `E[p | p ≤ T] = μ·(1 − (T/μ + 1)e^{−T/μ}) / (1 − e^{−T/μ})`.
//!
//! All medians use the lower central value for even lengths.

use serde::{Deserialize, Serialize};

use crate::beamspace::SortedPowerVector;
use crate::channel::ComplexVector;
use crate::error::{invalid, Result};
use crate::estimator::lower_median;

/// Bisection steps when inverting the truncated mean.
pub const CORRECTION_STEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// `MAD/σ` for a Gaussian, `Φ⁻¹(3/4)`.
    pub mad_consistency: f64,
    /// Tail probability that defines the trimming threshold.
    pub trunc_alpha: f64,
    pub trunc_iters: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            mad_consistency: 0.67449,
            trunc_alpha: 0.01,
            trunc_iters: 3,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mad_consistency.is_finite() && self.mad_consistency > 0.0) {
            return Err(invalid(format!(
                "mad_consistency must be positive, got {}",
                self.mad_consistency
            )));
        }
        if !(self.trunc_alpha > 0.0 && self.trunc_alpha < 1.0) {
            return Err(invalid(format!("trunc_alpha must lie in (0, 1), got {}", self.trunc_alpha)));
        }
        if self.trunc_iters == 0 {
            return Err(invalid("trunc_iters must be at least 1"));
        }
        Ok(())
    }

    fn trim_factor(&self) -> f64 {
        -self.trunc_alpha.ln()
    }
}

/// Mean of an exponential with mean `mu` conditioned on not exceeding `t`.
pub fn truncated_exp_mean(mu: f64, t: f64) -> f64 {
    let r = t / mu;
    let e = (-r).exp();
    mu * (1.0 - (r + 1.0) * e) / (1.0 - e)
}

/// Solves `truncated_exp_mean(μ, t) = kept_mean` for `μ` in
/// `(0, 10·kept_mean]` by bisection. The search runs on `μ/kept_mean` so the
/// result scales exactly with its inputs.
pub fn invert_truncated_mean(kept_mean: f64, t: f64) -> f64 {
    if !(kept_mean > 0.0) {
        return 0.0;
    }
    let t_rel = t / kept_mean;
    let (mut lo, mut hi) = (0.0_f64, 10.0_f64);
    for _ in 0..CORRECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if truncated_exp_mean(mid, t_rel) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) * kept_mean
}

fn check_len(m: usize) -> Result<()> {
    if m < 2 {
        return Err(invalid(format!("need at least 2 elements, got {m}")));
    }
    Ok(())
}

/// `N̂0 = 2·(MAD/c)²` over the real and imaginary parts of `ȳ`.
pub fn mad_noise_power(ybar: &ComplexVector, cfg: &BaselineConfig) -> Result<f64> {
    check_len(ybar.len())?;
    cfg.validate()?;
    let parts: Vec<f64> = ybar.iter().flat_map(|z| [z.re, z.im]).collect();
    let center = lower_median(&parts);
    let dev: Vec<f64> = parts.iter().map(|v| (v - center).abs()).collect();
    let sigma = lower_median(&dev) / cfg.mad_consistency;
    Ok(2.0 * sigma * sigma)
}

/// MAD estimate followed by one trim-and-correct pass.
pub fn mad_refined_noise_power(ybar: &ComplexVector, cfg: &BaselineConfig) -> Result<f64> {
    let coarse = mad_noise_power(ybar, cfg)?;
    let t = cfg.trim_factor() * coarse;
    let (sum, count) = ybar
        .iter()
        .map(|z| z.norm_sqr())
        .filter(|&p| p <= t)
        .fold((0.0, 0usize), |(s, c), p| (s + p, c + 1));
    if count == 0 {
        return Ok(coarse);
    }
    Ok(invert_truncated_mean(sum / count as f64, t))
}

/// Starting from the full mean, repeatedly trims powers above
/// `−ln(α)·μ` and re-estimates `μ` from the corrected kept mean.
pub fn truncated_mean_noise_power(sorted: &SortedPowerVector, cfg: &BaselineConfig) -> Result<f64> {
    check_len(sorted.len())?;
    cfg.validate()?;
    let p = sorted.values();
    let mut mu = sorted.total() / p.len() as f64;
    for _ in 0..cfg.trunc_iters {
        if mu <= 0.0 {
            break;
        }
        let t = cfg.trim_factor() * mu;
        let kept = p.partition_point(|&v| v <= t);
        if kept == 0 {
            break;
        }
        let kept_mean = p[..kept].iter().sum::<f64>() / kept as f64;
        mu = invert_truncated_mean(kept_mean, t);
    }
    Ok(mu)
}
