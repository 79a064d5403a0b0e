//! Blind noise power, signal power and SNR estimation from one sorted
//! beamspace power vector.
//!
//! Noise-only beamspace powers are i.i.d. exponential, so consecutive gaps of
//! the sorted vector are independent exponentials with rate `(M−m)/N0`. A
//! signal-bearing bin shows up as an unusually large gap relative to the
//! running mean of the powers below it. The first index whose gap clears the
//! threshold separates noise from signal; the mean of the powers below it is
//! the noise power estimate.
//!
//! The streaming test is written as `m·Δ_m ≥ γ·S_m` so that the only state
//! is a running sum, `γ` is a power of two (a shift in hardware) and the only
//! division is the final `S_{m*}/m*`.

use serde::{Deserialize, Serialize};

use crate::beamspace::{dft_unitary, power_sort, SortedPowerVector};
use crate::channel::ComplexVector;
use crate::error::{invalid, Result};

/// Rare-event probability used by [`default_schedule`].
pub const DEFAULT_ALPHA: f64 = 1e-3;

/// `H(m, M) = Σ_{k=1}^{m} Σ_{j=M−k+1}^{M} 1/j`, the expected sum of the `m`
/// smallest of `M` unit-mean exponentials.
pub fn harmonic_gap_sum(m: usize, big_m: usize) -> Result<f64> {
    if m == 0 || m >= big_m {
        return Err(invalid(format!("need 1 <= m < M, got m = {m}, M = {big_m}")));
    }
    let mut inner = 0.0;
    let mut total = 0.0;
    for k in 1..=m {
        inner += 1.0 / (big_m - k + 1) as f64;
        total += inner;
    }
    Ok(total)
}

/// Threshold coefficient `γ(m) = δ_m / μ̂_m` for a per-index false-hit
/// probability `alpha`.
///
/// With `E[S_m] = N0·H(m, M)` the plug-in noise level is `m·μ̂_m / H`, which
/// puts the gap threshold at `δ_m = −m·μ̂_m·ln(α) / ((M−m)·H(m, M))`.
pub fn gamma_coefficient(m: usize, big_m: usize, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let h = harmonic_gap_sum(m, big_m)?;
    Ok(-(m as f64) * alpha.ln() / ((big_m - m) as f64 * h))
}

/// `γ(m)` for every `m` in `1..M`, sharing the inner harmonic sums.
pub fn gamma_profile(big_m: usize, alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if big_m < 2 {
        return Err(invalid(format!("need M >= 2, got {big_m}")));
    }
    let neg_ln = -alpha.ln();
    let mut inner = 0.0;
    let mut h = 0.0;
    Ok((1..big_m)
        .map(|m| {
            inner += 1.0 / (big_m - m + 1) as f64;
            h += inner;
            m as f64 * neg_ln / ((big_m - m) as f64 * h)
        })
        .collect())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Nearest power of two in the log domain; exact halfway cases go down.
pub fn quantize_pow2(x: f64) -> Result<f64> {
    if !(x.is_finite() && x > 0.0) {
        return Err(invalid(format!("cannot quantize {x} to a power of two")));
    }
    let z = (x.log2() - 0.5).ceil();
    Ok(z.exp2())
}

/// Lower of the two central values for even lengths.
pub(crate) fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Piecewise-constant power-of-two threshold: `γ1` on `[1, M1]`, `γ2` on
/// `(M1, M2]`, `γ3` beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub m1: usize,
    pub m2: usize,
    /// Rare-event probability the levels were derived from; `None` for
    /// hand-set schedules.
    pub alpha: Option<f64>,
}

impl ThresholdSchedule {
    pub fn new(levels: [f64; 3], m1: usize, m2: usize, alpha: Option<f64>) -> Result<Self> {
        for g in levels {
            if !(g.is_finite() && g > 0.0 && g.log2().fract() == 0.0) {
                return Err(invalid(format!("threshold level {g} is not a power of two")));
            }
        }
        if m1 == 0 || m1 >= m2 {
            return Err(invalid(format!("need 1 <= M1 < M2, got M1 = {m1}, M2 = {m2}")));
        }
        Ok(Self {
            gamma1: levels[0],
            gamma2: levels[1],
            gamma3: levels[2],
            m1,
            m2,
            alpha,
        })
    }

    /// Same `gamma` at every index.
    pub fn constant(gamma: f64) -> Result<Self> {
        Self::new([gamma; 3], 1, 2, None)
    }

    /// Level applied at 1-based index `m`.
    #[inline]
    pub fn level(&self, m: usize) -> f64 {
        if m <= self.m1 {
            self.gamma1
        } else if m <= self.m2 {
            self.gamma2
        } else {
            self.gamma3
        }
    }

    /// `log2` of each level, i.e. the shift amounts of a hardware multiplier.
    pub fn shifts(&self) -> [i32; 3] {
        [self.gamma1, self.gamma2, self.gamma3].map(|g| g.log2() as i32)
    }

    /// Shift amount applied at 1-based index `m`.
    #[inline]
    pub fn shift(&self, m: usize) -> i32 {
        self.level(m).log2() as i32
    }

    pub fn is_constant(&self) -> bool {
        self.gamma1 == self.gamma2 && self.gamma2 == self.gamma3
    }
}

/// Builds the three-level schedule: each level is the power-of-two-rounded
/// lower median of `γ(m)` over `[1, M1]`, `(M1, M2]` and `(M2, M−1]`.
pub fn build_schedule(big_m: usize, alpha: f64, m1: usize, m2: usize) -> Result<ThresholdSchedule> {
    if m1 == 0 || m1 >= m2 || m2 >= big_m {
        return Err(invalid(format!(
            "need 1 <= M1 < M2 < M, got M1 = {m1}, M2 = {m2}, M = {big_m}"
        )));
    }
    let profile = gamma_profile(big_m, alpha)?;
    let level = |lo: usize, hi: usize| quantize_pow2(lower_median(&profile[lo..hi]));
    // profile[i] is γ(i + 1). (M2, M−1] is empty when M2 = M−1; γ3 then
    // never applies and is set equal to γ2.
    let g1 = level(0, m1)?;
    let g2 = level(m1, m2)?;
    let g3 = if m2 < big_m - 1 { level(m2, big_m - 1)? } else { g2 };
    ThresholdSchedule::new([g1, g2, g3], m1, m2, Some(alpha))
}

/// Breakpoints used when none are configured: `M1 = M/32`, `M2 = M/8`
/// (clamped so that `1 <= M1 < M2 < M`).
pub fn default_breakpoints(big_m: usize) -> Result<(usize, usize)> {
    if big_m < 4 {
        return Err(invalid(format!("a three-level schedule needs M >= 4, got {big_m}")));
    }
    let m1 = (big_m / 32).max(1);
    let m2 = (big_m / 8).max(m1 + 1);
    Ok((m1, m2))
}

/// Three-level schedule with [`DEFAULT_ALPHA`] and [`default_breakpoints`].
pub fn default_schedule(big_m: usize) -> Result<ThresholdSchedule> {
    let (m1, m2) = default_breakpoints(big_m)?;
    build_schedule(big_m, DEFAULT_ALPHA, m1, m2)
}

/// Single-level schedule: the power-of-two-rounded lower median of `γ(m)`
/// over all of `[1, M−1]`.
pub fn fixed_schedule(big_m: usize, alpha: f64) -> Result<ThresholdSchedule> {
    let profile = gamma_profile(big_m, alpha)?;
    let mut s = ThresholdSchedule::constant(quantize_pow2(lower_median(&profile))?)?;
    s.alpha = Some(alpha);
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryResult {
    /// Number of elements classified as noise-only, in `[1, M]`.
    pub m_star: usize,
    pub hit: bool,
    pub s_mstar: f64,
    pub s_total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub n0_hat: f64,
    pub px_hat: f64,
    pub rho_hat: f64,
    pub boundary: BoundaryResult,
}

/// Single forward pass over the sorted powers. A hit is declared at the
/// first `m < M` with `Δ_m > 0` and `m·Δ_m ≥ γ(m)·S_m`; without a hit
/// `m* = M`.
///
/// A zero gap never triggers, so runs of equal (including all-zero) powers
/// fall through to the full mean.
pub fn detect_boundary(sorted: &SortedPowerVector, schedule: &ThresholdSchedule) -> Result<BoundaryResult> {
    let p = sorted.values();
    let big_m = p.len();
    if big_m == 0 {
        return Err(invalid("empty power vector"));
    }
    let mut s = 0.0;
    let mut latched: Option<(usize, f64)> = None;
    for m in 1..=big_m {
        s += p[m - 1];
        if latched.is_none() && m < big_m {
            let delta = p[m] - p[m - 1];
            if delta > 0.0 && m as f64 * delta >= schedule.level(m) * s {
                latched = Some((m, s));
            }
        }
    }
    let (m_star, s_mstar, hit) = match latched {
        Some((m, sm)) => (m, sm, true),
        None => (big_m, s, false),
    };
    Ok(BoundaryResult {
        m_star,
        hit,
        s_mstar,
        s_total: s,
    })
}

/// Reference form of [`detect_boundary`] that recomputes `μ̂_m` from scratch
/// at every index and tests `Δ_m ≥ γ(m)·μ̂_m`. Quadratic; for cross-checks.
pub fn naive_detect_boundary(sorted: &SortedPowerVector, schedule: &ThresholdSchedule) -> Result<BoundaryResult> {
    let p = sorted.values();
    let big_m = p.len();
    if big_m == 0 {
        return Err(invalid("empty power vector"));
    }
    let s_total: f64 = p.iter().sum();
    for m in 1..big_m {
        let s_m: f64 = p[..m].iter().sum();
        let mu = s_m / m as f64;
        let delta = p[m] - p[m - 1];
        if delta > 0.0 && delta >= schedule.level(m) * mu {
            return Ok(BoundaryResult {
                m_star: m,
                hit: true,
                s_mstar: s_m,
                s_total,
            });
        }
    }
    Ok(BoundaryResult {
        m_star: big_m,
        hit: false,
        s_mstar: s_total,
        s_total,
    })
}

/// `N̂0 = S_{m*}/m*`.
pub fn estimate_noise_power(
    sorted: &SortedPowerVector,
    schedule: &ThresholdSchedule,
) -> Result<(f64, BoundaryResult)> {
    let b = detect_boundary(sorted, schedule)?;
    Ok((b.s_mstar / b.m_star as f64, b))
}

/// `P̂x = max(S_M/M − N̂0, 0)`.
pub fn estimate_signal_power(s_total: f64, n0_hat: f64, big_m: usize) -> f64 {
    (s_total / big_m as f64 - n0_hat).max(0.0)
}

/// `ρ̂ = P̂x/N̂0`; with `N̂0 = 0` returns `+∞` if `P̂x > 0`, else `0`.
pub fn estimate_snr(px_hat: f64, n0_hat: f64) -> f64 {
    if n0_hat > 0.0 {
        px_hat / n0_hat
    } else if px_hat > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// All three estimates from one sorted power vector.
pub fn estimate(sorted: &SortedPowerVector, schedule: &ThresholdSchedule) -> Result<EstimateResult> {
    let (n0_hat, boundary) = estimate_noise_power(sorted, schedule)?;
    let px_hat = estimate_signal_power(boundary.s_total, n0_hat, sorted.len());
    Ok(EstimateResult {
        n0_hat,
        px_hat,
        rho_hat: estimate_snr(px_hat, n0_hat),
        boundary,
    })
}

/// Antenna-domain sample → beamspace → sorted powers → estimates.
pub fn estimate_sample(y: &ComplexVector, schedule: &ThresholdSchedule) -> Result<EstimateResult> {
    estimate(&power_sort(&dft_unitary(y)), schedule)
}

/// Mean of the `m0` smallest powers: the estimator that knows the true
/// noise/signal boundary.
pub fn oracle_noise_power(sorted: &SortedPowerVector, m0: usize) -> Result<f64> {
    let p = sorted.values();
    if m0 == 0 || m0 > p.len() {
        return Err(invalid(format!("oracle boundary {m0} outside [1, {}]", p.len())));
    }
    Ok(p[..m0].iter().sum::<f64>() / m0 as f64)
}

/// `μ̂_m` for `m = 1..=M`.
pub fn running_means(sorted: &SortedPowerVector) -> Vec<f64> {
    let mut s = 0.0;
    sorted
        .values()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            s += p;
            s / (i + 1) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Exp1;

    fn sorted(v: &[f64]) -> SortedPowerVector {
        SortedPowerVector::from_sorted(v.to_vec()).unwrap()
    }

    // independent double loop
    fn brute_h(m: usize, big_m: usize) -> f64 {
        let mut t = 0.0;
        for k in 1..=m {
            for j in (big_m - k + 1)..=big_m {
                t += 1.0 / j as f64;
            }
        }
        t
    }

    #[test]
    fn harmonic_gap_sum_examples() {
        assert!((harmonic_gap_sum(1, 4).unwrap() - 0.25).abs() < 1e-15);
        assert!((harmonic_gap_sum(2, 4).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((harmonic_gap_sum(3, 4).unwrap() - 23.0 / 12.0).abs() < 1e-15);
        assert!(harmonic_gap_sum(4, 4).is_err());
        assert!(harmonic_gap_sum(0, 4).is_err());
        for big_m in [2, 7, 64, 256] {
            for m in 1..big_m {
                let a = harmonic_gap_sum(m, big_m).unwrap();
                assert!((a - brute_h(m, big_m)).abs() <= 1e-12 * a);
            }
        }
    }

    #[test]
    fn harmonic_gap_sum_is_expected_sorted_sum() {
        // E[sum of m smallest of M unit exponentials] by simulation
        let big_m = 16;
        let trials = 40_000;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut acc = vec![0.0; big_m];
        for _ in 0..trials {
            let mut x: Vec<f64> = (0..big_m).map(|_| rng.sample(Exp1)).collect();
            x.sort_by(f64::total_cmp);
            let mut s = 0.0;
            for (m, v) in x.iter().enumerate() {
                s += v;
                acc[m] += s;
            }
        }
        for m in [1, 4, 8, 12, 15] {
            let emp = acc[m - 1] / trials as f64;
            let h = harmonic_gap_sum(m, big_m).unwrap();
            assert!((emp - h).abs() < 0.02 * h.max(0.1), "m={m}: {emp} vs {h}");
        }
    }

    #[test]
    fn gamma_coefficient_examples() {
        let g = gamma_coefficient(1, 4, (-1.0f64).exp()).unwrap();
        assert!((g - 4.0 / 3.0).abs() < 1e-12);
        for alpha in [0.5, 0.01, 1e-6] {
            let g = gamma_coefficient(1, 2, alpha).unwrap();
            assert!((g + 2.0 * f64::ln(alpha)).abs() < 1e-12);
        }
        let g = gamma_coefficient(3, 64, 1.0 - 1e-12).unwrap();
        assert!(g > 0.0 && g < 1e-10);
        assert!(gamma_coefficient(1, 4, 0.0).is_err());
        assert!(gamma_coefficient(1, 4, 1.0).is_err());
        assert!(gamma_coefficient(4, 4, 0.5).is_err());
    }

    #[test]
    fn gamma_profile_matches_pointwise() {
        let prof = gamma_profile(64, 0.01).unwrap();
        assert_eq!(prof.len(), 63);
        for (i, g) in prof.iter().enumerate() {
            let direct = gamma_coefficient(i + 1, 64, 0.01).unwrap();
            assert!((g - direct).abs() <= 1e-12 * direct);
        }
    }

    #[test]
    fn pow2_rounding() {
        assert_eq!(quantize_pow2(1.0).unwrap(), 1.0);
        assert_eq!(quantize_pow2(3.0).unwrap(), 4.0);
        assert_eq!(quantize_pow2(2.8).unwrap(), 2.0);
        assert_eq!(quantize_pow2(0.3).unwrap(), 0.25);
        // log2 exactly halfway between 1 and 2 rounds down
        assert_eq!(quantize_pow2(2f64.powf(1.5)).unwrap(), 2.0);
        assert!(quantize_pow2(0.0).is_err());
    }

    #[test]
    fn lower_median_convention() {
        assert_eq!(lower_median(&[3.0]), 3.0);
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), 2.0);
        assert_eq!(lower_median(&[5.0, 1.0, 3.0]), 3.0);
    }

    #[test]
    fn schedule_construction() {
        let s = build_schedule(4, 0.01, 1, 2).unwrap();
        assert_eq!(s.gamma1, quantize_pow2(gamma_coefficient(1, 4, 0.01).unwrap()).unwrap());

        let s = build_schedule(64, 0.01, 32, 56).unwrap();
        assert!(s.gamma1 <= s.gamma2 && s.gamma2 <= s.gamma3, "{s:?}");
        for g in [s.gamma1, s.gamma2, s.gamma3] {
            assert_eq!(g.log2().fract(), 0.0);
        }
        // profile medians recomputed independently
        let prof: Vec<f64> = (1..64).map(|m| gamma_coefficient(m, 64, 0.01).unwrap()).collect();
        assert_eq!(s.gamma1, quantize_pow2(lower_median(&prof[0..32])).unwrap());
        assert_eq!(s.gamma2, quantize_pow2(lower_median(&prof[32..56])).unwrap());
        assert_eq!(s.gamma3, quantize_pow2(lower_median(&prof[56..63])).unwrap());

        assert!(build_schedule(64, 0.01, 0, 5).is_err());
        assert!(build_schedule(64, 0.01, 5, 5).is_err());
        assert!(build_schedule(64, 0.01, 5, 64).is_err());
        assert!(build_schedule(64, 1.5, 5, 10).is_err());
    }

    #[test]
    fn default_schedule_shape() {
        assert_eq!(default_breakpoints(64).unwrap(), (2, 8));
        assert_eq!(default_breakpoints(4).unwrap(), (1, 2));
        assert!(default_breakpoints(2).is_err());
        for big_m in [4, 8, 16, 64, 256] {
            let s = default_schedule(big_m).unwrap();
            assert!(s.m2 < big_m);
        }
        assert!(fixed_schedule(64, DEFAULT_ALPHA).unwrap().is_constant());
    }

    #[test]
    fn schedule_rejects_non_powers_of_two() {
        assert!(ThresholdSchedule::constant(3.0).is_err());
        assert!(ThresholdSchedule::constant(0.125).is_ok());
        assert!(ThresholdSchedule::new([1.0, 2.0, 4.0], 3, 3, None).is_err());
    }

    #[test]
    fn detect_boundary_hand_traces() {
        let g4 = ThresholdSchedule::constant(4.0).unwrap();
        let b = detect_boundary(&sorted(&[1.0; 4]), &g4).unwrap();
        assert_eq!((b.hit, b.m_star, b.s_total), (false, 4, 4.0));

        let v = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 100.0, 100.0];
        let b = detect_boundary(&sorted(&v), &g4).unwrap();
        assert_eq!((b.hit, b.m_star, b.s_mstar, b.s_total), (true, 6, 6.0, 206.0));

        let g8 = ThresholdSchedule::constant(8.0).unwrap();
        let b = detect_boundary(&sorted(&[1.0, 2.0, 3.0, 4.0]), &g8).unwrap();
        assert_eq!((b.hit, b.m_star, b.s_mstar), (false, 4, 10.0));

        let empty = SortedPowerVector::from_sorted(vec![]).unwrap();
        assert!(detect_boundary(&empty, &g4).is_err());
        assert!(naive_detect_boundary(&empty, &g4).is_err());
    }

    #[test]
    fn noise_power_examples() {
        let g4 = ThresholdSchedule::constant(4.0).unwrap();
        let v = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 100.0, 100.0];
        let (n0, b) = estimate_noise_power(&sorted(&v), &g4).unwrap();
        assert_eq!((n0, b.m_star), (1.0, 6));

        let (n0, b) = estimate_noise_power(&sorted(&[0.0; 8]), &g4).unwrap();
        assert_eq!((n0, b.m_star, b.hit), (0.0, 8, false));

        let g8 = ThresholdSchedule::constant(8.0).unwrap();
        let (n0, _) = estimate_noise_power(&sorted(&[1.0, 2.0, 3.0, 4.0]), &g8).unwrap();
        assert_eq!(n0, 2.5);
    }

    #[test]
    fn signal_and_snr_examples() {
        assert_eq!(estimate_signal_power(640.0, 1.0, 64), 9.0);
        assert_eq!(estimate_signal_power(64.0, 2.0, 64), 0.0);
        assert_eq!(estimate_signal_power(128.0, 1.0, 64), 1.0);
        assert_eq!(estimate_snr(9.0, 1.0), 9.0);
        assert_eq!(estimate_snr(0.0, 1.0), 0.0);
        assert_eq!(estimate_snr(4.0, 2.0), 2.0);
        assert_eq!(estimate_snr(1.0, 0.0), f64::INFINITY);
        assert_eq!(estimate_snr(0.0, 0.0), 0.0);
    }

    #[test]
    fn oracle_examples() {
        let s = sorted(&[1.0, 2.0, 3.0, 100.0]);
        assert_eq!(oracle_noise_power(&s, 3).unwrap(), 2.0);
        assert_eq!(oracle_noise_power(&s, 4).unwrap(), s.total() / 4.0);
        assert_eq!(oracle_noise_power(&s, 1).unwrap(), 1.0);
        assert!(oracle_noise_power(&s, 0).is_err());
        assert!(oracle_noise_power(&s, 5).is_err());
    }

    #[test]
    fn naive_agrees_on_examples() {
        let g4 = ThresholdSchedule::constant(4.0).unwrap();
        let v = sorted(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 100.0, 100.0]);
        assert_eq!(naive_detect_boundary(&v, &g4).unwrap().m_star, 6);
        let v = sorted(&[3.0; 7]);
        let b = naive_detect_boundary(&v, &g4).unwrap();
        assert_eq!((b.m_star, b.hit), (7, false));
    }

    #[test]
    fn estimate_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sched = default_schedule(64).unwrap();
        for _ in 0..1000 {
            let p: Vec<f64> = (0..64).map(|i| rng.sample::<f64, _>(Exp1) * if i < 3 { 50.0 } else { 1.0 }).collect();
            let s = SortedPowerVector::from_powers(p).unwrap();
            let e = estimate(&s, &sched).unwrap();
            assert!(e.n0_hat <= s.total() / 64.0 * (1.0 + 1e-12));
            assert_eq!(e.px_hat, (s.total() / 64.0 - e.n0_hat).max(0.0));
            if e.n0_hat > 0.0 {
                assert_eq!(e.rho_hat, e.px_hat / e.n0_hat);
            }
            assert!(e.boundary.s_mstar <= e.boundary.s_total);
            if !e.boundary.hit {
                assert_eq!(e.boundary.m_star, 64);
            }
        }
    }
}
