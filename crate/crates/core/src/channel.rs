//! Geometric sparse multipath channel model, SNR calibration and AWGN.
//!
//! A uniform linear array with `M` elements observes `y = h·s + n` where
//! `h = Σ_ℓ g_ℓ·a(φ_ℓ)` is a sum of a few steering vectors. Spatial
//! frequencies are drawn from a continuous interval, so paths generally fall
//! between DFT bins and leak into neighbouring beams.

use std::f64::consts::PI;
use std::ops::{Deref, DerefMut};

use num_complex::Complex64;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

/// An `M`-element complex vector in antenna or beamspace domain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComplexVector(Vec<Complex64>);

impl ComplexVector {
    pub fn new(elements: Vec<Complex64>) -> Self {
        Self(elements)
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); m])
    }

    /// `‖v‖²`
    pub fn energy(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self(self.0.iter().map(|z| z * c).collect())
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }
}

impl Deref for ComplexVector {
    type Target = [Complex64];

    fn deref(&self) -> &[Complex64] {
        &self.0
    }
}

impl DerefMut for ComplexVector {
    fn deref_mut(&mut self) -> &mut [Complex64] {
        &mut self.0
    }
}

impl From<Vec<Complex64>> for ComplexVector {
    fn from(v: Vec<Complex64>) -> Self {
        Self(v)
    }
}

impl FromIterator<Complex64> for ComplexVector {
    fn from_iter<I: IntoIterator<Item = Complex64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Parameters of the geometric multipath model.
///
/// Path `ℓ` (0-based) has gain `g_ℓ ~ CN(0, decay^ℓ)` and spatial frequency
/// `φ_ℓ ~ U[phi_range.0, phi_range.1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub m: usize,
    pub l: usize,
    pub decay: f64,
    pub phi_range: (f64, f64),
}

impl ChannelConfig {
    pub const DEFAULT_DECAY: f64 = 0.5;
    pub const DEFAULT_PATHS: usize = 3;

    pub fn new(m: usize, l: usize) -> Result<Self> {
        let cfg = Self {
            m,
            l,
            decay: Self::DEFAULT_DECAY,
            phi_range: (-1.0, 1.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_decay(mut self, decay: f64) -> Result<Self> {
        self.decay = decay;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || !self.m.is_power_of_two() {
            return Err(invalid(format!(
                "antenna count must be a power of two >= 2, got {}",
                self.m
            )));
        }
        if self.l == 0 || self.l > self.m / 4 {
            return Err(invalid(format!(
                "path count must satisfy 1 <= L <= M/4 = {}, got {}",
                self.m / 4,
                self.l
            )));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(invalid(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        let (lo, hi) = self.phi_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid(format!("bad spatial frequency range [{lo}, {hi})")));
        }
        Ok(())
    }
}

/// Steering vector `a(φ)` with entries `exp(−jπφm)`, `m = 0..M`.
pub fn steering_vector(phi: f64, m: usize) -> Result<ComplexVector> {
    if !phi.is_finite() {
        return Err(invalid(format!("spatial frequency must be finite, got {phi}")));
    }
    if m == 0 {
        return Err(invalid("steering vector needs at least one element"));
    }
    Ok((0..m)
        .map(|i| Complex64::from_polar(1.0, -PI * phi * i as f64))
        .collect())
}

/// `h = Σ g_ℓ a(φ_ℓ)` for explicitly given paths.
pub fn channel_from_paths(gains: &[Complex64], phis: &[f64], m: usize) -> Result<ComplexVector> {
    if gains.len() != phis.len() {
        return Err(invalid(format!(
            "{} gains but {} spatial frequencies",
            gains.len(),
            phis.len()
        )));
    }
    let mut h = ComplexVector::zeros(m);
    for (&g, &phi) in gains.iter().zip(phis) {
        let a = steering_vector(phi, m)?;
        for (hi, ai) in h.iter_mut().zip(a.iter()) {
            *hi += g * ai;
        }
    }
    Ok(h)
}

/// One circular complex Gaussian draw with `E|z|² = variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let sd = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(sd * re, sd * im)
}

/// Draws a random channel realization from `cfg`.
pub fn synth_channel<R: Rng + ?Sized>(cfg: &ChannelConfig, rng: &mut R) -> Result<ComplexVector> {
    cfg.validate()?;
    let (lo, hi) = cfg.phi_range;
    let mut gains = Vec::with_capacity(cfg.l);
    let mut phis = Vec::with_capacity(cfg.l);
    for path in 0..cfg.l {
        phis.push(rng.random_range(lo..hi));
        gains.push(complex_gaussian(rng, cfg.decay.powi(path as i32)));
    }
    channel_from_paths(&gains, &phis, cfg.m)
}

/// Uniformly random unit-modulus QPSK symbol.
pub fn qpsk_symbol<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let k = rng.random_range(0..4u32);
    Complex64::from_polar(1.0, PI / 4.0 * f64::from(2 * k + 1))
}

/// Returns `x = c·h·s` with `c > 0` chosen so that `‖x‖²/M = rho·n0` holds
/// for this realization.
pub fn scale_to_snr(h: &ComplexVector, s: Complex64, rho: f64, n0: f64) -> Result<ComplexVector> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(invalid(format!("target SNR must be finite and >= 0, got {rho}")));
    }
    if !(n0.is_finite() && n0 > 0.0) {
        return Err(invalid(format!("noise power must be finite and > 0, got {n0}")));
    }
    if (s.norm() - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("symbol must have unit modulus, got |s| = {}", s.norm())));
    }
    let energy = h.energy();
    if !(energy > 0.0) || !energy.is_finite() {
        return Err(Error::DegenerateInput("channel has zero (or non-finite) energy".into()));
    }
    let m = h.len() as f64;
    let c = (rho * n0 * m / energy).sqrt();
    Ok(h.scaled(s * c))
}

/// `y = x + n` with `n ~ CN(0, n0·I)`.
pub fn add_awgn<R: Rng + ?Sized>(x: &ComplexVector, n0: f64, rng: &mut R) -> Result<ComplexVector> {
    if !(n0.is_finite() && n0 >= 0.0) {
        return Err(invalid(format!("noise power must be finite and >= 0, got {n0}")));
    }
    if n0 == 0.0 {
        return Ok(x.clone());
    }
    Ok(x.iter().map(|&xi| xi + complex_gaussian(rng, n0)).collect())
}

/// Specification of an ideally sparse beamspace vector: `k` nonzero entries,
/// each with squared magnitude `power`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdealSparseSpec {
    pub m: usize,
    pub k: usize,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdealSparse {
    pub signal: ComplexVector,
    /// Indices of the nonzero entries, ascending.
    pub signal_indices: Vec<usize>,
    /// Complement of `signal_indices`, ascending.
    pub noise_indices: Vec<usize>,
}

pub fn ideal_sparse_signal<R: Rng + ?Sized>(spec: &IdealSparseSpec, rng: &mut R) -> Result<IdealSparse> {
    if spec.k > spec.m {
        return Err(invalid(format!("k = {} exceeds M = {}", spec.k, spec.m)));
    }
    if spec.k > 0 && !(spec.power.is_finite() && spec.power > 0.0) {
        return Err(invalid(format!("entry power must be finite and > 0, got {}", spec.power)));
    }
    let mut signal_indices = index::sample(rng, spec.m, spec.k).into_vec();
    signal_indices.sort_unstable();

    let mut signal = ComplexVector::zeros(spec.m);
    let amp = spec.power.sqrt();
    for &i in &signal_indices {
        let theta = rng.random_range(0.0..2.0 * PI);
        signal[i] = Complex64::from_polar(amp, theta);
    }
    let noise_indices = (0..spec.m)
        .filter(|i| signal_indices.binary_search(i).is_err())
        .collect();
    Ok(IdealSparse {
        signal,
        signal_indices,
        noise_indices,
    })
}
