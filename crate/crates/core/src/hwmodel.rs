//! Value-level model of the streaming fixed-point datapath: scaled radix-2
//! FFT, element-wise squaring, systolic insertion sorter, separating unit
//! with shift-only thresholds and a reciprocal table, and the signal-power
//! and SNR units.
//!
//! The model is bit-accurate at the level of register contents, not
//! cycle-accurate. Step counters are kept per unit for relative comparisons.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ComplexVector;
use crate::error::{invalid, Result};
use crate::estimator::{BoundaryResult, EstimateResult, ThresholdSchedule};

/// Two's-complement (or unsigned) fixed-point format: `total_bits` wide with
/// `frac_bits` fractional bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FxFormat {
    pub total_bits: u32,
    pub frac_bits: u32,
    pub signed: bool,
}

impl FxFormat {
    /// Antenna-domain I/Q samples.
    pub const ANTENNA_IQ: Self = Self::new_unchecked(16, 8, true);
    /// Beamspace I/Q after the scaled FFT.
    pub const BEAMSPACE_IQ: Self = Self::new_unchecked(10, 8, true);
    /// Element powers, `N̂0` and `P̂x`.
    pub const POWER: Self = Self::new_unchecked(16, 8, false);
    /// Running sums `S_m`, including the `S_M` handed to the signal-power unit.
    pub const ACCUMULATOR: Self = Self::new_unchecked(32, 8, false);
    /// `ρ̂`.
    pub const SNR: Self = Self::new_unchecked(24, 8, false);

    const fn new_unchecked(total_bits: u32, frac_bits: u32, signed: bool) -> Self {
        Self {
            total_bits,
            frac_bits,
            signed,
        }
    }

    pub fn new(total_bits: u32, frac_bits: u32, signed: bool) -> Result<Self> {
        if !(1 <= frac_bits && frac_bits < total_bits && total_bits <= 32) {
            return Err(invalid(format!(
                "need 1 <= frac_bits < total_bits <= 32, got Q{total_bits}.{frac_bits}"
            )));
        }
        Ok(Self::new_unchecked(total_bits, frac_bits, signed))
    }

    pub fn max_raw(&self) -> i64 {
        if self.signed {
            (1i64 << (self.total_bits - 1)) - 1
        } else {
            (1i64 << self.total_bits) - 1
        }
    }

    pub fn min_raw(&self) -> i64 {
        if self.signed {
            -(1i64 << (self.total_bits - 1))
        } else {
            0
        }
    }

    pub fn lsb(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    /// Clamps `raw` into range; the flag reports whether clamping happened.
    pub fn saturate(&self, raw: i64) -> (i64, bool) {
        if raw > self.max_raw() {
            (self.max_raw(), true)
        } else if raw < self.min_raw() {
            (self.min_raw(), true)
        } else {
            (raw, false)
        }
    }

    fn value(&self, raw: i64) -> FxValue {
        FxValue { raw, format: *self }
    }
}

impl fmt::Display for FxFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.signed { "s" } else { "u" };
        write!(f, "{s}Q{}.{}", self.total_bits, self.frac_bits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FxValue {
    pub raw: i64,
    pub format: FxFormat,
}

impl FxValue {
    pub fn to_f64(&self) -> f64 {
        self.raw as f64 * self.format.lsb()
    }
}

/// Saturation and overflow counters. A counter is nonzero exactly when some
/// intermediate of that unit left its format range.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FxFlags {
    pub input_saturations: u32,
    pub beamspace_saturations: u32,
    pub power_saturations: u32,
    pub accumulator_overflows: u32,
    pub output_saturations: u32,
}

impl FxFlags {
    pub fn any(&self) -> bool {
        self.total() > 0
    }

    pub fn total(&self) -> u32 {
        self.input_saturations
            + self.beamspace_saturations
            + self.power_saturations
            + self.accumulator_overflows
            + self.output_saturations
    }

    pub fn merge(&mut self, other: &FxFlags) {
        self.input_saturations += other.input_saturations;
        self.beamspace_saturations += other.beamspace_saturations;
        self.power_saturations += other.power_saturations;
        self.accumulator_overflows += other.accumulator_overflows;
        self.output_saturations += other.output_saturations;
    }
}

impl fmt::Display for FxFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "in={} bs={} pw={} acc={} out={}",
            self.input_saturations,
            self.beamspace_saturations,
            self.power_saturations,
            self.accumulator_overflows,
            self.output_saturations
        )
    }
}

/// Right shift by `k` with round-half-away-from-zero.
pub fn round_shift(x: i64, k: u32) -> i64 {
    if k == 0 {
        return x;
    }
    let half = 1i64 << (k - 1);
    if x >= 0 {
        (x + half) >> k
    } else {
        -((-x + half) >> k)
    }
}

/// Right shift by `k` with round-half-to-even (convergent rounding).
pub fn round_shift_even(x: i64, k: u32) -> i64 {
    if k == 0 {
        return x;
    }
    let floor = x >> k;
    let rem = x - (floor << k);
    let half = 1i64 << (k - 1);
    if rem > half || (rem == half && floor & 1 == 1) {
        floor + 1
    } else {
        floor
    }
}

/// Nearest representable value (ties away from zero), saturating at the
/// format bounds. Saturations are counted in `saturations`.
pub fn fx_quantize(x: f64, fmt: FxFormat, saturations: &mut u32) -> FxValue {
    let scaled = (x * (fmt.frac_bits as f64).exp2()).round();
    let raw = if scaled.is_nan() {
        *saturations += 1;
        0
    } else if scaled >= fmt.max_raw() as f64 {
        if scaled > fmt.max_raw() as f64 {
            *saturations += 1;
        }
        fmt.max_raw()
    } else if scaled <= fmt.min_raw() as f64 {
        if scaled < fmt.min_raw() as f64 {
            *saturations += 1;
        }
        fmt.min_raw()
    } else {
        scaled as i64
    };
    fmt.value(raw)
}

/// Raw complex sample on a shared LSB grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FxComplex {
    pub re: i64,
    pub im: i64,
}

/// Quantizes a float vector to antenna-domain Q16.8 I/Q.
pub fn quantize_antenna(y: &ComplexVector, saturations: &mut u32) -> Vec<FxComplex> {
    y.iter()
        .map(|z| FxComplex {
            re: fx_quantize(z.re, FxFormat::ANTENNA_IQ, saturations).raw,
            im: fx_quantize(z.im, FxFormat::ANTENNA_IQ, saturations).raw,
        })
        .collect()
}

/// Fractional bits of the FFT twiddle factors.
pub const TWIDDLE_FRAC_BITS: u32 = 16;

/// Reciprocal table for division-free normalization: `entry[m] ≈ 2^16/m`,
/// 18-bit unsigned with 16 fractional bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReciprocalLut {
    entries: Vec<u32>,
}

impl ReciprocalLut {
    pub const FRAC_BITS: u32 = 16;
    pub const TOTAL_BITS: u32 = 18;
    /// Largest table for which all entries stay distinct at 16 fractional bits.
    pub const MAX_LEN: usize = 256;

    pub fn new(m: usize) -> Result<Self> {
        if m == 0 || m > Self::MAX_LEN {
            return Err(invalid(format!(
                "reciprocal table size must lie in [1, {}], got {m}",
                Self::MAX_LEN
            )));
        }
        let one = 1u64 << Self::FRAC_BITS;
        let entries = (1..=m as u64)
            .map(|d| ((2 * one + d) / (2 * d)) as u32)
            .collect();
        Ok(Self { entries })
    }

    /// `1/m` in raw units, `m` 1-based.
    pub fn get(&self, m: usize) -> u32 {
        self.entries[m - 1]
    }

    /// `S/m` in the same LSB as `S`: `(S·entry[m] + 2^15) >> 16`.
    pub fn normalize(&self, s: u64, m: usize) -> u64 {
        let prod = s * u64::from(self.get(m));
        (prod + (1u64 << (Self::FRAC_BITS - 1))) >> Self::FRAC_BITS
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One trace line: step index, unit, raw register values, flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub step: u64,
    pub unit: &'static str,
    pub values: Vec<i64>,
    pub flags: String,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.step, self.unit)?;
        for v in &self.values {
            write!(f, " {v}")?;
        }
        if !self.flags.is_empty() {
            write!(f, " [{}]", self.flags)?;
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
struct Tracer {
    events: Option<Vec<TraceEvent>>,
    step: u64,
}

impl Tracer {
    fn tick(&mut self, unit: &'static str, values: impl FnOnce() -> Vec<i64>, flags: &str) {
        if let Some(ev) = self.events.as_mut() {
            ev.push(TraceEvent {
                step: self.step,
                unit,
                values: values(),
                flags: flags.to_string(),
            });
        }
        self.step += 1;
    }
}

/// Steps spent in each unit for the last processed vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounts {
    pub front_end: u64,
    pub sort_load: u64,
    pub sort_flush: u64,
    pub sort_output: u64,
    pub separating: u64,
    pub signal_snr: u64,
}

fn bit_reverse_permute(data: &mut [FxComplex]) {
    let n = data.len();
    let bits = n.trailing_zeros();
    if bits == 0 {
        return;
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            data.swap(i, j);
        }
    }
}

/// Radix-2 decimation-in-time FFT with a halving after every butterfly
/// stage, so the output is `(1/M)·Σ y_m e^{−j2πkm/M}` on the input LSB grid.
/// Twiddle products are rounded once and every halving uses convergent
/// rounding; ties away from zero would inflate magnitudes stage by stage.
pub fn scaled_fft(input: &[FxComplex]) -> Result<Vec<FxComplex>> {
    let n = input.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(invalid(format!("FFT length must be a power of two, got {n}")));
    }
    let mut data = input.to_vec();
    bit_reverse_permute(&mut data);
    let tw_one = (TWIDDLE_FRAC_BITS as f64).exp2();
    let mut half = 1;
    while half < n {
        let span = 2 * half;
        let twiddles: Vec<(i64, i64)> = (0..half)
            .map(|k| {
                let ang = -2.0 * std::f64::consts::PI * k as f64 / span as f64;
                ((ang.cos() * tw_one).round() as i64, (ang.sin() * tw_one).round() as i64)
            })
            .collect();
        for start in (0..n).step_by(span) {
            for (k, &(wr, wi)) in twiddles.iter().enumerate() {
                let a = data[start + k];
                let b = data[start + k + half];
                let tr = round_shift_even(b.re * wr - b.im * wi, TWIDDLE_FRAC_BITS);
                let ti = round_shift_even(b.re * wi + b.im * wr, TWIDDLE_FRAC_BITS);
                data[start + k] = FxComplex {
                    re: round_shift_even(a.re + tr, 1),
                    im: round_shift_even(a.im + ti, 1),
                };
                data[start + k + half] = FxComplex {
                    re: round_shift_even(a.re - tr, 1),
                    im: round_shift_even(a.im - ti, 1),
                };
            }
        }
        half = span;
    }
    Ok(data)
}

/// Scaled FFT → Q10.8 beamspace → `re² + im²` → `<< log2 M` → Q16.8 power,
/// one power per element in FFT output order.
pub fn fx_front_end(y: &[FxComplex], flags: &mut FxFlags) -> Result<Vec<FxValue>> {
    fx_front_end_traced(y, flags, &mut Tracer::default())
}

fn fx_front_end_traced(y: &[FxComplex], flags: &mut FxFlags, tracer: &mut Tracer) -> Result<Vec<FxValue>> {
    let m = y.len();
    let spectrum = scaled_fft(y)?;
    let log2m = m.trailing_zeros();
    let bs = FxFormat::BEAMSPACE_IQ;
    let pw = FxFormat::POWER;
    // beamspace and input share 8 fractional bits, so the Q10.8 stage only
    // narrows the range
    debug_assert_eq!(bs.frac_bits, FxFormat::ANTENNA_IQ.frac_bits);
    let out = spectrum
        .iter()
        .map(|z| {
            let (re, s1) = bs.saturate(z.re);
            let (im, s2) = bs.saturate(z.im);
            flags.beamspace_saturations += u32::from(s1) + u32::from(s2);
            let sq = (re * re + im * im) << log2m;
            let (p, s3) = pw.saturate(round_shift(sq, 2 * bs.frac_bits - pw.frac_bits));
            flags.power_saturations += u32::from(s3);
            tracer.tick(
                "square",
                || vec![re, im, p],
                if s1 || s2 || s3 { "sat" } else { "" },
            );
            pw.value(p)
        })
        .collect();
    Ok(out)
}

/// Cascade of compare-and-swap stages. During loading each stage keeps the
/// smaller of its register and the incoming value and forwards the larger to
/// the next stage one step later; a flush drains in-flight values, then the
/// registers are read out from stage 0 (smallest) upward.
#[derive(Debug, Clone)]
pub struct SystolicSorter {
    stored: Vec<Option<i64>>,
    forward: Vec<Option<i64>>,
    steps: StepCounts,
}

impl SystolicSorter {
    pub fn new(m: usize) -> Self {
        Self {
            stored: vec![None; m],
            forward: vec![None; m],
            steps: StepCounts::default(),
        }
    }

    fn clock(&mut self, input: Option<i64>) {
        let mut incoming = input;
        for stage in 0..self.stored.len() {
            let next_in = self.forward[stage].take();
            if let Some(v) = incoming {
                self.forward[stage] = match self.stored[stage] {
                    None => {
                        self.stored[stage] = Some(v);
                        None
                    }
                    Some(s) if v < s => {
                        self.stored[stage] = Some(v);
                        Some(s)
                    }
                    Some(_) => Some(v),
                };
            }
            incoming = next_in;
        }
    }

    fn in_flight(&self) -> bool {
        self.forward.iter().any(Option::is_some)
    }

    fn sort_traced(&mut self, input: &[i64], tracer: &mut Tracer) -> Result<Vec<i64>> {
        let m = self.stored.len();
        if input.len() != m {
            return Err(invalid(format!("sorter expects {m} inputs, got {}", input.len())));
        }
        self.stored.iter_mut().for_each(|s| *s = None);
        self.forward.iter_mut().for_each(|s| *s = None);
        self.steps = StepCounts::default();
        for &v in input {
            self.clock(Some(v));
            self.steps.sort_load += 1;
            tracer.tick("sort_load", || vec![v], "");
        }
        while self.in_flight() {
            self.clock(None);
            self.steps.sort_flush += 1;
            tracer.tick("sort_flush", Vec::new, "");
        }
        let mut out = Vec::with_capacity(m);
        for stage in 0..m {
            let v = self.stored[stage].take().expect("every stage filled after flush");
            out.push(v);
            self.steps.sort_output += 1;
            tracer.tick("sort_out", || vec![v], "");
        }
        Ok(out)
    }

    pub fn sort(&mut self, input: &[i64]) -> Result<Vec<i64>> {
        self.sort_traced(input, &mut Tracer::default())
    }

    pub fn steps(&self) -> StepCounts {
        self.steps
    }
}

/// Sorts `M` raw values with a fresh [`SystolicSorter`].
pub fn fx_systolic_sort(input: &[FxValue]) -> Result<Vec<FxValue>> {
    let Some(first) = input.first() else {
        return Ok(Vec::new());
    };
    let fmt = first.format;
    let raw: Vec<i64> = input.iter().map(|v| v.raw).collect();
    let sorted = SystolicSorter::new(raw.len()).sort(&raw)?;
    Ok(sorted.into_iter().map(|r| fmt.value(r)).collect())
}

/// Output of the separating unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeparatorOutput {
    pub n0: FxValue,
    pub s_total: FxValue,
    pub s_mstar: FxValue,
    pub m_star: usize,
    pub hit: bool,
}

/// Integer hit test `m·Δ ≥ S_m·2^z`. Negative shifts move to the left-hand
/// side so that no bits are dropped.
pub fn fx_hit_test(m: u64, delta: u64, s_m: u64, shift: i32, flags: &mut FxFlags) -> bool {
    let limit = u64::from(u32::MAX);
    let mut lhs = m * delta;
    let mut rhs = s_m;
    if shift >= 0 {
        rhs <<= shift as u32;
    } else {
        lhs <<= (-shift) as u32;
    }
    if lhs > limit || rhs > limit {
        flags.accumulator_overflows += 1;
        lhs = lhs.min(limit);
        rhs = rhs.min(limit);
    }
    delta > 0 && lhs >= rhs
}

/// Streams ascending Q16.8 powers, latches `S_{m*}` at the first hit and
/// normalizes it with the reciprocal table.
pub fn fx_separating_unit(
    sorted: &[FxValue],
    schedule: &ThresholdSchedule,
    lut: &ReciprocalLut,
    flags: &mut FxFlags,
) -> Result<SeparatorOutput> {
    fx_separating_unit_traced(sorted, schedule, lut, flags, &mut Tracer::default())
}

fn fx_separating_unit_traced(
    sorted: &[FxValue],
    schedule: &ThresholdSchedule,
    lut: &ReciprocalLut,
    flags: &mut FxFlags,
    tracer: &mut Tracer,
) -> Result<SeparatorOutput> {
    let m_total = sorted.len();
    if m_total == 0 {
        return Err(invalid("separating unit received an empty stream"));
    }
    if lut.len() < m_total {
        return Err(invalid(format!(
            "reciprocal table covers {} entries, stream has {m_total}",
            lut.len()
        )));
    }
    if sorted.windows(2).any(|w| w[1].raw < w[0].raw) {
        return Err(invalid("separating unit input is not ascending"));
    }
    let acc = FxFormat::ACCUMULATOR;
    let mut s: u64 = 0;
    let mut latched: Option<(usize, u64)> = None;
    for m in 1..=m_total {
        let p = sorted[m - 1].raw as u64;
        let (next, over) = acc.saturate((s + p) as i64);
        if over {
            flags.accumulator_overflows += 1;
        }
        s = next as u64;
        let mut hit_now = false;
        if latched.is_none() && m < m_total {
            let delta = sorted[m].raw as u64 - p;
            if fx_hit_test(m as u64, delta, s, schedule.shift(m), flags) {
                latched = Some((m, s));
                hit_now = true;
            }
        }
        tracer.tick("separate", || vec![m as i64, p as i64, s as i64], if hit_now { "hit" } else { "" });
    }
    let (m_star, s_mstar, hit) = match latched {
        Some((m, sm)) => (m, sm, true),
        None => (m_total, s, false),
    };
    let pw = FxFormat::POWER;
    let n0_raw = lut.normalize(s_mstar, m_star);
    let (n0_raw, sat) = pw.saturate(n0_raw as i64);
    flags.output_saturations += u32::from(sat);
    Ok(SeparatorOutput {
        n0: pw.value(n0_raw),
        s_total: acc.value(s as i64),
        s_mstar: acc.value(s_mstar as i64),
        m_star,
        hit,
    })
}

/// `P̂x = max((S_M >> log2 M) − N̂0, 0)` in Q16.8 and
/// `ρ̂ = (P̂x << 8) / N̂0` in Q24.8, truncating. With `N̂0 = 0`, `ρ̂` is the
/// format maximum when `P̂x > 0` and zero otherwise.
pub fn fx_signal_snr_unit(
    s_total: FxValue,
    n0: FxValue,
    log2m: u32,
    flags: &mut FxFlags,
) -> Result<(FxValue, FxValue)> {
    if s_total.format.frac_bits != FxFormat::POWER.frac_bits || n0.format.frac_bits != FxFormat::POWER.frac_bits {
        return Err(invalid("signal/SNR unit expects 8 fractional bits on both inputs"));
    }
    let pw = FxFormat::POWER;
    let snr = FxFormat::SNR;
    let px_raw = ((s_total.raw >> log2m) - n0.raw).max(0);
    let (px_raw, sat) = pw.saturate(px_raw);
    flags.output_saturations += u32::from(sat);
    let rho_raw = if n0.raw > 0 {
        (px_raw << snr.frac_bits) / n0.raw
    } else if px_raw > 0 {
        snr.max_raw()
    } else {
        0
    };
    let (rho_raw, sat) = snr.saturate(rho_raw);
    flags.output_saturations += u32::from(sat && n0.raw > 0);
    Ok((pw.value(px_raw), snr.value(rho_raw)))
}

/// Fixed-point estimates for one input vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FxEstimate {
    pub n0: FxValue,
    pub px: FxValue,
    pub rho: FxValue,
    pub s_total: FxValue,
    pub s_mstar: FxValue,
    pub m_star: usize,
    pub hit: bool,
    pub flags: FxFlags,
    pub steps: StepCounts,
}

impl FxEstimate {
    pub fn to_estimate_result(&self) -> EstimateResult {
        EstimateResult {
            n0_hat: self.n0.to_f64(),
            px_hat: self.px.to_f64(),
            rho_hat: self.rho.to_f64(),
            boundary: BoundaryResult {
                m_star: self.m_star,
                hit: self.hit,
                s_mstar: self.s_mstar.to_f64(),
                s_total: self.s_total.to_f64(),
            },
        }
    }
}

/// End-to-end datapath for a fixed array size. Processes one vector at a
/// time; keep one instance per stream.
#[derive(Debug)]
pub struct FxPipeline {
    m: usize,
    schedule: ThresholdSchedule,
    lut: ReciprocalLut,
    sorter: SystolicSorter,
    tracer: Tracer,
}

impl FxPipeline {
    pub fn new(m: usize, schedule: ThresholdSchedule) -> Result<Self> {
        if m < 2 || !m.is_power_of_two() {
            return Err(invalid(format!("array size must be a power of two >= 2, got {m}")));
        }
        Ok(Self {
            m,
            schedule,
            lut: ReciprocalLut::new(m)?,
            sorter: SystolicSorter::new(m),
            tracer: Tracer::default(),
        })
    }

    /// Starts recording one [`TraceEvent`] per step.
    pub fn enable_trace(&mut self) {
        self.tracer.events.get_or_insert_with(Vec::new);
    }

    /// Returns and clears the recorded trace.
    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        self.tracer.events.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn schedule(&self) -> &ThresholdSchedule {
        &self.schedule
    }

    /// Runs a float antenna-domain vector through input quantization and the
    /// full datapath.
    pub fn process(&mut self, y: &ComplexVector) -> Result<FxEstimate> {
        let mut flags = FxFlags::default();
        let q = quantize_antenna(y, &mut flags.input_saturations);
        self.process_raw(&q, flags)
    }

    /// Runs already-quantized Q16.8 samples.
    pub fn process_fixed(&mut self, y: &[FxComplex]) -> Result<FxEstimate> {
        let mut flags = FxFlags::default();
        let ant = FxFormat::ANTENNA_IQ;
        for z in y {
            for v in [z.re, z.im] {
                if ant.saturate(v).1 {
                    return Err(invalid(format!("raw sample {v} outside {ant}")));
                }
            }
        }
        flags.input_saturations = 0;
        self.process_raw(y, flags)
    }

    fn process_raw(&mut self, y: &[FxComplex], mut flags: FxFlags) -> Result<FxEstimate> {
        if y.len() != self.m {
            return Err(invalid(format!("pipeline built for M = {}, got {}", self.m, y.len())));
        }
        let log2m = self.m.trailing_zeros();
        let mut steps = StepCounts::default();

        let start = self.tracer.step;
        let powers = fx_front_end_traced(y, &mut flags, &mut self.tracer)?;
        steps.front_end = self.tracer.step - start;

        let raw: Vec<i64> = powers.iter().map(|p| p.raw).collect();
        let sorted_raw = self.sorter.sort_traced(&raw, &mut self.tracer)?;
        let s = self.sorter.steps();
        steps.sort_load = s.sort_load;
        steps.sort_flush = s.sort_flush;
        steps.sort_output = s.sort_output;
        let sorted: Vec<FxValue> = sorted_raw.into_iter().map(|r| FxFormat::POWER.value(r)).collect();

        let start = self.tracer.step;
        let sep = fx_separating_unit_traced(&sorted, &self.schedule, &self.lut, &mut flags, &mut self.tracer)?;
        steps.separating = self.tracer.step - start;

        let (px, rho) = fx_signal_snr_unit(sep.s_total, sep.n0, log2m, &mut flags)?;
        let flag_str = if flags.any() { flags.to_string() } else { String::new() };
        self.tracer.tick(
            "signal_snr",
            || vec![sep.n0.raw, sep.s_total.raw, px.raw, rho.raw],
            &flag_str,
        );
        steps.signal_snr = 1;

        Ok(FxEstimate {
            n0: sep.n0,
            px,
            rho,
            s_total: sep.s_total,
            s_mstar: sep.s_mstar,
            m_star: sep.m_star,
            hit: sep.hit,
            flags,
            steps,
        })
    }
}

/// Convenience wrapper: a fresh pipeline for one vector.
pub fn fx_pipeline_estimate(y: &ComplexVector, schedule: &ThresholdSchedule) -> Result<FxEstimate> {
    FxPipeline::new(y.len(), *schedule)?.process(y)
}

/// Float value of a raw beamspace/antenna sample on the 8-bit grid.
pub fn fx_complex_to_f64(z: FxComplex, fmt: FxFormat) -> Complex64 {
    Complex64::new(z.re as f64 * fmt.lsb(), z.im as f64 * fmt.lsb())
}
