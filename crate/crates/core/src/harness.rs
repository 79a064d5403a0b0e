//! Experiment engine behind the CLI: Monte-Carlo SNR sweeps, the
//! order-statistics and oracle-estimator validation suites, single-sample
//! estimation from files, and fixed-point versus float comparisons.
//!
//! Every trial draws from its own ChaCha8 stream: the generator is seeded
//! with the master seed and its stream id is `(point << 32) | trial`, where
//! `point` indexes the SNR grid (or the suite's parameter point). Trials can
//! therefore run in any order on any number of threads. Per-trial outputs
//! are collected in trial order and reduced with pairwise summation, so
//! aggregated numbers do not depend on the thread count either.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, BaselineConfig};
use crate::beamspace::{dft_unitary, power_sort, SortedPowerVector};
use crate::channel::{self, ChannelConfig, ComplexVector, IdealSparseSpec};
use crate::error::{Error, Result};
use crate::estimator::{self, EstimateResult, ThresholdSchedule, DEFAULT_ALPHA};
use crate::hwmodel::{self, FxEstimate, FxFlags, FxFormat, FxPipeline, SystolicSorter};
use crate::Complex64;

/// Ratios below this are clamped before converting to dB (−30 dB).
pub const DB_FLOOR: f64 = 1e-3;

/// Default sweep grid: −10..=30 dB in 2 dB steps.
pub fn default_snr_grid() -> Vec<f64> {
    (0..=20).map(|i| -10.0 + 2.0 * i as f64).collect()
}

pub fn to_db(ratio: f64) -> f64 {
    10.0 * ratio.max(DB_FLOOR).log10()
}

/// RNG for trial `trial` at parameter point `point`.
pub fn trial_rng(seed: u64, point: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((point as u64) << 32) | trial as u64);
    rng
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 16 {
        x.iter().sum()
    } else {
        let (a, b) = x.split_at(x.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        f64::NAN
    } else {
        pairwise_sum(x) / x.len() as f64
    }
}

/// Median with the midpoint convention for even lengths.
pub fn median(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn rmse(x: &[f64], truth: f64) -> f64 {
    let sq: Vec<f64> = x.iter().map(|v| (v - truth) * (v - truth)).collect();
    mean(&sq).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorId {
    ProposedDynamic,
    ProposedFixed,
    Oracle,
    Mad,
    MadRefined,
    TruncatedMean,
    FxPipeline,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 7] = [
        EstimatorId::ProposedDynamic,
        EstimatorId::ProposedFixed,
        EstimatorId::Oracle,
        EstimatorId::Mad,
        EstimatorId::MadRefined,
        EstimatorId::TruncatedMean,
        EstimatorId::FxPipeline,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorId::ProposedDynamic => "proposed_dynamic",
            EstimatorId::ProposedFixed => "proposed_fixed",
            EstimatorId::Oracle => "oracle",
            EstimatorId::Mad => "mad",
            EstimatorId::MadRefined => "mad_refined",
            EstimatorId::TruncatedMean => "truncated_mean",
            EstimatorId::FxPipeline => "fx_pipeline",
        }
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator {s:?}")))
    }
}

fn default_estimators() -> Vec<EstimatorId> {
    EstimatorId::ALL[..6].to_vec()
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_n0() -> f64 {
    1.0
}

fn default_decay() -> f64 {
    0.5
}

/// Sweep description. JSON config files use these field names verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(default = "default_snr_grid")]
    pub snr_grid: Vec<f64>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorId>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(rename = "M1", default, skip_serializing_if = "Option::is_none")]
    pub m1: Option<usize>,
    #[serde(rename = "M2", default, skip_serializing_if = "Option::is_none")]
    pub m2: Option<usize>,
    /// Constant γ for `proposed_fixed`; derived from `alpha` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_gamma: Option<f64>,
    #[serde(rename = "N0", default = "default_n0")]
    pub n0: f64,
    /// Per-path power decay of the synthetic channel.
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default)]
    pub baselines: BaselineConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            m: 64,
            l: 3,
            snr_grid: default_snr_grid(),
            trials: 10_000,
            seed: 0,
            estimators: default_estimators(),
            alpha: DEFAULT_ALPHA,
            m1: None,
            m2: None,
            fixed_gamma: None,
            n0: 1.0,
            decay: 0.5,
            baselines: BaselineConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn channel_config(&self) -> Result<ChannelConfig> {
        ChannelConfig::new(self.m, self.l)?.with_decay(self.decay)
    }

    pub fn dynamic_schedule(&self) -> Result<ThresholdSchedule> {
        let (d1, d2) = estimator::default_breakpoints(self.m)?;
        estimator::build_schedule(self.m, self.alpha, self.m1.unwrap_or(d1), self.m2.unwrap_or(d2))
    }

    pub fn fixed_schedule(&self) -> Result<ThresholdSchedule> {
        match self.fixed_gamma {
            Some(g) => ThresholdSchedule::constant(g),
            None => estimator::fixed_schedule(self.m, self.alpha),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.m < 4 || !self.m.is_power_of_two() {
            return bad(format!("M must be a power of two >= 4, got {}", self.m));
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.trials > u32::MAX as usize {
            return bad(format!("trials must fit in 32 bits, got {}", self.trials));
        }
        if self.snr_grid.is_empty() {
            return bad("snr_grid must not be empty".into());
        }
        if let Some(s) = self.snr_grid.iter().find(|s| !s.is_finite()) {
            return bad(format!("snr_grid entries must be finite, got {s}"));
        }
        if self.estimators.is_empty() {
            return bad("estimators must not be empty".into());
        }
        let mut seen = self.estimators.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.estimators.len() {
            return bad("estimators contains duplicates".into());
        }
        if !(self.n0.is_finite() && self.n0 > 0.0) {
            return bad(format!("N0 must be finite and > 0, got {}", self.n0));
        }
        if self.estimators.contains(&EstimatorId::FxPipeline) && self.m > hwmodel::ReciprocalLut::MAX_LEN {
            return bad(format!(
                "fx_pipeline supports M <= {}, got {}",
                hwmodel::ReciprocalLut::MAX_LEN,
                self.m
            ));
        }
        self.channel_config().map_err(|e| Error::Config(e.to_string()))?;
        self.dynamic_schedule().map_err(|e| Error::Config(e.to_string()))?;
        self.fixed_schedule().map_err(|e| Error::Config(e.to_string()))?;
        self.baselines.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// Execution knobs that do not change results.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Measure per-estimator wall time. Off by default so that output is
    /// reproducible byte for byte.
    pub timing: bool,
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::Config("thread count must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Aggregated statistics for one (SNR, estimator) pair. Statistics cover
/// the `trials − dropped` trials whose estimates are all finite. dB fields
/// clamp ratios at [`DB_FLOOR`]; `*_db` means and RMSEs are taken over
/// per-trial dB values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub snr_db: f64,
    pub estimator: EstimatorId,
    pub n0_mean: f64,
    pub n0_median: f64,
    pub n0_rmse: f64,
    pub n0_median_db: f64,
    pub n0_rmse_db: f64,
    pub px_mean: f64,
    pub px_median: f64,
    pub px_rmse: f64,
    pub snr_mean: f64,
    pub snr_median: f64,
    pub snr_rmse: f64,
    pub snr_mean_db: f64,
    pub snr_median_db: f64,
    pub snr_rmse_db: f64,
    pub trials: usize,
    pub dropped: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy)]
struct Triple {
    n0: f64,
    px: f64,
    rho: f64,
}

impl Triple {
    fn from_n0(sorted: &SortedPowerVector, n0: f64) -> Self {
        let px = estimator::estimate_signal_power(sorted.total(), n0, sorted.len());
        Self {
            n0,
            px,
            rho: estimator::estimate_snr(px, n0),
        }
    }

    fn from_result(r: &EstimateResult) -> Self {
        Self {
            n0: r.n0_hat,
            px: r.px_hat,
            rho: r.rho_hat,
        }
    }

    fn is_finite(&self) -> bool {
        self.n0.is_finite() && self.px.is_finite() && self.rho.is_finite()
    }
}

struct SweepContext<'a> {
    cfg: &'a SweepConfig,
    channel: ChannelConfig,
    dynamic: ThresholdSchedule,
    fixed: ThresholdSchedule,
    timing: bool,
}

/// One synthetic received vector: `y = scale(h, s) + n`.
pub struct Sample {
    pub x: ComplexVector,
    pub y: ComplexVector,
}

/// Draws channel, symbol, scaling and noise for one trial.
pub fn draw_sample<R: rand::Rng + ?Sized>(
    chan: &ChannelConfig,
    snr_db: f64,
    n0: f64,
    rng: &mut R,
) -> Result<Sample> {
    let h = channel::synth_channel(chan, rng)?;
    let s = channel::qpsk_symbol(rng);
    let x = channel::scale_to_snr(&h, s, 10f64.powf(snr_db / 10.0), n0)?;
    let y = channel::add_awgn(&x, n0, rng)?;
    Ok(Sample { x, y })
}

/// Number of beams whose noiseless power lies below `n0`: the boundary
/// handed to the oracle estimator on non-ideal channels. At least 1.
pub fn oracle_boundary(x: &ComplexVector, n0: f64) -> usize {
    dft_unitary(x).iter().filter(|z| z.norm_sqr() < n0).count().max(1)
}

type TrialOut = Option<Vec<(Triple, f64)>>;

fn run_trial(ctx: &SweepContext<'_>, point: usize, trial: usize) -> Result<TrialOut> {
    let cfg = ctx.cfg;
    let mut rng = trial_rng(cfg.seed, point, trial);
    let sample = match draw_sample(&ctx.channel, cfg.snr_grid[point], cfg.n0, &mut rng) {
        Ok(s) => s,
        Err(Error::DegenerateInput(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let start = Instant::now();
    let ybar = dft_unitary(&sample.y);
    let sorted = power_sort(&ybar);
    let shared_ms = elapsed_ms(ctx.timing, start);
    let mut out = Vec::with_capacity(cfg.estimators.len());
    for id in &cfg.estimators {
        let start = Instant::now();
        let t = match id {
            EstimatorId::ProposedDynamic => Triple::from_result(&estimator::estimate(&sorted, &ctx.dynamic)?),
            EstimatorId::ProposedFixed => Triple::from_result(&estimator::estimate(&sorted, &ctx.fixed)?),
            EstimatorId::Oracle => {
                let m0 = oracle_boundary(&sample.x, cfg.n0);
                Triple::from_n0(&sorted, estimator::oracle_noise_power(&sorted, m0)?)
            }
            EstimatorId::Mad => Triple::from_n0(&sorted, baselines::mad_noise_power(&ybar, &cfg.baselines)?),
            EstimatorId::MadRefined => {
                Triple::from_n0(&sorted, baselines::mad_refined_noise_power(&ybar, &cfg.baselines)?)
            }
            EstimatorId::TruncatedMean => {
                Triple::from_n0(&sorted, baselines::truncated_mean_noise_power(&sorted, &cfg.baselines)?)
            }
            EstimatorId::FxPipeline => {
                let fx = FxPipeline::new(cfg.m, ctx.dynamic)?.process(&sample.y)?;
                let mut t = Triple::from_result(&fx.to_estimate_result());
                if fx.n0.raw == 0 && fx.px.raw > 0 {
                    t.rho = f64::INFINITY;
                }
                t
            }
        };
        let own = if *id == EstimatorId::FxPipeline { 0.0 } else { shared_ms };
        out.push((t, own + elapsed_ms(ctx.timing, start)));
    }
    Ok(Some(out))
}

fn elapsed_ms(timing: bool, start: Instant) -> f64 {
    if timing {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    }
}

fn aggregate(cfg: &SweepConfig, point: usize, k: usize, id: EstimatorId, trials: &[TrialOut]) -> SweepRecord {
    let rho = 10f64.powf(cfg.snr_grid[point] / 10.0);
    let px_truth = rho * cfg.n0;
    let mut kept = Vec::with_capacity(trials.len());
    let mut ms = Vec::with_capacity(trials.len());
    let mut dropped = 0;
    for t in trials {
        match t {
            Some(v) => {
                ms.push(v[k].1);
                if v[k].0.is_finite() {
                    kept.push(v[k].0);
                } else {
                    dropped += 1;
                }
            }
            None => dropped += 1,
        }
    }
    let n0: Vec<f64> = kept.iter().map(|t| t.n0).collect();
    let n0_db: Vec<f64> = n0.iter().map(|v| to_db(v / cfg.n0)).collect();
    let px: Vec<f64> = kept.iter().map(|t| t.px).collect();
    let snr: Vec<f64> = kept.iter().map(|t| t.rho).collect();
    let snr_db: Vec<f64> = snr.iter().map(|&v| to_db(v)).collect();
    let truth_db = to_db(rho);
    SweepRecord {
        snr_db: cfg.snr_grid[point],
        estimator: id,
        n0_mean: mean(&n0),
        n0_median: median(&n0),
        n0_rmse: rmse(&n0, cfg.n0),
        n0_median_db: median(&n0_db),
        n0_rmse_db: rmse(&n0_db, 0.0),
        px_mean: mean(&px),
        px_median: median(&px),
        px_rmse: rmse(&px, px_truth),
        snr_mean: mean(&snr),
        snr_median: median(&snr),
        snr_rmse: rmse(&snr, rho),
        snr_mean_db: mean(&snr_db),
        snr_median_db: median(&snr_db),
        snr_rmse_db: rmse(&snr_db, truth_db),
        trials: trials.len(),
        dropped,
        wall_ms: pairwise_sum(&ms),
    }
}

/// Runs every enabled estimator on identical samples at each SNR point.
/// Records come out grouped by SNR point, estimators in config order.
pub fn run_sweep(cfg: &SweepConfig, opts: &RunOptions) -> Result<Vec<SweepRecord>> {
    cfg.validate()?;
    let ctx = SweepContext {
        cfg,
        channel: cfg.channel_config()?,
        dynamic: cfg.dynamic_schedule()?,
        fixed: cfg.fixed_schedule()?,
        timing: opts.timing,
    };
    with_pool(opts.threads, || {
        let mut records = Vec::with_capacity(cfg.snr_grid.len() * cfg.estimators.len());
        for point in 0..cfg.snr_grid.len() {
            let trials: Vec<TrialOut> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| run_trial(&ctx, point, t))
                .collect::<Result<_>>()?;
            for (k, id) in cfg.estimators.iter().enumerate() {
                records.push(aggregate(cfg, point, k, *id, &trials));
            }
        }
        Ok(records)
    })?
}

pub const CSV_HEADER: [&str; 12] = [
    "snr_db",
    "estimator",
    "n0_mean",
    "n0_median",
    "n0_rmse",
    "px_mean",
    "px_rmse",
    "snr_mean_db",
    "snr_rmse_db",
    "trials",
    "dropped",
    "wall_ms",
];

pub fn write_sweep_csv<W: Write>(records: &[SweepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.snr_db.to_string(),
            r.estimator.to_string(),
            r.n0_mean.to_string(),
            r.n0_median.to_string(),
            r.n0_rmse.to_string(),
            r.px_mean.to_string(),
            r.px_rmse.to_string(),
            r.snr_mean_db.to_string(),
            r.snr_rmse_db.to_string(),
            r.trials.to_string(),
            r.dropped.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Gap statistics at one index of the sorted noise powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub m: usize,
    pub mean: f64,
    pub expected_mean: f64,
    pub std_err: f64,
    pub variance: f64,
    pub expected_variance: f64,
    /// Whether this row falls in the checked range.
    pub checked: bool,
    pub mean_ok: bool,
    pub variance_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderStatReport {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N0")]
    pub n0: f64,
    pub trials: usize,
    pub rows: Vec<GapRow>,
    pub max_abs_corr: f64,
    pub corr_ok: bool,
    pub pass: bool,
}

/// Mean checked within this many standard errors.
pub const GAP_MEAN_SE: f64 = 5.0;
/// Relative variance tolerance.
pub const GAP_VAR_TOL: f64 = 0.10;
/// Bound on any pairwise gap correlation.
pub const GAP_CORR_TOL: f64 = 0.02;
pub const ORDERSTAT_MIN_TRIALS: usize = 10_000;
const BLOCK: usize = 1000;

/// Gap indices `m ≤ M − 4` are checked (all of them when `M < 8`); the top
/// few gaps are kept in the report for inspection.
pub fn gap_check_limit(m: usize) -> usize {
    if m < 8 {
        m - 1
    } else {
        m - 4
    }
}

struct GapAccum {
    sum: Vec<f64>,
    cross: Vec<f64>,
}

/// Draws pure-noise beamspace samples and compares the gaps of the sorted
/// powers against independent exponentials with rate `(M − m)/N0`.
pub fn run_orderstat_validation(m: usize, n0: f64, trials: usize, seed: u64) -> Result<OrderStatReport> {
    run_orderstat_validation_with(m, n0, trials, seed, &RunOptions::default())
}

pub fn run_orderstat_validation_with(
    m: usize,
    n0: f64,
    trials: usize,
    seed: u64,
    opts: &RunOptions,
) -> Result<OrderStatReport> {
    if m < 2 || !m.is_power_of_two() {
        return Err(Error::Config(format!("M must be a power of two >= 2, got {m}")));
    }
    if !(n0.is_finite() && n0 > 0.0) {
        return Err(Error::Config(format!("N0 must be finite and > 0, got {n0}")));
    }
    if trials < ORDERSTAT_MIN_TRIALS {
        return Err(Error::Config(format!(
            "order-statistics validation needs >= {ORDERSTAT_MIN_TRIALS} trials, got {trials}"
        )));
    }
    let g = m - 1;
    let blocks = trials.div_ceil(BLOCK);
    let parts: Vec<GapAccum> = with_pool(opts.threads, || {
        (0..blocks)
            .into_par_iter()
            .map(|b| -> Result<GapAccum> {
                let mut acc = GapAccum {
                    sum: vec![0.0; g],
                    cross: vec![0.0; g * g],
                };
                let lo = b * BLOCK;
                let hi = (lo + BLOCK).min(trials);
                let mut gaps = vec![0.0; g];
                for t in lo..hi {
                    let mut rng = trial_rng(seed, 0, t);
                    let y = channel::add_awgn(&ComplexVector::zeros(m), n0, &mut rng)?;
                    let sorted = power_sort(&dft_unitary(&y));
                    let p = sorted.values();
                    for i in 0..g {
                        gaps[i] = p[i + 1] - p[i];
                        acc.sum[i] += gaps[i];
                    }
                    for i in 0..g {
                        let row = &mut acc.cross[i * g..(i + 1) * g];
                        for j in i..g {
                            row[j] += gaps[i] * gaps[j];
                        }
                    }
                }
                Ok(acc)
            })
            .collect::<Result<_>>()
    })??;

    let n = trials as f64;
    let total = |f: &dyn Fn(&GapAccum) -> f64| -> f64 {
        let v: Vec<f64> = parts.iter().map(f).collect();
        pairwise_sum(&v)
    };
    let means: Vec<f64> = (0..g).map(|i| total(&|a| a.sum[i]) / n).collect();
    let cov = |i: usize, j: usize| -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        (total(&|a| a.cross[i * g + j]) - n * means[i] * means[j]) / (n - 1.0)
    };
    let vars: Vec<f64> = (0..g).map(|i| cov(i, i)).collect();

    let limit = gap_check_limit(m);
    let rows: Vec<GapRow> = (0..g)
        .map(|i| {
            let idx = i + 1;
            let expected_mean = n0 / (m - idx) as f64;
            let expected_variance = expected_mean * expected_mean;
            let std_err = (vars[i] / n).sqrt();
            let checked = idx <= limit;
            GapRow {
                m: idx,
                mean: means[i],
                expected_mean,
                std_err,
                variance: vars[i],
                expected_variance,
                checked,
                mean_ok: (means[i] - expected_mean).abs() <= GAP_MEAN_SE * std_err,
                variance_ok: (vars[i] / expected_variance - 1.0).abs() <= GAP_VAR_TOL,
            }
        })
        .collect();

    let mut max_abs_corr: f64 = 0.0;
    for i in 0..g {
        for j in i + 1..g {
            let r = cov(i, j) / (vars[i] * vars[j]).sqrt();
            max_abs_corr = max_abs_corr.max(r.abs());
        }
    }
    let corr_ok = max_abs_corr <= GAP_CORR_TOL;
    let pass = corr_ok && rows.iter().filter(|r| r.checked).all(|r| r.mean_ok && r.variance_ok);
    Ok(OrderStatReport {
        m,
        n0,
        trials,
        rows,
        max_abs_corr,
        corr_ok,
        pass,
    })
}

pub fn write_orderstat_csv<W: Write>(report: &OrderStatReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &report.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Oracle-estimator suite on ideally sparse vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    #[serde(rename = "M")]
    pub m: usize,
    pub k: usize,
    #[serde(rename = "N0")]
    pub n0: f64,
    pub accepted: usize,
    /// Trials where some noise power reached the smallest signal power.
    pub discarded: usize,
    pub mean: f64,
    pub std_err: f64,
    pub variance: f64,
    pub expected_variance: f64,
}

/// Draws `k`-sparse beamspace vectors with per-entry power `signal_power`
/// plus `CN(0, n0)` noise until `accepted` trials satisfy perfect
/// separation, and applies the oracle estimator with boundary `M − k`.
pub fn run_oracle_validation(
    m: usize,
    k: usize,
    n0: f64,
    signal_power: f64,
    accepted: usize,
    seed: u64,
) -> Result<OracleReport> {
    if m < 2 || k >= m {
        return Err(Error::Config(format!("need 2 <= M and k < M, got M = {m}, k = {k}")));
    }
    if !(n0.is_finite() && n0 > 0.0) {
        return Err(Error::Config(format!("N0 must be finite and > 0, got {n0}")));
    }
    if accepted < 2 {
        return Err(Error::Config("need at least two accepted trials".into()));
    }
    let spec = IdealSparseSpec {
        m,
        k,
        power: signal_power,
    };
    // Draw in fixed-size rounds until enough trials are accepted; the
    // outcome only depends on the trial index, never on scheduling.
    let mut values: Vec<f64> = Vec::with_capacity(accepted);
    let mut discarded = 0;
    let mut next = 0usize;
    while values.len() < accepted {
        let want = accepted - values.len();
        let round = want + want / 8 + 16;
        let outs: Vec<Option<f64>> = (next..next + round)
            .into_par_iter()
            .map(|t| -> Result<Option<f64>> {
                let mut rng = trial_rng(seed, 0, t);
                let sparse = channel::ideal_sparse_signal(&spec, &mut rng)?;
                let noisy: ComplexVector = sparse
                    .signal
                    .iter()
                    .map(|&s| s + channel::complex_gaussian(&mut rng, n0))
                    .collect();
                let powers: Vec<f64> = noisy.iter().map(Complex64::norm_sqr).collect();
                let max_noise = sparse.noise_indices.iter().map(|&i| powers[i]).fold(f64::MIN, f64::max);
                let min_signal = sparse.signal_indices.iter().map(|&i| powers[i]).fold(f64::MAX, f64::min);
                if k > 0 && max_noise >= min_signal {
                    return Ok(None);
                }
                let sorted = SortedPowerVector::from_powers(powers)?;
                Ok(Some(estimator::oracle_noise_power(&sorted, m - k)?))
            })
            .collect::<Result<_>>()?;
        next += round;
        for o in outs {
            if values.len() == accepted {
                break;
            }
            match o {
                Some(v) => values.push(v),
                None => discarded += 1,
            }
        }
    }
    let mu = mean(&values);
    let dev: Vec<f64> = values.iter().map(|v| (v - mu) * (v - mu)).collect();
    let variance = pairwise_sum(&dev) / (values.len() - 1) as f64;
    Ok(OracleReport {
        m,
        k,
        n0,
        accepted,
        discarded,
        mean: mu,
        std_err: (variance / accepted as f64).sqrt(),
        variance,
        expected_variance: n0 * n0 / (m - k) as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    /// `re,im` per line.
    #[default]
    Text,
    /// Little-endian f64, interleaved re/im.
    Binary,
}

impl SampleFormat {
    /// `.bin` selects binary, anything else text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => SampleFormat::Binary,
            _ => SampleFormat::Text,
        }
    }
}

impl FromStr for SampleFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(SampleFormat::Text),
            "binary" => Ok(SampleFormat::Binary),
            _ => Err(Error::Config(format!("unknown sample format {s:?}"))),
        }
    }
}

/// Whether a sample file holds antenna-domain `y` or beamspace `ȳ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleDomain {
    #[default]
    Antenna,
    Beamspace,
}

impl FromStr for SampleDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "antenna" => Ok(SampleDomain::Antenna),
            "beamspace" => Ok(SampleDomain::Beamspace),
            _ => Err(Error::Config(format!("unknown sample domain {s:?}"))),
        }
    }
}

fn parse_field(field: &str, line: usize, column: usize) -> Result<f64> {
    let t = field.trim();
    let v: f64 = t.parse().map_err(|_| Error::Parse {
        line,
        column,
        msg: format!("expected a decimal number, found {t:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            column,
            msg: format!("value {t:?} is not finite"),
        });
    }
    Ok(v)
}

/// Parses `re,im` lines. Blank lines are skipped; line and column numbers
/// are 1-based.
pub fn parse_text_samples(text: &str) -> Result<ComplexVector> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 2 {
            let column = if fields.len() < 2 { raw.len() + 1 } else { fields[0].len() + fields[1].len() + 2 };
            return Err(Error::Parse {
                line,
                column,
                msg: format!("expected 2 comma-separated fields, found {}", fields.len()),
            });
        }
        let lead = |f: &str| f.len() - f.trim_start().len();
        let re = parse_field(fields[0], line, 1 + lead(fields[0]))?;
        let im = parse_field(fields[1], line, fields[0].len() + 2 + lead(fields[1]))?;
        out.push(Complex64::new(re, im));
    }
    Ok(ComplexVector::new(out))
}

pub fn parse_binary_samples(bytes: &[u8]) -> Result<ComplexVector> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::Parse {
            line: 1,
            column: bytes.len() - bytes.len() % 16 + 1,
            msg: format!("binary input must hold re/im f64 pairs, got {} bytes", bytes.len()),
        });
    }
    bytes
        .chunks_exact(16)
        .enumerate()
        .map(|(i, c)| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            if re.is_finite() && im.is_finite() {
                Ok(Complex64::new(re, im))
            } else {
                Err(Error::Parse {
                    line: 1,
                    column: 16 * i + 1,
                    msg: format!("element {} is not finite", i + 1),
                })
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(ComplexVector::new)
}

pub fn read_samples(path: &Path, format: SampleFormat) -> Result<ComplexVector> {
    let y = match format {
        SampleFormat::Text => parse_text_samples(&fs::read_to_string(path)?)?,
        SampleFormat::Binary => parse_binary_samples(&fs::read(path)?)?,
    };
    if y.len() < 2 || !y.len().is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "sample length M must be a power of two >= 2, got {}",
            y.len()
        )));
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOptions {
    /// `None` derives the dynamic default for the input length.
    pub schedule: Option<ThresholdSchedule>,
    pub format: Option<SampleFormat>,
    pub domain: SampleDomain,
    pub fx: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            schedule: None,
            format: None,
            domain: SampleDomain::Antenna,
            fx: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEstimate {
    #[serde(rename = "M")]
    pub m: usize,
    pub schedule: ThresholdSchedule,
    #[serde(rename = "float")]
    pub float_result: EstimateResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fx: Option<FxEstimate>,
}

/// Estimates on one sample vector.
pub fn estimate_vector(y: &ComplexVector, opts: &EstimateOptions) -> Result<FileEstimate> {
    let m = y.len();
    let schedule = match opts.schedule {
        Some(s) => s,
        None => estimator::default_schedule(m)?,
    };
    let float_result = match opts.domain {
        SampleDomain::Antenna => estimator::estimate_sample(y, &schedule)?,
        SampleDomain::Beamspace => {
            let powers = y.iter().map(Complex64::norm_sqr).collect();
            estimator::estimate(&SortedPowerVector::from_powers(powers)?, &schedule)?
        }
    };
    let fx = if opts.fx {
        if opts.domain != SampleDomain::Antenna {
            return Err(Error::InvalidArgument("the fixed-point pipeline needs antenna-domain input".into()));
        }
        Some(hwmodel::fx_pipeline_estimate(y, &schedule)?)
    } else {
        None
    };
    Ok(FileEstimate {
        m,
        schedule,
        float_result,
        fx,
    })
}

/// Reads `input`, estimates, and writes the JSON result to `output` (or
/// returns it only, when `output` is `None`). Nothing is written on error.
pub fn estimate_file(input: &Path, opts: &EstimateOptions, output: Option<&Path>) -> Result<FileEstimate> {
    let format = opts.format.unwrap_or_else(|| SampleFormat::from_path(input));
    let y = read_samples(input, format)?;
    let result = estimate_vector(&y, opts)?;
    if let Some(path) = output {
        let mut text = serde_json::to_string_pretty(&result)?;
        text.push('\n');
        fs::write(path, text)?;
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FxCompareConfig {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub snr_grid: Vec<f64>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "N0", default = "default_n0")]
    pub n0: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
}

impl Default for FxCompareConfig {
    fn default() -> Self {
        Self {
            m: 64,
            l: 3,
            snr_grid: vec![-10.0, 0.0, 10.0, 20.0, 30.0],
            trials: 10_000,
            seed: 0,
            n0: 1.0,
            decay: 0.5,
        }
    }
}

/// Agreement tolerances between the fixed-point and float paths.
pub const FX_N0_TOL: f64 = 1.0 / 16.0;
pub const FX_RHO_ABS_TOL: f64 = 1.0 / 8.0;
pub const FX_RHO_REL_TOL: f64 = 0.05;

pub fn rho_within(fx: f64, float: f64) -> bool {
    if float.is_infinite() {
        return fx >= FxFormat::SNR.max_raw() as f64 * FxFormat::SNR.lsb();
    }
    (fx - float).abs() <= FX_RHO_ABS_TOL.max(FX_RHO_REL_TOL * float.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FxCompareRow {
    pub snr_db: f64,
    pub trials: usize,
    /// Trials where the systolic sorter output equals a reference sort.
    pub sort_exact: usize,
    pub n0_within: usize,
    pub rho_within: usize,
    pub m_star_agree: usize,
    /// Trials with at least one saturation or overflow.
    pub flagged: usize,
    pub input_saturations: u64,
    pub beamspace_saturations: u64,
    pub power_saturations: u64,
    pub accumulator_overflows: u64,
    pub output_saturations: u64,
}

impl FxCompareRow {
    pub fn n0_fraction(&self) -> f64 {
        self.n0_within as f64 / self.trials as f64
    }

    pub fn rho_fraction(&self) -> f64 {
        self.rho_within as f64 / self.trials as f64
    }
}

struct FxTrial {
    sort_exact: bool,
    n0_ok: bool,
    rho_ok: bool,
    m_star_agree: bool,
    flags: FxFlags,
}

/// Runs the float estimator and the fixed-point pipeline on the same
/// synthetic samples, both with the default dynamic schedule.
pub fn run_fx_compare(cfg: &FxCompareConfig, opts: &RunOptions) -> Result<Vec<FxCompareRow>> {
    if cfg.trials == 0 || cfg.snr_grid.is_empty() {
        return Err(Error::Config("need trials >= 1 and a non-empty snr_grid".into()));
    }
    if cfg.m < 4 || cfg.m > hwmodel::ReciprocalLut::MAX_LEN || !cfg.m.is_power_of_two() {
        return Err(Error::Config(format!(
            "M must be a power of two in [4, {}], got {}",
            hwmodel::ReciprocalLut::MAX_LEN,
            cfg.m
        )));
    }
    let chan = ChannelConfig::new(cfg.m, cfg.l)
        .and_then(|c| c.with_decay(cfg.decay))
        .map_err(|e| Error::Config(e.to_string()))?;
    let schedule = estimator::default_schedule(cfg.m)?;
    with_pool(opts.threads, || {
        cfg.snr_grid
            .iter()
            .enumerate()
            .map(|(point, &snr_db)| {
                let trials: Vec<FxTrial> = (0..cfg.trials)
                    .into_par_iter()
                    .map(|t| -> Result<FxTrial> {
                        let mut rng = trial_rng(cfg.seed, point, t);
                        let sample = draw_sample(&chan, snr_db, cfg.n0, &mut rng)?;
                        let float = estimator::estimate_sample(&sample.y, &schedule)?;

                        let mut scratch = FxFlags::default();
                        let q = hwmodel::quantize_antenna(&sample.y, &mut scratch.input_saturations);
                        let raw: Vec<i64> = hwmodel::fx_front_end(&q, &mut scratch)?.iter().map(|p| p.raw).collect();
                        let mut reference = raw.clone();
                        reference.sort_unstable();
                        let sort_exact = SystolicSorter::new(cfg.m).sort(&raw)? == reference;

                        let fx = FxPipeline::new(cfg.m, schedule)?.process(&sample.y)?;
                        let fx_rho = if fx.n0.raw == 0 && fx.px.raw > 0 { f64::INFINITY } else { fx.rho.to_f64() };
                        let rho_ok = if fx_rho.is_infinite() {
                            float.rho_hat.is_infinite()
                        } else {
                            rho_within(fx_rho, float.rho_hat)
                        };
                        Ok(FxTrial {
                            sort_exact,
                            n0_ok: (fx.n0.to_f64() - float.n0_hat).abs() <= FX_N0_TOL,
                            rho_ok,
                            m_star_agree: fx.m_star == float.boundary.m_star,
                            flags: fx.flags,
                        })
                    })
                    .collect::<Result<_>>()?;
                let count = |f: &dyn Fn(&FxTrial) -> bool| trials.iter().filter(|t| f(t)).count();
                let sum = |f: &dyn Fn(&FxFlags) -> u32| trials.iter().map(|t| u64::from(f(&t.flags))).sum();
                Ok(FxCompareRow {
                    snr_db,
                    trials: cfg.trials,
                    sort_exact: count(&|t| t.sort_exact),
                    n0_within: count(&|t| t.n0_ok),
                    rho_within: count(&|t| t.rho_ok),
                    m_star_agree: count(&|t| t.m_star_agree),
                    flagged: count(&|t| t.flags.any()),
                    input_saturations: sum(&|f| f.input_saturations),
                    beamspace_saturations: sum(&|f| f.beamspace_saturations),
                    power_saturations: sum(&|f| f.power_saturations),
                    accumulator_overflows: sum(&|f| f.accumulator_overflows),
                    output_saturations: sum(&|f| f.output_saturations),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?
}

pub fn write_fx_compare_csv<W: Write>(rows: &[FxCompareRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Schedule summary for the `schedule` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    #[serde(rename = "M")]
    pub m: usize,
    pub alpha: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    #[serde(rename = "M1")]
    pub m1: usize,
    #[serde(rename = "M2")]
    pub m2: usize,
    pub shifts: [i32; 3],
    pub fixed_gamma: f64,
}

pub fn schedule_report(m: usize, alpha: f64, m1: Option<usize>, m2: Option<usize>) -> Result<ScheduleReport> {
    let (d1, d2) = estimator::default_breakpoints(m)?;
    let s = estimator::build_schedule(m, alpha, m1.unwrap_or(d1), m2.unwrap_or(d2))?;
    let fixed = estimator::fixed_schedule(m, alpha)?;
    Ok(ScheduleReport {
        m,
        alpha,
        gamma1: s.gamma1,
        gamma2: s.gamma2,
        gamma3: s.gamma3,
        m1: s.m1,
        m2: s.m2,
        shifts: s.shifts(),
        fixed_gamma: fixed.gamma1,
    })
}
