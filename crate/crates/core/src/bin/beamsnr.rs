use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use beamsnr::estimator::{self, ThresholdSchedule, DEFAULT_ALPHA};
use beamsnr::harness::{
    self, EstimateOptions, EstimatorId, FxCompareConfig, RunOptions, SampleDomain, SampleFormat, SweepConfig,
};
use beamsnr::hwmodel::FxPipeline;
use beamsnr::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "beamsnr", version, about = "Blind beamspace noise, signal power and SNR estimation")]
struct Cli {
    /// Master seed for all Monte-Carlo draws.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration file (sweep and fxcompare).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte-Carlo SNR sweep over the selected estimators.
    Sweep {
        #[arg(long = "m")]
        m: Option<usize>,
        #[arg(long = "l")]
        l: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        /// Comma-separated SNR grid in dB.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr: Option<Vec<f64>>,
        /// Comma-separated estimator ids.
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<String>>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        m1: Option<usize>,
        #[arg(long)]
        m2: Option<usize>,
        #[arg(long)]
        fixed_gamma: Option<f64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Fill the wall_ms column (makes output run-dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Gap statistics of sorted pure-noise beamspace powers.
    Orderstat {
        #[arg(long = "m", default_value_t = 64)]
        m: usize,
        #[arg(long, default_value_t = 1.0)]
        n0: f64,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Estimate from one sample file; writes JSON.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_sample_format)]
        input_format: Option<SampleFormat>,
        #[arg(long, value_parser = parse_domain, default_value = "antenna")]
        domain: SampleDomain,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        m1: Option<usize>,
        #[arg(long)]
        m2: Option<usize>,
        /// Constant threshold, overriding the schedule.
        #[arg(long)]
        gamma: Option<f64>,
        /// Also run the fixed-point pipeline.
        #[arg(long)]
        fx: bool,
        /// Write the fixed-point pipeline's step trace to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Fixed-point pipeline against the float estimator.
    Fxcompare {
        #[arg(long = "m")]
        m: Option<usize>,
        #[arg(long = "l")]
        l: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr: Option<Vec<f64>>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the threshold schedule for an array size.
    Schedule {
        #[arg(long = "m", default_value_t = 64)]
        m: usize,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        m1: Option<usize>,
        #[arg(long)]
        m2: Option<usize>,
    },
}

fn parse_sample_format(s: &str) -> std::result::Result<SampleFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_domain(s: &str) -> std::result::Result<SampleDomain, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn emit(out: &Option<PathBuf>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, bytes)?,
        None => io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sweep {
            m,
            l,
            trials,
            snr,
            estimators,
            alpha,
            m1,
            m2,
            fixed_gamma,
            threads,
            timing,
        } => {
            let mut cfg = match &cli.config {
                Some(path) => SweepConfig::load(path)?,
                None => SweepConfig::default(),
            };
            if let Some(v) = m {
                cfg.m = v;
            }
            if let Some(v) = l {
                cfg.l = v;
            }
            if let Some(v) = trials {
                cfg.trials = v;
            }
            if let Some(v) = snr {
                cfg.snr_grid = v;
            }
            if let Some(v) = estimators {
                cfg.estimators = v.iter().map(|s| s.parse()).collect::<Result<Vec<EstimatorId>>>()?;
            }
            if let Some(v) = alpha {
                cfg.alpha = v;
            }
            if m1.is_some() {
                cfg.m1 = m1;
            }
            if m2.is_some() {
                cfg.m2 = m2;
            }
            if fixed_gamma.is_some() {
                cfg.fixed_gamma = fixed_gamma;
            }
            if let Some(v) = cli.seed {
                cfg.seed = v;
            }
            let records = harness::run_sweep(&cfg, &RunOptions { threads, timing })?;
            let bytes = match cli.format {
                Format::Csv => {
                    let mut buf = Vec::new();
                    harness::write_sweep_csv(&records, &mut buf)?;
                    buf
                }
                Format::Json => json_bytes(&records)?,
            };
            emit(&cli.out, &bytes)
        }
        Command::Orderstat { m, n0, trials, threads } => {
            let report = harness::run_orderstat_validation_with(
                m,
                n0,
                trials,
                cli.seed.unwrap_or(0),
                &RunOptions { threads, timing: false },
            )?;
            eprintln!(
                "max |corr| = {:.4}, checked rows pass = {}, overall = {}",
                report.max_abs_corr,
                report.rows.iter().filter(|r| r.checked).all(|r| r.mean_ok && r.variance_ok),
                if report.pass { "PASS" } else { "FAIL" }
            );
            let bytes = match cli.format {
                Format::Csv => {
                    let mut buf = Vec::new();
                    harness::write_orderstat_csv(&report, &mut buf)?;
                    buf
                }
                Format::Json => json_bytes(&report)?,
            };
            emit(&cli.out, &bytes)
        }
        Command::Estimate {
            input,
            input_format,
            domain,
            alpha,
            m1,
            m2,
            gamma,
            fx,
            trace,
        } => {
            let format = input_format.unwrap_or_else(|| SampleFormat::from_path(&input));
            let y = harness::read_samples(&input, format)?;
            let schedule = match gamma {
                Some(g) => ThresholdSchedule::constant(g)?,
                None => {
                    let (d1, d2) = estimator::default_breakpoints(y.len())?;
                    estimator::build_schedule(
                        y.len(),
                        alpha.unwrap_or(DEFAULT_ALPHA),
                        m1.unwrap_or(d1),
                        m2.unwrap_or(d2),
                    )?
                }
            };
            let opts = EstimateOptions {
                schedule: Some(schedule),
                format: Some(format),
                domain,
                fx,
            };
            let result = harness::estimate_vector(&y, &opts)?;
            if let Some(path) = trace {
                let mut pipe = FxPipeline::new(y.len(), schedule)?;
                pipe.enable_trace();
                pipe.process(&y)?;
                let mut text = String::new();
                for ev in pipe.take_trace() {
                    text.push_str(&ev.to_string());
                    text.push('\n');
                }
                fs::write(path, text)?;
            }
            emit(&cli.out, &json_bytes(&result)?)
        }
        Command::Fxcompare {
            m,
            l,
            trials,
            snr,
            threads,
        } => {
            let mut cfg = match &cli.config {
                Some(path) => serde_json::from_str(&fs::read_to_string(path)?)
                    .map_err(|e| Error::Config(e.to_string()))?,
                None => FxCompareConfig::default(),
            };
            if let Some(v) = m {
                cfg.m = v;
            }
            if let Some(v) = l {
                cfg.l = v;
            }
            if let Some(v) = trials {
                cfg.trials = v;
            }
            if let Some(v) = snr {
                cfg.snr_grid = v;
            }
            if let Some(v) = cli.seed {
                cfg.seed = v;
            }
            let rows = harness::run_fx_compare(&cfg, &RunOptions { threads, timing: false })?;
            let bytes = match cli.format {
                Format::Csv => {
                    let mut buf = Vec::new();
                    harness::write_fx_compare_csv(&rows, &mut buf)?;
                    buf
                }
                Format::Json => json_bytes(&rows)?,
            };
            emit(&cli.out, &bytes)
        }
        Command::Schedule { m, alpha, m1, m2 } => {
            let report = harness::schedule_report(m, alpha, m1, m2)?;
            let bytes = match cli.format {
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(Vec::new());
                    w.write_record(["M", "alpha", "gamma1", "gamma2", "gamma3", "M1", "M2", "fixed_gamma"])?;
                    w.write_record([
                        report.m.to_string(),
                        report.alpha.to_string(),
                        report.gamma1.to_string(),
                        report.gamma2.to_string(),
                        report.gamma3.to_string(),
                        report.m1.to_string(),
                        report.m2.to_string(),
                        report.fixed_gamma.to_string(),
                    ])?;
                    w.into_inner().map_err(|e| Error::Io(e.into_error()))?
                }
                Format::Json => json_bytes(&report)?,
            };
            emit(&cli.out, &bytes)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
