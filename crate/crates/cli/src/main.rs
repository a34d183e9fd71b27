//! `latvar`: batch analysis of latency traces from staged perception
//! pipelines. One verb per analysis; machine-readable CSV by default, with
//! `--format table` for humans.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
//! error (singular fit). Diagnostics go to stderr; data goes to stdout or
//! `--output`.

mod render;

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use latvar_core::deadline::{self, DeadlinePolicy, PolicyKind};
use latvar_core::fusion::{self, FusionScenario};
use latvar_core::predictor::{
    self, CalibrationMode, EvalOptions, ModelKind, PredictInput, DEFAULT_DECAY,
};
use latvar_core::stats;
use latvar_core::synth::{self, GeneratorSpec};
use latvar_core::trace::{self, Column, TraceSet};
use latvar_core::transport::{self, Mechanism, TransportParams, TransportScenario};

#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Table,
}

#[derive(Parser, Debug)]
#[command(
    name = "latvar",
    version,
    about = "Latency-variation analysis for staged perception pipelines"
)]
struct Cli {
    /// Write the data stream to this file instead of stdout
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Output format
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// RNG seed; required by sim-transport, sim-fusion, and synth
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Variation summary (mean, range, cv, percentiles) of a trace column
    Stats {
        trace: PathBuf,
        #[arg(long, default_value = "end_to_end")]
        column: String,
        /// Quantiles in (0,1), comma-separated
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.8, 0.99])]
        quantiles: Vec<f64>,
    },
    /// Pearson correlation between two trace columns
    Corr {
        trace: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
    },
    /// Empirical CDF points of a trace column
    Cdf {
        trace: PathBuf,
        #[arg(long, default_value = "end_to_end")]
        column: String,
    },
    /// Fit a latency model on a trace and persist it
    Fit {
        trace: PathBuf,
        #[arg(long)]
        kind: String,
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Predict end-to-end latency from a persisted model
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Intermediate count (proposals or lane pixels per the model kind)
        #[arg(long)]
        count: u64,
        /// Override the calibration factor
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Evaluate a model against a trace
    Eval {
        trace: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// off | per-frame | ewma:<decay>
        #[arg(long)]
        calibration: String,
        /// Apply the calibration factor in the inverted direction
        #[arg(long)]
        lambda_inverted: bool,
    },
    /// Deadline-policy consequences over a trace
    Deadline {
        trace: PathBuf,
        /// worst | mean | q:<q> | fixed:<ms>; repeatable
        #[arg(long, required = true)]
        policy: Vec<String>,
        /// Cut jobs off at the deadline
        #[arg(long)]
        terminate: bool,
    },
    /// Simulate 1-to-N transport latency
    SimTransport(SimTransportArgs),
    /// Simulate an approximate-time synchronizer
    SimFusion {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a synthetic trace from a generator spec
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct SimTransportArgs {
    /// ipc | dds
    #[arg(long)]
    mechanism: String,
    #[arg(long)]
    bytes: u64,
    #[arg(long)]
    subs: u32,
    #[arg(long)]
    trials: u32,
    /// Parameter file in key=value format (defaults to built-in calibration)
    #[arg(long)]
    params: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(core) = cause.downcast_ref::<latvar_core::Error>() {
            if matches!(core, latvar_core::Error::SingularFit(_)) {
                return 3;
            }
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    let format = cli.format;
    let output = cli.output.clone();
    let rendered = match cli.command {
        Command::Stats {
            trace,
            column,
            quantiles,
        } => {
            let set = load_trace(&trace)?;
            let series = column_series(&set, &column)?;
            let summary = stats::summarize(&series, &quantiles)?;
            render::summary(&summary, format)
        }
        Command::Corr { trace, x, y } => {
            let set = load_trace(&trace)?;
            let xs = column_series(&set, &x)?;
            let ys = column_series(&set, &y)?;
            let r = stats::pearson(&xs, &ys)?;
            render::pearson(r, format)
        }
        Command::Cdf { trace, column } => {
            let set = load_trace(&trace)?;
            let series = column_series(&set, &column)?;
            render::cdf(&stats::cdf_points(&series)?)
        }
        Command::Fit {
            trace,
            kind,
            model_out,
        } => {
            let kind = ModelKind::from_str(&kind).map_err(usage)?;
            let set = load_trace(&trace)?;
            let model = predictor::fit(&set, kind, DEFAULT_DECAY)?;
            predictor::save_model(&model, &model_out)?;
            String::new()
        }
        Command::Predict {
            model,
            count,
            lambda,
        } => {
            let mut fitted = predictor::load_model(&model)?;
            if let Some(lambda) = lambda {
                fitted = fitted.with_lambda(lambda)?;
            }
            let input = match fitted.kind() {
                ModelKind::ObjectDetection => PredictInput::Proposals(count),
                ModelKind::LaneDetection => PredictInput::LanePixels(count),
            };
            render::predicted(fitted.predict(input)?, format)
        }
        Command::Eval {
            trace,
            model,
            calibration,
            lambda_inverted,
        } => {
            let options = EvalOptions {
                mode: parse_calibration(&calibration)?,
                invert_lambda: lambda_inverted,
            };
            let set = load_trace(&trace)?;
            let fitted = predictor::load_model(&model)?;
            let report = predictor::evaluate(&fitted, &set, options)?;
            render::eval_report(&report, format)
        }
        Command::Deadline {
            trace,
            policy,
            terminate,
        } => {
            let policies: Vec<DeadlinePolicy> = policy
                .iter()
                .map(|raw| parse_policy(raw, terminate))
                .collect::<Result<_>>()?;
            let set = load_trace(&trace)?;
            let reports = deadline::compare(&policies, &set.end_to_end_series())?;
            render::deadline_reports(&reports, format)
        }
        Command::SimTransport(args) => {
            let seed = require_seed(cli.seed, "sim-transport")?;
            let params = match &args.params {
                Some(path) => TransportParams::from_file(path)?,
                None => TransportParams::default(),
            };
            let scenario = TransportScenario {
                mechanism: Mechanism::from_str(&args.mechanism).map_err(usage)?,
                message_bytes: args.bytes,
                n_subscribers: args.subs,
                trials: args.trials,
                seed,
            };
            let trials = transport::simulate_transport(&scenario, &params)?;
            render::transport(&trials)
        }
        Command::SimFusion { config } => {
            let seed = require_seed(cli.seed, "sim-fusion")?;
            let scenario = FusionScenario::from_file(&config, seed)?;
            let result = fusion::simulate_fusion(&scenario.config, &scenario.streams)?;
            render::fusion(&result)
        }
        Command::Synth { spec, out } => {
            let seed = require_seed(cli.seed, "synth")?;
            let spec = GeneratorSpec::from_file(&spec, seed)?;
            let generated = synth::generate(&spec)?;
            if generated.clamped_samples > 0 {
                eprintln!(
                    "note: clamped {} negative samples to 0",
                    generated.clamped_samples
                );
            }
            trace::emit_trace(&generated.trace, &out)?;
            String::new()
        }
    };

    if rendered.is_empty() {
        return Ok(());
    }
    match output {
        Some(path) => fs::write(&path, rendered)
            .with_context(|| format!("writing output to {}", path.display()))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(rendered.as_bytes())
                .context("writing to stdout")?;
        }
    }
    Ok(())
}

fn load_trace(path: &std::path::Path) -> Result<TraceSet> {
    trace::ingest_trace(path).with_context(|| format!("reading trace {}", path.display()))
}

/// Misspelled flag values are usage errors, not data errors.
fn usage(err: latvar_core::Error) -> anyhow::Error {
    UsageError(err.to_string()).into()
}

fn column_series(set: &TraceSet, name: &str) -> Result<Vec<f64>> {
    let column = Column::from_str(name).map_err(usage)?;
    Ok(set.column(column))
}

fn require_seed(seed: Option<u64>, subcommand: &str) -> Result<u64> {
    seed.ok_or_else(|| UsageError(format!("`{subcommand}` requires --seed")).into())
}

fn parse_calibration(raw: &str) -> Result<CalibrationMode> {
    match raw {
        "off" => Ok(CalibrationMode::Off),
        "per-frame" => Ok(CalibrationMode::PerFrame),
        other => match other.strip_prefix("ewma:") {
            Some(decay) => {
                let decay: f64 = decay
                    .parse()
                    .map_err(|_| UsageError(format!("invalid ewma decay `{decay}`")))?;
                Ok(CalibrationMode::Ewma { decay })
            }
            None => Err(UsageError(format!(
                "unknown calibration `{other}` (expected off, per-frame, or ewma:<decay>)"
            ))
            .into()),
        },
    }
}

fn parse_policy(raw: &str, terminate: bool) -> Result<DeadlinePolicy> {
    let kind = match raw {
        "worst" => PolicyKind::WorstObserved,
        "mean" => PolicyKind::Mean,
        other => {
            if let Some(q) = other.strip_prefix("q:") {
                let q: f64 = q
                    .parse()
                    .map_err(|_| UsageError(format!("invalid quantile `{q}`")))?;
                PolicyKind::Quantile(q)
            } else if let Some(ms) = other.strip_prefix("fixed:") {
                let ms: f64 = ms
                    .parse()
                    .map_err(|_| UsageError(format!("invalid deadline `{ms}`")))?;
                PolicyKind::Fixed(ms)
            } else {
                return Err(UsageError(format!(
                    "unknown policy `{other}` (expected worst, mean, q:<q>, or fixed:<ms>)"
                ))
                .into());
            }
        }
    };
    Ok(DeadlinePolicy::new(kind, terminate)?)
}
