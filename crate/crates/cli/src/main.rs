//! Command-line front end: synthetic dataset generation, feature-group
//! sequencing runs, approximation-bound verification, and evaluation of
//! stored results.
//!
//! Exit codes: 0 success, 1 runtime error, 2 configuration error,
//! 3 bound violation.

mod config;
mod pipeline;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use groupseq::dataset::DataError;
use groupseq::glm::GlmError;
use groupseq::grouplasso::LassoError;
use groupseq::metrics::MetricsError;
use groupseq::sequencer::SequenceError;
use groupseq::theory::TheoryError;
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    /// Exit 2: bad configuration or arguments.
    Config(String),
    /// Exit 1: anything that went wrong while running.
    Runtime(String),
    /// Exit 3: the approximation bound was violated.
    BoundViolation,
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
            CliError::BoundViolation => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
            CliError::BoundViolation => write!(f, "bound violation detected"),
        }
    }
}

impl From<SequenceError> for CliError {
    fn from(e: SequenceError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<GlmError> for CliError {
    fn from(e: GlmError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<LassoError> for CliError {
    fn from(e: LassoError) -> Self {
        match e {
            LassoError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<TheoryError> for CliError {
    fn from(e: TheoryError) -> Self {
        match e {
            TheoryError::TooManyGroups { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::SpecError(_) | DataError::InvalidConfig(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "groupseq",
    about = "Cost-sensitive feature-group sequencing for anytime linear prediction",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed for synthetic data.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Cap the worker thread pool.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (data CSV plus group-spec JSON).
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Where to write the data CSV (default: <output_dir>/data.csv).
        #[arg(long)]
        data_out: Option<PathBuf>,
        /// Where to write the group spec (default: <output_dir>/groups.json).
        #[arg(long)]
        spec_out: Option<PathBuf>,
    },
    /// Sequence feature groups; writes order.json, curves, and reports.
    Sequence {
        #[command(flatten)]
        common: CommonArgs,
        /// Sequencing method.
        #[arg(long)]
        method: Option<String>,
        /// Ridge regularization constant.
        #[arg(long)]
        lambda: Option<f64>,
        /// Stopping-cost fraction for the timeliness report.
        #[arg(long)]
        alpha: Option<f64>,
        /// Training data CSV.
        #[arg(long)]
        train_csv: Option<PathBuf>,
        /// Group spec JSON.
        #[arg(long)]
        group_spec: Option<PathBuf>,
        /// Held-out data CSV evaluated with the training transforms.
        #[arg(long)]
        test_csv: Option<PathBuf>,
        /// Center feature columns before whitening.
        #[arg(long)]
        center_features: bool,
    },
    /// Verify the greedy approximation bound by exhaustive enumeration.
    VerifyBound {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        train_csv: Option<PathBuf>,
        #[arg(long)]
        group_spec: Option<PathBuf>,
        /// Negative control: invert the selection rule. Expected to violate
        /// the bound and exit 3.
        #[arg(long)]
        corrupt_selection: bool,
    },
    /// Evaluate a stored order.json against a dataset.
    Evaluate {
        /// Path to an order.json produced by `sequence`.
        #[arg(long)]
        order: PathBuf,
        /// Data CSV to evaluate on.
        #[arg(long)]
        data: PathBuf,
        /// Group spec JSON for the data.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "out")]
        output_dir: PathBuf,
        /// Stopping-cost fraction.
        #[arg(long, default_value_t = 0.97)]
        alpha: f64,
        /// Training curve CSV defining the stopping cost and normalizer;
        /// defaults to the evaluated curve itself.
        #[arg(long)]
        reference_curve: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn merged_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if common.output_dir.is_some() {
        cfg.output_dir = common.output_dir.clone();
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    if let Some(n) = cfg.threads {
        let _ = groupseq::configure_threads(n);
    }
    Ok(cfg)
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth {
            common,
            data_out,
            spec_out,
        } => {
            let cfg = merged_config(&common)?;
            pipeline::cmd_synth(&cfg, data_out.as_deref(), spec_out.as_deref())
        }
        Command::Sequence {
            common,
            method,
            lambda,
            alpha,
            train_csv,
            group_spec,
            test_csv,
            center_features,
        } => {
            let mut cfg = merged_config(&common)?;
            if method.is_some() {
                cfg.method = method;
            }
            if lambda.is_some() {
                cfg.lambda = lambda;
            }
            if alpha.is_some() {
                cfg.alpha = alpha;
            }
            if train_csv.is_some() {
                cfg.train_csv = train_csv;
            }
            if group_spec.is_some() {
                cfg.group_spec = group_spec;
            }
            if test_csv.is_some() {
                cfg.test_csv = test_csv;
            }
            if center_features {
                cfg.center_features = true;
            }
            pipeline::cmd_sequence(&cfg)
        }
        Command::VerifyBound {
            common,
            lambda,
            train_csv,
            group_spec,
            corrupt_selection,
        } => {
            let mut cfg = merged_config(&common)?;
            if lambda.is_some() {
                cfg.lambda = lambda;
            }
            if train_csv.is_some() {
                cfg.train_csv = train_csv;
            }
            if group_spec.is_some() {
                cfg.group_spec = group_spec;
            }
            pipeline::cmd_verify_bound(&cfg, corrupt_selection)
        }
        Command::Evaluate {
            order,
            data,
            spec,
            output_dir,
            alpha,
            reference_curve,
            threads,
        } => {
            if let Some(n) = threads {
                let _ = groupseq::configure_threads(n);
            }
            if !(0.0..=1.0).contains(&alpha) {
                return Err(CliError::Config(format!(
                    "alpha must lie in [0, 1], got {alpha}"
                )));
            }
            pipeline::cmd_evaluate(&pipeline::EvaluateInputs {
                order,
                data,
                spec,
                output_dir,
                alpha,
                reference_curve,
            })
        }
    }
}

fn main() {
    match run() {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
