//! `qualperf` command line: synthesize data, train, predict, evaluate and
//! fit quality debias transforms.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qualperf::ErrorKind;

#[derive(Debug, Parser)]
#[command(name = "qualperf", version, about = "Quality-conditioned biometric performance prediction")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labelled dataset.
    Synth(SynthArgs),
    /// Train one model per target FMR.
    Train(TrainArgs),
    /// Predict performance for a file of quality vectors.
    Predict(PredictArgs),
    /// Compare predictions with ground truth and emit ROC / ERC files.
    Evaluate(EvaluateArgs),
    /// Fit or apply a quality debias transform.
    #[command(subcommand)]
    Debias(DebiasCommand),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON generator config; defaults are used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labelled dataset (score, label, pool, q1..qd).
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for the manifest, models and training matrices.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub nqs: usize,
    #[arg(long, default_value_t = 20)]
    pub nrand: usize,
    #[arg(long, default_value_t = 1)]
    pub kmin: usize,
    #[arg(long, default_value_t = 25)]
    pub kmax: usize,
    /// Comma-separated covariance parametrizations.
    #[arg(long, default_value = "EII,VII,EEI,VVI,EEE,VVV")]
    pub params: String,
    /// Comma-separated target false match rates.
    #[arg(long, default_value = "0.0001,0.0003,0.001,0.003,0.01,0.03,0.1,0.3")]
    pub fmr_targets: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub prior_a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub prior_b: f64,
    #[arg(long, default_value_t = qualperf::perf::DEFAULT_MIN_MATCH)]
    pub min_match: usize,
    #[arg(long, default_value_t = qualperf::perf::DEFAULT_MIN_NONMATCH)]
    pub min_nonmatch: usize,
    #[arg(long, default_value = "grid", value_parser = ["grid", "cluster"])]
    pub mode: String,
    /// EM restarts per fit.
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    /// Debias transform applied to `[q, gamma]` before training; stored in every model.
    #[arg(long)]
    pub debias: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model file or training manifest.
    #[arg(long)]
    pub model: PathBuf,
    /// Selects a model from a manifest holding several.
    #[arg(long)]
    pub fmr_target: Option<f64>,
    /// File with q1..qd columns; other columns are passed through.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-12)]
    pub density_floor: f64,
    /// Monte-Carlo draws per interval; 0 disables intervals.
    #[arg(long, default_value_t = 10_000)]
    pub n_mc: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model file or training manifest.
    #[arg(long)]
    pub model: PathBuf,
    /// Labelled dataset with pool ids.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub prior_a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub prior_b: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub density_floor: f64,
    /// Random orders averaged for the constant-prediction ERC.
    #[arg(long, default_value_t = 50)]
    pub n_perm: usize,
    /// Records between ERC points; defaults to every record up to 10^4.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Also write SVG plots derived from the emitted CSV files.
    #[arg(long)]
    pub plots: bool,
}

#[derive(Debug, Subcommand)]
pub enum DebiasCommand {
    /// Fit from a file with q1..qd and gamma1..gammad (degrees).
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Comma-separated angle scales; defaults to 1/10,1/18 in two dimensions.
        #[arg(long)]
        scales: Option<String>,
    },
    /// Replace q1..qd by the transformed quality.
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

/// Bad command-line input detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<qualperf::Error>() {
            return match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Debias(c) => commands::debias(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
