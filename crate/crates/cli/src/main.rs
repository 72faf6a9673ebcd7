mod commands;
mod exit;
mod system;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Working-set-size estimation from page-fault telemetry.
#[derive(Parser, Debug)]
#[command(name = "wsse", version, about)]
pub struct Cli {
    /// Seed for every random choice; commands default to 0 or the workload file's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Directory that relative output paths are resolved against.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Attach the page-fault probe and log flushed records (Linux, privileged).
    Collect(CollectArgs),
    /// Ground-truth WSS by the referenced-flag method (Linux).
    Wss(WssArgs),
    /// Emit a labeled dataset from a workload spec.
    Simulate(SimulateArgs),
    /// Events and labels, or a raw dataset, into scaled train/valid/test splits.
    Preprocess(PreprocessArgs),
    /// Train a model and print train/valid RMSE.
    Train(TrainArgs),
    /// Estimate WSS in pages from an event log or feature CSV.
    Predict(PredictArgs),
    /// RMSE of a model on a labeled CSV, with a per-row residual report.
    Evaluate(EvaluateArgs),
    /// Random hyperparameter search.
    Sweep(SweepArgs),
    /// Referenced-flag scan cost against model inference cost.
    BenchOverhead(BenchArgs),
    #[command(hide = true)]
    Workload(WorkloadArgs),
}

#[derive(Args, Debug)]
pub struct CollectArgs {
    /// Task name to trace; empty traces every process.
    #[arg(long, default_value = "")]
    pub comm: String,
    #[arg(long, default_value_t = 100)]
    pub threshold: u64,
    /// Records with a smaller count are discarded.
    #[arg(long, default_value_t = 1)]
    pub min_value: u64,
    #[arg(long, default_value = "events.log")]
    pub out: PathBuf,
    /// Seconds to collect.
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    /// Compiled probe object; defaults to $WSSE_PROBE_OBJECT.
    #[arg(long)]
    pub object: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct WssArgs {
    #[arg(long)]
    pub pid: u32,
    #[arg(long, default_value_t = 1.0)]
    pub cadence: f64,
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    #[arg(long, default_value = "labels.log")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Workload spec in key=value form.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, default_value = "dataset.csv")]
    pub out: PathBuf,
    /// Also write the flushes as a collector event log.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Also write the labels as a ground-truth log.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SplitOpts {
    /// train,valid,test fractions.
    #[arg(long, default_value = "0.6,0.2,0.2")]
    pub ratios: String,
    /// Tukey fence multiplier for the outlier filter.
    #[arg(long, default_value_t = 3.0)]
    pub iqr_factor: f64,
    /// Largest fraction of rows the outlier filter may drop.
    #[arg(long, default_value_t = 0.10)]
    pub max_drop: f64,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Raw labeled dataset CSV, instead of --events/--labels.
    #[arg(long, conflicts_with_all = ["events", "labels"])]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "labels")]
    pub events: Option<PathBuf>,
    #[arg(long, requires = "events")]
    pub labels: Option<PathBuf>,
    /// Ground-truth cadence in seconds; labels join within half of it.
    #[arg(long, default_value_t = 1.0)]
    pub cadence: f64,
    #[command(flatten)]
    pub split: SplitOpts,
    /// Writes <prefix>.{train,valid,test}.csv with .meta sidecars, and <prefix>.scaler.
    #[arg(long, default_value = "prepared")]
    pub out_prefix: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Raw labeled dataset; filtered, split and scaled before training.
    #[arg(long, conflicts_with_all = ["train", "valid", "scaler"])]
    pub data: Option<PathBuf>,
    /// Scaled training split from `preprocess`.
    #[arg(long, requires_all = ["valid", "scaler"])]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub scaler: Option<PathBuf>,
    /// key=value hyperparameters over the defaults.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitOpts,
    #[arg(long, default_value = "model.txt")]
    pub model: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Collector event log.
    #[arg(long, conflicts_with = "data")]
    pub events: Option<PathBuf>,
    /// Raw feature CSV; labels, if any, are ignored.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "predictions.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// The CSV is already scaled; otherwise the model's scaler is applied.
    /// Detected from a `scaler_applied=true` sidecar when not given.
    #[arg(long)]
    pub normalized: bool,
    /// Per-row residual CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Raw labeled dataset.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    /// Search the optimal and suboptimal intervals together.
    #[arg(long)]
    pub wide: bool,
    #[command(flatten)]
    pub split: SplitOpts,
    #[arg(long, default_value = "trials.log")]
    pub log: PathBuf,
    #[arg(long, default_value = "best.params")]
    pub best: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 20)]
    pub rounds: u32,
    /// Size of the self-spawned sweep workload.
    #[arg(long, default_value_t = 256)]
    pub array_mib: u64,
    /// Settle time between clearing and reading the flags; counted in `ratio`, not in `scan_ratio`.
    #[arg(long, default_value_t = 0.1)]
    pub window: f64,
    /// Trained model; a small one is fitted on simulated data otherwise.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Simulate the referenced-flag half even where /proc supports it.
    #[arg(long)]
    pub simulate: bool,
}

#[derive(Args, Debug)]
pub struct WorkloadArgs {
    #[arg(long, default_value_t = 16)]
    pub mib: u64,
    #[arg(long, default_value = "sweep")]
    pub pattern: String,
    /// Seconds to run; 0 runs until killed.
    #[arg(long, default_value_t = 0.0)]
    pub duration: f64,
}

impl Cli {
    pub fn out_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    match commands::run(&cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::classify(&e))
        }
    }
}
