//! The `iqa` command line: argument definitions, config merging, logging
//! setup and the mapping from errors to exit codes.

mod config;
mod data;
mod learn;
mod selftest;

pub use config::{provenance_path, resolve, PipelineConfig, Provenance};
pub use selftest::{run_checks, CheckResult};

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::distortion::PlanKind;
use crate::error::{Error, Result};
use crate::neuro::LossKind;
use crate::scorepipe::NormalizeMethod;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Environment variable supplying the default worker count.
pub const WORKERS_ENV: &str = "IQA_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "iqa", version, about = "Synthetic distortion, FR-IQA scoring, weakly supervised training and evaluation")]
pub struct Cli {
    /// JSON pipeline config; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Validate inputs and print the plan without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    /// Repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write procedurally generated reference images.
    SynthRefs(SynthRefsArgs),
    /// Generate a distortion plan and render it.
    Distort(DistortArgs),
    /// Score distorted images against their references.
    Score(ScoreArgs),
    /// Fit and apply per-metric score normalization.
    Normalize(NormalizeArgs),
    /// Build pooled feature stores.
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Train the multi-task head on metric scores.
    TrainMtl(TrainMtlArgs),
    /// Train the quality regressor on subjective labels.
    TrainRegressor(TrainRegressorArgs),
    /// Repeated split/train/test protocol, or evaluation of a saved model.
    Evaluate(EvaluateArgs),
    /// Rater reliability: DMOS, ICC and inter-group bootstrap.
    Reliability(ReliabilityArgs),
    /// Run built-in numerical checks; exits 0 only if all pass.
    Selftest(SelftestArgs),
}

#[derive(Debug, Subcommand)]
pub enum FeaturesCommand {
    /// Pool a directory of raw activation tensors (`*.f32` + `shapes.json`).
    Gap(FeaturesGapArgs),
    /// Filter-bank features computed from the distorted images of a manifest.
    Handcrafted(FeaturesHandcraftedArgs),
}

macro_rules! flag_struct {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* $field:ident : $ty:ty),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $($(#[$fmeta])* #[arg(long)] pub $field: Option<$ty>,)*
        }
    };
}

flag_struct!(SynthRefsArgs {
    /// Output directory.
    out: PathBuf,
    /// Number of references (default 10).
    count: usize,
    width: usize,
    height: usize,
    seed: u64,
});

flag_struct!(DistortArgs {
    /// Directory of reference images.
    refs: PathBuf,
    #[arg(value_enum)]
    plan: PlanKind,
    /// Output directory for images and `manifest.csv`.
    out: PathBuf,
    seed: u64,
    /// Keep existing output images.
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    skip_existing: bool,
    /// JSON distortion parameter table replacing the built-in one.
    params: PathBuf,
    /// Keep references at native size instead of resize-and-crop to 512x384.
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    native_size: bool,
});

flag_struct!(ScoreArgs {
    manifest: PathBuf,
    refs: PathBuf,
    /// Directory of distorted images (default: the manifest's directory).
    dist: PathBuf,
    out: PathBuf,
    /// Comma-separated built-in metrics (default PSNR,SSIM,MSSSIM,GMSD).
    #[arg(value_delimiter = ',')]
    metrics: Vec<String>,
    /// CSV of externally computed metric columns to join.
    external: PathBuf,
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    allow_partial: bool,
});

flag_struct!(NormalizeArgs {
    scores: PathBuf,
    out: PathBuf,
    #[arg(value_enum)]
    method: NormalizeMethod,
    bins: usize,
    /// Where to store the fitted transforms (default `<out>.transform.json`).
    transform: PathBuf,
    /// Fit on the training references only (needs the split seed).
    manifest: PathBuf,
    split_seed: u64,
    #[arg(value_delimiter = ',')]
    ratios: Vec<f64>,
    seed: u64,
});

flag_struct!(FeaturesGapArgs {
    activations: PathBuf,
    out: PathBuf,
});

flag_struct!(FeaturesHandcraftedArgs {
    manifest: PathBuf,
    dist: PathBuf,
    out: PathBuf,
});

flag_struct!(TrainMtlArgs {
    features: PathBuf,
    /// Score table whose columns become the tasks.
    scores: PathBuf,
    #[arg(value_delimiter = ',')]
    metrics: Vec<String>,
    manifest: PathBuf,
    split_seed: u64,
    #[arg(value_delimiter = ',')]
    ratios: Vec<f64>,
    out: PathBuf,
    history: PathBuf,
    /// JSON with held-out per-task correlations.
    report: PathBuf,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    #[arg(value_enum)]
    loss: LossKind,
    seed: u64,
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    dropout: bool,
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    standardize: bool,
    /// Try learning rates 1e-1..1e-5 and keep the best on validation.
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    lr_sweep: bool,
});

flag_struct!(TrainRegressorArgs {
    features: PathBuf,
    /// CSV with `image_id` and a label column (e.g. DMOS).
    labels: PathBuf,
    label_column: String,
    manifest: PathBuf,
    split_seed: u64,
    #[arg(value_delimiter = ',')]
    ratios: Vec<f64>,
    out: PathBuf,
    history: PathBuf,
    report: PathBuf,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    #[arg(value_enum)]
    loss: LossKind,
    seed: u64,
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    dropout: bool,
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    standardize: bool,
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    lr_sweep: bool,
});

flag_struct!(EvaluateArgs {
    features: PathBuf,
    labels: PathBuf,
    label_column: String,
    manifest: PathBuf,
    /// Evaluate this checkpoint on its test split instead of retraining.
    model: PathBuf,
    split_seed: u64,
    reps: usize,
    seed: u64,
    #[arg(value_delimiter = ',')]
    ratios: Vec<f64>,
    /// Report path; printed to stdout when absent.
    out: PathBuf,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    #[arg(value_enum)]
    loss: LossKind,
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    standardize: bool,
});

flag_struct!(ReliabilityArgs {
    /// CSV `image_id,rating`, one row per rating.
    ratings: PathBuf,
    out: PathBuf,
    /// Optional per-image DMOS CSV.
    dmos_out: PathBuf,
    resamples: usize,
    seed: u64,
});

flag_struct!(SelftestArgs { seed: u64 });

/// Settings shared by every subcommand.
pub(crate) struct Ctx {
    pub dry_run: bool,
    pub workers: usize,
    pub config: PipelineConfig,
}

impl Ctx {
    pub fn resolve<A: Serialize + serde::de::DeserializeOwned>(&self, flags: &A, section: &str) -> Result<A> {
        resolve(flags, self.config.section(section), section)
    }

    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.config.seed).unwrap_or(0)
    }

    /// Prints the resolved plan of a dry run to stdout.
    pub fn print_plan(&self, command: &str, config: &impl Serialize, inputs: &[&Path], outputs: &[PathBuf]) -> Result<()> {
        let plan = serde_json::json!({
            "command": command,
            "dry_run": true,
            "config": config,
            "inputs": inputs,
            "outputs": outputs,
        });
        println!("{}", serde_json::to_string_pretty(&plan)?);
        Ok(())
    }
}

pub(crate) fn require<T>(value: Option<T>, flag: &str, section: &str) -> Result<T> {
    value.ok_or_else(|| {
        Error::invalid(format!(
            "missing --{flag} (or \"{}\" in the \"{section}\" config section)",
            flag.replace('-', "_")
        ))
    })
}

pub(crate) fn require_input(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} {} does not exist", path.display())))
    }
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

pub(crate) fn ratios_or_default(ratios: Option<Vec<f64>>) -> Result<[f64; 3]> {
    match ratios {
        None => Ok([0.6, 0.2, 0.2]),
        Some(v) => <[f64; 3]>::try_from(v.as_slice())
            .map_err(|_| Error::invalid(format!("--ratios needs three values, got {}", v.len()))),
    }
}

fn init_logging(quiet: bool, verbose: u8) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let workers = cli
        .workers
        .or(config.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(Error::invalid("--workers must be at least 1"));
    }
    let ctx = Ctx {
        dry_run: cli.dry_run,
        workers,
        config,
    };
    match cli.command {
        Command::SynthRefs(a) => data::synth_refs(&ctx, a),
        Command::Distort(a) => data::distort(&ctx, a),
        Command::Score(a) => data::score(&ctx, a),
        Command::Normalize(a) => data::normalize(&ctx, a),
        Command::Features(FeaturesCommand::Gap(a)) => data::features_gap(&ctx, a),
        Command::Features(FeaturesCommand::Handcrafted(a)) => data::features_handcrafted(&ctx, a),
        Command::TrainMtl(a) => learn::train_mtl(&ctx, a),
        Command::TrainRegressor(a) => learn::train_regressor(&ctx, a),
        Command::Evaluate(a) => learn::evaluate(&ctx, a),
        Command::Reliability(a) => learn::reliability(&ctx, a),
        Command::Selftest(a) => selftest::selftest(&ctx, a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
        }
    };
    init_logging(cli.quiet, cli.verbose);
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_invocations() {
        let cli = Cli::try_parse_from(["iqa", "distort", "--refs", "r", "--plan", "kadid", "--out", "d", "--seed", "7"]).unwrap();
        match cli.command {
            Command::Distort(a) => {
                assert_eq!(a.plan, Some(PlanKind::Kadid));
                assert_eq!(a.seed, Some(7));
                assert_eq!(a.skip_existing, None);
            }
            other => panic!("{other:?}"),
        }
        let cli = Cli::try_parse_from([
            "iqa", "evaluate", "--features", "f.mlsp", "--labels", "dmos.csv", "--reps", "3", "--seed", "1",
        ])
        .unwrap();
        assert!(matches!(cli.command, Command::Evaluate(EvaluateArgs { reps: Some(3), .. })));
        let cli = Cli::try_parse_from(["iqa", "features", "gap", "--activations", "a", "--out", "s.mlsp"]).unwrap();
        assert!(matches!(cli.command, Command::Features(FeaturesCommand::Gap(_))));
        let cli = Cli::try_parse_from(["iqa", "--dry-run", "distort", "--skip-existing"]).unwrap();
        assert!(cli.dry_run);
        assert!(matches!(cli.command, Command::Distort(DistortArgs { skip_existing: Some(true), .. })));
    }

    #[test]
    fn bad_flags_are_validation_errors() {
        assert_eq!(main_with_args(["iqa", "distort", "--plan", "nope"]), EXIT_VALIDATION);
        assert_eq!(main_with_args(["iqa", "bogus"]), EXIT_VALIDATION);
        assert_eq!(main_with_args(["iqa", "--quiet", "distort", "--plan", "kadid"]), EXIT_VALIDATION);
    }

    #[test]
    fn ratios_parsing() {
        assert_eq!(ratios_or_default(None).unwrap(), [0.6, 0.2, 0.2]);
        assert!(ratios_or_default(Some(vec![0.5, 0.5])).is_err());
    }
}
