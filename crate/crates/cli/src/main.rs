//! `vtlkws`: manifest building, feature extraction, training, evaluation
//! and significance testing for VTL-warped keyword spotting.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vtlkws_core::dataset::ValidationPolicy;
use vtlkws_core::inference::{EvalMethod, FusionMode};
use vtlkws_core::model::Architecture;
use vtlkws_core::train::Method;

pub const VERSION: &str = env!("VTLKWS_VERSION");

/// Exit status for a config file that fails to parse or validate.
const EXIT_SCHEMA: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "vtlkws", version = VERSION, about = "Keyword spotting with vocal-tract-length warped MFCC features")]
pub struct Cli {
    /// JSON config file (schema_version 1); omitted sections take defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    /// Feature cache directory; overrides the config file.
    #[arg(long, global = true, env = "VTLKWS_CACHE", value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a train/eval split manifest from a corpus directory.
    FetchManifest(FetchManifestArgs),
    /// Write a small synthetic keyword corpus (for smoke tests).
    SynthCorpus(SynthCorpusArgs),
    /// Populate the feature cache for every warp factor.
    Extract(ExtractArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Score a split with a trained model.
    Eval(EvalArgs),
    /// Accuracy of a VTL-independent model at each warp factor alone.
    SweepAlpha(SweepArgs),
    /// Two-sample t-test between two sets of per-seed accuracies.
    Ttest(TtestArgs),
    /// Collect evaluations, sweeps and multi-seed runs into report files.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Corpus root with one directory per keyword.
    #[arg(long, value_name = "DIR")]
    pub root: Option<PathBuf>,
    /// Split manifest; defaults to the corpus's own testing/validation lists.
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Skip unreadable WAV files instead of failing.
    #[arg(long)]
    pub skip_bad: bool,
}

#[derive(Args, Debug)]
pub struct FetchManifestArgs {
    #[arg(long, value_name = "DIR")]
    pub root: Option<PathBuf>,
    #[arg(long, default_value = "manifest.json", value_name = "PATH")]
    pub out: PathBuf,
    /// What to do with files on the official validation list.
    #[arg(long, value_enum)]
    pub validation: Option<ValidationArg>,
    /// Ignore the official lists and hash ids into an eval split of this size.
    #[arg(long, value_name = "FRACTION")]
    pub hash_eval_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SynthCorpusArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 20)]
    pub per_class: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed_data: Option<u64>,
    #[arg(long)]
    pub seed_init: Option<u64>,
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    /// Channel plan, e.g. `16,24,32,48`.
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
    /// Read features from the cache instead of extracting them on the fly.
    #[arg(long)]
    pub from_cache: bool,
    /// Directory of noise WAVs (default: `<root>/_background_noise_`).
    #[arg(long, value_name = "DIR")]
    pub noise_dir: Option<PathBuf>,
    /// Disable all augmentation.
    #[arg(long)]
    pub no_augment: bool,
    /// Skip per-epoch evaluation.
    #[arg(long)]
    pub no_eval: bool,
    /// Run directory (default: `<runs_dir>/<method>-s<seed_init>`).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub method: EvalMethodArg,
    #[arg(long, value_name = "CKPT")]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalSplitArg::Eval)]
    pub split: EvalSplitArg,
    /// Output directory for scores.csv, eval.json and sweep.csv.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub fusion: Option<FusionArg>,
    /// Score even if the checkpoint was trained for another method.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub from_cache: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "CKPT")]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalSplitArg::Eval)]
    pub split: EvalSplitArg,
    #[arg(long, default_value = "sweep.csv", value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub from_cache: bool,
}

#[derive(Args, Debug)]
pub struct TtestArgs {
    /// Per-seed accuracies of the first method.
    #[arg(long, value_name = "CSV")]
    pub runs_a: PathBuf,
    #[arg(long, value_name = "CSV")]
    pub runs_b: PathBuf,
    /// Significance level.
    #[arg(long)]
    pub level: Option<f64>,
    /// Welch's unequal-variance test instead of the pooled test.
    #[arg(long)]
    pub welch: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// `eval.json` files from `vtlkws eval`.
    #[arg(long = "eval", value_name = "JSON")]
    pub evals: Vec<PathBuf>,
    /// `sweep.csv` files.
    #[arg(long = "sweep", value_name = "CSV")]
    pub sweeps: Vec<PathBuf>,
    /// Multi-seed accuracies as `method=path.csv`.
    #[arg(long = "runs", value_name = "METHOD=CSV")]
    pub runs: Vec<String>,
    /// Method every other `--runs` entry is compared against.
    #[arg(long, default_value = "baseline")]
    pub baseline: String,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub welch: bool,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodArg {
    #[value(alias = "vtl_independent")]
    VtlIndependent,
    Baseline,
    Concat,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::VtlIndependent => Method::VtlIndependent,
            MethodArg::Baseline => Method::Baseline,
            MethodArg::Concat => Method::Concat,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMethodArg {
    /// Mean posterior over all warp factors.
    #[value(alias = "vtl_independent")]
    VtlIndependent,
    /// VTL-independent model scored at alpha = 1.00 only.
    #[value(name = "vtl-independent-alpha1", alias = "vtl_independent_alpha1")]
    VtlIndependentAlpha1,
    Baseline,
    Concat,
}

impl From<EvalMethodArg> for EvalMethod {
    fn from(m: EvalMethodArg) -> Self {
        match m {
            EvalMethodArg::VtlIndependent => EvalMethod::VtlIndependent,
            EvalMethodArg::VtlIndependentAlpha1 => EvalMethod::VtlIndependentAlpha1,
            EvalMethodArg::Baseline => EvalMethod::Baseline,
            EvalMethodArg::Concat => EvalMethod::Concat,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchArg {
    #[value(name = "tc-resnet8", alias = "tc_resnet8")]
    TcResnet8,
    #[value(name = "bc-block-net", alias = "bc_block_net")]
    BcBlockNet,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::TcResnet8 => Architecture::TcResnet8,
            ArchArg::BcBlockNet => Architecture::BcBlockNet,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionArg {
    Posterior,
    Logit,
}

impl From<FusionArg> for FusionMode {
    fn from(f: FusionArg) -> Self {
        match f {
            FusionArg::Posterior => FusionMode::Posterior,
            FusionArg::Logit => FusionMode::Logit,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationArg {
    Exclude,
    Train,
}

impl From<ValidationArg> for ValidationPolicy {
    fn from(v: ValidationArg) -> Self {
        match v {
            ValidationArg::Exclude => ValidationPolicy::Exclude,
            ValidationArg::Train => ValidationPolicy::Train,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Eval,
    All,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplitArg {
    Train,
    Eval,
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        (false, _) => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp_secs()
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    init_logging(&cli);
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<commands::ConfigFileError>()) {
                ExitCode::from(EXIT_SCHEMA)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
