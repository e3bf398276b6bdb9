//! The `lomatch` command line: each subcommand reads plain line-oriented
//! artifacts and writes new ones into the output directory.

mod commands;
pub mod config;
pub mod failure;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::PipelineConfig;
pub use failure::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "lomatch",
    version,
    about = "Instance matching and recommendation for learning-object repositories"
)]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and normalize a record file.
    Ingest {
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Generate candidate pairs between two record files.
    Pairs(PairsArgs),
    /// Compute the feature matrix for a pair file.
    Features(FeaturesArgs),
    /// Run the semi-supervised matcher.
    Match(MatchArgs),
    /// Produce hybrid top-k recommendations.
    Recommend(RecommendArgs),
    /// Score a decisions file against gold labels, or cross-validate.
    Evaluate(EvaluateArgs),
    /// Write the seeded synthetic corpora.
    Synth,
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// `child,parent` resource-type hierarchy.
    #[arg(long)]
    pub type_hierarchy: Option<PathBuf>,
    /// Labeled pairs; every other candidate becomes NON_MATCH.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Keep this many NON_MATCH pairs per MATCH pair (needs a seed).
    #[arg(long)]
    pub negative_ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub type_hierarchy: Option<PathBuf>,
    /// Score two empty descriptions as identical.
    #[arg(long)]
    pub empty_descriptions_match: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RuleArg {
    MaxScore,
    LiteralMin,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CoefficientArg {
    Literal,
    StandardPdf,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Feature matrix whose labeled rows form D_l and unlabeled rows D_u.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, conflicts_with = "features")]
    pub labeled: Option<PathBuf>,
    #[arg(long, conflicts_with = "features")]
    pub unlabeled: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub decision_rule: Option<RuleArg>,
    #[arg(long, value_enum)]
    pub stage2_coefficient: Option<CoefficientArg>,
    #[arg(long)]
    pub stage8_threshold: Option<f64>,
    #[arg(long)]
    pub std_floor: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Enable the collective k-NN pass.
    #[arg(long)]
    pub collective: bool,
    #[arg(long)]
    pub collective_k: Option<usize>,
    #[arg(long)]
    pub collective_rounds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    /// Item records.
    #[arg(long)]
    pub items: Option<PathBuf>,
    /// Anchor records for item features; defaults to the items.
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    /// Users to serve; defaults to every user in the ratings.
    #[arg(long = "user")]
    pub users: Vec<String>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub k_neighbors: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ClassifierArg {
    Omm,
    NaiveBayes,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub decisions: Option<PathBuf>,
    /// Gold pair labels for the decisions.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Labeled feature matrix to cross-validate on (needs a seed).
    #[arg(long, conflicts_with = "decisions")]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_enum, default_value = "omm")]
    pub classifier: ClassifierArg,
}

/// Parses `argv` and runs the command, returning the process exit status.
/// Errors are reported on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    }
}

/// Runs a parsed command line.
pub fn execute(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    commands::dispatch(cli.command, cfg)
}
