use std::path::{Path, PathBuf};

use lomatch::features::FeatureOptions;
use lomatch::matcher::MatchConfig;
use lomatch::recommender::{HybridConfig, RatingScale};
use lomatch::synth::PairCorpusSpec;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Input files that may be named in the config instead of on the command line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub records: Option<PathBuf>,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub type_hierarchy: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labeled: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,
    pub decisions: Option<PathBuf>,
    pub ratings: Option<PathBuf>,
    pub items: Option<PathBuf>,
    pub anchors: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommenderSection {
    pub k_neighbors: usize,
    pub alpha: f64,
    pub top_k: usize,
    pub scale: RatingScale,
}

impl Default for RecommenderSection {
    fn default() -> Self {
        let h = HybridConfig::default();
        Self {
            k_neighbors: h.k_neighbors,
            alpha: h.alpha,
            top_k: h.top_k,
            scale: RatingScale::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub folds: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { folds: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub corpus: PairCorpusSpec,
    pub records: usize,
    pub users: usize,
    pub items: usize,
    pub density: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            corpus: PairCorpusSpec::default(),
            records: 20,
            users: 30,
            items: 20,
            density: 0.4,
        }
    }
}

/// Everything a run can be configured with. Values come from defaults, then
/// the TOML config file, then command-line flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub paths: Paths,
    pub features: FeatureOptions,
    pub matcher: MatchConfig,
    pub recommender: RecommenderSection,
    pub eval: EvalSection,
    pub synth: SynthSection,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }

    pub fn require_seed(&self, step: &str) -> Result<u64, Failure> {
        self.seed.ok_or_else(|| {
            Failure::Config(format!(
                "{step} is stochastic and needs --seed or `seed` in the config"
            ))
        })
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

/// Flag value if given, else the config value; the file must exist.
pub fn input(
    flag: Option<PathBuf>,
    configured: &Option<PathBuf>,
    what: &str,
) -> Result<PathBuf, Failure> {
    let path = flag.or_else(|| configured.clone()).ok_or_else(|| {
        Failure::Config(format!(
            "missing input: --{what} (or paths.{} in the config)",
            what.replace('-', "_")
        ))
    })?;
    if !path.is_file() {
        let e = std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{what} file not found"),
        );
        return Err(Failure::io(&path, e));
    }
    Ok(path)
}

pub fn optional_input(
    flag: Option<PathBuf>,
    configured: &Option<PathBuf>,
    what: &str,
) -> Result<Option<PathBuf>, Failure> {
    match flag.or_else(|| configured.clone()) {
        None => Ok(None),
        Some(p) => input(Some(p), &None, what).map(Some),
    }
}
