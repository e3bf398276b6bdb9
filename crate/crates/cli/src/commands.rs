use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use lomatch::bayes::NaiveBayesClassifier;
use lomatch::eval::{
    confusion_matrix_binary, kfold_cv, prf_metrics, MetricsReport, PairClassifier,
};
use lomatch::features::{extract_batch, read_feature_matrix, write_feature_matrix, FeatureRow};
use lomatch::lom::{
    apply_gold, generate_candidate_pairs, parse_repository, read_pair_labels, read_pairs,
    read_type_hierarchy, sample_negatives, write_pairs, write_repository, InstancePair,
    LearningObjectRecord, MatchLabel, Ontology, PairStrategy, RecordFormat,
};
use lomatch::matcher::{
    match_pipeline, read_decisions, write_decisions, DecisionRule, OmmClassifier, Stage2Coefficient,
};
use lomatch::recommender::{
    item_features_from_records, read_ratings, recommend_hybrid, write_ratings,
    write_recommendations, HybridConfig,
};
use lomatch::synth::{pair_corpus, ratings_corpus, record_corpus};
use serde::Serialize;

use crate::config::{input, optional_input, PipelineConfig};
use crate::failure::{Failure, InModule};
use crate::{
    ClassifierArg, CoefficientArg, Command, EvaluateArgs, FeaturesArgs, MatchArgs, PairsArgs,
    RecommendArgs, RuleArg,
};

pub const VALIDATION_FORMAT: &str = "lomatch-validation";

pub(crate) fn dispatch(command: Command, cfg: PipelineConfig) -> Result<(), Failure> {
    match command {
        Command::Ingest { records } => ingest(records, &cfg),
        Command::Pairs(a) => pairs(a, &cfg),
        Command::Features(a) => features(a, cfg),
        Command::Match(a) => run_match(a, cfg),
        Command::Recommend(a) => recommend(a, cfg),
        Command::Evaluate(a) => evaluate(a, cfg),
        Command::Synth => synth(&cfg),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::io(path, e))
}

/// Writes an artifact into the output directory via `f`.
fn artifact<F>(cfg: &PipelineConfig, name: &str, f: F) -> Result<PathBuf, Failure>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), Failure>,
{
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
    let path = dir.join(name);
    let mut buf = Vec::new();
    f(&mut buf)?;
    let file = File::create(&path).map_err(|e| Failure::io(&path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&buf)
        .and_then(|_| w.flush())
        .map_err(|e| Failure::io(&path, e))?;
    log::info!("wrote {}", path.display());
    Ok(path)
}

fn json_artifact<T: Serialize>(
    cfg: &PipelineConfig,
    name: &str,
    value: &T,
) -> Result<PathBuf, Failure> {
    artifact(cfg, name, |buf| {
        serde_json::to_writer_pretty(&mut *buf, value)
            .map_err(|e| Failure::Config(e.to_string()))?;
        buf.push(b'\n');
        Ok(())
    })
}

fn load_records(path: &Path) -> Result<Vec<LearningObjectRecord>, Failure> {
    parse_repository(open(path)?, RecordFormat::RecordsJsonl).in_module("lom-model")
}

fn load_ontology(
    name: &str,
    path: &Path,
    hierarchy: &BTreeMap<String, String>,
) -> Result<Ontology, Failure> {
    let recs = load_records(path)?;
    if recs.is_empty() {
        return Err(lomatch::Error::EmptyRepository(path.display().to_string()))
            .in_module("lom-model");
    }
    Ontology::from_records(name, recs, hierarchy.clone()).in_module("lom-model")
}

fn load_hierarchy(path: Option<PathBuf>) -> Result<BTreeMap<String, String>, Failure> {
    match path {
        Some(p) => read_type_hierarchy(open(&p)?).in_module("lom-model"),
        None => Ok(BTreeMap::new()),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "records".into(), |s| s.to_string_lossy().into_owned())
}

fn ingest(records: Option<PathBuf>, cfg: &PipelineConfig) -> Result<(), Failure> {
    let path = input(records, &cfg.paths.records, "records")?;
    let recs = load_records(&path)?;
    let name = format!("{}.normalized.jsonl", stem(&path));
    artifact(cfg, &name, |buf| {
        write_repository(&recs, buf).in_module("lom-model")
    })?;
    println!("{} records", recs.len());
    Ok(())
}

fn pairs(a: PairsArgs, cfg: &PipelineConfig) -> Result<(), Failure> {
    let source = input(a.source, &cfg.paths.source, "source")?;
    let target = input(a.target, &cfg.paths.target, "target")?;
    let hierarchy = load_hierarchy(optional_input(
        a.type_hierarchy,
        &cfg.paths.type_hierarchy,
        "type-hierarchy",
    )?)?;
    let gold = optional_input(a.gold, &cfg.paths.gold, "gold")?;
    let src = load_ontology("source", &source, &hierarchy)?;
    let tgt = load_ontology("target", &target, &hierarchy)?;
    let mut out =
        generate_candidate_pairs(&src, &tgt, PairStrategy::FullCross).in_module("lom-model")?;
    if let Some(g) = gold {
        let gold = read_pair_labels(open(&g)?).in_module("lom-model")?;
        apply_gold(&mut out, &gold, true);
    }
    if let Some(ratio) = a.negative_ratio {
        let seed = cfg.require_seed("negative sampling")?;
        out = sample_negatives(&out, ratio, seed).in_module("lom-model")?;
    }
    artifact(cfg, "pairs.csv", |buf| {
        write_pairs(&out, buf).in_module("lom-model")
    })?;
    println!("{} pairs", out.len());
    Ok(())
}

fn features(a: FeaturesArgs, mut cfg: PipelineConfig) -> Result<(), Failure> {
    let source = input(a.source, &cfg.paths.source, "source")?;
    let target = input(a.target, &cfg.paths.target, "target")?;
    let pairs_path = input(a.pairs, &cfg.paths.pairs, "pairs")?;
    let hierarchy = load_hierarchy(optional_input(
        a.type_hierarchy,
        &cfg.paths.type_hierarchy,
        "type-hierarchy",
    )?)?;
    if a.empty_descriptions_match {
        cfg.features.empty_descriptions_match = true;
    }
    let src = load_ontology("source", &source, &hierarchy)?;
    let tgt = load_ontology("target", &target, &hierarchy)?;
    let pairs = read_pairs(open(&pairs_path)?).in_module("lom-model")?;
    let rows = extract_batch(&pairs, &src, &tgt, cfg.features).in_module("similarity-features")?;
    artifact(&cfg, "features.csv", |buf| {
        write_feature_matrix(&rows, buf).in_module("similarity-features")
    })?;
    println!("{} feature rows", rows.len());
    Ok(())
}

fn load_features(path: &Path) -> Result<Vec<FeatureRow>, Failure> {
    read_feature_matrix(open(path)?).in_module("similarity-features")
}

fn apply_match_flags(a: &MatchArgs, cfg: &mut PipelineConfig) {
    let m = &mut cfg.matcher;
    if let Some(r) = a.decision_rule {
        m.decision_rule = match r {
            RuleArg::MaxScore => DecisionRule::MaxScore,
            RuleArg::LiteralMin => DecisionRule::LiteralMin,
        };
    }
    if let Some(c) = a.stage2_coefficient {
        m.stage2_coefficient = match c {
            CoefficientArg::Literal => Stage2Coefficient::Literal,
            CoefficientArg::StandardPdf => Stage2Coefficient::StandardPdf,
        };
    }
    if let Some(t) = a.stage8_threshold {
        m.stage8_threshold = t;
    }
    if let Some(f) = a.std_floor {
        m.std_floor = f;
    }
    if a.batch_size.is_some() {
        m.batch_size = a.batch_size;
    }
    if a.collective {
        m.collective.enabled = true;
    }
    if let Some(k) = a.collective_k {
        m.collective.k = k;
    }
    if let Some(r) = a.collective_rounds {
        m.collective.max_rounds = r;
    }
    if let Some(s) = cfg.seed {
        m.seed = s;
    }
}

#[derive(Serialize)]
struct ValidationArtifact<'a> {
    format: &'static str,
    format_version: u32,
    seed: Option<u64>,
    config: &'a lomatch::matcher::MatchConfig,
    labeled: usize,
    unlabeled: usize,
    mapping: BTreeMap<String, String>,
    mapping_error: u64,
    model: &'a lomatch::matcher::GaussianClusterModel,
    report: &'a lomatch::matcher::ValidationReport,
}

fn run_match(a: MatchArgs, mut cfg: PipelineConfig) -> Result<(), Failure> {
    apply_match_flags(&a, &mut cfg);
    let (labeled, unlabeled) = if a.labeled.is_some()
        || a.unlabeled.is_some()
        || cfg.paths.features.is_none() && a.features.is_none()
    {
        let l = load_features(&input(a.labeled, &cfg.paths.labeled, "labeled")?)?;
        let u = match optional_input(a.unlabeled, &cfg.paths.unlabeled, "unlabeled")? {
            Some(p) => load_features(&p)?,
            None => Vec::new(),
        };
        (l, u)
    } else {
        let rows = load_features(&input(a.features, &cfg.paths.features, "features")?)?;
        rows.into_iter().partition(|r| r.label().is_some())
    };
    let outcome = match_pipeline(&labeled, &unlabeled, &cfg.matcher).in_module("ssl-matcher")?;

    artifact(&cfg, "decisions.csv", |buf| {
        write_decisions(&outcome, buf).in_module("ssl-matcher")
    })?;
    let mapping = (0..outcome.model.clusters.len())
        .map(|j| {
            (
                outcome.model.clusters[j].label.clone(),
                outcome.label_of(j).as_str().to_string(),
            )
        })
        .collect();
    json_artifact(
        &cfg,
        "validation.json",
        &ValidationArtifact {
            format: VALIDATION_FORMAT,
            format_version: 1,
            seed: cfg.seed,
            config: &cfg.matcher,
            labeled: labeled.len(),
            unlabeled: unlabeled.len(),
            mapping,
            mapping_error: outcome.mapping.error,
            model: &outcome.model,
            report: &outcome.validation,
        },
    )?;
    let matches = outcome
        .decisions
        .iter()
        .filter(|d| d.match_label == MatchLabel::Match)
        .count();
    println!(
        "{} decisions, {matches} MATCH, {} reassigned",
        outcome.decisions.len(),
        outcome.validation.reassigned
    );
    Ok(())
}

fn recommend(a: RecommendArgs, cfg: PipelineConfig) -> Result<(), Failure> {
    let ratings_path = input(a.ratings, &cfg.paths.ratings, "ratings")?;
    let items_path = input(a.items, &cfg.paths.items, "items")?;
    let anchors_path = optional_input(a.anchors, &cfg.paths.anchors, "anchors")?;
    let hybrid = HybridConfig {
        k_neighbors: a.k_neighbors.unwrap_or(cfg.recommender.k_neighbors),
        alpha: a.alpha.unwrap_or(cfg.recommender.alpha),
        top_k: a.top_k.unwrap_or(cfg.recommender.top_k),
    };
    let ratings =
        read_ratings(open(&ratings_path)?, cfg.recommender.scale).in_module("recommender")?;
    let items = load_records(&items_path)?;
    let anchors = match &anchors_path {
        Some(p) => load_records(p)?,
        None => items.clone(),
    };
    let features = item_features_from_records(&items, &anchors, &BTreeMap::new(), cfg.features)
        .in_module("recommender")?;
    let users: Vec<String> = if a.users.is_empty() {
        ratings.users().map(String::from).collect()
    } else {
        a.users
    };
    let mut all = Vec::with_capacity(users.len());
    for u in users {
        let recs =
            recommend_hybrid(&ratings, &features, &u, &hybrid, None).in_module("recommender")?;
        all.push((u, recs));
    }
    artifact(&cfg, "recommendations.csv", |buf| {
        write_recommendations(&all, buf).in_module("recommender")
    })?;
    println!(
        "{} users, {} recommendations",
        all.len(),
        all.iter().map(|(_, r)| r.len()).sum::<usize>()
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs, cfg: PipelineConfig) -> Result<(), Failure> {
    let mut report =
        if a.decisions.is_some() || (a.features.is_none() && cfg.paths.decisions.is_some()) {
            let decisions = read_decisions(open(&input(
                a.decisions,
                &cfg.paths.decisions,
                "decisions",
            )?)?)
            .in_module("eval-harness")?;
            let gold = read_pair_labels(open(&input(a.gold, &cfg.paths.gold, "gold")?)?)
                .in_module("eval-harness")?;
            score_decisions(&decisions, &gold)?
        } else {
            let rows = load_features(&input(a.features, &cfg.paths.features, "features")?)?;
            let seed = cfg.require_seed("cross-validation")?;
            let folds = a.folds.unwrap_or(cfg.eval.folds);
            let classifier: Box<dyn PairClassifier> = match a.classifier {
                ClassifierArg::Omm => Box::new(OmmClassifier(lomatch::matcher::MatchConfig {
                    seed,
                    ..cfg.matcher.clone()
                })),
                ClassifierArg::NaiveBayes => Box::new(NaiveBayesClassifier::default()),
            };
            kfold_cv(&rows, folds, seed, classifier.as_ref()).in_module("eval-harness")?
        };
    report.seed = cfg.seed;
    report.config = Some(serde_json::to_value(&cfg).map_err(|e| Failure::Config(e.to_string()))?);
    json_artifact(&cfg, "metrics.json", &report)?;
    let p = &report.positive;
    println!(
        "PRE {:.4}  REC {:.4}  F {:.4}",
        p.precision, p.recall, p.f_score
    );
    Ok(())
}

fn score_decisions(
    decisions: &[InstancePair],
    gold: &[InstancePair],
) -> Result<MetricsReport, Failure> {
    let lookup: HashMap<(&str, &str), MatchLabel> = gold
        .iter()
        .filter_map(|g| g.label.map(|l| (g.key(), l)))
        .collect();
    let mut g = Vec::with_capacity(decisions.len());
    let mut p = Vec::with_capacity(decisions.len());
    for d in decisions {
        let label = lookup.get(&d.key()).ok_or_else(|| {
            Failure::Config(format!(
                "no gold label for pair {},{}",
                d.source_id, d.target_id
            ))
        })?;
        g.push(*label);
        p.push(d.label.expect("decisions carry labels"));
    }
    Ok(prf_metrics(
        &confusion_matrix_binary(&g, &p).in_module("eval-harness")?,
    ))
}

fn synth(cfg: &PipelineConfig) -> Result<(), Failure> {
    let seed = cfg.require_seed("synth")?;
    let s = &cfg.synth;
    let corpus = pair_corpus(&s.corpus, seed).in_module("synth")?;
    let gold: Vec<InstancePair> = corpus.unlabeled.iter().map(|r| r.pair.clone()).collect();
    let unlabeled: Vec<FeatureRow> = corpus
        .unlabeled
        .iter()
        .map(|r| FeatureRow {
            pair: InstancePair::new(&r.pair.source_id, &r.pair.target_id),
            features: r.features.clone(),
        })
        .collect();
    artifact(cfg, "labeled.csv", |b| {
        write_feature_matrix(&corpus.labeled, b).in_module("synth")
    })?;
    artifact(cfg, "unlabeled.csv", |b| {
        write_feature_matrix(&unlabeled, b).in_module("synth")
    })?;
    artifact(cfg, "gold.csv", |b| {
        write_pairs(&gold, b).in_module("synth")
    })?;
    artifact(cfg, "all_features.csv", |b| {
        write_feature_matrix(&corpus.all(), b).in_module("synth")
    })?;

    let (source, target, record_gold) = record_corpus(s.records, seed).in_module("synth")?;
    artifact(cfg, "source.jsonl", |b| {
        write_repository(&source, b).in_module("synth")
    })?;
    artifact(cfg, "target.jsonl", |b| {
        write_repository(&target, b).in_module("synth")
    })?;
    artifact(cfg, "record_gold.csv", |b| {
        write_pairs(&record_gold, b).in_module("synth")
    })?;

    let ratings =
        ratings_corpus(s.users, s.items.min(s.records), s.density, seed).in_module("synth")?;
    artifact(cfg, "ratings.csv", |b| {
        write_ratings(&ratings, b).in_module("synth")
    })?;
    println!(
        "{} labeled + {} unlabeled pairs, {} records per side, {} ratings",
        corpus.labeled.len(),
        corpus.unlabeled.len(),
        source.len(),
        ratings.len()
    );
    Ok(())
}
