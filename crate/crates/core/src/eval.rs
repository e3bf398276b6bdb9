//! Confusion matrices, precision/recall/F-score and stratified k-fold CV.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureRow;
use crate::lom::MatchLabel;
use crate::par;

pub const REPORT_FORMAT: &str = "lomatch-metrics";
pub const REPORT_FORMAT_VERSION: u32 = 1;

impl AsRef<str> for MatchLabel {
    fn as_ref(&self) -> &str {
        self.as_str()
    }
}

/// Counts indexed by (gold, predicted) over a sorted label alphabet.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    positive: String,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new<I, S>(labels: I, positive: &str) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        set.insert(positive.to_string());
        let labels: Vec<String> = set.into_iter().collect();
        let n = labels.len();
        Self {
            labels,
            positive: positive.to_string(),
            counts: vec![vec![0; n]; n],
        }
    }

    /// Binary MATCH / NON_MATCH matrix with MATCH as the positive class.
    pub fn binary() -> Self {
        Self::new(
            MatchLabel::ALL.iter().map(|l| l.as_str()),
            MatchLabel::Match.as_str(),
        )
    }

    fn index(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn add(&mut self, gold: &str, predicted: &str) -> Result<()> {
        let (Some(g), Some(p)) = (self.index(gold), self.index(predicted)) else {
            return Err(Error::InvalidParameter(format!(
                "label outside alphabet: {gold} / {predicted}"
            )));
        };
        self.counts[g][p] += 1;
        Ok(())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn positive(&self) -> &str {
        &self.positive
    }

    pub fn count(&self, gold: &str, predicted: &str) -> u64 {
        match (self.index(gold), self.index(predicted)) {
            (Some(g), Some(p)) => self.counts[g][p],
            _ => 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// (TP, FP, FN) treating `label` as positive.
    pub fn one_vs_rest(&self, label: &str) -> (u64, u64, u64) {
        let Some(c) = self.index(label) else {
            return (0, 0, 0);
        };
        let tp = self.counts[c][c];
        let predicted: u64 = self.counts.iter().map(|row| row[c]).sum();
        let gold: u64 = self.counts[c].iter().sum();
        (tp, predicted - tp, gold - tp)
    }

    pub fn tp(&self) -> u64 {
        self.one_vs_rest(&self.positive).0
    }

    pub fn fp(&self) -> u64 {
        self.one_vs_rest(&self.positive).1
    }

    pub fn fn_(&self) -> u64 {
        self.one_vs_rest(&self.positive).2
    }

    pub fn tn(&self) -> u64 {
        self.total() - self.tp() - self.fp() - self.fn_()
    }

    /// Adds another matrix's counts; alphabets and positive class must agree.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.labels != other.labels || self.positive != other.positive {
            return Err(Error::InvalidParameter(
                "cannot merge confusion matrices over different alphabets".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }
}

/// Builds a confusion matrix over the union of observed labels.
pub fn confusion_matrix<L: AsRef<str>>(
    gold: &[L],
    predicted: &[L],
    positive: &str,
) -> Result<ConfusionMatrix> {
    if gold.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: gold.len(),
            right: predicted.len(),
        });
    }
    let alphabet = gold.iter().chain(predicted).map(|l| l.as_ref().to_string());
    let mut cm = ConfusionMatrix::new(alphabet, positive);
    for (g, p) in gold.iter().zip(predicted) {
        cm.add(g.as_ref(), p.as_ref())?;
    }
    Ok(cm)
}

pub fn confusion_matrix_binary(
    gold: &[MatchLabel],
    predicted: &[MatchLabel],
) -> Result<ConfusionMatrix> {
    if gold.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: gold.len(),
            right: predicted.len(),
        });
    }
    let mut cm = ConfusionMatrix::binary();
    for (g, p) in gold.iter().zip(predicted) {
        cm.add(g.as_str(), p.as_str())?;
    }
    Ok(cm)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub support: u64,
    /// Names of metrics whose denominator was zero (reported as 0).
    pub undefined: Vec<String>,
}

impl ClassMetrics {
    fn from_counts(label: &str, tp: u64, fp: u64, fn_: u64) -> Self {
        let mut undefined = Vec::new();
        let ratio = |num: u64, den: u64, name: &str, undefined: &mut Vec<String>| {
            if den == 0 {
                undefined.push(name.to_string());
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp, "precision", &mut undefined);
        let recall = ratio(tp, tp + fn_, "recall", &mut undefined);
        if precision + recall == 0.0 {
            undefined.push("f_score".into());
        }
        Self {
            label: label.into(),
            precision,
            recall,
            f_score: f_score(precision, recall),
            support: tp + fn_,
            undefined,
        }
    }

    pub fn is_flagged(&self) -> bool {
        !self.undefined.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub size: usize,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format: String,
    pub format_version: u32,
    pub positive: ClassMetrics,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f_score: f64,
    pub confusion: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<FoldMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_mean_f_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn prf_metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let per_class: Vec<ClassMetrics> = cm
        .labels()
        .iter()
        .map(|l| {
            let (tp, fp, fn_) = cm.one_vs_rest(l);
            ClassMetrics::from_counts(l, tp, fp, fn_)
        })
        .collect();
    let n = per_class.len().max(1) as f64;
    let positive = per_class
        .iter()
        .find(|c| c.label == cm.positive())
        .cloned()
        .expect("positive label in alphabet");
    MetricsReport {
        format: REPORT_FORMAT.into(),
        format_version: REPORT_FORMAT_VERSION,
        macro_precision: per_class.iter().map(|c| c.precision).sum::<f64>() / n,
        macro_recall: per_class.iter().map(|c| c.recall).sum::<f64>() / n,
        macro_f_score: per_class.iter().map(|c| c.f_score).sum::<f64>() / n,
        positive,
        per_class,
        confusion: cm.clone(),
        folds: Vec::new(),
        fold_mean_f_score: None,
        seed: None,
        config: None,
    }
}

/// Recomputes F from reported precision and recall and checks it against a
/// reported F rounded to `decimals` places.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FConsistency {
    pub precision: f64,
    pub recall: f64,
    pub reported_f: f64,
    pub computed_f: f64,
    pub consistent: bool,
}

pub fn check_reported_f(
    precision: f64,
    recall: f64,
    reported_f: f64,
    decimals: i32,
) -> FConsistency {
    let computed_f = f_score(precision, recall);
    let scale = 10f64.powi(decimals);
    let rounded = (computed_f * scale).round() / scale;
    FConsistency {
        precision,
        recall,
        reported_f,
        computed_f,
        consistent: (rounded - reported_f).abs() < 0.5 / scale * 1e-6,
    }
}

/// Something that can be trained on labeled rows and label unseen rows.
pub trait PairClassifier: Sync {
    fn fit_predict(&self, train: &[FeatureRow], test: &[FeatureRow]) -> Result<Vec<MatchLabel>>;
}

/// Stratified fold index for every record. Each class is shuffled with the
/// seed and dealt round-robin, continuing the deal across classes.
pub fn stratified_folds(labels: &[MatchLabel], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 folds, got {k}"
        )));
    }
    if labels.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} records for {k} folds",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![usize::MAX; labels.len()];
    let mut dealt = 0;
    for class in MatchLabel::ALL {
        let mut idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == class)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            return Err(Error::TooFewClasses {
                needed: 2,
                found: 1,
            });
        }
        if idx.len() < k {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} records; every one of {k} folds needs one",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for i in idx {
            fold[i] = dealt % k;
            dealt += 1;
        }
    }
    Ok(fold)
}

/// Stratified k-fold cross-validation. Every fold is the test set once; the
/// headline metrics come from the pooled confusion matrix and the per-fold
/// table is attached.
pub fn kfold_cv<C: PairClassifier + ?Sized>(
    rows: &[FeatureRow],
    k: usize,
    seed: u64,
    classifier: &C,
) -> Result<MetricsReport> {
    let labels: Vec<MatchLabel> = rows
        .iter()
        .map(|r| {
            r.pair.label.ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unlabeled pair {},{}",
                    r.pair.source_id, r.pair.target_id
                ))
            })
        })
        .collect::<Result<_>>()?;
    let fold_of = stratified_folds(&labels, k, seed)?;

    let per_fold: Vec<Result<ConfusionMatrix>> = par::map_range(k, |f| {
        let train: Vec<FeatureRow> = rows
            .iter()
            .zip(&fold_of)
            .filter(|(_, &g)| g != f)
            .map(|(r, _)| r.clone())
            .collect();
        let (test, gold): (Vec<FeatureRow>, Vec<MatchLabel>) = rows
            .iter()
            .zip(&fold_of)
            .zip(&labels)
            .filter(|((_, &g), _)| g == f)
            .map(|((r, _), l)| {
                let mut stripped = r.clone();
                stripped.pair.label = None;
                (stripped, *l)
            })
            .unzip();
        let predicted = classifier.fit_predict(&train, &test)?;
        confusion_matrix_binary(&gold, &predicted)
    });

    let mut pooled = ConfusionMatrix::binary();
    let mut folds = Vec::with_capacity(k);
    for (f, cm) in per_fold.into_iter().enumerate() {
        let cm = cm?;
        pooled.merge(&cm)?;
        let m = ClassMetrics::from_counts(MatchLabel::Match.as_str(), cm.tp(), cm.fp(), cm.fn_());
        folds.push(FoldMetrics {
            fold: f,
            size: cm.total() as usize,
            tp: cm.tp(),
            fp: cm.fp(),
            fn_: cm.fn_(),
            tn: cm.tn(),
            precision: m.precision,
            recall: m.recall,
            f_score: m.f_score,
        });
    }
    let mut report = prf_metrics(&pooled);
    report.fold_mean_f_score = Some(folds.iter().map(|f| f.f_score).sum::<f64>() / k as f64);
    report.folds = folds;
    report.seed = Some(seed);
    Ok(report)
}
