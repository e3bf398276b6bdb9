use serde::{Deserialize, Serialize};

use super::gaussian::{
    assign_from_log_scores, cluster_log_scores, init_cluster_stats_for, GaussianClusterModel,
};
use super::MatchConfig;
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::lom::MatchLabel;
use crate::par;

/// Agreement between retrained predictions and the original labels of D_l
/// for one batch of D_u.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchValidation {
    pub start: usize,
    pub len: usize,
    /// Rows are clusters, columns are classes, both in label order.
    pub counts: Vec<Vec<u64>>,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAgreement {
    pub label: String,
    pub rate: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub labels: Vec<String>,
    /// Sum of the per-batch cluster × class counts.
    pub counts: Vec<Vec<u64>>,
    /// Gold labels of D_l against retrained predictions, pooled over batches.
    pub confusion: ConfusionMatrix,
    pub agreement: Vec<ClassAgreement>,
    pub batches: Vec<BatchValidation>,
    /// True when the report was computed on D_l alone (no usable D_u).
    pub resubstitution: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped_reason: Option<String>,
    pub reassigned: usize,
    pub collective_changes: usize,
}

fn positive_of(labels: &[String]) -> &str {
    labels
        .iter()
        .find(|l| l.as_str() == MatchLabel::Match.as_str())
        .unwrap_or(&labels[0])
}

/// Predicts every row of `rows` with `model` and tallies against `gold`.
fn compare<R: AsRef<[f64]> + Sync>(
    model: &GaussianClusterModel,
    rows: &[R],
    gold: &[String],
    config: &MatchConfig,
    start: usize,
    len: usize,
) -> Result<BatchValidation> {
    let labels = model.labels();
    let predicted = par::try_map(rows, |r| {
        let logs = cluster_log_scores(model, r.as_ref(), config.stage2_coefficient)?;
        assign_from_log_scores(&logs, config.decision_rule).map(|a| a.winner)
    })?;
    let mut counts = vec![vec![0u64; labels.len()]; labels.len()];
    let mut confusion = ConfusionMatrix::new(labels.iter().cloned(), positive_of(&labels));
    for (g, &p) in gold.iter().zip(&predicted) {
        let class = model
            .index_of(g)
            .ok_or_else(|| Error::InvalidParameter(format!("label {g} has no cluster")))?;
        counts[p][class] += 1;
        confusion.add(g, &labels[p])?;
    }
    Ok(BatchValidation {
        start,
        len,
        counts,
        confusion,
    })
}

fn assemble(
    labels: Vec<String>,
    batches: Vec<BatchValidation>,
    resubstitution: bool,
) -> Result<ValidationReport> {
    let k = labels.len();
    let mut counts = vec![vec![0u64; k]; k];
    let mut confusion = ConfusionMatrix::new(labels.iter().cloned(), positive_of(&labels));
    for b in &batches {
        for (acc, row) in counts.iter_mut().zip(&b.counts) {
            for (x, y) in acc.iter_mut().zip(row) {
                *x += y;
            }
        }
        confusion.merge(&b.confusion)?;
    }
    let agreement = labels
        .iter()
        .map(|l| {
            let support: u64 = labels.iter().map(|p| confusion.count(l, p)).sum();
            let hit = confusion.count(l, l);
            ClassAgreement {
                label: l.clone(),
                rate: if support == 0 {
                    0.0
                } else {
                    hit as f64 / support as f64
                },
                support,
            }
        })
        .collect();
    Ok(ValidationReport {
        labels,
        counts,
        confusion,
        agreement,
        batches,
        resubstitution,
        skipped_reason: None,
        reassigned: 0,
        collective_changes: 0,
    })
}

/// Compares the Stage-1 model's own predictions on D_l with its labels.
pub fn resubstitution_report<R: AsRef<[f64]> + Sync>(
    model: &GaussianClusterModel,
    labeled: &[R],
    labels: &[String],
    config: &MatchConfig,
) -> Result<ValidationReport> {
    let batch = compare(model, labeled, labels, config, 0, 0)?;
    assemble(model.labels(), vec![batch], true)
}

/// Retrains on D_u labeled with its assigned clusters `winners`, relabels D_l
/// and compares with the original labels, once per batch of D_u.
pub fn swap_validate<R: AsRef<[f64]> + Sync>(
    labeled: &[R],
    labels: &[String],
    unlabeled: &[R],
    winners: &[String],
    config: &MatchConfig,
) -> Result<ValidationReport> {
    if labeled.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: labeled.len(),
            right: labels.len(),
        });
    }
    if unlabeled.len() != winners.len() {
        return Err(Error::LengthMismatch {
            left: unlabeled.len(),
            right: winners.len(),
        });
    }
    let mut alphabet = labels.to_vec();
    alphabet.sort();
    alphabet.dedup();
    if unlabeled.len() < alphabet.len() {
        return Err(Error::InsufficientData(format!(
            "{} unlabeled rows for {} clusters",
            unlabeled.len(),
            alphabet.len()
        )));
    }
    let size = match config.batch_size {
        Some(0) => {
            return Err(Error::InvalidParameter(
                "batch size must be positive".into(),
            ))
        }
        Some(s) => s,
        None => unlabeled.len(),
    };
    let mut batches = Vec::new();
    for start in (0..unlabeled.len()).step_by(size) {
        let end = (start + size).min(unlabeled.len());
        let model = init_cluster_stats_for(
            &unlabeled[start..end],
            &winners[start..end],
            &alphabet,
            config.std_floor,
        )?;
        batches.push(compare(
            &model,
            labeled,
            labels,
            config,
            start,
            end - start,
        )?);
    }
    assemble(alphabet, batches, false)
}
