use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STD_FLOOR: f64 = 1e-3;

/// Leading factor of each per-feature density term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage2Coefficient {
    /// `1 / (2π σ²)`
    #[default]
    Literal,
    /// `1 / (√(2π) σ)`, the normal density.
    StandardPdf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DecisionRule {
    #[default]
    MaxScore,
    LiteralMin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub label: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: usize,
}

/// Per-cluster mean and standard deviation, clusters sorted by label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianClusterModel {
    pub schema_id: Option<String>,
    pub std_floor: f64,
    pub clusters: Vec<ClusterStats>,
}

impl GaussianClusterModel {
    pub fn dim(&self) -> usize {
        self.clusters.first().map_or(0, |c| c.mean.len())
    }

    pub fn labels(&self) -> Vec<String> {
        self.clusters.iter().map(|c| c.label.clone()).collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.clusters.iter().position(|c| c.label == label)
    }
}

/// Fits a model with one cluster per distinct label.
pub fn init_cluster_stats<R: AsRef<[f64]>>(
    rows: &[R],
    labels: &[String],
    std_floor: f64,
) -> Result<GaussianClusterModel> {
    let mut alphabet: Vec<String> = labels.to_vec();
    alphabet.sort();
    alphabet.dedup();
    init_cluster_stats_for(rows, labels, &alphabet, std_floor)
}

/// Fits a model over a fixed cluster alphabet; a label with no rows is an error.
pub fn init_cluster_stats_for<R: AsRef<[f64]>>(
    rows: &[R],
    labels: &[String],
    alphabet: &[String],
    std_floor: f64,
) -> Result<GaussianClusterModel> {
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: labels.len(),
        });
    }
    if std_floor.is_nan() || std_floor <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "std floor must be positive, got {std_floor}"
        )));
    }
    if alphabet.len() < 2 {
        return Err(Error::TooFewClasses {
            needed: 2,
            found: alphabet.len(),
        });
    }
    let dim = rows.first().map_or(0, |r| r.as_ref().len());
    let mut groups: BTreeMap<&str, Vec<&[f64]>> =
        alphabet.iter().map(|l| (l.as_str(), Vec::new())).collect();
    if groups.len() != alphabet.len() {
        return Err(Error::InvalidParameter("duplicate cluster label".into()));
    }
    for (row, label) in rows.iter().zip(labels) {
        let row = row.as_ref();
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: row.len(),
            });
        }
        groups
            .get_mut(label.as_str())
            .ok_or_else(|| {
                Error::InvalidParameter(format!("label {label} outside the cluster alphabet"))
            })?
            .push(row);
    }
    let clusters = groups
        .into_iter()
        .map(|(label, members)| {
            if members.is_empty() {
                return Err(Error::EmptyLabelGroup(label.to_string()));
            }
            let n = members.len() as f64;
            let mean: Vec<f64> = (0..dim)
                .map(|i| members.iter().map(|r| r[i]).sum::<f64>() / n)
                .collect();
            let std = (0..dim)
                .map(|i| {
                    let var = members
                        .iter()
                        .map(|r| (r[i] - mean[i]).powi(2))
                        .sum::<f64>()
                        / n;
                    var.sqrt().max(std_floor)
                })
                .collect();
            Ok(ClusterStats {
                label: label.to_string(),
                mean,
                std,
                count: members.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GaussianClusterModel {
        schema_id: None,
        std_floor,
        clusters,
    })
}

/// `ln` of one cluster's summed density terms, via log-sum-exp.
fn log_score(c: &ClusterStats, x: &[f64], coef: Stage2Coefficient) -> f64 {
    let terms: Vec<f64> = c
        .mean
        .iter()
        .zip(&c.std)
        .zip(x)
        .map(|((mu, sd), xi)| {
            let lead = match coef {
                Stage2Coefficient::Literal => -(2.0 * PI * sd * sd).ln(),
                Stage2Coefficient::StandardPdf => -((2.0 * PI).sqrt() * sd).ln(),
            };
            lead - (xi - mu).powi(2) / (2.0 * sd * sd)
        })
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn check_dim(model: &GaussianClusterModel, x: &[f64]) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: x.len(),
        });
    }
    Ok(())
}

/// Natural log of each cluster's score, in cluster order.
pub fn cluster_log_scores(
    model: &GaussianClusterModel,
    x: &[f64],
    coef: Stage2Coefficient,
) -> Result<Vec<f64>> {
    check_dim(model, x)?;
    Ok(model
        .clusters
        .iter()
        .map(|c| log_score(c, x, coef))
        .collect())
}

/// Sum over features of the per-feature density terms, in cluster order.
pub fn cluster_scores(
    model: &GaussianClusterModel,
    x: &[f64],
    coef: Stage2Coefficient,
) -> Result<Vec<f64>> {
    Ok(cluster_log_scores(model, x, coef)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub winner: usize,
    pub memberships: Vec<f64>,
}

/// Normalizes scores into memberships and picks the winner. Clusters are
/// expected in label order, so index ties resolve to the smallest label.
pub fn assign_and_membership(scores: &[f64], rule: DecisionRule) -> Result<Assignment> {
    if let Some(bad) = scores.iter().find(|s| s.is_nan() || **s < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "score must be non-negative, got {bad}"
        )));
    }
    let logs: Vec<f64> = scores.iter().map(|s| s.ln()).collect();
    assign_from_log_scores(&logs, rule)
}

/// Same as [`assign_and_membership`] for scores given as logarithms.
pub fn assign_from_log_scores(log_scores: &[f64], rule: DecisionRule) -> Result<Assignment> {
    if log_scores.len() < 2 {
        return Err(Error::TooFewClasses {
            needed: 2,
            found: log_scores.len(),
        });
    }
    if log_scores.iter().any(|s| s.is_nan() || *s == f64::INFINITY) {
        return Err(Error::InvalidParameter("scores must be finite".into()));
    }
    let max = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let memberships: Vec<f64> = if max == f64::NEG_INFINITY {
        log::debug!("all cluster scores are zero; using uniform memberships");
        vec![1.0 / log_scores.len() as f64; log_scores.len()]
    } else {
        let w: Vec<f64> = log_scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|v| v / z).collect()
    };
    let mut winner = 0;
    for (j, &m) in memberships.iter().enumerate().skip(1) {
        let better = match rule {
            DecisionRule::MaxScore => m > memberships[winner],
            DecisionRule::LiteralMin => m < memberships[winner],
        };
        if better {
            winner = j;
        }
    }
    Ok(Assignment {
        winner,
        memberships,
    })
}
