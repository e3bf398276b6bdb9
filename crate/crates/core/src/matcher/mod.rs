//! Semi-supervised fuzzy matching of instance pairs.
//!
//! The pipeline fits one Gaussian cluster per label on the labeled pairs
//! (stage 1), scores and assigns the unlabeled pairs (stages 2 and 3),
//! validates the assignment by retraining on it and relabelling the labeled
//! pairs (stages 5 to 7), then moves near-ties to the runner-up cluster
//! (stage 8). Optionally a collective pass over a k-NN graph follows.

mod assignment;
mod collective;
mod gaussian;
mod validation;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use assignment::{classes_to_clusters, ClassMapping};
pub use collective::{
    collective_refine, cosine, knn_graph, CollectiveConfig, NeighborhoodGraph, RefineOutcome,
};
pub use gaussian::{
    assign_and_membership, assign_from_log_scores, cluster_log_scores, cluster_scores,
    init_cluster_stats, init_cluster_stats_for, Assignment, ClusterStats, DecisionRule,
    GaussianClusterModel, Stage2Coefficient, DEFAULT_STD_FLOOR,
};
pub use validation::{
    resubstitution_report, swap_validate, BatchValidation, ClassAgreement, ValidationReport,
};

use crate::error::{Error, Result};
use crate::eval::PairClassifier;
use crate::features::{format_real, FeatureRow};
use crate::lom::{InstancePair, MatchLabel};
use crate::par;

pub const DECISIONS_HEADER: &str = "# lomatch decisions v1";
pub const DEFAULT_STAGE8_THRESHOLD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub decision_rule: DecisionRule,
    pub stage2_coefficient: Stage2Coefficient,
    pub stage8_threshold: f64,
    pub std_floor: f64,
    /// Stage-7 batch size over D_u; `None` is a single batch.
    pub batch_size: Option<usize>,
    pub collective: CollectiveConfig,
    pub seed: u64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            decision_rule: DecisionRule::MaxScore,
            stage2_coefficient: Stage2Coefficient::Literal,
            stage8_threshold: DEFAULT_STAGE8_THRESHOLD,
            std_floor: DEFAULT_STD_FLOOR,
            batch_size: None,
            collective: CollectiveConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub pair: InstancePair,
    /// Index into the model's clusters.
    pub winner: usize,
    pub memberships: Vec<f64>,
    pub reassigned: bool,
    /// Winner cluster mapped onto a label.
    pub match_label: MatchLabel,
}

impl MatchDecision {
    pub fn winner_membership(&self) -> f64 {
        self.memberships[self.winner]
    }
}

/// Index of the largest value and of the largest among the rest; ties go to
/// the smaller index.
fn top_two(v: &[f64]) -> (usize, usize) {
    let mut a = 0;
    for j in 1..v.len() {
        if v[j] > v[a] {
            a = j;
        }
    }
    let mut k = if a == 0 { 1 } else { 0 };
    for j in 0..v.len() {
        if j != a && v[j] > v[k] {
            k = j;
        }
    }
    (a, k)
}

/// Moves every decision whose top two memberships are within `threshold` to
/// the runner-up cluster. Applied once.
pub fn ambiguity_reassign(
    mut decisions: Vec<MatchDecision>,
    threshold: f64,
) -> Result<Vec<MatchDecision>> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "threshold must be non-negative, got {threshold}"
        )));
    }
    for d in &mut decisions {
        if d.memberships.len() < 2 {
            return Err(Error::TooFewClasses {
                needed: 2,
                found: d.memberships.len(),
            });
        }
        let (a, k) = top_two(&d.memberships);
        if d.memberships[a] - d.memberships[k] <= threshold {
            d.winner = k;
            d.reassigned = true;
        }
    }
    Ok(decisions)
}

/// Decisions whose winning membership reaches `min_membership`.
pub fn filter_confident(decisions: &[MatchDecision], min_membership: f64) -> Vec<&MatchDecision> {
    decisions
        .iter()
        .filter(|d| d.winner_membership() >= min_membership)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub model: GaussianClusterModel,
    pub mapping: ClassMapping,
    pub decisions: Vec<MatchDecision>,
    pub validation: ValidationReport,
}

impl MatchOutcome {
    /// Label a cluster index is mapped to.
    pub fn label_of(&self, cluster: usize) -> MatchLabel {
        cluster_label(&self.model, &self.mapping, cluster)
    }

    /// Summed membership of the clusters mapped to `label`.
    pub fn membership_for(&self, d: &MatchDecision, label: MatchLabel) -> f64 {
        (0..d.memberships.len())
            .filter(|&j| self.label_of(j) == label)
            .map(|j| d.memberships[j])
            .sum()
    }
}

fn cluster_label(
    model: &GaussianClusterModel,
    mapping: &ClassMapping,
    cluster: usize,
) -> MatchLabel {
    let label = match mapping.mapping.get(cluster).copied().flatten() {
        Some(class) => &model.clusters[class].label,
        None => &model.clusters[cluster].label,
    };
    label.parse().expect("cluster labels are match labels")
}

fn split_labeled(rows: &[FeatureRow]) -> Result<(Vec<&[f64]>, Vec<String>)> {
    rows.iter()
        .map(|r| {
            let label = r.label().ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "labeled set contains unlabeled pair {},{}",
                    r.pair.source_id, r.pair.target_id
                ))
            })?;
            Ok((r.features.values(), label.as_str().to_string()))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

/// Runs stages 1-3, swap validation, stage 8 and optional collective
/// refinement. Labels on `unlabeled` rows are ignored.
pub fn match_pipeline(
    labeled: &[FeatureRow],
    unlabeled: &[FeatureRow],
    config: &MatchConfig,
) -> Result<MatchOutcome> {
    if labeled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (l_rows, l_labels) = split_labeled(labeled)?;
    let mut model = init_cluster_stats(&l_rows, &l_labels, config.std_floor)?;
    model.schema_id = Some(labeled[0].features.schema_id().to_string());
    let u_rows: Vec<&[f64]> = unlabeled.iter().map(|r| r.features.values()).collect();

    let assignments = par::try_map(&u_rows, |x| {
        let logs = cluster_log_scores(&model, x, config.stage2_coefficient)?;
        assign_from_log_scores(&logs, config.decision_rule)
    })?;
    let winners: Vec<String> = assignments
        .iter()
        .map(|a| model.clusters[a.winner].label.clone())
        .collect();

    let mut validation = if unlabeled.is_empty() {
        resubstitution_report(&model, &l_rows, &l_labels, config)?
    } else {
        match swap_validate(&l_rows, &l_labels, &u_rows, &winners, config) {
            Ok(r) => r,
            Err(e @ (Error::EmptyLabelGroup(_) | Error::InsufficientData(_))) => {
                log::warn!("swap validation skipped: {e}");
                let mut r = resubstitution_report(&model, &l_rows, &l_labels, config)?;
                r.skipped_reason = Some(e.to_string());
                r
            }
            Err(e) => return Err(e),
        }
    };
    let mapping = classes_to_clusters(&validation.counts)?;

    let decisions: Vec<MatchDecision> = unlabeled
        .iter()
        .zip(assignments)
        .map(|(r, a)| MatchDecision {
            pair: InstancePair::new(r.pair.source_id.clone(), r.pair.target_id.clone()),
            winner: a.winner,
            memberships: a.memberships,
            reassigned: false,
            match_label: MatchLabel::Match,
        })
        .collect();
    let mut decisions = ambiguity_reassign(decisions, config.stage8_threshold)?;
    for d in &mut decisions {
        d.match_label = cluster_label(&model, &mapping, d.winner);
    }
    validation.reassigned = decisions.iter().filter(|d| d.reassigned).count();

    if config.collective.enabled && !decisions.is_empty() {
        let features: Vec<&[f64]> = l_rows
            .iter()
            .copied()
            .chain(u_rows.iter().copied())
            .collect();
        let initial: Vec<String> = l_labels
            .iter()
            .cloned()
            .chain(decisions.iter().map(|d| d.match_label.as_str().to_string()))
            .collect();
        let observed: Vec<bool> = (0..features.len()).map(|i| i < l_rows.len()).collect();
        let refined = collective_refine(
            &features,
            &initial,
            &observed,
            config.collective.k,
            config.collective.max_rounds,
        )?;
        for (d, label) in decisions.iter_mut().zip(&refined.labels[l_rows.len()..]) {
            d.match_label = label.parse()?;
        }
        validation.collective_changes = refined.changed;
    }

    Ok(MatchOutcome {
        model,
        mapping,
        decisions,
        validation,
    })
}

/// The matching pipeline as a cross-validation classifier.
#[derive(Clone, Debug, Default)]
pub struct OmmClassifier(pub MatchConfig);

impl PairClassifier for OmmClassifier {
    fn fit_predict(&self, train: &[FeatureRow], test: &[FeatureRow]) -> Result<Vec<MatchLabel>> {
        let out = match_pipeline(train, test, &self.0)?;
        Ok(out.decisions.iter().map(|d| d.match_label).collect())
    }
}

/// Writes `source_id,target_id,winner,match_label,membership_match,membership_nonmatch,reassigned`.
pub fn write_decisions<W: Write>(outcome: &MatchOutcome, mut out: W) -> Result<()> {
    writeln!(out, "{DECISIONS_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "source_id",
        "target_id",
        "winner",
        "match_label",
        "membership_match",
        "membership_nonmatch",
        "reassigned",
    ])?;
    for d in &outcome.decisions {
        w.write_record([
            d.pair.source_id.as_str(),
            d.pair.target_id.as_str(),
            outcome.model.clusters[d.winner].label.as_str(),
            d.match_label.as_str(),
            &format_real(outcome.membership_for(d, MatchLabel::Match)),
            &format_real(outcome.membership_for(d, MatchLabel::NonMatch)),
            if d.reassigned { "true" } else { "false" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a decisions file back as pairs labeled with their predicted label.
pub fn read_decisions<R: Read>(input: R) -> Result<Vec<InstancePair>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                reason: format!("missing column {name}"),
            })
    };
    let (s, t, l) = (col("source_id")?, col("target_id")?, col("match_label")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let label: MatchLabel = rec[l].parse().map_err(|_| Error::Parse {
            line: i + 3,
            reason: format!("bad label {:?}", &rec[l]),
        })?;
        out.push(InstancePair::labeled(&rec[s], &rec[t], label));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{confusion_matrix_binary, prf_metrics};
    use crate::features::FeatureVector;
    use crate::synth::{pair_corpus, PairCorpusSpec};
    use proptest::prelude::*;

    fn decision(memberships: Vec<f64>) -> MatchDecision {
        let winner = top_two(&memberships).0;
        MatchDecision {
            pair: InstancePair::new("s", "t"),
            winner,
            memberships,
            reassigned: false,
            match_label: MatchLabel::Match,
        }
    }

    #[test]
    fn stage8_cases() {
        let d = ambiguity_reassign(vec![decision(vec![0.51, 0.49])], 0.05).unwrap();
        assert_eq!((d[0].winner, d[0].reassigned), (1, true));
        let d = ambiguity_reassign(vec![decision(vec![0.9, 0.1])], 0.05).unwrap();
        assert_eq!((d[0].winner, d[0].reassigned), (0, false));
        let d = ambiguity_reassign(
            vec![decision(vec![0.5, 0.5]), decision(vec![0.5001, 0.4999])],
            0.0,
        )
        .unwrap();
        assert!(d[0].reassigned && !d[1].reassigned);
        assert_eq!(d[0].winner, 1);
        assert!(ambiguity_reassign(vec![decision(vec![1.0])], 0.05).is_err());
    }

    #[test]
    fn swap_validation_on_separable_data() {
        let l = vec![vec![0.0], vec![0.1], vec![1.0], vec![0.9]];
        let ll: Vec<String> = ["A", "A", "B", "B"].iter().map(|s| s.to_string()).collect();
        let u = vec![vec![0.05], vec![0.02], vec![0.95], vec![0.97]];
        let r = swap_validate(&l, &ll, &u, &ll, &MatchConfig::default()).unwrap();
        assert_eq!(r.counts, vec![vec![2, 0], vec![0, 2]]);
        assert_eq!(r.confusion.total(), 4);
        assert!(r.agreement.iter().all(|a| a.rate == 1.0));

        let all_a: Vec<String> = vec!["A".into(); 4];
        assert!(matches!(
            swap_validate(&l, &ll, &u, &all_a, &MatchConfig::default()),
            Err(Error::EmptyLabelGroup(_))
        ));
        assert!(matches!(
            swap_validate(&l, &ll, &u[..1], &ll[..1], &MatchConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn batched_validation_sums_batches() {
        let l = vec![vec![0.0], vec![0.1], vec![1.0], vec![0.9]];
        let ll: Vec<String> = ["A", "A", "B", "B"].iter().map(|s| s.to_string()).collect();
        let u = vec![vec![0.05], vec![0.95], vec![0.02], vec![0.97]];
        let uw: Vec<String> = ["A", "B", "A", "B"].iter().map(|s| s.to_string()).collect();
        let cfg = MatchConfig {
            batch_size: Some(2),
            ..MatchConfig::default()
        };
        let r = swap_validate(&l, &ll, &u, &uw, &cfg).unwrap();
        assert_eq!(r.batches.len(), 2);
        assert!(r.batches.iter().all(|b| b.confusion.total() == 4));
        assert_eq!(r.confusion.total(), 8);
    }

    fn heldout_f(config: &MatchConfig, seed: u64) -> f64 {
        let corpus = pair_corpus(&PairCorpusSpec::default(), seed).unwrap();
        let out = match_pipeline(&corpus.labeled, &corpus.unlabeled, config).unwrap();
        let gold: Vec<MatchLabel> = corpus
            .unlabeled
            .iter()
            .map(|r| r.label().unwrap())
            .collect();
        let pred: Vec<MatchLabel> = out.decisions.iter().map(|d| d.match_label).collect();
        prf_metrics(&confusion_matrix_binary(&gold, &pred).unwrap())
            .positive
            .f_score
    }

    #[test]
    fn separable_corpus_is_matched() {
        for seed in 0..5 {
            assert!(heldout_f(&MatchConfig::default(), seed) >= 0.95);
        }
    }

    #[test]
    fn pipeline_is_deterministic_and_unlabeled_labels_are_ignored() {
        let corpus = pair_corpus(&PairCorpusSpec::default(), 3).unwrap();
        let a =
            match_pipeline(&corpus.labeled, &corpus.unlabeled, &MatchConfig::default()).unwrap();
        let stripped: Vec<FeatureRow> = corpus
            .unlabeled
            .iter()
            .map(|r| FeatureRow {
                pair: InstancePair::new(&r.pair.source_id, &r.pair.target_id),
                features: r.features.clone(),
            })
            .collect();
        let b = match_pipeline(&corpus.labeled, &stripped, &MatchConfig::default()).unwrap();
        assert_eq!(a, b);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_decisions(&a, &mut buf_a).unwrap();
        write_decisions(&b, &mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
        let back = read_decisions(&buf_a[..]).unwrap();
        assert_eq!(back.len(), a.decisions.len());
        assert_eq!(back[0].label, Some(a.decisions[0].match_label));
    }

    #[test]
    fn empty_unlabeled_set() {
        let corpus = pair_corpus(&PairCorpusSpec::default(), 1).unwrap();
        let out = match_pipeline(&corpus.labeled, &[], &MatchConfig::default()).unwrap();
        assert!(out.decisions.is_empty());
        assert!(out.validation.resubstitution);
        assert_eq!(
            out.validation.confusion.total() as usize,
            corpus.labeled.len()
        );
    }

    #[test]
    fn one_class_labeled_set_is_rejected() {
        let row = |v: f64| FeatureRow {
            pair: InstancePair::labeled("a", "b", MatchLabel::Match),
            features: FeatureVector::lom4([v, v, v, 1.0]).unwrap(),
        };
        assert!(match_pipeline(&[row(0.9), row(0.8)], &[], &MatchConfig::default()).is_err());
        assert!(match_pipeline(&[], &[], &MatchConfig::default()).is_err());
    }

    #[test]
    fn literal_min_inverts_labels() {
        let f = heldout_f(
            &MatchConfig {
                decision_rule: DecisionRule::LiteralMin,
                ..MatchConfig::default()
            },
            0,
        );
        assert!(f < 0.5, "f = {f}");
    }

    #[test]
    fn collective_pass_keeps_separable_corpus() {
        let cfg = MatchConfig {
            collective: CollectiveConfig {
                enabled: true,
                k: 5,
                max_rounds: 10,
            },
            ..MatchConfig::default()
        };
        for seed in 0..5 {
            assert!(heldout_f(&cfg, seed) >= 0.95);
        }
    }

    #[test]
    fn confident_filter() {
        let ds = vec![decision(vec![0.9, 0.1]), decision(vec![0.6, 0.4])];
        assert_eq!(filter_confident(&ds, 0.8).len(), 1);
        assert_eq!(filter_confident(&ds, 0.0).len(), 2);
    }

    fn membership_row() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, 2..5).prop_map(|v| {
            let z: f64 = v.iter().sum();
            if z == 0.0 {
                vec![1.0 / v.len() as f64; v.len()]
            } else {
                v.iter().map(|x| x / z).collect()
            }
        })
    }

    proptest! {
        #[test]
        fn reassigned_gaps_within_threshold(rows in proptest::collection::vec(membership_row(), 1..20), t in 0.0f64..0.3) {
            let before: Vec<MatchDecision> = rows.into_iter().map(decision).collect();
            let after = ambiguity_reassign(before.clone(), t).unwrap();
            for (b, a) in before.iter().zip(&after) {
                let (top, second) = top_two(&b.memberships);
                let gap = b.memberships[top] - b.memberships[second];
                prop_assert_eq!(a.reassigned, gap <= t);
                if a.reassigned {
                    prop_assert_eq!(a.winner, second);
                } else {
                    prop_assert_eq!(a.winner, b.winner);
                }
            }
        }
    }
}
