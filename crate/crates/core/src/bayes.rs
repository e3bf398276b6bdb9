//! Gaussian naive Bayes.
//!
//! `P(c | x) ∝ P(c) · Π_i P(x_i | c)` with `P(c) = N(c)/N`. Continuous
//! features use a univariate Gaussian density with per-class mean and
//! (population) variance; categorical features use the empirical frequency
//! `N(x_i, c) / N(c)`. Scores are accumulated in log space and normalized.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::PairClassifier;
use crate::features::FeatureRow;
use crate::lom::MatchLabel;

pub const DEFAULT_VAR_FLOOR: f64 = 1e-6;
pub const MODEL_FORMAT: &str = "lomatch-naive-bayes";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    #[default]
    Continuous,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesOptions {
    pub var_floor: f64,
    /// Per-feature kinds; `None` means every feature is continuous.
    pub kinds: Option<Vec<FeatureKind>>,
    pub schema_id: String,
}

impl Default for NaiveBayesOptions {
    fn default() -> Self {
        Self {
            var_floor: DEFAULT_VAR_FLOOR,
            kinds: None,
            schema_id: crate::features::LOM4_SCHEMA.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub label: String,
    pub count: usize,
    pub prior: f64,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    /// Value frequencies for categorical features, empty for continuous ones.
    pub frequencies: Vec<Vec<(f64, usize)>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub format: String,
    pub format_version: u32,
    pub schema_id: String,
    pub training_count: usize,
    pub var_floor: f64,
    pub kinds: Vec<FeatureKind>,
    /// Sorted by label.
    pub classes: Vec<ClassStats>,
}

pub fn fit_naive_bayes<R: AsRef<[f64]>>(rows: &[R], labels: &[String]) -> Result<NaiveBayesModel> {
    fit_naive_bayes_with(rows, labels, &NaiveBayesOptions::default())
}

pub fn fit_naive_bayes_with<R: AsRef<[f64]>>(
    rows: &[R],
    labels: &[String],
    opts: &NaiveBayesOptions,
) -> Result<NaiveBayesModel> {
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: labels.len(),
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if opts.var_floor.is_nan() || opts.var_floor <= 0.0 {
        return Err(Error::InvalidParameter(
            "variance floor must be positive".into(),
        ));
    }
    let dim = rows[0].as_ref().len();
    let kinds = opts
        .kinds
        .clone()
        .unwrap_or_else(|| vec![FeatureKind::Continuous; dim]);
    if kinds.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: kinds.len(),
        });
    }

    let mut groups: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for (row, label) in rows.iter().zip(labels) {
        let row = row.as_ref();
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: row.len(),
            });
        }
        groups.entry(label.as_str()).or_default().push(row);
    }
    if groups.len() < 2 {
        return Err(Error::TooFewClasses {
            needed: 2,
            found: groups.len(),
        });
    }

    let n = rows.len();
    let classes = groups
        .into_iter()
        .map(|(label, members)| {
            let count = members.len();
            let mut means = vec![0.0; dim];
            let mut variances = vec![0.0; dim];
            let mut frequencies = vec![Vec::new(); dim];
            for i in 0..dim {
                let mean = members.iter().map(|r| r[i]).sum::<f64>() / count as f64;
                let var = members.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / count as f64;
                means[i] = mean;
                variances[i] = var.max(opts.var_floor);
                if kinds[i] == FeatureKind::Categorical {
                    let mut freq: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
                    for r in &members {
                        freq.entry(r[i].to_bits()).or_insert((r[i], 0)).1 += 1;
                    }
                    let mut f: Vec<(f64, usize)> = freq.into_values().collect();
                    f.sort_by(|a, b| a.0.total_cmp(&b.0));
                    frequencies[i] = f;
                }
            }
            ClassStats {
                label: label.to_string(),
                count,
                prior: count as f64 / n as f64,
                means,
                variances,
                frequencies,
            }
        })
        .collect();

    Ok(NaiveBayesModel {
        format: MODEL_FORMAT.into(),
        format_version: MODEL_FORMAT_VERSION,
        schema_id: opts.schema_id.clone(),
        training_count: n,
        var_floor: opts.var_floor,
        kinds,
        classes,
    })
}

/// Log of the univariate normal density.
pub fn log_gaussian(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

impl NaiveBayesModel {
    pub fn dim(&self) -> usize {
        self.kinds.len()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.label.as_str())
    }

    fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        self.classes
            .iter()
            .map(|c| {
                let mut acc = c.prior.ln();
                for (i, &xi) in x.iter().enumerate() {
                    acc += match self.kinds[i] {
                        FeatureKind::Continuous => log_gaussian(xi, c.means[i], c.variances[i]),
                        FeatureKind::Categorical => {
                            let hits = c.frequencies[i]
                                .iter()
                                .find(|(v, _)| *v == xi)
                                .map_or(0, |(_, k)| *k);
                            (hits as f64 / c.count as f64).ln()
                        }
                    };
                }
                acc
            })
            .collect()
    }

    /// Normalized posteriors, in label order.
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<(String, f64)>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let logs = self.log_joint(x);
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let probs: Vec<f64> = if max == f64::NEG_INFINITY {
            // every class has zero likelihood (unseen categorical value): fall back to priors
            self.classes.iter().map(|c| c.prior).collect()
        } else {
            let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / z).collect()
        };
        Ok(self
            .classes
            .iter()
            .map(|c| c.label.clone())
            .zip(probs)
            .collect())
    }

    /// Argmax of the posterior; ties go to the lexicographically smallest label.
    pub fn classify(&self, x: &[f64]) -> Result<String> {
        let post = self.posterior(x)?;
        let mut best = 0;
        for (i, (_, p)) in post.iter().enumerate().skip(1) {
            if *p > post[best].1 {
                best = i;
            }
        }
        Ok(post[best].0.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.format != MODEL_FORMAT || model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported model format {} v{}",
                model.format, model.format_version
            )));
        }
        Ok(model)
    }
}

pub fn posterior(model: &NaiveBayesModel, x: &[f64]) -> Result<Vec<(String, f64)>> {
    model.posterior(x)
}

pub fn classify_nb(model: &NaiveBayesModel, x: &[f64]) -> Result<String> {
    model.classify(x)
}

/// Supervised baseline over pair features.
#[derive(Clone, Debug, Default)]
pub struct NaiveBayesClassifier(pub NaiveBayesOptions);

impl PairClassifier for NaiveBayesClassifier {
    fn fit_predict(&self, train: &[FeatureRow], test: &[FeatureRow]) -> Result<Vec<MatchLabel>> {
        let (x, y): (Vec<&[f64]>, Vec<String>) = train
            .iter()
            .map(|r| {
                let label = r
                    .label()
                    .ok_or_else(|| Error::InvalidParameter("unlabeled training row".into()))?;
                Ok((r.features.values(), label.as_str().to_string()))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        let model = fit_naive_bayes_with(&x, &y, &self.0)?;
        test.iter()
            .map(|r| model.classify(r.features.values())?.parse())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(ls: &[&str]) -> Vec<String> {
        ls.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn priors_follow_class_frequency() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let ls: Vec<String> = (0..10)
            .map(|i| if i < 4 { "c".into() } else { "d".into() })
            .collect();
        let m = fit_naive_bayes(&rows, &ls).unwrap();
        assert_eq!(m.classes[0].label, "c");
        assert!((m.classes[0].prior - 0.4).abs() < 1e-12);
        let total: f64 = m.classes.iter().map(|c| c.prior).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mean_and_variance_floor() {
        let rows = vec![vec![0.0, 5.0], vec![2.0, 5.0], vec![9.0, 1.0]];
        let m = fit_naive_bayes(&rows, &labels(&["a", "a", "b"])).unwrap();
        assert_eq!(m.classes[0].means[0], 1.0);
        assert_eq!(m.classes[0].variances[0], 1.0);
        assert_eq!(m.classes[0].variances[1], DEFAULT_VAR_FLOOR);
        assert_eq!(m.classes[1].variances[0], DEFAULT_VAR_FLOOR);
    }

    #[test]
    fn fit_errors() {
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(
            fit_naive_bayes(&empty, &[]),
            Err(Error::EmptyDataset)
        ));
        assert!(matches!(
            fit_naive_bayes(&[vec![1.0]], &labels(&["a"])),
            Err(Error::TooFewClasses { .. })
        ));
        assert!(matches!(
            fit_naive_bayes(&[vec![1.0], vec![1.0, 2.0]], &labels(&["a", "b"])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn identical_classes_split_evenly() {
        let rows = vec![vec![0.0], vec![1.0], vec![0.0], vec![1.0]];
        let m = fit_naive_bayes(&rows, &labels(&["a", "a", "b", "b"])).unwrap();
        for x in [-3.0, 0.0, 0.4, 7.0] {
            let p = m.posterior(&[x]).unwrap();
            assert!((p[0].1 - 0.5).abs() < 1e-12 && (p[1].1 - 0.5).abs() < 1e-12);
            assert_eq!(m.classify(&[x]).unwrap(), "a");
        }
    }

    #[test]
    fn at_class_mean_far_from_other() {
        let rows = vec![vec![0.0], vec![0.2], vec![5.0], vec![5.2]];
        let m = fit_naive_bayes(&rows, &labels(&["A", "A", "B", "B"])).unwrap();
        let p = m.posterior(&[0.1]).unwrap();
        assert!(p[0].1 > 0.99);
        assert!((p[0].1 + p[1].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn four_example_table_matches_closed_form() {
        // class A centred at (0.2, 0.8), class B at (0.7, 0.3), all variances 0.01.
        // At (0.4, 0.6) the log-likelihood gap is 5, so P(A|x) = 1 / (1 + e^-5).
        let rows = vec![
            vec![0.1, 0.9],
            vec![0.3, 0.7],
            vec![0.8, 0.2],
            vec![0.6, 0.4],
        ];
        let m = fit_naive_bayes(&rows, &labels(&["A", "A", "B", "B"])).unwrap();
        let p = m.posterior(&[0.4, 0.6]).unwrap();
        let expected = 1.0 / (1.0 + (-5.0f64).exp());
        assert!((p[0].1 - expected).abs() < 1e-9, "{p:?}");
        assert_eq!(m.classify(&[0.4, 0.6]).unwrap(), "A");
    }

    #[test]
    fn categorical_branch_uses_frequencies() {
        let rows = vec![
            vec![1.0],
            vec![1.0],
            vec![0.0],
            vec![0.0],
            vec![0.0],
            vec![1.0],
        ];
        let ls = labels(&["a", "a", "a", "b", "b", "b"]);
        let opts = NaiveBayesOptions {
            kinds: Some(vec![FeatureKind::Categorical]),
            ..Default::default()
        };
        let m = fit_naive_bayes_with(&rows, &ls, &opts).unwrap();
        // P(a|1) ∝ 0.5 · 2/3, P(b|1) ∝ 0.5 · 1/3
        let p = m.posterior(&[1.0]).unwrap();
        assert!((p[0].1 - 2.0 / 3.0).abs() < 1e-12);
        // unseen value: zero likelihood everywhere, priors returned
        let p = m.posterior(&[0.5]).unwrap();
        assert!((p[0].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_on_predict() {
        let m = fit_naive_bayes(&[vec![0.0], vec![1.0]], &labels(&["a", "b"])).unwrap();
        assert!(matches!(
            m.posterior(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn persistence_round_trip() {
        let m = fit_naive_bayes(
            &[vec![0.0, 0.3], vec![1.0, 0.1], vec![0.5, 0.5]],
            &labels(&["a", "b", "a"]),
        )
        .unwrap();
        let text = m.to_json().unwrap();
        assert!(text.contains("\"format_version\": 1"));
        assert_eq!(NaiveBayesModel::from_json(&text).unwrap(), m);
    }

    #[test]
    fn separable_training_set_is_fit_exactly() {
        let mut rows = Vec::new();
        let mut ls = Vec::new();
        for i in 0..50 {
            let jitter = (i % 7) as f64 * 0.01;
            rows.push(vec![0.1 + jitter, 0.2 - jitter]);
            ls.push("x".to_string());
            rows.push(vec![0.9 - jitter, 0.8 + jitter]);
            ls.push("y".to_string());
        }
        let m = fit_naive_bayes(&rows, &ls).unwrap();
        let correct = rows
            .iter()
            .zip(&ls)
            .filter(|(r, l)| m.classify(r).unwrap() == **l)
            .count();
        assert_eq!(correct, rows.len());
    }

    proptest! {
        #[test]
        fn posterior_normalizes(
            rows in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 4..30),
            query in proptest::collection::vec(-50.0f64..50.0, 3),
        ) {
            let ls: Vec<String> = (0..rows.len()).map(|i| ["p", "q", "r"][i % 3].to_string()).collect();
            let m = fit_naive_bayes(&rows, &ls).unwrap();
            let post = m.posterior(&query).unwrap();
            let sum: f64 = post.iter().map(|(_, p)| p).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(post.iter().all(|(_, p)| (0.0..=1.0).contains(p)));
        }

        #[test]
        fn positive_scaling_keeps_argmax(
            rows in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 2), 6..20),
            query in proptest::collection::vec(0.0f64..1.0, 2),
            scale in 0.5f64..20.0,
        ) {
            let ls: Vec<String> = (0..rows.len()).map(|i| if i % 2 == 0 { "a".into() } else { "b".into() }).collect();
            // floor scales with variance (σ² → k²σ²) so floored classes stay consistent
            let base = NaiveBayesOptions { var_floor: 1e-6, ..Default::default() };
            let scaled_opts = NaiveBayesOptions { var_floor: 1e-6 * scale * scale, ..Default::default() };
            let m = fit_naive_bayes_with(&rows, &ls, &base).unwrap();
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
            let ms = fit_naive_bayes_with(&scaled, &ls, &scaled_opts).unwrap();
            let q2: Vec<f64> = query.iter().map(|v| v * scale).collect();
            let p = m.posterior(&query).unwrap();
            // compare argmax away from near-ties where rounding could flip it
            if (p[0].1 - p[1].1).abs() > 1e-6 {
                prop_assert_eq!(m.classify(&query).unwrap(), ms.classify(&q2).unwrap());
            }
        }
    }
}
