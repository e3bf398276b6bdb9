use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bayes::{fit_naive_bayes_with, NaiveBayesOptions};
use crate::error::{Error, Result};
use crate::par;

/// Variance floor of the relational model. Neighbour histograms are often
/// constant within a class, and a tight floor lets them swamp the features.
pub const COLLECTIVE_VAR_FLOOR: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectiveConfig {
    pub enabled: bool,
    pub k: usize,
    pub max_rounds: usize,
}

impl Default for CollectiveConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            k: 5,
            max_rounds: 10,
        }
    }
}

/// Records as nodes, split into observed (X) and to-label (Y), with a
/// symmetric neighbourhood relation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborhoodGraph {
    pub neighbors: Vec<Vec<usize>>,
    pub observed: Vec<bool>,
    pub labels: Vec<String>,
}

impl NeighborhoodGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// k nearest neighbours by cosine similarity, symmetrized by union. Ties go
/// to the smaller index.
pub fn knn_graph<R: AsRef<[f64]> + Sync>(features: &[R], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = features.len();
    if k >= n && k > 0 {
        return Err(Error::InvalidParameter(format!(
            "k = {k} neighbours needs more than {n} nodes"
        )));
    }
    let nearest: Vec<Vec<usize>> = par::map_range(n, |i| {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (cosine(features[i].as_ref(), features[j].as_ref()), j))
            .collect();
        others.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        others.into_iter().take(k).map(|(_, j)| j).collect()
    });
    let mut adj = vec![Vec::new(); n];
    for (i, ns) in nearest.iter().enumerate() {
        for &j in ns {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    Ok(adj)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub labels: Vec<String>,
    pub rounds: usize,
    pub changed: usize,
    pub converged: bool,
}

fn histogram(neighbors: &[usize], labels: &[String], alphabet: &[String]) -> Vec<f64> {
    let mut h = vec![0.0; alphabet.len()];
    if neighbors.is_empty() {
        return h;
    }
    for &j in neighbors {
        if let Ok(pos) = alphabet.binary_search(&labels[j]) {
            h[pos] += 1.0;
        }
    }
    let n = neighbors.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

fn augmented(x: &[f64], hist: &[f64]) -> Vec<f64> {
    x.iter().chain(hist).copied().collect()
}

/// Iterative classification: unobserved nodes are relabelled in ascending
/// order by a naive Bayes model over features plus the neighbour-label
/// histogram, until no label changes or `max_rounds` is reached. With only
/// one observed class the model is replaced by a neighbour majority vote.
pub fn collective_refine<R: AsRef<[f64]> + Sync>(
    features: &[R],
    initial: &[String],
    observed: &[bool],
    k: usize,
    max_rounds: usize,
) -> Result<RefineOutcome> {
    let n = features.len();
    if initial.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: initial.len(),
        });
    }
    if observed.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: observed.len(),
        });
    }
    if !observed.iter().any(|&o| o) {
        return Err(Error::InsufficientData(
            "collective refinement needs at least one observed node".into(),
        ));
    }
    let mut labels = initial.to_vec();
    if k == 0 || max_rounds == 0 {
        return Ok(RefineOutcome {
            labels,
            rounds: 0,
            changed: 0,
            converged: k == 0,
        });
    }
    let graph = NeighborhoodGraph {
        neighbors: knn_graph(features, k)?,
        observed: observed.to_vec(),
        labels: {
            let mut a = initial.to_vec();
            a.sort();
            a.dedup();
            a
        },
    };
    let alphabet = &graph.labels;
    let nb_opts = NaiveBayesOptions {
        var_floor: COLLECTIVE_VAR_FLOOR,
        ..NaiveBayesOptions::default()
    };

    let mut changed = 0;
    let mut rounds = 0;
    let mut converged = false;
    while rounds < max_rounds {
        rounds += 1;
        let (train_x, train_y): (Vec<Vec<f64>>, Vec<String>) = (0..n)
            .filter(|&i| graph.observed[i])
            .map(|i| {
                let h = histogram(&graph.neighbors[i], &labels, alphabet);
                (augmented(features[i].as_ref(), &h), labels[i].clone())
            })
            .unzip();
        let model = match fit_naive_bayes_with(&train_x, &train_y, &nb_opts) {
            Ok(m) => Some(m),
            Err(Error::TooFewClasses { .. }) => None,
            Err(e) => return Err(e),
        };
        let mut round_changes = 0;
        for i in (0..n).filter(|&i| !graph.observed[i]) {
            let h = histogram(&graph.neighbors[i], &labels, alphabet);
            let next = match &model {
                Some(m) => m.classify(&augmented(features[i].as_ref(), &h))?,
                None => majority(&graph.neighbors[i], &labels).unwrap_or_else(|| labels[i].clone()),
            };
            if next != labels[i] {
                labels[i] = next;
                round_changes += 1;
            }
        }
        changed += round_changes;
        if round_changes == 0 {
            converged = true;
            break;
        }
    }
    Ok(RefineOutcome {
        labels,
        rounds,
        changed,
        converged,
    })
}

/// Strictly most frequent neighbour label, if there is one.
fn majority(neighbors: &[usize], labels: &[String]) -> Option<String> {
    let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
    for &j in neighbors {
        *tally.entry(labels[j].as_str()).or_default() += 1;
    }
    let top = tally.values().copied().max()?;
    let mut winners = tally.into_iter().filter(|(_, c)| *c == top);
    let first = winners.next()?;
    winners.next().is_none().then(|| first.0.to_string())
}
