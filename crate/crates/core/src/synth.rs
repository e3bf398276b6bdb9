//! Seeded synthetic corpora: labeled feature rows, record repositories with
//! known duplicates, and rating matrices with topic preferences.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureRow, FeatureVector, LOM4_DIM};
use crate::lom::{InstancePair, LearningObjectRecord, MatchLabel};
use crate::recommender::{RatingMatrix, RatingScale};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairCorpusSpec {
    pub pairs: usize,
    pub labeled_fraction: f64,
    pub match_fraction: f64,
    pub match_mean: [f64; LOM4_DIM],
    pub non_match_mean: [f64; LOM4_DIM],
    pub sigma: f64,
}

impl Default for PairCorpusSpec {
    fn default() -> Self {
        Self {
            pairs: 200,
            labeled_fraction: 0.1,
            match_fraction: 0.5,
            match_mean: [0.9, 0.9, 0.9, 1.0],
            non_match_mean: [0.2, 0.2, 0.1, 0.0],
            sigma: 0.08,
        }
    }
}

/// Labeled and held-out rows. Held-out rows keep their gold labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PairCorpus {
    pub labeled: Vec<FeatureRow>,
    pub unlabeled: Vec<FeatureRow>,
}

impl PairCorpus {
    pub fn all(&self) -> Vec<FeatureRow> {
        let mut rows: Vec<FeatureRow> = self
            .labeled
            .iter()
            .chain(&self.unlabeled)
            .cloned()
            .collect();
        rows.sort_by(|a, b| a.pair.key().cmp(&b.pair.key()));
        rows
    }
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidParameter(format!(
            "{name} must lie in [0, 1], got {v}"
        )));
    }
    Ok(())
}

/// Gaussian feature rows around a MATCH and a NON_MATCH mean, clamped to
/// [0, 1]. The labeled subset is drawn per class.
pub fn pair_corpus(spec: &PairCorpusSpec, seed: u64) -> Result<PairCorpus> {
    check_fraction("labeled_fraction", spec.labeled_fraction)?;
    check_fraction("match_fraction", spec.match_fraction)?;
    if spec.sigma.is_nan() || spec.sigma < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sigma must be non-negative, got {}",
            spec.sigma
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let n_match = (spec.pairs as f64 * spec.match_fraction).round() as usize;

    let mut rows = Vec::with_capacity(spec.pairs);
    for i in 0..spec.pairs {
        let label = if i < n_match {
            MatchLabel::Match
        } else {
            MatchLabel::NonMatch
        };
        let mean = if label == MatchLabel::Match {
            spec.match_mean
        } else {
            spec.non_match_mean
        };
        let mut v = [0.0; LOM4_DIM];
        for (x, m) in v.iter_mut().zip(mean) {
            *x = (m + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
        rows.push(FeatureRow {
            pair: InstancePair::labeled(format!("s{i:04}"), format!("t{i:04}"), label),
            features: FeatureVector::lom4(v)?,
        });
    }

    let mut is_labeled = vec![false; rows.len()];
    for class in MatchLabel::ALL {
        let mut idx: Vec<usize> = (0..rows.len())
            .filter(|&i| rows[i].label() == Some(class))
            .collect();
        idx.shuffle(&mut rng);
        let take = (idx.len() as f64 * spec.labeled_fraction).round() as usize;
        for &i in &idx[..take] {
            is_labeled[i] = true;
        }
    }
    let (labeled, unlabeled): (Vec<_>, Vec<_>) =
        rows.into_iter().zip(is_labeled).partition(|(_, l)| *l);
    Ok(PairCorpus {
        labeled: labeled.into_iter().map(|(r, _)| r).collect(),
        unlabeled: unlabeled.into_iter().map(|(r, _)| r).collect(),
    })
}

const TOPICS: [&str; 16] = [
    "algebra",
    "geometry",
    "calculus",
    "statistics",
    "chemistry",
    "physics",
    "biology",
    "ecology",
    "history",
    "geography",
    "grammar",
    "poetry",
    "programming",
    "databases",
    "networks",
    "robotics",
];

const FORMS: [&str; 6] = [
    "introduction",
    "workshop",
    "primer",
    "lab",
    "review",
    "casebook",
];
const RESOURCE_TYPES: [&str; 4] = ["lecture", "exercise", "simulation", "assessment"];
const FILLER: [&str; 10] = [
    "students", "explore", "concepts", "with", "guided", "examples", "and", "practice", "tasks",
    "online",
];

fn perturb_title(title: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = title.chars().collect();
    if chars.len() > 2 {
        let i = rng.random_range(0..chars.len());
        match rng.random_range(0..3) {
            0 => {
                chars.remove(i);
            }
            1 => chars.insert(i, 'e'),
            _ => chars[i] = 'a',
        }
    }
    chars.into_iter().collect()
}

/// Two repositories of `n` records each, the target holding a perturbed copy
/// of every source record under a fresh id, shuffled. Returns the gold
/// MATCH pairs alongside.
pub fn record_corpus(
    n: usize,
    seed: u64,
) -> Result<(
    Vec<LearningObjectRecord>,
    Vec<LearningObjectRecord>,
    Vec<InstancePair>,
)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut source = Vec::with_capacity(n);
    for i in 0..n {
        let topic = TOPICS[rng.random_range(0..TOPICS.len())];
        let second = TOPICS[rng.random_range(0..TOPICS.len())];
        let form = FORMS[rng.random_range(0..FORMS.len())];
        let words: Vec<&str> = (0..8)
            .map(|_| FILLER[rng.random_range(0..FILLER.len())])
            .collect();
        source.push(LearningObjectRecord {
            id: format!("a{i:04}"),
            title: format!("{topic} {form} {}", i % 7 + 1),
            description: format!("{topic} {second} {}", words.join(" ")),
            keywords: [topic, second, form]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            resource_type: RESOURCE_TYPES[rng.random_range(0..RESOURCE_TYPES.len())].into(),
            repository: "alpha".into(),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut target = Vec::with_capacity(n);
    let mut gold = Vec::with_capacity(n);
    for (j, &i) in order.iter().enumerate() {
        let s = &source[i];
        let mut keywords = s.keywords.clone();
        if keywords.len() > 1 && rng.random_bool(0.5) {
            let drop = keywords.iter().next().cloned().expect("non-empty");
            keywords.remove(&drop);
        }
        let mut words: Vec<&str> = s.description.split(' ').collect();
        if words.len() > 3 {
            words.remove(rng.random_range(2..words.len()));
        }
        let id = format!("b{j:04}");
        gold.push(InstancePair::labeled(&s.id, &id, MatchLabel::Match));
        target.push(LearningObjectRecord {
            id,
            title: perturb_title(&s.title, &mut rng),
            description: words.join(" "),
            keywords,
            resource_type: s.resource_type.clone(),
            repository: "beta".into(),
        });
    }
    gold.sort_by(|a, b| a.key().cmp(&b.key()));
    Ok((source, target, gold))
}

/// Users prefer one of two item groups: preferred items are rated 4-5 and
/// the rest 1-2. Each cell is observed with probability `density`.
pub fn ratings_corpus(users: usize, items: usize, density: f64, seed: u64) -> Result<RatingMatrix> {
    check_fraction("density", density)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = RatingMatrix::new(RatingScale::default());
    for u in 0..users {
        let group = u % 2;
        for i in 0..items {
            if !rng.random_bool(density) {
                continue;
            }
            let liked = i % 2 == group;
            let r = if liked {
                rng.random_range(4..=5)
            } else {
                rng.random_range(1..=2)
            };
            m.insert(format!("u{u:03}"), format!("a{i:04}"), r as f64)?;
        }
    }
    Ok(m)
}
