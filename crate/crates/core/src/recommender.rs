//! Hybrid recommendation: user-user collaborative filtering blended with
//! content similarity over learning-object feature profiles.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_features_with, format_real, FeatureOptions};
use crate::lom::{InstancePair, LearningObjectRecord, Ontology};
use crate::par;

pub const RATINGS_HEADER: &str = "# lomatch ratings v1";
pub const RECOMMENDATIONS_HEADER: &str = "# lomatch recommendations v1";
pub const DEFAULT_K_NEIGHBORS: usize = 10;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const MIN_CO_RATED: usize = 2;
/// Variances and weights below this count as zero.
const NEAR_ZERO: f64 = 1e-12;

/// Item id → feature vector.
pub type ItemFeatures = BTreeMap<String, Vec<f64>>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl Default for RatingScale {
    fn default() -> Self {
        Self { min: 1.0, max: 5.0 }
    }
}

impl RatingScale {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || min >= max {
            return Err(Error::InvalidParameter(format!(
                "rating scale [{min}, {max}] is empty"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.min && r <= self.max
    }

    pub fn clamp(&self, r: f64) -> f64 {
        r.clamp(self.min, self.max)
    }

    pub fn normalize(&self, r: f64) -> f64 {
        (r - self.min) / (self.max - self.min)
    }
}

/// Sparse user × item ratings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RatingMatrix {
    scale: RatingScale,
    by_user: BTreeMap<String, BTreeMap<String, f64>>,
}

impl RatingMatrix {
    pub fn new(scale: RatingScale) -> Self {
        Self {
            scale,
            by_user: BTreeMap::new(),
        }
    }

    pub fn from_triples<I, U, T>(scale: RatingScale, triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (U, T, f64)>,
        U: Into<String>,
        T: Into<String>,
    {
        let mut m = Self::new(scale);
        for (u, i, r) in triples {
            m.insert(u, i, r)?;
        }
        Ok(m)
    }

    pub fn insert(
        &mut self,
        user: impl Into<String>,
        item: impl Into<String>,
        rating: f64,
    ) -> Result<()> {
        let (user, item) = (user.into(), item.into());
        if !self.scale.contains(rating) {
            return Err(Error::InvalidParameter(format!(
                "rating {rating} for ({user}, {item}) outside [{}, {}]",
                self.scale.min, self.scale.max
            )));
        }
        let row = self.by_user.entry(user.clone()).or_default();
        if row.contains_key(&item) {
            return Err(Error::InvalidParameter(format!(
                "duplicate rating for ({user}, {item})"
            )));
        }
        row.insert(item, rating);
        Ok(())
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.by_user.keys().map(String::as_str)
    }

    pub fn items(&self) -> BTreeSet<&str> {
        self.by_user
            .values()
            .flat_map(|r| r.keys().map(String::as_str))
            .collect()
    }

    pub fn ratings_of(&self, user: &str) -> Option<&BTreeMap<String, f64>> {
        self.by_user.get(user)
    }

    pub fn rating(&self, user: &str, item: &str) -> Option<f64> {
        self.by_user.get(user)?.get(item).copied()
    }

    pub fn mean(&self, user: &str) -> Option<f64> {
        let r = self.by_user.get(user)?;
        (!r.is_empty()).then(|| r.values().sum::<f64>() / r.len() as f64)
    }

    pub fn len(&self) -> usize {
        self.by_user.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads `user_id,item_id,rating` lines; `#` lines and a leading column header are skipped.
pub fn read_ratings<R: Read>(input: R, scale: RatingScale) -> Result<RatingMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut m = RatingMatrix::new(scale);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.len() != 3 {
            return Err(Error::Parse {
                line,
                reason: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        if i == 0 && &rec[0] == "user_id" {
            continue;
        }
        let rating: f64 = rec[2].parse().map_err(|_| Error::Parse {
            line,
            reason: format!("bad rating {:?}", &rec[2]),
        })?;
        m.insert(&rec[0], &rec[1], rating)
            .map_err(|e| Error::Parse {
                line,
                reason: e.to_string(),
            })?;
    }
    Ok(m)
}

pub fn write_ratings<W: Write>(m: &RatingMatrix, mut out: W) -> Result<()> {
    writeln!(out, "{RATINGS_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "item_id", "rating"])?;
    for (u, row) in &m.by_user {
        for (i, r) in row {
            w.write_record([u.as_str(), i.as_str(), &format_real(*r)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Pearson correlation over co-rated items, each user centred on the
/// co-rated mean. 0 below [`MIN_CO_RATED`] items or with zero variance.
pub fn pearson_user_similarity(ratings: &RatingMatrix, u: &str, v: &str) -> Result<f64> {
    let ru = ratings
        .ratings_of(u)
        .ok_or_else(|| Error::UnknownUser(u.into()))?;
    let rv = ratings
        .ratings_of(v)
        .ok_or_else(|| Error::UnknownUser(v.into()))?;
    let common: Vec<(f64, f64)> = ru
        .iter()
        .filter_map(|(i, a)| rv.get(i).map(|b| (*a, *b)))
        .collect();
    if common.len() < MIN_CO_RATED {
        return Ok(0.0);
    }
    let n = common.len() as f64;
    let mu = common.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = common.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut num, mut su, mut sv) = (0.0, 0.0, 0.0);
    for (a, b) in &common {
        num += (a - mu) * (b - mv);
        su += (a - mu).powi(2);
        sv += (b - mv).powi(2);
    }
    if su < NEAR_ZERO || sv < NEAR_ZERO {
        return Ok(0.0);
    }
    Ok((num / (su.sqrt() * sv.sqrt())).clamp(-1.0, 1.0))
}

/// Positive-weight neighbours of `u` who rated `item`, strongest first,
/// truncated to `k`; ties by user id.
fn neighbors(ratings: &RatingMatrix, u: &str, item: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for v in ratings.users() {
        if v == u || ratings.rating(v, item).is_none() {
            continue;
        }
        let w = pearson_user_similarity(ratings, u, v)?;
        if w > NEAR_ZERO {
            out.push((v.to_string(), w));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out.truncate(k);
    Ok(out)
}

/// `Σ w (r_vi − r̄_v) / Σ |w|` over qualifying neighbours, or `None`.
pub fn cf_deviation(ratings: &RatingMatrix, u: &str, item: &str, k: usize) -> Result<Option<f64>> {
    if ratings.ratings_of(u).is_none_or(BTreeMap::is_empty) {
        return Err(Error::ColdStart(u.into()));
    }
    let ns = neighbors(ratings, u, item, k)?;
    if ns.is_empty() {
        return Ok(None);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (v, w) in &ns {
        let rv = ratings.rating(v, item).expect("neighbour rated the item");
        num += w * (rv - ratings.mean(v).expect("neighbour has ratings"));
        den += w.abs();
    }
    Ok(Some(num / den))
}

/// Mean-centred neighbourhood prediction, clamped to the rating scale.
/// Falls back to the user's mean when no neighbour qualifies.
pub fn predict_rating_cf(ratings: &RatingMatrix, u: &str, item: &str, k: usize) -> Result<f64> {
    let dev = cf_deviation(ratings, u, item, k)?;
    let mean = ratings.mean(u).expect("checked by cf_deviation");
    Ok(ratings.scale().clamp(mean + dev.unwrap_or(0.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub vector: Vec<f64>,
    pub mean_rating: f64,
}

/// Mean of rated items' vectors weighted by `(r − r_min) / (r_max − r_min)`.
pub fn build_content_profile(
    ratings: &RatingMatrix,
    u: &str,
    items: &ItemFeatures,
) -> Result<UserProfile> {
    let rated = ratings
        .ratings_of(u)
        .filter(|r| !r.is_empty())
        .ok_or_else(|| Error::ColdStart(u.into()))?;
    let dim = items.values().next().map_or(0, Vec::len);
    let mut acc = vec![0.0; dim];
    let mut total = 0.0;
    for (item, &r) in rated {
        let x = items
            .get(item)
            .ok_or_else(|| Error::UnknownId(item.clone()))?;
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: x.len(),
            });
        }
        let w = ratings.scale().normalize(r);
        total += w;
        for (a, v) in acc.iter_mut().zip(x) {
            *a += w * v;
        }
    }
    if total == 0.0 {
        return Err(Error::ColdStart(u.into()));
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Ok(UserProfile {
        user_id: u.into(),
        vector: acc,
        mean_rating: ratings.mean(u).expect("non-empty"),
    })
}

/// Cosine similarity clamped to [0, 1]; 0 when either vector is zero.
pub fn score_content(profile: &[f64], item: &[f64]) -> Result<f64> {
    if profile.len() != item.len() {
        return Err(Error::DimensionMismatch {
            expected: profile.len(),
            found: item.len(),
        });
    }
    Ok(crate::matcher::cosine(profile, item).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub item_id: String,
    pub score: f64,
    /// Normalized CF prediction; absent for users with no ratings.
    pub cf: Option<f64>,
    pub cb: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridConfig {
    pub k_neighbors: usize,
    pub alpha: f64,
    pub top_k: usize,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            k_neighbors: DEFAULT_K_NEIGHBORS,
            alpha: DEFAULT_ALPHA,
            top_k: 10,
        }
    }
}

/// Top `top_k` unrated items by `α·cf + (1−α)·cb`, ties by item id.
///
/// Candidates are the items with feature vectors that `u` has not rated. A
/// user without ratings is served from `seed_profile` by content alone; a
/// rated user whose profile carries no weight gets `cb = 0` unless a seed
/// profile is given.
pub fn recommend_hybrid(
    ratings: &RatingMatrix,
    items: &ItemFeatures,
    u: &str,
    config: &HybridConfig,
    seed_profile: Option<&[f64]>,
) -> Result<Vec<Recommendation>> {
    if config.top_k == 0 {
        return Err(Error::InvalidParameter("top_k must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&config.alpha) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in [0, 1], got {}",
            config.alpha
        )));
    }
    let rated = ratings.ratings_of(u).filter(|r| !r.is_empty());
    let dim = items.values().next().map_or(0, Vec::len);
    let profile: Vec<f64> = match (rated, seed_profile) {
        (None, None) => return Err(Error::ColdStart(u.into())),
        (None, Some(seed)) => seed.to_vec(),
        (Some(_), seed) => match build_content_profile(ratings, u, items) {
            Ok(p) => p.vector,
            Err(Error::ColdStart(_)) => seed.map_or_else(|| vec![0.0; dim], <[f64]>::to_vec),
            Err(e) => return Err(e),
        },
    };
    let candidates: Vec<(&String, &Vec<f64>)> = items
        .iter()
        .filter(|(id, _)| rated.is_none_or(|r| !r.contains_key(*id)))
        .collect();
    let scale = ratings.scale();
    let mut recs = par::try_map(&candidates, |(id, x)| {
        let cb = score_content(&profile, x)?;
        let (cf, alpha) = match rated {
            Some(_) => (
                Some(scale.normalize(predict_rating_cf(ratings, u, id, config.k_neighbors)?)),
                config.alpha,
            ),
            None => (None, 0.0),
        };
        let score = alpha * cf.unwrap_or(0.0) + (1.0 - alpha) * cb;
        Ok::<_, Error>(Recommendation {
            item_id: (*id).clone(),
            score,
            cf,
            cb,
            alpha,
        })
    })?;
    recs.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.item_id.cmp(&b.item_id))
    });
    recs.truncate(config.top_k);
    Ok(recs)
}

/// Item vectors as the concatenated pair features of each item against each
/// anchor record.
pub fn item_features_from_records(
    items: &[LearningObjectRecord],
    anchors: &[LearningObjectRecord],
    type_hierarchy: &BTreeMap<String, String>,
    opts: FeatureOptions,
) -> Result<ItemFeatures> {
    if anchors.is_empty() {
        return Err(Error::EmptyRepository("anchors".into()));
    }
    let item_onto = Ontology::from_records("items", items.to_vec(), type_hierarchy.clone())?;
    let anchor_onto = Ontology::from_records("anchors", anchors.to_vec(), type_hierarchy.clone())?;
    let vectors = par::try_map(items, |it| {
        let mut v = Vec::with_capacity(anchors.len() * 4);
        for a in anchors {
            let f = extract_features_with(
                &InstancePair::new(&it.id, &a.id),
                &item_onto,
                &anchor_onto,
                opts,
            )?;
            v.extend_from_slice(f.values());
        }
        Ok::<_, Error>((it.id.clone(), v))
    })?;
    Ok(vectors.into_iter().collect())
}

/// Writes `user_id,item_id,score,cf,cb,alpha`, one line per recommendation.
pub fn write_recommendations<W: Write>(
    recs: &[(String, Vec<Recommendation>)],
    mut out: W,
) -> Result<()> {
    writeln!(out, "{RECOMMENDATIONS_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "item_id", "score", "cf", "cb", "alpha"])?;
    for (user, list) in recs {
        for r in list {
            w.write_record([
                user.as_str(),
                r.item_id.as_str(),
                &format_real(r.score),
                &r.cf.map_or(String::new(), format_real),
                &format_real(r.cb),
                &format_real(r.alpha),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(triples: &[(&str, &str, f64)]) -> RatingMatrix {
        RatingMatrix::from_triples(
            RatingScale::default(),
            triples.iter().map(|&(u, i, r)| (u, i, r)),
        )
        .unwrap()
    }

    #[test]
    fn rejects_duplicates_and_out_of_scale() {
        let mut m = RatingMatrix::new(RatingScale::default());
        m.insert("u", "i", 3.0).unwrap();
        assert!(m.insert("u", "i", 4.0).is_err());
        assert!(m.insert("u", "j", 6.0).is_err());
        assert!(RatingScale::new(5.0, 1.0).is_err());
    }

    #[test]
    fn pearson_cases() {
        let m = matrix(&[
            ("a", "x", 1.0),
            ("a", "y", 3.0),
            ("a", "z", 5.0),
            ("b", "x", 1.0),
            ("b", "y", 3.0),
            ("b", "z", 5.0),
            ("c", "x", 5.0),
            ("c", "y", 3.0),
            ("c", "z", 1.0),
            ("d", "x", 4.0),
        ]);
        assert!((pearson_user_similarity(&m, "a", "b").unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson_user_similarity(&m, "a", "c").unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson_user_similarity(&m, "a", "d").unwrap(), 0.0);
        assert!(matches!(
            pearson_user_similarity(&m, "a", "nobody"),
            Err(Error::UnknownUser(_))
        ));
    }

    #[test]
    fn single_neighbor_formula() {
        let m = matrix(&[
            ("u", "a", 2.0),
            ("u", "b", 4.0),
            ("v", "a", 3.0),
            ("v", "b", 4.0),
            ("v", "c", 5.0),
        ]);
        assert!((pearson_user_similarity(&m, "u", "v").unwrap() - 1.0).abs() < 1e-12);
        // r̄_u = 3, r̄_v = 4, v rated c with 5
        assert!((predict_rating_cf(&m, "u", "c", 10).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(predict_rating_cf(&m, "u", "zzz", 10).unwrap(), 3.0);
        assert!(matches!(
            predict_rating_cf(&m, "nobody", "c", 10),
            Err(Error::ColdStart(_))
        ));
    }

    #[test]
    fn content_profile_cases() {
        let items: ItemFeatures = [
            ("a".to_string(), vec![1.0, 0.0]),
            ("b".to_string(), vec![0.0, 1.0]),
        ]
        .into_iter()
        .collect();
        let m = matrix(&[("u", "a", 5.0)]);
        assert_eq!(
            build_content_profile(&m, "u", &items).unwrap().vector,
            vec![1.0, 0.0]
        );
        let m = matrix(&[("u", "a", 4.0), ("u", "b", 4.0)]);
        assert_eq!(
            build_content_profile(&m, "u", &items).unwrap().vector,
            vec![0.5, 0.5]
        );
        let m = matrix(&[("u", "a", 1.0), ("u", "b", 1.0)]);
        assert!(matches!(
            build_content_profile(&m, "u", &items),
            Err(Error::ColdStart(_))
        ));
    }

    #[test]
    fn content_score_cases() {
        assert!((score_content(&[0.3, 0.4], &[0.3, 0.4]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(score_content(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(score_content(&[0.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(score_content(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn cold_start_needs_seed_profile() {
        let items: ItemFeatures = [
            ("a".to_string(), vec![1.0, 0.0]),
            ("b".to_string(), vec![0.2, 1.0]),
        ]
        .into_iter()
        .collect();
        let m = matrix(&[("v", "a", 5.0)]);
        let cfg = HybridConfig::default();
        assert!(matches!(
            recommend_hybrid(&m, &items, "new", &cfg, None),
            Err(Error::ColdStart(_))
        ));
        let recs = recommend_hybrid(&m, &items, "new", &cfg, Some(&[0.0, 1.0])).unwrap();
        assert_eq!(recs[0].item_id, "b");
        assert!(recs.iter().all(|r| r.cf.is_none() && r.alpha == 0.0));
    }

    fn random_case() -> impl Strategy<Value = (RatingMatrix, ItemFeatures)> {
        let n_items = 8;
        (
            proptest::collection::vec(
                proptest::collection::vec(proptest::option::of(1u8..=5), n_items),
                2..6,
            ),
            proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 3), n_items),
        )
            .prop_map(move |(grid, feats)| {
                let mut m = RatingMatrix::new(RatingScale::default());
                for (u, row) in grid.iter().enumerate() {
                    for (i, r) in row.iter().enumerate() {
                        if let Some(r) = r {
                            m.insert(format!("u{u}"), format!("i{i}"), *r as f64)
                                .unwrap();
                        }
                    }
                }
                m.insert("u0", "i0", 3.0).ok();
                let items = feats
                    .into_iter()
                    .enumerate()
                    .map(|(i, f)| (format!("i{i}"), f))
                    .collect();
                (m, items)
            })
    }

    proptest! {
        #[test]
        fn similarity_is_symmetric((m, _) in random_case()) {
            let users: Vec<&str> = m.users().collect();
            for a in &users {
                for b in &users {
                    prop_assert_eq!(pearson_user_similarity(&m, a, b).unwrap(), pearson_user_similarity(&m, b, a).unwrap());
                }
            }
        }

        #[test]
        fn recommendations_exclude_rated_items((m, items) in random_case(), alpha in 0.0f64..=1.0, top_k in 1usize..10) {
            let cfg = HybridConfig { alpha, top_k, ..HybridConfig::default() };
            let recs = recommend_hybrid(&m, &items, "u0", &cfg, None).unwrap();
            let rated = m.ratings_of("u0").unwrap();
            prop_assert_eq!(recs.len(), top_k.min(items.len() - rated.len()));
            for r in &recs {
                prop_assert!(!rated.contains_key(&r.item_id));
                prop_assert!((0.0..=1.0).contains(&r.score));
            }
            for w in recs.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
        }

        #[test]
        fn shifting_a_user_keeps_deviations((m, _) in random_case(), shift in -0.5f64..0.5) {
            let mut shifted = RatingMatrix::new(RatingScale::new(0.0, 6.0).unwrap());
            let mut base = RatingMatrix::new(RatingScale::new(0.0, 6.0).unwrap());
            for u in m.users() {
                for (i, r) in m.ratings_of(u).unwrap() {
                    base.insert(u, i.as_str(), *r).unwrap();
                    shifted.insert(u, i.as_str(), if u == "u0" { r + shift } else { *r }).unwrap();
                }
            }
            for i in 0..8 {
                let item = format!("i{i}");
                let a = cf_deviation(&base, "u0", &item, 10).unwrap();
                let b = cf_deviation(&shifted, "u0", &item, 10).unwrap();
                match (a, b) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
                    (a, b) => prop_assert_eq!(a, b),
                }
            }
        }
    }
}
