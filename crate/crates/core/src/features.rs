//! Pairwise similarity features over learning-object metadata.
//!
//! The default schema (`lom4`) has four components, in order: title edit
//! similarity, description TF-cosine, keyword Jaccard and a resource-type
//! indicator. Every component is symmetric and lies in `[0, 1]`.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lom::{tokenize, InstancePair, MatchLabel, Ontology};
use crate::par;

pub const LOM4_SCHEMA: &str = "lom4";
pub const LOM4_DIM: usize = 4;
pub const FEATURES_HEADER: &str = "# lomatch features v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
    schema_id: String,
}

impl FeatureVector {
    /// Fails unless every component is a finite value in `[0, 1]`.
    pub fn new(values: Vec<f64>, schema_id: impl Into<String>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!(
                "feature component {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            values,
            schema_id: schema_id.into(),
        })
    }

    pub fn lom4(values: [f64; LOM4_DIM]) -> Result<Self> {
        Self::new(values.to_vec(), LOM4_SCHEMA)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn schema_id(&self) -> &str {
        &self.schema_id
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// `1 - lev(a, b) / max(|a|, |b|)` over Unicode scalar values; 1 when both are empty.
pub fn edit_similarity(a: &str, b: &str) -> f64 {
    strsim::normalized_levenshtein(a, b)
}

/// Jaccard index; 1 when both sets are empty.
pub fn token_set_similarity(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

fn term_frequencies(text: &str) -> HashMap<String, f64> {
    let mut tf = HashMap::new();
    for tok in tokenize(text) {
        *tf.entry(tok).or_insert(0.0) += 1.0;
    }
    tf
}

/// Cosine of raw term-frequency vectors; 0 when either side has no tokens.
pub fn tf_cosine_similarity(a: &str, b: &str) -> f64 {
    let ta = term_frequencies(a);
    let tb = term_frequencies(b);
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let (small, large) = if ta.len() <= tb.len() {
        (&ta, &tb)
    } else {
        (&tb, &ta)
    };
    let dot: f64 = small
        .iter()
        .filter_map(|(k, v)| large.get(k).map(|w| v * w))
        .sum();
    let na: f64 = ta.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = tb.values().map(|v| v * v).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureOptions {
    /// Score two empty descriptions as 1 instead of 0.
    pub empty_descriptions_match: bool,
}

pub fn extract_features(
    pair: &InstancePair,
    source: &Ontology,
    target: &Ontology,
) -> Result<FeatureVector> {
    extract_features_with(pair, source, target, FeatureOptions::default())
}

pub fn extract_features_with(
    pair: &InstancePair,
    source: &Ontology,
    target: &Ontology,
    opts: FeatureOptions,
) -> Result<FeatureVector> {
    let s = source
        .get(&pair.source_id)
        .ok_or_else(|| Error::UnknownId(pair.source_id.clone()))?;
    let t = target
        .get(&pair.target_id)
        .ok_or_else(|| Error::UnknownId(pair.target_id.clone()))?;

    let title = edit_similarity(&s.title, &t.title);
    let description = if opts.empty_descriptions_match
        && s.description.trim().is_empty()
        && t.description.trim().is_empty()
    {
        1.0
    } else {
        tf_cosine_similarity(&s.description, &t.description)
    };
    let keywords = token_set_similarity(&s.keywords, &t.keywords);
    let related = source.types_related(&s.resource_type, &t.resource_type)
        || target.types_related(&s.resource_type, &t.resource_type);
    let kind = if related { 1.0 } else { 0.0 };
    FeatureVector::lom4([title, description, keywords, kind])
}

/// Batch extraction; runs data-parallel when the `parallel` feature is on.
pub fn extract_batch(
    pairs: &[InstancePair],
    source: &Ontology,
    target: &Ontology,
    opts: FeatureOptions,
) -> Result<Vec<FeatureRow>> {
    par::try_map(pairs, |p| {
        extract_features_with(p, source, target, opts).map(|features| FeatureRow {
            pair: p.clone(),
            features,
        })
    })
}

/// A pair together with its feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub pair: InstancePair,
    pub features: FeatureVector,
}

impl FeatureRow {
    pub fn label(&self) -> Option<MatchLabel> {
        self.pair.label
    }
}

/// Writes `source_id,target_id,f1..fd,label`; unlabeled rows leave the label empty.
pub fn write_feature_matrix<W: Write>(rows: &[FeatureRow], mut out: W) -> Result<()> {
    let dim = rows.first().map_or(LOM4_DIM, |r| r.features.dim());
    let schema = rows.first().map_or(LOM4_SCHEMA, |r| r.features.schema_id());
    writeln!(out, "{FEATURES_HEADER} schema={schema} dim={dim}")?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["source_id".to_string(), "target_id".to_string()];
    header.extend((1..=dim).map(|i| format!("f{i}")));
    header.push("label".into());
    w.write_record(&header)?;
    for r in rows {
        if r.features.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: r.features.dim(),
            });
        }
        let mut rec = vec![r.pair.source_id.clone(), r.pair.target_id.clone()];
        rec.extend(r.features.values().iter().map(|v| format_real(*v)));
        rec.push(
            r.pair
                .label
                .map_or(String::new(), |l| l.as_str().to_string()),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that round-trips through `f64::from_str`.
pub fn format_real(v: f64) -> String {
    format!("{v}")
}

pub fn read_feature_matrix<R: Read>(mut input: R) -> Result<Vec<FeatureRow>> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let schema = text
        .lines()
        .filter(|l| l.starts_with('#'))
        .flat_map(|l| l.split_whitespace())
        .find_map(|tok| tok.strip_prefix("schema="))
        .unwrap_or(LOM4_SCHEMA)
        .to_string();

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut dim = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.get(0) == Some("source_id") {
            continue;
        }
        if rec.len() < 3 {
            return Err(Error::Parse {
                line,
                reason: "expected source_id,target_id,features...".into(),
            });
        }
        let rest: Vec<&str> = rec.iter().skip(2).collect();
        let (feats, label) = match rest.last().copied() {
            Some("") => (&rest[..rest.len() - 1], None),
            Some(l @ ("MATCH" | "NON_MATCH")) => {
                (&rest[..rest.len() - 1], Some(l.parse::<MatchLabel>()?))
            }
            _ => (&rest[..], None),
        };
        let values = feats
            .iter()
            .map(|v| {
                v.parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    reason: format!("bad feature `{v}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: values.len(),
                })
            }
            _ => {}
        }
        let features = FeatureVector::new(values, schema.clone()).map_err(|e| Error::Parse {
            line,
            reason: e.to_string(),
        })?;
        rows.push(FeatureRow {
            pair: InstancePair {
                source_id: rec[0].to_string(),
                target_id: rec[1].to_string(),
                label,
            },
            features,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lom::{normalize_keywords, LearningObjectRecord};
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    /// Textbook O(nm) Levenshtein table over chars.
    fn levenshtein_oracle(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for (j, cell) in d[0].iter_mut().enumerate() {
            *cell = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
            }
        }
        d[a.len()][b.len()]
    }

    fn set(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn record(id: &str, title: &str, desc: &str, kw: &[&str], ty: &str) -> LearningObjectRecord {
        LearningObjectRecord {
            id: id.into(),
            title: title.into(),
            description: desc.into(),
            keywords: normalize_keywords(kw),
            resource_type: ty.into(),
            repository: "r".into(),
        }
    }

    fn single(name: &str, r: LearningObjectRecord) -> Ontology {
        Ontology::from_records(name, vec![r], BTreeMap::new()).unwrap()
    }

    #[test]
    fn edit_similarity_cases() {
        assert_eq!(edit_similarity("abc", "abc"), 1.0);
        assert_eq!(levenshtein_oracle("kitten", "sitting"), 3);
        let expected = 1.0 - 3.0 / 7.0;
        assert!((edit_similarity("kitten", "sitting") - expected).abs() < 1e-12);
        assert_eq!(edit_similarity("", "x"), 0.0);
        assert_eq!(edit_similarity("", ""), 1.0);
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(
            token_set_similarity(&set(&["a", "b", "c"]), &set(&["b", "c", "d"])),
            0.5
        );
        assert_eq!(
            token_set_similarity(&set(&["x", "y"]), &set(&["x", "y"])),
            1.0
        );
        assert_eq!(token_set_similarity(&set(&["a"]), &set(&["b"])), 0.0);
        assert_eq!(token_set_similarity(&set(&[]), &set(&[])), 1.0);
    }

    #[test]
    fn tf_cosine_cases() {
        assert!((tf_cosine_similarity("a b", "a b") - 1.0).abs() < 1e-12);
        assert_eq!(tf_cosine_similarity("a b", "c d"), 0.0);
        assert!((tf_cosine_similarity("a b", "a c") - 0.5).abs() < 1e-12);
        assert_eq!(tf_cosine_similarity("", "a"), 0.0);
        assert_eq!(tf_cosine_similarity("", ""), 0.0);
    }

    #[test]
    fn identical_records_are_all_ones() {
        let r = record(
            "x",
            "Graph algorithms",
            "Shortest paths and flows",
            &["graphs"],
            "lecture",
        );
        let s = single("s", r.clone());
        let t = single("t", r);
        let f = extract_features(&InstancePair::new("x", "x"), &s, &t).unwrap();
        assert_eq!(f.values(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn disjoint_records_are_all_zeros() {
        let s = single("s", record("a", "abc", "alpha beta", &["one"], "lecture"));
        let t = single("t", record("b", "xyz", "gamma delta", &["two"], "quiz"));
        let f = extract_features(&InstancePair::new("a", "b"), &s, &t).unwrap();
        assert_eq!(f.values(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn mixed_record_features() {
        let s = single("s", record("a", "kitten", "", &["one"], "video"));
        let t = single("t", record("b", "sitting", "", &["two"], "video"));
        let f = extract_features(&InstancePair::new("a", "b"), &s, &t).unwrap();
        let title = 1.0 - levenshtein_oracle("kitten", "sitting") as f64 / 7.0;
        assert!((f.values()[0] - title).abs() < 1e-12);
        assert!((f.values()[0] - 0.5714).abs() < 1e-4);
        assert_eq!(&f.values()[1..], &[0.0, 0.0, 1.0]);

        let opts = FeatureOptions {
            empty_descriptions_match: true,
        };
        let f = extract_features_with(&InstancePair::new("a", "b"), &s, &t, opts).unwrap();
        assert_eq!(f.values()[1], 1.0);
    }

    #[test]
    fn unresolvable_id() {
        let s = single("s", record("a", "t", "", &[], "v"));
        let err = extract_features(&InstancePair::new("missing", "a"), &s, &s);
        assert!(matches!(err, Err(Error::UnknownId(id)) if id == "missing"));
    }

    #[test]
    fn hierarchy_counts_as_type_match() {
        let h = BTreeMap::from([("video".to_string(), "media".to_string())]);
        let s = Ontology::from_records("s", vec![record("a", "t", "", &[], "video")], h).unwrap();
        let t = single("t", record("b", "t", "", &[], "media"));
        let f = extract_features(&InstancePair::new("a", "b"), &s, &t).unwrap();
        assert_eq!(f.values()[3], 1.0);
    }

    #[test]
    fn rejects_out_of_range_components() {
        assert!(FeatureVector::new(vec![0.5, 1.2], "x").is_err());
        assert!(FeatureVector::new(vec![f64::NAN], "x").is_err());
    }

    #[test]
    fn matrix_round_trip_with_mixed_labels() {
        let rows = vec![
            FeatureRow {
                pair: InstancePair::labeled("a", "b", MatchLabel::Match),
                features: FeatureVector::lom4([0.1, 0.2, 0.30000000000000004, 1.0]).unwrap(),
            },
            FeatureRow {
                pair: InstancePair::new("a", "c"),
                features: FeatureVector::lom4([0.0, 0.0, 0.0, 0.0]).unwrap(),
            },
        ];
        let mut buf = Vec::new();
        write_feature_matrix(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(FEATURES_HEADER));
        assert_eq!(read_feature_matrix(buf.as_slice()).unwrap(), rows);
        // headerless, label column omitted
        let bare = read_feature_matrix("x,y,0.5,0.5,0.5,0.5\n".as_bytes()).unwrap();
        assert_eq!(bare[0].pair.label, None);
        assert_eq!(bare[0].features.dim(), 4);
        assert!(read_feature_matrix("x,y,0.5,0.5\nx,z,0.5\n".as_bytes()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn similarities_bounded_and_symmetric(
            a in "\\PC{0,16}",
            b in "\\PC{0,16}",
            ka in proptest::collection::btree_set("[a-d]{1,2}", 0..5),
            kb in proptest::collection::btree_set("[a-d]{1,2}", 0..5),
        ) {
            for (x, y) in [
                (edit_similarity(&a, &b), edit_similarity(&b, &a)),
                (tf_cosine_similarity(&a, &b), tf_cosine_similarity(&b, &a)),
                (token_set_similarity(&ka, &kb), token_set_similarity(&kb, &ka)),
            ] {
                prop_assert!((0.0..=1.0).contains(&x));
                prop_assert!((x - y).abs() < 1e-12);
            }
            let lev = levenshtein_oracle(&a, &b);
            let max = a.chars().count().max(b.chars().count());
            let want = if max == 0 { 1.0 } else { 1.0 - lev as f64 / max as f64 };
            prop_assert!((edit_similarity(&a, &b) - want).abs() < 1e-12);
        }
    }
}
