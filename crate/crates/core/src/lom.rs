//! Learning-object metadata: records, ontologies, ingestion and candidate pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RECORDS_HEADER: &str = "# lomatch records v1";
pub const PAIRS_HEADER: &str = "# lomatch pairs v1";

/// Binary outcome of comparing two instances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatchLabel {
    Match,
    NonMatch,
}

impl MatchLabel {
    pub const ALL: [MatchLabel; 2] = [MatchLabel::Match, MatchLabel::NonMatch];

    pub fn as_str(self) -> &'static str {
        match self {
            MatchLabel::Match => "MATCH",
            MatchLabel::NonMatch => "NON_MATCH",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            MatchLabel::Match => MatchLabel::NonMatch,
            MatchLabel::NonMatch => MatchLabel::Match,
        }
    }
}

impl fmt::Display for MatchLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MatchLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "MATCH" => Ok(MatchLabel::Match),
            "NON_MATCH" => Ok(MatchLabel::NonMatch),
            other => Err(Error::InvalidParameter(format!("unknown label `{other}`"))),
        }
    }
}

/// One metadata record from a repository.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearningObjectRecord {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub keywords: BTreeSet<String>,
    pub resource_type: String,
    pub repository: String,
}

const RECORD_FIELDS: [&str; 6] = [
    "id",
    "title",
    "description",
    "keywords",
    "resource_type",
    "repository",
];

/// Lowercased alphanumeric tokens; anything else separates tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn normalize_keywords<I, S>(raw: I) -> BTreeSet<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = BTreeSet::new();
    for phrase in raw {
        out.extend(tokenize(phrase.as_ref()));
    }
    out
}

/// Re-tokenizes keywords. Title and description are kept verbatim.
pub fn normalize_record(raw: LearningObjectRecord) -> LearningObjectRecord {
    LearningObjectRecord {
        keywords: normalize_keywords(&raw.keywords),
        ..raw
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordFormat {
    RecordsJsonl,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    title: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    keywords: Vec<String>,
    resource_type: String,
    repository: String,
}

/// Reads a record file: one JSON object per line. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_repository<R: BufRead>(
    input: R,
    format: RecordFormat,
) -> Result<Vec<LearningObjectRecord>> {
    let RecordFormat::RecordsJsonl = format;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        let Some(obj) = value.as_object() else {
            return Err(Error::Parse {
                line: lineno,
                reason: "expected a JSON object".into(),
            });
        };
        for key in obj.keys() {
            if !RECORD_FIELDS.contains(&key.as_str()) {
                log::warn!("line {lineno}: ignoring unknown field `{key}`");
            }
        }
        let raw: RawRecord = serde_json::from_value(value).map_err(|e| Error::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        if raw.id.trim().is_empty() {
            return Err(Error::Parse {
                line: lineno,
                reason: "empty id".into(),
            });
        }
        if !seen.insert(raw.id.clone()) {
            return Err(Error::DuplicateId(raw.id));
        }
        records.push(LearningObjectRecord {
            id: raw.id,
            title: raw.title,
            description: raw.description,
            keywords: normalize_keywords(&raw.keywords),
            resource_type: raw.resource_type,
            repository: raw.repository,
        });
    }
    Ok(records)
}

pub fn write_repository<W: Write>(records: &[LearningObjectRecord], mut out: W) -> Result<()> {
    writeln!(out, "{RECORDS_HEADER}")?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        writeln!(out)?;
    }
    Ok(())
}

/// O = {C, P, H^C, H^P, I, A}. Only the class hierarchy over resource types
/// takes part in matching.
#[derive(Clone, Debug, Default)]
pub struct Ontology {
    pub name: String,
    pub classes: BTreeSet<String>,
    pub properties: BTreeSet<String>,
    pub class_hierarchy: BTreeMap<String, String>,
    pub property_hierarchy: BTreeMap<String, String>,
    pub instances: Vec<LearningObjectRecord>,
    pub axioms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Ontology {
    pub fn new(
        name: impl Into<String>,
        classes: BTreeSet<String>,
        properties: BTreeSet<String>,
        class_hierarchy: BTreeMap<String, String>,
        property_hierarchy: BTreeMap<String, String>,
        instances: Vec<LearningObjectRecord>,
        axioms: Vec<String>,
    ) -> Result<Self> {
        check_hierarchy("class", &classes, &class_hierarchy)?;
        check_hierarchy("property", &properties, &property_hierarchy)?;
        let mut index = HashMap::with_capacity(instances.len());
        for (i, rec) in instances.iter().enumerate() {
            if rec.id.is_empty() {
                return Err(Error::InvalidOntology("instance with empty id".into()));
            }
            if index.insert(rec.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(rec.id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            classes,
            properties,
            class_hierarchy,
            property_hierarchy,
            instances,
            axioms,
            index,
        })
    }

    /// Builds an ontology whose classes are the records' resource types plus
    /// every identifier mentioned in `type_hierarchy`.
    pub fn from_records(
        name: impl Into<String>,
        instances: Vec<LearningObjectRecord>,
        type_hierarchy: BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut classes: BTreeSet<String> =
            instances.iter().map(|r| r.resource_type.clone()).collect();
        for (child, parent) in &type_hierarchy {
            classes.insert(child.clone());
            classes.insert(parent.clone());
        }
        let properties = RECORD_FIELDS.iter().map(|s| s.to_string()).collect();
        Self::new(
            name,
            classes,
            properties,
            type_hierarchy,
            BTreeMap::new(),
            instances,
            Vec::new(),
        )
    }

    pub fn get(&self, id: &str) -> Option<&LearningObjectRecord> {
        self.index.get(id).map(|&i| &self.instances[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Is `ancestor` a strict ancestor of `class` in the class hierarchy?
    pub fn is_ancestor(&self, ancestor: &str, class: &str) -> bool {
        let mut cur = class;
        // acyclic, so the walk is bounded by the hierarchy size
        while let Some(parent) = self.class_hierarchy.get(cur) {
            if parent == ancestor {
                return true;
            }
            cur = parent;
        }
        false
    }

    /// Equal, or one is an ancestor of the other.
    pub fn types_related(&self, a: &str, b: &str) -> bool {
        a == b || self.is_ancestor(a, b) || self.is_ancestor(b, a)
    }
}

fn check_hierarchy(
    kind: &str,
    members: &BTreeSet<String>,
    hierarchy: &BTreeMap<String, String>,
) -> Result<()> {
    for (child, parent) in hierarchy {
        if !members.contains(child) || !members.contains(parent) {
            return Err(Error::InvalidOntology(format!(
                "{kind} hierarchy edge {child} -> {parent} references an undeclared {kind}"
            )));
        }
    }
    for start in hierarchy.keys() {
        let mut seen = HashSet::new();
        let mut cur = start.as_str();
        while let Some(parent) = hierarchy.get(cur) {
            if parent == start || !seen.insert(parent.as_str()) {
                return Err(Error::InvalidOntology(format!(
                    "{kind} hierarchy has a cycle through `{start}`"
                )));
            }
            cur = parent;
        }
    }
    Ok(())
}

/// A candidate (e_s, e_t) correspondence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InstancePair {
    pub source_id: String,
    pub target_id: String,
    pub label: Option<MatchLabel>,
}

impl InstancePair {
    pub fn new(source_id: impl Into<String>, target_id: impl Into<String>) -> Self {
        Self {
            source_id: source_id.into(),
            target_id: target_id.into(),
            label: None,
        }
    }

    pub fn labeled(
        source_id: impl Into<String>,
        target_id: impl Into<String>,
        label: MatchLabel,
    ) -> Self {
        Self {
            source_id: source_id.into(),
            target_id: target_id.into(),
            label: Some(label),
        }
    }

    pub fn key(&self) -> (&str, &str) {
        (&self.source_id, &self.target_id)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PairStrategy {
    #[default]
    FullCross,
}

/// Every source instance against every target instance, source-major.
pub fn generate_candidate_pairs(
    source: &Ontology,
    target: &Ontology,
    strategy: PairStrategy,
) -> Result<Vec<InstancePair>> {
    if source.is_empty() {
        return Err(Error::EmptyRepository(source.name.clone()));
    }
    if target.is_empty() {
        return Err(Error::EmptyRepository(target.name.clone()));
    }
    let PairStrategy::FullCross = strategy;
    let mut pairs = Vec::with_capacity(source.len() * target.len());
    for s in &source.instances {
        for t in &target.instances {
            pairs.push(InstancePair::new(s.id.clone(), t.id.clone()));
        }
    }
    Ok(pairs)
}

/// Labels `pairs` from a gold list. Pairs missing from `gold` become
/// NON_MATCH when `closed_world` is set and stay unlabeled otherwise.
pub fn apply_gold(pairs: &mut [InstancePair], gold: &[InstancePair], closed_world: bool) {
    let lookup: HashMap<(&str, &str), MatchLabel> = gold
        .iter()
        .filter_map(|g| g.label.map(|l| (g.key(), l)))
        .collect();
    for p in pairs.iter_mut() {
        p.label = match lookup.get(&(p.source_id.as_str(), p.target_id.as_str())) {
            Some(&l) => Some(l),
            None if closed_world => Some(MatchLabel::NonMatch),
            None => p.label,
        };
    }
}

/// Keeps every MATCH and unlabeled pair and a seeded sample of
/// `ratio × #MATCH` NON_MATCH pairs. Input order is preserved.
pub fn sample_negatives(
    pairs: &[InstancePair],
    ratio: f64,
    seed: u64,
) -> Result<Vec<InstancePair>> {
    if ratio.is_nan() || ratio < 0.0 || ratio.is_infinite() {
        return Err(Error::InvalidParameter(format!(
            "negative ratio must be finite and >= 0, got {ratio}"
        )));
    }
    let positives = pairs
        .iter()
        .filter(|p| p.label == Some(MatchLabel::Match))
        .count();
    let negatives: Vec<usize> = pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.label == Some(MatchLabel::NonMatch))
        .map(|(i, _)| i)
        .collect();
    let want = ((positives as f64 * ratio).round() as usize).min(negatives.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep: HashSet<usize> = index::sample(&mut rng, negatives.len(), want)
        .into_iter()
        .map(|i| negatives[i])
        .collect();
    Ok(pairs
        .iter()
        .enumerate()
        .filter(|(i, p)| p.label != Some(MatchLabel::NonMatch) || keep.contains(i))
        .map(|(_, p)| p.clone())
        .collect())
}

/// Reads `source_id,target_id[,label]` lines. A header row and `#` lines are
/// skipped; an empty label column means unlabeled.
pub fn read_pairs<R: std::io::Read>(input: R) -> Result<Vec<InstancePair>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut pairs = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = row.position().map_or(i + 1, |p| p.line() as usize);
        if i == 0 && row.get(0) == Some("source_id") {
            continue;
        }
        if row.len() < 2 || row.len() > 3 {
            return Err(Error::Parse {
                line,
                reason: format!("expected 2 or 3 columns, found {}", row.len()),
            });
        }
        let label = match row.get(2) {
            None | Some("") => None,
            Some(l) => Some(l.parse().map_err(|_| Error::Parse {
                line,
                reason: format!("bad label `{l}`"),
            })?),
        };
        pairs.push(InstancePair {
            source_id: row[0].to_string(),
            target_id: row[1].to_string(),
            label,
        });
    }
    Ok(pairs)
}

/// Reads a pair-label file; every line must carry a label.
pub fn read_pair_labels<R: std::io::Read>(input: R) -> Result<Vec<InstancePair>> {
    let pairs = read_pairs(input)?;
    if let Some(p) = pairs.iter().find(|p| p.label.is_none()) {
        return Err(Error::InvalidParameter(format!(
            "pair {},{} has no label",
            p.source_id, p.target_id
        )));
    }
    Ok(pairs)
}

pub fn write_pairs<W: Write>(pairs: &[InstancePair], out: W) -> Result<()> {
    let mut out = out;
    writeln!(out, "{PAIRS_HEADER}")?;
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(["source_id", "target_id", "label"])?;
    for p in pairs {
        w.write_record([
            p.source_id.as_str(),
            p.target_id.as_str(),
            p.label.map_or("", MatchLabel::as_str),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `child,parent` lines describing a resource-type hierarchy.
pub fn read_type_hierarchy<R: std::io::Read>(input: R) -> Result<BTreeMap<String, String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut map = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != 2 {
            let line = row.position().map_or(0, |p| p.line() as usize);
            return Err(Error::Parse {
                line,
                reason: "expected `child,parent`".into(),
            });
        }
        if &row[0] == "child" {
            continue;
        }
        map.insert(row[0].to_string(), row[1].to_string());
    }
    Ok(map)
}
