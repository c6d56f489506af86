//! Label canonicalization, dataset-to-model class mapping, and per-concept
//! evaluation tables.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{GroupAssignment, GroupId, PredictionRecord};

/// Canonical concept key, e.g. `necktie.n.01` or `bookcase`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ConceptId(String);

impl ConceptId {
    /// Trims the label and collapses inner whitespace runs. Synset keys pass through
    /// unchanged. Idempotent.
    pub fn canonicalize(raw: &str) -> Result<Self, ConceptError> {
        let mut out = String::with_capacity(raw.len());
        for word in raw.split_whitespace() {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(word);
        }
        if out.is_empty() {
            return Err(ConceptError::EmptyLabel);
        }
        Ok(Self(out))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Human-readable form: synset `.pos.NN` suffix dropped, underscores as spaces.
    pub fn display_name(&self) -> String {
        let stem = synset_stem(&self.0).unwrap_or(&self.0);
        stem.replace('_', " ")
    }
}

/// `male_child.n.01` → `male_child`; `None` when the key has no synset suffix.
fn synset_stem(key: &str) -> Option<&str> {
    let (rest, sense) = key.rsplit_once('.')?;
    if sense.is_empty() || !sense.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let (stem, pos) = rest.rsplit_once('.')?;
    if stem.is_empty() || !matches!(pos, "n" | "v" | "a" | "s" | "r") {
        return None;
    }
    Some(stem)
}

impl TryFrom<String> for ConceptId {
    type Error = ConceptError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::canonicalize(&value)
    }
}

impl From<ConceptId> for String {
    fn from(c: ConceptId) -> Self {
        c.0
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl core::borrow::Borrow<str> for ConceptId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConceptError {
    #[error("empty label")]
    EmptyLabel,
    #[error("dataset label {0:?} maps to no model classes")]
    EmptyMapping(String),
    #[error("dataset label {0:?} has no mapping")]
    Unmapped(String),
    #[error("concept {0} has no scored images")]
    NoScoredImages(ConceptId),
}

/// Something dropped while building or applying a mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MappingWarning {
    /// Model class not in the model's predictable set.
    IncompatibleClass { label: String, class: ConceptId },
    /// Every class of a label was incompatible; the label is now unmapped.
    LabelDropped(String),
    /// Lenient mode skipped a label with no mapping.
    UnmappedLabel(String),
}

/// Dataset label → model classes. The identity mapping maps every label onto itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMapping {
    name: String,
    map: Option<BTreeMap<ConceptId, Vec<ConceptId>>>,
}

impl ClassMapping {
    pub fn identity() -> Self {
        Self { name: "identity".to_owned(), map: None }
    }

    /// Builds a mapping, dropping classes outside `whitelist` (when given).
    pub fn new(
        name: impl Into<String>,
        entries: impl IntoIterator<Item = (String, Vec<String>)>,
        whitelist: Option<&BTreeSet<ConceptId>>,
    ) -> Result<(Self, Vec<MappingWarning>), ConceptError> {
        let mut map: BTreeMap<ConceptId, Vec<ConceptId>> = BTreeMap::new();
        let mut warnings = Vec::new();
        for (label, classes) in entries {
            let key = ConceptId::canonicalize(&label)?;
            if classes.is_empty() {
                return Err(ConceptError::EmptyMapping(label));
            }
            let mut kept = Vec::new();
            for class in classes {
                let class = ConceptId::canonicalize(&class)?;
                if whitelist.is_some_and(|w| !w.contains(&class)) {
                    warnings.push(MappingWarning::IncompatibleClass { label: label.clone(), class });
                } else if !kept.contains(&class) {
                    kept.push(class);
                }
            }
            if kept.is_empty() {
                warnings.push(MappingWarning::LabelDropped(label));
                continue;
            }
            // Duplicate keys after canonicalization union their classes.
            let slot = map.entry(key).or_default();
            for c in kept {
                if !slot.contains(&c) {
                    slot.push(c);
                }
            }
        }
        Ok((Self { name: name.into(), map: Some(map) }, warnings))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_identity(&self) -> bool {
        self.map.is_none()
    }

    pub fn classes_for(&self, label: &ConceptId) -> Option<&[ConceptId]> {
        self.map.as_ref()?.get(label).map(Vec::as_slice)
    }
}

/// Maps one image's dataset labels onto its model-class target set.
///
/// Strict mode fails on the first unmapped label; lenient mode skips it with a warning.
pub fn map_to_model_classes<'a>(
    labels: impl IntoIterator<Item = &'a str>,
    mapping: &ClassMapping,
    strict: bool,
) -> Result<(BTreeSet<ConceptId>, Vec<MappingWarning>), ConceptError> {
    let mut targets = BTreeSet::new();
    let mut warnings = Vec::new();
    for raw in labels {
        let label = ConceptId::canonicalize(raw)?;
        match &mapping.map {
            None => {
                targets.insert(label);
            }
            Some(map) => match map.get(&label) {
                Some(classes) => targets.extend(classes.iter().cloned()),
                None if strict => return Err(ConceptError::Unmapped(raw.to_owned())),
                None => warnings.push(MappingWarning::UnmappedLabel(raw.to_owned())),
            },
        }
    }
    Ok((targets, warnings))
}

/// One scored, labeled row of a concept's binary task.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRow {
    pub image_id: String,
    pub score: f64,
    pub label: bool,
}

impl ScoredRow {
    pub fn new(image_id: impl Into<String>, score: f64, label: bool) -> Self {
        Self { image_id: image_id.into(), score, label }
    }
}

/// A group's rows for one concept, split by label. Rows are ordered by image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupPool {
    pub positives: Vec<ScoredRow>,
    pub negatives: Vec<ScoredRow>,
}

impl GroupPool {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> impl Iterator<Item = &ScoredRow> {
        self.positives.iter().chain(&self.negatives)
    }

    pub fn from_rows(rows: impl IntoIterator<Item = ScoredRow>) -> Self {
        let (mut positives, mut negatives): (Vec<_>, Vec<_>) =
            rows.into_iter().partition(|r| r.label);
        positives.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        negatives.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        Self { positives, negatives }
    }
}

/// Aligned score/label rows for one concept, partitioned by group.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptEvalTable {
    pub concept: ConceptId,
    pub groups: BTreeMap<GroupId, GroupPool>,
}

impl ConceptEvalTable {
    pub fn positives_per_group(&self) -> BTreeMap<&GroupId, usize> {
        self.groups.iter().map(|(g, p)| (g, p.positives.len())).collect()
    }

    pub fn negatives_per_group(&self) -> BTreeMap<&GroupId, usize> {
        self.groups.iter().map(|(g, p)| (g, p.negatives.len())).collect()
    }
}

/// Tables plus the number of assigned images skipped per concept for lack of a score.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableSet {
    pub tables: BTreeMap<ConceptId, ConceptEvalTable>,
    pub unscored: BTreeMap<ConceptId, usize>,
}

/// Builds one table per concept over the assigned images.
///
/// Every group in `groups` gets a pool, possibly empty. Excluded images appear
/// nowhere. An image without a score for the concept is omitted and counted.
pub fn build_concept_tables(
    assignments: &[GroupAssignment],
    targets: &BTreeMap<String, BTreeSet<ConceptId>>,
    predictions: &[PredictionRecord],
    concepts: &BTreeSet<ConceptId>,
    groups: &[GroupId],
) -> Result<TableSet, ConceptError> {
    let scores: BTreeMap<&str, &PredictionRecord> = predictions
        .iter()
        .map(|p| (p.image_id.as_str(), p))
        .collect();
    let empty = BTreeSet::new();
    let mut set = TableSet::default();

    for concept in concepts {
        let mut pools: BTreeMap<GroupId, Vec<ScoredRow>> =
            groups.iter().map(|g| (g.clone(), Vec::new())).collect();
        let mut missing = 0usize;
        for assignment in assignments {
            let Some(group) = assignment.group() else { continue };
            let id = assignment.image_id.as_str();
            let Some(score) = scores.get(id).and_then(|p| p.scores.get(concept)) else {
                missing += 1;
                continue;
            };
            let label = targets.get(id).unwrap_or(&empty).contains(concept);
            pools
                .entry(group.clone())
                .or_default()
                .push(ScoredRow::new(id, *score, label));
        }
        if pools.values().all(Vec::is_empty) {
            return Err(ConceptError::NoScoredImages(concept.clone()));
        }
        if missing > 0 {
            set.unscored.insert(concept.clone(), missing);
        }
        let table = ConceptEvalTable {
            concept: concept.clone(),
            groups: pools
                .into_iter()
                .map(|(g, rows)| (g, GroupPool::from_rows(rows)))
                .collect(),
        };
        set.tables.insert(concept.clone(), table);
    }
    Ok(set)
}
