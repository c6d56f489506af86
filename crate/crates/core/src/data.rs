//! Shared data model: annotated images, prediction records, group outcomes,
//! and the dataset validation report.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::concepts::ConceptId;

/// Identifier of a demographic group (e.g. `man`, `Africa`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(String);

impl GroupId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for GroupId {
    fn from(s: &str) -> Self {
        Self(s.into())
    }
}

/// One labeled box. `label` is either free text or a synset key such as `man.n.01`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    #[serde(rename = "label")]
    pub raw_label: String,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoxAnnotation {
    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    /// Box area relative to the image area. `None` when the image has no size.
    pub fn area_fraction(&self, width: u32, height: u32) -> Option<f64> {
        let image_area = u64::from(width) * u64::from(height);
        if image_area == 0 {
            return None;
        }
        Some(self.area() as f64 / image_area as f64)
    }
}

/// The unit of ingestion: one image with all of its proxy annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub image_id: String,
    #[serde(default)]
    pub width: u32,
    #[serde(default)]
    pub height: u32,
    #[serde(default)]
    pub boxes: Vec<BoxAnnotation>,
    #[serde(default)]
    pub captions: Vec<String>,
    #[serde(default, rename = "labels")]
    pub direct_labels: BTreeSet<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl AnnotatedImage {
    pub fn new(image_id: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            width: 0,
            height: 0,
            boxes: Vec::new(),
            captions: Vec::new(),
            direct_labels: BTreeSet::new(),
            metadata: BTreeMap::new(),
        }
    }

    /// Checks the size and box-bound invariants.
    pub fn check(&self) -> Result<(), ImageError> {
        if self.image_id.is_empty() {
            return Err(ImageError::EmptyId);
        }
        if self.boxes.is_empty() {
            return Ok(());
        }
        if self.width == 0 || self.height == 0 {
            return Err(ImageError::MissingSize);
        }
        for (index, b) in self.boxes.iter().enumerate() {
            if b.w == 0 || b.h == 0 {
                return Err(ImageError::EmptyBox { index });
            }
            let right = u64::from(b.x) + u64::from(b.w);
            let bottom = u64::from(b.y) + u64::from(b.h);
            if right > u64::from(self.width) || bottom > u64::from(self.height) {
                return Err(ImageError::BoxOutOfBounds { index });
            }
        }
        Ok(())
    }

    /// Every raw dataset label attached to the image: direct labels plus box labels.
    pub fn dataset_labels(&self) -> BTreeSet<&str> {
        self.direct_labels
            .iter()
            .map(String::as_str)
            .chain(self.boxes.iter().map(|b| b.raw_label.as_str()))
            .collect()
    }

    pub fn has_labels(&self) -> bool {
        !self.direct_labels.is_empty() || !self.boxes.is_empty()
    }

    /// Folds another record for the same image into this one, unioning labels.
    ///
    /// Some datasets list an image once per label; those rows collapse here.
    pub fn merge(&mut self, other: AnnotatedImage) -> Result<(), ImageError> {
        if self.width != other.width || self.height != other.height {
            return Err(ImageError::ConflictingDuplicate);
        }
        self.direct_labels.extend(other.direct_labels);
        for b in other.boxes {
            if !self.boxes.contains(&b) {
                self.boxes.push(b);
            }
        }
        for c in other.captions {
            if !self.captions.contains(&c) {
                self.captions.push(c);
            }
        }
        for (k, v) in other.metadata {
            match self.metadata.get(&k) {
                Some(existing) if *existing != v => return Err(ImageError::ConflictingDuplicate),
                Some(_) => {}
                None => {
                    self.metadata.insert(k, v);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ImageError {
    #[error("image_id is empty")]
    EmptyId,
    #[error("image has boxes but no width/height")]
    MissingSize,
    #[error("box {index} has zero width or height")]
    EmptyBox { index: usize },
    #[error("box {index} lies outside the image bounds")]
    BoxOutOfBounds { index: usize },
    #[error("duplicate records disagree on size or metadata")]
    ConflictingDuplicate,
}

/// Model confidence scores for one image, keyed by concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub scores: BTreeMap<ConceptId, f64>,
}

impl PredictionRecord {
    pub fn non_finite_concepts(&self) -> impl Iterator<Item = &ConceptId> {
        self.scores
            .iter()
            .filter(|(_, s)| !s.is_finite())
            .map(|(c, _)| c)
    }
}

/// Why an image was left out of every group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExclusionReason {
    MultipleGroups,
    NoGroupEvidence,
    BoxTooSmall,
    MidSizeAmbiguous,
    NeutralTermPresent,
}

impl ExclusionReason {
    pub const ALL: [ExclusionReason; 5] = [
        ExclusionReason::MultipleGroups,
        ExclusionReason::NoGroupEvidence,
        ExclusionReason::BoxTooSmall,
        ExclusionReason::MidSizeAmbiguous,
        ExclusionReason::NeutralTermPresent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::MultipleGroups => "MultipleGroups",
            ExclusionReason::NoGroupEvidence => "NoGroupEvidence",
            ExclusionReason::BoxTooSmall => "BoxTooSmall",
            ExclusionReason::MidSizeAmbiguous => "MidSizeAmbiguous",
            ExclusionReason::NeutralTermPresent => "NeutralTermPresent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Assigned(GroupId),
    Excluded(ExclusionReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub image_id: String,
    pub outcome: Outcome,
}

impl GroupAssignment {
    pub fn assigned(image_id: impl Into<String>, group: GroupId) -> Self {
        Self {
            image_id: image_id.into(),
            outcome: Outcome::Assigned(group),
        }
    }

    pub fn excluded(image_id: impl Into<String>, reason: ExclusionReason) -> Self {
        Self {
            image_id: image_id.into(),
            outcome: Outcome::Excluded(reason),
        }
    }

    pub fn group(&self) -> Option<&GroupId> {
        match &self.outcome {
            Outcome::Assigned(g) => Some(g),
            Outcome::Excluded(_) => None,
        }
    }
}

/// Findings of [`validate_dataset`]. Empty means nothing to report.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Images with neither direct labels nor boxes; removed downstream.
    pub images_without_labels: Vec<String>,
    /// Concept → images that carry no score for it.
    pub unscored: BTreeMap<ConceptId, Vec<String>>,
    /// Scored concepts that no image is labeled with.
    pub zero_positive_concepts: Vec<ConceptId>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.images_without_labels.is_empty()
            && self.unscored.is_empty()
            && self.zero_positive_concepts.is_empty()
    }
}

/// Reports unlabeled images, score-coverage gaps, and concepts without positives.
///
/// Concepts are the union of all scored concept keys. An image is a positive for a
/// concept when the concept appears among its (canonicalized) dataset labels.
pub fn validate_dataset(
    images: &[AnnotatedImage],
    predictions: &[PredictionRecord],
) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut ids: Vec<&str> = images.iter().map(|i| i.image_id.as_str()).collect();
    ids.sort_unstable();

    report.images_without_labels = images
        .iter()
        .filter(|i| !i.has_labels())
        .map(|i| i.image_id.clone())
        .collect();
    report.images_without_labels.sort();

    let by_image: BTreeMap<&str, &PredictionRecord> = predictions
        .iter()
        .map(|p| (p.image_id.as_str(), p))
        .collect();
    let concepts: BTreeSet<&ConceptId> = predictions.iter().flat_map(|p| p.scores.keys()).collect();

    for concept in &concepts {
        let missing: Vec<String> = ids
            .iter()
            .filter(|id| {
                by_image
                    .get(*id)
                    .is_none_or(|p| !p.scores.contains_key(*concept))
            })
            .map(|id| String::from(*id))
            .collect();
        if !missing.is_empty() {
            report.unscored.insert((*concept).clone(), missing);
        }
    }

    let mut labeled: BTreeSet<ConceptId> = BTreeSet::new();
    for image in images {
        for label in image.dataset_labels() {
            if let Ok(c) = ConceptId::canonicalize(label) {
                labeled.insert(c);
            }
        }
    }
    report.zero_positive_concepts = concepts
        .into_iter()
        .filter(|c| !labeled.contains(*c))
        .cloned()
        .collect();

    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn labeled(id: &str, labels: &[&str]) -> AnnotatedImage {
        let mut img = AnnotatedImage::new(id);
        img.direct_labels = labels.iter().map(|s| String::from(*s)).collect();
        img
    }

    fn scored(id: &str, scores: &[(&str, f64)]) -> PredictionRecord {
        PredictionRecord {
            image_id: id.into(),
            scores: scores
                .iter()
                .map(|(c, s)| (ConceptId::canonicalize(c).unwrap(), *s))
                .collect(),
        }
    }

    #[test]
    fn box_bounds_are_checked() {
        let mut img = AnnotatedImage::new("a");
        img.width = 100;
        img.height = 100;
        img.boxes.push(BoxAnnotation { raw_label: "man.n.01".into(), x: 80, y: 0, w: 30, h: 10 });
        assert_eq!(img.check(), Err(ImageError::BoxOutOfBounds { index: 0 }));
        img.boxes[0].x = 70;
        assert_eq!(img.check(), Ok(()));
        img.width = 0;
        assert_eq!(img.check(), Err(ImageError::MissingSize));
    }

    #[test]
    fn merge_unions_labels() {
        let mut a = labeled("x", &["showers"]);
        a.merge(labeled("x", &["floor"])).unwrap();
        assert_eq!(
            a.direct_labels.iter().map(String::as_str).collect::<Vec<_>>(),
            vec!["floor", "showers"]
        );
    }

    #[test]
    fn clean_dataset_has_empty_report() {
        let images = vec![labeled("a", &["dog"]), labeled("b", &["cat"])];
        let preds = vec![
            scored("a", &[("dog", 0.9), ("cat", 0.1)]),
            scored("b", &[("dog", 0.2), ("cat", 0.7)]),
        ];
        assert!(validate_dataset(&images, &preds).is_empty());
    }

    #[test]
    fn unlabeled_image_is_flagged() {
        let images = vec![labeled("a", &["dog"]), AnnotatedImage::new("b")];
        let preds = vec![scored("a", &[("dog", 0.9)]), scored("b", &[("dog", 0.1)])];
        let report = validate_dataset(&images, &preds);
        assert_eq!(report.images_without_labels, vec![String::from("b")]);
        assert!(report.unscored.is_empty());
    }

    #[test]
    fn half_coverage_is_listed() {
        let images: Vec<_> = (0..4).map(|i| labeled(&alloc::format!("i{i}"), &["dog"])).collect();
        let preds = vec![
            scored("i0", &[("dog", 0.9), ("cat", 0.3)]),
            scored("i1", &[("dog", 0.8), ("cat", 0.2)]),
            scored("i2", &[("dog", 0.7)]),
            scored("i3", &[("dog", 0.6)]),
        ];
        let report = validate_dataset(&images, &preds);
        let cat = ConceptId::canonicalize("cat").unwrap();
        assert_eq!(report.unscored.len(), 1);
        assert_eq!(report.unscored[&cat], vec![String::from("i2"), String::from("i3")]);
        assert_eq!(report.zero_positive_concepts, vec![cat]);
    }

    #[test]
    fn validation_does_not_mutate() {
        let images = vec![labeled("a", &["dog"]), AnnotatedImage::new("b")];
        let preds = vec![scored("a", &[("dog", 0.9)])];
        let (before_i, before_p) = (images.clone(), preds.clone());
        let _ = validate_dataset(&images, &preds);
        assert_eq!(images, before_i);
        assert_eq!(preds, before_p);
    }
}
