//! Group operationalization from proxy annotations: box labels, caption terms,
//! or per-image metadata.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{AnnotatedImage, ExclusionReason, GroupAssignment, GroupId, Outcome};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GroupError {
    #[error("term {term:?} belongs to both {first} and {second}")]
    OverlappingTerms { term: String, first: GroupId, second: GroupId },
    #[error("excluded term {term:?} is not a term of group {group}")]
    StrayExcludedTerm { term: String, group: GroupId },
    #[error("excluded terms given for unknown group {0}")]
    UnknownGroup(GroupId),
    #[error("invalid box filter: {0}")]
    InvalidFilter(&'static str),
    #[error("image {0} has no width/height but the box filter needs them")]
    MissingImageSize(String),
    #[error("countries missing from the region config: {0:?}")]
    UnmappedCountries(Vec<String>),
}

/// Group term tables with per-configuration exclusions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupTermConfig {
    pub groups: BTreeMap<GroupId, BTreeSet<String>>,
    #[serde(default)]
    pub excluded_terms: BTreeMap<GroupId, BTreeSet<String>>,
    #[serde(default)]
    pub neutral_exclusion_terms: BTreeSet<String>,
}

impl GroupTermConfig {
    /// Checks term disjointness and that exclusions are subsets of their group.
    pub fn validate(&self) -> Result<(), GroupError> {
        let mut owner: BTreeMap<&str, &GroupId> = BTreeMap::new();
        for (group, terms) in &self.groups {
            for term in terms {
                if let Some(first) = owner.insert(term, group) {
                    return Err(GroupError::OverlappingTerms {
                        term: term.clone(),
                        first: first.clone(),
                        second: group.clone(),
                    });
                }
            }
        }
        for (group, excluded) in &self.excluded_terms {
            let terms = self
                .groups
                .get(group)
                .ok_or_else(|| GroupError::UnknownGroup(group.clone()))?;
            if let Some(term) = excluded.iter().find(|t| !terms.contains(*t)) {
                return Err(GroupError::StrayExcludedTerm { term: term.clone(), group: group.clone() });
            }
        }
        Ok(())
    }

    /// Same term tables with the exclusions switched off.
    pub fn without_exclusions(&self) -> Self {
        Self { excluded_terms: BTreeMap::new(), ..self.clone() }
    }

    pub fn group_ids(&self) -> Vec<GroupId> {
        self.groups.keys().cloned().collect()
    }

    /// Group whose active (non-excluded) terms contain `term`.
    pub fn group_of(&self, term: &str) -> Option<&GroupId> {
        self.groups.iter().find_map(|(g, terms)| {
            let active = terms.contains(term)
                && !self.excluded_terms.get(g).is_some_and(|ex| ex.contains(term));
            active.then_some(g)
        })
    }

    pub fn is_neutral(&self, term: &str) -> bool {
        self.neutral_exclusion_terms.contains(term)
    }
}

/// Which group-term boxes count as evidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoxFilterRule {
    None,
    /// Box area ≥ `threshold` px².
    MinAreaPixels { threshold: u64 },
    /// Longest box side ≥ `threshold` px.
    MinSidePixels { threshold: u32 },
    /// Boxes covering ≥ `use_min` of the image are evidence; boxes under `ignore_max`
    /// are ignored; anything in between disqualifies the image.
    RelativeArea { use_min: f64, ignore_max: f64 },
}

impl BoxFilterRule {
    pub fn validate(&self) -> Result<(), GroupError> {
        match *self {
            BoxFilterRule::None => Ok(()),
            BoxFilterRule::MinAreaPixels { threshold: 0 } => {
                Err(GroupError::InvalidFilter("MinAreaPixels threshold must be positive"))
            }
            BoxFilterRule::MinSidePixels { threshold: 0 } => {
                Err(GroupError::InvalidFilter("MinSidePixels threshold must be positive"))
            }
            BoxFilterRule::RelativeArea { use_min, ignore_max }
                if !(0.0 < ignore_max && ignore_max < use_min && use_min <= 1.0) =>
            {
                Err(GroupError::InvalidFilter("RelativeArea needs 0 < ignore_max < use_min <= 1"))
            }
            _ => Ok(()),
        }
    }

    fn needs_image_size(&self) -> bool {
        matches!(self, BoxFilterRule::RelativeArea { .. })
    }
}

enum BoxVerdict {
    Evidence,
    Ignored,
    MidSize,
}

fn judge_box(filter: &BoxFilterRule, b: &crate::data::BoxAnnotation, image: &AnnotatedImage) -> BoxVerdict {
    match *filter {
        BoxFilterRule::None => BoxVerdict::Evidence,
        BoxFilterRule::MinAreaPixels { threshold } => {
            if b.area() >= threshold { BoxVerdict::Evidence } else { BoxVerdict::Ignored }
        }
        BoxFilterRule::MinSidePixels { threshold } => {
            if b.w.max(b.h) >= threshold { BoxVerdict::Evidence } else { BoxVerdict::Ignored }
        }
        BoxFilterRule::RelativeArea { use_min, ignore_max } => {
            // Size presence is checked by the caller.
            let frac = b.area_fraction(image.width, image.height).unwrap_or(0.0);
            if frac >= use_min {
                BoxVerdict::Evidence
            } else if frac < ignore_max {
                BoxVerdict::Ignored
            } else {
                BoxVerdict::MidSize
            }
        }
    }
}

fn decide(image_id: &str, evidence: &BTreeSet<&GroupId>, mid_size: bool, filtered_out: bool) -> GroupAssignment {
    let outcome = if evidence.len() > 1 {
        Outcome::Excluded(ExclusionReason::MultipleGroups)
    } else if mid_size {
        Outcome::Excluded(ExclusionReason::MidSizeAmbiguous)
    } else if let Some(g) = evidence.first() {
        Outcome::Assigned((*g).clone())
    } else if filtered_out {
        Outcome::Excluded(ExclusionReason::BoxTooSmall)
    } else {
        Outcome::Excluded(ExclusionReason::NoGroupEvidence)
    };
    GroupAssignment { image_id: image_id.into(), outcome }
}

/// Assigns a group from the image's group-term boxes.
///
/// Any box carrying a neutral term excludes the image outright. Otherwise the
/// boxes passing `filter` are the evidence; more than one group of evidence
/// excludes the image, as does any mid-size box under [`BoxFilterRule::RelativeArea`].
/// An image whose only group-term boxes were all filtered out is `BoxTooSmall`.
pub fn assign_group_from_boxes(
    image: &AnnotatedImage,
    terms: &GroupTermConfig,
    filter: &BoxFilterRule,
) -> Result<GroupAssignment, GroupError> {
    filter.validate()?;
    if filter.needs_image_size() && (image.width == 0 || image.height == 0) && !image.boxes.is_empty() {
        return Err(GroupError::MissingImageSize(image.image_id.clone()));
    }
    if image.boxes.iter().any(|b| terms.is_neutral(&b.raw_label)) {
        return Ok(GroupAssignment::excluded(&*image.image_id, ExclusionReason::NeutralTermPresent));
    }

    let mut evidence = BTreeSet::new();
    let mut mid_size = false;
    let mut filtered_out = false;
    for b in &image.boxes {
        let Some(group) = terms.group_of(&b.raw_label) else { continue };
        match judge_box(filter, b, image) {
            BoxVerdict::Evidence => {
                evidence.insert(group);
            }
            BoxVerdict::Ignored => filtered_out = true,
            BoxVerdict::MidSize => mid_size = true,
        }
    }
    Ok(decide(&image.image_id, &evidence, mid_size, filtered_out))
}

/// Lowercases and splits on every non-alphanumeric run.
pub fn caption_tokens(caption: &str) -> impl Iterator<Item = String> + '_ {
    caption
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.chars().flat_map(char::to_lowercase).collect())
}

/// Assigns a group from whole-token matches in the captions.
pub fn assign_group_from_captions(image: &AnnotatedImage, terms: &GroupTermConfig) -> GroupAssignment {
    let tokens: BTreeSet<String> = image.captions.iter().flat_map(|c| caption_tokens(c)).collect();
    if tokens.iter().any(|t| terms.is_neutral(t)) {
        return GroupAssignment::excluded(&*image.image_id, ExclusionReason::NeutralTermPresent);
    }
    let evidence: BTreeSet<&GroupId> = tokens.iter().filter_map(|t| terms.group_of(t)).collect();
    decide(&image.image_id, &evidence, false, false)
}

/// Country (or any metadata value) → group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionGroupConfig {
    pub country_to_group: BTreeMap<String, GroupId>,
}

impl RegionGroupConfig {
    pub fn group_ids(&self) -> Vec<GroupId> {
        let set: BTreeSet<&GroupId> = self.country_to_group.values().collect();
        set.into_iter().cloned().collect()
    }

    /// Metadata values under `key` that the config does not cover.
    pub fn missing_countries<'a>(
        &self,
        images: impl IntoIterator<Item = &'a AnnotatedImage>,
        key: &str,
    ) -> Vec<String> {
        let missing: BTreeSet<&str> = images
            .into_iter()
            .filter_map(|i| i.metadata.get(key))
            .filter(|c| !self.country_to_group.contains_key(*c))
            .map(String::as_str)
            .collect();
        missing.into_iter().map(String::from).collect()
    }
}

/// Assigns a group by looking up the metadata value under `key`.
///
/// Images without the key are excluded for lack of evidence; values missing
/// from the config are an error.
pub fn assign_group_from_metadata(
    image: &AnnotatedImage,
    config: &RegionGroupConfig,
    key: &str,
) -> Result<GroupAssignment, GroupError> {
    let Some(country) = image.metadata.get(key) else {
        return Ok(GroupAssignment::excluded(&*image.image_id, ExclusionReason::NoGroupEvidence));
    };
    match config.country_to_group.get(country) {
        Some(g) => Ok(GroupAssignment::assigned(&*image.image_id, g.clone())),
        None => Err(GroupError::UnmappedCountries(alloc::vec![country.clone()])),
    }
}

/// Outcome counts over a set of assignments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentSummary {
    pub total: usize,
    pub assigned: BTreeMap<GroupId, usize>,
    pub excluded: BTreeMap<ExclusionReason, usize>,
}

impl AssignmentSummary {
    pub fn assigned_total(&self) -> usize {
        self.assigned.values().sum()
    }

    pub fn excluded_total(&self) -> usize {
        self.excluded.values().sum()
    }
}

pub fn assignment_summary<'a>(assignments: impl IntoIterator<Item = &'a GroupAssignment>) -> AssignmentSummary {
    let mut summary = AssignmentSummary {
        total: 0,
        assigned: BTreeMap::new(),
        excluded: ExclusionReason::ALL.into_iter().map(|r| (r, 0)).collect(),
    };
    for a in assignments {
        summary.total += 1;
        match &a.outcome {
            Outcome::Assigned(g) => *summary.assigned.entry(g.clone()).or_default() += 1,
            Outcome::Excluded(r) => *summary.excluded.entry(*r).or_default() += 1,
        }
    }
    summary
}

/// Built-in binary gender term tables for box synsets and caption words.
pub mod presets {
    use super::*;

    fn table(
        man: &[&str],
        woman: &[&str],
        man_excluded: &[&str],
        woman_excluded: &[&str],
        neutral: &[&str],
    ) -> GroupTermConfig {
        let set = |xs: &[&str]| xs.iter().map(|s| String::from(*s)).collect::<BTreeSet<_>>();
        GroupTermConfig {
            groups: [(GroupId::from("man"), set(man)), (GroupId::from("woman"), set(woman))].into(),
            excluded_terms: [
                (GroupId::from("man"), set(man_excluded)),
                (GroupId::from("woman"), set(woman_excluded)),
            ]
            .into(),
            neutral_exclusion_terms: set(neutral),
        }
    }

    /// Synset terms for box labels. `excluded_terms` holds the parent/child
    /// relation terms that often tag animal pairs.
    pub fn synset_gender_terms() -> GroupTermConfig {
        table(
            &[
                "man.n.01", "male_child.n.01", "guy.n.01", "male.n.01", "groom.n.01",
                "husband.n.01", "grandfather.n.01", "father.n.01", "son.n.01",
                "boyfriend.n.01", "brother.n.01", "grandson.n.01", "groomsman.n.01",
                "ex-husband.n.01", "uncle.n.01", "godfather.n.01",
            ],
            &[
                "maid.n.02", "woman.n.01", "girl.n.01", "lady.n.01", "female.n.01",
                "mother.n.01", "lass.n.01", "ma.n.01", "widow.n.01", "bride.n.01",
                "daughter.n.01", "grandma.n.01", "granddaughter.n.01", "bridesmaid.n.01",
                "girlfriend.n.01", "sister.n.01", "wife.n.01", "female_child.n.01",
                "white_woman.n.01", "dame.n.01", "matriarch.n.01", "mother_figure.n.01",
                "dame.n.02", "great-aunt.n.01", "donna.n.01",
            ],
            &["father.n.01", "son.n.01"],
            &["mother.n.01", "ma.n.01", "daughter.n.01", "mother_figure.n.01"],
            &["person.n.01", "people.n.01"],
        )
    }

    /// Caption word terms.
    pub fn caption_gender_terms() -> GroupTermConfig {
        table(
            &["man", "mans", "men", "boy", "boys", "father", "fathers", "son", "sons", "he", "his", "him"],
            &[
                "woman", "womans", "women", "girl", "girls", "lady", "ladies", "mother", "mothers",
                "daughter", "daughters", "she", "her", "hers",
            ],
            &["father", "fathers", "son", "sons"],
            &["mother", "mothers", "daughter", "daughters"],
            &["person", "people"],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::presets::*;
    use super::*;
    use crate::data::BoxAnnotation;
    use alloc::vec;
    use proptest::prelude::*;

    const V2: BoxFilterRule = BoxFilterRule::RelativeArea { use_min: 0.05, ignore_max: 0.02 };

    fn image_with_boxes(boxes: &[(&str, u32, u32)]) -> AnnotatedImage {
        let mut img = AnnotatedImage::new("img");
        img.width = 100;
        img.height = 100;
        img.boxes = boxes
            .iter()
            .map(|(l, w, h)| BoxAnnotation { raw_label: (*l).into(), x: 0, y: 0, w: *w, h: *h })
            .collect();
        img
    }

    fn outcome(a: GroupAssignment) -> Outcome {
        a.outcome
    }

    #[test]
    fn preset_tables_are_valid() {
        synset_gender_terms().validate().unwrap();
        caption_gender_terms().validate().unwrap();
        assert_eq!(synset_gender_terms().groups[&GroupId::from("man")].len(), 16);
        assert_eq!(synset_gender_terms().groups[&GroupId::from("woman")].len(), 25);
    }

    #[test]
    fn single_box_assigns() {
        let img = image_with_boxes(&[("man.n.01", 40, 20)]); // 8%
        let a = assign_group_from_boxes(&img, &synset_gender_terms(), &V2).unwrap();
        assert_eq!(outcome(a), Outcome::Assigned("man".into()));
    }

    #[test]
    fn two_groups_exclude() {
        let img = image_with_boxes(&[("man.n.01", 40, 20), ("woman.n.01", 50, 20)]);
        let a = assign_group_from_boxes(&img, &synset_gender_terms(), &V2).unwrap();
        assert_eq!(outcome(a), Outcome::Excluded(ExclusionReason::MultipleGroups));
    }

    #[test]
    fn excluded_term_is_not_evidence() {
        let img = image_with_boxes(&[("mother.n.01", 50, 20)]);
        let terms = synset_gender_terms();
        let a = assign_group_from_boxes(&img, &terms, &V2).unwrap();
        assert_eq!(outcome(a), Outcome::Excluded(ExclusionReason::NoGroupEvidence));
        let a = assign_group_from_boxes(&img, &terms.without_exclusions(), &V2).unwrap();
        assert_eq!(outcome(a), Outcome::Assigned("woman".into()));
    }

    #[test]
    fn relative_area_boundaries() {
        let terms = synset_gender_terms();
        // 30×20 = 600 px² = 6% of 100×100.
        let img = image_with_boxes(&[("man.n.01", 30, 20)]);
        assert_eq!(outcome(assign_group_from_boxes(&img, &terms, &V2).unwrap()), Outcome::Assigned("man".into()));
        // Exactly 5% counts.
        let img = image_with_boxes(&[("man.n.01", 25, 20)]);
        assert_eq!(outcome(assign_group_from_boxes(&img, &terms, &V2).unwrap()), Outcome::Assigned("man".into()));
        // 3% sits in the ambiguous band.
        let img = image_with_boxes(&[("man.n.01", 30, 20), ("woman.n.01", 15, 20)]);
        assert_eq!(
            outcome(assign_group_from_boxes(&img, &terms, &V2).unwrap()),
            Outcome::Excluded(ExclusionReason::MidSizeAmbiguous)
        );
        let img = image_with_boxes(&[("man.n.01", 10, 10)]);
        assert_eq!(
            outcome(assign_group_from_boxes(&img, &terms, &V2).unwrap()),
            Outcome::Excluded(ExclusionReason::BoxTooSmall)
        );
        // 1% is ignored.
        let img = image_with_boxes(&[("man.n.01", 30, 20), ("woman.n.01", 10, 10)]);
        assert_eq!(outcome(assign_group_from_boxes(&img, &terms, &V2).unwrap()), Outcome::Assigned("man".into()));
    }

    #[test]
    fn multiple_groups_reported_before_mid_size() {
        let img = image_with_boxes(&[("man.n.01", 30, 20), ("woman.n.01", 30, 20), ("girl.n.01", 15, 20)]);
        let a = assign_group_from_boxes(&img, &synset_gender_terms(), &V2).unwrap();
        assert_eq!(outcome(a), Outcome::Excluded(ExclusionReason::MultipleGroups));
    }

    #[test]
    fn min_area_and_neutral() {
        let terms = synset_gender_terms();
        let filter = BoxFilterRule::MinAreaPixels { threshold: 600 };
        let img = image_with_boxes(&[("man.n.01", 30, 20), ("woman.n.01", 29, 20)]);
        assert_eq!(outcome(assign_group_from_boxes(&img, &terms, &filter).unwrap()), Outcome::Assigned("man".into()));
        let img = image_with_boxes(&[("man.n.01", 30, 20), ("person.n.01", 2, 2)]);
        assert_eq!(
            outcome(assign_group_from_boxes(&img, &terms, &filter).unwrap()),
            Outcome::Excluded(ExclusionReason::NeutralTermPresent)
        );
    }

    #[test]
    fn filter_validation() {
        assert!(BoxFilterRule::MinAreaPixels { threshold: 0 }.validate().is_err());
        assert!(BoxFilterRule::RelativeArea { use_min: 0.02, ignore_max: 0.05 }.validate().is_err());
        assert!(BoxFilterRule::RelativeArea { use_min: 1.5, ignore_max: 0.05 }.validate().is_err());
        assert!(V2.validate().is_ok());
        let mut img = image_with_boxes(&[("man.n.01", 30, 20)]);
        img.width = 0;
        assert_eq!(
            assign_group_from_boxes(&img, &synset_gender_terms(), &V2),
            Err(GroupError::MissingImageSize("img".into()))
        );
    }

    fn captioned(captions: &[&str]) -> AnnotatedImage {
        let mut img = AnnotatedImage::new("c");
        img.captions = captions.iter().map(|s| String::from(*s)).collect();
        img
    }

    #[test]
    fn caption_examples() {
        let terms = caption_gender_terms();
        assert_eq!(
            assign_group_from_captions(&captioned(&["a man riding his bike"]), &terms).outcome,
            Outcome::Assigned("man".into())
        );
        assert_eq!(
            assign_group_from_captions(&captioned(&["A woman smiles.", "a boy waves"]), &terms).outcome,
            Outcome::Excluded(ExclusionReason::MultipleGroups)
        );
        assert_eq!(
            assign_group_from_captions(&captioned(&["two people at a market, one man"]), &terms).outcome,
            Outcome::Excluded(ExclusionReason::NeutralTermPresent)
        );
        // Whole tokens only: "woman" never matches "man".
        assert_eq!(
            assign_group_from_captions(&captioned(&["WOMAN-with-umbrella"]), &terms).outcome,
            Outcome::Assigned("woman".into())
        );
        assert_eq!(
            assign_group_from_captions(&captioned(&["a dog"]), &terms).outcome,
            Outcome::Excluded(ExclusionReason::NoGroupEvidence)
        );
    }

    #[test]
    fn term_config_validation() {
        let mut terms = caption_gender_terms();
        terms.groups.get_mut(&GroupId::from("woman")).unwrap().insert("man".into());
        assert!(matches!(terms.validate(), Err(GroupError::OverlappingTerms { .. })));
        let mut terms = caption_gender_terms();
        terms.excluded_terms.get_mut(&GroupId::from("man")).unwrap().insert("zebra".into());
        assert!(matches!(terms.validate(), Err(GroupError::StrayExcludedTerm { .. })));
    }

    fn regions() -> RegionGroupConfig {
        RegionGroupConfig {
            country_to_group: [
                ("Kenya".into(), GroupId::from("Africa")),
                ("Brazil".into(), GroupId::from("Americas")),
                ("United States".into(), GroupId::from("Americas")),
            ]
            .into(),
        }
    }

    #[test]
    fn metadata_lookup() {
        let mut img = AnnotatedImage::new("m");
        img.metadata.insert("country".into(), "Kenya".into());
        assert_eq!(
            assign_group_from_metadata(&img, &regions(), "country").unwrap().outcome,
            Outcome::Assigned("Africa".into())
        );
        img.metadata.insert("country".into(), "Brazil".into());
        assert_eq!(
            assign_group_from_metadata(&img, &regions(), "country").unwrap().outcome,
            Outcome::Assigned("Americas".into())
        );
        img.metadata.insert("country".into(), "Narnia".into());
        assert_eq!(
            assign_group_from_metadata(&img, &regions(), "country"),
            Err(GroupError::UnmappedCountries(vec!["Narnia".into()]))
        );
        assert_eq!(regions().missing_countries([&img], "country"), vec![String::from("Narnia")]);
        assert_eq!(regions().group_ids(), vec![GroupId::from("Africa"), GroupId::from("Americas")]);
    }

    #[test]
    fn summary_counts() {
        let mut xs: Vec<_> = (0..3).map(|i| GroupAssignment::assigned(alloc::format!("{i}"), "man".into())).collect();
        xs.push(GroupAssignment::excluded("x", ExclusionReason::MultipleGroups));
        let s = assignment_summary(&xs);
        assert_eq!(s.total, 4);
        assert_eq!(s.assigned[&GroupId::from("man")], 3);
        assert_eq!(s.excluded[&ExclusionReason::MultipleGroups], 1);
        assert_eq!(s.excluded_total() + s.assigned_total(), 4);
        assert_eq!(assignment_summary(&xs), s);

        let empty = assignment_summary(&[]);
        assert_eq!(empty.total, 0);
        assert!(empty.excluded.values().all(|c| *c == 0));
        assert_eq!(empty.excluded.len(), ExclusionReason::ALL.len());
    }

    proptest! {
        #[test]
        fn raising_area_threshold_shrinks_evidence(
            boxes in prop::collection::vec((0usize..4, 1u32..60, 1u32..60), 0..6),
            t1 in 1u64..2000,
            extra in 0u64..2000,
        ) {
            let labels = ["man.n.01", "woman.n.01", "boy.n.01", "girl.n.01"];
            let mut img = AnnotatedImage::new("p");
            img.width = 64;
            img.height = 64;
            img.boxes = boxes.iter().map(|(l, w, h)| BoxAnnotation {
                raw_label: labels[*l].into(), x: 0, y: 0, w: *w, h: *h,
            }).collect();
            let terms = synset_gender_terms();
            let evidence = |t: u64| -> BTreeSet<GroupId> {
                img.boxes.iter()
                    .filter(|b| b.area() >= t)
                    .filter_map(|b| terms.group_of(&b.raw_label).cloned())
                    .collect()
            };
            let (e1, e2) = (evidence(t1), evidence(t1 + extra));
            prop_assert!(e2.is_subset(&e1));

            let strict = assign_group_from_boxes(&img, &terms, &BoxFilterRule::MinAreaPixels { threshold: t1 + extra }).unwrap();
            let loose = assign_group_from_boxes(&img, &terms, &BoxFilterRule::MinAreaPixels { threshold: t1 }).unwrap();
            if let Outcome::Assigned(g) = &strict.outcome {
                prop_assert!(e1.contains(g));
                if let Outcome::Assigned(g1) = &loose.outcome {
                    prop_assert_eq!(g, g1);
                }
            }
            // Deterministic.
            prop_assert_eq!(assign_group_from_boxes(&img, &terms, &V2).unwrap(),
                            assign_group_from_boxes(&img, &terms, &V2).unwrap());
        }
    }
}
