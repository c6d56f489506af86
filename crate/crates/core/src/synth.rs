//! Synthetic audit scenarios with known score laws.
//!
//! Scores are logistic-squashed Gaussians. The squash is monotone, so ranking
//! metrics keep their Gaussian closed forms (e.g. AUC = Φ(Δμ / √(σ₊² + σ₋²))).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::concepts::{ConceptEvalTable, ConceptId, GroupPool, ScoredRow};
use crate::data::{AnnotatedImage, GroupAssignment, GroupId, PredictionRecord};
use crate::metrics::{average_precision, confusion_at_threshold, rates_from_confusion};
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("prevalence {0} must lie in (0, 1)")]
    InvalidPrevalence(f64),
    #[error("standard deviation {0} must be positive and finite")]
    InvalidStd(f64),
    #[error("group {0} has no images")]
    EmptyGroup(GroupId),
    #[error("group {0} is not declared in group_sizes")]
    UnknownGroup(GroupId),
    #[error("concept {concept}, group {group}: {n}·{prevalence} rounds to zero positives")]
    NoPositives { concept: ConceptId, group: GroupId, n: usize, prevalence: f64 },
}

/// Latent Gaussian before the logistic squash.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreLaw {
    pub mean: f64,
    pub std: f64,
}

impl ScoreLaw {
    pub fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupScenario {
    pub prevalence: f64,
    pub positive: ScoreLaw,
    pub negative: ScoreLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptScenario {
    pub concept: ConceptId,
    pub groups: BTreeMap<GroupId, GroupScenario>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    /// Images per group; shared by every concept.
    pub group_sizes: BTreeMap<GroupId, usize>,
    pub concepts: Vec<ConceptScenario>,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (g, n) in &self.group_sizes {
            if *n == 0 {
                return Err(SynthError::EmptyGroup(g.clone()));
            }
        }
        for c in &self.concepts {
            for (g, s) in &c.groups {
                let n = *self.group_sizes.get(g).ok_or_else(|| SynthError::UnknownGroup(g.clone()))?;
                if !(s.prevalence > 0.0 && s.prevalence < 1.0) {
                    return Err(SynthError::InvalidPrevalence(s.prevalence));
                }
                for law in [s.positive, s.negative] {
                    if !(law.std > 0.0 && law.std.is_finite()) {
                        return Err(SynthError::InvalidStd(law.std));
                    }
                }
                if positive_count(n, s.prevalence) == 0 {
                    return Err(SynthError::NoPositives {
                        concept: c.concept.clone(),
                        group: g.clone(),
                        n,
                        prevalence: s.prevalence,
                    });
                }
            }
        }
        Ok(())
    }
}

/// `round(n·α)`, half away from zero.
pub fn positive_count(n: usize, prevalence: f64) -> usize {
    libm::round(n as f64 * prevalence) as usize
}

pub fn squash(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// AUC of positives drawn from `pos` against negatives drawn from `neg`.
pub fn closed_form_auc(pos: ScoreLaw, neg: ScoreLaw) -> f64 {
    normal_cdf((pos.mean - neg.mean) / libm::sqrt(pos.std * pos.std + neg.std * neg.std))
}

pub fn image_id(group: &GroupId, index: usize) -> String {
    format!("{group}-{index:06}")
}

/// Per-image (label, score) for one (concept, group).
fn sample_group(
    seed: u64,
    concept: &ConceptId,
    group: &GroupId,
    n: usize,
    s: &GroupScenario,
) -> Vec<(bool, f64)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut StreamKey::new(seed).str("labels").str(concept.as_str()).str(group.as_str()).rng());
    let mut labels = alloc::vec![false; n];
    for i in &order[..positive_count(n, s.prevalence)] {
        labels[*i] = true;
    }

    let mut rng = StreamKey::new(seed).str("scores").str(concept.as_str()).str(group.as_str()).rng();
    let pos = Normal::new(s.positive.mean, s.positive.std).expect("validated std");
    let neg = Normal::new(s.negative.mean, s.negative.std).expect("validated std");
    labels
        .into_iter()
        .map(|label| {
            let latent = if label { pos.sample(&mut rng) } else { neg.sample(&mut rng) };
            (label, squash(latent))
        })
        .collect()
}

/// Generated images, their group outcomes, and model scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub images: Vec<AnnotatedImage>,
    pub assignments: Vec<GroupAssignment>,
    pub predictions: Vec<PredictionRecord>,
}

/// Materializes a scenario. Each image records its group under the `group`
/// metadata key; positives carry the concept as a direct label.
pub fn generate(spec: &ScenarioSpec) -> Result<SyntheticDataset, SynthError> {
    spec.validate()?;
    let mut labels: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut scores: BTreeMap<String, BTreeMap<ConceptId, f64>> = BTreeMap::new();
    for c in &spec.concepts {
        for (g, s) in &c.groups {
            let rows = sample_group(spec.seed, &c.concept, g, spec.group_sizes[g], s);
            for (i, (label, score)) in rows.into_iter().enumerate() {
                let id = image_id(g, i);
                if label {
                    labels.entry(id.clone()).or_default().insert(c.concept.as_str().into());
                }
                scores.entry(id).or_default().insert(c.concept.clone(), score);
            }
        }
    }

    let mut out = SyntheticDataset { images: Vec::new(), assignments: Vec::new(), predictions: Vec::new() };
    for (g, n) in &spec.group_sizes {
        for i in 0..*n {
            let id = image_id(g, i);
            let mut img = AnnotatedImage::new(id.clone());
            img.direct_labels = labels.remove(&id).unwrap_or_default();
            img.metadata.insert("group".into(), g.as_str().into());
            out.images.push(img);
            out.assignments.push(GroupAssignment::assigned(id.clone(), g.clone()));
            out.predictions.push(PredictionRecord { image_id: id.clone(), scores: scores.remove(&id).unwrap_or_default() });
        }
    }
    Ok(out)
}

/// The evaluation table of one concept, without materializing images.
/// Equal to building the table from [`generate`]'s output.
pub fn generate_table(spec: &ScenarioSpec, concept: &ConceptScenario) -> Result<ConceptEvalTable, SynthError> {
    spec.validate()?;
    let groups = concept
        .groups
        .iter()
        .map(|(g, s)| {
            let rows = sample_group(spec.seed, &concept.concept, g, spec.group_sizes[g], s);
            let pool = GroupPool::from_rows(
                rows.into_iter()
                    .enumerate()
                    .map(|(i, (label, score))| ScoredRow::new(image_id(g, i), score, label)),
            );
            (g.clone(), pool)
        })
        .collect();
    Ok(ConceptEvalTable { concept: concept.concept.clone(), groups })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub prevalence: f64,
    pub positives: usize,
    pub negatives: usize,
    pub ap: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub precision: Option<f64>,
}

/// Regenerates one group at each prevalence with fixed score laws and evaluates
/// AP and the rates at a fixed threshold.
pub fn prevalence_sweep(
    positive: ScoreLaw,
    negative: ScoreLaw,
    n: usize,
    prevalences: &[f64],
    threshold: f64,
    seed: u64,
) -> Result<Vec<SweepRow>, SynthError> {
    let concept = ConceptId::canonicalize("sweep").expect("non-empty");
    let group = GroupId::from("sweep");
    prevalences
        .iter()
        .enumerate()
        .map(|(i, &prevalence)| {
            let scenario = ConceptScenario {
                concept: concept.clone(),
                groups: [(group.clone(), GroupScenario { prevalence, positive, negative })].into(),
            };
            let spec = ScenarioSpec {
                seed: StreamKey::new(seed).int(i as u64).digest(),
                group_sizes: [(group.clone(), n)].into(),
                concepts: alloc::vec![scenario.clone()],
            };
            let table = generate_table(&spec, &scenario)?;
            let pool = &table.groups[&group];
            let rows: Vec<&ScoredRow> = pool.rows().collect();
            let rates = rates_from_confusion(&confusion_at_threshold(&rows, threshold));
            Ok(SweepRow {
                prevalence,
                positives: pool.positives.len(),
                negatives: pool.negatives.len(),
                ap: average_precision(&rows),
                tpr: rates.tpr,
                fpr: rates.fpr,
                precision: rates.precision,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::build_concept_tables;
    use crate::metrics::auc_roc;
    use alloc::vec;

    fn two_group_spec(seed: u64, n: usize, prevalence: (f64, f64), laws: (ScoreLaw, ScoreLaw)) -> ScenarioSpec {
        let (a, b) = (GroupId::from("A"), GroupId::from("B"));
        ScenarioSpec {
            seed,
            group_sizes: [(a.clone(), n), (b.clone(), n)].into(),
            concepts: vec![ConceptScenario {
                concept: ConceptId::canonicalize("c").unwrap(),
                groups: [
                    (a, GroupScenario { prevalence: prevalence.0, positive: laws.0, negative: laws.1 }),
                    (b, GroupScenario { prevalence: prevalence.1, positive: laws.0, negative: laws.1 }),
                ]
                .into(),
            }],
        }
    }

    const LAWS: (ScoreLaw, ScoreLaw) = (ScoreLaw { mean: 1.0, std: 1.0 }, ScoreLaw { mean: 0.0, std: 1.0 });

    #[test]
    fn exact_positive_counts() {
        let spec = two_group_spec(1, 100, (0.2, 0.5), LAWS);
        let t = generate_table(&spec, &spec.concepts[0]).unwrap();
        assert_eq!(t.groups[&GroupId::from("A")].positives.len(), 20);
        assert_eq!(t.groups[&GroupId::from("A")].negatives.len(), 80);
        assert_eq!(t.groups[&GroupId::from("B")].positives.len(), 50);
    }

    #[test]
    fn zero_positives_is_an_error() {
        let spec = two_group_spec(1, 10, (0.04, 0.5), LAWS);
        assert!(matches!(generate(&spec), Err(SynthError::NoPositives { .. })));
        let spec = two_group_spec(1, 10, (1.0, 0.5), LAWS);
        assert_eq!(generate(&spec), Err(SynthError::InvalidPrevalence(1.0)));
    }

    #[test]
    fn generation_is_deterministic_and_matches_table() {
        let spec = two_group_spec(42, 50, (0.3, 0.1), LAWS);
        let d1 = generate(&spec).unwrap();
        assert_eq!(d1, generate(&spec).unwrap());
        assert_ne!(d1, generate(&ScenarioSpec { seed: 43, ..spec.clone() }).unwrap());

        let concept = spec.concepts[0].concept.clone();
        let targets = d1
            .images
            .iter()
            .map(|i| {
                let t = i.direct_labels.iter().map(|l| ConceptId::canonicalize(l).unwrap()).collect();
                (i.image_id.clone(), t)
            })
            .collect();
        let groups: Vec<GroupId> = spec.group_sizes.keys().cloned().collect();
        let set = build_concept_tables(&d1.assignments, &targets, &d1.predictions, &[concept.clone()].into(), &groups)
            .unwrap();
        assert_eq!(set.tables[&concept], generate_table(&spec, &spec.concepts[0]).unwrap());
    }

    /// E[squash(X)], X ~ N(μ, σ), by composite Simpson over ±10σ.
    fn squashed_mean(law: ScoreLaw) -> f64 {
        let steps = 20_000;
        let (lo, hi) = (law.mean - 10.0 * law.std, law.mean + 10.0 * law.std);
        let h = (hi - lo) / steps as f64;
        let f = |x: f64| {
            let z = (x - law.mean) / law.std;
            squash(x) * libm::exp(-0.5 * z * z) / (law.std * libm::sqrt(2.0 * core::f64::consts::PI))
        };
        let mut sum = f(lo) + f(hi);
        for i in 1..steps {
            sum += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        sum * h / 3.0
    }

    #[test]
    fn empirical_positive_mean_matches_quadrature() {
        let law = ScoreLaw::new(1.0, 1.0);
        let spec = ScenarioSpec {
            seed: 5,
            group_sizes: [(GroupId::from("A"), 100_000)].into(),
            concepts: vec![ConceptScenario {
                concept: ConceptId::canonicalize("c").unwrap(),
                groups: [(GroupId::from("A"), GroupScenario { prevalence: 0.5, positive: law, negative: law })].into(),
            }],
        };
        let t = generate_table(&spec, &spec.concepts[0]).unwrap();
        let xs: Vec<f64> = t.groups[&GroupId::from("A")].positives.iter().map(|r| r.score).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        let expected = squashed_mean(law);
        assert!((mean - expected).abs() < 3.0 * libm::sqrt(var / n), "{mean} vs {expected}");
    }

    #[test]
    fn closed_form_auc_examples() {
        let l = ScoreLaw::new(0.3, 1.2);
        assert_eq!(closed_form_auc(l, l), 0.5);
        // Φ(1/√2) from standard tables: 0.76025
        let auc = closed_form_auc(ScoreLaw::new(1.0, 1.0), ScoreLaw::new(0.0, 1.0));
        assert!((auc - 0.760_249_8).abs() < 1e-6, "{auc}");
        let (p, q) = (ScoreLaw::new(0.7, 0.5), ScoreLaw::new(-0.2, 1.5));
        assert!((closed_form_auc(q, p) - (1.0 - closed_form_auc(p, q))).abs() < 1e-15);
    }

    #[test]
    fn empirical_auc_converges_to_closed_form() {
        let spec = two_group_spec(9, 10_000, (0.5, 0.5), LAWS);
        let t = generate_table(&spec, &spec.concepts[0]).unwrap();
        let pool = &t.groups[&GroupId::from("A")];
        let rows: Vec<_> = pool.rows().collect();
        let auc = auc_roc(&rows).unwrap();
        let truth = closed_form_auc(LAWS.0, LAWS.1);
        // Hanley–McNeil standard error.
        let (np, nn) = (pool.positives.len() as f64, pool.negatives.len() as f64);
        let q1 = truth / (2.0 - truth);
        let q2 = 2.0 * truth * truth / (1.0 + truth);
        let se = libm::sqrt(
            (truth * (1.0 - truth) + (np - 1.0) * (q1 - truth * truth) + (nn - 1.0) * (q2 - truth * truth)) / (np * nn),
        );
        assert!((auc - truth).abs() < 3.0 * se, "{auc} vs {truth} (se {se})");
    }

    #[test]
    fn sweep_rows() {
        let sep = prevalence_sweep(ScoreLaw::new(20.0, 0.1), ScoreLaw::new(-20.0, 0.1), 200, &[0.5, 0.1], 0.5, 3)
            .unwrap();
        assert!(sep.iter().all(|r| r.ap == Some(1.0)));
        let one = prevalence_sweep(LAWS.0, LAWS.1, 100, &[0.3], 0.6, 3).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].positives, one[0].negatives), (30, 70));
    }

    #[test]
    fn sweep_separates_ap_from_rates() {
        let n = 20_000;
        let rows = prevalence_sweep(LAWS.0, LAWS.1, n, &[0.5, 0.1], 0.6, 77).unwrap();
        let bound = |p: f64, k: usize| 3.0 * libm::sqrt(p * (1.0 - p) / k as f64);
        let (a, b) = (rows[0], rows[1]);
        let (ta, tb) = (a.tpr.unwrap(), b.tpr.unwrap());
        assert!((ta - tb).abs() <= bound(ta, a.positives) + bound(tb, b.positives));
        let (fa, fb) = (a.fpr.unwrap(), b.fpr.unwrap());
        assert!(fa > 0.0);
        assert!((fa - fb).abs() <= bound(fa, a.negatives) + bound(fb, b.negatives));
        let (apa, apb) = (a.ap.unwrap(), b.ap.unwrap());
        assert!(apa - apb > bound(apa, a.positives) + bound(apb, b.positives));
    }
}
