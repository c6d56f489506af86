//! Rare-concept filtering and bootstrap sampling plans.
//!
//! Two schemes are supported. The prevalence-controlled scheme draws the same
//! number of positives and negatives, at a fixed integer ratio, for every group
//! of a concept. The baseline scheme resamples each group's whole pool at its
//! original size.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::concepts::{ConceptEvalTable, ConceptId};
use crate::data::GroupId;
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SamplingError {
    #[error("minimum per-group count must be at least 1")]
    InvalidMinimum,
    #[error("ratio parts must be positive")]
    InvalidRatio,
    #[error("bootstrap count must be positive")]
    NoBootstraps,
    #[error("concept has no groups")]
    NoGroups,
    #[error("group {group} cannot fill one {pos}:{neg} unit ({positives} positives, {negatives} negatives)")]
    InsufficientPool { group: GroupId, pos: u32, neg: u32, positives: usize, negatives: usize },
}

/// Keeps concepts where every group has at least `min_per_group` positives.
pub fn filter_rare_concepts<'a>(
    tables: impl IntoIterator<Item = &'a ConceptEvalTable>,
    min_per_group: usize,
) -> Result<BTreeSet<ConceptId>, SamplingError> {
    if min_per_group < 1 {
        return Err(SamplingError::InvalidMinimum);
    }
    Ok(tables
        .into_iter()
        .filter(|t| !t.groups.is_empty() && t.groups.values().all(|p| p.positives.len() >= min_per_group))
        .map(|t| t.concept.clone())
        .collect())
}

/// Positive-to-negative ratio as integer parts, e.g. 1:5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[u32; 2]", into = "[u32; 2]")]
pub struct Ratio {
    pos: u32,
    neg: u32,
}

impl Ratio {
    pub fn new(pos: u32, neg: u32) -> Result<Self, SamplingError> {
        if pos == 0 || neg == 0 {
            return Err(SamplingError::InvalidRatio);
        }
        Ok(Self { pos, neg })
    }

    pub fn pos(&self) -> u32 {
        self.pos
    }

    pub fn neg(&self) -> u32 {
        self.neg
    }

    pub fn prevalence(&self) -> f64 {
        f64::from(self.pos) / f64::from(self.pos + self.neg)
    }
}

impl TryFrom<[u32; 2]> for Ratio {
    type Error = SamplingError;

    fn try_from([pos, neg]: [u32; 2]) -> Result<Self, Self::Error> {
        Self::new(pos, neg)
    }
}

impl From<Ratio> for [u32; 2] {
    fn from(r: Ratio) -> Self {
        [r.pos, r.neg]
    }
}

/// Per-group sample sizes shared by every group of a concept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub positives: usize,
    pub negatives: usize,
}

/// Largest per-group budget every group can fill at `ratio`.
///
/// With `u` ratio units, a group can supply `min(P/pos, N/neg)` units; the
/// budget is the minimum over groups, times the ratio parts.
pub fn compute_budget(table: &ConceptEvalTable, ratio: Ratio) -> Result<Budget, SamplingError> {
    let (pos, neg) = (ratio.pos as usize, ratio.neg as usize);
    let mut units = usize::MAX;
    for (group, pool) in &table.groups {
        let u = (pool.positives.len() / pos).min(pool.negatives.len() / neg);
        if u == 0 {
            return Err(SamplingError::InsufficientPool {
                group: group.clone(),
                pos: ratio.pos,
                neg: ratio.neg,
                positives: pool.positives.len(),
                negatives: pool.negatives.len(),
            });
        }
        units = units.min(u);
    }
    if units == usize::MAX {
        return Err(SamplingError::NoGroups);
    }
    Ok(Budget { positives: units * pos, negatives: units * neg })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Fixed per-group budget at a fixed positive:negative ratio.
    PrevalenceControlled { ratio: Ratio, budget: Budget },
    /// Resample each group's pool with replacement at its original size.
    FullPool,
}

/// Everything needed to reproduce a concept's bootstrap draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub concept: ConceptId,
    pub scheme: Scheme,
    pub seed: u64,
    pub bootstrap_count: usize,
}

impl SamplingPlan {
    /// Prevalence-controlled plan; fails when any group cannot fill one ratio unit.
    pub fn controlled(
        table: &ConceptEvalTable,
        ratio: Ratio,
        seed: u64,
        bootstrap_count: usize,
    ) -> Result<Self, SamplingError> {
        if bootstrap_count == 0 {
            return Err(SamplingError::NoBootstraps);
        }
        let budget = compute_budget(table, ratio)?;
        Ok(Self {
            concept: table.concept.clone(),
            scheme: Scheme::PrevalenceControlled { ratio, budget },
            seed,
            bootstrap_count,
        })
    }

    /// Full-pool plan: no prevalence sub-sampling.
    pub fn full_pool(table: &ConceptEvalTable, seed: u64, bootstrap_count: usize) -> Result<Self, SamplingError> {
        if bootstrap_count == 0 {
            return Err(SamplingError::NoBootstraps);
        }
        Ok(Self { concept: table.concept.clone(), scheme: Scheme::FullPool, seed, bootstrap_count })
    }

    pub fn budget(&self) -> Option<Budget> {
        match self.scheme {
            Scheme::PrevalenceControlled { budget, .. } => Some(budget),
            Scheme::FullPool => None,
        }
    }

    fn stream(&self, group: &GroupId, bootstrap_index: usize) -> StreamKey {
        StreamKey::new(self.seed)
            .str(self.concept.as_str())
            .str(group.as_str())
            .int(bootstrap_index as u64)
    }
}

/// Row indices, with repetition, into one group's positive and negative pools.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BootstrapDraw {
    pub bootstrap_index: usize,
    pub positive_indices: Vec<usize>,
    pub negative_indices: Vec<usize>,
}

impl BootstrapDraw {
    pub fn len(&self) -> usize {
        self.positive_indices.len() + self.negative_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws one bootstrap replicate for every group of the table.
///
/// Each group's stream depends only on (seed, concept, group, index).
pub fn draw_bootstrap(
    table: &ConceptEvalTable,
    plan: &SamplingPlan,
    bootstrap_index: usize,
) -> BTreeMap<GroupId, BootstrapDraw> {
    table
        .groups
        .iter()
        .map(|(group, pool)| {
            let mut rng = plan.stream(group, bootstrap_index).rng();
            let (p, n) = (pool.positives.len(), pool.negatives.len());
            let (positive_indices, negative_indices) = match plan.scheme {
                Scheme::PrevalenceControlled { budget, .. } => (
                    (0..budget.positives).map(|_| rng.random_range(0..p)).collect(),
                    (0..budget.negatives).map(|_| rng.random_range(0..n)).collect(),
                ),
                Scheme::FullPool => {
                    let (mut pos, mut neg) = (Vec::new(), Vec::new());
                    for _ in 0..p + n {
                        let j = rng.random_range(0..p + n);
                        if j < p { pos.push(j) } else { neg.push(j - p) }
                    }
                    (pos, neg)
                }
            };
            (group.clone(), BootstrapDraw { bootstrap_index, positive_indices, negative_indices })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::{GroupPool, ScoredRow};
    use alloc::format;
    use alloc::vec;

    fn pool(p: usize, n: usize) -> GroupPool {
        GroupPool::from_rows(
            (0..p)
                .map(|i| ScoredRow::new(format!("p{i:04}"), 1.0, true))
                .chain((0..n).map(|i| ScoredRow::new(format!("n{i:04}"), 0.0, false))),
        )
    }

    fn table(groups: &[(&str, usize, usize)]) -> ConceptEvalTable {
        ConceptEvalTable {
            concept: ConceptId::canonicalize("c").unwrap(),
            groups: groups.iter().map(|(g, p, n)| (GroupId::from(*g), pool(*p, *n))).collect(),
        }
    }

    #[test]
    fn rare_filter_boundaries() {
        let keep = table(&[("A", 60, 10), ("B", 55, 10)]);
        let mut drop = table(&[("A", 60, 10), ("B", 49, 10)]);
        drop.concept = ConceptId::canonicalize("d").unwrap();
        let kept = filter_rare_concepts([&keep, &drop], 50).unwrap();
        assert_eq!(kept, [keep.concept.clone()].into());
        let mut africa = table(&[("Africa", 1, 40), ("Europe", 80, 40)]);
        africa.concept = ConceptId::canonicalize("e").unwrap();
        assert!(filter_rare_concepts([&africa], 30).unwrap().is_empty());
        assert_eq!(filter_rare_concepts([&keep], 0), Err(SamplingError::InvalidMinimum));
    }

    #[test]
    fn budget_examples() {
        let r15 = Ratio::new(1, 5).unwrap();
        // min(min(40, 300/5), min(60, 180/5)) = min(40, 36)
        let b = compute_budget(&table(&[("A", 40, 300), ("B", 60, 180)]), r15).unwrap();
        assert_eq!(b, Budget { positives: 36, negatives: 180 });
        let b = compute_budget(&table(&[("A", 10, 50), ("B", 10, 50)]), r15).unwrap();
        assert_eq!(b, Budget { positives: 10, negatives: 50 });
        let err = compute_budget(&table(&[("A", 10, 3)]), Ratio::new(1, 4).unwrap());
        assert!(matches!(err, Err(SamplingError::InsufficientPool { group, .. }) if group.as_str() == "A"));
        let err = compute_budget(&table(&[("A", 0, 30)]), r15);
        assert!(matches!(err, Err(SamplingError::InsufficientPool { .. })));
        assert_eq!(Ratio::new(0, 5), Err(SamplingError::InvalidRatio));
    }

    #[test]
    fn budget_is_maximal() {
        let t = table(&[("A", 40, 300), ("B", 60, 180)]);
        let b = compute_budget(&t, Ratio::new(1, 5).unwrap()).unwrap();
        let p = b.positives + 1;
        let fits = t.groups.values().all(|g| g.positives.len() >= p && g.negatives.len() >= 5 * p);
        assert!(!fits);
    }

    #[test]
    fn draw_cardinality_and_determinism() {
        let t = table(&[("A", 5, 40), ("B", 7, 30)]);
        let mut plan = SamplingPlan::controlled(&t, Ratio::new(1, 5).unwrap(), 9, 10).unwrap();
        plan.scheme = Scheme::PrevalenceControlled {
            ratio: Ratio::new(1, 5).unwrap(),
            budget: Budget { positives: 2, negatives: 10 },
        };
        let d = draw_bootstrap(&t, &plan, 3);
        for draw in d.values() {
            assert_eq!(draw.positive_indices.len(), 2);
            assert_eq!(draw.negative_indices.len(), 10);
        }
        assert_eq!(draw_bootstrap(&t, &plan, 3), d);
        assert_ne!(draw_bootstrap(&t, &plan, 4), d);
    }

    #[test]
    fn draws_are_uniform_over_positives() {
        // Binomial oracle: each of 5 positives is picked with p = 1/5 per slot.
        let t = table(&[("A", 5, 10)]);
        let plan = SamplingPlan::controlled(&t, Ratio::new(1, 2).unwrap(), 123, 1).unwrap();
        let mut freq = [0usize; 5];
        let draws = 10_000;
        let mut slots = 0;
        for b in 0..draws {
            for i in &draw_bootstrap(&t, &plan, b)[&GroupId::from("A")].positive_indices {
                freq[*i] += 1;
                slots += 1;
            }
        }
        let n = slots as f64;
        let (mean, sd) = (n / 5.0, libm::sqrt(n * 0.2 * 0.8));
        for f in freq {
            assert!((f as f64 - mean).abs() <= 3.0 * sd, "{freq:?}");
        }
    }

    #[test]
    fn full_pool_draws() {
        let t = table(&[("A", 7, 13)]);
        assert_eq!(SamplingPlan::full_pool(&t, 1, 0), Err(SamplingError::NoBootstraps));
        let plan = SamplingPlan::full_pool(&t, 1, 1).unwrap();
        let draws = 4000;
        let mut positives = 0usize;
        for b in 0..draws {
            let d = &draw_bootstrap(&t, &plan, b)[&GroupId::from("A")];
            assert_eq!(d.len(), 20);
            positives += d.positive_indices.len();
        }
        // Binomial(20·draws, 7/20): mean 7·draws, sd sqrt(n p (1-p)).
        let n = 20.0 * draws as f64;
        let p = 7.0 / 20.0;
        let sd = libm::sqrt(n * p * (1.0 - p));
        assert!((positives as f64 - n * p).abs() <= 3.0 * sd);
    }

    #[test]
    fn controlled_draws_have_exact_prevalence() {
        let t = table(&[("A", 40, 300), ("B", 60, 180)]);
        let ratio = Ratio::new(1, 5).unwrap();
        let plan = SamplingPlan::controlled(&t, ratio, 5, 50).unwrap();
        for b in 0..plan.bootstrap_count {
            for d in draw_bootstrap(&t, &plan, b).values() {
                assert_eq!(d.positive_indices.len() * 6, d.len());
                assert_eq!(d.positive_indices.len(), 36);
            }
        }
        assert_eq!(vec![ratio.pos(), ratio.neg()], vec![1, 5]);
    }
}
