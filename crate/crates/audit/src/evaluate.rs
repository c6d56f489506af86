//! Bootstrap evaluation of concept tables and disparity estimation.
//!
//! Everything here works on in-memory tables, so it can be driven by the
//! file pipeline or directly by tests.

use std::collections::{BTreeMap, BTreeSet};

use disparity_audit_core::concepts::{ConceptEvalTable, ConceptId, GroupPool, ScoredRow};
use disparity_audit_core::data::GroupId;
use disparity_audit_core::disparity::{aggregate_disparity, pairwise_disparities, MetricEstimate};
use disparity_audit_core::metrics::{
    auc_roc, average_precision, confusion_at_threshold, rates_from_confusion, select_threshold,
    split_validation_test,
};
use disparity_audit_core::rng::StreamKey;
use disparity_audit_core::sampling::{draw_bootstrap, SamplingPlan};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{MetricKind, ResolvedSampling, SamplingMode, ThresholdScope};

pub const AGGREGATE: &str = "aggregate";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub metrics: Vec<MetricKind>,
    pub validation_fraction: f64,
    pub threshold_scope: ThresholdScope,
    pub sampling: ResolvedSampling,
}

impl EvalSettings {
    fn needs_threshold(&self) -> bool {
        self.metrics.iter().any(|m| m.is_thresholded())
    }
}

/// A concept, or one of its estimates, that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Skipped {
    pub concept: String,
    pub stage: &'static str,
    pub reason: String,
}

/// Per-image top-k hit flags, keyed by image id.
pub type HitFlags = BTreeMap<String, bool>;

/// Bootstrap metric values for one concept.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptEvaluation {
    pub concept: ConceptId,
    pub plan: SamplingPlan,
    pub thresholds: BTreeMap<GroupId, f64>,
    /// Rows per group in each draw, or in the pool for full-pool plans.
    pub positives: BTreeMap<GroupId, usize>,
    pub negatives: BTreeMap<GroupId, usize>,
    /// Metric values on the undrawn evaluation pool.
    pub full_sample: BTreeMap<MetricKind, BTreeMap<GroupId, Option<f64>>>,
    /// Metric values per bootstrap, indexed by bootstrap.
    pub values: BTreeMap<MetricKind, BTreeMap<GroupId, Vec<Option<f64>>>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub concepts: Vec<ConceptEvaluation>,
    pub skipped: Vec<Skipped>,
    /// Group strata whose split fell back to an unstratified partition.
    pub unstratified_splits: usize,
}

struct Prepared {
    table: ConceptEvalTable,
    plan: SamplingPlan,
    thresholds: BTreeMap<GroupId, f64>,
    unstratified: usize,
}

fn skip(concept: &ConceptId, stage: &'static str, reason: impl ToString) -> Skipped {
    Skipped { concept: concept.to_string(), stage, reason: reason.to_string() }
}

fn prepare(table: &ConceptEvalTable, settings: &EvalSettings) -> Result<Prepared, Skipped> {
    let concept = &table.concept;
    let mut unstratified = 0;
    let mut thresholds = BTreeMap::new();
    let eval_table = if settings.needs_threshold() {
        let mut validation: BTreeMap<&GroupId, Vec<ScoredRow>> = BTreeMap::new();
        let mut test = BTreeMap::new();
        for (group, pool) in &table.groups {
            let rows: Vec<ScoredRow> = pool.rows().cloned().collect();
            let key = StreamKey::new(settings.sampling.seed)
                .str("split")
                .str(concept.as_str())
                .str(group.as_str());
            let split = split_validation_test(&rows, settings.validation_fraction, &key)
                .map_err(|e| skip(concept, "split", e))?;
            if !split.stratified {
                log::warn!("{concept}/{group}: too few positives to stratify the validation split");
                unstratified += 1;
            }
            validation.insert(group, split.validation.iter().map(|i| rows[*i].clone()).collect());
            test.insert(group.clone(), GroupPool::from_rows(split.test.iter().map(|i| rows[*i].clone())));
        }
        match settings.threshold_scope {
            ThresholdScope::Pooled => {
                let pooled: Vec<&ScoredRow> = validation.values().flatten().collect();
                let t = select_threshold(&pooled).map_err(|e| skip(concept, "threshold", e))?;
                thresholds = table.groups.keys().map(|g| (g.clone(), t.threshold)).collect();
            }
            ThresholdScope::PerGroup => {
                for (group, rows) in &validation {
                    let t = select_threshold(rows)
                        .map_err(|e| skip(concept, "threshold", format!("group {group}: {e}")))?;
                    thresholds.insert((*group).clone(), t.threshold);
                }
            }
        }
        ConceptEvalTable { concept: concept.clone(), groups: test }
    } else {
        table.clone()
    };

    let s = &settings.sampling;
    let plan = match s.mode {
        SamplingMode::Reliable => SamplingPlan::controlled(&eval_table, s.ratio, s.seed, s.bootstraps),
        SamplingMode::Baseline => SamplingPlan::full_pool(&eval_table, s.seed, s.bootstraps),
    }
    .map_err(|e| skip(concept, "sampling", e))?;
    Ok(Prepared { table: eval_table, plan, thresholds, unstratified })
}

/// Sampling plans for each table, or the reason a concept is skipped.
pub fn plan_concepts<'a>(
    tables: impl IntoIterator<Item = &'a ConceptEvalTable>,
    settings: &EvalSettings,
) -> Vec<Result<(SamplingPlan, BTreeMap<GroupId, f64>), Skipped>> {
    tables
        .into_iter()
        .map(|t| prepare(t, settings).map(|p| (p.plan, p.thresholds)))
        .collect()
}

fn metric_value(metric: MetricKind, rows: &[&ScoredRow], threshold: Option<f64>, hits: &HitFlags) -> Option<f64> {
    match metric {
        MetricKind::Ap => average_precision(rows),
        MetricKind::AucRoc => auc_roc(rows),
        MetricKind::HitRate => {
            let (mut n, mut h) = (0usize, 0usize);
            for r in rows.iter().filter(|r| r.label) {
                n += 1;
                h += usize::from(hits.get(&r.image_id).copied().unwrap_or(false));
            }
            (n > 0).then(|| h as f64 / n as f64)
        }
        _ => {
            let rates = rates_from_confusion(&confusion_at_threshold(rows, threshold?));
            match metric {
                MetricKind::Tpr => rates.tpr,
                MetricKind::Fpr => rates.fpr,
                MetricKind::Precision => rates.precision,
                MetricKind::Recall => rates.recall,
                MetricKind::Accuracy => rates.accuracy,
                MetricKind::F1 => rates.f1,
                MetricKind::Ap | MetricKind::AucRoc | MetricKind::HitRate => unreachable!(),
            }
        }
    }
}

fn values_for(
    metrics: &[MetricKind],
    rows: &[&ScoredRow],
    threshold: Option<f64>,
    hits: &HitFlags,
) -> Vec<Option<f64>> {
    metrics.iter().map(|m| metric_value(*m, rows, threshold, hits)).collect()
}

/// Evaluates every table: split and threshold, plan, then bootstrap.
///
/// Bootstraps run on the current rayon pool; results are independent of
/// scheduling because each draw depends only on its key.
pub fn evaluate_tables<'a>(
    tables: impl IntoIterator<Item = &'a ConceptEvalTable>,
    settings: &EvalSettings,
    hits: &HitFlags,
) -> Evaluation {
    let mut out = Evaluation::default();
    let mut prepared = Vec::new();
    for table in tables {
        match prepare(table, settings) {
            Ok(p) => {
                out.unstratified_splits += p.unstratified;
                prepared.push(p);
            }
            Err(s) => {
                log::warn!("skipping {}: {} ({})", s.concept, s.reason, s.stage);
                out.skipped.push(s);
            }
        }
    }

    let metrics = &settings.metrics;
    let jobs: Vec<(usize, usize)> = prepared
        .iter()
        .enumerate()
        .flat_map(|(c, p)| (0..p.plan.bootstrap_count).map(move |b| (c, b)))
        .collect();
    // One entry per (concept, bootstrap): per group, one value per metric.
    let per_draw: Vec<BTreeMap<GroupId, Vec<Option<f64>>>> = jobs
        .par_iter()
        .map(|&(c, b)| {
            let p = &prepared[c];
            draw_bootstrap(&p.table, &p.plan, b)
                .into_iter()
                .map(|(group, draw)| {
                    let pool = &p.table.groups[&group];
                    let rows: Vec<&ScoredRow> = draw
                        .positive_indices
                        .iter()
                        .map(|i| &pool.positives[*i])
                        .chain(draw.negative_indices.iter().map(|i| &pool.negatives[*i]))
                        .collect();
                    let v = values_for(metrics, &rows, p.thresholds.get(&group).copied(), hits);
                    (group, v)
                })
                .collect()
        })
        .collect();

    let mut draws = per_draw.into_iter();
    for p in prepared {
        let mut values: BTreeMap<MetricKind, BTreeMap<GroupId, Vec<Option<f64>>>> = BTreeMap::new();
        for draw in draws.by_ref().take(p.plan.bootstrap_count) {
            for (group, v) in draw {
                for (m, x) in metrics.iter().zip(v) {
                    values.entry(*m).or_default().entry(group.clone()).or_default().push(x);
                }
            }
        }
        let mut full_sample: BTreeMap<MetricKind, BTreeMap<GroupId, Option<f64>>> = BTreeMap::new();
        for (group, pool) in &p.table.groups {
            let rows: Vec<&ScoredRow> = pool.rows().collect();
            let v = values_for(metrics, &rows, p.thresholds.get(group).copied(), hits);
            for (m, x) in metrics.iter().zip(v) {
                full_sample.entry(*m).or_default().insert(group.clone(), x);
            }
        }
        let (positives, negatives) = match p.plan.budget() {
            Some(b) => (
                p.table.groups.keys().map(|g| (g.clone(), b.positives)).collect(),
                p.table.groups.keys().map(|g| (g.clone(), b.negatives)).collect(),
            ),
            None => (
                p.table.groups.iter().map(|(g, pool)| (g.clone(), pool.positives.len())).collect(),
                p.table.groups.iter().map(|(g, pool)| (g.clone(), pool.negatives.len())).collect(),
            ),
        };
        out.concepts.push(ConceptEvaluation {
            concept: p.table.concept.clone(),
            plan: p.plan,
            thresholds: p.thresholds,
            positives,
            negatives,
            full_sample,
            values,
        });
    }
    out
}

/// Pairwise per-concept estimates followed by one aggregate estimate per
/// group pair, for every metric in `metrics` order.
pub fn estimates(eval: &Evaluation, metrics: &[MetricKind]) -> (Vec<MetricEstimate>, Vec<Skipped>) {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for metric in metrics {
        let name = metric.as_str();
        for c in &eval.concepts {
            let Some(values) = c.values.get(metric) else { continue };
            for (a, b, stats) in pairwise_disparities(values) {
                match stats {
                    Ok(stats) => {
                        if !stats.reliable {
                            log::warn!(
                                "{name}/{}/{a}-{b}: {} of {} bootstraps undefined",
                                c.concept,
                                stats.bootstraps_dropped,
                                c.plan.bootstrap_count
                            );
                        }
                        rows.push(MetricEstimate {
                            metric: name.into(),
                            concept: c.concept.to_string(),
                            group_a: a,
                            group_b: b,
                            stats,
                            bootstrap_count: c.plan.bootstrap_count,
                            positives_per_group: c.positives.clone(),
                            negatives_per_group: c.negatives.clone(),
                        })
                    }
                    Err(e) => skipped.push(Skipped {
                        concept: c.concept.to_string(),
                        stage: "disparity",
                        reason: format!("{name} {a} vs {b}: {e}"),
                    }),
                }
            }
        }

        let groups: BTreeSet<&GroupId> = eval
            .concepts
            .iter()
            .filter_map(|c| c.values.get(metric))
            .flat_map(|v| v.keys())
            .collect();
        let groups: Vec<&GroupId> = groups.into_iter().collect();
        for (i, a) in groups.iter().enumerate() {
            for b in &groups[i + 1..] {
                let members: Vec<&ConceptEvaluation> = eval
                    .concepts
                    .iter()
                    .filter(|c| c.values.get(metric).is_some_and(|v| v.contains_key(*a) && v.contains_key(*b)))
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let pairs: Vec<(&[Option<f64>], &[Option<f64>])> = members
                    .iter()
                    .map(|c| (c.values[metric][*a].as_slice(), c.values[metric][*b].as_slice()))
                    .collect();
                let sum = |f: fn(&ConceptEvaluation) -> &BTreeMap<GroupId, usize>| -> BTreeMap<GroupId, usize> {
                    [*a, *b]
                        .into_iter()
                        .map(|g| (g.clone(), members.iter().map(|c| f(c).get(g).copied().unwrap_or(0)).sum()))
                        .collect()
                };
                match aggregate_disparity(&pairs) {
                    Ok(stats) => rows.push(MetricEstimate {
                        metric: name.into(),
                        concept: AGGREGATE.into(),
                        group_a: (*a).clone(),
                        group_b: (*b).clone(),
                        stats,
                        bootstrap_count: members[0].plan.bootstrap_count,
                        positives_per_group: sum(|c| &c.positives),
                        negatives_per_group: sum(|c| &c.negatives),
                    }),
                    Err(e) => skipped.push(Skipped {
                        concept: AGGREGATE.into(),
                        stage: "disparity",
                        reason: format!("{name} {a} vs {b}: {e}"),
                    }),
                }
            }
        }
    }
    (rows, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use disparity_audit_core::sampling::Ratio;

    fn settings(metrics: Vec<MetricKind>, mode: SamplingMode) -> EvalSettings {
        EvalSettings {
            metrics,
            validation_fraction: 0.2,
            threshold_scope: ThresholdScope::Pooled,
            sampling: ResolvedSampling {
                mode,
                ratio: Ratio::new(1, 5).unwrap(),
                bootstraps: 40,
                seed: 3,
                min_per_group: 1,
            },
        }
    }

    fn table(name: &str, groups: &[(&str, usize, usize)]) -> ConceptEvalTable {
        let groups = groups
            .iter()
            .map(|(g, p, n)| {
                let rows = (0..*p)
                    .map(|i| ScoredRow::new(format!("{g}p{i}"), 0.5 + i as f64 / 1000.0, true))
                    .chain((0..*n).map(|i| ScoredRow::new(format!("{g}n{i}"), 0.3 + i as f64 / 1000.0, false)));
                (GroupId::from(*g), GroupPool::from_rows(rows))
            })
            .collect();
        ConceptEvalTable { concept: ConceptId::canonicalize(name).unwrap(), groups }
    }

    #[test]
    fn controlled_draw_sizes_and_skips() {
        let t = table("dog", &[("A", 20, 200), ("B", 12, 30)]);
        let bad = table("cat", &[("A", 20, 200), ("B", 12, 3)]);
        let s = settings(vec![MetricKind::Ap], SamplingMode::Reliable);
        let eval = evaluate_tables([&t, &bad], &s, &HitFlags::new());
        assert_eq!(eval.concepts.len(), 1);
        assert_eq!(eval.skipped.len(), 1);
        assert_eq!(eval.skipped[0].stage, "sampling");
        let c = &eval.concepts[0];
        assert_eq!(c.positives.values().copied().collect::<Vec<_>>(), [6, 6]);
        assert_eq!(c.negatives.values().copied().collect::<Vec<_>>(), [30, 30]);
        // Positives all outrank negatives, so AP is 1 in every draw.
        assert!(c.values[&MetricKind::Ap].values().flatten().all(|v| *v == Some(1.0)));
        let (rows, skipped) = estimates(&eval, &s.metrics);
        assert!(skipped.is_empty());
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].concept, AGGREGATE);
        assert_eq!(rows[0].stats.point, 0.0);
    }

    #[test]
    fn thresholded_metrics_use_test_rows() {
        let t = table("dog", &[("A", 20, 80), ("B", 30, 70)]);
        let s = settings(vec![MetricKind::Tpr, MetricKind::Fpr, MetricKind::AucRoc], SamplingMode::Baseline);
        let eval = evaluate_tables([&t], &s, &HitFlags::new());
        let c = &eval.concepts[0];
        assert_eq!(c.positives[&GroupId::from("A")], 16);
        assert_eq!(c.negatives[&GroupId::from("B")], 56);
        let ta = c.thresholds[&GroupId::from("A")];
        assert_eq!(ta, c.thresholds[&GroupId::from("B")]);
        assert_eq!(c.full_sample[&MetricKind::Tpr][&GroupId::from("A")], Some(1.0));
        assert_eq!(c.full_sample[&MetricKind::Fpr][&GroupId::from("B")], Some(0.0));
        assert_eq!(c.values[&MetricKind::AucRoc][&GroupId::from("A")].len(), 40);
    }

    #[test]
    fn hit_rate_averages_flags_over_positives() {
        let t = table("dog", &[("A", 4, 4), ("B", 4, 4)]);
        let mut hits = HitFlags::new();
        hits.insert("Ap0".into(), true);
        hits.insert("Bp0".into(), true);
        hits.insert("Bp1".into(), true);
        let s = settings(vec![MetricKind::HitRate], SamplingMode::Baseline);
        let eval = evaluate_tables([&t], &s, &hits);
        let full = &eval.concepts[0].full_sample[&MetricKind::HitRate];
        assert_eq!(full[&GroupId::from("A")], Some(0.25));
        assert_eq!(full[&GroupId::from("B")], Some(0.5));
    }

    #[test]
    fn evaluation_is_independent_of_thread_count() {
        let t = table("dog", &[("A", 30, 90), ("B", 25, 60)]);
        let s = settings(vec![MetricKind::Ap, MetricKind::F1], SamplingMode::Baseline);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| evaluate_tables([&t], &s, &HitFlags::new()));
        let b = four.install(|| evaluate_tables([&t], &s, &HitFlags::new()));
        assert_eq!(a, b);
    }
}
