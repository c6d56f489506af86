//! The file-level pipeline: load, assign, map, tabulate, evaluate, write.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use disparity_audit_core::concepts::{build_concept_tables, map_to_model_classes, ClassMapping, ConceptId, MappingWarning, TableSet};
use disparity_audit_core::data::{
    validate_dataset, AnnotatedImage, ExclusionReason, GroupAssignment, GroupId, Outcome, PredictionRecord,
};
use disparity_audit_core::disparity::MetricEstimate;
use disparity_audit_core::groups::{
    assign_group_from_boxes, assign_group_from_captions, assign_group_from_metadata, assignment_summary,
};
use disparity_audit_core::metrics::hit_at_k;
use disparity_audit_core::sampling::{filter_rare_concepts, SamplingPlan};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{GroupMethod, MetricKind, ResolvedConfig};
use crate::error::{AuditError, Result};
use crate::evaluate::{self, EvalSettings, Evaluation, HitFlags, Skipped, AGGREGATE};
use crate::io::{self, AssignmentRow};

pub const RESULTS_HEADER: [&str; 12] = [
    "metric",
    "concept",
    "group_a",
    "group_b",
    "point",
    "ci_low",
    "ci_high",
    "significant",
    "n_pos_per_group",
    "n_neg_per_group",
    "bootstraps_used",
    "evaluation_version",
];

/// Loaded inputs after unlabeled-image removal.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<AnnotatedImage>,
    pub predictions: Vec<PredictionRecord>,
    pub loaded: usize,
    pub removed_without_labels: Vec<String>,
}

pub fn load(cfg: &ResolvedConfig) -> Result<Dataset> {
    let mut images = io::load_annotations(&cfg.path(&cfg.annotations))?;
    let predictions = io::load_predictions(&cfg.path(&cfg.predictions), &images)?;
    let loaded = images.len();
    let report = validate_dataset(&images, &predictions);
    for (concept, missing) in &report.unscored {
        log::info!("{concept}: {} images without a score", missing.len());
    }
    if !report.zero_positive_concepts.is_empty() {
        log::info!("{} scored concepts have no labeled image", report.zero_positive_concepts.len());
    }
    let mut removed = Vec::new();
    if cfg.remove_unlabeled_images && !report.images_without_labels.is_empty() {
        let drop: BTreeSet<&str> = report.images_without_labels.iter().map(String::as_str).collect();
        images.retain(|i| !drop.contains(i.image_id.as_str()));
        removed = report.images_without_labels;
        log::info!("removed {} images without labels", removed.len());
    }
    Ok(Dataset { images, predictions, loaded, removed_without_labels: removed })
}

/// Group assignments for every image, in input order, plus the group list.
pub fn assign(cfg: &ResolvedConfig, images: &[AnnotatedImage]) -> Result<(Vec<GroupAssignment>, Vec<GroupId>)> {
    const STAGE: &str = "assign";
    let data_err = |e| AuditError::data(STAGE, e);
    match &cfg.groups {
        GroupMethod::Boxes { terms } | GroupMethod::Captions { terms } => {
            let mut terms = io::load_terms(terms, &cfg.base_dir)?;
            if !cfg.apply_term_exclusions {
                terms = terms.without_exclusions();
            }
            let out = if matches!(cfg.groups, GroupMethod::Boxes { .. }) {
                images
                    .iter()
                    .map(|i| assign_group_from_boxes(i, &terms, &cfg.box_filter))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(data_err)?
            } else {
                images.iter().map(|i| assign_group_from_captions(i, &terms)).collect()
            };
            Ok((out, terms.group_ids()))
        }
        GroupMethod::Metadata { region, key } => {
            let region = io::load_region(&cfg.path(region))?;
            let missing = region.missing_countries(images, key);
            if !missing.is_empty() {
                return Err(AuditError::data(STAGE, format!("countries without a group: {}", missing.join(", "))));
            }
            let out = images
                .iter()
                .map(|i| assign_group_from_metadata(i, &region, key))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(data_err)?;
            Ok((out, region.group_ids()))
        }
    }
}

/// Model-class target sets per image.
pub fn map_targets(
    cfg: &ResolvedConfig,
    images: &[AnnotatedImage],
) -> Result<(BTreeMap<String, BTreeSet<ConceptId>>, Vec<MappingWarning>)> {
    const STAGE: &str = "map";
    let (mapping, mut warnings) = match &cfg.mapping {
        Some(p) => io::load_mapping(&cfg.path(p))?,
        None => (ClassMapping::identity(), Vec::new()),
    };
    let mut targets = BTreeMap::new();
    for image in images {
        let (t, w) = map_to_model_classes(image.dataset_labels(), &mapping, cfg.strict_mapping)
            .map_err(|e| AuditError::data(STAGE, format!("{}: {e}", image.image_id)))?;
        warnings.extend(w);
        targets.insert(image.image_id.clone(), t);
    }
    Ok((targets, warnings))
}

fn concept_set(cfg: &ResolvedConfig, predictions: &[PredictionRecord]) -> Result<BTreeSet<ConceptId>> {
    match &cfg.concepts {
        Some(list) => list
            .iter()
            .map(|c| ConceptId::canonicalize(c).map_err(|e| AuditError::config("config", e)))
            .collect(),
        None => Ok(predictions.iter().flat_map(|p| p.scores.keys().cloned()).collect()),
    }
}

fn hit_flags(
    cfg: &ResolvedConfig,
    assignments: &[GroupAssignment],
    targets: &BTreeMap<String, BTreeSet<ConceptId>>,
    predictions: &[PredictionRecord],
) -> Result<HitFlags> {
    let mut flags = HitFlags::new();
    if !cfg.metrics.metrics.contains(&MetricKind::HitRate) {
        return Ok(flags);
    }
    let scores: BTreeMap<&str, &PredictionRecord> = predictions.iter().map(|p| (p.image_id.as_str(), p)).collect();
    let mut skipped_empty = 0;
    for a in assignments.iter().filter(|a| a.group().is_some()) {
        let (Some(p), Some(t)) = (scores.get(a.image_id.as_str()), targets.get(&a.image_id)) else { continue };
        if t.is_empty() {
            skipped_empty += 1;
            continue;
        }
        let hit = hit_at_k(&a.image_id, &p.scores, t, cfg.metrics.k).map_err(|e| AuditError::data("metrics", e))?;
        flags.insert(a.image_id.clone(), hit);
    }
    if skipped_empty > 0 {
        log::warn!("hit rate: {skipped_empty} images have an empty target set");
    }
    Ok(flags)
}

pub fn settings(cfg: &ResolvedConfig) -> EvalSettings {
    EvalSettings {
        metrics: cfg.metrics.metrics.clone(),
        validation_fraction: cfg.metrics.validation_fraction,
        threshold_scope: cfg.metrics.threshold_scope,
        sampling: cfg.sampling,
    }
}

/// Everything up to, but not including, bootstrap evaluation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub assignments: Vec<GroupAssignment>,
    pub groups: Vec<GroupId>,
    pub targets: BTreeMap<String, BTreeSet<ConceptId>>,
    pub mapping_warnings: Vec<MappingWarning>,
    pub concepts: BTreeSet<ConceptId>,
    pub tables: TableSet,
    pub retained: BTreeSet<ConceptId>,
    pub hits: HitFlags,
}

pub fn prepare(cfg: &ResolvedConfig) -> Result<Prepared> {
    let dataset = load(cfg)?;
    let (assignments, groups) = assign(cfg, &dataset.images)?;
    let (targets, mapping_warnings) = map_targets(cfg, &dataset.images)?;
    for w in &mapping_warnings {
        log::warn!("mapping: {w:?}");
    }
    let concepts = concept_set(cfg, &dataset.predictions)?;
    let tables = build_concept_tables(&assignments, &targets, &dataset.predictions, &concepts, &groups)
        .map_err(|e| AuditError::data("tables", e))?;
    let retained = filter_rare_concepts(tables.tables.values(), cfg.sampling.min_per_group)
        .map_err(|e| AuditError::config("sampling", e))?;
    log::info!("{} of {} concepts pass the rare-label filter", retained.len(), concepts.len());
    let hits = hit_flags(cfg, &assignments, &targets, &dataset.predictions)?;
    Ok(Prepared { dataset, assignments, groups, targets, mapping_warnings, concepts, tables, retained, hits })
}

impl Prepared {
    pub fn retained_tables(&self) -> impl Iterator<Item = &disparity_audit_core::ConceptEvalTable> {
        self.retained.iter().map(|c| &self.tables.tables[c])
    }
}

/// One line of results.csv.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ResultRow {
    pub metric: String,
    pub concept: String,
    pub group_a: String,
    pub group_b: String,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub significant: bool,
    pub n_pos_per_group: String,
    pub n_neg_per_group: String,
    pub bootstraps_used: usize,
    pub evaluation_version: String,
}

fn per_group(counts: &BTreeMap<GroupId, usize>, a: &GroupId, b: &GroupId) -> String {
    let get = |g| counts.get(g).copied().unwrap_or(0);
    format!("{a}:{};{b}:{}", get(a), get(b))
}

impl ResultRow {
    pub fn from_estimate(e: &MetricEstimate, version: &str) -> Self {
        Self {
            metric: e.metric.clone(),
            concept: e.concept.clone(),
            group_a: e.group_a.to_string(),
            group_b: e.group_b.to_string(),
            point: e.stats.point,
            ci_low: e.stats.ci_low,
            ci_high: e.stats.ci_high,
            significant: e.stats.significant(),
            n_pos_per_group: per_group(&e.positives_per_group, &e.group_a, &e.group_b),
            n_neg_per_group: per_group(&e.negatives_per_group, &e.group_a, &e.group_b),
            bootstraps_used: e.stats.bootstraps_used,
            evaluation_version: version.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct FullSampleRow<'a> {
    metric: &'a str,
    concept: &'a str,
    group: &'a str,
    value: Option<f64>,
    threshold: Option<f64>,
    n_pos: usize,
    n_neg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct PlotRow<'a> {
    concept: &'a str,
    point: f64,
    ci_low: f64,
    ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ExclusionRow<'a> {
    image_id: &'a str,
    stage: &'a str,
    reason: &'a str,
}

fn file_part(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes assignments.csv and exclusions.csv.
pub fn write_assignments(dir: &Path, dataset: &Dataset, assignments: &[GroupAssignment]) -> Result<()> {
    const STAGE: &str = "assign";
    io::write_csv_with_header(
        STAGE,
        &dir.join("assignments.csv"),
        &["image_id", "outcome", "group_or_reason"],
        assignments.iter().map(AssignmentRow::from),
    )?;
    let removed = dataset
        .removed_without_labels
        .iter()
        .map(|id| ExclusionRow { image_id: id, stage: "validate", reason: "no_labels" });
    let excluded = assignments.iter().filter_map(|a| match &a.outcome {
        Outcome::Excluded(r) => Some(ExclusionRow { image_id: &a.image_id, stage: "assign", reason: r.as_str() }),
        Outcome::Assigned(_) => None,
    });
    io::write_csv_with_header(STAGE, &dir.join("exclusions.csv"), &["image_id", "stage", "reason"], removed.chain(excluded))
}

#[derive(Debug, Clone, Serialize)]
struct TargetLine<'a> {
    image_id: &'a str,
    targets: &'a BTreeSet<ConceptId>,
}

pub fn write_targets(dir: &Path, targets: &BTreeMap<String, BTreeSet<ConceptId>>) -> Result<()> {
    io::write_jsonl(
        "map",
        &dir.join("targets.jsonl"),
        targets.iter().map(|(id, t)| TargetLine { image_id: id, targets: t }),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanEntry {
    pub concept: String,
    pub plan: Option<SamplingPlan>,
    pub thresholds: BTreeMap<GroupId, f64>,
    pub skipped: Option<String>,
}

pub fn sample_plans(cfg: &ResolvedConfig, prepared: &Prepared) -> Vec<PlanEntry> {
    let s = settings(cfg);
    prepared
        .retained_tables()
        .zip(evaluate::plan_concepts(prepared.retained_tables(), &s))
        .map(|(t, r)| match r {
            Ok((plan, thresholds)) => {
                PlanEntry { concept: t.concept.to_string(), plan: Some(plan), thresholds, skipped: None }
            }
            Err(s) => PlanEntry {
                concept: t.concept.to_string(),
                plan: None,
                thresholds: BTreeMap::new(),
                skipped: Some(format!("{}: {}", s.stage, s.reason)),
            },
        })
        .collect()
}

/// Evaluation artifacts of one run.
#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub evaluation: Evaluation,
    pub estimates: Vec<MetricEstimate>,
    pub rows: Vec<ResultRow>,
    pub skipped: Vec<Skipped>,
}

pub fn evaluate(cfg: &ResolvedConfig, prepared: &Prepared) -> Result<EvalOutput> {
    let s = settings(cfg);
    let evaluation = evaluate::evaluate_tables(prepared.retained_tables(), &s, &prepared.hits);
    let (estimates, mut skipped) = evaluate::estimates(&evaluation, &s.metrics);
    for e in &estimates {
        let st = &e.stats;
        if st.ci_low.is_nan() || st.ci_high.is_nan() || st.ci_low > st.ci_high {
            return Err(AuditError::internal("disparity", format!("{} {}: invalid interval", e.metric, e.concept)));
        }
    }
    skipped.splice(0..0, evaluation.skipped.iter().cloned());
    let version = cfg.evaluation_version.as_str();
    let rows = estimates.iter().map(|e| ResultRow::from_estimate(e, version)).collect();
    Ok(EvalOutput { evaluation, estimates, rows, skipped })
}

/// Writes results.csv, full_sample.csv and plotdata/.
pub fn write_evaluation(dir: &Path, cfg: &ResolvedConfig, out: &EvalOutput) -> Result<Vec<PathBuf>> {
    const STAGE: &str = "report";
    let mut written = vec![dir.join("results.csv"), dir.join("full_sample.csv")];
    io::write_csv_with_header(STAGE, &written[0], &RESULTS_HEADER, &out.rows)?;

    let mut full = Vec::new();
    for metric in &cfg.metrics.metrics {
        for c in &out.evaluation.concepts {
            for (group, value) in &c.full_sample[metric] {
                full.push(FullSampleRow {
                    metric: metric.as_str(),
                    concept: c.concept.as_str(),
                    group: group.as_str(),
                    value: *value,
                    threshold: metric.is_thresholded().then(|| c.thresholds.get(group).copied()).flatten(),
                    n_pos: c.positives[group],
                    n_neg: c.negatives[group],
                });
            }
        }
    }
    io::write_csv_with_header(
        STAGE,
        &written[1],
        &["metric", "concept", "group", "value", "threshold", "n_pos", "n_neg"],
        full,
    )?;

    let plot_dir = dir.join("plotdata");
    if plot_dir.exists() {
        std::fs::remove_dir_all(&plot_dir).map_err(|e| AuditError::io(STAGE, &plot_dir, e))?;
    }
    let mut figures: BTreeMap<(&str, &str, &str), Vec<&ResultRow>> = BTreeMap::new();
    for r in out.rows.iter().filter(|r| r.concept != AGGREGATE) {
        figures.entry((&r.metric, &r.group_a, &r.group_b)).or_default().push(r);
    }
    for ((metric, a, b), mut rows) in figures {
        rows.sort_by(|x, y| x.point.total_cmp(&y.point).then_with(|| x.concept.cmp(&y.concept)));
        let path = plot_dir.join(format!("{}__{}__{}.csv", file_part(metric), file_part(a), file_part(b)));
        io::write_csv_with_header(
            STAGE,
            &path,
            &["concept", "point", "ci_low", "ci_high"],
            rows.iter().map(|r| PlotRow { concept: &r.concept, point: r.point, ci_low: r.ci_low, ci_high: r.ci_high }),
        )?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageCounts {
    pub loaded: usize,
    pub removed_without_labels: usize,
    pub considered: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssignmentCounts {
    pub total: usize,
    pub assigned_total: usize,
    pub excluded_total: usize,
    pub assigned: BTreeMap<String, usize>,
    pub excluded: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConceptCounts {
    pub requested: usize,
    pub tabulated: usize,
    pub retained_after_rare_filter: usize,
    pub evaluated: usize,
    pub skipped: Vec<Skipped>,
    pub unscored_images: BTreeMap<String, usize>,
    pub unstratified_splits: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub evaluation_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: ResolvedConfig,
    pub images: ImageCounts,
    pub assignment: AssignmentCounts,
    pub mapping_warnings: usize,
    pub concepts: ConceptCounts,
    pub result_rows: usize,
    pub unreliable_estimates: usize,
    pub outputs: Vec<String>,
}

pub fn config_hash(cfg: &ResolvedConfig) -> String {
    hex::encode(Sha256::digest(cfg.canonical_json().as_bytes()))
}

pub fn manifest(cfg: &ResolvedConfig, prepared: &Prepared, out: &EvalOutput, outputs: &[PathBuf], dir: &Path) -> Manifest {
    let summary = assignment_summary(&prepared.assignments);
    let ds = &prepared.dataset;
    let unreliable = out.estimates.iter().filter(|e| !e.stats.reliable).count();
    let mut outputs: Vec<String> = outputs
        .iter()
        .map(|p| p.strip_prefix(dir).unwrap_or(p).to_string_lossy().replace('\\', "/"))
        .collect();
    outputs.push("manifest.json".into());
    outputs.sort();
    Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        evaluation_version: cfg.evaluation_version.to_string(),
        seed: cfg.sampling.seed,
        config_sha256: config_hash(cfg),
        config: cfg.clone(),
        images: ImageCounts {
            loaded: ds.loaded,
            removed_without_labels: ds.removed_without_labels.len(),
            considered: ds.images.len(),
        },
        assignment: AssignmentCounts {
            total: summary.total,
            assigned_total: summary.assigned_total(),
            excluded_total: summary.excluded_total(),
            assigned: prepared
                .groups
                .iter()
                .map(|g| (g.to_string(), summary.assigned.get(g).copied().unwrap_or(0)))
                .collect(),
            excluded: ExclusionReason::ALL
                .into_iter()
                .map(|r| (r.as_str().to_string(), summary.excluded.get(&r).copied().unwrap_or(0)))
                .collect(),
        },
        mapping_warnings: prepared.mapping_warnings.len(),
        concepts: ConceptCounts {
            requested: prepared.concepts.len(),
            tabulated: prepared.tables.tables.len(),
            retained_after_rare_filter: prepared.retained.len(),
            evaluated: out.evaluation.concepts.len(),
            skipped: out.skipped.clone(),
            unscored_images: prepared.tables.unscored.iter().map(|(c, n)| (c.to_string(), *n)).collect(),
            unstratified_splits: out.evaluation.unstratified_splits,
        },
        result_rows: out.rows.len(),
        unreliable_estimates: unreliable,
        outputs,
    }
}

/// The full pipeline. Returns the manifest it wrote.
pub fn run(cfg: &ResolvedConfig, dir: &Path) -> Result<Manifest> {
    let prepared = prepare(cfg)?;
    let out = evaluate(cfg, &prepared)?;
    let m = &prepared;
    let summary = assignment_summary(&m.assignments);
    if summary.assigned_total() + summary.excluded_total() != m.dataset.images.len() {
        return Err(AuditError::internal("assign", "assignment counts do not cover every image"));
    }
    write_assignments(dir, &m.dataset, &m.assignments)?;
    let mut outputs = vec![dir.join("assignments.csv"), dir.join("exclusions.csv")];
    outputs.extend(write_evaluation(dir, cfg, &out)?);
    let manifest = manifest(cfg, &prepared, &out, &outputs, dir);
    io::write_json("report", &dir.join("manifest.json"), &manifest)?;
    if out.rows.is_empty() {
        log::warn!("no disparity estimates were produced");
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_parts_are_safe() {
        assert_eq!(file_part("North America"), "North_America");
        assert_eq!(file_part("a/b"), "a_b");
        assert_eq!(file_part("auc_roc"), "auc_roc");
    }

    #[test]
    fn per_group_counts_render_in_pair_order() {
        let counts: BTreeMap<GroupId, usize> = [(GroupId::from("man"), 36), (GroupId::from("woman"), 30)].into();
        assert_eq!(per_group(&counts, &"woman".into(), &"man".into()), "woman:30;man:36");
    }
}
