//! Run configuration and evaluation-version presets.
//!
//! A run is described by one JSON document. A preset (named by
//! `evaluation_version` or `--preset`) supplies defaults; any field set in the
//! document wins over the preset, and `--seed` wins over both.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use disparity_audit_core::groups::BoxFilterRule;
use disparity_audit_core::sampling::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::io;

const STAGE: &str = "config";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationVersion {
    Baseline,
    V1,
    V2,
    V3,
    Reliable,
    Custom,
}

impl EvaluationVersion {
    pub fn as_str(self) -> &'static str {
        match self {
            EvaluationVersion::Baseline => "baseline",
            EvaluationVersion::V1 => "v1",
            EvaluationVersion::V2 => "v2",
            EvaluationVersion::V3 => "v3",
            EvaluationVersion::Reliable => "reliable",
            EvaluationVersion::Custom => "custom",
        }
    }

    /// The preset bundle this version expands to.
    pub fn preset(self) -> Preset {
        let relative = BoxFilterRule::RelativeArea { use_min: 0.05, ignore_max: 0.02 };
        let (box_filter, apply_term_exclusions, mode) = match self {
            EvaluationVersion::Baseline | EvaluationVersion::Custom => (BoxFilterRule::None, false, SamplingMode::Baseline),
            EvaluationVersion::V1 => (BoxFilterRule::MinAreaPixels { threshold: 600 }, false, SamplingMode::Baseline),
            EvaluationVersion::V2 => (relative, false, SamplingMode::Baseline),
            EvaluationVersion::V3 => (relative, true, SamplingMode::Baseline),
            EvaluationVersion::Reliable => (relative, true, SamplingMode::Reliable),
        };
        Preset {
            box_filter,
            apply_term_exclusions,
            sampling: ResolvedSampling {
                mode,
                ratio: Ratio::new(1, 5).expect("positive parts"),
                bootstraps: 250,
                seed: 0,
                min_per_group: 50,
            },
        }
    }
}

impl fmt::Display for EvaluationVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvaluationVersion {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| AuditError::config(STAGE, format!("unknown preset {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub box_filter: BoxFilterRule,
    pub apply_term_exclusions: bool,
    pub sampling: ResolvedSampling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Prevalence-controlled draws at a fixed ratio.
    Reliable,
    /// Resample each group's pool at full size.
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdScope {
    Pooled,
    PerGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Ap,
    AucRoc,
    Tpr,
    Fpr,
    Precision,
    Recall,
    Accuracy,
    F1,
    HitRate,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Ap => "ap",
            MetricKind::AucRoc => "auc_roc",
            MetricKind::Tpr => "tpr",
            MetricKind::Fpr => "fpr",
            MetricKind::Precision => "precision",
            MetricKind::Recall => "recall",
            MetricKind::Accuracy => "accuracy",
            MetricKind::F1 => "f1",
            MetricKind::HitRate => "hit_rate",
        }
    }

    /// Needs a decision threshold.
    pub fn is_thresholded(self) -> bool {
        matches!(
            self,
            MetricKind::Tpr | MetricKind::Fpr | MetricKind::Precision | MetricKind::Recall | MetricKind::Accuracy | MetricKind::F1
        )
    }
}

/// How groups are operationalized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroupMethod {
    /// `terms` is a terms file path or `builtin:synsets`.
    Boxes { terms: String },
    /// `terms` is a terms file path or `builtin:captions`.
    Captions { terms: String },
    Metadata { region: String, key: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    pub metrics: Option<Vec<MetricKind>>,
    pub k: Option<usize>,
    pub validation_fraction: Option<f64>,
    pub threshold_scope: Option<ThresholdScope>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub ratio: Option<Ratio>,
    pub bootstraps: Option<usize>,
    pub seed: Option<u64>,
    pub min_per_group: Option<usize>,
    pub mode: Option<SamplingMode>,
}

/// The run configuration document as written by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub annotations: String,
    pub predictions: String,
    pub groups: GroupMethod,
    #[serde(default)]
    pub box_filter: Option<BoxFilterRule>,
    #[serde(default)]
    pub apply_term_exclusions: Option<bool>,
    #[serde(default)]
    pub mapping: Option<String>,
    #[serde(default)]
    pub strict_mapping: bool,
    /// Concepts to evaluate; defaults to every scored concept.
    #[serde(default)]
    pub concepts: Option<Vec<String>>,
    /// Drop images with neither labels nor boxes before evaluation.
    #[serde(default)]
    pub remove_unlabeled_images: Option<bool>,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub evaluation_version: Option<EvaluationVersion>,
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSampling {
    pub mode: SamplingMode,
    pub ratio: Ratio,
    pub bootstraps: usize,
    pub seed: u64,
    pub min_per_group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedMetrics {
    pub metrics: Vec<MetricKind>,
    pub k: usize,
    pub validation_fraction: f64,
    pub threshold_scope: ThresholdScope,
}

impl ResolvedMetrics {
    pub fn needs_threshold(&self) -> bool {
        self.metrics.iter().any(|m| m.is_thresholded())
    }
}

/// A fully expanded configuration. Paths are as written in the document;
/// `base_dir` resolves relative ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub evaluation_version: EvaluationVersion,
    pub annotations: String,
    pub predictions: String,
    pub groups: GroupMethod,
    pub box_filter: BoxFilterRule,
    pub apply_term_exclusions: bool,
    pub mapping: Option<String>,
    pub strict_mapping: bool,
    pub concepts: Option<Vec<String>>,
    pub remove_unlabeled_images: bool,
    pub metrics: ResolvedMetrics,
    pub sampling: ResolvedSampling,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<EvaluationVersion>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    pub fn resolve(&self, base_dir: &Path, overrides: &Overrides) -> Result<ResolvedConfig> {
        let version = overrides
            .preset
            .or(self.evaluation_version)
            .unwrap_or(EvaluationVersion::Custom);
        let preset = version.preset();
        let s = &self.sampling;
        let m = &self.metrics;
        let resolved = ResolvedConfig {
            evaluation_version: version,
            annotations: self.annotations.clone(),
            predictions: self.predictions.clone(),
            groups: self.groups.clone(),
            box_filter: self.box_filter.unwrap_or(preset.box_filter),
            apply_term_exclusions: self.apply_term_exclusions.unwrap_or(preset.apply_term_exclusions),
            mapping: self.mapping.clone(),
            strict_mapping: self.strict_mapping,
            concepts: self.concepts.clone(),
            remove_unlabeled_images: self.remove_unlabeled_images.unwrap_or(true),
            metrics: ResolvedMetrics {
                metrics: m
                    .metrics
                    .clone()
                    .unwrap_or_else(|| vec![MetricKind::Ap, MetricKind::Tpr, MetricKind::Fpr]),
                k: m.k.unwrap_or(5),
                validation_fraction: m.validation_fraction.unwrap_or(0.2),
                threshold_scope: m.threshold_scope.unwrap_or(ThresholdScope::Pooled),
            },
            sampling: ResolvedSampling {
                mode: s.mode.unwrap_or(preset.sampling.mode),
                ratio: s.ratio.unwrap_or(preset.sampling.ratio),
                bootstraps: s.bootstraps.unwrap_or(preset.sampling.bootstraps),
                seed: overrides.seed.or(s.seed).unwrap_or(preset.sampling.seed),
                min_per_group: s.min_per_group.unwrap_or(preset.sampling.min_per_group),
            },
            base_dir: base_dir.to_path_buf(),
        };
        resolved.validate()?;
        Ok(resolved)
    }
}

impl ResolvedConfig {
    fn validate(&self) -> Result<()> {
        self.box_filter.validate().map_err(|e| AuditError::config(STAGE, e))?;
        if self.metrics.metrics.is_empty() {
            return Err(AuditError::config(STAGE, "metric list is empty"));
        }
        if self.metrics.k == 0 {
            return Err(AuditError::config(STAGE, "k must be at least 1"));
        }
        let f = self.metrics.validation_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(AuditError::config(STAGE, "validation_fraction must lie in (0, 1)"));
        }
        if self.sampling.bootstraps == 0 {
            return Err(AuditError::config(STAGE, "bootstraps must be positive"));
        }
        if self.sampling.min_per_group == 0 {
            return Err(AuditError::config(STAGE, "min_per_group must be at least 1"));
        }
        let group_file = match &self.groups {
            GroupMethod::Boxes { terms } | GroupMethod::Captions { terms } => {
                (terms != io::BUILTIN_SYNSET_TERMS && terms != io::BUILTIN_CAPTION_TERMS).then_some(terms)
            }
            GroupMethod::Metadata { region, .. } => Some(region),
        };
        let files = [&self.annotations, &self.predictions].into_iter().chain(&self.mapping).chain(group_file);
        for path in files {
            let p = self.path(path);
            if !p.is_file() {
                return Err(AuditError::config(STAGE, format!("file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn path(&self, p: &str) -> PathBuf {
        io::resolve(&self.base_dir, p)
    }

    /// Canonical JSON used for the provenance hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
