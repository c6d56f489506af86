//! Disaggregated, per-concept performance disparity estimation for multi-label
//! classifiers.
//!
//! The crate needs only `alloc`. It covers the whole statistical path of an audit:
//!
//! * [`data`]: annotated images, prediction records, group outcomes, validation.
//! * [`groups`]: group assignment from boxes, captions, or metadata.
//! * [`concepts`]: label canonicalization, class mapping, per-concept tables.
//! * [`sampling`]: rare-concept filtering and prevalence-controlled bootstraps.
//! * [`metrics`]: confusion rates, rate identities, AP, AUC-ROC, hit-rate@k,
//!   F1-maximizing thresholds.
//! * [`disparity`]: bootstrap percentile intervals for group differences.
//! * [`synth`]: synthetic scenarios with known score laws.
//!
//! File formats, run configuration, and the command line live in the
//! `disparity-audit` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod concepts;
pub mod data;
pub mod disparity;
pub mod groups;
pub mod metrics;
pub mod rng;
pub mod sampling;
pub mod synth;

pub use concepts::{ConceptEvalTable, ConceptId, GroupPool, ScoredRow};
pub use data::{AnnotatedImage, BoxAnnotation, ExclusionReason, GroupAssignment, GroupId, Outcome, PredictionRecord};
pub use disparity::MetricEstimate;
pub use metrics::{ConfusionCounts, RateBundle};
pub use sampling::{Ratio, SamplingPlan};
