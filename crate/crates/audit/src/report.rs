//! Comparing two result sets and summarizing one.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::evaluate::AGGREGATE;
use crate::pipeline::ResultRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub metric: String,
    pub concept: String,
    pub group_a: String,
    pub group_b: String,
    pub point_a: f64,
    pub point_b: f64,
    /// The two runs disagree on which group is favored.
    pub sign_flip: bool,
    /// `|point_b| − |point_a|`.
    pub magnitude_delta: f64,
}

type Key<'a> = (&'a str, &'a str, &'a str, &'a str);

fn key(r: &ResultRow) -> Key<'_> {
    (&r.metric, &r.concept, &r.group_a, &r.group_b)
}

/// Joins two result sets on (metric, concept, group pair).
pub fn compare(a: &[ResultRow], b: &[ResultRow]) -> Result<Vec<CompareRow>> {
    let right: BTreeMap<Key, &ResultRow> = b.iter().map(|r| (key(r), r)).collect();
    let mut left: Vec<&ResultRow> = a.iter().collect();
    left.sort_by(|x, y| key(x).cmp(&key(y)));
    let mut out = Vec::new();
    let mut unmatched = 0;
    for ra in left {
        let Some(rb) = right.get(&key(ra)) else {
            unmatched += 1;
            continue;
        };
        out.push(CompareRow {
            metric: ra.metric.clone(),
            concept: ra.concept.clone(),
            group_a: ra.group_a.clone(),
            group_b: ra.group_b.clone(),
            point_a: ra.point,
            point_b: rb.point,
            sign_flip: ra.point * rb.point < 0.0,
            magnitude_delta: rb.point.abs() - ra.point.abs(),
        });
    }
    if out.is_empty() && !(a.is_empty() && b.is_empty()) {
        return Err(AuditError::data("compare", "the two result sets share no (metric, concept, group pair)"));
    }
    let unmatched = unmatched + b.len() - out.len();
    if unmatched > 0 {
        log::warn!("compare: {unmatched} rows appear in only one result set");
    }
    Ok(out)
}

/// Exclusion accounting pulled from a manifest, when one is available.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Accounting {
    pub total: usize,
    pub assigned: BTreeMap<String, usize>,
    pub excluded: BTreeMap<String, usize>,
    pub removed_without_labels: usize,
}

impl Accounting {
    pub fn from_manifest(m: &serde_json::Value) -> Option<Self> {
        let counts = |v: &serde_json::Value| -> Option<BTreeMap<String, usize>> {
            v.as_object()?
                .iter()
                .map(|(k, n)| Some((k.clone(), n.as_u64()? as usize)))
                .collect()
        };
        Some(Self {
            total: m["assignment"]["total"].as_u64()? as usize,
            assigned: counts(&m["assignment"]["assigned"])?,
            excluded: counts(&m["assignment"]["excluded"])?,
            removed_without_labels: m["images"]["removed_without_labels"].as_u64().unwrap_or(0) as usize,
        })
    }
}

fn fmt_row(out: &mut String, r: &ResultRow) {
    let star = if r.significant { " *" } else { "" };
    let _ = writeln!(
        out,
        "  {:<28} {} vs {}  {:+.4}  [{:+.4}, {:+.4}]{star}",
        r.concept, r.group_a, r.group_b, r.point, r.ci_low, r.ci_high
    );
}

/// Plain-text summary: the `top` largest disparities per metric, the
/// aggregate rows, and exclusion accounting.
pub fn report(rows: &[ResultRow], top: usize, accounting: Option<&Accounting>) -> String {
    let mut out = String::new();
    if rows.is_empty() {
        out.push_str("warning: no results to report\n");
    }
    let mut metrics: Vec<&str> = Vec::new();
    for r in rows {
        if !metrics.contains(&r.metric.as_str()) {
            metrics.push(&r.metric);
        }
    }
    for metric in metrics {
        let mut concept_rows: Vec<&ResultRow> =
            rows.iter().filter(|r| r.metric == metric && r.concept != AGGREGATE).collect();
        concept_rows.sort_by(|x, y| {
            y.point
                .abs()
                .total_cmp(&x.point.abs())
                .then_with(|| x.concept.cmp(&y.concept))
                .then_with(|| (&x.group_a, &x.group_b).cmp(&(&y.group_a, &y.group_b)))
        });
        let significant = concept_rows.iter().filter(|r| r.significant).count();
        let _ = writeln!(
            out,
            "{metric}: {} concept estimates, {significant} significant; largest {}:",
            concept_rows.len(),
            top.min(concept_rows.len())
        );
        for r in concept_rows.iter().take(top) {
            fmt_row(&mut out, r);
        }
        for r in rows.iter().filter(|r| r.metric == metric && r.concept == AGGREGATE) {
            fmt_row(&mut out, r);
        }
        out.push('\n');
    }
    if let Some(a) = accounting {
        let _ = writeln!(out, "images: {} considered, {} removed without labels", a.total, a.removed_without_labels);
        for (g, n) in &a.assigned {
            let _ = writeln!(out, "  assigned {g}: {n}");
        }
        for (reason, n) in &a.excluded {
            let _ = writeln!(out, "  excluded {reason}: {n}");
        }
    }
    out
}
