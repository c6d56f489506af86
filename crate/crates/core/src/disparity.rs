//! Bootstrap percentile intervals for between-group metric differences.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::GroupId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DisparityError {
    #[error("groups have different bootstrap counts ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no bootstrap has a defined value for both groups")]
    NoUsableBootstraps,
    #[error("empty concept set")]
    EmptyConceptSet,
}

/// Linear-interpolation percentile of `samples` at `q` ∈ [0, 100].
///
/// # Panics
///
/// On empty input.
pub fn percentile(samples: &[f64], q: f64) -> f64 {
    assert!(!samples.is_empty(), "percentile of an empty sample");
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, q)
}

fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let q = q.clamp(0.0, 100.0);
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Mean and 95% percentile interval of a bootstrap distribution of differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisparityStats {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bootstraps_used: usize,
    pub bootstraps_dropped: usize,
    /// False when more than half of the bootstraps were dropped.
    pub reliable: bool,
}

impl DisparityStats {
    fn from_differences(diffs: &[f64], dropped: usize) -> Result<Self, DisparityError> {
        if diffs.is_empty() {
            return Err(DisparityError::NoUsableBootstraps);
        }
        let mut sorted = diffs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let point = mean_sorted_symmetric(&sorted);
        let (ci_low, ci_high) = tail_pair(&sorted, 2.5);
        Ok(Self {
            point,
            ci_low,
            ci_high,
            bootstraps_used: diffs.len(),
            bootstraps_dropped: dropped,
            reliable: dropped * 2 <= diffs.len() + dropped,
        })
    }

    /// True iff the interval excludes zero.
    pub fn significant(&self) -> bool {
        !(self.ci_low <= 0.0 && 0.0 <= self.ci_high)
    }
}

/// Mean computed as (Σ positives − Σ |negatives|)/n with each side summed in
/// ascending order, so negating every sample negates the result bit-for-bit.
fn mean_sorted_symmetric(sorted: &[f64]) -> f64 {
    let sp: f64 = sorted.iter().filter(|v| **v > 0.0).sum();
    let sn: f64 = sorted.iter().rev().filter(|v| **v < 0.0).map(|v| -v).sum();
    (sp - sn) / sorted.len() as f64
}

/// Lower and upper tail percentiles at `tail` percent, the upper one interpolated
/// from the top so the pair mirrors exactly under negation.
fn tail_pair(sorted: &[f64], tail: f64) -> (f64, f64) {
    let last = sorted.len() - 1;
    let pos = tail / 100.0 * last as f64;
    let k = libm::floor(pos) as usize;
    let frac = pos - k as f64;
    if frac == 0.0 {
        return (sorted[k], sorted[last - k]);
    }
    let low = sorted[k] + frac * (sorted[k + 1] - sorted[k]);
    let high = sorted[last - k] - frac * (sorted[last - k] - sorted[last - k - 1]);
    (low, high)
}

pub fn significance_flag(stats: &DisparityStats) -> bool {
    stats.significant()
}

/// Per-bootstrap difference `a − b`; bootstraps where either side is undefined
/// are dropped and counted.
pub fn per_concept_disparity(a: &[Option<f64>], b: &[Option<f64>]) -> Result<DisparityStats, DisparityError> {
    if a.len() != b.len() {
        return Err(DisparityError::LengthMismatch(a.len(), b.len()));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| Some((*x)? - (*y)?))
        .collect();
    let dropped = a.len() - diffs.len();
    DisparityStats::from_differences(&diffs, dropped)
}

/// Aggregate over concepts: per bootstrap, mean over concepts of group a's metric
/// minus mean over concepts of group b's metric.
///
/// `concepts` holds, per concept, the per-bootstrap values of group a and b.
/// Within a bootstrap only concepts defined for both groups enter the means; a
/// bootstrap with no such concept is dropped.
pub fn aggregate_disparity(concepts: &[(&[Option<f64>], &[Option<f64>])]) -> Result<DisparityStats, DisparityError> {
    let Some((first, _)) = concepts.first() else {
        return Err(DisparityError::EmptyConceptSet);
    };
    let n = first.len();
    for (a, b) in concepts {
        if a.len() != n {
            return Err(DisparityError::LengthMismatch(n, a.len()));
        }
        if b.len() != n {
            return Err(DisparityError::LengthMismatch(n, b.len()));
        }
    }
    let mut diffs = Vec::with_capacity(n);
    for i in 0..n {
        let (mut sa, mut sb, mut k) = (0.0, 0.0, 0usize);
        for (a, b) in concepts {
            if let (Some(x), Some(y)) = (a[i], b[i]) {
                sa += x;
                sb += y;
                k += 1;
            }
        }
        if k > 0 {
            diffs.push(sa / k as f64 - sb / k as f64);
        }
    }
    let dropped = n - diffs.len();
    DisparityStats::from_differences(&diffs, dropped)
}

/// A labeled disparity estimate. Positive means the metric is higher for `group_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub metric: String,
    /// Concept key, or `aggregate`.
    pub concept: String,
    pub group_a: GroupId,
    pub group_b: GroupId,
    pub stats: DisparityStats,
    pub bootstrap_count: usize,
    pub positives_per_group: BTreeMap<GroupId, usize>,
    pub negatives_per_group: BTreeMap<GroupId, usize>,
}

/// Disparities for every ordered pair `(a, b)` with `a < b` in group order.
pub fn pairwise_disparities(
    values: &BTreeMap<GroupId, Vec<Option<f64>>>,
) -> Vec<(GroupId, GroupId, Result<DisparityStats, DisparityError>)> {
    let groups: Vec<&GroupId> = values.keys().collect();
    let mut out = Vec::new();
    for (i, a) in groups.iter().enumerate() {
        for b in &groups[i + 1..] {
            out.push(((*a).clone(), (*b).clone(), per_concept_disparity(&values[*a], &values[*b])));
        }
    }
    out
}

/// Largest absolute point disparity over all group pairs. Zero for fewer than two groups.
pub fn max_pairwise_disparity<'a>(stats: impl IntoIterator<Item = &'a DisparityStats>) -> f64 {
    stats.into_iter().map(|s| s.point.abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0), 2.5);
        let xs = [3.0, -1.0, 8.0, 2.0];
        assert_eq!(percentile(&xs, 0.0), -1.0);
        assert_eq!(percentile(&xs, 100.0), 8.0);
        for q in [0.0, 13.0, 50.0, 99.0, 100.0] {
            assert_eq!(percentile(&[0.3; 7], q), 0.3);
        }
    }

    #[test]
    fn one_to_hundred() {
        let a: Vec<Option<f64>> = (1..=100).map(|i| Some(i as f64)).collect();
        let b = vec![Some(0.0); 100];
        let s = per_concept_disparity(&a, &b).unwrap();
        assert_eq!(s.point, 50.5);
        // position 0.025·99 = 2.475 → 3.475; 0.975·99 = 96.525 → 97.525
        assert!((s.ci_low - 3.475).abs() < 1e-12);
        assert!((s.ci_high - 97.525).abs() < 1e-12);
        assert!(s.significant());
    }

    #[test]
    fn identical_groups_have_zero_width_interval() {
        let a: Vec<_> = [0.3, 0.5, 0.9].iter().map(|v| Some(*v)).collect();
        let s = per_concept_disparity(&a, &a).unwrap();
        assert_eq!((s.point, s.ci_low, s.ci_high), (0.0, 0.0, 0.0));
        assert!(!s.significant());
    }

    #[test]
    fn undefined_bootstraps_are_dropped() {
        let a = [Some(0.5), None, Some(0.7), None];
        let b = [Some(0.1), Some(0.2), None, Some(0.2)];
        let s = per_concept_disparity(&a, &b).unwrap();
        assert_eq!((s.bootstraps_used, s.bootstraps_dropped), (1, 3));
        assert!(!s.reliable);
        let s = per_concept_disparity(&a[..2], &b[..2]).unwrap();
        assert!(s.reliable);
        assert_eq!(per_concept_disparity(&[None], &[Some(1.0)]), Err(DisparityError::NoUsableBootstraps));
        assert_eq!(per_concept_disparity(&[None], &[]), Err(DisparityError::LengthMismatch(1, 0)));
    }

    #[test]
    fn significance_boundaries() {
        let mk = |lo, hi| DisparityStats {
            point: 0.0, ci_low: lo, ci_high: hi, bootstraps_used: 1, bootstraps_dropped: 0, reliable: true,
        };
        assert!(significance_flag(&mk(0.02, 0.08)));
        assert!(!significance_flag(&mk(-0.01, 0.05)));
        assert!(!significance_flag(&mk(0.0, 0.0)));
        assert!(significance_flag(&mk(-0.3, -0.1)));
    }

    fn some(xs: &[f64]) -> Vec<Option<f64>> {
        xs.iter().map(|v| Some(*v)).collect()
    }

    #[test]
    fn aggregate_examples() {
        let a = some(&[0.4, 0.6, 0.5]);
        let b = some(&[0.1, 0.2, 0.4]);
        assert_eq!(aggregate_disparity(&[(&a, &b)]).unwrap(), per_concept_disparity(&a, &b).unwrap());

        let x1 = some(&[0.5, 0.7]);
        let y1 = some(&[0.3, 0.4]);
        // second concept mirrors the first: disparity −x
        let s = aggregate_disparity(&[(&x1, &y1), (&y1, &x1)]).unwrap();
        assert_eq!((s.point, s.ci_low, s.ci_high), (0.0, 0.0, 0.0));

        assert_eq!(aggregate_disparity(&[]), Err(DisparityError::EmptyConceptSet));
    }

    #[test]
    fn aggregate_three_concepts_four_bootstraps() {
        // Hand-computed: per bootstrap, mean_a − mean_b over three concepts.
        let a = [some(&[0.9, 0.8, 0.7, 0.6]), some(&[0.3, 0.3, 0.3, 0.3]), some(&[0.6, 0.4, 0.5, 0.3])];
        let b = [some(&[0.5, 0.5, 0.5, 0.5]), some(&[0.6, 0.0, 0.3, 0.3]), some(&[0.1, 0.4, 0.4, 0.0])];
        // b0: (1.8 − 1.2)/3 = 0.2; b1: (1.5 − 0.9)/3 = 0.2; b2: (1.5 − 1.2)/3 = 0.1; b3: (1.2 − 0.8)/3 = 0.4/3
        let expected = [0.2, 0.2, 0.1, 0.4 / 3.0];
        let pairs: Vec<(&[Option<f64>], &[Option<f64>])> =
            a.iter().zip(&b).map(|(x, y)| (x.as_slice(), y.as_slice())).collect();
        let s = aggregate_disparity(&pairs).unwrap();
        let mean = expected.iter().sum::<f64>() / 4.0;
        assert!((s.point - mean).abs() < 1e-12);
        assert!((s.ci_low - percentile(&expected, 2.5)).abs() < 1e-12);
        assert!((s.ci_high - percentile(&expected, 97.5)).abs() < 1e-12);
        // sorted [0.1, 0.1333, 0.2, 0.2]; 2.5% → pos 0.075 → 0.1 + 0.075·0.0333
        assert!((s.ci_low - (0.1 + 0.075 * (0.4 / 3.0 - 0.1))).abs() < 1e-12);
    }

    #[test]
    fn pairwise_matrix_is_antisymmetric() {
        let values: BTreeMap<GroupId, Vec<Option<f64>>> = [
            ("Africa", some(&[0.2, 0.3, 0.25])),
            ("Americas", some(&[0.5, 0.45, 0.6])),
            ("Europe", some(&[0.55, 0.5, 0.52])),
        ]
        .into_iter()
        .map(|(g, v)| (GroupId::from(g), v))
        .collect();
        let pairs = pairwise_disparities(&values);
        assert_eq!(pairs.len(), 3);
        for (a, b, s) in &pairs {
            let s = s.as_ref().unwrap();
            let r = per_concept_disparity(&values[b], &values[a]).unwrap();
            assert_eq!(r.point, -s.point);
            assert_eq!((r.ci_low, r.ci_high), (-s.ci_high, -s.ci_low));
        }
        let m = max_pairwise_disparity(pairs.iter().map(|(_, _, s)| s.as_ref().unwrap()));
        assert!(m >= 0.0);
        // Africa vs Europe: (0.35 + 0.2 + 0.27) / 3
        assert!((m - 0.82 / 3.0).abs() < 1e-12, "{m}");
        assert_eq!(max_pairwise_disparity([]), 0.0);
    }

    proptest! {
        #[test]
        fn swapping_groups_negates_exactly(
            vals in prop::collection::vec((prop::option::weighted(0.9, 0.0f64..1.0), prop::option::weighted(0.9, 0.0f64..1.0)), 1..60)
        ) {
            let a: Vec<_> = vals.iter().map(|v| v.0).collect();
            let b: Vec<_> = vals.iter().map(|v| v.1).collect();
            match (per_concept_disparity(&a, &b), per_concept_disparity(&b, &a)) {
                (Ok(x), Ok(y)) => {
                    prop_assert_eq!(x.point, -y.point);
                    prop_assert_eq!(x.ci_low, -y.ci_high);
                    prop_assert_eq!(x.ci_high, -y.ci_low);
                    prop_assert!(x.ci_low <= x.ci_high);
                }
                (Err(e1), Err(e2)) => prop_assert_eq!(e1, e2),
                _ => prop_assert!(false),
            }
        }
    }
}
