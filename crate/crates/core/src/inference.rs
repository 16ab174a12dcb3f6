//! Bootstrap confidence intervals for cohort-level metrics, including
//! paired differences between two metrics on the same resamples.
//!
//! The resample index schedule is generated sequentially up front from the
//! seed; replicates are then evaluated in parallel and reduced in schedule
//! order, so results are bit-identical across thread counts. Intervals use
//! the percentile method with a nearest-rank convention (documented on
//! [`percentile_bounds`]).
//!
//! A metric is a closure over the cohort and one resampled index multiset;
//! it returns `None` (or a non-finite value) when undefined on that
//! resample, e.g. a concordance with no comparable pairs. Undefined
//! replicates are skipped and reported; more than
//! [`MAX_UNDEFINED_FRACTION`] of them fails the run.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cohort::Cohort;

/// Largest tolerated share of undefined replicates.
pub const MAX_UNDEFINED_FRACTION: f64 = 0.10;

pub const DEFAULT_RESAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("metric is undefined on the full cohort")]
    PointUndefined,
    #[error(
        "{undefined} of {total} bootstrap replicates were undefined \
         (more than the tolerated fraction {max_fraction})"
    )]
    TooManyUndefined {
        undefined: usize,
        total: usize,
        max_fraction: f64,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("replicate dump error: {0}")]
    Csv(#[from] csv::Error),
}

/// A percentile bootstrap interval.
#[derive(Debug, Clone, Serialize)]
pub struct BootstrapResult {
    pub point_estimate: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Requested number of resamples.
    pub n_resamples: usize,
    /// Replicates on which the metric was defined.
    pub n_effective: usize,
    pub seed: u64,
    /// Per-replicate values in schedule order; NaN marks an undefined
    /// replicate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicate_values: Option<Vec<f64>>,
}

/// Paired-difference bootstrap (`a - b` on shared resamples).
#[derive(Debug, Clone, Serialize)]
pub struct BootstrapDiffResult {
    /// Interval over the per-replicate differences.
    pub diff: BootstrapResult,
    pub point_a: f64,
    pub point_b: f64,
    /// Per-replicate (a, b) pairs in schedule order; NaN marks undefined.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicate_pairs: Option<Vec<(f64, f64)>>,
}

fn validate_common(
    n_items: usize,
    n_resamples: usize,
    alpha: f64,
) -> Result<(), InferenceError> {
    if n_items == 0 {
        return Err(InferenceError::InvalidInput("empty cohort".into()));
    }
    if n_resamples == 0 {
        return Err(InferenceError::InvalidInput(
            "n_resamples must be at least 1".into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(InferenceError::InvalidInput(format!(
            "alpha must lie strictly between 0 and 1, got {alpha}"
        )));
    }
    Ok(())
}

/// Draws the full resample schedule sequentially from one seeded stream.
fn index_schedule(n_cases: usize, n_resamples: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n_resamples)
        .map(|_| (0..n_cases).map(|_| rng.random_range(0..n_cases)).collect())
        .collect()
}

/// Percentile-interval endpoints by nearest rank: on `m` sorted values the
/// lower bound is the value of rank `ceil(alpha/2 * m)` and the upper bound
/// the value of rank `ceil((1 - alpha/2) * m)` (1-indexed, clamped to at
/// least rank 1).
pub fn percentile_bounds(sorted: &[f64], alpha: f64) -> (f64, f64) {
    let m = sorted.len();
    debug_assert!(m > 0);
    let rank = |q: f64| ((q * m as f64).ceil() as usize).clamp(1, m);
    (sorted[rank(alpha / 2.0) - 1], sorted[rank(1.0 - alpha / 2.0) - 1])
}

fn finish(values: &[f64], alpha: f64) -> Result<(f64, f64, usize), InferenceError> {
    let mut defined: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let undefined = values.len() - defined.len();
    if (undefined as f64) > MAX_UNDEFINED_FRACTION * values.len() as f64 {
        return Err(InferenceError::TooManyUndefined {
            undefined,
            total: values.len(),
            max_fraction: MAX_UNDEFINED_FRACTION,
        });
    }
    defined.sort_by(f64::total_cmp);
    let (lo, hi) = percentile_bounds(&defined, alpha);
    Ok((lo, hi, defined.len()))
}

/// Percentile bootstrap CI over the plain index set `0..n_items`, for
/// callers that carry their own columnar data instead of a [`Cohort`]. The
/// metric sees one resampled index multiset (drawn with replacement).
pub fn bootstrap_indices_ci<F>(
    metric: F,
    n_items: usize,
    n_resamples: usize,
    alpha: f64,
    seed: u64,
) -> Result<BootstrapResult, InferenceError>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    validate_common(n_items, n_resamples, alpha)?;
    let full: Vec<usize> = (0..n_items).collect();
    let point = metric(&full)
        .filter(|v| v.is_finite())
        .ok_or(InferenceError::PointUndefined)?;

    let schedule = index_schedule(n_items, n_resamples, seed);
    let values: Vec<f64> = schedule
        .par_iter()
        .map(|idx| metric(idx).unwrap_or(f64::NAN))
        .collect();

    let (ci_lower, ci_upper, n_effective) = finish(&values, alpha)?;
    Ok(BootstrapResult {
        point_estimate: point,
        ci_lower,
        ci_upper,
        n_resamples,
        n_effective,
        seed,
        replicate_values: Some(values),
    })
}

/// Percentile bootstrap CI for one metric.
///
/// The metric sees the cohort and a resampled index multiset (indices into
/// `cohort.cases()`, drawn with replacement).
pub fn bootstrap_ci<F>(
    metric: F,
    cohort: &Cohort,
    n_resamples: usize,
    alpha: f64,
    seed: u64,
) -> Result<BootstrapResult, InferenceError>
where
    F: Fn(&Cohort, &[usize]) -> Option<f64> + Sync,
{
    bootstrap_indices_ci(
        |idx| metric(cohort, idx),
        cohort.len(),
        n_resamples,
        alpha,
        seed,
    )
}

/// Paired bootstrap CI for the difference `metric_a - metric_b`: every
/// replicate evaluates both metrics on the same index multiset. A replicate
/// counts only when both metrics are defined on it.
pub fn bootstrap_diff_ci<FA, FB>(
    metric_a: FA,
    metric_b: FB,
    cohort: &Cohort,
    n_resamples: usize,
    alpha: f64,
    seed: u64,
) -> Result<BootstrapDiffResult, InferenceError>
where
    FA: Fn(&Cohort, &[usize]) -> Option<f64> + Sync,
    FB: Fn(&Cohort, &[usize]) -> Option<f64> + Sync,
{
    validate_common(cohort.len(), n_resamples, alpha)?;
    let n = cohort.len();
    let full: Vec<usize> = (0..n).collect();
    let point_a = metric_a(cohort, &full)
        .filter(|v| v.is_finite())
        .ok_or(InferenceError::PointUndefined)?;
    let point_b = metric_b(cohort, &full)
        .filter(|v| v.is_finite())
        .ok_or(InferenceError::PointUndefined)?;

    let schedule = index_schedule(n, n_resamples, seed);
    let pairs: Vec<(f64, f64)> = schedule
        .par_iter()
        .map(|idx| {
            (
                metric_a(cohort, idx).unwrap_or(f64::NAN),
                metric_b(cohort, idx).unwrap_or(f64::NAN),
            )
        })
        .collect();
    let diffs: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| {
            let d = a - b;
            if d.is_finite() {
                d
            } else {
                f64::NAN
            }
        })
        .collect();

    let point = point_a - point_b;
    let (ci_lower, ci_upper, n_effective) = finish(&diffs, alpha)?;
    Ok(BootstrapDiffResult {
        diff: BootstrapResult {
            point_estimate: point,
            ci_lower,
            ci_upper,
            n_resamples,
            n_effective,
            seed,
            replicate_values: Some(diffs),
        },
        point_a,
        point_b,
        replicate_pairs: Some(pairs),
    })
}

/// Writes a replicate dump: `replicate_index,value_a,value_b,diff`
/// (`value_b`/`diff` empty for single-metric runs; NaN cells empty).
pub fn write_replicates_csv<W: Write>(
    w: W,
    values_a: &[f64],
    values_b: Option<&[f64]>,
) -> Result<(), InferenceError> {
    if let Some(b) = values_b {
        if b.len() != values_a.len() {
            return Err(InferenceError::InvalidInput(
                "replicate series lengths differ".into(),
            ));
        }
    }
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["replicate_index", "value_a", "value_b", "diff"])?;
    let fmt = |v: f64| {
        if v.is_finite() {
            format!("{v}")
        } else {
            String::new()
        }
    };
    for (i, &a) in values_a.iter().enumerate() {
        let (b_cell, d_cell) = match values_b {
            Some(b) => (fmt(b[i]), fmt(a - b[i])),
            None => (String::new(), String::new()),
        };
        wtr.write_record([i.to_string(), fmt(a), b_cell, d_cell])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Case, Cohort};

    fn toy_cohort(n: usize) -> Cohort {
        let cases: Vec<Case> = (0..n)
            .map(|i| Case {
                case_id: format!("c{i:04}"),
                surgery_year: 2000,
                pct_gp3: 100.0,
                pct_gp4: 0.0,
                pct_gp5: 0.0,
                tumor_present: true,
                pathologist_gg: Some(1),
                t_category: None,
                followup_years: 1.0 + i as f64,
                dss_event: i % 4 == 0,
                os_event: None,
            })
            .collect();
        Cohort::new(cases, "toy", vec![]).unwrap()
    }

    #[test]
    fn constant_metric_gives_degenerate_interval() {
        let cohort = toy_cohort(20);
        let r = bootstrap_ci(|_, _| Some(0.5), &cohort, 200, 0.05, 42).unwrap();
        assert_eq!(r.point_estimate, 0.5);
        assert_eq!((r.ci_lower, r.ci_upper), (0.5, 0.5));
        assert_eq!(r.n_effective, 200);
    }

    #[test]
    fn same_seed_is_bit_identical_across_thread_counts() {
        let cohort = toy_cohort(50);
        let metric = |c: &Cohort, idx: &[usize]| {
            let mean = idx
                .iter()
                .map(|&i| c.cases()[i].followup_years)
                .sum::<f64>()
                / idx.len() as f64;
            Some(mean)
        };
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| bootstrap_ci(metric, &cohort, 300, 0.05, 7).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(|| bootstrap_ci(metric, &cohort, 300, 0.05, 7).unwrap());
        assert_eq!(single.ci_lower.to_bits(), many.ci_lower.to_bits());
        assert_eq!(single.ci_upper.to_bits(), many.ci_upper.to_bits());
        assert_eq!(
            single.replicate_values.unwrap(),
            many.replicate_values.unwrap()
        );
        // and a different seed changes the interval
        let other = bootstrap_ci(metric, &cohort, 300, 0.05, 8).unwrap();
        assert!(other.ci_lower != single.ci_lower || other.ci_upper != single.ci_upper);
    }

    #[test]
    fn percentile_rank_convention() {
        let sorted: Vec<f64> = (1..=100).map(f64::from).collect();
        // ceil(0.025 * 100) = 3, ceil(0.975 * 100) = 98
        assert_eq!(percentile_bounds(&sorted, 0.05), (3.0, 98.0));
        // ceil(0.25 * 100) = 25, ceil(0.75 * 100) = 75
        assert_eq!(percentile_bounds(&sorted, 0.5), (25.0, 75.0));
        let one = [4.2];
        assert_eq!(percentile_bounds(&one, 0.05), (4.2, 4.2));
    }

    #[test]
    fn undefined_replicates_are_skipped_and_reported() {
        let cohort = toy_cohort(30);
        // undefined whenever the first resampled index is 1: ~3% of
        // replicates, and never the full-cohort evaluation (which starts
        // with index 0)
        let metric = |_: &Cohort, idx: &[usize]| {
            if idx[0] == 1 {
                None
            } else {
                Some(idx.iter().sum::<usize>() as f64)
            }
        };
        let r = bootstrap_ci(metric, &cohort, 1000, 0.05, 11).unwrap();
        assert!(r.n_effective < 1000, "some replicates must be skipped");
        assert!(r.n_effective > 900);
        let undefined = r
            .replicate_values
            .unwrap()
            .iter()
            .filter(|v| v.is_nan())
            .count();
        assert_eq!(undefined, 1000 - r.n_effective);
    }

    #[test]
    fn excessive_undefined_fraction_fails() {
        let cohort = toy_cohort(10);
        // undefined whenever index 0 is absent: ~35% of replicates miss it,
        // while the full-cohort evaluation always has it
        let metric = |_: &Cohort, idx: &[usize]| {
            if idx.contains(&0) {
                Some(1.0)
            } else {
                None
            }
        };
        assert!(matches!(
            bootstrap_ci(metric, &cohort, 200, 0.05, 3),
            Err(InferenceError::TooManyUndefined { .. })
        ));
    }

    #[test]
    fn point_metric_must_be_defined() {
        let cohort = toy_cohort(10);
        assert!(matches!(
            bootstrap_ci(|_, _| None, &cohort, 100, 0.05, 1),
            Err(InferenceError::PointUndefined)
        ));
        assert!(matches!(
            bootstrap_ci(|_, _| Some(f64::NAN), &cohort, 100, 0.05, 1),
            Err(InferenceError::PointUndefined)
        ));
    }

    #[test]
    fn identical_metrics_give_zero_difference() {
        let cohort = toy_cohort(25);
        let m = |c: &Cohort, idx: &[usize]| {
            Some(
                idx.iter()
                    .map(|&i| c.cases()[i].followup_years)
                    .sum::<f64>(),
            )
        };
        let r = bootstrap_diff_ci(m, m, &cohort, 300, 0.05, 5).unwrap();
        assert_eq!(r.diff.point_estimate, 0.0);
        assert_eq!((r.diff.ci_lower, r.diff.ci_upper), (0.0, 0.0));
        // the zero difference on every replicate proves the index multisets
        // are shared between the two metrics
    }

    #[test]
    fn swapping_metrics_negates_and_mirrors() {
        let cohort = toy_cohort(40);
        let ma = |c: &Cohort, idx: &[usize]| {
            Some(
                idx.iter()
                    .map(|&i| c.cases()[i].followup_years)
                    .sum::<f64>()
                    / idx.len() as f64,
            )
        };
        let mb = |c: &Cohort, idx: &[usize]| {
            Some(
                idx.iter()
                    .map(|&i| if c.cases()[i].dss_event { 1.0 } else { 0.0 })
                    .sum::<f64>(),
            )
        };
        // 401 resamples make the nearest-rank bounds symmetric under
        // negation: lower rank ceil(0.025 * 401) = 11 equals
        // 401 + 1 - ceil(0.975 * 401) = 402 - 391
        let ab = bootstrap_diff_ci(ma, mb, &cohort, 401, 0.05, 9).unwrap();
        let ba = bootstrap_diff_ci(mb, ma, &cohort, 401, 0.05, 9).unwrap();
        assert_eq!(ab.diff.point_estimate, -ba.diff.point_estimate);
        assert_eq!(ab.diff.ci_lower, -ba.diff.ci_upper);
        assert_eq!(ab.diff.ci_upper, -ba.diff.ci_lower);
    }

    #[test]
    fn invalid_arguments_rejected() {
        let cohort = toy_cohort(5);
        assert!(bootstrap_ci(|_, _| Some(1.0), &cohort, 0, 0.05, 1).is_err());
        assert!(bootstrap_ci(|_, _| Some(1.0), &cohort, 10, 0.0, 1).is_err());
        assert!(bootstrap_ci(|_, _| Some(1.0), &cohort, 10, 1.0, 1).is_err());
    }

    #[test]
    fn replicate_dump_format() {
        let mut buf = Vec::new();
        write_replicates_csv(&mut buf, &[0.5, f64::NAN], Some(&[0.4, 0.6])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("replicate_index,value_a,value_b,diff"));
        assert_eq!(lines.next(), Some("0,0.5,0.4,0.09999999999999998"));
        assert_eq!(lines.next(), Some("1,,0.6,"));
    }
}
