//! Kaplan-Meier survival estimation and the k-sample log-rank test.
//!
//! Tied times follow the usual convention: events at a time `t` precede
//! censoring at the same `t`, so censored subjects still count as at risk for
//! that time's events. Curves list only times with at least one event; with
//! no events anywhere the curve is empty and survival is 1 at every horizon.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::util::{chi_square_sf, normal_quantile};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SurvStatsError {
    #[error("empty input: at least one subject is required")]
    EmptyInput,
    #[error("times/events length mismatch: {times} vs {events}")]
    LengthMismatch { times: usize, events: usize },
    #[error("invalid follow-up time {value} at index {index}: must be finite and positive")]
    InvalidTime { index: usize, value: f64 },
    #[error("alpha {0} out of range: must lie strictly between 0 and 1")]
    InvalidAlpha(f64),
    #[error("log-rank requires at least two groups, got {0}")]
    TooFewGroups(usize),
    #[error("log-rank group {0} is empty")]
    EmptyGroup(usize),
    #[error("log-rank statistic undefined: all subjects censored in every group")]
    NoEvents,
    #[error("log-rank variance matrix is singular; statistic undefined")]
    SingularVariance,
}

/// Method for the pointwise confidence band around the survival estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CiMethod {
    /// Complementary log-log transform (default; bands stay inside \[0, 1\]).
    LogLog,
    /// Plain Greenwood band on the survival scale, clipped to \[0, 1\].
    Greenwood,
}

/// Product-limit estimate over the distinct event times of one stratum.
#[derive(Debug, Clone, Serialize)]
pub struct SurvivalCurve {
    /// Distinct times with at least one event, ascending.
    pub event_times: Vec<f64>,
    /// Survival estimate immediately after each event time.
    pub survival: Vec<f64>,
    /// Subjects at risk at each event time (events and same-time censored included).
    pub at_risk: Vec<u64>,
    /// Events at each event time.
    pub n_events: Vec<u64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub alpha: f64,
    pub n_subjects: usize,
}

impl SurvivalCurve {
    pub fn len(&self) -> usize {
        self.event_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.event_times.is_empty()
    }
}

/// Result of the k-sample log-rank comparison.
#[derive(Debug, Clone, Serialize)]
pub struct LogRankResult {
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
}

fn validate_subjects(times: &[f64], events: &[bool]) -> Result<(), SurvStatsError> {
    if times.len() != events.len() {
        return Err(SurvStatsError::LengthMismatch {
            times: times.len(),
            events: events.len(),
        });
    }
    if times.is_empty() {
        return Err(SurvStatsError::EmptyInput);
    }
    for (i, &t) in times.iter().enumerate() {
        if !t.is_finite() || t <= 0.0 {
            return Err(SurvStatsError::InvalidTime { index: i, value: t });
        }
    }
    Ok(())
}

/// Kaplan-Meier estimate with a complementary log-log confidence band.
pub fn kaplan_meier(
    times: &[f64],
    events: &[bool],
    alpha: f64,
) -> Result<SurvivalCurve, SurvStatsError> {
    kaplan_meier_with(times, events, alpha, CiMethod::LogLog)
}

/// Kaplan-Meier estimate with an explicit confidence-band method.
pub fn kaplan_meier_with(
    times: &[f64],
    events: &[bool],
    alpha: f64,
    method: CiMethod,
) -> Result<SurvivalCurve, SurvStatsError> {
    validate_subjects(times, events)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SurvStatsError::InvalidAlpha(alpha));
    }
    let n = times.len();
    let order = crate::util::argsort_by_f64(times);
    let z = normal_quantile(1.0 - alpha / 2.0);

    let mut curve = SurvivalCurve {
        event_times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        n_events: Vec::new(),
        ci_lower: Vec::new(),
        ci_upper: Vec::new(),
        alpha,
        n_subjects: n,
    };

    let mut s = 1.0_f64;
    let mut greenwood_sum = 0.0_f64; // sum of d / (n (n - d))
    let mut at_risk = n as u64;
    let mut i = 0;
    while i < n {
        let t = times[order[i]];
        let mut j = i;
        let mut d = 0u64;
        let mut leaving = 0u64;
        while j < n && times[order[j]] == t {
            if events[order[j]] {
                d += 1;
            }
            leaving += 1;
            j += 1;
        }
        if d > 0 {
            let nf = at_risk as f64;
            let df_ = d as f64;
            s *= 1.0 - df_ / nf;
            let (lo, hi) = if s <= 0.0 {
                s = 0.0; // absorb rounding
                (0.0, 0.0)
            } else {
                greenwood_sum += df_ / (nf * (nf - df_));
                match method {
                    CiMethod::LogLog => {
                        let ln_s = s.ln();
                        let se = (greenwood_sum / (ln_s * ln_s)).sqrt();
                        let c = (-ln_s).ln();
                        (
                            (-(c + z * se).exp()).exp(),
                            (-(c - z * se).exp()).exp(),
                        )
                    }
                    CiMethod::Greenwood => {
                        let se = (s * s * greenwood_sum).sqrt();
                        ((s - z * se).max(0.0), (s + z * se).min(1.0))
                    }
                }
            };
            curve.event_times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(at_risk);
            curve.n_events.push(d);
            curve.ci_lower.push(lo);
            curve.ci_upper.push(hi);
        }
        at_risk -= leaving;
        i = j;
    }
    Ok(curve)
}

/// Survival estimate and confidence bounds at a horizon (right-continuous
/// step function). Before the first event the estimate is (1, 1, 1).
pub fn survival_at(curve: &SurvivalCurve, horizon: f64) -> (f64, f64, f64) {
    let k = curve.event_times.partition_point(|&t| t <= horizon);
    if k == 0 {
        (1.0, 1.0, 1.0)
    } else {
        (
            curve.survival[k - 1],
            curve.ci_lower[k - 1],
            curve.ci_upper[k - 1],
        )
    }
}

/// k-sample log-rank test. `group_times[g]` and `group_events[g]` describe
/// the subjects of group `g`; the statistic has `k - 1` degrees of freedom.
pub fn logrank(
    group_times: &[Vec<f64>],
    group_events: &[Vec<bool>],
) -> Result<LogRankResult, SurvStatsError> {
    let k = group_times.len();
    if k != group_events.len() {
        return Err(SurvStatsError::LengthMismatch {
            times: k,
            events: group_events.len(),
        });
    }
    if k < 2 {
        return Err(SurvStatsError::TooFewGroups(k));
    }
    let mut pooled: Vec<(f64, usize, bool)> = Vec::new();
    for g in 0..k {
        if group_times[g].is_empty() {
            return Err(SurvStatsError::EmptyGroup(g));
        }
        validate_subjects(&group_times[g], &group_events[g])?;
        for (i, &t) in group_times[g].iter().enumerate() {
            pooled.push((t, g, group_events[g][i]));
        }
    }
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("NaN time"));

    let mut at_risk: Vec<f64> = group_times.iter().map(|v| v.len() as f64).collect();
    let mut observed = vec![0.0_f64; k];
    let mut expected = vec![0.0_f64; k];
    let mut var = DMatrix::<f64>::zeros(k, k);
    let mut total_events = 0u64;

    let n_all = pooled.len();
    let mut i = 0;
    while i < n_all {
        let t = pooled[i].0;
        let mut j = i;
        let mut d_g = vec![0.0_f64; k];
        let mut leave_g = vec![0.0_f64; k];
        let mut d = 0.0_f64;
        while j < n_all && pooled[j].0 == t {
            let (_, g, e) = pooled[j];
            if e {
                d_g[g] += 1.0;
                d += 1.0;
                total_events += 1;
            }
            leave_g[g] += 1.0;
            j += 1;
        }
        if d > 0.0 {
            let n: f64 = at_risk.iter().sum();
            for g in 0..k {
                observed[g] += d_g[g];
                expected[g] += d * at_risk[g] / n;
            }
            if n > 1.0 {
                let c = d * (n - d) / (n - 1.0);
                for g in 0..k {
                    for h in 0..k {
                        let delta = if g == h { at_risk[g] / n } else { 0.0 };
                        var[(g, h)] += c * (delta - at_risk[g] * at_risk[h] / (n * n));
                    }
                }
            }
        }
        for g in 0..k {
            at_risk[g] -= leave_g[g];
        }
        i = j;
    }

    if total_events == 0 {
        return Err(SurvStatsError::NoEvents);
    }

    // Drop the last group; the remaining (k-1)-dimensional quadratic form
    // gives the chi-square statistic.
    let m = k - 1;
    let u = DVector::from_fn(m, |g, _| observed[g] - expected[g]);
    let vs = DMatrix::from_fn(m, m, |g, h| var[(g, h)]);
    let chi2 = if u.iter().all(|&x| x == 0.0) {
        0.0
    } else {
        let chol = Cholesky::new(vs).ok_or(SurvStatsError::SingularVariance)?;
        let sol = chol.solve(&u);
        u.dot(&sol).max(0.0)
    };
    let df = k - 1;
    Ok(LogRankResult {
        chi2,
        df,
        p_value: chi_square_sf(chi2, df as f64),
        observed,
        expected,
    })
}

/// Write a curve as CSV (`time, at_risk, n_events, survival, ci_lower, ci_upper`).
pub fn write_km_csv<W: std::io::Write>(
    curve: &SurvivalCurve,
    writer: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time", "at_risk", "n_events", "survival", "ci_lower", "ci_upper"])?;
    for i in 0..curve.len() {
        w.write_record(&[
            curve.event_times[i].to_string(),
            curve.at_risk[i].to_string(),
            curve.n_events[i].to_string(),
            curve.survival[i].to_string(),
            curve.ci_lower[i].to_string(),
            curve.ci_upper[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
