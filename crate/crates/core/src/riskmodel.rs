//! Continuous risk scores, frequency-matched risk groups, and the
//! rule-based pattern-to-grade mapping.
//!
//! Scores are linear predictors of a proportional-hazards model on
//! (pct_gp4, pct_gp5); pct_gp3 is dropped to avoid linear dependence with
//! the other two percentages. Out-of-sample scores come from
//! leave-one-case-out cross-validation or a temporal train/eval split.
//! Scores are discretized into groups 1-5 by frequency-matching a reference
//! histogram.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Case, Cohort, CohortError, Outcome};
use crate::coxph::{fit_cox, linear_predictor, CoxError, CoxFit, FitOptions};

/// Minimum cohort size for leave-one-case-out scoring.
pub const LOOCV_MIN_CASES: usize = 20;
/// Minimum number of observed events for leave-one-case-out scoring.
pub const LOOCV_MIN_EVENTS: usize = 2;
/// Ridge strength used when a fold (or full fit) fails without a penalty.
pub const FOLD_FALLBACK_RIDGE: f64 = 0.02;
/// Minimum share (percentage points) for the second-largest pattern to be
/// reported as the secondary pattern.
pub const SECONDARY_MIN_SHARE: f64 = 5.0;

#[derive(Debug, Error)]
pub enum RiskModelError {
    #[error("cohort has {n} cases; at least {min} required")]
    CohortTooSmall { n: usize, min: usize },
    #[error("cohort has {n} events; at least {min} required")]
    TooFewEvents { n: usize, min: usize },
    #[error("fold for case {case_id} failed: {source}")]
    FoldFailed {
        case_id: String,
        source: CoxError,
    },
    #[error("train and eval cohorts overlap (case {0})")]
    Overlap(String),
    #[error("reference histogram sums to {expected}, but {got} assignments were given")]
    HistogramMismatch { expected: u64, got: usize },
    #[error("invalid reference histogram: {0}")]
    InvalidHistogram(String),
    #[error("risk score for case {0} is not finite")]
    InvalidScore(String),
    #[error("pattern percentages do not describe a tumor (undefined grade)")]
    UndefinedGrade,
    #[error("grade group {0} outside 1-5")]
    InvalidGroup(u8),
    #[error("case {0} has no pathologist grade")]
    MissingGrade(String),
    #[error(transparent)]
    Cox(#[from] CoxError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error("assignment file error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed assignment row {row}: {reason}")]
    MalformedAssignment { row: usize, reason: String },
}

/// How a risk score was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMethod {
    Loocv,
    TemporalSplit,
    RuleBased,
    InSample,
}

impl fmt::Display for RiskMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RiskMethod::Loocv => "loocv",
            RiskMethod::TemporalSplit => "temporal_split",
            RiskMethod::RuleBased => "rule_based",
            RiskMethod::InSample => "in_sample",
        };
        write!(f, "{s}")
    }
}

impl FromStr for RiskMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loocv" => Ok(RiskMethod::Loocv),
            "temporal_split" => Ok(RiskMethod::TemporalSplit),
            "rule_based" => Ok(RiskMethod::RuleBased),
            "in_sample" => Ok(RiskMethod::InSample),
            other => Err(format!("unknown risk method {other:?}")),
        }
    }
}

/// A per-case continuous risk score, optionally with a discrete group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAssignment {
    pub case_id: String,
    pub risk_score: f64,
    /// Discrete risk group 1-5, present after discretization or rule
    /// mapping.
    pub risk_group: Option<u8>,
    pub method: RiskMethod,
}

/// The covariate vector the risk model is fitted on.
pub fn pattern_features(case: &Case) -> [f64; 2] {
    [case.pct_gp4, case.pct_gp5]
}

fn fit_with_fallback(
    x: &[Vec<f64>],
    times: &[f64],
    events: &[bool],
) -> Result<(CoxFit, bool), CoxError> {
    match fit_cox(x, times, events, &FitOptions::default()) {
        Ok(fit) => Ok((fit, false)),
        Err(
            CoxError::Separation { .. }
            | CoxError::NonIdentified { .. }
            | CoxError::NotConverged { .. },
        ) => {
            let opts = FitOptions {
                ridge: FOLD_FALLBACK_RIDGE,
                ..FitOptions::default()
            };
            fit_cox(x, times, events, &opts).map(|fit| (fit, true))
        }
        Err(e) => Err(e),
    }
}

/// Scores from leave-one-case-out cross-validation.
pub struct LoocvResult {
    /// One assignment per case, in cohort order.
    pub assignments: Vec<RiskAssignment>,
    /// Cases whose fold needed the ridge fallback.
    pub ridge_fallback_cases: Vec<String>,
}

/// Out-of-fold risk scores: each case is scored by a model fitted on every
/// other case. Folds run concurrently; results are deterministic and
/// independent of thread count.
pub fn loocv_risk_scores(
    cohort: &Cohort,
    endpoint: Outcome,
) -> Result<LoocvResult, RiskModelError> {
    let n = cohort.len();
    if n < LOOCV_MIN_CASES {
        return Err(RiskModelError::CohortTooSmall {
            n,
            min: LOOCV_MIN_CASES,
        });
    }
    let (times, events) = cohort.times_events(endpoint)?;
    let n_events = events.iter().filter(|&&e| e).count();
    if n_events < LOOCV_MIN_EVENTS {
        return Err(RiskModelError::TooFewEvents {
            n: n_events,
            min: LOOCV_MIN_EVENTS,
        });
    }
    let x: Vec<Vec<f64>> = cohort
        .cases()
        .iter()
        .map(|c| pattern_features(c).to_vec())
        .collect();

    let folds: Vec<Result<(f64, bool), RiskModelError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut fold_x = Vec::with_capacity(n - 1);
            let mut fold_t = Vec::with_capacity(n - 1);
            let mut fold_e = Vec::with_capacity(n - 1);
            for j in 0..n {
                if j != i {
                    fold_x.push(x[j].clone());
                    fold_t.push(times[j]);
                    fold_e.push(events[j]);
                }
            }
            let (fit, fell_back) =
                fit_with_fallback(&fold_x, &fold_t, &fold_e).map_err(|source| {
                    RiskModelError::FoldFailed {
                        case_id: cohort.cases()[i].case_id.clone(),
                        source,
                    }
                })?;
            let score = linear_predictor(&fit.beta, &x[i])?;
            Ok((score, fell_back))
        })
        .collect();

    let mut assignments = Vec::with_capacity(n);
    let mut fallbacks = Vec::new();
    for (i, r) in folds.into_iter().enumerate() {
        let (score, fell_back) = r?;
        let case_id = cohort.cases()[i].case_id.clone();
        if fell_back {
            fallbacks.push(case_id.clone());
        }
        assignments.push(RiskAssignment {
            case_id,
            risk_score: score,
            risk_group: None,
            method: RiskMethod::Loocv,
        });
    }
    Ok(LoocvResult {
        assignments,
        ridge_fallback_cases: fallbacks,
    })
}

/// In-sample scores: one fit on the whole cohort, each case scored by it.
/// Also returns the fit for reporting.
pub fn in_sample_scores(
    cohort: &Cohort,
    endpoint: Outcome,
) -> Result<(Vec<RiskAssignment>, CoxFit), RiskModelError> {
    let (times, events) = cohort.times_events(endpoint)?;
    let x: Vec<Vec<f64>> = cohort
        .cases()
        .iter()
        .map(|c| pattern_features(c).to_vec())
        .collect();
    let (fit, _) = fit_with_fallback(&x, &times, &events)?;
    let assignments = cohort
        .cases()
        .iter()
        .map(|c| {
            Ok(RiskAssignment {
                case_id: c.case_id.clone(),
                risk_score: linear_predictor(&fit.beta, &pattern_features(c))?,
                risk_group: None,
                method: RiskMethod::InSample,
            })
        })
        .collect::<Result<Vec<_>, CoxError>>()?;
    Ok((assignments, fit))
}

/// Fits on `train` and scores `eval` with the frozen coefficients. The two
/// cohorts must be disjoint by case_id.
pub fn temporal_split_scores(
    train: &Cohort,
    eval: &Cohort,
    endpoint: Outcome,
) -> Result<Vec<RiskAssignment>, RiskModelError> {
    let train_ids: HashSet<&str> = train.cases().iter().map(|c| c.case_id.as_str()).collect();
    if let Some(dup) = eval
        .cases()
        .iter()
        .find(|c| train_ids.contains(c.case_id.as_str()))
    {
        return Err(RiskModelError::Overlap(dup.case_id.clone()));
    }
    let (times, events) = train.times_events(endpoint)?;
    let x: Vec<Vec<f64>> = train
        .cases()
        .iter()
        .map(|c| pattern_features(c).to_vec())
        .collect();
    let (fit, _) = fit_with_fallback(&x, &times, &events)?;
    eval.cases()
        .iter()
        .map(|c| {
            Ok(RiskAssignment {
                case_id: c.case_id.clone(),
                risk_score: linear_predictor(&fit.beta, &pattern_features(c))?,
                risk_group: None,
                method: RiskMethod::TemporalSplit,
            })
        })
        .collect()
}

/// Case counts per group 1-5 used for frequency-matched discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceHistogram {
    pub counts: [u64; 5],
}

impl ReferenceHistogram {
    pub fn new(counts: [u64; 5]) -> Self {
        ReferenceHistogram { counts }
    }

    /// Histogram of pathologist grades over a cohort; every case must be
    /// graded.
    pub fn from_cohort(cohort: &Cohort) -> Result<Self, RiskModelError> {
        let mut counts = [0u64; 5];
        for c in cohort.cases() {
            match c.pathologist_gg {
                Some(g @ 1..=5) => counts[usize::from(g) - 1] += 1,
                Some(g) => return Err(RiskModelError::InvalidGroup(g)),
                None => return Err(RiskModelError::MissingGrade(c.case_id.clone())),
            }
        }
        Ok(ReferenceHistogram { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Rescales the histogram to a new total by largest-remainder
    /// apportionment (ties resolved toward the lower group index).
    pub fn scaled_to(&self, n: u64) -> Result<Self, RiskModelError> {
        let total = self.total();
        if total == 0 {
            return Err(RiskModelError::InvalidHistogram(
                "cannot rescale an all-zero histogram".into(),
            ));
        }
        let mut counts = [0u64; 5];
        let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(5);
        let mut assigned = 0u64;
        for (k, &c) in self.counts.iter().enumerate() {
            let ideal = n as f64 * c as f64 / total as f64;
            let floor = ideal.floor() as u64;
            counts[k] = floor;
            assigned += floor;
            remainders.push((k, ideal - floor as f64));
        }
        // stable sort keeps lower indices first among equal remainders
        remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let mut leftover = n - assigned;
        for (k, _) in remainders {
            if leftover == 0 {
                break;
            }
            counts[k] += 1;
            leftover -= 1;
        }
        Ok(ReferenceHistogram { counts })
    }
}

/// Discretizes scores into groups 1-5 so the group sizes equal the
/// reference histogram exactly. Cases sort ascending by (score, case_id);
/// the first `counts[0]` become group 1, and so on. The returned vector
/// preserves the input order.
pub fn discretize_to_reference(
    assignments: &[RiskAssignment],
    reference: &ReferenceHistogram,
) -> Result<Vec<RiskAssignment>, RiskModelError> {
    let total = reference.total();
    if total != assignments.len() as u64 {
        return Err(RiskModelError::HistogramMismatch {
            expected: total,
            got: assignments.len(),
        });
    }
    for a in assignments {
        if !a.risk_score.is_finite() {
            return Err(RiskModelError::InvalidScore(a.case_id.clone()));
        }
    }
    let mut order: Vec<usize> = (0..assignments.len()).collect();
    order.sort_by(|&i, &j| {
        assignments[i]
            .risk_score
            .total_cmp(&assignments[j].risk_score)
            .then_with(|| assignments[i].case_id.cmp(&assignments[j].case_id))
    });
    let mut out = assignments.to_vec();
    let mut rank = 0usize;
    for (g, &count) in reference.counts.iter().enumerate() {
        for _ in 0..count {
            out[order[rank]].risk_group = Some(g as u8 + 1);
            rank += 1;
        }
    }
    Ok(out)
}

/// Maps pattern percentages to a Grade Group 1-5.
///
/// The shares are normalized to sum to 100 first (so any positive scaling
/// of the inputs is equivalent). Primary pattern = largest share, ties
/// resolved toward the higher pattern. Secondary = second-largest share if
/// it is at least [`SECONDARY_MIN_SHARE`]; otherwise the highest-grade
/// pattern present at any positive share when that grade exceeds the
/// primary's; otherwise the primary itself. Gleason sum to group:
/// 3+3 -> 1, 3+4 -> 2, 4+3 -> 3, {4+4, 3+5, 5+3} -> 4, higher -> 5.
pub fn rule_based_gg(pct_gp3: f64, pct_gp4: f64, pct_gp5: f64) -> Result<u8, RiskModelError> {
    let raw = [pct_gp3, pct_gp4, pct_gp5];
    if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(RiskModelError::UndefinedGrade);
    }
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return Err(RiskModelError::UndefinedGrade);
    }
    let shares: Vec<f64> = raw.iter().map(|v| v / sum * 100.0).collect();
    let patterns = [3u8, 4, 5];

    let mut primary = 0usize;
    for k in 1..3 {
        if shares[k] >= shares[primary] {
            primary = k; // >= moves ties toward the higher pattern
        }
    }
    let mut second: Option<usize> = None;
    for k in 0..3 {
        if k == primary {
            continue;
        }
        second = match second {
            None => Some(k),
            Some(s) if shares[k] >= shares[s] => Some(k),
            keep => keep,
        };
    }
    let second = second.expect("three patterns leave two non-primary candidates");

    let secondary = if shares[second] >= SECONDARY_MIN_SHARE {
        second
    } else {
        // highest-grade pattern present at any share, if above the primary
        let highest_present = (0..3).rev().find(|&k| shares[k] > 0.0).unwrap_or(primary);
        if patterns[highest_present] > patterns[primary] {
            highest_present
        } else {
            primary
        }
    };

    let score = (patterns[primary], patterns[secondary]);
    Ok(match score {
        (3, 3) => 1,
        (3, 4) => 2,
        (4, 3) => 3,
        (4, 4) | (3, 5) | (5, 3) => 4,
        _ => 5,
    })
}

/// Rule-based assignments for a cohort: the group doubles as the score.
pub fn rule_based_assignments(cohort: &Cohort) -> Result<Vec<RiskAssignment>, RiskModelError> {
    cohort
        .cases()
        .iter()
        .map(|c| {
            let g = rule_based_gg(c.pct_gp3, c.pct_gp4, c.pct_gp5)?;
            Ok(RiskAssignment {
                case_id: c.case_id.clone(),
                risk_score: f64::from(g),
                risk_group: Some(g),
                method: RiskMethod::RuleBased,
            })
        })
        .collect()
}

/// Arithmetic mean of a discrete risk group and a pathologist grade,
/// used directly as a ranking score.
pub fn ensemble_mean(ai_group: u8, pathologist_gg: u8) -> Result<f64, RiskModelError> {
    for g in [ai_group, pathologist_gg] {
        if !(1..=5).contains(&g) {
            return Err(RiskModelError::InvalidGroup(g));
        }
    }
    Ok((f64::from(ai_group) + f64::from(pathologist_gg)) / 2.0)
}

pub const ASSIGNMENT_HEADER: [&str; 4] = ["case_id", "method", "risk_score", "risk_group"];

/// Writes assignments as CSV (`case_id,method,risk_score,risk_group`).
pub fn write_assignments_csv<W: Write>(
    assignments: &[RiskAssignment],
    w: W,
) -> Result<(), RiskModelError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(ASSIGNMENT_HEADER)?;
    for a in assignments {
        wtr.write_record([
            a.case_id.as_str(),
            &a.method.to_string(),
            &format!("{}", a.risk_score),
            &a.risk_group.map(|g| g.to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads an assignment CSV written by [`write_assignments_csv`].
pub fn read_assignments_csv(path: impl AsRef<Path>) -> Result<Vec<RiskAssignment>, RiskModelError> {
    let file = std::fs::File::open(path)?;
    read_assignments_from(std::io::BufReader::new(file))
}

/// Reader-generic form of [`read_assignments_csv`].
pub fn read_assignments_from<R: std::io::Read>(
    r: R,
) -> Result<Vec<RiskAssignment>, RiskModelError> {
    let mut reader = csv::Reader::from_reader(r);
    {
        let got: Vec<&str> = reader.headers()?.iter().map(str::trim).collect();
        if got != ASSIGNMENT_HEADER {
            return Err(RiskModelError::MalformedAssignment {
                row: 1,
                reason: format!("header {got:?} does not match {ASSIGNMENT_HEADER:?}"),
            });
        }
    }
    let mut out = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = idx + 2;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let method: RiskMethod = field(1)
            .parse()
            .map_err(|reason| RiskModelError::MalformedAssignment { row, reason })?;
        let risk_score: f64 =
            field(2)
                .parse()
                .map_err(|_| RiskModelError::MalformedAssignment {
                    row,
                    reason: format!("bad risk_score {:?}", field(2)),
                })?;
        let risk_group = match field(3) {
            "" => None,
            raw => Some(raw.parse::<u8>().map_err(|_| {
                RiskModelError::MalformedAssignment {
                    row,
                    reason: format!("bad risk_group {raw:?}"),
                }
            })?),
        };
        out.push(RiskAssignment {
            case_id: field(0).to_string(),
            risk_score,
            risk_group,
            method,
        });
    }
    Ok(out)
}
