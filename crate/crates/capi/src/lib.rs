//! C ABI over the survrisk toolkit.
//!
//! Conventions, mirrored in the generated `include/survrisk.h`:
//!
//! - Every fallible function returns a status code and writes results
//!   through out-pointers; [`SURVRISK_OK`] means success.
//! - A failing call stores a message for [`survrisk_last_error_message`].
//!   The pointer stays valid on the calling thread until its next failing
//!   survrisk call.
//! - `*_fit` functions hand out owning handles; release them with the
//!   matching `*_free`. Freeing a null handle is a no-op.
//! - Input arrays are borrowed only for the duration of the call. Event
//!   markers are `u8`: 0 censored, nonzero event.
//! - Panics never cross the boundary: every entry point catches them and
//!   reports [`SURVRISK_ERR_PANIC`] instead.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use survrisk::concordance::{c_index, ConcordanceError};
use survrisk::coxph::{
    fit_cox, hazard_ratios, linear_predictor, CoxError, CoxFit, FitOptions, TiesMethod,
};
use survrisk::inference::{bootstrap_indices_ci, InferenceError};
use survrisk::riskmodel::{
    discretize_to_reference, rule_based_gg, ReferenceHistogram, RiskAssignment, RiskMethod,
};
use survrisk::survstats::{kaplan_meier, logrank, survival_at, SurvStatsError, SurvivalCurve};

/// The call succeeded.
pub const SURVRISK_OK: i32 = 0;
/// A pointer was null, a length disagreed, or a value was out of range.
pub const SURVRISK_ERR_INVALID_ARGUMENT: i32 = 1;
/// The inputs were well formed but the quantity is undefined on them
/// (no events, no comparable pairs, too few subjects).
pub const SURVRISK_ERR_DATA: i32 = 2;
/// The computation failed numerically (separation, non-convergence,
/// singular information).
pub const SURVRISK_ERR_NUMERIC: i32 = 3;
/// An internal panic was caught at the boundary; see the error message.
pub const SURVRISK_ERR_PANIC: i32 = 4;

/// Efron correction for tied event times (the default in the Rust API).
pub const SURVRISK_TIES_EFRON: i32 = 0;
/// Breslow correction for tied event times.
pub const SURVRISK_TIES_BRESLOW: i32 = 1;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

/// A fitted Kaplan-Meier curve.
pub struct SurvriskKm {
    curve: SurvivalCurve,
}

/// A converged Cox proportional-hazards fit.
pub struct SurvriskCox {
    fit: CoxFit,
}

fn fail(code: i32, message: impl std::fmt::Display) -> i32 {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).unwrap_or_default();
    });
    code
}

fn guarded(body: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(_) => fail(SURVRISK_ERR_PANIC, "internal panic caught at the C boundary"),
    }
}

fn null_arg(name: &str) -> i32 {
    fail(
        SURVRISK_ERR_INVALID_ARGUMENT,
        format!("{name} must not be null"),
    )
}

fn cox_code(e: &CoxError) -> i32 {
    match e {
        CoxError::Separation { .. }
        | CoxError::NonIdentified { .. }
        | CoxError::NotConverged { .. }
        | CoxError::NotConvergedFit => SURVRISK_ERR_NUMERIC,
        CoxError::TooFewSubjects(_) | CoxError::NoEvents | CoxError::ConstantCovariate { .. } => {
            SURVRISK_ERR_DATA
        }
        _ => SURVRISK_ERR_INVALID_ARGUMENT,
    }
}

fn surv_code(e: &SurvStatsError) -> i32 {
    match e {
        SurvStatsError::NoEvents => SURVRISK_ERR_DATA,
        SurvStatsError::SingularVariance => SURVRISK_ERR_NUMERIC,
        _ => SURVRISK_ERR_INVALID_ARGUMENT,
    }
}

fn concordance_code(e: &ConcordanceError) -> i32 {
    match e {
        ConcordanceError::NoComparablePairs => SURVRISK_ERR_DATA,
        _ => SURVRISK_ERR_INVALID_ARGUMENT,
    }
}

fn inference_code(e: &InferenceError) -> i32 {
    match e {
        InferenceError::PointUndefined | InferenceError::TooManyUndefined { .. } => {
            SURVRISK_ERR_NUMERIC
        }
        InferenceError::InvalidInput(_) => SURVRISK_ERR_INVALID_ARGUMENT,
        _ => SURVRISK_ERR_DATA,
    }
}

unsafe fn events_vec(events: *const u8, len: usize) -> Vec<bool> {
    slice::from_raw_parts(events, len)
        .iter()
        .map(|&e| e != 0)
        .collect()
}

/// The crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn survrisk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Description of the most recent failure on this thread. Empty string if
/// no survrisk call has failed yet. The pointer is invalidated by the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn survrisk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Harrell's concordance index of `scores` against right-censored
/// outcomes. Higher scores must indicate higher risk.
#[no_mangle]
pub unsafe extern "C" fn survrisk_c_index(
    scores: *const f64,
    times: *const f64,
    events: *const u8,
    len: usize,
    out_c_index: *mut f64,
) -> i32 {
    guarded(|| {
        if scores.is_null() || times.is_null() || events.is_null() {
            return null_arg("scores/times/events");
        }
        if out_c_index.is_null() {
            return null_arg("out_c_index");
        }
        let s = slice::from_raw_parts(scores, len);
        let t = slice::from_raw_parts(times, len);
        let e = events_vec(events, len);
        match c_index(s, t, &e) {
            Ok(r) => {
                *out_c_index = r.c_index;
                SURVRISK_OK
            }
            Err(err) => fail(concordance_code(&err), err),
        }
    })
}

/// Seed-deterministic percentile bootstrap CI for the concordance index.
/// Undefined resamples (no comparable pairs) are tolerated up to the
/// library's undefined-replicate budget.
#[no_mangle]
pub unsafe extern "C" fn survrisk_c_index_bootstrap_ci(
    scores: *const f64,
    times: *const f64,
    events: *const u8,
    len: usize,
    n_resamples: usize,
    alpha: f64,
    seed: u64,
    out_point: *mut f64,
    out_ci_lower: *mut f64,
    out_ci_upper: *mut f64,
) -> i32 {
    guarded(|| {
        if scores.is_null() || times.is_null() || events.is_null() {
            return null_arg("scores/times/events");
        }
        if out_point.is_null() || out_ci_lower.is_null() || out_ci_upper.is_null() {
            return null_arg("out_point/out_ci_lower/out_ci_upper");
        }
        let s = slice::from_raw_parts(scores, len);
        let t = slice::from_raw_parts(times, len);
        let e = events_vec(events, len);
        let metric = |idx: &[usize]| {
            let rs: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
            let rt: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
            let re: Vec<bool> = idx.iter().map(|&i| e[i]).collect();
            c_index(&rs, &rt, &re).ok().map(|r| r.c_index)
        };
        match bootstrap_indices_ci(metric, len, n_resamples, alpha, seed) {
            Ok(r) => {
                *out_point = r.point_estimate;
                *out_ci_lower = r.ci_lower;
                *out_ci_upper = r.ci_upper;
                SURVRISK_OK
            }
            Err(err) => fail(inference_code(&err), err),
        }
    })
}

/// Fits a Kaplan-Meier curve with a complementary log-log confidence band
/// at level `1 - alpha`. On success `*out_km` owns the curve.
#[no_mangle]
pub unsafe extern "C" fn survrisk_km_fit(
    times: *const f64,
    events: *const u8,
    len: usize,
    alpha: f64,
    out_km: *mut *mut SurvriskKm,
) -> i32 {
    guarded(|| {
        if times.is_null() || events.is_null() {
            return null_arg("times/events");
        }
        if out_km.is_null() {
            return null_arg("out_km");
        }
        let t = slice::from_raw_parts(times, len);
        let e = events_vec(events, len);
        match kaplan_meier(t, &e, alpha) {
            Ok(curve) => {
                *out_km = Box::into_raw(Box::new(SurvriskKm { curve }));
                SURVRISK_OK
            }
            Err(err) => fail(surv_code(&err), err),
        }
    })
}

/// Number of distinct event times in the curve (0 for a null handle or an
/// event-free curve).
#[no_mangle]
pub unsafe extern "C" fn survrisk_km_len(km: *const SurvriskKm) -> usize {
    if km.is_null() {
        0
    } else {
        (*km).curve.len()
    }
}

/// Copies one step of the curve. `index` must be below `survrisk_km_len`.
#[no_mangle]
pub unsafe extern "C" fn survrisk_km_row(
    km: *const SurvriskKm,
    index: usize,
    out_time: *mut f64,
    out_at_risk: *mut u64,
    out_events: *mut u64,
    out_survival: *mut f64,
    out_ci_lower: *mut f64,
    out_ci_upper: *mut f64,
) -> i32 {
    guarded(|| {
        if km.is_null() {
            return null_arg("km");
        }
        if out_time.is_null()
            || out_at_risk.is_null()
            || out_events.is_null()
            || out_survival.is_null()
            || out_ci_lower.is_null()
            || out_ci_upper.is_null()
        {
            return null_arg("out pointers");
        }
        let curve = &(*km).curve;
        if index >= curve.len() {
            return fail(
                SURVRISK_ERR_INVALID_ARGUMENT,
                format!("row {index} out of range: curve has {} rows", curve.len()),
            );
        }
        *out_time = curve.event_times[index];
        *out_at_risk = curve.at_risk[index];
        *out_events = curve.n_events[index];
        *out_survival = curve.survival[index];
        *out_ci_lower = curve.ci_lower[index];
        *out_ci_upper = curve.ci_upper[index];
        SURVRISK_OK
    })
}

/// Survival estimate and confidence band at `horizon` (right-continuous
/// step lookup; 1.0 before the first event).
#[no_mangle]
pub unsafe extern "C" fn survrisk_km_survival_at(
    km: *const SurvriskKm,
    horizon: f64,
    out_survival: *mut f64,
    out_ci_lower: *mut f64,
    out_ci_upper: *mut f64,
) -> i32 {
    guarded(|| {
        if km.is_null() {
            return null_arg("km");
        }
        if out_survival.is_null() || out_ci_lower.is_null() || out_ci_upper.is_null() {
            return null_arg("out pointers");
        }
        if !horizon.is_finite() {
            return fail(
                SURVRISK_ERR_INVALID_ARGUMENT,
                format!("horizon must be finite, got {horizon}"),
            );
        }
        let (s, lo, hi) = survival_at(&(*km).curve, horizon);
        *out_survival = s;
        *out_ci_lower = lo;
        *out_ci_upper = hi;
        SURVRISK_OK
    })
}

/// Releases a curve handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn survrisk_km_free(km: *mut SurvriskKm) {
    if !km.is_null() {
        drop(Box::from_raw(km));
    }
}

/// K-sample log-rank test. `times` and `events` hold all subjects
/// concatenated group by group; `group_sizes` gives the subjects per group.
#[no_mangle]
pub unsafe extern "C" fn survrisk_logrank(
    times: *const f64,
    events: *const u8,
    group_sizes: *const usize,
    n_groups: usize,
    out_chi2: *mut f64,
    out_df: *mut usize,
    out_p_value: *mut f64,
) -> i32 {
    guarded(|| {
        if times.is_null() || events.is_null() || group_sizes.is_null() {
            return null_arg("times/events/group_sizes");
        }
        if out_chi2.is_null() || out_df.is_null() || out_p_value.is_null() {
            return null_arg("out_chi2/out_df/out_p_value");
        }
        let sizes = slice::from_raw_parts(group_sizes, n_groups);
        let total: usize = sizes.iter().sum();
        let t = slice::from_raw_parts(times, total);
        let e = events_vec(events, total);
        let mut group_times = Vec::with_capacity(n_groups);
        let mut group_events = Vec::with_capacity(n_groups);
        let mut offset = 0;
        for &size in sizes {
            group_times.push(t[offset..offset + size].to_vec());
            group_events.push(e[offset..offset + size].to_vec());
            offset += size;
        }
        match logrank(&group_times, &group_events) {
            Ok(r) => {
                *out_chi2 = r.chi2;
                *out_df = r.df;
                *out_p_value = r.p_value;
                SURVRISK_OK
            }
            Err(err) => fail(surv_code(&err), err),
        }
    })
}

/// Fits a Cox proportional-hazards model on a row-major `n x p` design.
/// `ties` is SURVRISK_TIES_EFRON or SURVRISK_TIES_BRESLOW; `ridge` is the
/// L2 penalty strength (0 disables it). On success `*out_fit` owns the
/// converged fit.
#[no_mangle]
pub unsafe extern "C" fn survrisk_cox_fit(
    x: *const f64,
    n: usize,
    p: usize,
    times: *const f64,
    events: *const u8,
    ties: i32,
    ridge: f64,
    out_fit: *mut *mut SurvriskCox,
) -> i32 {
    guarded(|| {
        if x.is_null() || times.is_null() || events.is_null() {
            return null_arg("x/times/events");
        }
        if out_fit.is_null() {
            return null_arg("out_fit");
        }
        let ties = match ties {
            SURVRISK_TIES_EFRON => TiesMethod::Efron,
            SURVRISK_TIES_BRESLOW => TiesMethod::Breslow,
            other => {
                return fail(
                    SURVRISK_ERR_INVALID_ARGUMENT,
                    format!("unknown ties method {other}"),
                )
            }
        };
        if p == 0 {
            return fail(
                SURVRISK_ERR_INVALID_ARGUMENT,
                "design matrix has no covariates",
            );
        }
        let flat = slice::from_raw_parts(x, n * p);
        let design: Vec<Vec<f64>> = flat.chunks_exact(p).map(|row| row.to_vec()).collect();
        let t = slice::from_raw_parts(times, n);
        let e = events_vec(events, n);
        let opts = FitOptions {
            ties,
            ridge,
            ..FitOptions::default()
        };
        match fit_cox(&design, t, &e, &opts) {
            Ok(fit) => {
                *out_fit = Box::into_raw(Box::new(SurvriskCox { fit }));
                SURVRISK_OK
            }
            Err(err) => fail(cox_code(&err), err),
        }
    })
}

/// Number of fitted coefficients (0 for a null handle).
#[no_mangle]
pub unsafe extern "C" fn survrisk_cox_n_coefficients(fit: *const SurvriskCox) -> usize {
    if fit.is_null() {
        0
    } else {
        (*fit).fit.beta.len()
    }
}

/// Copies the fitted coefficients into `out` (room for
/// `survrisk_cox_n_coefficients` doubles).
#[no_mangle]
pub unsafe extern "C" fn survrisk_cox_coefficients(
    fit: *const SurvriskCox,
    out: *mut f64,
) -> i32 {
    guarded(|| {
        if fit.is_null() {
            return null_arg("fit");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let beta = &(*fit).fit.beta;
        slice::from_raw_parts_mut(out, beta.len()).copy_from_slice(beta);
        SURVRISK_OK
    })
}

/// Copies the Wald standard errors into `out` (room for
/// `survrisk_cox_n_coefficients` doubles).
#[no_mangle]
pub unsafe extern "C" fn survrisk_cox_standard_errors(
    fit: *const SurvriskCox,
    out: *mut f64,
) -> i32 {
    guarded(|| {
        if fit.is_null() {
            return null_arg("fit");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let se = (*fit).fit.standard_errors();
        slice::from_raw_parts_mut(out, se.len()).copy_from_slice(&se);
        SURVRISK_OK
    })
}

/// Unpenalized log partial likelihood at the fitted coefficients.
#[no_mangle]
pub unsafe extern "C" fn survrisk_cox_log_likelihood(
    fit: *const SurvriskCox,
    out: *mut f64,
) -> i32 {
    guarded(|| {
        if fit.is_null() {
            return null_arg("fit");
        }
        if out.is_null() {
            return null_arg("out");
        }
        *out = (*fit).fit.log_likelihood;
        SURVRISK_OK
    })
}

/// Linear predictor for one covariate row of
/// `survrisk_cox_n_coefficients` doubles.
#[no_mangle]
pub unsafe extern "C" fn survrisk_cox_linear_predictor(
    fit: *const SurvriskCox,
    covariates: *const f64,
    out: *mut f64,
) -> i32 {
    guarded(|| {
        if fit.is_null() {
            return null_arg("fit");
        }
        if covariates.is_null() || out.is_null() {
            return null_arg("covariates/out");
        }
        let beta = &(*fit).fit.beta;
        let row = slice::from_raw_parts(covariates, beta.len());
        match linear_predictor(beta, row) {
            Ok(lp) => {
                *out = lp;
                SURVRISK_OK
            }
            Err(err) => fail(cox_code(&err), err),
        }
    })
}

/// Hazard ratio of coefficient `index` per `scale` units, with a Wald
/// confidence interval at level `1 - alpha` and two-sided p-value.
#[no_mangle]
pub unsafe extern "C" fn survrisk_cox_hazard_ratio(
    fit: *const SurvriskCox,
    index: usize,
    scale: f64,
    alpha: f64,
    out_hr: *mut f64,
    out_ci_lower: *mut f64,
    out_ci_upper: *mut f64,
    out_p_value: *mut f64,
) -> i32 {
    guarded(|| {
        if fit.is_null() {
            return null_arg("fit");
        }
        if out_hr.is_null() || out_ci_lower.is_null() || out_ci_upper.is_null() || out_p_value.is_null()
        {
            return null_arg("out pointers");
        }
        let fit = &(*fit).fit;
        let p = fit.beta.len();
        if index >= p {
            return fail(
                SURVRISK_ERR_INVALID_ARGUMENT,
                format!("coefficient {index} out of range: fit has {p}"),
            );
        }
        let names: Vec<String> = (0..p).map(|k| format!("x{k}")).collect();
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut scales = vec![1.0; p];
        scales[index] = scale;
        match hazard_ratios(fit, &name_refs, &scales, alpha) {
            Ok(ratios) => {
                let r = &ratios[index];
                *out_hr = r.hr;
                *out_ci_lower = r.ci_lower;
                *out_ci_upper = r.ci_upper;
                *out_p_value = r.p_value;
                SURVRISK_OK
            }
            Err(err) => fail(cox_code(&err), err),
        }
    })
}

/// Releases a fit handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn survrisk_cox_free(fit: *mut SurvriskCox) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Rule-based Grade Group (1-5) from pattern percentages.
#[no_mangle]
pub unsafe extern "C" fn survrisk_rule_based_gg(
    pct_gp3: f64,
    pct_gp4: f64,
    pct_gp5: f64,
    out_grade: *mut u8,
) -> i32 {
    guarded(|| {
        if out_grade.is_null() {
            return null_arg("out_grade");
        }
        match rule_based_gg(pct_gp3, pct_gp4, pct_gp5) {
            Ok(g) => {
                *out_grade = g;
                SURVRISK_OK
            }
            Err(err) => fail(SURVRISK_ERR_INVALID_ARGUMENT, err),
        }
    })
}

/// Frequency-matched discretization of `len` scores into groups 1-5.
/// `reference_counts` holds the five reference group counts and must sum
/// to `len`. Ties in score are broken by input position, earlier rows
/// taking the lower group. Writes one group label per score to
/// `out_groups`.
#[no_mangle]
pub unsafe extern "C" fn survrisk_discretize(
    scores: *const f64,
    len: usize,
    reference_counts: *const u64,
    out_groups: *mut u8,
) -> i32 {
    guarded(|| {
        if scores.is_null() || reference_counts.is_null() || out_groups.is_null() {
            return null_arg("scores/reference_counts/out_groups");
        }
        let s = slice::from_raw_parts(scores, len);
        let counts = slice::from_raw_parts(reference_counts, 5);
        // zero-padded synthetic ids make the lexicographic tie-break equal
        // to input order
        let width = len.saturating_sub(1).to_string().len();
        let assignments: Vec<RiskAssignment> = s
            .iter()
            .enumerate()
            .map(|(i, &score)| RiskAssignment {
                case_id: format!("{i:0width$}"),
                risk_score: score,
                risk_group: None,
                method: RiskMethod::InSample,
            })
            .collect();
        let reference = ReferenceHistogram::new([counts[0], counts[1], counts[2], counts[3], counts[4]]);
        match discretize_to_reference(&assignments, &reference) {
            Ok(grouped) => {
                let out = slice::from_raw_parts_mut(out_groups, len);
                for (slot, a) in out.iter_mut().zip(&grouped) {
                    *slot = a.risk_group.expect("discretization assigns every group");
                }
                SURVRISK_OK
            }
            Err(err) => fail(SURVRISK_ERR_INVALID_ARGUMENT, err),
        }
    })
}
