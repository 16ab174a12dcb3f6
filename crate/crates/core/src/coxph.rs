//! Cox proportional-hazards regression for right-censored data.
//!
//! The partial likelihood is maximized by damped Newton iteration
//! (step-halving on the penalized objective), with either the Efron or the
//! Breslow correction for tied event times. An optional L2 penalty changes
//! the objective to `logPL(beta) - ridge/2 * |beta|^2`; the reported
//! covariance is the inverse of the penalized observed information at the
//! optimum. Covariates are centered internally for numerical range only; the
//! partial likelihood is shift-invariant, so estimates are unaffected.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::util::{normal_quantile, two_sided_p};

#[derive(Debug, Error)]
pub enum CoxError {
    #[error("design/times/events length mismatch: {rows} rows vs {times} times vs {events} events")]
    LengthMismatch {
        rows: usize,
        times: usize,
        events: usize,
    },
    #[error("at least two subjects are required, got {0}")]
    TooFewSubjects(usize),
    #[error("design matrix has no covariates")]
    EmptyDesign,
    #[error("design row {row} has {got} entries, expected {expected}")]
    RaggedDesign {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite covariate at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("invalid follow-up time {value} at row {row}: must be finite and positive")]
    InvalidTime { row: usize, value: f64 },
    #[error("no events: the partial likelihood is constant")]
    NoEvents,
    #[error("covariate {index} is constant across all subjects")]
    ConstantCovariate { index: usize },
    #[error(
        "monotone likelihood for coefficient {column}: |beta| = {beta:.3} exceeded the \
         separation bound {bound}; the estimate is not identified (consider ridge > 0)"
    )]
    Separation { column: usize, beta: f64, bound: f64 },
    #[error(
        "observed information is singular (weakest coefficient: {column}); \
         the model is not identified"
    )]
    NonIdentified { column: usize },
    #[error("did not converge after {iterations} iterations (gradient max-norm {gradient_norm:.3e})")]
    NotConverged {
        iterations: usize,
        beta: Vec<f64>,
        gradient_norm: f64,
    },
    #[error("fit has not converged; refusing to derive hazard ratios")]
    NotConvergedFit,
    #[error("invalid option: {0}")]
    InvalidOptions(String),
    #[error("coefficient dimension mismatch: beta has {beta} entries, covariates {x}")]
    DimensionMismatch { beta: usize, x: usize },
    #[error("reference label {0} not present among group labels")]
    MissingReference(u8),
    #[error("need at least two distinct group labels")]
    DegenerateGroups,
}

/// Correction used for tied event times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiesMethod {
    Efron,
    Breslow,
}

impl std::fmt::Display for TiesMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TiesMethod::Efron => write!(f, "efron"),
            TiesMethod::Breslow => write!(f, "breslow"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub ties: TiesMethod,
    /// L2 penalty strength; 0 disables the penalty.
    pub ridge: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm of the penalized score vector.
    pub tolerance: f64,
    /// |beta_k| beyond this bound is treated as monotone likelihood when
    /// ridge == 0.
    pub separation_bound: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            ties: TiesMethod::Efron,
            ridge: 0.0,
            max_iterations: 100,
            tolerance: 1e-9,
            separation_bound: 50.0,
        }
    }
}

/// A converged proportional-hazards fit.
#[derive(Debug, Clone, Serialize)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    /// Inverse of the (penalized) observed information at `beta`, row-major.
    pub covariance: Vec<Vec<f64>>,
    /// Unpenalized log partial likelihood at `beta`.
    pub log_likelihood: f64,
    pub n_iterations: usize,
    pub converged: bool,
    pub ties: TiesMethod,
    pub ridge: f64,
    pub n_subjects: usize,
    pub n_events: usize,
}

impl CoxFit {
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.beta.len())
            .map(|k| self.covariance[k][k].sqrt())
            .collect()
    }

    /// `logPL(beta) - ridge/2 * |beta|^2`, the quantity the solver maximizes.
    pub fn penalized_objective(&self) -> f64 {
        let sq: f64 = self.beta.iter().map(|b| b * b).sum();
        self.log_likelihood - 0.5 * self.ridge * sq
    }
}

/// One covariate's multiplicative effect summary.
#[derive(Debug, Clone, Serialize)]
pub struct HazardRatio {
    pub name: String,
    /// Hazard ratio per `scale` covariate units.
    pub hr: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Two-sided Wald p-value for the unscaled coefficient.
    pub p_value: f64,
}

struct Prepared {
    /// Row indices grouped by ascending distinct time.
    blocks: Vec<Block>,
    n_events: usize,
}

struct Block {
    members: Vec<usize>,
    events: Vec<usize>,
}

fn validate_design(
    x: &[Vec<f64>],
    times: &[f64],
    events: &[bool],
) -> Result<usize, CoxError> {
    let n = x.len();
    if n != times.len() || n != events.len() {
        return Err(CoxError::LengthMismatch {
            rows: n,
            times: times.len(),
            events: events.len(),
        });
    }
    if n < 2 {
        return Err(CoxError::TooFewSubjects(n));
    }
    let p = x[0].len();
    if p == 0 {
        return Err(CoxError::EmptyDesign);
    }
    for (row, r) in x.iter().enumerate() {
        if r.len() != p {
            return Err(CoxError::RaggedDesign {
                row,
                expected: p,
                got: r.len(),
            });
        }
        for (col, v) in r.iter().enumerate() {
            if !v.is_finite() {
                return Err(CoxError::NonFinite { row, col });
            }
        }
    }
    for (row, &t) in times.iter().enumerate() {
        if !t.is_finite() || t <= 0.0 {
            return Err(CoxError::InvalidTime { row, value: t });
        }
    }
    if !events.iter().any(|&e| e) {
        return Err(CoxError::NoEvents);
    }
    Ok(p)
}

fn prepare(times: &[f64], events: &[bool]) -> Prepared {
    let order = crate::util::argsort_by_f64(times);
    let n = order.len();
    let mut blocks = Vec::new();
    let mut n_events = 0;
    let mut i = 0;
    while i < n {
        let t = times[order[i]];
        let mut members = Vec::new();
        let mut evts = Vec::new();
        let mut j = i;
        while j < n && times[order[j]] == t {
            members.push(order[j]);
            if events[order[j]] {
                evts.push(order[j]);
                n_events += 1;
            }
            j += 1;
        }
        blocks.push(Block {
            members,
            events: evts,
        });
        i = j;
    }
    Prepared { blocks, n_events }
}

/// Log partial likelihood, score vector, and observed information at `beta`.
/// `flat` is the n x p design, row-major. Returns None when the value is not
/// finite (overflow during a trial step).
fn evaluate(
    flat: &[f64],
    p: usize,
    prep: &Prepared,
    ties: TiesMethod,
    beta: &[f64],
) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let n = flat.len() / p;
    let mut eta = vec![0.0_f64; n];
    let mut w = vec![0.0_f64; n];
    for i in 0..n {
        let mut s = 0.0;
        for k in 0..p {
            s += beta[k] * flat[i * p + k];
        }
        eta[i] = s;
        w[i] = s.exp();
    }

    let mut ll = 0.0_f64;
    let mut grad = vec![0.0_f64; p];
    let mut info = vec![0.0_f64; p * p];

    let mut s0 = 0.0_f64;
    let mut s1 = vec![0.0_f64; p];
    let mut s2 = vec![0.0_f64; p * p];
    let mut s1d = vec![0.0_f64; p];
    let mut s2d = vec![0.0_f64; p * p];
    let mut m = vec![0.0_f64; p];

    for block in prep.blocks.iter().rev() {
        for &i in &block.members {
            let wi = w[i];
            s0 += wi;
            let xi = &flat[i * p..(i + 1) * p];
            for a in 0..p {
                s1[a] += wi * xi[a];
                let wxa = wi * xi[a];
                for b in a..p {
                    s2[a * p + b] += wxa * xi[b];
                }
            }
        }
        let d = block.events.len();
        if d == 0 {
            continue;
        }
        let mut s0d = 0.0_f64;
        s1d.iter_mut().for_each(|v| *v = 0.0);
        s2d.iter_mut().for_each(|v| *v = 0.0);
        for &i in &block.events {
            let wi = w[i];
            let xi = &flat[i * p..(i + 1) * p];
            ll += eta[i];
            s0d += wi;
            for a in 0..p {
                grad[a] += xi[a];
                s1d[a] += wi * xi[a];
                let wxa = wi * xi[a];
                for b in a..p {
                    s2d[a * p + b] += wxa * xi[b];
                }
            }
        }
        let df = d as f64;
        for l in 0..d {
            let f = match ties {
                TiesMethod::Efron => l as f64 / df,
                TiesMethod::Breslow => 0.0,
            };
            let z = s0 - f * s0d;
            if !(z.is_finite() && z > 0.0) {
                return None;
            }
            ll -= z.ln();
            for a in 0..p {
                m[a] = s1[a] - f * s1d[a];
                grad[a] -= m[a] / z;
            }
            let z2 = z * z;
            for a in 0..p {
                for b in a..p {
                    let aa = s2[a * p + b] - f * s2d[a * p + b];
                    info[a * p + b] += aa / z - m[a] * m[b] / z2;
                }
            }
        }
    }
    if !ll.is_finite() {
        return None;
    }
    // mirror the upper triangle
    for a in 0..p {
        for b in 0..a {
            info[a * p + b] = info[b * p + a];
        }
    }
    Some((ll, grad, info))
}

/// Log partial likelihood at `beta` (no penalty, no centering).
pub fn log_partial_likelihood(
    x: &[Vec<f64>],
    times: &[f64],
    events: &[bool],
    ties: TiesMethod,
    beta: &[f64],
) -> Result<f64, CoxError> {
    let p = validate_design(x, times, events)?;
    if beta.len() != p {
        return Err(CoxError::DimensionMismatch {
            beta: beta.len(),
            x: p,
        });
    }
    let flat: Vec<f64> = x.iter().flatten().copied().collect();
    let prep = prepare(times, events);
    let (ll, _, _) =
        evaluate(&flat, p, &prep, ties, beta).ok_or(CoxError::InvalidOptions(
            "log partial likelihood overflowed at the given beta".into(),
        ))?;
    Ok(ll)
}

/// Analytic score vector (gradient of the log partial likelihood) at `beta`.
pub fn score_vector(
    x: &[Vec<f64>],
    times: &[f64],
    events: &[bool],
    ties: TiesMethod,
    beta: &[f64],
) -> Result<Vec<f64>, CoxError> {
    let p = validate_design(x, times, events)?;
    if beta.len() != p {
        return Err(CoxError::DimensionMismatch {
            beta: beta.len(),
            x: p,
        });
    }
    let flat: Vec<f64> = x.iter().flatten().copied().collect();
    let prep = prepare(times, events);
    let (_, g, _) =
        evaluate(&flat, p, &prep, ties, beta).ok_or(CoxError::InvalidOptions(
            "score vector overflowed at the given beta".into(),
        ))?;
    Ok(g)
}

/// Maximize the (optionally ridge-penalized) log partial likelihood.
pub fn fit_cox(
    x: &[Vec<f64>],
    times: &[f64],
    events: &[bool],
    opts: &FitOptions,
) -> Result<CoxFit, CoxError> {
    let p = validate_design(x, times, events)?;
    if !(opts.ridge >= 0.0 && opts.ridge.is_finite()) {
        return Err(CoxError::InvalidOptions(format!(
            "ridge must be finite and >= 0, got {}",
            opts.ridge
        )));
    }
    if opts.max_iterations == 0 {
        return Err(CoxError::InvalidOptions("max_iterations must be >= 1".into()));
    }
    if !(opts.tolerance > 0.0) {
        return Err(CoxError::InvalidOptions(format!(
            "tolerance must be > 0, got {}",
            opts.tolerance
        )));
    }
    if !(opts.separation_bound > 0.0) {
        return Err(CoxError::InvalidOptions(format!(
            "separation_bound must be > 0, got {}",
            opts.separation_bound
        )));
    }
    let n = x.len();
    for k in 0..p {
        let col0 = x[0][k];
        if x.iter().all(|r| r[k] == col0) {
            return Err(CoxError::ConstantCovariate { index: k });
        }
    }

    // center columns; the partial likelihood is shift-invariant and this
    // keeps exp(eta) in range for covariates with large offsets
    let mut means = vec![0.0_f64; p];
    for r in x {
        for k in 0..p {
            means[k] += r[k];
        }
    }
    for k in 0..p {
        means[k] /= n as f64;
    }
    let mut flat = vec![0.0_f64; n * p];
    for (i, r) in x.iter().enumerate() {
        for k in 0..p {
            flat[i * p + k] = r[k] - means[k];
        }
    }

    let prep = prepare(times, events);
    let ridge = opts.ridge;
    let mut beta = vec![0.0_f64; p];
    let (mut ll, mut grad, mut info) = evaluate(&flat, p, &prep, opts.ties, &beta)
        .expect("log partial likelihood must be finite at beta = 0");
    let mut objective = ll;
    let mut iterations = 0usize;

    loop {
        // penalized score and information at the current iterate
        let mut g_pen = DVector::from_fn(p, |k, _| grad[k] - ridge * beta[k]);
        let mut i_pen = DMatrix::from_fn(p, p, |a, b| info[a * p + b]);
        for k in 0..p {
            i_pen[(k, k)] += ridge;
        }
        let gnorm = g_pen.amax();
        if gnorm < opts.tolerance {
            let chol = Cholesky::new(i_pen).ok_or_else(|| CoxError::NonIdentified {
                column: weakest_column(&info, p),
            })?;
            let cov = chol.inverse();
            let covariance = (0..p)
                .map(|a| (0..p).map(|b| cov[(a, b)]).collect())
                .collect();
            return Ok(CoxFit {
                beta,
                covariance,
                log_likelihood: ll,
                n_iterations: iterations,
                converged: true,
                ties: opts.ties,
                ridge,
                n_subjects: n,
                n_events: prep.n_events,
            });
        }
        if iterations >= opts.max_iterations {
            return Err(CoxError::NotConverged {
                iterations,
                beta,
                gradient_norm: gnorm,
            });
        }
        let chol = Cholesky::new(i_pen.clone()).ok_or_else(|| CoxError::NonIdentified {
            column: weakest_column(&info, p),
        })?;
        chol.solve_mut(&mut g_pen);
        let delta = g_pen;

        // step-halving on the penalized objective
        let mut step = 1.0_f64;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> =
                (0..p).map(|k| beta[k] + step * delta[k]).collect();
            if let Some((ll_c, g_c, i_c)) = evaluate(&flat, p, &prep, opts.ties, &cand) {
                let sq: f64 = cand.iter().map(|b| b * b).sum();
                let obj_c = ll_c - 0.5 * ridge * sq;
                if obj_c > objective - 1e-12 * (1.0 + objective.abs()) {
                    beta = cand;
                    ll = ll_c;
                    grad = g_c;
                    info = i_c;
                    objective = obj_c;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            return Err(CoxError::NotConverged {
                iterations,
                beta,
                gradient_norm: gnorm,
            });
        }
        if ridge == 0.0 {
            for (k, &b) in beta.iter().enumerate() {
                if b.abs() > opts.separation_bound {
                    return Err(CoxError::Separation {
                        column: k,
                        beta: b,
                        bound: opts.separation_bound,
                    });
                }
            }
        }
    }
}

fn weakest_column(info: &[f64], p: usize) -> usize {
    let mut col = 0;
    let mut best = f64::INFINITY;
    for k in 0..p {
        if info[k * p + k] < best {
            best = info[k * p + k];
            col = k;
        }
    }
    col
}

/// Linear predictor `beta . x` (no centering, no intercept).
pub fn linear_predictor(beta: &[f64], covariates: &[f64]) -> Result<f64, CoxError> {
    if beta.len() != covariates.len() {
        return Err(CoxError::DimensionMismatch {
            beta: beta.len(),
            x: covariates.len(),
        });
    }
    Ok(beta.iter().zip(covariates).map(|(b, x)| b * x).sum())
}

/// Wald hazard-ratio summaries for a converged fit. `scales[k]` is the
/// covariate-unit change each reported ratio refers to (must be positive).
pub fn hazard_ratios(
    fit: &CoxFit,
    names: &[&str],
    scales: &[f64],
    alpha: f64,
) -> Result<Vec<HazardRatio>, CoxError> {
    if !fit.converged {
        return Err(CoxError::NotConvergedFit);
    }
    let p = fit.beta.len();
    if names.len() != p || scales.len() != p {
        return Err(CoxError::DimensionMismatch {
            beta: p,
            x: names.len().min(scales.len()),
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CoxError::InvalidOptions(format!(
            "alpha must lie strictly between 0 and 1, got {alpha}"
        )));
    }
    for (k, &s) in scales.iter().enumerate() {
        if !(s > 0.0 && s.is_finite()) {
            return Err(CoxError::InvalidOptions(format!(
                "scale for coefficient {k} must be positive and finite, got {s}"
            )));
        }
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    let se = fit.standard_errors();
    Ok((0..p)
        .map(|k| {
            let b = fit.beta[k];
            let s = scales[k];
            let p_value = if se[k] > 0.0 {
                two_sided_p(b / se[k])
            } else if b == 0.0 {
                1.0
            } else {
                0.0
            };
            HazardRatio {
                name: names[k].to_string(),
                hr: (s * b).exp(),
                ci_lower: (s * (b - z * se[k])).exp(),
                ci_upper: (s * (b + z * se[k])).exp(),
                p_value,
            }
        })
        .collect())
}

/// One-hot fit of group labels against a reference level. Returns the K-1
/// non-reference hazard ratios in ascending label order; coefficient `k`
/// belongs to the k-th non-reference level.
#[derive(Debug)]
pub struct GroupFit {
    pub reference: u8,
    pub levels: Vec<u8>,
    pub ratios: Vec<HazardRatio>,
    pub fit: CoxFit,
}

pub fn fit_univariable_groups(
    groups: &[u8],
    reference: u8,
    times: &[f64],
    events: &[bool],
    opts: &FitOptions,
    alpha: f64,
) -> Result<GroupFit, CoxError> {
    if !groups.contains(&reference) {
        return Err(CoxError::MissingReference(reference));
    }
    let mut levels: Vec<u8> = groups.to_vec();
    levels.sort_unstable();
    levels.dedup();
    levels.retain(|&g| g != reference);
    if levels.is_empty() {
        return Err(CoxError::DegenerateGroups);
    }
    let x: Vec<Vec<f64>> = groups
        .iter()
        .map(|&g| {
            levels
                .iter()
                .map(|&l| if g == l { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let fit = fit_cox(&x, times, events, opts)?;
    let names: Vec<String> = levels.iter().map(|l| format!("group{l}")).collect();
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let scales = vec![1.0; levels.len()];
    let ratios = hazard_ratios(&fit, &name_refs, &scales, alpha)?;
    Ok(GroupFit {
        reference,
        levels,
        ratios,
        fit,
    })
}

/// Coding of the grade feature in the adjusted model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupCoding {
    /// One-hot indicators against the lowest label (default).
    Categorical,
    /// A single numeric column carrying the label value.
    Ordinal,
}

pub struct MultivariableFit {
    pub names: Vec<String>,
    pub fit: CoxFit,
}

/// Grade feature plus a binary stage indicator, with an L2 penalty
/// (the grouped indicators can otherwise separate in small strata).
pub fn fit_multivariable(
    groups: &[u8],
    t_high: &[bool],
    times: &[f64],
    events: &[bool],
    ridge: f64,
) -> Result<MultivariableFit, CoxError> {
    fit_multivariable_with(groups, t_high, times, events, ridge, GroupCoding::Categorical)
}

pub fn fit_multivariable_with(
    groups: &[u8],
    t_high: &[bool],
    times: &[f64],
    events: &[bool],
    ridge: f64,
    coding: GroupCoding,
) -> Result<MultivariableFit, CoxError> {
    if groups.len() != t_high.len() {
        return Err(CoxError::LengthMismatch {
            rows: groups.len(),
            times: t_high.len(),
            events: events.len(),
        });
    }
    let mut names: Vec<String>;
    let x: Vec<Vec<f64>> = match coding {
        GroupCoding::Categorical => {
            let mut levels: Vec<u8> = groups.to_vec();
            levels.sort_unstable();
            levels.dedup();
            if levels.len() < 2 {
                return Err(CoxError::DegenerateGroups);
            }
            let non_ref = &levels[1..];
            names = non_ref.iter().map(|l| format!("group{l}")).collect();
            groups
                .iter()
                .zip(t_high)
                .map(|(&g, &t)| {
                    let mut row: Vec<f64> = non_ref
                        .iter()
                        .map(|&l| if g == l { 1.0 } else { 0.0 })
                        .collect();
                    row.push(if t { 1.0 } else { 0.0 });
                    row
                })
                .collect()
        }
        GroupCoding::Ordinal => {
            names = vec!["group_ordinal".to_string()];
            groups
                .iter()
                .zip(t_high)
                .map(|(&g, &t)| vec![f64::from(g), if t { 1.0 } else { 0.0 }])
                .collect()
        }
    };
    names.push("t_high".to_string());
    let opts = FitOptions {
        ridge,
        ..FitOptions::default()
    };
    let fit = fit_cox(&x, times, events, &opts)?;
    Ok(MultivariableFit { names, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn col(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn null_log_partial_likelihood_is_minus_log_risk_sets() {
        let x = col(&[2.0, 1.0, 0.0]);
        let times = [1.0, 2.0, 3.0];
        let events = [true, true, true];
        let ll = log_partial_likelihood(&x, &times, &events, TiesMethod::Efron, &[0.0]).unwrap();
        // exact: -(ln 3 + ln 2 + ln 1)
        assert_eq!(ll, -(3.0_f64.ln() + 2.0_f64.ln() + 1.0_f64.ln()));
        assert!((ll + 6.0_f64.ln()).abs() < 1e-12);
    }

    // Frozen against an independent implementation (hand-coded partial
    // likelihoods maximized with scipy).
    #[test]
    fn efron_tied_reference_fit() {
        let x = col(&[0.5, 1.0, -0.5, 0.0, 1.5]);
        let times = [1.0, 1.0, 2.0, 2.0, 3.0];
        let events = [true, true, true, false, true];
        let fit = fit_cox(&x, &times, &events, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.beta[0], -0.152657784634112, epsilon = 1e-6);
        assert_relative_eq!(fit.log_likelihood, -4.073830661028587, epsilon = 1e-9);
        let ll0 =
            log_partial_likelihood(&x, &times, &events, TiesMethod::Efron, &[0.0]).unwrap();
        assert_relative_eq!(ll0, -4.094344562222100, epsilon = 1e-12);
    }

    #[test]
    fn breslow_tied_reference_fit() {
        let x = col(&[0.5, 1.0, -0.5, 0.0, 1.5]);
        let times = [1.0, 1.0, 2.0, 2.0, 3.0];
        let events = [true, true, true, false, true];
        let opts = FitOptions {
            ties: TiesMethod::Breslow,
            ..FitOptions::default()
        };
        let fit = fit_cox(&x, &times, &events, &opts).unwrap();
        assert_relative_eq!(fit.beta[0], -0.198255045596163, epsilon = 1e-6);
        assert_relative_eq!(fit.log_likelihood, -4.284740861623453, epsilon = 1e-9);
        let ll0 =
            log_partial_likelihood(&x, &times, &events, TiesMethod::Breslow, &[0.0]).unwrap();
        assert_relative_eq!(ll0, -4.317488113536310, epsilon = 1e-12);
    }

    #[test]
    fn two_covariate_tied_reference_fits() {
        let x = vec![
            vec![0.2, 1.0],
            vec![1.1, 0.0],
            vec![-0.3, 0.5],
            vec![0.0, -1.0],
            vec![0.8, 0.3],
            vec![-1.2, 0.7],
            vec![0.4, -0.2],
            vec![1.5, 0.9],
        ];
        let times = [1.0, 1.0, 1.0, 2.0, 3.0, 3.0, 4.0, 5.0];
        let events = [true, true, false, true, true, true, false, true];
        let fit = fit_cox(&x, &times, &events, &FitOptions::default()).unwrap();
        assert_relative_eq!(fit.beta[0], -0.233564871338214, epsilon = 1e-6);
        assert_relative_eq!(fit.beta[1], -0.274783995976921, epsilon = 1e-6);
        assert_relative_eq!(fit.log_likelihood, -7.949709691145937, epsilon = 1e-9);
        let opts = FitOptions {
            ties: TiesMethod::Breslow,
            ..FitOptions::default()
        };
        let fitb = fit_cox(&x, &times, &events, &opts).unwrap();
        assert_relative_eq!(fitb.beta[0], -0.199430423407567, epsilon = 1e-6);
        assert_relative_eq!(fitb.beta[1], -0.324296753668737, epsilon = 1e-6);
        assert_relative_eq!(fitb.log_likelihood, -8.378436594604151, epsilon = 1e-9);
    }

    #[test]
    fn efron_equals_breslow_without_ties() {
        let x = col(&[0.3, -1.0, 2.0, 0.7, -0.4, 1.2]);
        let times = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let events = [true, false, true, true, false, true];
        let fe = fit_cox(&x, &times, &events, &FitOptions::default()).unwrap();
        let fb = fit_cox(
            &x,
            &times,
            &events,
            &FitOptions {
                ties: TiesMethod::Breslow,
                ..FitOptions::default()
            },
        )
        .unwrap();
        assert_relative_eq!(fe.beta[0], fb.beta[0], epsilon = 1e-9);
        assert_relative_eq!(fe.log_likelihood, fb.log_likelihood, epsilon = 1e-10);
    }

    #[test]
    fn uninformative_risk_set_is_not_identified() {
        // the x=1 subject is censored before the only event: zero information
        let x = col(&[0.0, 1.0]);
        let times = [2.0, 1.0];
        let events = [true, false];
        let r = fit_cox(&x, &times, &events, &FitOptions::default());
        assert!(matches!(r, Err(CoxError::NonIdentified { column: 0 })));
    }

    #[test]
    fn separation_detected_and_ridge_rescues() {
        // exposed subjects all fail before any unexposed subject: monotone
        // likelihood. The covariate is deliberately small-scale so the
        // runaway coefficient crosses the bound before the score flattens
        // below the convergence tolerance (for a 0/1 covariate the plateau
        // is reached near |beta| = 22, inside the default bound).
        let x = col(&[0.01, 0.01, 0.01, 0.0, 0.0, 0.0]);
        let times = [1.0, 2.0, 3.0, 10.0, 11.0, 12.0];
        let events = [true, true, true, false, false, false];
        let r = fit_cox(&x, &times, &events, &FitOptions::default());
        assert!(matches!(r, Err(CoxError::Separation { column: 0, .. })));

        let fit = fit_cox(
            &x,
            &times,
            &events,
            &FitOptions {
                ridge: 0.02,
                ..FitOptions::default()
            },
        )
        .unwrap();
        assert!(fit.converged);
        assert!(fit.beta[0].is_finite());
    }

    #[test]
    fn constant_covariate_rejected() {
        let x = vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]];
        let r = fit_cox(
            &x,
            &[1.0, 2.0, 3.0],
            &[true, true, false],
            &FitOptions::default(),
        );
        assert!(matches!(r, Err(CoxError::ConstantCovariate { index: 1 })));
    }

    #[test]
    fn no_events_rejected() {
        let r = fit_cox(
            &col(&[1.0, 2.0]),
            &[1.0, 2.0],
            &[false, false],
            &FitOptions::default(),
        );
        assert!(matches!(r, Err(CoxError::NoEvents)));
    }

    #[test]
    fn covariate_rescaling_rescales_beta() {
        let x = col(&[0.3, -1.0, 2.0, 0.7, -0.4, 1.2, 0.1, -0.8]);
        let times = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let events = [true, false, true, true, false, true, true, false];
        let f1 = fit_cox(&x, &times, &events, &FitOptions::default()).unwrap();
        let c = 10.0;
        let xs: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0] * c]).collect();
        let f2 = fit_cox(&xs, &times, &events, &FitOptions::default()).unwrap();
        assert_relative_eq!(f1.beta[0], f2.beta[0] * c, epsilon = 1e-8);
        for (r, rs) in x.iter().zip(&xs) {
            let lp1 = linear_predictor(&f1.beta, r).unwrap();
            let lp2 = linear_predictor(&f2.beta, rs).unwrap();
            assert_relative_eq!(lp1, lp2, epsilon = 1e-8);
        }
    }

    #[test]
    fn covariate_shift_leaves_beta() {
        let x = col(&[0.3, -1.0, 2.0, 0.7, -0.4, 1.2, 0.1, -0.8]);
        let times = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let events = [true, false, true, true, false, true, true, false];
        let f1 = fit_cox(&x, &times, &events, &FitOptions::default()).unwrap();
        let xs: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0] + 3.0]).collect();
        let f2 = fit_cox(&xs, &times, &events, &FitOptions::default()).unwrap();
        assert_relative_eq!(f1.beta[0], f2.beta[0], epsilon = 1e-8);
    }

    #[test]
    fn penalized_objective_no_worse_than_null() {
        let x = col(&[0.5, 1.0, -0.5, 0.0, 1.5]);
        let times = [1.0, 1.0, 2.0, 2.0, 3.0];
        let events = [true, true, true, false, true];
        let opts = FitOptions {
            ridge: 0.5,
            ..FitOptions::default()
        };
        let fit = fit_cox(&x, &times, &events, &opts).unwrap();
        let ll0 =
            log_partial_likelihood(&x, &times, &events, TiesMethod::Efron, &[0.0]).unwrap();
        assert!(fit.penalized_objective() >= ll0 - 1e-12);
    }

    #[test]
    fn strong_ridge_shrinks_to_zero() {
        let x = col(&[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let times = [1.0, 2.0, 3.0, 10.0, 11.0, 12.0];
        let events = [true, true, true, true, false, false];
        let fit = fit_cox(
            &x,
            &times,
            &events,
            &FitOptions {
                ridge: 1e6,
                ..FitOptions::default()
            },
        )
        .unwrap();
        assert!(fit.beta[0].abs() < 1e-3);
    }

    #[test]
    fn analytic_score_matches_finite_differences() {
        let x = vec![
            vec![0.2, 1.0],
            vec![1.1, 0.0],
            vec![-0.3, 0.5],
            vec![0.0, -1.0],
            vec![0.8, 0.3],
            vec![-1.2, 0.7],
        ];
        let times = [1.0, 1.0, 2.0, 3.0, 3.0, 4.0];
        let events = [true, true, false, true, true, true];
        for ties in [TiesMethod::Efron, TiesMethod::Breslow] {
            for beta in [[0.0, 0.0], [0.3, -0.2], [-0.7, 0.5], [1.1, 0.9]] {
                let g = score_vector(&x, &times, &events, ties, &beta).unwrap();
                for k in 0..2 {
                    let h = 1e-5 * (1.0 + beta[k].abs());
                    let mut bp = beta;
                    bp[k] += h;
                    let mut bm = beta;
                    bm[k] -= h;
                    let fp = log_partial_likelihood(&x, &times, &events, ties, &bp).unwrap();
                    let fm = log_partial_likelihood(&x, &times, &events, ties, &bm).unwrap();
                    let fd = (fp - fm) / (2.0 * h);
                    assert_relative_eq!(g[k], fd, max_relative = 1e-6, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn hazard_ratio_arithmetic() {
        let fit = CoxFit {
            beta: vec![0.0392],
            covariance: vec![vec![0.04 * 0.04]],
            log_likelihood: 0.0,
            n_iterations: 1,
            converged: true,
            ties: TiesMethod::Efron,
            ridge: 0.0,
            n_subjects: 10,
            n_events: 5,
        };
        let hr = hazard_ratios(&fit, &["pct"], &[10.0], 0.05).unwrap();
        assert_relative_eq!(hr[0].hr, (10.0_f64 * 0.0392).exp(), epsilon = 1e-12);
        // direct arithmetic with the implementation's own quantile
        let z = 1.959963984540054_f64;
        assert_relative_eq!(hr[0].ci_lower, (10.0_f64 * (0.0392 - z * 0.04)).exp(), epsilon = 1e-12);
        assert_relative_eq!(hr[0].ci_upper, (10.0_f64 * (0.0392 + z * 0.04)).exp(), epsilon = 1e-12);
        // rounded-z cross-check
        assert_relative_eq!(hr[0].ci_lower, (10.0_f64 * (0.0392 - 1.96 * 0.04)).exp(), max_relative = 1e-3);
        assert_relative_eq!(hr[0].p_value, 0.327086118655385, max_relative = 1e-9);
        // beta = ln(1.48)/10 scaled by 10 recovers 1.48
        let fit2 = CoxFit {
            beta: vec![1.48_f64.ln() / 10.0],
            ..fit.clone()
        };
        let hr2 = hazard_ratios(&fit2, &["pct"], &[10.0], 0.05).unwrap();
        assert_relative_eq!(hr2[0].hr, 1.48, epsilon = 1e-12);
    }

    #[test]
    fn zero_beta_is_null_ratio() {
        let fit = CoxFit {
            beta: vec![0.0],
            covariance: vec![vec![0.01]],
            log_likelihood: 0.0,
            n_iterations: 1,
            converged: true,
            ties: TiesMethod::Efron,
            ridge: 0.0,
            n_subjects: 10,
            n_events: 5,
        };
        let hr = hazard_ratios(&fit, &["x"], &[1.0], 0.05).unwrap();
        assert_eq!(hr[0].hr, 1.0);
        assert_eq!(hr[0].p_value, 1.0);
        assert!(hr[0].ci_lower < 1.0 && hr[0].ci_upper > 1.0);
    }

    #[test]
    fn unconverged_fit_refuses_ratios() {
        let fit = CoxFit {
            beta: vec![0.5],
            covariance: vec![vec![0.01]],
            log_likelihood: 0.0,
            n_iterations: 100,
            converged: false,
            ties: TiesMethod::Efron,
            ridge: 0.0,
            n_subjects: 10,
            n_events: 5,
        };
        assert!(matches!(
            hazard_ratios(&fit, &["x"], &[1.0], 0.05),
            Err(CoxError::NotConvergedFit)
        ));
    }

    #[test]
    fn linear_predictor_examples() {
        assert_eq!(linear_predictor(&[0.0, 0.0], &[30.0, 10.0]).unwrap(), 0.0);
        assert_relative_eq!(
            linear_predictor(&[0.0392, 0.0412], &[30.0, 10.0]).unwrap(),
            1.588,
            epsilon = 1e-12
        );
        assert!(matches!(
            linear_predictor(&[1.0], &[1.0, 2.0]),
            Err(CoxError::DimensionMismatch { .. })
        ));
        // linearity
        let b = [0.3, -0.7];
        let x1 = [1.0, 2.0];
        let x2 = [-0.5, 4.0];
        let sum: Vec<f64> = x1.iter().zip(&x2).map(|(a, c)| a + c).collect();
        let lp = linear_predictor(&b, &sum).unwrap();
        assert_relative_eq!(
            lp,
            linear_predictor(&b, &x1).unwrap() + linear_predictor(&b, &x2).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn identical_groups_give_unit_hazard_ratio() {
        // same multiset of (time, event) in both groups: the score is zero
        // at beta = 0, so the estimate is exactly null
        let times: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let events: Vec<bool> = (1..=20).map(|i| i % 3 != 0).collect();
        let mut all_times = times.clone();
        all_times.extend(&times);
        let mut all_events = events.clone();
        all_events.extend(&events);
        let mut groups = vec![1u8; 20];
        groups.extend(vec![2u8; 20]);
        let gf = fit_univariable_groups(
            &groups,
            1,
            &all_times,
            &all_events,
            &FitOptions::default(),
            0.05,
        )
        .unwrap();
        assert!((gf.ratios[0].hr - 1.0).abs() <= 0.05);
        assert!((gf.ratios[0].hr - 1.0).abs() < 1e-9);
    }

    #[test]
    fn five_groups_give_four_ratios() {
        let groups: Vec<u8> = (0..50).map(|i| (i % 5 + 1) as u8).collect();
        let times: Vec<f64> = (0..50).map(|i| (i + 1) as f64 + (i % 5) as f64).collect();
        let events: Vec<bool> = (0..50).map(|i| i % 2 == 0).collect();
        let gf =
            fit_univariable_groups(&groups, 1, &times, &events, &FitOptions::default(), 0.05)
                .unwrap();
        assert_eq!(gf.ratios.len(), 4);
        assert_eq!(gf.levels, vec![2, 3, 4, 5]);
        assert_eq!(gf.ratios[2].name, "group4");
    }

    #[test]
    fn missing_reference_rejected() {
        let r = fit_univariable_groups(
            &[2, 3, 2, 3],
            1,
            &[1.0, 2.0, 3.0, 4.0],
            &[true, true, false, true],
            &FitOptions::default(),
            0.05,
        );
        assert!(matches!(r, Err(CoxError::MissingReference(1))));
    }

    #[test]
    fn group_without_comparators_reports_its_coefficient() {
        // group 3 subjects are censored before every event: its indicator
        // carries no information
        let groups = [1u8, 1, 1, 2, 2, 2, 3, 3];
        let times = [5.0, 6.0, 7.0, 5.5, 6.5, 7.5, 1.0, 1.5];
        let events = [true, true, false, true, false, true, false, false];
        let r = fit_univariable_groups(
            &groups,
            1,
            &times,
            &events,
            &FitOptions::default(),
            0.05,
        );
        match r {
            Err(CoxError::NonIdentified { column }) | Err(CoxError::Separation { column, .. }) => {
                // columns are (group2, group3); the empty one is column 1
                assert_eq!(column, 1);
            }
            other => panic!("expected non-identified/separation, got {other:?}"),
        }
    }

    #[test]
    fn multivariable_codings_run() {
        let n = 60;
        let groups: Vec<u8> = (0..n).map(|i| (i % 5 + 1) as u8).collect();
        let t_high: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let times: Vec<f64> = (0..n)
            .map(|i| 1.0 + (i as f64 * 0.37) % 10.0 + f64::from(groups[i]) * 0.1)
            .collect();
        let events: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let m = fit_multivariable(&groups, &t_high, &times, &events, 0.02).unwrap();
        assert_eq!(m.names.len(), 5); // 4 indicators + t_high
        assert!(m.fit.converged);
        let mo = fit_multivariable_with(
            &groups,
            &t_high,
            &times,
            &events,
            0.02,
            GroupCoding::Ordinal,
        )
        .unwrap();
        assert_eq!(mo.names, vec!["group_ordinal".to_string(), "t_high".to_string()]);
    }
}
