//! End-to-end orchestration: run configuration, staged execution, and the
//! report bundle written to the output directory.
//!
//! A run walks fixed stages: ingest or simulate, exclusions, validation-set
//! selection, optional patch aggregation, out-of-fold risk scores,
//! discretization, score comparison with bootstrap intervals, Kaplan-Meier
//! stratifications, hazard-ratio tables, the discordance table, and the
//! sensitivity grids. Any stage failure aborts with the stage name and
//! cause, and nothing is left in the output directory (files are rendered
//! in memory first). Reruns with the same config and seed are byte-
//! identical except for the timestamp inside the manifest.
//!
//! Two reporting rules apply everywhere: a cell that cannot be computed is
//! written empty with its reason in the `note` column, and the score
//! comparison never evaluates pathologist grades on validation set 1,
//! where they are not available for all cases.

pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::cohort::{
    apply_exclusions, load_cohort, select_validation_set, simulate_cohort, Case, Cohort,
    CohortError, Outcome, ValidationSet, COHORT_SCHEMA_VERSION,
};
use crate::concordance::c_index;
use crate::coxph::{
    fit_cox, fit_multivariable, fit_univariable_groups, hazard_ratios, CoxError, FitOptions,
};
use crate::inference::{bootstrap_ci, bootstrap_diff_ci, InferenceError};
use crate::patchagg::{aggregate_cases, read_patch_grids, read_slide_manifest, ClassWeights,
    PatchAggError};
use crate::riskmodel::{
    discretize_to_reference, ensemble_mean, loocv_risk_scores, read_assignments_from,
    rule_based_assignments, temporal_split_scores, write_assignments_csv, ReferenceHistogram,
    RiskAssignment, RiskMethod, RiskModelError,
};
use crate::survstats::{kaplan_meier, logrank, survival_at, SurvStatsError};

pub use config::{InputSource, PatchGridsInput, RawConfig, ReferenceSource, RunConfig};
pub use report::{
    DiscordanceRow, HrRow, KmStratum, LogrankRow, Manifest, MethodSensitivityRow, PerPatternRow,
    ReportBundle, Table2DiffRow, Table2Row, YearSensitivityRow,
};

use config::subseed;
use report::*;

/// Horizon for the discordance survival table.
pub const DISCORDANCE_HORIZON_YEARS: f64 = 10.0;

/// Report format version recorded in the manifest.
pub const REPORT_SCHEMA_VERSION: &str = "1";

const ALPHA: f64 = 0.05;

const NOTE_V1_NO_GRADES: &str =
    "not computed: pathologist grades are not available for all cases in validation set 1";
const NOTE_RIDGE_FALLBACK: &str = "L2 penalty 0.02 applied to assist with convergence";

/// What kind of failure a stage hit; decides the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Invalid configuration (exit code 2).
    Config,
    /// Unusable input data (exit code 3).
    Data,
    /// Numerical or convergence failure (exit code 4).
    Numeric,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Config => 2,
            FailureKind::Data => 3,
            FailureKind::Numeric => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("stage {stage:?} failed: {cause}")]
    Stage {
        stage: String,
        kind: FailureKind,
        cause: String,
    },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::InvalidInput(_) => 3,
            PipelineError::Stage { kind, .. } => kind.exit_code(),
        }
    }

    fn stage(stage: &str, kind: FailureKind, cause: impl ToString) -> Self {
        PipelineError::Stage {
            stage: stage.to_string(),
            kind,
            cause: cause.to_string(),
        }
    }

    pub fn from_cohort(stage: &str, e: CohortError) -> Self {
        let kind = match e {
            CohortError::InvalidParams(_) => FailureKind::Config,
            _ => FailureKind::Data,
        };
        Self::stage(stage, kind, e)
    }

    pub fn from_cox(stage: &str, e: CoxError) -> Self {
        Self::stage(stage, cox_kind(&e), e)
    }

    pub fn from_risk(stage: &str, e: RiskModelError) -> Self {
        let kind = match &e {
            RiskModelError::Cox(c) => cox_kind(c),
            RiskModelError::FoldFailed { source, .. } => cox_kind(source),
            RiskModelError::Cohort(CohortError::InvalidParams(_)) => FailureKind::Config,
            RiskModelError::InvalidHistogram(_) => FailureKind::Config,
            _ => FailureKind::Data,
        };
        Self::stage(stage, kind, e)
    }

    pub fn from_surv(stage: &str, e: SurvStatsError) -> Self {
        let kind = match e {
            SurvStatsError::InvalidAlpha(_) => FailureKind::Config,
            SurvStatsError::SingularVariance => FailureKind::Numeric,
            _ => FailureKind::Data,
        };
        Self::stage(stage, kind, e)
    }

    pub fn from_inference(stage: &str, e: InferenceError) -> Self {
        let kind = match e {
            InferenceError::InvalidInput(_) => FailureKind::Config,
            InferenceError::PointUndefined | InferenceError::TooManyUndefined { .. } => {
                FailureKind::Numeric
            }
            _ => FailureKind::Data,
        };
        Self::stage(stage, kind, e)
    }

    pub fn from_patch(stage: &str, e: PatchAggError) -> Self {
        let kind = match e {
            PatchAggError::InvalidWeights(_) | PatchAggError::InvalidThresholdInput(_) => {
                FailureKind::Config
            }
            PatchAggError::UnattainablePrecision { .. } => FailureKind::Numeric,
            _ => FailureKind::Data,
        };
        Self::stage(stage, kind, e)
    }

    pub fn from_io(stage: &str, e: std::io::Error) -> Self {
        Self::stage(stage, FailureKind::Data, e)
    }
}

fn cox_kind(e: &CoxError) -> FailureKind {
    match e {
        CoxError::Separation { .. }
        | CoxError::NonIdentified { .. }
        | CoxError::NotConverged { .. }
        | CoxError::NotConvergedFit => FailureKind::Numeric,
        CoxError::InvalidOptions(_) => FailureKind::Config,
        _ => FailureKind::Data,
    }
}

/// Ten-year (by default) survival per (pathologist grade, discordance
/// direction) stratum, where direction is the sign of `ai_group - gg`.
/// Every (grade, direction) cell is emitted; empty strata carry a note
/// instead of an estimate, and zero-event strata report (1, 1, 1).
pub fn discordance_survival(
    ai_groups: &[u8],
    ggs: &[u8],
    times: &[f64],
    events: &[bool],
    horizon: f64,
) -> Result<Vec<DiscordanceRow>, PipelineError> {
    let n = ai_groups.len();
    if ggs.len() != n || times.len() != n || events.len() != n {
        return Err(PipelineError::InvalidInput(format!(
            "length mismatch: {} groups, {} grades, {} times, {} events",
            n,
            ggs.len(),
            times.len(),
            events.len()
        )));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(PipelineError::InvalidInput(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    for (i, &g) in ai_groups.iter().enumerate() {
        if !(1..=5).contains(&g) || !(1..=5).contains(&ggs[i]) {
            return Err(PipelineError::InvalidInput(format!(
                "group labels must lie in 1-5 (index {i}: ai {g}, gg {})",
                ggs[i]
            )));
        }
    }

    let mut rows = Vec::with_capacity(20);
    for gg in 1u8..=5 {
        for direction in ["all", "lower", "same", "higher"] {
            let idx: Vec<usize> = (0..n)
                .filter(|&i| {
                    ggs[i] == gg
                        && match direction {
                            "lower" => ai_groups[i] < gg,
                            "same" => ai_groups[i] == gg,
                            "higher" => ai_groups[i] > gg,
                            _ => true,
                        }
                })
                .collect();
            let n_events = idx.iter().filter(|&&i| events[i]).count();
            if idx.is_empty() {
                rows.push(DiscordanceRow {
                    gg,
                    direction: direction.to_string(),
                    n: 0,
                    n_events: 0,
                    survival_10y: None,
                    ci_lower: None,
                    ci_upper: None,
                    note: "no cases in stratum".to_string(),
                });
                continue;
            }
            let t: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
            let e: Vec<bool> = idx.iter().map(|&i| events[i]).collect();
            let curve = kaplan_meier(&t, &e, ALPHA)
                .map_err(|err| PipelineError::InvalidInput(err.to_string()))?;
            let (est, lo, hi) = survival_at(&curve, horizon);
            rows.push(DiscordanceRow {
                gg,
                direction: direction.to_string(),
                n: idx.len(),
                n_events,
                survival_10y: Some(est),
                ci_lower: Some(lo),
                ci_upper: Some(hi),
                note: String::new(),
            });
        }
    }
    Ok(rows)
}

/// The enclosing strata for [`substratify_km`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Within {
    /// One stratum per pathologist grade (ungraded cases are left out).
    PathologistGg,
    /// Organ-confined (`t2`) vs extended (`t34`) disease (cases without a
    /// T category are left out).
    TStage,
}

/// One side (AI groups 1-2 or 3-5) of an enclosing stratum.
#[derive(Debug, Clone)]
pub struct StratumSide {
    /// Stratum file name, e.g. `gg3_ai12`.
    pub name: String,
    pub n: usize,
    pub n_events: usize,
    pub curve: crate::survstats::SurvivalCurve,
}

/// Curves and the log-rank comparison for one enclosing stratum.
#[derive(Debug, Clone)]
pub struct StratumResult {
    /// Enclosing stratum name, e.g. `gg3` or `t34`.
    pub stratum: String,
    /// The nonempty sides, low groups first.
    pub sides: Vec<StratumSide>,
    pub logrank: Option<crate::survstats::LogRankResult>,
    /// Why the test was skipped, when it was.
    pub note: String,
}

/// Splits each enclosing stratum into AI risk groups 1-2 vs 3-5, fits a
/// Kaplan-Meier curve per nonempty side, and runs the two-sample log-rank
/// test where both sides are populated. Degenerate strata record the skip
/// reason instead of failing.
pub fn substratify_km(
    cohort: &Cohort,
    ai_groups: &[u8],
    within: Within,
    outcome: Outcome,
    alpha: f64,
) -> Result<Vec<StratumResult>, PipelineError> {
    if ai_groups.len() != cohort.len() {
        return Err(PipelineError::InvalidInput(format!(
            "{} AI groups for {} cases",
            ai_groups.len(),
            cohort.len()
        )));
    }
    if let Some(&g) = ai_groups.iter().find(|g| !(1..=5).contains(*g)) {
        return Err(PipelineError::InvalidInput(format!(
            "AI group labels must lie in 1-5, got {g}"
        )));
    }

    let strata: Vec<(String, Vec<usize>)> = match within {
        Within::PathologistGg => (1u8..=5)
            .map(|gg| {
                let idx = (0..cohort.len())
                    .filter(|&i| cohort.cases()[i].pathologist_gg == Some(gg))
                    .collect();
                (format!("gg{gg}"), idx)
            })
            .collect(),
        Within::TStage => {
            let by_high = |high: bool| -> Vec<usize> {
                (0..cohort.len())
                    .filter(|&i| {
                        cohort.cases()[i]
                            .t_category
                            .map(|t| t.is_high() == high)
                            .unwrap_or(false)
                    })
                    .collect()
            };
            vec![
                ("t2".to_string(), by_high(false)),
                ("t34".to_string(), by_high(true)),
            ]
        }
    };

    let mut results = Vec::with_capacity(strata.len());
    for (name, idx) in strata {
        if idx.is_empty() {
            results.push(StratumResult {
                stratum: name,
                sides: Vec::new(),
                logrank: None,
                note: "empty stratum".to_string(),
            });
            continue;
        }
        let low: Vec<usize> = idx.iter().copied().filter(|&i| ai_groups[i] <= 2).collect();
        let high: Vec<usize> = idx.iter().copied().filter(|&i| ai_groups[i] >= 3).collect();

        let mut sides = Vec::new();
        let mut side_data = Vec::new();
        for (suffix, members) in [("ai12", &low), ("ai35", &high)] {
            if members.is_empty() {
                continue;
            }
            let mut times = Vec::with_capacity(members.len());
            let mut events = Vec::with_capacity(members.len());
            for &i in members {
                let (t, e) = cohort.cases()[i].outcome(outcome).ok_or_else(|| {
                    PipelineError::InvalidInput(format!(
                        "case {} has no recorded outcome for endpoint {outcome}",
                        cohort.cases()[i].case_id
                    ))
                })?;
                times.push(t);
                events.push(e);
            }
            let curve = kaplan_meier(&times, &events, alpha)
                .map_err(|e| PipelineError::InvalidInput(e.to_string()))?;
            sides.push(StratumSide {
                name: format!("{name}_{suffix}"),
                n: members.len(),
                n_events: events.iter().filter(|&&e| e).count(),
                curve,
            });
            side_data.push((times, events));
        }

        let (lr, note) = if side_data.len() < 2 {
            let side = if low.is_empty() { "3-5" } else { "1-2" };
            (
                None,
                format!("test skipped: every case falls in AI groups {side}"),
            )
        } else {
            let (times, events): (Vec<Vec<f64>>, Vec<Vec<bool>>) =
                side_data.into_iter().unzip();
            match logrank(&times, &events) {
                Ok(r) => (Some(r), String::new()),
                Err(e) => (None, format!("test skipped: {e}")),
            }
        };
        results.push(StratumResult {
            stratum: name,
            sides,
            logrank: lr,
            note,
        });
    }
    Ok(results)
}

// ---------------------------------------------------------------------------
// run_pipeline and its stages
// ---------------------------------------------------------------------------

/// Everything computed for one validation set before the comparison table.
struct SetArtifacts {
    label: String,
    n: usize,
    n_events: usize,
    times: Vec<f64>,
    events: Vec<bool>,
    ggs: Vec<Option<u8>>,
    /// Discretized assignments in cohort order, round-tripped through the
    /// CSV encoding so the comparison table is computed from exactly what
    /// the bundle ships.
    assignments: Vec<RiskAssignment>,
    scores: Vec<f64>,
    groups: Vec<u8>,
    /// A planned refusal for the whole set (no scores computed).
    refused: Option<String>,
}

fn c_metric<'a>(
    scores: &'a [f64],
    times: &'a [f64],
    events: &'a [bool],
) -> impl Fn(&Cohort, &[usize]) -> Option<f64> + Sync + 'a {
    move |_, idx| {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let t: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
        let e: Vec<bool> = idx.iter().map(|&i| events[i]).collect();
        c_index(&s, &t, &e).ok().map(|r| r.c_index)
    }
}

fn group_f64(groups: &[u8]) -> Vec<f64> {
    groups.iter().map(|&g| f64::from(g)).collect()
}

/// Executes the full run and writes the bundle into `config.out_dir`.
///
/// Deterministic given the config (including any simulation seed) and the
/// run seed: rerunning produces byte-identical files, with the manifest
/// timestamp as the only exception.
pub fn run_pipeline(config: &RunConfig) -> Result<ReportBundle, PipelineError> {
    if config.discretization == RiskMethod::TemporalSplit
        && config.validation_set == ValidationSet::V1
    {
        return Err(PipelineError::Config(
            "temporal_split discretization cannot serve as the primary method on validation \
             set 1: the training window is part of the set"
                .into(),
        ));
    }
    config.validate_paths()?;

    let ingested = stage_input(config)?;
    let excluded = apply_exclusions(&ingested);
    let analysis = stage_patch_aggregation(config, excluded)?;

    let v1 = select_validation_set(&analysis, ValidationSet::V1, None);
    let v2 = select_validation_set(&analysis, ValidationSet::V2, Some(config.min_year));
    let reference = stage_reference(config, &v2)?;

    let art_v1 = compute_set(config, &analysis, ValidationSet::V1, &v1, &reference)?;
    let art_v2 = compute_set(config, &analysis, ValidationSet::V2, &v2, &reference)?;

    let mut table2 = Vec::new();
    let mut table2_differences = Vec::new();
    for (set, art) in [(&v1, &art_v1), (&v2, &art_v2)] {
        let (rows, diffs) = score_comparison(config, set, art)?;
        table2.extend(rows);
        table2_differences.extend(diffs);
    }

    let (primary, primary_art) = match config.validation_set {
        ValidationSet::V1 => (&v1, &art_v1),
        ValidationSet::V2 => (&v2, &art_v2),
    };

    let (km_curves, logrank_rows) = stage_km(primary, primary_art, config.outcome)?;
    let (hr_univariable, hr_per_pattern, hr_multivariable) =
        stage_hazard_ratios(primary, primary_art, config.ridge)?;
    let discordance10y = stage_discordance(primary_art)?;
    let (sensitivity_years, sensitivity_discretization) =
        stage_sensitivity(config, &analysis, primary, primary_art, &reference)?;

    let assignments = vec![
        (art_v1.label.clone(), art_v1.assignments.clone()),
        (art_v2.label.clone(), art_v2.assignments.clone()),
    ];

    let mut bundle = ReportBundle {
        table2,
        table2_differences,
        hr_univariable,
        hr_per_pattern,
        hr_multivariable,
        discordance10y,
        km_curves,
        logrank: logrank_rows,
        sensitivity_years,
        sensitivity_discretization,
        assignments,
        manifest: Manifest::default(),
    };

    let files = bundle.render_files()?;
    bundle.manifest = build_manifest(config, &ingested, &analysis, &v1, &v2, primary_art, &files);
    write_bundle(&config.out_dir, &files, &bundle.manifest)?;
    Ok(bundle)
}

fn stage_input(config: &RunConfig) -> Result<Cohort, PipelineError> {
    match &config.input {
        InputSource::CohortFile(path) => load_cohort(path, COHORT_SCHEMA_VERSION)
            .map_err(|e| PipelineError::from_cohort("ingest", e)),
        InputSource::Simulation(params) => {
            simulate_cohort(params).map_err(|e| PipelineError::from_cohort("simulate", e))
        }
        InputSource::PatchGrids(pg) => load_cohort(&pg.base_cohort, COHORT_SCHEMA_VERSION)
            .map_err(|e| PipelineError::from_cohort("ingest", e)),
    }
}

/// In patch-grid mode, replaces each case's pattern percentages with the
/// values pooled from its slides. Exclusions have already run on the base
/// cohort; neither selection criterion reads the percentages, so the
/// replacement commutes with validation-set selection.
fn stage_patch_aggregation(config: &RunConfig, cohort: Cohort) -> Result<Cohort, PipelineError> {
    const STAGE: &str = "patch aggregation";
    let pg = match &config.input {
        InputSource::PatchGrids(pg) => pg,
        _ => return Ok(cohort),
    };
    let file = std::fs::File::open(&pg.grids).map_err(|e| PipelineError::from_io(STAGE, e))?;
    let grids =
        read_patch_grids(std::io::BufReader::new(file)).map_err(|e| PipelineError::from_patch(STAGE, e))?;
    let manifest =
        read_slide_manifest(&pg.slide_manifest).map_err(|e| PipelineError::from_patch(STAGE, e))?;
    let weights =
        ClassWeights::new(pg.class_weights).map_err(|e| PipelineError::from_patch(STAGE, e))?;
    let summaries: BTreeMap<String, _> =
        aggregate_cases(&grids, &manifest, &weights, pg.tissue_threshold)
            .map_err(|e| PipelineError::from_patch(STAGE, e))?
            .into_iter()
            .collect();

    let mut cases: Vec<Case> = Vec::with_capacity(cohort.len());
    for case in cohort.cases() {
        let summary = summaries.get(&case.case_id).ok_or_else(|| {
            PipelineError::stage(
                STAGE,
                FailureKind::Data,
                format!("case {} has no slides in the patch-grid input", case.case_id),
            )
        })?;
        if !summary.tumor_present {
            return Err(PipelineError::stage(
                STAGE,
                FailureKind::Data,
                format!("case {} has no tumor cells in the patch-grid input", case.case_id),
            ));
        }
        let mut updated = case.clone();
        updated.pct_gp3 = summary.pct_gp3;
        updated.pct_gp4 = summary.pct_gp4;
        updated.pct_gp5 = summary.pct_gp5;
        cases.push(updated);
    }
    let label = cohort.label.clone();
    let log = cohort.exclusion_log.clone();
    Cohort::new(cases, label, log).map_err(|e| PipelineError::from_cohort(STAGE, e))
}

fn stage_reference(
    config: &RunConfig,
    v2: &Cohort,
) -> Result<ReferenceHistogram, PipelineError> {
    const STAGE: &str = "reference histogram";
    match config.reference {
        ReferenceSource::ExplicitCounts(counts) => Ok(ReferenceHistogram::new(counts)),
        ReferenceSource::PathologistCounts => {
            if v2.is_empty() {
                return Err(PipelineError::stage(
                    STAGE,
                    FailureKind::Data,
                    format!(
                        "validation set 2 is empty (min_year {}); cannot derive pathologist \
                         reference counts",
                        config.min_year
                    ),
                ));
            }
            ReferenceHistogram::from_cohort(v2).map_err(|e| PipelineError::from_risk(STAGE, e))
        }
    }
}

/// The training window for temporal-split scoring: every analysis case
/// operated before `min_year`.
fn train_window(analysis: &Cohort, min_year: i32) -> Result<Cohort, PipelineError> {
    let cases: Vec<Case> = analysis
        .cases()
        .iter()
        .filter(|c| c.surgery_year < min_year)
        .cloned()
        .collect();
    Cohort::new(cases, format!("{}-pre{min_year}", analysis.label), Vec::new())
        .map_err(|e| PipelineError::from_cohort("risk scores", e))
}

fn compute_set(
    config: &RunConfig,
    analysis: &Cohort,
    which: ValidationSet,
    set: &Cohort,
    reference: &ReferenceHistogram,
) -> Result<SetArtifacts, PipelineError> {
    let label = which.to_string();
    let stage = format!("risk scores ({label})");
    let times_events = set
        .times_events(config.outcome)
        .map_err(|e| PipelineError::from_cohort(&stage, e))?;
    let (times, events) = times_events;
    let n_events = events.iter().filter(|&&e| e).count();
    let ggs: Vec<Option<u8>> = set.cases().iter().map(|c| c.pathologist_gg).collect();

    let mut artifacts = SetArtifacts {
        label,
        n: set.len(),
        n_events,
        times,
        events,
        ggs,
        assignments: Vec::new(),
        scores: Vec::new(),
        groups: Vec::new(),
        refused: None,
    };

    // The one planned refusal: a temporal split cannot score validation
    // set 1 because the training window is part of the set. (As the
    // primary method this is rejected up front; here it only blanks the
    // non-primary comparison rows.)
    if config.discretization == RiskMethod::TemporalSplit && which == ValidationSet::V1 {
        artifacts.refused = Some(
            "not computed: the temporal training window is part of validation set 1".to_string(),
        );
        return Ok(artifacts);
    }

    let scored = match config.discretization {
        RiskMethod::Loocv => loocv_risk_scores(set, config.outcome)
            .map_err(|e| PipelineError::from_risk(&stage, e))?
            .assignments,
        RiskMethod::TemporalSplit => {
            let train = train_window(analysis, config.min_year)?;
            temporal_split_scores(&train, set, config.outcome)
                .map_err(|e| PipelineError::from_risk(&stage, e))?
        }
        RiskMethod::RuleBased => {
            rule_based_assignments(set).map_err(|e| PipelineError::from_risk(&stage, e))?
        }
        RiskMethod::InSample => {
            return Err(PipelineError::Config(
                "in_sample is not a reportable discretization method".into(),
            ))
        }
    };
    let discretized = match config.discretization {
        RiskMethod::RuleBased => scored,
        _ => {
            let scaled = reference
                .scaled_to(set.len() as u64)
                .map_err(|e| PipelineError::from_risk(&stage, e))?;
            discretize_to_reference(&scored, &scaled)
                .map_err(|e| PipelineError::from_risk(&stage, e))?
        }
    };

    // Round-trip through the CSV encoding: the comparison table must be a
    // function of the emitted assignments file, not of internal state.
    let mut buf = Vec::new();
    write_assignments_csv(&discretized, &mut buf)
        .map_err(|e| PipelineError::from_risk(&stage, e))?;
    let assignments =
        read_assignments_from(&buf[..]).map_err(|e| PipelineError::from_risk(&stage, e))?;

    let by_id: BTreeMap<&str, &RiskAssignment> = assignments
        .iter()
        .map(|a| (a.case_id.as_str(), a))
        .collect();
    let mut scores = Vec::with_capacity(set.len());
    let mut groups = Vec::with_capacity(set.len());
    for case in set.cases() {
        let a = by_id.get(case.case_id.as_str()).ok_or_else(|| {
            PipelineError::stage(
                &stage,
                FailureKind::Data,
                format!("case {} missing from the assignment round trip", case.case_id),
            )
        })?;
        scores.push(a.risk_score);
        groups.push(a.risk_group.ok_or_else(|| {
            PipelineError::stage(
                &stage,
                FailureKind::Data,
                format!("case {} has no risk group after discretization", case.case_id),
            )
        })?);
    }

    artifacts.assignments = assignments;
    artifacts.scores = scores;
    artifacts.groups = groups;
    Ok(artifacts)
}

fn score_comparison(
    config: &RunConfig,
    set: &Cohort,
    art: &SetArtifacts,
) -> Result<(Vec<Table2Row>, Vec<Table2DiffRow>), PipelineError> {
    let stage = format!("score comparison ({})", art.label);
    let is_v1 = art.label == "v1";

    // Method scores in fixed reporting order; None carries the reason.
    let mut methods: Vec<(&str, Result<Vec<f64>, String>)> = Vec::new();
    let na = |reason: &str| Err(reason.to_string());

    methods.push((
        "pathologist_gg",
        if is_v1 {
            na(NOTE_V1_NO_GRADES)
        } else {
            Ok(art
                .ggs
                .iter()
                .map(|g| f64::from(g.expect("validation set 2 is fully graded")))
                .collect())
        },
    ));
    let score_or_refused = |v: &Vec<f64>| -> Result<Vec<f64>, String> {
        match &art.refused {
            Some(reason) => Err(reason.clone()),
            None => Ok(v.clone()),
        }
    };
    methods.push(("continuous", score_or_refused(&art.scores)));
    methods.push(("risk_groups", score_or_refused(&group_f64(&art.groups))));
    methods.push((
        "ensemble",
        if is_v1 {
            na(NOTE_V1_NO_GRADES)
        } else if let Some(reason) = &art.refused {
            Err(reason.clone())
        } else {
            let mut means = Vec::with_capacity(art.n);
            for (i, g) in art.ggs.iter().enumerate() {
                let gg = g.expect("validation set 2 is fully graded");
                let m = ensemble_mean(art.groups[i], gg)
                    .map_err(|e| PipelineError::from_risk(&stage, e))?;
                means.push(m);
            }
            Ok(means)
        },
    ));

    let mut rows = Vec::with_capacity(methods.len());
    for (name, scores) in &methods {
        let row = match scores {
            Err(reason) => Table2Row {
                validation_set: art.label.clone(),
                method: name.to_string(),
                n: art.n,
                n_events: art.n_events,
                c_index: None,
                ci_lower: None,
                ci_upper: None,
                note: reason.clone(),
            },
            Ok(scores) => {
                let seed = subseed(config.seed, &format!("table2/{}/{name}", art.label));
                let ci = bootstrap_ci(
                    c_metric(scores, &art.times, &art.events),
                    set,
                    config.bootstrap_resamples,
                    ALPHA,
                    seed,
                )
                .map_err(|e| PipelineError::from_inference(&stage, e))?;
                Table2Row {
                    validation_set: art.label.clone(),
                    method: name.to_string(),
                    n: art.n,
                    n_events: art.n_events,
                    c_index: Some(ci.point_estimate),
                    ci_lower: Some(ci.ci_lower),
                    ci_upper: Some(ci.ci_upper),
                    note: String::new(),
                }
            }
        };
        rows.push(row);
    }

    let mut diffs = Vec::new();
    for j in 1..methods.len() {
        for i in 0..j {
            let (name_a, scores_a) = &methods[j];
            let (name_b, scores_b) = &methods[i];
            let row = match (scores_a, scores_b) {
                (Ok(a), Ok(b)) => {
                    let seed = subseed(
                        config.seed,
                        &format!("table2diff/{}/{name_a}-{name_b}", art.label),
                    );
                    let d = bootstrap_diff_ci(
                        c_metric(a, &art.times, &art.events),
                        c_metric(b, &art.times, &art.events),
                        set,
                        config.bootstrap_resamples,
                        ALPHA,
                        seed,
                    )
                    .map_err(|e| PipelineError::from_inference(&stage, e))?;
                    Table2DiffRow {
                        validation_set: art.label.clone(),
                        method_a: name_a.to_string(),
                        method_b: name_b.to_string(),
                        n: art.n,
                        diff: Some(d.diff.point_estimate),
                        ci_lower: Some(d.diff.ci_lower),
                        ci_upper: Some(d.diff.ci_upper),
                        note: String::new(),
                    }
                }
                (a, b) => {
                    let reason = [a, b]
                        .into_iter()
                        .filter_map(|r| r.as_ref().err())
                        .next()
                        .cloned()
                        .unwrap_or_default();
                    Table2DiffRow {
                        validation_set: art.label.clone(),
                        method_a: name_a.to_string(),
                        method_b: name_b.to_string(),
                        n: art.n,
                        diff: None,
                        ci_lower: None,
                        ci_upper: None,
                        note: reason,
                    }
                }
            };
            diffs.push(row);
        }
    }
    Ok((rows, diffs))
}

fn stage_km(
    primary: &Cohort,
    art: &SetArtifacts,
    outcome: Outcome,
) -> Result<(Vec<KmStratum>, Vec<LogrankRow>), PipelineError> {
    const STAGE: &str = "km strata";
    let mut curves = Vec::new();
    let mut tests = Vec::new();

    // Overall curves per discrete label, plus the k-sample test.
    let mut overall = |comparison: &str,
                       prefix: &str,
                       labels: &[Option<u8>]|
     -> Result<(), PipelineError> {
        let mut side_data = Vec::new();
        let mut missing = 0usize;
        let mut empty_groups = Vec::new();
        for g in 1u8..=5 {
            let idx: Vec<usize> = (0..labels.len())
                .filter(|&i| labels[i] == Some(g))
                .collect();
            if idx.is_empty() {
                empty_groups.push(g.to_string());
                continue;
            }
            let times: Vec<f64> = idx.iter().map(|&i| art.times[i]).collect();
            let events: Vec<bool> = idx.iter().map(|&i| art.events[i]).collect();
            let curve = kaplan_meier(&times, &events, ALPHA)
                .map_err(|e| PipelineError::from_surv(STAGE, e))?;
            curves.push(KmStratum {
                stratum: format!("{prefix}{g}"),
                n: idx.len(),
                n_events: events.iter().filter(|&&e| e).count(),
                curve,
            });
            side_data.push((times, events));
        }
        missing += labels.iter().filter(|l| l.is_none()).count();

        let mut notes = Vec::new();
        if !empty_groups.is_empty() {
            notes.push(format!("empty groups omitted: {}", empty_groups.join(" ")));
        }
        if missing > 0 {
            notes.push(format!("{missing} unlabeled cases left out"));
        }
        let n_groups = side_data.len();
        let (chi2, df, p, note) = if n_groups < 2 {
            notes.push("test skipped: fewer than two populated groups".to_string());
            (None, None, None, notes.join("; "))
        } else {
            let (t, e): (Vec<Vec<f64>>, Vec<Vec<bool>>) = side_data.into_iter().unzip();
            match logrank(&t, &e) {
                Ok(r) => (Some(r.chi2), Some(r.df), Some(r.p_value), notes.join("; ")),
                Err(err) => {
                    notes.push(format!("test skipped: {err}"));
                    (None, None, None, notes.join("; "))
                }
            }
        };
        tests.push(LogrankRow {
            comparison: comparison.to_string(),
            n_groups,
            chi2,
            df,
            p_value: p,
            note,
        });
        Ok(())
    };

    let ai_labels: Vec<Option<u8>> = art.groups.iter().map(|&g| Some(g)).collect();
    overall("ai_groups_overall", "ai_group", &ai_labels)?;
    overall("gg_overall", "gg", &art.ggs)?;

    for within in [Within::PathologistGg, Within::TStage] {
        let results = substratify_km(primary, &art.groups, within, outcome, ALPHA)?;
        for r in results {
            for side in r.sides {
                curves.push(KmStratum {
                    stratum: side.name,
                    n: side.n,
                    n_events: side.n_events,
                    curve: side.curve,
                });
            }
            tests.push(LogrankRow {
                comparison: format!("{}_ai12_vs_ai35", r.stratum),
                n_groups: 2,
                chi2: r.logrank.as_ref().map(|l| l.chi2),
                df: r.logrank.as_ref().map(|l| l.df),
                p_value: r.logrank.as_ref().map(|l| l.p_value),
                note: r.note,
            });
        }
    }

    Ok((curves, tests))
}

/// A grouped univariable fit with the documented ridge fallback; returns
/// the fit and whether the fallback engaged.
fn grouped_fit_with_fallback(
    groups: &[u8],
    reference: u8,
    times: &[f64],
    events: &[bool],
) -> Result<(crate::coxph::GroupFit, bool), CoxError> {
    match fit_univariable_groups(groups, reference, times, events, &FitOptions::default(), ALPHA)
    {
        Ok(fit) => Ok((fit, false)),
        Err(
            CoxError::Separation { .. }
            | CoxError::NonIdentified { .. }
            | CoxError::NotConverged { .. },
        ) => {
            let opts = FitOptions {
                ridge: 0.02,
                ..FitOptions::default()
            };
            fit_univariable_groups(groups, reference, times, events, &opts, ALPHA)
                .map(|fit| (fit, true))
        }
        Err(e) => Err(e),
    }
}

fn grouped_hr_rows(
    model: &str,
    labels: &[u8],
    times: &[f64],
    events: &[bool],
) -> Result<Vec<HrRow>, PipelineError> {
    const STAGE: &str = "hazard ratios";
    let mut rows = Vec::new();
    let group_n = |g: u8| labels.iter().filter(|&&l| l == g).count();
    let group_events =
        |g: u8| (0..labels.len()).filter(|&i| labels[i] == g && events[i]).count();

    if labels.is_empty() {
        for g in 1u8..=5 {
            rows.push(HrRow {
                model: model.to_string(),
                term: format!("group{g}"),
                n: 0,
                n_events: 0,
                hr: None,
                ci_lower: None,
                ci_upper: None,
                p_value: None,
                note: "no cases".to_string(),
            });
        }
        return Ok(rows);
    }

    let reference = *labels.iter().min().expect("nonempty labels");
    let (fit, fallback) = grouped_fit_with_fallback(labels, reference, times, events)
        .map_err(|e| PipelineError::from_cox(STAGE, e))?;
    let note_est = if fallback { NOTE_RIDGE_FALLBACK } else { "" };

    for g in 1u8..=5 {
        let row = if g == reference {
            HrRow {
                model: model.to_string(),
                term: format!("group{g}"),
                n: group_n(g),
                n_events: group_events(g),
                hr: Some(1.0),
                ci_lower: None,
                ci_upper: None,
                p_value: None,
                note: "reference".to_string(),
            }
        } else if let Some(pos) = fit.levels.iter().position(|&l| l == g) {
            let r = &fit.ratios[pos];
            HrRow {
                model: model.to_string(),
                term: format!("group{g}"),
                n: group_n(g),
                n_events: group_events(g),
                hr: Some(r.hr),
                ci_lower: Some(r.ci_lower),
                ci_upper: Some(r.ci_upper),
                p_value: Some(r.p_value),
                note: note_est.to_string(),
            }
        } else {
            HrRow {
                model: model.to_string(),
                term: format!("group{g}"),
                n: 0,
                n_events: 0,
                hr: None,
                ci_lower: None,
                ci_upper: None,
                p_value: None,
                note: "no cases".to_string(),
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

fn stage_hazard_ratios(
    primary: &Cohort,
    art: &SetArtifacts,
    ridge: f64,
) -> Result<(Vec<HrRow>, Vec<PerPatternRow>, Vec<HrRow>), PipelineError> {
    const STAGE: &str = "hazard ratios";

    // Univariable grouped models: pathologist grades (graded subset) and
    // AI risk groups.
    let mut univariable = Vec::new();
    {
        let graded: Vec<usize> = (0..art.n).filter(|&i| art.ggs[i].is_some()).collect();
        let labels: Vec<u8> = graded
            .iter()
            .map(|&i| art.ggs[i].expect("filtered on Some"))
            .collect();
        let times: Vec<f64> = graded.iter().map(|&i| art.times[i]).collect();
        let events: Vec<bool> = graded.iter().map(|&i| art.events[i]).collect();
        univariable.extend(grouped_hr_rows("pathologist_gg", &labels, &times, &events)?);
    }
    univariable.extend(grouped_hr_rows(
        "ai_risk_groups",
        &art.groups,
        &art.times,
        &art.events,
    )?);

    // Joint continuous model, reported per 10 percentage points.
    let x: Vec<Vec<f64>> = primary
        .cases()
        .iter()
        .map(|c| vec![c.pct_gp4, c.pct_gp5])
        .collect();
    let fit = fit_cox(&x, &art.times, &art.events, &FitOptions::default())
        .map_err(|e| PipelineError::from_cox(STAGE, e))?;
    let ratios = hazard_ratios(&fit, &["pct_gp4", "pct_gp5"], &[10.0, 10.0], ALPHA)
        .map_err(|e| PipelineError::from_cox(STAGE, e))?;
    let per_pattern = ratios
        .into_iter()
        .map(|r| PerPatternRow {
            covariate: r.name,
            per_points: 10.0,
            n: art.n,
            n_events: art.n_events,
            hr: r.hr,
            ci_lower: r.ci_lower,
            ci_upper: r.ci_upper,
            p_value: r.p_value,
        })
        .collect();

    // Adjusted model: AI groups plus the T-stage dichotomy, under the
    // configured L2 penalty. Reported best-effort; failures annotate the
    // rows instead of aborting the run.
    let multivariable = multivariable_rows(primary, art, ridge);

    Ok((univariable, per_pattern, multivariable))
}

fn multivariable_rows(primary: &Cohort, art: &SetArtifacts, ridge: f64) -> Vec<HrRow> {
    const MODEL: &str = "ai_groups_tstage";
    let staged: Vec<usize> = (0..art.n)
        .filter(|&i| primary.cases()[i].t_category.is_some())
        .collect();
    let n_unstaged = art.n - staged.len();
    let shared_note = if n_unstaged > 0 {
        format!("{n_unstaged} cases without T category left out")
    } else {
        String::new()
    };

    let groups: Vec<u8> = staged.iter().map(|&i| art.groups[i]).collect();
    let t_high: Vec<bool> = staged
        .iter()
        .map(|&i| {
            primary.cases()[i]
                .t_category
                .expect("filtered on Some")
                .is_high()
        })
        .collect();
    let times: Vec<f64> = staged.iter().map(|&i| art.times[i]).collect();
    let events: Vec<bool> = staged.iter().map(|&i| art.events[i]).collect();

    let terms: Vec<String> = {
        let mut levels: Vec<u8> = groups.to_vec();
        levels.sort_unstable();
        levels.dedup();
        let mut t: Vec<String> = levels.iter().map(|g| format!("group{g}")).collect();
        t.push("t_high".to_string());
        t
    };
    let term_counts = |term: &str| -> (usize, usize) {
        if term == "t_high" {
            let n = t_high.iter().filter(|&&t| t).count();
            let e = (0..t_high.len()).filter(|&i| t_high[i] && events[i]).count();
            (n, e)
        } else {
            let g: u8 = term.trim_start_matches("group").parse().unwrap_or(0);
            let n = groups.iter().filter(|&&x| x == g).count();
            let e = (0..groups.len()).filter(|&i| groups[i] == g && events[i]).count();
            (n, e)
        }
    };
    let na_rows = |reason: String| -> Vec<HrRow> {
        terms
            .iter()
            .map(|term| {
                let (n, n_events) = term_counts(term);
                HrRow {
                    model: MODEL.to_string(),
                    term: term.clone(),
                    n,
                    n_events,
                    hr: None,
                    ci_lower: None,
                    ci_upper: None,
                    p_value: None,
                    note: reason.clone(),
                }
            })
            .collect()
    };

    if staged.is_empty() {
        return na_rows("no cases with a T category".to_string());
    }

    let fit = match fit_multivariable(&groups, &t_high, &times, &events, ridge) {
        Ok(f) => f,
        Err(e) => return na_rows(format!("not fitted: {e}")),
    };
    let names: Vec<&str> = fit.names.iter().map(|s| s.as_str()).collect();
    let scales = vec![1.0; names.len()];
    let ratios = match hazard_ratios(&fit.fit, &names, &scales, ALPHA) {
        Ok(r) => r,
        Err(e) => return na_rows(format!("not fitted: {e}")),
    };

    let mut rows = Vec::new();
    let reference = *groups.iter().min().expect("nonempty groups");
    rows.push(HrRow {
        model: MODEL.to_string(),
        term: format!("group{reference}"),
        n: term_counts(&format!("group{reference}")).0,
        n_events: term_counts(&format!("group{reference}")).1,
        hr: Some(1.0),
        ci_lower: None,
        ci_upper: None,
        p_value: None,
        note: join_notes(&["reference", &shared_note]),
    });
    for r in ratios {
        let (n, n_events) = term_counts(&r.name);
        rows.push(HrRow {
            model: MODEL.to_string(),
            term: r.name,
            n,
            n_events,
            hr: Some(r.hr),
            ci_lower: Some(r.ci_lower),
            ci_upper: Some(r.ci_upper),
            p_value: Some(r.p_value),
            note: shared_note.clone(),
        });
    }
    rows
}

fn join_notes(parts: &[&str]) -> String {
    parts
        .iter()
        .filter(|p| !p.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join("; ")
}

fn stage_discordance(art: &SetArtifacts) -> Result<Vec<DiscordanceRow>, PipelineError> {
    let graded: Vec<usize> = (0..art.n).filter(|&i| art.ggs[i].is_some()).collect();
    let ai: Vec<u8> = graded.iter().map(|&i| art.groups[i]).collect();
    let ggs: Vec<u8> = graded
        .iter()
        .map(|&i| art.ggs[i].expect("filtered on Some"))
        .collect();
    let times: Vec<f64> = graded.iter().map(|&i| art.times[i]).collect();
    let events: Vec<bool> = graded.iter().map(|&i| art.events[i]).collect();
    discordance_survival(&ai, &ggs, &times, &events, DISCORDANCE_HORIZON_YEARS)
}

/// Groups-and-continuous concordance for one cohort subset under one
/// scoring method; any failure is reported as a row note, never an abort.
struct SensitivityOutcome {
    n: usize,
    n_events: usize,
    continuous: Option<(f64, f64, f64)>,
    groups: Option<(f64, f64, f64)>,
    note: String,
}

#[allow(clippy::too_many_arguments)]
fn sensitivity_scores(
    config: &RunConfig,
    analysis: &Cohort,
    sub: &Cohort,
    method: RiskMethod,
    reference: &ReferenceHistogram,
    train_before: i32,
    tag: &str,
) -> SensitivityOutcome {
    let (times, events) = match sub.times_events(config.outcome) {
        Ok(te) => te,
        Err(e) => {
            return SensitivityOutcome {
                n: sub.len(),
                n_events: 0,
                continuous: None,
                groups: None,
                note: e.to_string(),
            }
        }
    };
    let n_events = events.iter().filter(|&&e| e).count();
    let fail = |note: String| SensitivityOutcome {
        n: sub.len(),
        n_events,
        continuous: None,
        groups: None,
        note,
    };

    let scored = match method {
        RiskMethod::Loocv => match loocv_risk_scores(sub, config.outcome) {
            Ok(r) => r.assignments,
            Err(e) => return fail(e.to_string()),
        },
        RiskMethod::TemporalSplit => {
            let train = match train_window(analysis, train_before) {
                Ok(t) => t,
                Err(e) => return fail(e.to_string()),
            };
            match temporal_split_scores(&train, sub, config.outcome) {
                Ok(a) => a,
                Err(e) => return fail(e.to_string()),
            }
        }
        RiskMethod::RuleBased | RiskMethod::InSample => match rule_based_assignments(sub) {
            Ok(a) => a,
            Err(e) => return fail(e.to_string()),
        },
    };
    let discretized = if method == RiskMethod::RuleBased {
        scored
    } else {
        let scaled = match reference.scaled_to(sub.len() as u64) {
            Ok(s) => s,
            Err(e) => return fail(e.to_string()),
        };
        match discretize_to_reference(&scored, &scaled) {
            Ok(d) => d,
            Err(e) => return fail(e.to_string()),
        }
    };

    let scores: Vec<f64> = discretized.iter().map(|a| a.risk_score).collect();
    let groups: Vec<f64> = discretized
        .iter()
        .map(|a| f64::from(a.risk_group.unwrap_or(0)))
        .collect();
    let interval = |scores: &[f64], which: &str| -> Option<(f64, f64, f64)> {
        let seed = subseed(config.seed, &format!("{tag}/{which}"));
        bootstrap_ci(
            c_metric(scores, &times, &events),
            sub,
            config.bootstrap_resamples,
            ALPHA,
            seed,
        )
        .ok()
        .map(|r| (r.point_estimate, r.ci_lower, r.ci_upper))
    };
    let continuous = interval(&scores, "continuous");
    let groups_ci = interval(&groups, "groups");
    let note = if continuous.is_none() || groups_ci.is_none() {
        "concordance undefined on this subset".to_string()
    } else {
        String::new()
    };
    SensitivityOutcome {
        n: sub.len(),
        n_events,
        continuous,
        groups: groups_ci,
        note,
    }
}

fn stage_sensitivity(
    config: &RunConfig,
    analysis: &Cohort,
    primary: &Cohort,
    primary_art: &SetArtifacts,
    reference: &ReferenceHistogram,
) -> Result<(Vec<YearSensitivityRow>, Vec<MethodSensitivityRow>), PipelineError> {
    // Year-range grid: widen or shift the graded set's year window while
    // keeping everything else fixed.
    let mut years: Vec<i32> = vec![1995, 2000, config.min_year];
    years.sort_unstable();
    years.dedup();

    let mut year_rows = Vec::with_capacity(years.len());
    for y in years {
        let sub = select_validation_set(analysis, ValidationSet::V2, Some(y));
        if sub.is_empty() {
            year_rows.push(YearSensitivityRow {
                min_year: y,
                n: 0,
                n_events: 0,
                continuous_c: None,
                continuous_ci_lower: None,
                continuous_ci_upper: None,
                groups_c: None,
                groups_ci_lower: None,
                groups_ci_upper: None,
                note: "no graded cases in this year range".to_string(),
            });
            continue;
        }
        let out = sensitivity_scores(
            config,
            analysis,
            &sub,
            config.discretization,
            reference,
            y,
            &format!("sens/years/{y}"),
        );
        year_rows.push(YearSensitivityRow {
            min_year: y,
            n: out.n,
            n_events: out.n_events,
            continuous_c: out.continuous.map(|c| c.0),
            continuous_ci_lower: out.continuous.map(|c| c.1),
            continuous_ci_upper: out.continuous.map(|c| c.2),
            groups_c: out.groups.map(|c| c.0),
            groups_ci_lower: out.groups.map(|c| c.1),
            groups_ci_upper: out.groups.map(|c| c.2),
            note: out.note,
        });
    }

    // Discretization-method grid on the primary set.
    let mut method_rows = Vec::new();
    for method in [RiskMethod::Loocv, RiskMethod::TemporalSplit, RiskMethod::RuleBased] {
        if method == RiskMethod::TemporalSplit && config.validation_set == ValidationSet::V1 {
            method_rows.push(MethodSensitivityRow {
                method: method.to_string(),
                n: primary_art.n,
                n_events: primary_art.n_events,
                c_index: None,
                ci_lower: None,
                ci_upper: None,
                note: "not computed: the temporal training window is part of validation set 1"
                    .to_string(),
            });
            continue;
        }
        let out = sensitivity_scores(
            config,
            analysis,
            primary,
            method,
            reference,
            config.min_year,
            &format!("sens/method/{method}"),
        );
        method_rows.push(MethodSensitivityRow {
            method: method.to_string(),
            n: out.n,
            n_events: out.n_events,
            c_index: out.groups.map(|c| c.0),
            ci_lower: out.groups.map(|c| c.1),
            ci_upper: out.groups.map(|c| c.2),
            note: out.note,
        });
    }

    Ok((year_rows, method_rows))
}

#[allow(clippy::too_many_arguments)]
fn build_manifest(
    config: &RunConfig,
    ingested: &Cohort,
    analysis: &Cohort,
    v1: &Cohort,
    v2: &Cohort,
    primary_art: &SetArtifacts,
    files: &BTreeMap<String, Vec<u8>>,
) -> Manifest {
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Manifest {
        tool: ToolInfo {
            name: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            report_schema: REPORT_SCHEMA_VERSION.to_string(),
            cohort_schema: COHORT_SCHEMA_VERSION.to_string(),
        },
        created_unix_epoch_seconds: created,
        seed: config.seed,
        config_hash: config.config_hash(),
        config: serde_json::to_value(config).expect("config serializes"),
        cohort: CohortSummary {
            label: analysis.label.clone(),
            n_ingested: ingested.len(),
            n_excluded: ingested.len() - analysis.len(),
            n_v1: v1.len(),
            n_v2: v2.len(),
            primary_set: primary_art.label.clone(),
            n_primary: primary_art.n,
            n_events_primary: primary_art.n_events,
        },
        files: files
            .iter()
            .map(|(name, bytes)| (name.clone(), sha256_hex(bytes)))
            .collect(),
    }
}

fn write_bundle(
    dir: &Path,
    files: &BTreeMap<String, Vec<u8>>,
    manifest: &Manifest,
) -> Result<(), PipelineError> {
    const STAGE: &str = "report output";
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::from_io(STAGE, e))?;

    let mut manifest_bytes =
        serde_json::to_vec_pretty(manifest).map_err(|e| PipelineError::stage(
            STAGE,
            FailureKind::Data,
            e,
        ))?;
    manifest_bytes.push(b'\n');

    let mut written: Vec<std::path::PathBuf> = Vec::with_capacity(files.len() + 1);
    let write_one = |name: &str, bytes: &[u8], written: &mut Vec<std::path::PathBuf>| {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map(|_| written.push(path))
    };
    let result = files
        .iter()
        .try_for_each(|(name, bytes)| write_one(name, bytes, &mut written))
        .and_then(|_| write_one(FILE_MANIFEST, &manifest_bytes, &mut written));
    if let Err(e) = result {
        for p in &written {
            let _ = std::fs::remove_file(p);
        }
        return Err(PipelineError::from_io(STAGE, e));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::SimulationParams;

    fn small_cohort(n: usize, seed: u64) -> Cohort {
        let params = SimulationParams {
            n_cases: n,
            seed,
            ..SimulationParams::default()
        };
        apply_exclusions(&simulate_cohort(&params).unwrap())
    }

    #[test]
    fn discordance_partitions_each_grade_stratum() {
        let ai = [1u8, 2, 3, 3, 4, 5, 1, 2];
        let gg = [1u8, 1, 3, 4, 4, 4, 2, 2];
        let times = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let events = [true, false, true, false, true, false, false, true];
        let rows = discordance_survival(&ai, &gg, &times, &events, 10.0).unwrap();
        assert_eq!(rows.len(), 20);
        for g in 1u8..=5 {
            let of = |d: &str| {
                rows.iter()
                    .find(|r| r.gg == g && r.direction == d)
                    .unwrap()
                    .n
            };
            assert_eq!(of("all"), of("lower") + of("same") + of("higher"));
        }
        // grade 1 cannot have a lower AI group
        let g1_lower = rows
            .iter()
            .find(|r| r.gg == 1 && r.direction == "lower")
            .unwrap();
        assert_eq!(g1_lower.n, 0);
        assert_eq!(g1_lower.survival_10y, None);
        assert_eq!(g1_lower.note, "no cases in stratum");
        // grade 5 cannot have a higher AI group
        let g5 = rows
            .iter()
            .find(|r| r.gg == 5 && r.direction == "higher")
            .unwrap();
        assert!(g5.survival_10y.is_none());
    }

    #[test]
    fn discordance_zero_event_stratum_reports_unity() {
        // gg=2 "same" stratum: two censored cases only
        let ai = [2u8, 2];
        let gg = [2u8, 2];
        let times = [12.0, 15.0];
        let events = [false, false];
        let rows = discordance_survival(&ai, &gg, &times, &events, 10.0).unwrap();
        let r = rows
            .iter()
            .find(|r| r.gg == 2 && r.direction == "same")
            .unwrap();
        assert_eq!(
            (r.survival_10y, r.ci_lower, r.ci_upper),
            (Some(1.0), Some(1.0), Some(1.0))
        );
    }

    #[test]
    fn discordance_rejects_mismatched_inputs() {
        let err = discordance_survival(&[1], &[1, 2], &[1.0], &[true], 10.0).unwrap_err();
        assert!(matches!(err, PipelineError::InvalidInput(_)));
        assert_eq!(err.exit_code(), 3);
        assert!(discordance_survival(&[9], &[1], &[1.0], &[true], 10.0).is_err());
        assert!(discordance_survival(&[1], &[1], &[1.0], &[true], 0.0).is_err());
    }

    #[test]
    fn substratify_records_one_sided_strata() {
        let cohort = small_cohort(300, 5);
        // every case in groups 1-2: the per-grade tests must all be skipped
        let ai = vec![1u8; cohort.len()];
        let results = substratify_km(&cohort, &ai, Within::PathologistGg, Outcome::Dss, ALPHA)
            .unwrap();
        assert!(!results.is_empty());
        for r in &results {
            assert!(r.logrank.is_none());
            if r.sides.is_empty() {
                assert_eq!(r.note, "empty stratum");
            } else {
                assert!(r.note.contains("AI groups 1-2"), "note: {}", r.note);
                assert!(r.sides[0].name.ends_with("_ai12"));
            }
        }
    }

    #[test]
    fn substratify_tstage_runs_both_sides() {
        let cohort = small_cohort(400, 6);
        // alternate group labels so both sides of each stage stratum are
        // populated
        let ai: Vec<u8> = (0..cohort.len()).map(|i| if i % 2 == 0 { 2 } else { 4 }).collect();
        let results =
            substratify_km(&cohort, &ai, Within::TStage, Outcome::Dss, ALPHA).unwrap();
        assert_eq!(results.len(), 2);
        assert_eq!(results[0].stratum, "t2");
        assert_eq!(results[1].stratum, "t34");
        for r in &results {
            assert_eq!(r.sides.len(), 2);
            let n_total: usize = r.sides.iter().map(|s| s.n).sum();
            assert!(n_total > 0);
            // a two-sided stratum either ran the test or recorded why not
            assert!(r.logrank.is_some() || !r.note.is_empty());
        }
        let n_staged: usize = results.iter().flat_map(|r| &r.sides).map(|s| s.n).sum();
        assert_eq!(n_staged, cohort.len(), "every staged case lands in one side");
    }

    #[test]
    fn pipeline_smoke_run_emits_every_section() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = RunConfig::default_synthetic(11, dir.path());
        config.input = InputSource::Simulation(SimulationParams {
            n_cases: 320,
            seed: 5,
            ..SimulationParams::default()
        });
        config.bootstrap_resamples = 120;
        let bundle = run_pipeline(&config).unwrap();

        assert_eq!(bundle.table2.len(), 8);
        assert_eq!(bundle.table2_differences.len(), 12);
        // v1 never reports pathologist-based rows
        for row in bundle.table2.iter().filter(|r| r.validation_set == "v1") {
            match row.method.as_str() {
                "pathologist_gg" | "ensemble" => {
                    assert!(row.c_index.is_none());
                    assert_eq!(row.note, NOTE_V1_NO_GRADES);
                }
                _ => assert!(row.c_index.is_some(), "{} row empty", row.method),
            }
        }
        // v2 reports all four
        for row in bundle.table2.iter().filter(|r| r.validation_set == "v2") {
            assert!(row.c_index.is_some(), "{} row empty: {}", row.method, row.note);
            let (lo, hi) = (row.ci_lower.unwrap(), row.ci_upper.unwrap());
            assert!(lo <= hi);
        }
        assert_eq!(bundle.hr_univariable.len(), 10);
        assert_eq!(bundle.hr_per_pattern.len(), 2);
        assert!(!bundle.hr_multivariable.is_empty());
        assert_eq!(bundle.discordance10y.len(), 20);
        assert!(bundle.km_curves.iter().any(|k| k.stratum == "ai_group1"));
        assert!(bundle.logrank.iter().any(|l| l.comparison == "ai_groups_overall"));
        assert_eq!(bundle.sensitivity_years.len(), 2); // 1995 and 2000
        assert_eq!(bundle.sensitivity_discretization.len(), 3);

        // every rendered file exists on disk and matches its manifest hash
        for (name, hash) in &bundle.manifest.files {
            let bytes = std::fs::read(dir.path().join(name)).unwrap();
            assert_eq!(&sha256_hex(&bytes), hash, "hash mismatch for {name}");
        }
        assert!(dir.path().join(FILE_MANIFEST).is_file());
    }

    #[test]
    fn pipeline_rerun_is_deterministic() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let make = |out: &std::path::Path| {
            let mut config = RunConfig::default_synthetic(3, out);
            config.input = InputSource::Simulation(SimulationParams {
                n_cases: 260,
                seed: 8,
                ..SimulationParams::default()
            });
            config.bootstrap_resamples = 80;
            config
        };
        let a = run_pipeline(&make(dir_a.path())).unwrap();
        let b = run_pipeline(&make(dir_b.path())).unwrap();
        assert_eq!(a.manifest.config_hash, b.manifest.config_hash);
        assert_eq!(a.manifest.files, b.manifest.files);
        for name in a.manifest.files.keys() {
            let bytes_a = std::fs::read(dir_a.path().join(name)).unwrap();
            let bytes_b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(bytes_a, bytes_b, "{name} differs between reruns");
        }
    }

    #[test]
    fn temporal_primary_on_v1_is_a_config_error() {
        let mut config = RunConfig::default_synthetic(1, "unused");
        config.discretization = RiskMethod::TemporalSplit;
        config.validation_set = ValidationSet::V1;
        let err = run_pipeline(&config).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_input_file_is_a_config_error() {
        let mut config = RunConfig::default_synthetic(1, "unused");
        config.input = InputSource::CohortFile("does-not-exist.csv".into());
        let err = run_pipeline(&config).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn failure_kinds_map_to_exit_codes() {
        assert_eq!(FailureKind::Config.exit_code(), 2);
        assert_eq!(FailureKind::Data.exit_code(), 3);
        assert_eq!(FailureKind::Numeric.exit_code(), 4);
        let e = PipelineError::from_cox(
            "fit",
            CoxError::Separation {
                column: 0,
                beta: 60.0,
                bound: 50.0,
            },
        );
        assert_eq!(e.exit_code(), 4);
        assert_eq!(PipelineError::from_io("x", std::io::Error::other("io")).exit_code(), 3);
    }
}
