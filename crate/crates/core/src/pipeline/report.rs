//! The report bundle: typed rows for every section, CSV rendering, and the
//! JSON manifest.
//!
//! Every section renders to a fixed header documented by the constants
//! below. Cells that cannot be computed stay empty and carry their reason
//! in the `note` column; rows are never silently dropped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::riskmodel::{write_assignments_csv, RiskAssignment};
use crate::survstats::{write_km_csv, SurvivalCurve};

use super::PipelineError;

pub const FILE_TABLE2: &str = "table2.csv";
pub const FILE_TABLE2_DIFFS: &str = "table2_differences.csv";
pub const FILE_HR_UNIVARIABLE: &str = "hr_univariable.csv";
pub const FILE_HR_PER_PATTERN: &str = "hr_per_pattern.csv";
pub const FILE_HR_MULTIVARIABLE: &str = "hr_multivariable.csv";
pub const FILE_DISCORDANCE: &str = "discordance10y.csv";
pub const FILE_LOGRANK: &str = "logrank.csv";
pub const FILE_SENS_YEARS: &str = "sensitivity_years.csv";
pub const FILE_SENS_DISCRETIZATION: &str = "sensitivity_discretization.csv";
pub const FILE_MANIFEST: &str = "manifest.json";

pub const TABLE2_HEADER: [&str; 8] = [
    "validation_set",
    "method",
    "n",
    "n_events",
    "c_index",
    "ci_lower",
    "ci_upper",
    "note",
];
pub const TABLE2_DIFFS_HEADER: [&str; 8] = [
    "validation_set",
    "method_a",
    "method_b",
    "n",
    "diff",
    "ci_lower",
    "ci_upper",
    "note",
];
pub const HR_HEADER: [&str; 9] = [
    "model",
    "term",
    "n",
    "n_events",
    "hr",
    "ci_lower",
    "ci_upper",
    "p_value",
    "note",
];
pub const PER_PATTERN_HEADER: [&str; 8] = [
    "covariate",
    "per_points",
    "n",
    "n_events",
    "hr",
    "ci_lower",
    "ci_upper",
    "p_value",
];
pub const DISCORDANCE_HEADER: [&str; 8] = [
    "gg",
    "direction",
    "n",
    "n_events",
    "survival_10y",
    "ci_lower",
    "ci_upper",
    "note",
];
pub const LOGRANK_HEADER: [&str; 6] =
    ["comparison", "n_groups", "chi2", "df", "p_value", "note"];
pub const SENS_YEARS_HEADER: [&str; 10] = [
    "min_year",
    "n",
    "n_events",
    "continuous_c",
    "continuous_ci_lower",
    "continuous_ci_upper",
    "groups_c",
    "groups_ci_lower",
    "groups_ci_upper",
    "note",
];
pub const SENS_METHOD_HEADER: [&str; 7] = [
    "method",
    "n",
    "n_events",
    "c_index",
    "ci_lower",
    "ci_upper",
    "note",
];

pub fn assignments_file(validation_set: &str) -> String {
    format!("assignments_{validation_set}.csv")
}

pub fn km_file(stratum: &str) -> String {
    format!("{stratum}.km.csv")
}

/// One discrimination row of the score-comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct Table2Row {
    pub validation_set: String,
    pub method: String,
    pub n: usize,
    pub n_events: usize,
    pub c_index: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub note: String,
}

/// Paired-bootstrap difference between two rows of the same set.
#[derive(Debug, Clone, Serialize)]
pub struct Table2DiffRow {
    pub validation_set: String,
    pub method_a: String,
    pub method_b: String,
    pub n: usize,
    pub diff: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub note: String,
}

/// One term of a grouped or adjusted hazard-ratio model.
#[derive(Debug, Clone, Serialize)]
pub struct HrRow {
    pub model: String,
    pub term: String,
    /// Cases carrying this term (group size; the full model n for
    /// continuous terms).
    pub n: usize,
    pub n_events: usize,
    pub hr: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub p_value: Option<f64>,
    pub note: String,
}

/// Per-pattern hazard ratio from the joint continuous model.
#[derive(Debug, Clone, Serialize)]
pub struct PerPatternRow {
    pub covariate: String,
    pub per_points: f64,
    pub n: usize,
    pub n_events: usize,
    pub hr: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
}

/// Ten-year survival for one (grade, discordance-direction) stratum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscordanceRow {
    pub gg: u8,
    /// `all`, `lower`, `same`, or `higher` (AI group relative to grade).
    pub direction: String,
    pub n: usize,
    pub n_events: usize,
    pub survival_10y: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub note: String,
}

/// A named Kaplan-Meier stratum destined for `<stratum>.km.csv`.
#[derive(Debug, Clone)]
pub struct KmStratum {
    pub stratum: String,
    pub n: usize,
    pub n_events: usize,
    pub curve: SurvivalCurve,
}

/// One log-rank comparison (or its recorded skip).
#[derive(Debug, Clone, Serialize)]
pub struct LogrankRow {
    pub comparison: String,
    pub n_groups: usize,
    pub chi2: Option<f64>,
    pub df: Option<usize>,
    pub p_value: Option<f64>,
    pub note: String,
}

/// Year-range sensitivity row.
#[derive(Debug, Clone, Serialize)]
pub struct YearSensitivityRow {
    pub min_year: i32,
    pub n: usize,
    pub n_events: usize,
    pub continuous_c: Option<f64>,
    pub continuous_ci_lower: Option<f64>,
    pub continuous_ci_upper: Option<f64>,
    pub groups_c: Option<f64>,
    pub groups_ci_lower: Option<f64>,
    pub groups_ci_upper: Option<f64>,
    pub note: String,
}

/// Discretization-method sensitivity row.
#[derive(Debug, Clone, Serialize)]
pub struct MethodSensitivityRow {
    pub method: String,
    pub n: usize,
    pub n_events: usize,
    pub c_index: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub note: String,
}

/// Cohort bookkeeping recorded in the manifest.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CohortSummary {
    pub label: String,
    pub n_ingested: usize,
    pub n_excluded: usize,
    pub n_v1: usize,
    pub n_v2: usize,
    pub primary_set: String,
    pub n_primary: usize,
    pub n_events_primary: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
    pub report_schema: String,
    pub cohort_schema: String,
}

/// Reproducibility record: seed, config hash, versions, and a SHA-256 per
/// emitted file. The creation timestamp is the only field that differs
/// between byte-identical reruns.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: ToolInfo,
    pub created_unix_epoch_seconds: u64,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub cohort: CohortSummary,
    /// Relative path -> SHA-256 of the file contents.
    pub files: BTreeMap<String, String>,
}

/// Everything a run produces, before it is written to the output
/// directory.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub table2: Vec<Table2Row>,
    pub table2_differences: Vec<Table2DiffRow>,
    pub hr_univariable: Vec<HrRow>,
    pub hr_per_pattern: Vec<PerPatternRow>,
    pub hr_multivariable: Vec<HrRow>,
    pub discordance10y: Vec<DiscordanceRow>,
    pub km_curves: Vec<KmStratum>,
    pub logrank: Vec<LogrankRow>,
    pub sensitivity_years: Vec<YearSensitivityRow>,
    pub sensitivity_discretization: Vec<MethodSensitivityRow>,
    /// Per-set assignment exports, `(set label, rows)`.
    pub assignments: Vec<(String, Vec<RiskAssignment>)>,
    pub manifest: Manifest,
}

fn num<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes<F>(header: &[&str], write_rows: F) -> Result<Vec<u8>, PipelineError>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<(), csv::Error>,
{
    let mut buf = Vec::new();
    let render = |buf: &mut Vec<u8>| -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(header)?;
        write_rows(&mut w)?;
        w.flush()?;
        Ok(())
    };
    render(&mut buf).map_err(|e| PipelineError::Stage {
        stage: "report rendering".into(),
        kind: super::FailureKind::Data,
        cause: e.to_string(),
    })?;
    Ok(buf)
}

impl ReportBundle {
    /// Renders every section except the manifest to bytes, keyed by the
    /// relative file name.
    pub fn render_files(&self) -> Result<BTreeMap<String, Vec<u8>>, PipelineError> {
        let mut files = BTreeMap::new();

        files.insert(
            FILE_TABLE2.to_string(),
            csv_bytes(&TABLE2_HEADER, |w| {
                for r in &self.table2 {
                    w.write_record([
                        r.validation_set.clone(),
                        r.method.clone(),
                        r.n.to_string(),
                        r.n_events.to_string(),
                        num(r.c_index),
                        num(r.ci_lower),
                        num(r.ci_upper),
                        r.note.clone(),
                    ])?;
                }
                Ok(())
            })?,
        );

        files.insert(
            FILE_TABLE2_DIFFS.to_string(),
            csv_bytes(&TABLE2_DIFFS_HEADER, |w| {
                for r in &self.table2_differences {
                    w.write_record([
                        r.validation_set.clone(),
                        r.method_a.clone(),
                        r.method_b.clone(),
                        r.n.to_string(),
                        num(r.diff),
                        num(r.ci_lower),
                        num(r.ci_upper),
                        r.note.clone(),
                    ])?;
                }
                Ok(())
            })?,
        );

        for (name, rows) in [
            (FILE_HR_UNIVARIABLE, &self.hr_univariable),
            (FILE_HR_MULTIVARIABLE, &self.hr_multivariable),
        ] {
            files.insert(
                name.to_string(),
                csv_bytes(&HR_HEADER, |w| {
                    for r in rows {
                        w.write_record([
                            r.model.clone(),
                            r.term.clone(),
                            r.n.to_string(),
                            r.n_events.to_string(),
                            num(r.hr),
                            num(r.ci_lower),
                            num(r.ci_upper),
                            num(r.p_value),
                            r.note.clone(),
                        ])?;
                    }
                    Ok(())
                })?,
            );
        }

        files.insert(
            FILE_HR_PER_PATTERN.to_string(),
            csv_bytes(&PER_PATTERN_HEADER, |w| {
                for r in &self.hr_per_pattern {
                    w.write_record([
                        r.covariate.clone(),
                        r.per_points.to_string(),
                        r.n.to_string(),
                        r.n_events.to_string(),
                        r.hr.to_string(),
                        r.ci_lower.to_string(),
                        r.ci_upper.to_string(),
                        r.p_value.to_string(),
                    ])?;
                }
                Ok(())
            })?,
        );

        files.insert(
            FILE_DISCORDANCE.to_string(),
            csv_bytes(&DISCORDANCE_HEADER, |w| {
                for r in &self.discordance10y {
                    w.write_record([
                        r.gg.to_string(),
                        r.direction.clone(),
                        r.n.to_string(),
                        r.n_events.to_string(),
                        num(r.survival_10y),
                        num(r.ci_lower),
                        num(r.ci_upper),
                        r.note.clone(),
                    ])?;
                }
                Ok(())
            })?,
        );

        files.insert(
            FILE_LOGRANK.to_string(),
            csv_bytes(&LOGRANK_HEADER, |w| {
                for r in &self.logrank {
                    w.write_record([
                        r.comparison.clone(),
                        r.n_groups.to_string(),
                        num(r.chi2),
                        num(r.df),
                        num(r.p_value),
                        r.note.clone(),
                    ])?;
                }
                Ok(())
            })?,
        );

        files.insert(
            FILE_SENS_YEARS.to_string(),
            csv_bytes(&SENS_YEARS_HEADER, |w| {
                for r in &self.sensitivity_years {
                    w.write_record([
                        r.min_year.to_string(),
                        r.n.to_string(),
                        r.n_events.to_string(),
                        num(r.continuous_c),
                        num(r.continuous_ci_lower),
                        num(r.continuous_ci_upper),
                        num(r.groups_c),
                        num(r.groups_ci_lower),
                        num(r.groups_ci_upper),
                        r.note.clone(),
                    ])?;
                }
                Ok(())
            })?,
        );

        files.insert(
            FILE_SENS_DISCRETIZATION.to_string(),
            csv_bytes(&SENS_METHOD_HEADER, |w| {
                for r in &self.sensitivity_discretization {
                    w.write_record([
                        r.method.clone(),
                        r.n.to_string(),
                        r.n_events.to_string(),
                        num(r.c_index),
                        num(r.ci_lower),
                        num(r.ci_upper),
                        r.note.clone(),
                    ])?;
                }
                Ok(())
            })?,
        );

        for (set, rows) in &self.assignments {
            let mut buf = Vec::new();
            write_assignments_csv(rows, &mut buf).map_err(|e| PipelineError::Stage {
                stage: "report rendering".into(),
                kind: super::FailureKind::Data,
                cause: e.to_string(),
            })?;
            files.insert(assignments_file(set), buf);
        }

        for stratum in &self.km_curves {
            let mut buf = Vec::new();
            write_km_csv(&stratum.curve, &mut buf).map_err(|e| PipelineError::Stage {
                stage: "report rendering".into(),
                kind: super::FailureKind::Data,
                cause: e.to_string(),
            })?;
            files.insert(km_file(&stratum.stratum), buf);
        }

        Ok(files)
    }
}

/// Hex SHA-256, as recorded in [`Manifest::files`].
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
