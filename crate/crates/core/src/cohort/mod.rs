//! Case/cohort data model, CSV ingestion, exclusion criteria, and
//! validation-set selection.
//!
//! A cohort file is a UTF-8 CSV with the exact header
//! `case_id,surgery_year,pct_gp3,pct_gp4,pct_gp5,tumor_present,gg,t_category,followup_years,dss_event,os_event`.
//! Booleans are written as `0`/`1`; optional fields (`gg`, `t_category`,
//! `os_event`) are empty when missing. A JSON sidecar (`<file>.meta.json`)
//! carries the cohort label and the exclusion log so that saving and
//! re-loading is a fixed point.

mod simulate;

pub use simulate::{simulate_cohort, SimulationParams};

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const COHORT_SCHEMA_VERSION: &str = "1";

pub const COHORT_HEADER: [&str; 11] = [
    "case_id",
    "surgery_year",
    "pct_gp3",
    "pct_gp4",
    "pct_gp5",
    "tumor_present",
    "gg",
    "t_category",
    "followup_years",
    "dss_event",
    "os_event",
];

/// Tolerance on `pct_gp3 + pct_gp4 + pct_gp5 = 100` for tumor-bearing cases.
pub const PATTERN_SUM_TOLERANCE: f64 = 1e-6;

/// Follow-up cutoff (in years) below which an observed death counts as a
/// perioperative death: 30 days on the astronomical-year convention.
pub const EARLY_DEATH_YEARS: f64 = 30.0 / 365.25;

pub const REASON_EARLY_DEATH: &str = "death within 30 days";
pub const REASON_NO_TUMOR: &str = "no tumor";

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("sidecar error: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error("unsupported cohort schema version {requested:?} (supported: {supported})")]
    UnsupportedSchemaVersion {
        requested: String,
        supported: &'static str,
    },
    #[error("header mismatch: expected {expected:?}, got {got:?}")]
    HeaderMismatch { expected: String, got: String },
    #[error("duplicate case_id {0:?}")]
    DuplicateCaseId(String),
    #[error("all {n_rows} data rows were rejected; first reason: {first_reason}")]
    AllRowsRejected { n_rows: usize, first_reason: String },
    #[error("cohort file has no data rows")]
    EmptyFile,
    #[error("case {case_id} has no recorded outcome for endpoint {endpoint}")]
    MissingOutcome { case_id: String, endpoint: Outcome },
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
}

/// Pathologic tumor-extent category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TCategory {
    T2,
    T3,
    T4,
}

impl TCategory {
    /// The dichotomy used by the stratified analyses: T3-T4 vs the rest.
    pub fn is_high(self) -> bool {
        !matches!(self, TCategory::T2)
    }
}

impl fmt::Display for TCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TCategory::T2 => write!(f, "T2"),
            TCategory::T3 => write!(f, "T3"),
            TCategory::T4 => write!(f, "T4"),
        }
    }
}

impl FromStr for TCategory {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "T2" => Ok(TCategory::T2),
            "T3" => Ok(TCategory::T3),
            "T4" => Ok(TCategory::T4),
            other => Err(format!("unknown t_category {other:?}")),
        }
    }
}

/// Survival endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    /// Disease-specific survival (deaths from the disease; others censored).
    Dss,
    /// Overall survival (death from any cause).
    Os,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Dss => write!(f, "dss"),
            Outcome::Os => write!(f, "os"),
        }
    }
}

impl FromStr for Outcome {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dss" => Ok(Outcome::Dss),
            "os" => Ok(Outcome::Os),
            other => Err(format!("unknown outcome {other:?} (expected dss or os)")),
        }
    }
}

/// One prostatectomy case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: String,
    pub surgery_year: i32,
    /// Percentage of tumor patches per Gleason pattern, in [0,100].
    pub pct_gp3: f64,
    pub pct_gp4: f64,
    pub pct_gp5: f64,
    pub tumor_present: bool,
    /// Pathologist Grade Group 1-5 when available.
    pub pathologist_gg: Option<u8>,
    pub t_category: Option<TCategory>,
    pub followup_years: f64,
    pub dss_event: bool,
    pub os_event: Option<bool>,
}

impl Case {
    /// Checks the documented invariants, returning the first violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.case_id.is_empty() {
            return Err("empty case_id".into());
        }
        for (name, v) in [
            ("pct_gp3", self.pct_gp3),
            ("pct_gp4", self.pct_gp4),
            ("pct_gp5", self.pct_gp5),
        ] {
            if !(v.is_finite() && (0.0..=100.0).contains(&v)) {
                return Err(format!("invalid percentage: {name} = {v}"));
            }
        }
        let sum = self.pct_gp3 + self.pct_gp4 + self.pct_gp5;
        if self.tumor_present {
            if (sum - 100.0).abs() > PATTERN_SUM_TOLERANCE {
                return Err("pattern sum violation".into());
            }
        } else if sum != 0.0 {
            return Err("pattern data for tumor-free case".into());
        }
        if !(self.followup_years.is_finite() && self.followup_years > 0.0) {
            return Err(format!("invalid followup: {}", self.followup_years));
        }
        if let Some(gg) = self.pathologist_gg {
            if !(1..=5).contains(&gg) {
                return Err(format!("invalid grade group: {gg}"));
            }
        }
        if self.dss_event && self.os_event == Some(false) {
            return Err("event consistency violation: dss_event without os_event".into());
        }
        Ok(())
    }

    /// Follow-up time and event indicator for the given endpoint; `None`
    /// when the endpoint was not recorded for this case.
    pub fn outcome(&self, endpoint: Outcome) -> Option<(f64, bool)> {
        match endpoint {
            Outcome::Dss => Some((self.followup_years, self.dss_event)),
            Outcome::Os => self.os_event.map(|e| (self.followup_years, e)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionRecord {
    pub case_id: String,
    pub reason: String,
}

/// An ordered, immutable collection of cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    cases: Vec<Case>,
    pub label: String,
    pub exclusion_log: Vec<ExclusionRecord>,
}

impl Cohort {
    /// Builds a cohort from cases, sorting by case_id and rejecting
    /// duplicates.
    pub fn new(
        mut cases: Vec<Case>,
        label: impl Into<String>,
        exclusion_log: Vec<ExclusionRecord>,
    ) -> Result<Self, CohortError> {
        cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        for w in cases.windows(2) {
            if w[0].case_id == w[1].case_id {
                return Err(CohortError::DuplicateCaseId(w[0].case_id.clone()));
            }
        }
        Ok(Cohort {
            cases,
            label: label.into(),
            exclusion_log,
        })
    }

    pub fn cases(&self) -> &[Case] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Follow-up times and event indicators for every case, in cohort order.
    pub fn times_events(&self, endpoint: Outcome) -> Result<(Vec<f64>, Vec<bool>), CohortError> {
        let mut times = Vec::with_capacity(self.len());
        let mut events = Vec::with_capacity(self.len());
        for c in &self.cases {
            let (t, e) = c.outcome(endpoint).ok_or_else(|| CohortError::MissingOutcome {
                case_id: c.case_id.clone(),
                endpoint,
            })?;
            times.push(t);
            events.push(e);
        }
        Ok((times, events))
    }

    /// Number of observed events for the given endpoint (missing outcomes
    /// count as censored).
    pub fn n_events(&self, endpoint: Outcome) -> usize {
        self.cases
            .iter()
            .filter(|c| matches!(c.outcome(endpoint), Some((_, true))))
            .count()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    schema_version: String,
    label: String,
    exclusion_log: Vec<ExclusionRecord>,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta.json");
    std::path::PathBuf::from(os)
}

fn parse_bool01(s: &str) -> Result<bool, String> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("invalid boolean {other:?} (expected 0 or 1)")),
    }
}

fn parse_row(record: &csv::StringRecord) -> Result<Case, String> {
    if record.len() != COHORT_HEADER.len() {
        return Err(format!(
            "expected {} fields, got {}",
            COHORT_HEADER.len(),
            record.len()
        ));
    }
    let field = |i: usize| record.get(i).unwrap_or("").trim();
    let case_id = field(0).to_string();
    if case_id.is_empty() {
        return Err("missing required field case_id".into());
    }
    let surgery_year: i32 = field(1)
        .parse()
        .map_err(|_| format!("invalid year {:?}", field(1)))?;
    let mut pcts = [0.0_f64; 3];
    for (k, p) in pcts.iter_mut().enumerate() {
        let raw = field(2 + k);
        *p = raw
            .parse::<f64>()
            .map_err(|_| format!("invalid percentage {raw:?}"))?;
    }
    let tumor_present = parse_bool01(field(5))?;
    let gg = match field(6) {
        "" => None,
        raw => Some(
            raw.parse::<u8>()
                .map_err(|_| format!("invalid grade group {raw:?}"))?,
        ),
    };
    let t_category = match field(7) {
        "" => None,
        raw => Some(raw.parse::<TCategory>()?),
    };
    let followup_years: f64 = field(8)
        .parse()
        .map_err(|_| format!("invalid followup {:?}", field(8)))?;
    let dss_event = parse_bool01(field(9))?;
    let os_event = match field(10) {
        "" => None,
        raw => Some(parse_bool01(raw)?),
    };
    let case = Case {
        case_id,
        surgery_year,
        pct_gp3: pcts[0],
        pct_gp4: pcts[1],
        pct_gp5: pcts[2],
        tumor_present,
        pathologist_gg: gg,
        t_category,
        followup_years,
        dss_event,
        os_event,
    };
    case.validate()?;
    Ok(case)
}

/// Loads a cohort CSV (plus its JSON sidecar when present).
///
/// Malformed rows are rejected individually and recorded in the exclusion
/// log with a row-level reason; the load only fails outright when the header
/// does not match, a case_id repeats, or every row is rejected.
pub fn load_cohort(path: impl AsRef<Path>, schema_version: &str) -> Result<Cohort, CohortError> {
    let path = path.as_ref();
    if schema_version != COHORT_SCHEMA_VERSION {
        return Err(CohortError::UnsupportedSchemaVersion {
            requested: schema_version.to_string(),
            supported: COHORT_SCHEMA_VERSION,
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    {
        let got = reader.headers()?;
        let got_vec: Vec<&str> = got.iter().map(str::trim).collect();
        if got_vec != COHORT_HEADER {
            return Err(CohortError::HeaderMismatch {
                expected: COHORT_HEADER.join(","),
                got: got_vec.join(","),
            });
        }
    }
    let mut cases = Vec::new();
    let mut rejects: Vec<ExclusionRecord> = Vec::new();
    let mut n_rows = 0usize;
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec?;
        n_rows += 1;
        match parse_row(&rec) {
            Ok(case) => cases.push(case),
            Err(reason) => {
                let id = rec
                    .get(0)
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .unwrap_or_else(|| format!("row {}", idx + 2));
                rejects.push(ExclusionRecord {
                    case_id: id,
                    reason,
                });
            }
        }
    }
    if n_rows == 0 {
        return Err(CohortError::EmptyFile);
    }
    if cases.is_empty() {
        return Err(CohortError::AllRowsRejected {
            n_rows,
            first_reason: rejects
                .first()
                .map(|r| r.reason.clone())
                .unwrap_or_default(),
        });
    }

    let (label, mut log) = match std::fs::read(sidecar_path(path)) {
        Ok(bytes) => {
            let sc: Sidecar = serde_json::from_slice(&bytes)?;
            if sc.schema_version != COHORT_SCHEMA_VERSION {
                return Err(CohortError::UnsupportedSchemaVersion {
                    requested: sc.schema_version,
                    supported: COHORT_SCHEMA_VERSION,
                });
            }
            (sc.label, sc.exclusion_log)
        }
        Err(_) => (
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "cohort".to_string()),
            Vec::new(),
        ),
    };
    log.extend(rejects);
    Cohort::new(cases, label, log)
}

fn format_f64(v: f64) -> String {
    // Display round-trips f64 exactly (shortest representation)
    format!("{v}")
}

/// Writes the cohort CSV to `w` (header plus one row per case).
pub fn write_cohort_csv<W: Write>(cohort: &Cohort, w: W) -> Result<(), CohortError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(COHORT_HEADER)?;
    for c in cohort.cases() {
        wtr.write_record([
            c.case_id.as_str(),
            &c.surgery_year.to_string(),
            &format_f64(c.pct_gp3),
            &format_f64(c.pct_gp4),
            &format_f64(c.pct_gp5),
            if c.tumor_present { "1" } else { "0" },
            &c.pathologist_gg.map(|g| g.to_string()).unwrap_or_default(),
            &c.t_category.map(|t| t.to_string()).unwrap_or_default(),
            &format_f64(c.followup_years),
            if c.dss_event { "1" } else { "0" },
            &c.os_event
                .map(|e| if e { "1" } else { "0" })
                .unwrap_or("")
                .to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Saves the cohort CSV and its JSON sidecar next to it.
pub fn save_cohort(cohort: &Cohort, path: impl AsRef<Path>) -> Result<(), CohortError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path)?;
    write_cohort_csv(cohort, file)?;
    let sc = Sidecar {
        schema_version: COHORT_SCHEMA_VERSION.to_string(),
        label: cohort.label.clone(),
        exclusion_log: cohort.exclusion_log.clone(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sc)?)?;
    Ok(())
}

/// Removes perioperative deaths (observed death with follow-up under 30
/// days) and tumor-free cases, logging each removal. Idempotent.
pub fn apply_exclusions(cohort: &Cohort) -> Cohort {
    let mut kept = Vec::with_capacity(cohort.len());
    let mut log = cohort.exclusion_log.clone();
    for c in cohort.cases() {
        let death_observed = c.dss_event || c.os_event == Some(true);
        if c.followup_years < EARLY_DEATH_YEARS && death_observed {
            log.push(ExclusionRecord {
                case_id: c.case_id.clone(),
                reason: REASON_EARLY_DEATH.to_string(),
            });
        } else if !c.tumor_present {
            log.push(ExclusionRecord {
                case_id: c.case_id.clone(),
                reason: REASON_NO_TUMOR.to_string(),
            });
        } else {
            kept.push(c.clone());
        }
    }
    Cohort {
        cases: kept,
        label: cohort.label.clone(),
        exclusion_log: log,
    }
}

/// Validation-set selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidationSet {
    /// The full cohort.
    V1,
    /// Cases from `min_year` (default 2000) onwards with a pathologist
    /// grade available.
    V2,
}

impl fmt::Display for ValidationSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationSet::V1 => write!(f, "v1"),
            ValidationSet::V2 => write!(f, "v2"),
        }
    }
}

impl FromStr for ValidationSet {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(ValidationSet::V1),
            "v2" => Ok(ValidationSet::V2),
            other => Err(format!("unknown validation set {other:?} (expected v1 or v2)")),
        }
    }
}

pub const DEFAULT_V2_MIN_YEAR: i32 = 2000;

/// V1 returns the cohort unchanged; V2 keeps cases with
/// `surgery_year >= min_year` and a pathologist grade.
pub fn select_validation_set(
    cohort: &Cohort,
    which: ValidationSet,
    min_year: Option<i32>,
) -> Cohort {
    match which {
        ValidationSet::V1 => cohort.clone(),
        ValidationSet::V2 => {
            let min_year = min_year.unwrap_or(DEFAULT_V2_MIN_YEAR);
            Cohort {
                cases: cohort
                    .cases()
                    .iter()
                    .filter(|c| c.surgery_year >= min_year && c.pathologist_gg.is_some())
                    .cloned()
                    .collect(),
                label: cohort.label.clone(),
                exclusion_log: cohort.exclusion_log.clone(),
            }
        }
    }
}
