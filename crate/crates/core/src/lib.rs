//! Survival-analysis toolkit for pattern-based cancer risk scoring.
//!
//! The crate covers the full path from raw inputs to an evaluated risk model:
//!
//! - [`cohort`]: case records, CSV ingestion, exclusion rules, validation-set
//!   selection, and a seeded synthetic-cohort simulator.
//! - [`patchagg`]: aggregation of per-patch classifier output into case-level
//!   growth-pattern percentages (tissue masking, re-weighted argmax, pooling).
//! - [`survstats`]: Kaplan-Meier estimation with Greenwood / log-log
//!   confidence bands and the k-sample log-rank test.
//! - [`coxph`]: Cox proportional-hazards regression (Efron or Breslow ties,
//!   optional L2 penalty, damped Newton) with Wald hazard-ratio summaries.
//! - [`concordance`]: Harrell's concordance index for right-censored data.
//! - [`riskmodel`]: leave-one-out and temporal-split risk scores,
//!   frequency-matched discretization, rule-based grade mapping, ensembles.
//! - [`inference`]: seed-deterministic percentile bootstrap for single
//!   metrics and paired differences.
//! - [`pipeline`]: configuration, the end-to-end run, and the report bundle.
//!
//! # Example
//!
//! ```
//! use survrisk::concordance::c_index;
//!
//! let scores = [2.0, 1.0, 0.5];
//! let times = [1.0, 2.0, 3.0];
//! let events = [true, true, true];
//! let r = c_index(&scores, &times, &events).unwrap();
//! assert_eq!(r.c_index, 1.0);
//! ```

pub mod cohort;
pub mod concordance;
pub mod coxph;
pub mod inference;
pub mod patchagg;
pub mod pipeline;
pub mod riskmodel;
pub mod survstats;

mod util;

pub use cohort::{Case, Cohort, Outcome, SimulationParams};
pub use concordance::{c_index, ConcordanceResult};
pub use coxph::{fit_cox, CoxFit, FitOptions, TiesMethod};
pub use pipeline::{run_pipeline, PipelineError, ReportBundle, RunConfig};
pub use riskmodel::{rule_based_gg, RiskAssignment};
pub use survstats::{kaplan_meier, logrank, SurvivalCurve};
