//! Run configuration: input sources, analysis knobs, the documented
//! key-value config file, and the config hash recorded in the manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::{Outcome, SimulationParams, ValidationSet, DEFAULT_V2_MIN_YEAR};
use crate::inference::DEFAULT_RESAMPLES;
use crate::riskmodel::RiskMethod;

use super::PipelineError;

/// L2 penalty for the grade-plus-stage adjusted model.
pub const DEFAULT_MULTIVARIABLE_RIDGE: f64 = 0.02;

/// Where the analysis cohort comes from. Exactly one source per run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    /// Load a cohort CSV (schema documented on the cohort module).
    CohortFile(PathBuf),
    /// Generate a synthetic cohort.
    Simulation(SimulationParams),
    /// Load a cohort CSV for outcomes, then replace its pattern
    /// percentages with values aggregated from per-patch class grids.
    PatchGrids(PatchGridsInput),
}

/// Paths and aggregation knobs for the patch-grid input source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchGridsInput {
    /// Patch-probability CSV (may hold many slides).
    pub grids: PathBuf,
    /// CSV mapping slide_id to case_id.
    pub slide_manifest: PathBuf,
    /// Cohort CSV supplying outcomes and case metadata.
    pub base_cohort: PathBuf,
    /// Cells with a tissue score below this are masked out. The default 0
    /// keeps every cell.
    #[serde(default)]
    pub tissue_threshold: f64,
    /// Class re-weighting for the argmax, (non-tumor, gp3, gp4, gp5).
    #[serde(default = "uniform_weights")]
    pub class_weights: [f64; 4],
}

fn uniform_weights() -> [f64; 4] {
    [1.0; 4]
}

/// Where the discretization reference histogram comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    /// Pathologist grade counts over the graded validation subset,
    /// rescaled to each cohort the histogram is applied to.
    PathologistCounts,
    /// Fixed counts per group 1-5, rescaled the same way.
    ExplicitCounts([u64; 5]),
}

/// A fully resolved pipeline run. Built from a [`RawConfig`] (config file
/// plus command-line overrides) via [`RunConfig::from_raw`].
///
/// The serialized form deliberately omits the output directory: the config
/// hash identifies the analysis, not where its files land.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub input: InputSource,
    /// The primary analysis set; the score-comparison table always covers
    /// both sets.
    pub validation_set: ValidationSet,
    /// First surgery year admitted to validation set 2.
    pub min_year: i32,
    pub outcome: Outcome,
    /// How the reported risk groups are derived.
    pub discretization: RiskMethod,
    pub reference: ReferenceSource,
    pub bootstrap_resamples: usize,
    /// Seed for every bootstrap interval (per-interval streams are derived
    /// from it; the synthetic cohort has its own seed in `input`).
    pub seed: u64,
    pub ridge: f64,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// The default synthetic run: simulated cohort, validation set 2,
    /// disease-specific survival, LOOCV discretization, pathologist
    /// reference counts.
    pub fn default_synthetic(seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            input: InputSource::Simulation(SimulationParams::default()),
            validation_set: ValidationSet::V2,
            min_year: DEFAULT_V2_MIN_YEAR,
            outcome: Outcome::Dss,
            discretization: RiskMethod::Loocv,
            reference: ReferenceSource::PathologistCounts,
            bootstrap_resamples: DEFAULT_RESAMPLES,
            seed,
            ridge: DEFAULT_MULTIVARIABLE_RIDGE,
            out_dir: out_dir.into(),
        }
    }

    /// SHA-256 over the canonical JSON serialization (output directory
    /// excluded); recorded in the manifest.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Checks invariants that only hold against the filesystem: every
    /// configured input path must exist.
    pub fn validate_paths(&self) -> Result<(), PipelineError> {
        let missing = |what: &str, p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(PipelineError::Config(format!(
                    "{what} {} does not exist or is not a file",
                    p.display()
                )))
            }
        };
        match &self.input {
            InputSource::CohortFile(p) => missing("cohort file", p)?,
            InputSource::Simulation(_) => {}
            InputSource::PatchGrids(pg) => {
                missing("patch grid file", &pg.grids)?;
                missing("slide manifest", &pg.slide_manifest)?;
                missing("base cohort file", &pg.base_cohort)?;
            }
        }
        Ok(())
    }

    pub fn from_raw(raw: RawConfig) -> Result<Self, PipelineError> {
        let cfg = |msg: String| PipelineError::Config(msg);

        let mut sources = 0;
        if raw.cohort_file.is_some() {
            sources += 1;
        }
        if raw.simulation.is_some() {
            sources += 1;
        }
        if raw.patch_grids.is_some() {
            sources += 1;
        }
        if sources > 1 {
            return Err(cfg(
                "more than one input source configured; give exactly one of \
                 cohort_file, [simulation], [patch_grids]"
                    .into(),
            ));
        }
        let input = match (raw.cohort_file, raw.simulation, raw.patch_grids) {
            (Some(p), None, None) => InputSource::CohortFile(p),
            (None, Some(sim), None) => InputSource::Simulation(sim),
            (None, None, Some(pg)) => {
                if !(pg.tissue_threshold.is_finite() && (0.0..=1.0).contains(&pg.tissue_threshold))
                {
                    return Err(cfg(format!(
                        "tissue_threshold must lie in [0, 1], got {}",
                        pg.tissue_threshold
                    )));
                }
                if pg.class_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(cfg(format!(
                        "class_weights must all be positive, got {:?}",
                        pg.class_weights
                    )));
                }
                InputSource::PatchGrids(pg)
            }
            // no source given: default to the synthetic cohort
            (None, None, None) => InputSource::Simulation(SimulationParams::default()),
            _ => unreachable!("more than one source was rejected above"),
        };

        fn parse_named<T>(what: &str, v: Option<String>) -> Result<Option<T>, PipelineError>
        where
            T: std::str::FromStr<Err = String>,
        {
            v.map(|s| {
                s.parse::<T>()
                    .map_err(|e| PipelineError::Config(format!("{what}: {e}")))
            })
            .transpose()
        }
        let validation_set = parse_named("validation_set", raw.validation_set)?
            .unwrap_or(ValidationSet::V2);
        let outcome = parse_named("outcome", raw.outcome)?.unwrap_or(Outcome::Dss);
        let discretization: RiskMethod =
            parse_named("discretization", raw.discretization)?.unwrap_or(RiskMethod::Loocv);
        if discretization == RiskMethod::InSample {
            return Err(cfg(
                "discretization must be loocv, temporal_split, or rule_based; \
                 in_sample scores are for diagnostics only"
                    .into(),
            ));
        }

        let reference = match raw.reference_counts {
            None => ReferenceSource::PathologistCounts,
            Some(counts) => {
                let c: [u64; 5] = counts.clone().try_into().map_err(|_| {
                    cfg(format!(
                        "reference_counts needs exactly 5 entries, got {}",
                        counts.len()
                    ))
                })?;
                if c.iter().sum::<u64>() == 0 {
                    return Err(cfg("reference_counts must not be all zero".into()));
                }
                ReferenceSource::ExplicitCounts(c)
            }
        };

        let bootstrap_resamples = raw.bootstrap_resamples.unwrap_or(DEFAULT_RESAMPLES);
        if bootstrap_resamples == 0 {
            return Err(cfg("bootstrap_resamples must be at least 1".into()));
        }
        let ridge = raw.ridge.unwrap_or(DEFAULT_MULTIVARIABLE_RIDGE);
        if !(ridge.is_finite() && ridge >= 0.0) {
            return Err(cfg(format!("ridge must be finite and nonnegative, got {ridge}")));
        }
        let min_year = raw.min_year.unwrap_or(DEFAULT_V2_MIN_YEAR);

        let seed = raw
            .seed
            .ok_or_else(|| cfg("seed is required (flag --seed or config key seed)".into()))?;
        let out_dir = raw
            .out
            .ok_or_else(|| cfg("output directory is required (flag --out or config key out)".into()))?;

        Ok(RunConfig {
            input,
            validation_set,
            min_year,
            outcome,
            discretization,
            reference,
            bootstrap_resamples,
            seed,
            ridge,
            out_dir,
        })
    }
}

/// The config file as written: a flat TOML key-value document plus up to
/// one input-source table. Every key is optional here so the command line
/// can fill the gaps; [`RunConfig::from_raw`] applies defaults and checks
/// consistency.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub cohort_file: Option<PathBuf>,
    pub simulation: Option<SimulationParams>,
    pub patch_grids: Option<PatchGridsInput>,
    pub validation_set: Option<String>,
    pub min_year: Option<i32>,
    pub outcome: Option<String>,
    pub discretization: Option<String>,
    pub reference_counts: Option<Vec<u64>>,
    pub bootstrap_resamples: Option<usize>,
    pub seed: Option<u64>,
    pub ridge: Option<f64>,
    pub out: Option<PathBuf>,
}

impl RawConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(format!("config file: {e}")))
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }
}

/// Derives an independent bootstrap seed from the run seed and a stable
/// purpose tag, so adding or reordering intervals never shifts the draws
/// of the others.
pub(crate) fn subseed(base: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is wide enough"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolved(text: &str) -> Result<RunConfig, PipelineError> {
        let mut raw = RawConfig::from_toml_str(text)?;
        raw.seed.get_or_insert(1);
        raw.out.get_or_insert_with(|| PathBuf::from("unused"));
        RunConfig::from_raw(raw)
    }

    #[test]
    fn defaults_resolve_to_the_synthetic_run() {
        let cfg = resolved("").unwrap();
        assert!(matches!(cfg.input, InputSource::Simulation(ref p) if p.n_cases == 2807));
        assert_eq!(cfg.validation_set, ValidationSet::V2);
        assert_eq!(cfg.min_year, 2000);
        assert_eq!(cfg.outcome, Outcome::Dss);
        assert_eq!(cfg.discretization, RiskMethod::Loocv);
        assert_eq!(cfg.bootstrap_resamples, 1000);
        assert_eq!(cfg.ridge, 0.02);
    }

    #[test]
    fn partial_simulation_table_fills_from_defaults() {
        let cfg = resolved("[simulation]\nn_cases = 500\nseed = 9\n").unwrap();
        match cfg.input {
            InputSource::Simulation(p) => {
                assert_eq!(p.n_cases, 500);
                assert_eq!(p.seed, 9);
                assert_eq!(p.year_min, 1995);
            }
            other => panic!("expected simulation input, got {other:?}"),
        }
    }

    #[test]
    fn two_input_sources_are_rejected() {
        let err = resolved("cohort_file = \"a.csv\"\n[simulation]\nn_cases = 10\n").unwrap_err();
        assert!(matches!(err, PipelineError::Config(ref m) if m.contains("input source")));
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(matches!(
            resolved("bootstrap_samples = 10\n"),
            Err(PipelineError::Config(_))
        ));
    }

    #[test]
    fn bad_enum_values_are_config_errors() {
        assert!(resolved("validation_set = \"v3\"\n").is_err());
        assert!(resolved("outcome = \"pfs\"\n").is_err());
        assert!(resolved("discretization = \"in_sample\"\n").is_err());
    }

    #[test]
    fn reference_counts_need_five_nonzero_entries() {
        assert!(resolved("reference_counts = [1, 2, 3]\n").is_err());
        assert!(resolved("reference_counts = [0, 0, 0, 0, 0]\n").is_err());
        let cfg = resolved("reference_counts = [608, 473, 224, 127, 85]\n").unwrap();
        assert_eq!(
            cfg.reference,
            ReferenceSource::ExplicitCounts([608, 473, 224, 127, 85])
        );
    }

    #[test]
    fn config_hash_ignores_output_directory() {
        let a = RunConfig::default_synthetic(7, "x");
        let b = RunConfig::default_synthetic(7, "y");
        assert_eq!(a.config_hash(), b.config_hash());
        let c = RunConfig::default_synthetic(8, "x");
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn subseed_is_stable_and_tag_sensitive() {
        assert_eq!(subseed(1, "a"), subseed(1, "a"));
        assert_ne!(subseed(1, "a"), subseed(1, "b"));
        assert_ne!(subseed(1, "a"), subseed(2, "a"));
    }
}
