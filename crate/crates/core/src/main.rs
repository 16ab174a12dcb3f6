//! Command-line entry point.
//!
//! Exit codes: 0 on success, 2 for configuration problems (including
//! argument parsing), 3 for unusable input data, 4 for numerical or
//! convergence failures.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use survrisk::cohort::{
    apply_exclusions, load_cohort, save_cohort, simulate_cohort, Cohort, Outcome,
    COHORT_SCHEMA_VERSION,
};
use survrisk::concordance::c_index;
use survrisk::inference::bootstrap_ci;
use survrisk::patchagg::{aggregate_cases, read_patch_grids, read_slide_manifest, ClassWeights};
use survrisk::pipeline::report::{
    assignments_file, km_file, sha256_hex, Manifest, DISCORDANCE_HEADER, FILE_DISCORDANCE,
    FILE_HR_MULTIVARIABLE, FILE_HR_PER_PATTERN, FILE_HR_UNIVARIABLE, FILE_LOGRANK, FILE_MANIFEST,
    FILE_SENS_DISCRETIZATION, FILE_SENS_YEARS, FILE_TABLE2, FILE_TABLE2_DIFFS, HR_HEADER,
    LOGRANK_HEADER, PER_PATTERN_HEADER, SENS_METHOD_HEADER, SENS_YEARS_HEADER, TABLE2_DIFFS_HEADER,
    TABLE2_HEADER,
};
use survrisk::pipeline::{run_pipeline, FailureKind, PipelineError, RawConfig, RunConfig};
use survrisk::riskmodel::{
    discretize_to_reference, in_sample_scores, loocv_risk_scores, read_assignments_csv,
    rule_based_assignments, temporal_split_scores, write_assignments_csv, ReferenceHistogram,
    RiskAssignment, RiskMethod,
};
use survrisk::survstats::{kaplan_meier, logrank, write_km_csv};

#[derive(Parser)]
#[command(
    name = "survrisk",
    version,
    about = "Pattern-based survival risk scoring: simulation, scoring, and reporting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort CSV.
    Simulate(SimulateArgs),
    /// Validate a cohort CSV and apply the exclusion rules.
    Ingest(IngestArgs),
    /// Pool per-patch class grids into case-level pattern percentages.
    Aggregate(AggregateArgs),
    /// Compute risk scores for a cohort.
    Score(ScoreArgs),
    /// Assign risk groups 1-5 by frequency matching against a reference.
    Discretize(DiscretizeArgs),
    /// Concordance of scores (or grades) against observed survival.
    Evaluate(EvaluateArgs),
    /// Kaplan-Meier curves, optionally stratified by risk group.
    Km(KmArgs),
    /// Check an existing run directory against its manifest.
    Report(ReportArgs),
    /// Run the full analysis and write the report bundle.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Output cohort CSV (a JSON sidecar is written next to it).
    #[arg(long)]
    out: PathBuf,
    /// TOML file with simulation parameters; omitted keys use defaults.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    n_cases: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    label: Option<String>,
}

#[derive(Args)]
struct IngestArgs {
    /// Input cohort CSV.
    #[arg(long)]
    input: PathBuf,
    /// Output CSV for the post-exclusion cohort.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AggregateArgs {
    /// Patch-probability CSV (may hold many slides).
    #[arg(long)]
    grids: PathBuf,
    /// CSV mapping slide_id to case_id.
    #[arg(long)]
    slides: PathBuf,
    /// Cells with a tissue score below this are masked out.
    #[arg(long, default_value_t = 0.0)]
    tissue_threshold: f64,
    /// Class weights as non-tumor,gp3,gp4,gp5.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    weights: Option<Vec<f64>>,
    /// Output CSV of case-level pattern summaries.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Input cohort CSV.
    #[arg(long)]
    input: PathBuf,
    /// loocv, temporal_split, rule_based, or in_sample.
    #[arg(long, default_value = "loocv")]
    method: String,
    /// dss or os.
    #[arg(long, default_value = "dss")]
    outcome: String,
    /// temporal_split trains on cases operated before this year.
    #[arg(long, default_value_t = 2000)]
    min_year: i32,
    /// Output assignments CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiscretizeArgs {
    /// Assignments CSV holding the scores.
    #[arg(long)]
    assignments: PathBuf,
    /// Reference counts for groups 1-5.
    #[arg(long, value_delimiter = ',', num_args = 5, conflicts_with = "reference_cohort")]
    counts: Option<Vec<u64>>,
    /// Cohort CSV whose pathologist grades supply the reference histogram.
    #[arg(long)]
    reference_cohort: Option<PathBuf>,
    /// Output assignments CSV with risk groups filled in.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Input cohort CSV.
    #[arg(long)]
    input: PathBuf,
    /// Assignments CSV; required unless --use-gg.
    #[arg(long)]
    assignments: Option<PathBuf>,
    /// Rank by discrete risk group instead of the continuous score.
    #[arg(long)]
    groups: bool,
    /// Rank by pathologist grade instead of an assignment file.
    #[arg(long, conflicts_with_all = ["assignments", "groups"])]
    use_gg: bool,
    /// dss or os.
    #[arg(long, default_value = "dss")]
    outcome: String,
    #[arg(long, default_value_t = 1000)]
    resamples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct KmArgs {
    /// Input cohort CSV.
    #[arg(long)]
    input: PathBuf,
    /// dss or os.
    #[arg(long, default_value = "dss")]
    outcome: String,
    /// Assignments CSV; one curve per risk group when given.
    #[arg(long)]
    assignments: Option<PathBuf>,
    /// Directory receiving the `<stratum>.km.csv` files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// A run directory written by the pipeline subcommand.
    #[arg(long)]
    dir: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// TOML config file; command-line flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for the bootstrap streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the report bundle.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Analyze this cohort CSV instead of a simulated cohort.
    #[arg(long)]
    cohort_file: Option<PathBuf>,
    /// v1 or v2.
    #[arg(long)]
    validation_set: Option<String>,
    /// First surgery year admitted to validation set 2.
    #[arg(long)]
    min_year: Option<i32>,
    /// dss or os.
    #[arg(long)]
    outcome: Option<String>,
    /// loocv, temporal_split, or rule_based.
    #[arg(long)]
    discretization: Option<String>,
    /// Reference counts for groups 1-5 (default: pathologist grades).
    #[arg(long, value_delimiter = ',', num_args = 5)]
    reference_counts: Option<Vec<u64>>,
    #[arg(long)]
    bootstrap_resamples: Option<usize>,
    /// L2 penalty for the adjusted hazard-ratio model.
    #[arg(long)]
    ridge: Option<f64>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Ingest(args) => cmd_ingest(args),
        Command::Aggregate(args) => cmd_aggregate(args),
        Command::Score(args) => cmd_score(args),
        Command::Discretize(args) => cmd_discretize(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Km(args) => cmd_km(args),
        Command::Report(args) => cmd_report(args),
        Command::Pipeline(args) => cmd_pipeline(args),
    }
}

fn parse_enum<T>(what: &str, raw: &str) -> Result<T, PipelineError>
where
    T: std::str::FromStr<Err = String>,
{
    raw.parse::<T>()
        .map_err(|e| PipelineError::Config(format!("{what}: {e}")))
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), PipelineError> {
    let mut params = match &args.params {
        None => survrisk::SimulationParams::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                PipelineError::Config(format!("cannot read params file {}: {e}", path.display()))
            })?;
            toml::from_str(&text)
                .map_err(|e| PipelineError::Config(format!("params file: {e}")))?
        }
    };
    if let Some(n) = args.n_cases {
        params.n_cases = n;
    }
    if let Some(s) = args.seed {
        params.seed = s;
    }
    if let Some(l) = args.label {
        params.label = l;
    }
    let cohort =
        simulate_cohort(&params).map_err(|e| PipelineError::from_cohort("simulate", e))?;
    save_cohort(&cohort, &args.out).map_err(|e| PipelineError::from_cohort("simulate", e))?;
    println!(
        "simulated {} cases (seed {}) -> {}",
        cohort.len(),
        params.seed,
        args.out.display()
    );
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<(), PipelineError> {
    let raw = load_cohort(&args.input, COHORT_SCHEMA_VERSION)
        .map_err(|e| PipelineError::from_cohort("ingest", e))?;
    let kept = apply_exclusions(&raw);
    save_cohort(&kept, &args.out).map_err(|e| PipelineError::from_cohort("ingest", e))?;
    println!(
        "ingested {} cases, excluded {}, kept {} -> {}",
        raw.len(),
        raw.len() - kept.len(),
        kept.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_aggregate(args: AggregateArgs) -> Result<(), PipelineError> {
    const STAGE: &str = "aggregate";
    let file = std::fs::File::open(&args.grids).map_err(|e| PipelineError::from_io(STAGE, e))?;
    let grids = read_patch_grids(std::io::BufReader::new(file))
        .map_err(|e| PipelineError::from_patch(STAGE, e))?;
    let slides =
        read_slide_manifest(&args.slides).map_err(|e| PipelineError::from_patch(STAGE, e))?;
    let weights = match args.weights {
        None => [1.0; 4],
        Some(w) => w.try_into().expect("clap enforces 4 values"),
    };
    let weights = ClassWeights::new(weights).map_err(|e| PipelineError::from_patch(STAGE, e))?;
    let summaries = aggregate_cases(&grids, &slides, &weights, args.tissue_threshold)
        .map_err(|e| PipelineError::from_patch(STAGE, e))?;

    let mut w = csv::Writer::from_path(&args.out)
        .map_err(|e| PipelineError::Config(format!("cannot write {}: {e}", args.out.display())))?;
    let io_err = |e: csv::Error| PipelineError::from_io(STAGE, std::io::Error::other(e));
    w.write_record([
        "case_id",
        "pct_gp3",
        "pct_gp4",
        "pct_gp5",
        "tumor_present",
        "n_gp3",
        "n_gp4",
        "n_gp5",
        "n_nontumor",
        "n_masked",
    ])
    .map_err(io_err)?;
    for (case_id, s) in &summaries {
        w.write_record([
            case_id.clone(),
            s.pct_gp3.to_string(),
            s.pct_gp4.to_string(),
            s.pct_gp5.to_string(),
            u8::from(s.tumor_present).to_string(),
            s.n_gp3.to_string(),
            s.n_gp4.to_string(),
            s.n_gp5.to_string(),
            s.n_nontumor.to_string(),
            s.n_masked.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| PipelineError::from_io(STAGE, e))?;
    println!(
        "aggregated {} slides into {} cases -> {}",
        grids.len(),
        summaries.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<(), PipelineError> {
    const STAGE: &str = "score";
    let method: RiskMethod = parse_enum("method", &args.method)?;
    let outcome: Outcome = parse_enum("outcome", &args.outcome)?;
    let cohort = load_cohort(&args.input, COHORT_SCHEMA_VERSION)
        .map_err(|e| PipelineError::from_cohort(STAGE, e))?;

    let assignments = match method {
        RiskMethod::Loocv => loocv_risk_scores(&cohort, outcome)
            .map_err(|e| PipelineError::from_risk(STAGE, e))?
            .assignments,
        RiskMethod::InSample => {
            in_sample_scores(&cohort, outcome)
                .map_err(|e| PipelineError::from_risk(STAGE, e))?
                .0
        }
        RiskMethod::RuleBased => {
            rule_based_assignments(&cohort).map_err(|e| PipelineError::from_risk(STAGE, e))?
        }
        RiskMethod::TemporalSplit => {
            let split = |pred: fn(i32, i32) -> bool| -> Result<Cohort, PipelineError> {
                let cases: Vec<_> = cohort
                    .cases()
                    .iter()
                    .filter(|c| pred(c.surgery_year, args.min_year))
                    .cloned()
                    .collect();
                Cohort::new(cases, cohort.label.clone(), Vec::new())
                    .map_err(|e| PipelineError::from_cohort(STAGE, e))
            };
            let train = split(|y, cut| y < cut)?;
            let eval = split(|y, cut| y >= cut)?;
            temporal_split_scores(&train, &eval, outcome)
                .map_err(|e| PipelineError::from_risk(STAGE, e))?
        }
    };
    let file =
        std::fs::File::create(&args.out).map_err(|e| PipelineError::from_io(STAGE, e))?;
    write_assignments_csv(&assignments, file).map_err(|e| PipelineError::from_risk(STAGE, e))?;
    println!(
        "scored {} cases ({method}) -> {}",
        assignments.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_discretize(args: DiscretizeArgs) -> Result<(), PipelineError> {
    const STAGE: &str = "discretize";
    let assignments =
        read_assignments_csv(&args.assignments).map_err(|e| PipelineError::from_risk(STAGE, e))?;
    let reference = match (&args.counts, &args.reference_cohort) {
        (Some(counts), None) => {
            let c: [u64; 5] = counts.clone().try_into().expect("clap enforces 5 values");
            ReferenceHistogram::new(c)
        }
        (None, Some(path)) => {
            let cohort = load_cohort(path, COHORT_SCHEMA_VERSION)
                .map_err(|e| PipelineError::from_cohort(STAGE, e))?;
            ReferenceHistogram::from_cohort(&cohort)
                .map_err(|e| PipelineError::from_risk(STAGE, e))?
        }
        _ => {
            return Err(PipelineError::Config(
                "give exactly one of --counts or --reference-cohort".into(),
            ))
        }
    };
    let scaled = reference
        .scaled_to(assignments.len() as u64)
        .map_err(|e| PipelineError::from_risk(STAGE, e))?;
    let discretized = discretize_to_reference(&assignments, &scaled)
        .map_err(|e| PipelineError::from_risk(STAGE, e))?;
    let file =
        std::fs::File::create(&args.out).map_err(|e| PipelineError::from_io(STAGE, e))?;
    write_assignments_csv(&discretized, file).map_err(|e| PipelineError::from_risk(STAGE, e))?;
    println!(
        "discretized {} cases against {:?} -> {}",
        discretized.len(),
        scaled.counts,
        args.out.display()
    );
    Ok(())
}

/// Joins assignments to cohort order by case id.
fn aligned_scores(
    cohort: &Cohort,
    assignments: &[RiskAssignment],
    use_groups: bool,
) -> Result<Vec<f64>, PipelineError> {
    let by_id: BTreeMap<&str, &RiskAssignment> =
        assignments.iter().map(|a| (a.case_id.as_str(), a)).collect();
    cohort
        .cases()
        .iter()
        .map(|c| {
            let a = by_id.get(c.case_id.as_str()).ok_or_else(|| {
                PipelineError::Stage {
                    stage: "evaluate".into(),
                    kind: FailureKind::Data,
                    cause: format!("case {} has no assignment row", c.case_id),
                }
            })?;
            if use_groups {
                a.risk_group.map(f64::from).ok_or_else(|| PipelineError::Stage {
                    stage: "evaluate".into(),
                    kind: FailureKind::Data,
                    cause: format!("case {} has no risk group (run discretize first)", c.case_id),
                })
            } else {
                Ok(a.risk_score)
            }
        })
        .collect()
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), PipelineError> {
    const STAGE: &str = "evaluate";
    let outcome: Outcome = parse_enum("outcome", &args.outcome)?;
    let cohort = load_cohort(&args.input, COHORT_SCHEMA_VERSION)
        .map_err(|e| PipelineError::from_cohort(STAGE, e))?;
    let (times, events) = cohort
        .times_events(outcome)
        .map_err(|e| PipelineError::from_cohort(STAGE, e))?;

    let scores: Vec<f64> = if args.use_gg {
        cohort
            .cases()
            .iter()
            .map(|c| {
                c.pathologist_gg.map(f64::from).ok_or_else(|| PipelineError::Stage {
                    stage: STAGE.into(),
                    kind: FailureKind::Data,
                    cause: format!("case {} has no pathologist grade", c.case_id),
                })
            })
            .collect::<Result<_, _>>()?
    } else {
        let path = args.assignments.as_ref().ok_or_else(|| {
            PipelineError::Config("--assignments is required unless --use-gg is given".into())
        })?;
        let assignments =
            read_assignments_csv(path).map_err(|e| PipelineError::from_risk(STAGE, e))?;
        aligned_scores(&cohort, &assignments, args.groups)?
    };

    let metric = |_: &Cohort, idx: &[usize]| {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let t: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
        let e: Vec<bool> = idx.iter().map(|&i| events[i]).collect();
        c_index(&s, &t, &e).ok().map(|r| r.c_index)
    };
    let ci = bootstrap_ci(metric, &cohort, args.resamples, 0.05, args.seed)
        .map_err(|e| PipelineError::from_inference(STAGE, e))?;
    println!(
        "c_index {} ci {} {} n {} events {} resamples {}",
        ci.point_estimate,
        ci.ci_lower,
        ci.ci_upper,
        cohort.len(),
        events.iter().filter(|&&e| e).count(),
        ci.n_effective,
    );
    Ok(())
}

fn cmd_km(args: KmArgs) -> Result<(), PipelineError> {
    const STAGE: &str = "km";
    let outcome: Outcome = parse_enum("outcome", &args.outcome)?;
    let cohort = load_cohort(&args.input, COHORT_SCHEMA_VERSION)
        .map_err(|e| PipelineError::from_cohort(STAGE, e))?;
    let (times, events) = cohort
        .times_events(outcome)
        .map_err(|e| PipelineError::from_cohort(STAGE, e))?;
    std::fs::create_dir_all(&args.out).map_err(|e| PipelineError::from_io(STAGE, e))?;

    let write_stratum = |name: &str, t: &[f64], e: &[bool]| -> Result<(), PipelineError> {
        let curve = kaplan_meier(t, e, 0.05).map_err(|err| PipelineError::from_surv(STAGE, err))?;
        let path = args.out.join(km_file(name));
        let file = std::fs::File::create(&path).map_err(|e| PipelineError::from_io(STAGE, e))?;
        write_km_csv(&curve, file)
            .map_err(|e| PipelineError::from_io(STAGE, std::io::Error::other(e)))?;
        println!("{name}: n {} events {}", t.len(), e.iter().filter(|&&x| x).count());
        Ok(())
    };

    match &args.assignments {
        None => write_stratum("overall", &times, &events)?,
        Some(path) => {
            let assignments =
                read_assignments_csv(path).map_err(|e| PipelineError::from_risk(STAGE, e))?;
            let groups = aligned_scores(&cohort, &assignments, true)?;
            let mut populated: Vec<(Vec<f64>, Vec<bool>)> = Vec::new();
            for g in 1u8..=5 {
                let idx: Vec<usize> = (0..cohort.len())
                    .filter(|&i| groups[i] == f64::from(g))
                    .collect();
                if idx.is_empty() {
                    continue;
                }
                let t: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
                let e: Vec<bool> = idx.iter().map(|&i| events[i]).collect();
                write_stratum(&format!("ai_group{g}"), &t, &e)?;
                populated.push((t, e));
            }
            if populated.len() >= 2 {
                let (t, e): (Vec<Vec<f64>>, Vec<Vec<bool>>) = populated.into_iter().unzip();
                let lr = logrank(&t, &e).map_err(|e| PipelineError::from_surv(STAGE, e))?;
                println!("logrank chi2 {} df {} p {}", lr.chi2, lr.df, lr.p_value);
            }
        }
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), PipelineError> {
    let data_err = |cause: String| PipelineError::Stage {
        stage: "report check".into(),
        kind: FailureKind::Data,
        cause,
    };
    let manifest_path = args.dir.join(FILE_MANIFEST);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| data_err(format!("cannot read {}: {e}", manifest_path.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| data_err(format!("manifest: {e}")))?;

    // Fixed sections must be present with their documented headers.
    let assignments_v1 = assignments_file("v1");
    let assignments_v2 = assignments_file("v2");
    let assignment_header = vec!["case_id", "method", "risk_score", "risk_group"];
    let expected_headers: Vec<(&str, Vec<&str>)> = vec![
        (FILE_TABLE2, TABLE2_HEADER.to_vec()),
        (FILE_TABLE2_DIFFS, TABLE2_DIFFS_HEADER.to_vec()),
        (FILE_HR_UNIVARIABLE, HR_HEADER.to_vec()),
        (FILE_HR_PER_PATTERN, PER_PATTERN_HEADER.to_vec()),
        (FILE_HR_MULTIVARIABLE, HR_HEADER.to_vec()),
        (FILE_DISCORDANCE, DISCORDANCE_HEADER.to_vec()),
        (FILE_LOGRANK, LOGRANK_HEADER.to_vec()),
        (FILE_SENS_YEARS, SENS_YEARS_HEADER.to_vec()),
        (FILE_SENS_DISCRETIZATION, SENS_METHOD_HEADER.to_vec()),
        (&assignments_v1, assignment_header.clone()),
        (&assignments_v2, assignment_header),
    ];
    for (name, _) in &expected_headers {
        if !manifest.files.contains_key(*name) {
            return Err(data_err(format!("manifest does not list {name}")));
        }
    }

    for (name, recorded) in &manifest.files {
        let path = args.dir.join(name);
        let bytes = std::fs::read(&path)
            .map_err(|e| data_err(format!("cannot read listed file {name}: {e}")))?;
        let actual = sha256_hex(&bytes);
        if &actual != recorded {
            return Err(data_err(format!(
                "{name} does not match its manifest digest (expected {recorded}, got {actual})"
            )));
        }
        if let Some((_, header)) = expected_headers.iter().find(|(n, _)| n == name) {
            let mut rdr = csv::Reader::from_reader(bytes.as_slice());
            let got: Vec<String> = rdr
                .headers()
                .map_err(|e| data_err(format!("{name}: {e}")))?
                .iter()
                .map(str::to_string)
                .collect();
            if got != *header {
                return Err(data_err(format!(
                    "{name} header {got:?} does not match {header:?}"
                )));
            }
        }
    }
    println!(
        "report ok: {} files verified in {} (config {})",
        manifest.files.len(),
        args.dir.display(),
        &manifest.config_hash[..12.min(manifest.config_hash.len())]
    );
    Ok(())
}

fn cmd_pipeline(args: PipelineArgs) -> Result<(), PipelineError> {
    let mut raw = match &args.config {
        Some(path) => RawConfig::from_toml_file(path)?,
        None => RawConfig::default(),
    };
    // Command-line flags override config-file keys.
    if args.cohort_file.is_some() {
        raw.cohort_file = args.cohort_file;
    }
    if args.validation_set.is_some() {
        raw.validation_set = args.validation_set;
    }
    if args.min_year.is_some() {
        raw.min_year = args.min_year;
    }
    if args.outcome.is_some() {
        raw.outcome = args.outcome;
    }
    if args.discretization.is_some() {
        raw.discretization = args.discretization;
    }
    if args.reference_counts.is_some() {
        raw.reference_counts = args.reference_counts;
    }
    if args.bootstrap_resamples.is_some() {
        raw.bootstrap_resamples = args.bootstrap_resamples;
    }
    if args.ridge.is_some() {
        raw.ridge = args.ridge;
    }
    if args.seed.is_some() {
        raw.seed = args.seed;
    }
    if args.out.is_some() {
        raw.out = args.out;
    }

    let config = RunConfig::from_raw(raw)?;
    let bundle = run_pipeline(&config)?;
    let primary = bundle
        .table2
        .iter()
        .find(|r| {
            r.validation_set == config.validation_set.to_string() && r.method == "risk_groups"
        })
        .and_then(|r| r.c_index);
    match primary {
        Some(c) => println!(
            "pipeline complete: {} files in {} (risk-group c-index {c:.3} on {})",
            bundle.manifest.files.len() + 1,
            config.out_dir.display(),
            config.validation_set,
        ),
        None => println!(
            "pipeline complete: {} files in {}",
            bundle.manifest.files.len() + 1,
            config.out_dir.display(),
        ),
    }
    Ok(())
}
