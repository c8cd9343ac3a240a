//! Subcommands of the `policy-surrogate` binary. Each returns a JSON summary
//! that `main` prints to stdout; failures become a JSON object on stderr.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use policy_surrogate::artifact::{run_experiment, RunArtifact};
use policy_surrogate::config::{load_config, save_config, RunConfig};
use policy_surrogate::domain::TreatmentCondition;
use policy_surrogate::eval::export::{
    write_assignment_csv, write_coefficients_csv, write_delta_mu_csv, write_factorial_csv, write_learning_curve_csv,
};
use policy_surrogate::eval::{
    assign_prototypes, budget_to_reach, coefficient_table, compare_specifications, error_summary, factorial_slices,
    learning_curve, read_series_csv, zscore_summaries,
};
use policy_surrogate::regression::ModelKind;
use policy_surrogate::rng::derive_seed;
use policy_surrogate::seqdes::{write_history_csv, NoiseModel, Strategy};
use policy_surrogate::sim::run_batch;
use policy_surrogate::whatif::COEFFICIENT_SAMPLES;
use policy_surrogate::Error;
use serde_json::{json, Value};

pub const THREADS_ENV: &str = "POLICY_SURROGATE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "policy-surrogate", version, about = "County-by-treatment surrogate experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Raw replicates for one county and condition.
    Simulate(SimulateArgs),
    /// Full sequential-design experiment; writes a run artifact.
    Run(RunArgs),
    /// Learning curve and final metrics of an artifact.
    Evaluate(EvaluateArgs),
    /// Coefficient, factorial, specification and prototype tables.
    Export(ExportArgs),
    /// What-if HTTP service over an artifact.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SimOverrides {
    /// Simulated years.
    #[arg(long)]
    pub horizon: Option<u32>,
    #[arg(long)]
    pub steps_per_year: Option<u32>,
    /// Cohort size per replicate.
    #[arg(long)]
    pub cohort: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub county: String,
    #[arg(long, default_value_t = 0)]
    pub n: u32,
    #[arg(long, default_value_t = 0)]
    pub b: u32,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV destination; stdout gets only the summary.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub sim: SimOverrides,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub budget: Option<usize>,
    /// Output directory (overrides `paths.output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    #[arg(long, value_parser = parse_noise)]
    pub noise: Option<NoiseModel>,
    #[arg(long, value_parser = parse_response)]
    pub response: Option<ModelKind>,
    #[command(flatten)]
    pub sim: SimOverrides,
}

#[derive(Debug, Args)]
pub struct ArtifactArgs {
    /// Defaults to `<out>/artifact.json`.
    #[arg(long)]
    pub artifact: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl ArtifactArgs {
    fn path(&self) -> PathBuf {
        self.artifact.clone().unwrap_or_else(|| self.out.join("artifact.json"))
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub artifact: ArtifactArgs,
    /// Score every k-th checkpoint (the last is always scored).
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    /// Threshold for the budget-to-reach summary.
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub artifact: ArtifactArgs,
    /// Posterior draws per county for intervals.
    #[arg(long, default_value_t = COEFFICIENT_SAMPLES)]
    pub samples: usize,
    /// Sampling seed; defaults to the artifact's run seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Annual series CSV for prototype assignment.
    #[arg(long, requires = "prototypes")]
    pub series: Option<PathBuf>,
    /// Comma-separated prototype county ids.
    #[arg(long, value_delimiter = ',', requires = "series")]
    pub prototypes: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Allowed browser origin; repeatable. Any origin when absent.
    #[arg(long = "cors-origin")]
    pub cors_origins: Vec<String>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    serde_json::from_value(Value::String(s.into())).map_err(|_| "expected two-stage or one-stage".into())
}

fn parse_noise(s: &str) -> Result<NoiseModel, String> {
    serde_json::from_value(Value::String(s.into())).map_err(|_| "expected hetero or homo".into())
}

fn parse_response(s: &str) -> Result<ModelKind, String> {
    match s {
        "main" => Ok(ModelKind::MainEffects),
        "interaction" => Ok(ModelKind::Interaction),
        _ => Err("expected main or interaction".into()),
    }
}

/// Failure with a stable tag for the stderr report.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn to_json(&self) -> Value {
        json!({"error": self.kind, "message": self.message})
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError { kind: e.kind(), message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CliResult<T> = Result<T, CliError>;

/// Sizes the global rayon pool from the environment, if set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| CliError {
        kind: "config",
        message: format!("{THREADS_ENV} must be a positive integer, got `{v}`"),
    })?;
    // A second call in the same process (tests) finds the pool already built.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cli: Cli) -> CliResult<Value> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Run(a) => run(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Export(a) => export(a),
        Command::Serve(a) => serve(a),
    }
}

fn apply_sim(cfg: &mut RunConfig, o: &SimOverrides) {
    if let Some(h) = o.horizon {
        cfg.simulation.horizon_years = h;
    }
    if let Some(s) = o.steps_per_year {
        cfg.simulation.steps_per_year = s;
    }
    if let Some(c) = o.cohort {
        cfg.simulation.cohort_size = c;
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError {
        kind: "io",
        message: format!("cannot create {}: {e}", path.display()),
    })?))
}

fn load_artifact(path: &Path) -> CliResult<RunArtifact> {
    RunArtifact::load(path).map_err(|e| CliError { kind: e.kind(), message: format!("{}: {e}", path.display()) })
}

pub fn simulate(a: SimulateArgs) -> CliResult<Value> {
    let mut cfg = load_config(&a.config)?;
    apply_sim(&mut cfg, &a.sim);
    cfg.validate()?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let cond = TreatmentCondition::new(a.n, a.b);
    if !cfg.grid.contains(cond) {
        return Err(Error::Invalid(format!("condition {cond} is outside the grid")).into());
    }
    let sim = cfg.load_simulator()?;
    let base = derive_seed(cfg.seed, "simulate", 0);
    let outcomes = run_batch(sim.as_ref(), &a.county, cond, base, a.replicates)?;
    if let Some(path) = &a.out {
        let mut w = create(path)?;
        writeln!(w, "county_id,n,b,replicate_seed,outcome")?;
        for o in &outcomes {
            writeln!(w, "{},{},{},{},{}", o.county_id, o.condition.n, o.condition.b, o.replicate_seed, o.outcome)?;
        }
        w.flush()?;
    }
    let values: Vec<f64> = outcomes.iter().map(|o| o.outcome).collect();
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    Ok(json!({
        "county_id": a.county,
        "n": a.n,
        "b": a.b,
        "replicates": outcomes.len(),
        "mean": mean,
        "expected": sim.expected(&a.county, cond).ok(),
        "outcomes": if a.out.is_none() { json!(values) } else { Value::Null },
    }))
}

pub fn run(a: RunArgs) -> CliResult<Value> {
    let mut cfg = load_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(b) = a.budget {
        cfg.budget = b;
    }
    if let Some(o) = a.out {
        cfg.paths.output_dir = o;
    }
    if let Some(s) = a.strategy {
        cfg.strategy = s;
    }
    if let Some(n) = a.noise {
        cfg.noise = n;
    }
    if let Some(r) = a.response {
        cfg.response = r;
    }
    apply_sim(&mut cfg, &a.sim);
    cfg.validate()?;
    let out = cfg.paths.output_dir.clone();
    std::fs::create_dir_all(&out)?;

    let artifact = run_experiment(&cfg)?;
    let art_path = out.join("artifact.json");
    artifact.save(&art_path)?;
    save_config(&cfg, out.join("config.json"))?;
    write_history_csv(create(&out.join("history.csv"))?, &artifact.history)?;
    let models = artifact.model_set()?;
    let table = coefficient_table(&models, &artifact.inputs(), COEFFICIENT_SAMPLES, derive_seed(cfg.seed, "export", 0))?;
    write_coefficients_csv(create(&out.join("coefficients.csv"))?, &table)?;

    let last = artifact.history.last();
    Ok(json!({
        "artifact": art_path,
        "config_hash": artifact.config_hash,
        "steps": artifact.history.len(),
        "budget_used": artifact.checkpoints.last().map(|c| c.budget_used),
        "budget": cfg.budget,
        "stop_reason": artifact.stop_reason,
        "rel_error": last.and_then(|r| r.rel_error),
    }))
}

pub fn evaluate(a: EvaluateArgs) -> CliResult<Value> {
    let artifact = load_artifact(&a.artifact.path())?;
    let truth = artifact.truth.as_ref().ok_or_else(|| CliError {
        kind: "invalid_input",
        message: "artifact has no truth table to evaluate against".into(),
    })?;
    let d = &artifact.design;
    let curve = learning_curve(&artifact.checkpoints, &d.grid, d.response, truth, a.eval_every)?;
    std::fs::create_dir_all(&a.artifact.out)?;
    write_learning_curve_csv(create(&a.artifact.out.join("learning_curve.csv"))?, &curve)?;
    let final_summary = error_summary(&artifact.prediction_table()?, truth)?;
    let first = &curve[0];
    let metrics = json!({
        "points": curve.len(),
        "initial": {"budget_used": first.budget_used, "rel_error": first.rel_error, "mse": first.mse},
        "final": {
            "budget_used": curve.last().map(|p| p.budget_used),
            "rel_error": final_summary.rel_error,
            "mse": final_summary.mse,
            "excluded_cells": final_summary.excluded_cells,
            "per_county": final_summary.per_county,
        },
        "threshold": a.threshold,
        "budget_to_reach": budget_to_reach(&curve, a.threshold),
        "stop_reason": artifact.stop_reason,
    });
    let mut w = create(&a.artifact.out.join("metrics.json"))?;
    serde_json::to_writer_pretty(&mut w, &metrics).map_err(Error::from)?;
    w.flush()?;
    Ok(metrics)
}

pub fn export(a: ExportArgs) -> CliResult<Value> {
    let artifact = load_artifact(&a.artifact.path())?;
    let out = &a.artifact.out;
    std::fs::create_dir_all(out)?;
    let seed = a.seed.unwrap_or(artifact.config.seed);
    let inputs = artifact.inputs();
    let mut written = Vec::new();

    let table = coefficient_table(&artifact.model_set()?, &inputs, a.samples, derive_seed(seed, "export", 0))?;
    write_coefficients_csv(create(&out.join("coefficients.csv"))?, &table)?;
    written.push("coefficients.csv");

    let grid_table = match &artifact.truth {
        Some(t) => t.clone(),
        None => artifact.prediction_table()?,
    };
    let slices = inputs.iter().map(|(id, _)| factorial_slices(&grid_table, id)).collect::<Result<Vec<_>, _>>()?;
    write_factorial_csv(create(&out.join("factorial.csv"))?, &slices)?;
    written.push("factorial.csv");
    let max_defect_ratio = slices.iter().map(|s| s.defect_ratio()).fold(0.0, f64::max);

    let main = artifact.fit_models_for(ModelKind::MainEffects)?;
    let inter = artifact.fit_models_for(ModelKind::Interaction)?;
    let spec = compare_specifications(&main, &inter, &inputs, a.samples, derive_seed(seed, "delta-mu", 0))?;
    write_delta_mu_csv(create(&out.join("delta_mu.csv"))?, &spec.rows)?;
    written.push("delta_mu.csv");

    let mut assigned = Value::Null;
    if let Some(series) = &a.series {
        let summaries = read_series_csv(File::open(series)?)?;
        let z = zscore_summaries(&summaries)?;
        let map: BTreeMap<String, _> = assign_prototypes(&z, &a.prototypes)?;
        write_assignment_csv(create(&out.join("assignment.csv"))?, &map)?;
        written.push("assignment.csv");
        assigned = json!(map.len());
    }

    Ok(json!({
        "out": out,
        "files": written,
        "counties": inputs.len(),
        "max_defect_ratio": max_defect_ratio,
        "fraction_spanning_zero": spec.fraction_spanning_zero(),
        "interaction": spec.interaction,
        "assigned": assigned,
    }))
}

pub fn serve(a: ServeArgs) -> CliResult<Value> {
    let opts = policy_surrogate_service::ServeOptions {
        artifact: a.artifact,
        addr: SocketAddr::new(a.host, a.port),
        cors_origins: if a.cors_origins.is_empty() { None } else { Some(a.cors_origins) },
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(policy_surrogate_service::serve(opts))?;
    Ok(json!({"stopped": true}))
}
