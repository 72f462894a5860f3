//! Command-line front end. Exit codes: 0 ok, 1 I/O, 2 usage or config,
//! 3 numerical failure. Errors go to stderr as one JSON object.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::FunctionalSpec;
use crate::mdp::{Action, Policy, TransitionDataset};
use crate::pipeline::{Analysis, Method, PipelineOptions};
use crate::simulation::{self, ExperimentConfig, SimConfig};

pub const THREADS_ENV: &str = "BELLMAN_CALIB_THREADS";

#[derive(Parser, Debug)]
#[command(name = "bellman-calib", version, about = "Calibrated and doubly robust Q-functional estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a dataset from the retention simulation.
    Simulate(SimulateArgs),
    /// Run one estimator on a dataset CSV.
    Estimate(EstimateArgs),
    /// Monte Carlo grid over gamma, beta and n.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// JSON `{n, gamma, beta, treat_prob, seed}`; flags override.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset CSV; the alphabet sidecar goes next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Dataset CSV with `s0,a0,y0,s1` and an optional `w` column.
    data: PathBuf,
    #[arg(long)]
    method: String,
    /// JSON [`EstimateConfig`]; flags override.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report JSON; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// JSON [`ExperimentConfig`]; flags override.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    method: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    gamma: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    beta: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
}

/// Evaluation policy of an `estimate` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum PolicyChoice {
    Uniform,
    Deterministic { action: Action },
    /// Row-major `n_states x n_actions`.
    Table { probs: Vec<f64> },
}

impl PolicyChoice {
    fn build(&self, data: &TransitionDataset) -> Result<Policy> {
        let (ns, na) = (data.n_states(), data.n_actions());
        match self {
            PolicyChoice::Uniform => Policy::uniform(ns, na),
            PolicyChoice::Deterministic { action } => Policy::deterministic(ns, na, *action),
            PolicyChoice::Table { probs } => Policy::from_table(ns, na, probs.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Target {
    /// Arm-persistent treatment effect of the retention simulation.
    SimAte,
    PolicyValue { policy: PolicyChoice },
    AteContrast { treated: Action, control: Action, policy: PolicyChoice },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateConfig {
    pub gamma: f64,
    pub seed: u64,
    pub target: Target,
    pub pipeline: PipelineOptions,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            gamma: 0.8,
            seed: 0,
            target: Target::SimAte,
            pipeline: PipelineOptions::default(),
        }
    }
}

impl EstimateConfig {
    fn resolve(&self, data: &TransitionDataset) -> Result<(Policy, FunctionalSpec)> {
        match &self.target {
            Target::SimAte => {
                if data.n_states() != simulation::N_STATES || data.n_actions() != simulation::N_ARMS {
                    return Err(Error::invalid("sim-ate needs a dataset on the simulation's state space"));
                }
                Ok((simulation::arm_policy(), simulation::ate_functional()))
            }
            Target::PolicyValue { policy } => {
                let pi = policy.build(data)?;
                Ok((pi.clone(), FunctionalSpec::policy_value(pi)))
            }
            Target::AteContrast { treated, control, policy } => {
                Ok((policy.build(data)?, FunctionalSpec::ate_contrast(*treated, *control)))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// SHA-256 of the resolved configuration JSON.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    fn new(command: &str, args: &[String], config: &impl Serialize, seed: u64, started: String) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let hash = Sha256::digest(serde_json::to_vec(&config)?);
        Ok(RunManifest {
            command: command.into(),
            args: args.to_vec(),
            config_hash: hex::encode(hash),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            started,
            finished: now(),
            outputs: vec![],
        })
    }

    fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// `<file>.manifest.json` next to a file output.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn read_json<T: DeserializeOwned>(p: &Path) -> Result<T> {
    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", p.display())))
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 1,
        Error::Numerical(_)
        | Error::Precondition(_)
        | Error::NonFiniteWeight { .. }
        | Error::OverlapViolation { .. } => 3,
        _ => 2,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match exit_code(e) {
        1 => "io",
        3 => "numerical",
        _ => "usage",
    }
}

fn report_error(e: &Error) {
    let v = serde_json::json!({ "error": error_kind(e), "message": e.to_string() });
    eprintln!("{v}");
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::invalid(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    // A second initialization in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn simulate(a: SimulateArgs, argv: &[String]) -> Result<()> {
    let started = now();
    let mut cfg: SimConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SimConfig {
            n: 2000,
            gamma: 0.8,
            beta: 0.0,
            treat_prob: 0.25,
            seed: 0,
        },
    };
    cfg.n = a.n.unwrap_or(cfg.n);
    cfg.gamma = a.gamma.unwrap_or(cfg.gamma);
    cfg.beta = a.beta.unwrap_or(cfg.beta);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.validate()?;
    let data = simulation::generate_dataset(&cfg)?;
    data.write_csv(&a.out)?;
    let mut m = RunManifest::new("simulate", argv, &cfg, cfg.seed, started)?;
    m.outputs = vec![a.out.clone(), TransitionDataset::sidecar_path(&a.out)];
    m.write(&manifest_path(&a.out))
}

fn estimate(a: EstimateArgs, argv: &[String]) -> Result<()> {
    let started = now();
    let method: Method = a.method.parse()?;
    if matches!(method, Method::OraclePlugin | Method::PluginCalibratedBootstrap) {
        return Err(Error::invalid(format!(
            "method `{method}` is not available here; use plugin-calibrated, drl-semi, drl-robust or drl-nonparam"
        )));
    }
    let mut cfg: EstimateConfig = read_config(a.config.as_deref())?;
    cfg.gamma = a.gamma.unwrap_or(cfg.gamma);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.pipeline.folds = a.folds.unwrap_or(cfg.pipeline.folds);
    cfg.pipeline.bootstrap = a.bootstrap.unwrap_or(cfg.pipeline.bootstrap);
    let data = TransitionDataset::read_csv(&a.data)?;
    let (pi, f) = cfg.resolve(&data)?;
    let analysis = Analysis::new(&data, &pi, &f, cfg.gamma, cfg.pipeline.clone(), cfg.seed)?;
    let report = analysis.run(method, None)?;

    let mut value = serde_json::to_value(&report)?;
    value["gamma"] = cfg.gamma.into();
    match &a.out {
        Some(out) => {
            let mp = manifest_path(out);
            value["manifest"] = mp.display().to_string().into();
            let text = serde_json::to_string_pretty(&value)? + "\n";
            std::fs::write(out, text).map_err(|e| Error::io(out, e))?;
            let mut m = RunManifest::new("estimate", argv, &cfg, cfg.seed, started)?;
            m.outputs = vec![out.clone()];
            m.write(&mp)
        }
        None => {
            println!("{}", serde_json::to_string_pretty(&value)?);
            Ok(())
        }
    }
}

fn experiment(a: ExperimentArgs, argv: &[String]) -> Result<usize> {
    let started = now();
    let mut cfg: ExperimentConfig = read_config(a.config.as_deref())?;
    if !a.method.is_empty() {
        cfg.methods = a.method.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    }
    if !a.gamma.is_empty() {
        cfg.gammas = a.gamma;
    }
    if !a.beta.is_empty() {
        cfg.betas = a.beta;
    }
    if !a.n.is_empty() {
        cfg.ns = a.n;
    }
    cfg.reps = a.reps.unwrap_or(cfg.reps);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.pipeline.folds = a.folds.unwrap_or(cfg.pipeline.folds);
    cfg.pipeline.bootstrap = a.bootstrap.unwrap_or(cfg.pipeline.bootstrap);
    cfg.validate()?;

    let out = simulation::run_experiment(&cfg)?;
    let failures = out.rows.iter().filter(|r| r.estimate.is_none()).count();
    let mut m = RunManifest::new("experiment", argv, &cfg, cfg.seed, started)?;
    m.outputs = simulation::write_outputs(&out, &a.out)?;
    m.write(&a.out.join("manifest.json"))?;
    Ok(failures)
}

fn dispatch(cli: Cli, argv: &[String]) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Simulate(a) => simulate(a, argv),
        Command::Estimate(a) => estimate(a, argv),
        Command::Experiment(a) => {
            let failures = experiment(a, argv)?;
            if failures > 0 {
                eprintln!("{}", serde_json::json!({ "warning": "failed replicates", "count": failures }));
            }
            Ok(())
        }
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let v = serde_json::json!({ "error": "usage", "message": e.render().to_string() });
            eprintln!("{v}");
            return 2;
        }
    };
    match dispatch(cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            report_error(&e);
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_config_parses() {
        let c: EstimateConfig = serde_json::from_str(
            r#"{"gamma":0.5,"target":{"kind":"ate-contrast","treated":1,"control":0,"policy":{"type":"uniform"}},
                "pipeline":{"folds":2,"regressor":{"backend":"tabular-mean"}}}"#,
        )
        .unwrap();
        assert_eq!(c.pipeline.folds, 2);
        assert!(matches!(c.target, Target::AteContrast { treated: 1, .. }));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Numerical("x".into())), 3);
        assert_eq!(exit_code(&Error::invalid("x")), 2);
        assert_eq!(run(["bellman-calib", "nope"]), 2);
        assert_eq!(run(["bellman-calib", "simulate", "--out", "/nonexistent/x.csv", "--n", "0"]), 2);
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(manifest_path(Path::new("a/b.csv")), PathBuf::from("a/b.csv.manifest.json"));
    }
}
