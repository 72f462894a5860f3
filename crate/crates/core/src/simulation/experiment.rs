//! Monte Carlo driver over a (gamma, beta, n) grid.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{arm_policy, ate_functional, generate_dataset, oracle_truth, SimConfig, SimTruth};
use crate::error::{Error, Result};
use crate::estimators::EstimateReport;
use crate::pipeline::{Analysis, Method, PipelineOptions};
use crate::seed::stream_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub gammas: Vec<f64>,
    pub betas: Vec<f64>,
    pub ns: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub treat_prob: f64,
    pub methods: Vec<Method>,
    pub pipeline: PipelineOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            gammas: vec![0.5, 0.8],
            betas: vec![0.0, 0.6],
            ns: vec![2000],
            reps: 200,
            seed: 20240601,
            treat_prob: 0.25,
            methods: vec![
                Method::PluginCalibrated,
                Method::PluginCalibratedBootstrap,
                Method::DrlSemi,
                Method::DrlNonparam,
                Method::OraclePlugin,
            ],
            pipeline: PipelineOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() || self.betas.is_empty() || self.ns.is_empty() || self.methods.is_empty() {
            return Err(Error::invalid("gammas, betas, ns and methods must be non-empty"));
        }
        if self.reps == 0 {
            return Err(Error::invalid("reps must be >= 1"));
        }
        for &g in &self.gammas {
            for &b in &self.betas {
                for &n in &self.ns {
                    SimConfig {
                        n,
                        gamma: g,
                        beta: b,
                        treat_prob: self.treat_prob,
                        seed: 0,
                    }
                    .validate()?;
                }
            }
        }
        self.pipeline.validate()
    }
}

/// One estimate; the numeric fields are `None` when the replicate failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub method: Method,
    pub gamma: f64,
    pub beta: f64,
    pub n: usize,
    pub rep: usize,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub covered: Option<bool>,
    pub truth: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExperimentRow {
    fn from_report(method: Method, cfg: &SimConfig, rep: usize, truth: f64, r: Result<EstimateReport>) -> Self {
        let mut row = ExperimentRow {
            method,
            gamma: cfg.gamma,
            beta: cfg.beta,
            n: cfg.n,
            rep,
            estimate: None,
            se: None,
            ci_lo: None,
            ci_hi: None,
            covered: None,
            truth,
            seed: cfg.seed,
            error: None,
        };
        match r {
            Ok(r) if r.estimate.is_finite() => {
                row.estimate = Some(r.estimate);
                row.se = Some(r.se);
                row.ci_lo = Some(r.ci_lo);
                row.ci_hi = Some(r.ci_hi);
                row.covered = Some(r.covers(truth));
            }
            Ok(_) => row.error = Some("non-finite estimate".into()),
            Err(e) => row.error = Some(e.to_string()),
        }
        row
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub gamma: f64,
    pub beta: f64,
    pub n: usize,
    pub method: Method,
    pub reps: usize,
    pub failures: usize,
    pub bias: f64,
    pub emp_sd: f64,
    pub mean_se: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub rows: Vec<ExperimentRow>,
    pub truths: Vec<SimTruth>,
}

/// All estimators on one simulated dataset.
pub fn run_replicate(
    sim: &SimConfig,
    truth: &SimTruth,
    rep: usize,
    methods: &[Method],
    opts: &PipelineOptions,
) -> Vec<ExperimentRow> {
    let pi = arm_policy();
    let f = ate_functional();
    let rows = |res: &dyn Fn(Method) -> Result<EstimateReport>| -> Vec<ExperimentRow> {
        methods
            .iter()
            .map(|&m| ExperimentRow::from_report(m, sim, rep, truth.true_ate, res(m)))
            .collect()
    };
    let data = match generate_dataset(sim) {
        Ok(d) => d,
        Err(e) => {
            let msg = e.to_string();
            return rows(&|_| Err(Error::Precondition(msg.clone())));
        }
    };
    let analysis = match Analysis::new(&data, &pi, &f, sim.gamma, opts.clone(), sim.seed) {
        Ok(a) => a,
        Err(e) => {
            let msg = e.to_string();
            return rows(&|_| Err(Error::Precondition(msg.clone())));
        }
    };
    let oracle = truth.q.as_ref().map(|q| q as &dyn crate::mdp::QFunction);
    rows(&|m| analysis.run(m, oracle))
}

/// Runs every grid cell; replicates run in parallel.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let mut truths = Vec::new();
    let mut rows = Vec::new();
    for &gamma in &cfg.gammas {
        for &beta in &cfg.betas {
            let base = SimConfig {
                n: cfg.ns[0],
                gamma,
                beta,
                treat_prob: cfg.treat_prob,
                seed: cfg.seed,
            };
            let truth = oracle_truth(&base)?;
            for &n in &cfg.ns {
                let cell: Vec<ExperimentRow> = (0..cfg.reps)
                    .into_par_iter()
                    .flat_map_iter(|rep| {
                        let sim = SimConfig {
                            n,
                            seed: stream_seed(cfg.seed, rep as u64),
                            ..base.clone()
                        };
                        run_replicate(&sim, &truth, rep, &cfg.methods, &cfg.pipeline)
                    })
                    .collect();
                rows.extend(cell);
            }
            truths.push(truth);
        }
    }
    Ok(ExperimentOutput { rows, truths })
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

fn sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Bias, empirical SD, mean SE and coverage per (gamma, beta, n, method).
/// Failed replicates count in `failures` and nowhere else.
pub fn summarize(rows: &[ExperimentRow]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(u64, u64, usize, Method), Vec<&ExperimentRow>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.gamma.to_bits(), r.beta.to_bits(), r.n, r.method))
            .or_default()
            .push(r);
    }
    let mut out: Vec<SummaryRow> = cells
        .into_values()
        .map(|rs| {
            let ok: Vec<&&ExperimentRow> = rs.iter().filter(|r| r.estimate.is_some()).collect();
            let err: Vec<f64> = ok.iter().map(|r| r.estimate.unwrap() - r.truth).collect();
            let est: Vec<f64> = ok.iter().map(|r| r.estimate.unwrap()).collect();
            let se: Vec<f64> = ok.iter().map(|r| r.se.unwrap()).collect();
            let cov: Vec<f64> = ok.iter().map(|r| r.covered.unwrap() as u8 as f64).collect();
            SummaryRow {
                gamma: rs[0].gamma,
                beta: rs[0].beta,
                n: rs[0].n,
                method: rs[0].method,
                reps: rs.len(),
                failures: rs.len() - ok.len(),
                bias: mean(&err),
                emp_sd: sd(&est),
                mean_se: mean(&se),
                coverage: mean(&cov),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        (a.beta, a.n, a.method, a.gamma)
            .partial_cmp(&(b.beta, b.n, b.method, b.gamma))
            .expect("finite grid")
    });
    out
}

fn na<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn write_raw_csv(rows: &[ExperimentRow], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "method,gamma,beta,n,rep,estimate,se,ci_lo,ci_hi,covered,truth,seed").map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.gamma,
            r.beta,
            r.n,
            r.rep,
            na(r.estimate),
            na(r.se),
            na(r.ci_lo),
            na(r.ci_hi),
            na(r.covered.map(|c| c as u8)),
            r.truth,
            r.seed
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_summary_csv(summary: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in summary {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
struct Series {
    method: Method,
    beta: f64,
    n: usize,
    gamma: Vec<f64>,
    bias: Vec<f64>,
    se: Vec<f64>,
    emp_sd: Vec<f64>,
    coverage: Vec<f64>,
}

/// Series for plotting against gamma, one per (method, beta, n).
pub fn plot_data(summary: &[SummaryRow]) -> serde_json::Value {
    let mut series: Vec<Series> = Vec::new();
    for s in summary {
        let idx = series
            .iter()
            .position(|x| x.method == s.method && x.beta == s.beta && x.n == s.n)
            .unwrap_or_else(|| {
                series.push(Series {
                    method: s.method,
                    beta: s.beta,
                    n: s.n,
                    gamma: vec![],
                    bias: vec![],
                    se: vec![],
                    emp_sd: vec![],
                    coverage: vec![],
                });
                series.len() - 1
            });
        let x = &mut series[idx];
        x.gamma.push(s.gamma);
        x.bias.push(s.bias);
        x.se.push(s.mean_se);
        x.emp_sd.push(s.emp_sd);
        x.coverage.push(s.coverage);
    }
    serde_json::json!({ "series": series })
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `raw.csv`, `summary.csv`, `plot_data.json` and `truths.json`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = summarize(&out.rows);
    let paths: Vec<PathBuf> = ["raw.csv", "summary.csv", "plot_data.json", "truths.json"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_raw_csv(&out.rows, &paths[0])?;
    write_summary_csv(&summary, &paths[1])?;
    write_json(&plot_data(&summary), &paths[2])?;
    write_json(&out.truths, &paths[3])?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: Method, rep: usize, estimate: Option<f64>) -> ExperimentRow {
        ExperimentRow {
            method,
            gamma: 0.5,
            beta: 0.0,
            n: 10,
            rep,
            estimate,
            se: estimate.map(|_| 0.1),
            ci_lo: estimate.map(|e| e - 0.2),
            ci_hi: estimate.map(|e| e + 0.2),
            covered: estimate.map(|e| (e - 1.0).abs() <= 0.2),
            truth: 1.0,
            seed: 0,
            error: None,
        }
    }

    #[test]
    fn summary_skips_failures() {
        let rows = vec![
            row(Method::PluginCalibrated, 0, Some(1.1)),
            row(Method::PluginCalibrated, 1, Some(0.5)),
            row(Method::PluginCalibrated, 2, None),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].failures, 1);
        assert!((s[0].bias - (-0.2)).abs() < 1e-12);
        assert!((s[0].coverage - 0.5).abs() < 1e-12);
        assert!((s[0].emp_sd - (0.18f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn raw_csv_marks_na() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("raw.csv");
        write_raw_csv(&[row(Method::DrlSemi, 0, None)], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("drl-semi,0.5,0,10,0,NA,NA,NA,NA,NA,1,0"));
    }

    #[test]
    fn small_experiment_runs() {
        let cfg = ExperimentConfig {
            gammas: vec![0.5],
            betas: vec![0.0],
            ns: vec![300],
            reps: 2,
            methods: vec![Method::PluginCalibrated, Method::DrlNonparam, Method::OraclePlugin],
            pipeline: PipelineOptions {
                folds: 2,
                regressor: crate::regression::RegressorSpec::TabularMean,
                ..PipelineOptions::default()
            },
            ..ExperimentConfig::default()
        };
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.rows.len(), 6);
        assert!(out.rows.iter().all(|r| r.estimate.is_some()), "{:?}", out.rows);
        let dir = tempfile::tempdir().unwrap();
        let paths = write_outputs(&out, dir.path()).unwrap();
        assert!(paths.iter().all(|p| p.exists()));
    }
}
