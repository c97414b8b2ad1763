//! Seed-replicated sweeps over (method, α, H, m, γ, replicate).

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use ope_absorb::analysis::scan_moment_params;
use ope_absorb::estimators::{
    mswla_from_stats, mwl_gamma_from_stats, mwla_return, mwla_solve, naive_average, on_policy_estimate,
    trajectory_is, EstimateReport, Method,
};
use ope_absorb::mdp::{sample_batch, EpisodeBatch, Policy};
use ope_absorb::seed::derive_seed;
use ope_absorb::stats::{accumulate_stats, SufficientStats};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{build_experiment, Experiment, SweepConfig, TruthSource};
use crate::formats::{fmt_f64, write_json};
use crate::truth::{ground_truth, GroundTruth};

pub const THREADS_ENV: &str = "OPE_ABSORB_THREADS";

pub const RESULT_HEADER: [&str; 10] =
    ["method", "alpha", "H", "m", "gamma", "replicate", "estimate", "squared_error", "seed", "runtime_ms"];

/// Data-source words mixed into replicate seeds.
const BEHAVIOR_DATA: u64 = 0;
const TARGET_DATA: u64 = 1;
const TRUTH_DATA: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub method: Method,
    pub alpha: f64,
    pub horizon: usize,
    pub m: usize,
    pub gamma: Option<f64>,
    pub replicate: usize,
    /// `None` when the estimator failed for this replicate.
    pub estimate: Option<f64>,
    pub squared_error: Option<f64>,
    pub seed: u64,
    pub runtime_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub method: Method,
    pub alpha: f64,
    pub horizon: usize,
    pub m: usize,
    pub gamma: Option<f64>,
    pub replicate: usize,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaMoments {
    pub alpha: f64,
    pub lambda0: Option<f64>,
    pub m0: Option<f64>,
}

/// Sidecar written next to the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    pub master_seed: u64,
    pub env: String,
    pub lambda: f64,
    pub nonneg: bool,
    pub truth: f64,
    pub truth_source: TruthSource,
    pub ground_truth: GroundTruth,
    /// Absorption-time moment parameters of each behavior policy.
    pub moments: Vec<AlphaMoments>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    /// Record estimator wall time (makes the output nondeterministic).
    pub timing: bool,
    /// Worker count; falls back to `OPE_ABSORB_THREADS`, then to rayon's default.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub records: Vec<ResultRecord>,
    pub diagnostics: Vec<Diagnostic>,
    pub meta: SweepMeta,
}

pub fn thread_count(explicit: Option<usize>) -> Result<usize> {
    if let Some(n) = explicit {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => {
            v.trim().parse().with_context(|| format!("{THREADS_ENV} must be a worker count, got {v:?}"))
        }
        _ => Ok(0),
    }
}

pub fn worker_pool(explicit: Option<usize>) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(thread_count(explicit)?).build()?)
}

/// Runs one estimator on prepared behavior data.
#[allow(clippy::too_many_arguments)]
pub fn run_estimator(
    method: Method,
    batch: &EpisodeBatch,
    stats: &SufficientStats,
    pi_e: &Policy,
    pi_b: &Policy,
    lambda: f64,
    nonneg: bool,
    gamma: Option<f64>,
) -> Result<EstimateReport> {
    let mut report = match method {
        Method::Mwla => {
            let w = mwla_solve(stats, lambda, nonneg)?;
            mwla_return(stats, &w)?
        }
        Method::Mswla => mswla_from_stats(stats, pi_b, lambda, nonneg)?,
        Method::Naive => naive_average(batch)?,
        Method::Is => trajectory_is(batch, pi_e, pi_b)?,
        Method::MwlGamma => {
            let Some(g) = gamma else { bail!("MWL_GAMMA needs a discount") };
            mwl_gamma_from_stats(stats, g, lambda, nonneg)?
        }
        Method::OnPolicy => bail!("ON_POLICY runs on target-policy data"),
    };
    report.meta.horizon = batch.truncation;
    Ok(report)
}

type Key = (usize, usize, usize, usize, usize, usize);

struct Unit {
    ai: usize,
    hi: usize,
    mi: usize,
    rep: usize,
}

struct Cell {
    method: Method,
    gamma: Option<f64>,
    key_method: usize,
    key_gamma: usize,
}

fn cells(methods: &[Method], gammas: &[f64]) -> Vec<Cell> {
    let mut out = Vec::new();
    for (k, &method) in methods.iter().enumerate() {
        if method == Method::MwlGamma {
            for (g, &gamma) in gammas.iter().enumerate() {
                out.push(Cell { method, gamma: Some(gamma), key_method: k, key_gamma: g });
            }
        } else {
            out.push(Cell { method, gamma: None, key_method: k, key_gamma: 0 });
        }
    }
    out
}

fn finish(
    cell: &Cell,
    unit: &Unit,
    cfg: &SweepConfig,
    truth: f64,
    seed: u64,
    outcome: Result<EstimateReport>,
    elapsed: Option<f64>,
) -> (Key, ResultRecord, Diagnostic) {
    let (alpha, horizon, m) = (cfg.alphas[unit.ai], cfg.horizons[unit.hi], cfg.episode_counts[unit.mi]);
    let (estimate, converged, error) = match outcome {
        Ok(r) => (Some(r.point_estimate), r.converged, None),
        Err(e) => (None, false, Some(format!("{e:#}"))),
    };
    let key = (cell.key_method, unit.ai, unit.hi, unit.mi, cell.key_gamma, unit.rep);
    let record = ResultRecord {
        method: cell.method,
        alpha,
        horizon,
        m,
        gamma: cell.gamma,
        replicate: unit.rep,
        estimate,
        squared_error: estimate.map(|e| (e - truth) * (e - truth)),
        seed,
        runtime_ms: elapsed,
    };
    let diag = Diagnostic {
        method: cell.method,
        alpha,
        horizon,
        m,
        gamma: cell.gamma,
        replicate: unit.rep,
        converged,
        error,
    };
    (key, record, diag)
}

fn run_unit(
    unit: &Unit,
    cfg: &SweepConfig,
    exp: &Experiment,
    behaviors: &[Policy],
    cells: &[Cell],
    truth: f64,
    timing: bool,
) -> Vec<(Key, ResultRecord, Diagnostic)> {
    let alpha = cfg.alphas[unit.ai];
    let (horizon, m) = (cfg.horizons[unit.hi], cfg.episode_counts[unit.mi]);
    let words = |source: u64| [source, alpha.to_bits(), horizon as u64, m as u64, unit.rep as u64];
    let pi_b = &behaviors[unit.ai];
    let clock = |t: Instant| timing.then(|| t.elapsed().as_secs_f64() * 1e3);
    let mut out = Vec::with_capacity(cells.len());

    if cells.iter().any(|c| c.method != Method::OnPolicy) {
        let seed = derive_seed(cfg.seed, &words(BEHAVIOR_DATA));
        let batch = sample_batch(&exp.mdp, pi_b, m, horizon, seed);
        let t0 = Instant::now();
        let stats = accumulate_stats(&batch, &exp.target);
        let stats_ms = clock(t0);
        for cell in cells.iter().filter(|c| c.method != Method::OnPolicy) {
            let t = Instant::now();
            let outcome = match &stats {
                Ok(stats) => {
                    run_estimator(cell.method, &batch, stats, &exp.target, pi_b, cfg.lambda, cfg.nonneg, cell.gamma)
                }
                Err(e) => Err(anyhow::anyhow!("{e}")),
            };
            let elapsed = clock(t).map(|ms| ms + stats_ms.unwrap_or(0.0));
            out.push(finish(cell, unit, cfg, truth, seed, outcome, elapsed));
        }
    }
    if let Some(cell) = cells.iter().find(|c| c.method == Method::OnPolicy) {
        let seed = derive_seed(cfg.seed, &words(TARGET_DATA));
        let batch = sample_batch(&exp.mdp, &exp.target, m, horizon, seed);
        let t = Instant::now();
        let outcome = on_policy_estimate(&batch).map_err(anyhow::Error::from);
        out.push(finish(cell, unit, cfg, truth, seed, outcome, clock(t)));
    }
    out
}

/// Runs the sweep on a prepared experiment against a fixed ground truth.
pub fn run_sweep_with(cfg: &SweepConfig, exp: &Experiment, truth: f64, opts: SweepOptions) -> Result<Vec<(ResultRecord, Diagnostic)>> {
    cfg.validate()?;
    let methods = cfg.methods()?;
    let cells = cells(&methods, &cfg.gammas);
    let behaviors = cfg.alphas.iter().map(|&a| exp.behavior(a)).collect::<Result<Vec<_>>>()?;
    let mut units = Vec::new();
    for ai in 0..cfg.alphas.len() {
        for hi in 0..cfg.horizons.len() {
            for mi in 0..cfg.episode_counts.len() {
                for rep in 0..cfg.replicates {
                    units.push(Unit { ai, hi, mi, rep });
                }
            }
        }
    }
    let pool = worker_pool(opts.threads)?;
    let mut rows: Vec<(Key, ResultRecord, Diagnostic)> = pool.install(|| {
        units
            .par_iter()
            .flat_map_iter(|u| run_unit(u, cfg, exp, &behaviors, &cells, truth, opts.timing))
            .collect()
    });
    rows.sort_by_key(|r| r.0);
    Ok(rows.into_iter().map(|(_, r, d)| (r, d)).collect())
}

/// Builds the experiment, computes the ground truth and runs the sweep.
pub fn run_sweep(cfg: &SweepConfig, opts: SweepOptions) -> Result<SweepOutput> {
    cfg.validate()?;
    let exp = build_experiment(cfg)?;
    let pool = worker_pool(opts.threads)?;
    let gt = &cfg.ground_truth;
    let truth_seed = derive_seed(cfg.seed, &[TRUTH_DATA]);
    let ground = pool.install(|| ground_truth(&exp.mdp, &exp.target, gt.episodes, gt.truncation, truth_seed))?;
    let truth = match gt.source {
        TruthSource::Exact => ground.exact.context("exact ground truth unavailable")?,
        TruthSource::MonteCarlo => ground.monte_carlo.context("Monte-Carlo ground truth unavailable")?.mean,
    };
    let mut moments = Vec::new();
    for &alpha in &cfg.alphas {
        let params = scan_moment_params(&exp.mdp, &exp.behavior(alpha)?)?;
        moments.push(AlphaMoments { alpha, lambda0: params.map(|p| p.lambda0), m0: params.map(|p| p.m0) });
    }
    let rows = run_sweep_with(cfg, &exp, truth, opts)?;
    let (records, diagnostics) = rows.into_iter().unzip();
    let meta = SweepMeta {
        master_seed: cfg.seed,
        env: exp.label.clone(),
        lambda: cfg.lambda,
        nonneg: cfg.nonneg,
        truth,
        truth_source: gt.source,
        ground_truth: ground,
        moments,
    };
    Ok(SweepOutput { records, diagnostics, meta })
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Shortest decimal that parses back to the same value (grid parameters).
fn fmt_param(x: f64) -> String {
    format!("{x}")
}

pub fn write_results<W: std::io::Write>(out: W, records: &[ResultRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_HEADER)?;
    for r in records {
        w.write_record([
            r.method.tag().to_string(),
            fmt_param(r.alpha),
            r.horizon.to_string(),
            r.m.to_string(),
            r.gamma.map(fmt_param).unwrap_or_default(),
            r.replicate.to_string(),
            opt_f64(r.estimate),
            opt_f64(r.squared_error),
            r.seed.to_string(),
            r.runtime_ms.map(|t| format!("{t:.3}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_opt(field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        Ok(Some(field.parse().with_context(|| format!("bad number {field:?}"))?))
    }
}

pub fn read_results<R: std::io::Read>(input: R) -> Result<Vec<ResultRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RESULT_HEADER {
        bail!("unexpected results header {header:?}");
    }
    let mut out = Vec::new();
    for (k, row) in r.records().enumerate() {
        let row = row?;
        let f = |i: usize| row.get(i).unwrap_or("");
        let parsed = (|| -> Result<ResultRecord> {
            Ok(ResultRecord {
                method: f(0).parse().map_err(|e| anyhow::anyhow!("{e}"))?,
                alpha: f(1).parse()?,
                horizon: f(2).parse()?,
                m: f(3).parse()?,
                gamma: parse_opt(f(4))?,
                replicate: f(5).parse()?,
                estimate: parse_opt(f(6))?,
                squared_error: parse_opt(f(7))?,
                seed: f(8).parse()?,
                runtime_ms: parse_opt(f(9))?,
            })
        })();
        out.push(parsed.with_context(|| format!("results row {}", k + 1))?);
    }
    Ok(out)
}

pub fn write_diagnostics<W: std::io::Write>(out: W, diags: &[Diagnostic]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "alpha", "H", "m", "gamma", "replicate", "converged", "error"])?;
    for d in diags {
        w.write_record([
            d.method.tag().to_string(),
            fmt_param(d.alpha),
            d.horizon.to_string(),
            d.m.to_string(),
            d.gamma.map(fmt_param).unwrap_or_default(),
            d.replicate.to_string(),
            d.converged.to_string(),
            d.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    out.with_file_name(name)
}

/// Writes `out`, `out.diagnostics.csv` and `out.meta.json`.
pub fn write_sweep(out: &Path, output: &SweepOutput) -> Result<()> {
    let file = std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_results(std::io::BufWriter::new(file), &output.records)?;
    let diag = std::fs::File::create(sidecar(out, ".diagnostics.csv"))?;
    write_diagnostics(std::io::BufWriter::new(diag), &output.diagnostics)?;
    write_json(&sidecar(out, ".meta.json"), &output.meta)
}
