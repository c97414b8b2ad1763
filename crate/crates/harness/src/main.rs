use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use ope_absorb::instances::DeskInstance;
use ope_absorb::mdp::{Policy, TabularMdp};
use ope_absorb::qlearn::mix_policies;
use ope_absorb::stats::accumulate_stats;
use ope_absorb::taxi::{build_taxi, DEFAULT_APPEAR_PROB};

use ope_harness::config::{build_env, train_policies, EnvSpec, SweepConfig, TrainSpec, TruthSource};
use ope_harness::formats::{
    collect, fmt_f64, load_policy, policy_hash, read_episode_file, save_model, save_policy, write_json,
};
use ope_harness::report::{report, write_summary, ReportOptions};
use ope_harness::sweep::{
    read_results, run_estimator, run_sweep, sidecar, worker_pool, write_sweep, SweepMeta, SweepOptions,
};
use ope_harness::truth::ground_truth;
use ope_absorb::estimators::{on_policy_estimate, Method, DEFAULT_LAMBDA};

#[derive(Parser)]
#[command(name = "ope-absorb", version, about = "Off-policy evaluation on absorbing MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the taxi model and write it as a model file.
    TaxiBuild {
        #[arg(long, default_value_t = DEFAULT_APPEAR_PROB)]
        appear_prob: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train target and auxiliary policies by soft-max Q-learning.
    TrainPolicies {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long, default_value_t = 400_000)]
        target_iterations: usize,
        #[arg(long, default_value_t = 60_000)]
        plus_iterations: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; receives target.json and plus.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample episodes of a policy into an episode file.
    Collect {
        #[command(flatten)]
        env: EnvArgs,
        #[command(flatten)]
        policy: BehaviorArgs,
        #[arg(long)]
        m: usize,
        #[arg(long = "H")]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Extend an existing file with the same header.
        #[arg(long)]
        append: bool,
    },
    /// Exact and Monte-Carlo value of a target policy.
    GroundTruth {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        episodes: usize,
        #[arg(long, default_value_t = 500)]
        truncation: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run estimators on an episode file.
    Estimate {
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Behavior policy; required by IS and MSWLA.
        #[arg(long)]
        behavior: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "MWLA")]
        method: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        nonneg: bool,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seed-replicated sweep over (method, alpha, H, m).
    Sweep(SweepArgs),
    /// Summarize a results table by cell.
    Report {
        results: PathBuf,
        /// Reference value; defaults to the truth in the sweep's meta file.
        #[arg(long)]
        truth: Option<f64>,
        /// Adds the Markov tail bound P(|error| >= epsilon).
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct EnvArgs {
    /// Model file.
    #[arg(long, conflicts_with_all = ["taxi", "desk"])]
    model: Option<PathBuf>,
    /// Use the built-in taxi environment.
    #[arg(long, conflicts_with = "desk")]
    taxi: bool,
    /// Use the built-in 8-state benchmark.
    #[arg(long)]
    desk: bool,
    #[arg(long, default_value_t = DEFAULT_APPEAR_PROB)]
    appear_prob: f64,
}

impl EnvArgs {
    fn spec(&self) -> Result<EnvSpec> {
        Ok(match (&self.model, self.taxi, self.desk) {
            (Some(path), _, _) => EnvSpec::Model { path: path.clone() },
            (None, true, _) => EnvSpec::Taxi { appear_prob: self.appear_prob },
            (None, false, true) => EnvSpec::Desk,
            _ => bail!("choose an environment with --model, --taxi or --desk"),
        })
    }

    fn build(&self) -> Result<(TabularMdp, EnvSpec)> {
        let spec = self.spec()?;
        Ok((build_env(&spec)?.0, spec))
    }
}

#[derive(Args)]
struct BehaviorArgs {
    /// Policy to sample; alternatively mix --target and --plus with --alpha.
    #[arg(long, conflicts_with_all = ["target", "plus", "alpha"])]
    policy: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    plus: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
}

impl BehaviorArgs {
    fn resolve(&self, env: &EnvSpec) -> Result<Policy> {
        if let Some(p) = &self.policy {
            return load_policy(p);
        }
        let (target, plus) = match (&self.target, &self.plus, env) {
            (Some(t), Some(p), _) => (load_policy(t)?, load_policy(p)?),
            (None, None, EnvSpec::Desk) => {
                let desk = DeskInstance::new();
                (desk.target, desk.auxiliary)
            }
            _ => bail!("give --policy, or --target and --plus with --alpha"),
        };
        Ok(mix_policies(&target, &plus, self.alpha.unwrap_or(0.0))?)
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long = "H", value_delimiter = ',')]
    horizon: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<usize>>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, action = clap::ArgAction::Set)]
    nonneg: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    /// Record per-estimate wall time.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

impl SweepArgs {
    fn config(&self) -> Result<SweepConfig> {
        let mut cfg = SweepConfig::load(&self.config)?;
        if let Some(v) = &self.alpha {
            cfg.alphas = v.clone();
        }
        if let Some(v) = &self.horizon {
            cfg.horizons = v.clone();
        }
        if let Some(v) = &self.m {
            cfg.episode_counts = v.clone();
        }
        if let Some(v) = self.replicates {
            cfg.replicates = v;
        }
        if let Some(v) = &self.method {
            cfg.methods = v.clone();
        }
        if let Some(v) = &self.gamma {
            cfg.gammas = v.clone();
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.nonneg {
            cfg.nonneg = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::TaxiBuild { appear_prob, out } => {
            let mdp = build_taxi(appear_prob)?;
            save_model(&out, &mdp)?;
            log::info!("wrote {} ({} states)", out.display(), mdp.n_states());
        }
        Command::TrainPolicies { env, target_iterations, plus_iterations, temperature, seed, out } => {
            let (mdp, spec) = env.build()?;
            let train = TrainSpec { target_iterations, plus_iterations, temperature, seed, ..TrainSpec::default() };
            let grid = matches!(spec, EnvSpec::Taxi { .. });
            let (target, plus) = worker_pool(None)?.install(|| train_policies(&mdp, &train, grid))?;
            std::fs::create_dir_all(&out)?;
            save_policy(&out.join("target.json"), &target)?;
            save_policy(&out.join("plus.json"), &plus)?;
            write_json(&out.join("train.json"), &train)?;
        }
        Command::Collect { env, policy, m, horizon, seed, out, append } => {
            let (mdp, spec) = env.build()?;
            let pi = policy.resolve(&spec)?;
            let header = worker_pool(None)?.install(|| collect(&mdp, &pi, m, horizon, seed, &out, append))?;
            log::info!("wrote {} episodes to {} (policy {})", m, out.display(), header.policy_hash);
        }
        Command::GroundTruth { env, target, episodes, truncation, seed, out } => {
            let (mdp, spec) = env.build()?;
            let pi_e = match (target, &spec) {
                (Some(p), _) => load_policy(&p)?,
                (None, EnvSpec::Desk) => DeskInstance::new().target,
                (None, _) => bail!("--target is required"),
            };
            let gt = worker_pool(None)?.install(|| ground_truth(&mdp, &pi_e, episodes, truncation, seed))?;
            match out {
                Some(p) => write_json(&p, &gt)?,
                None => {
                    if let Some(v) = gt.exact {
                        println!("exact\t{}", fmt_f64(v));
                    }
                    if let Some(mc) = gt.monte_carlo {
                        println!("monte_carlo\t{}\t{}", fmt_f64(mc.mean), fmt_f64(mc.standard_error));
                    }
                }
            }
        }
        Command::Estimate { episodes, target, behavior, method, lambda, nonneg, gamma, out } => {
            let (header, batch) = read_episode_file(&episodes)?;
            let pi_e = load_policy(&target)?;
            let pi_b = behavior.as_deref().map(load_policy).transpose()?;
            if let Some(pi_b) = &pi_b {
                ensure!(
                    format!("{:016x}", policy_hash(pi_b)) == header.policy_hash,
                    "behavior policy does not match the episode file"
                );
            }
            let stats = accumulate_stats(&batch, &pi_e)?;
            let mut w = csv::Writer::from_writer(output(out.as_deref())?);
            w.write_record(["method", "gamma", "estimate", "converged"])?;
            for name in &method {
                let m: Method = name.parse()?;
                let report = match (m, &pi_b) {
                    (Method::OnPolicy, _) => on_policy_estimate(&batch)?,
                    (Method::Is | Method::Mswla, None) => bail!("{} needs --behavior", m.tag()),
                    (_, Some(pi_b)) => run_estimator(m, &batch, &stats, &pi_e, pi_b, lambda, nonneg, gamma)?,
                    (_, None) => run_estimator(m, &batch, &stats, &pi_e, &pi_e, lambda, nonneg, gamma)?,
                };
                w.write_record([
                    m.tag().to_string(),
                    gamma.filter(|_| m == Method::MwlGamma).map(|g| g.to_string()).unwrap_or_default(),
                    fmt_f64(report.point_estimate),
                    report.converged.to_string(),
                ])?;
            }
            w.flush()?;
        }
        Command::Sweep(args) => {
            let cfg = args.config()?;
            let output = run_sweep(&cfg, SweepOptions { timing: args.timing, threads: args.threads })?;
            write_sweep(&args.out, &output)?;
            log::info!("wrote {} records to {}", output.records.len(), args.out.display());
        }
        Command::Report { results, truth, epsilon, out } => {
            let records = read_results(BufReader::new(File::open(&results)?))?;
            let meta_path = sidecar(&results, ".meta.json");
            let meta: Option<SweepMeta> =
                if meta_path.exists() { Some(ope_harness::formats::read_json(&meta_path)?) } else { None };
            let truth = match (truth, &meta) {
                (Some(t), _) => t,
                (None, Some(meta)) => meta.truth,
                (None, None) => bail!("no meta file next to {}; pass --truth", results.display()),
            };
            if let Some(meta) = &meta {
                if meta.truth_source == TruthSource::MonteCarlo {
                    log::info!("squared errors are measured against a Monte-Carlo truth");
                }
            }
            let opts = ReportOptions { moments: meta.as_ref().map(|m| m.moments.as_slice()), epsilon };
            let cells = report(&records, truth, opts)?;
            write_summary(output(out.as_deref())?, &cells, truth)?;
        }
    }
    Ok(())
}
