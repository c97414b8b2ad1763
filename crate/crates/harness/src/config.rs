//! Sweep configuration (TOML) and resolution of environments and policies.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ope_absorb::estimators::{Method, DEFAULT_LAMBDA};
use ope_absorb::instances::DeskInstance;
use ope_absorb::mdp::{Policy, TabularMdp};
use ope_absorb::qlearn::{mix_policies, q_learning_softmax, QLearningConfig, StepSize};
use ope_absorb::seed::{derive_seed, stream_rng};
use ope_absorb::taxi::{build_taxi, is_legal, DEFAULT_APPEAR_PROB};
use serde::{Deserialize, Serialize};

use crate::formats::{load_model, load_policy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Taxi {
        #[serde(default = "default_appear_prob")]
        appear_prob: f64,
    },
    Model {
        path: PathBuf,
    },
    /// Built-in 8-state benchmark with its own target and auxiliary policies.
    Desk,
}

fn default_appear_prob() -> f64 {
    DEFAULT_APPEAR_PROB
}

/// Q-learning settings for policy generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    #[serde(default = "default_target_iterations")]
    pub target_iterations: usize,
    #[serde(default = "default_plus_iterations")]
    pub plus_iterations: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_target_iterations() -> usize {
    400_000
}
fn default_plus_iterations() -> usize {
    60_000
}
fn default_temperature() -> f64 {
    1.0
}
fn default_step_size() -> f64 {
    0.1
}
fn default_discount() -> f64 {
    0.99
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            target_iterations: default_target_iterations(),
            plus_iterations: default_plus_iterations(),
            temperature: default_temperature(),
            step_size: default_step_size(),
            discount: default_discount(),
            seed: 0,
        }
    }
}

impl TrainSpec {
    pub fn q_config(&self, iterations: usize) -> QLearningConfig {
        QLearningConfig {
            iterations,
            temperature: self.temperature,
            step_size: StepSize::Constant(self.step_size),
            discount: self.discount,
            ..QLearningConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Files { target: PathBuf, plus: PathBuf },
    Train(TrainSpec),
    /// Policies shipped with the environment (desk only).
    Builtin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthSource {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthSpec {
    #[serde(default = "default_truth_episodes")]
    pub episodes: usize,
    #[serde(default = "default_truth_truncation")]
    pub truncation: usize,
    /// Which value squared errors are measured against.
    #[serde(default = "default_truth_source", rename = "use")]
    pub source: TruthSource,
}

fn default_truth_episodes() -> usize {
    2_000_000
}
fn default_truth_truncation() -> usize {
    500
}
fn default_truth_source() -> TruthSource {
    TruthSource::Exact
}

impl Default for GroundTruthSpec {
    fn default() -> Self {
        Self { episodes: default_truth_episodes(), truncation: default_truth_truncation(), source: default_truth_source() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub env: EnvSpec,
    #[serde(default)]
    pub policies: Option<PolicySpec>,
    pub alphas: Vec<f64>,
    pub horizons: Vec<usize>,
    pub episode_counts: Vec<usize>,
    pub replicates: usize,
    pub methods: Vec<String>,
    #[serde(default)]
    pub gammas: Vec<f64>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_nonneg")]
    pub nonneg: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ground_truth: GroundTruthSpec,
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}
fn default_nonneg() -> bool {
    true
}

impl SweepConfig {
    /// Parses a TOML document; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: SweepConfig = toml::from_str(text).context("parsing sweep config")?;
        if let Some(base) = base {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text, path.parent())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let EnvSpec::Model { path } = &mut self.env {
            fix(path);
        }
        if let Some(PolicySpec::Files { target, plus }) = &mut self.policies {
            fix(target);
            fix(plus);
        }
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for name in &self.methods {
            let m: Method = name.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.alphas.is_empty(), "alphas must not be empty");
        ensure!(!self.horizons.is_empty(), "horizons must not be empty");
        ensure!(!self.episode_counts.is_empty(), "episode_counts must not be empty");
        ensure!(!self.methods.is_empty(), "methods must not be empty");
        ensure!(self.replicates >= 1, "replicates must be at least 1");
        ensure!(self.horizons.iter().all(|&h| h >= 1), "H values must be at least 1");
        ensure!(self.episode_counts.iter().all(|&m| m >= 1), "episode counts must be at least 1");
        ensure!(self.alphas.iter().all(|a| (0.0..=1.0).contains(a)), "alpha values must lie in [0, 1]");
        ensure!(self.lambda >= 0.0 && self.lambda.is_finite(), "lambda must be finite and >= 0");
        let methods = self.methods()?;
        if methods.contains(&Method::MwlGamma) {
            ensure!(!self.gammas.is_empty(), "MWL_GAMMA needs a nonempty gammas list");
        }
        ensure!(self.gammas.iter().all(|g| *g > 0.0 && *g < 1.0), "gamma values must lie in (0, 1)");
        ensure!(self.ground_truth.truncation >= 1, "ground-truth truncation must be at least 1");
        if self.ground_truth.source == TruthSource::MonteCarlo {
            ensure!(self.ground_truth.episodes >= 1, "Monte-Carlo ground truth needs episodes >= 1");
        }
        match (&self.env, &self.policies) {
            (EnvSpec::Desk, _) => {}
            (_, None | Some(PolicySpec::Builtin)) => bail!("only the desk environment has built-in policies"),
            _ => {}
        }
        if let EnvSpec::Taxi { appear_prob } = self.env {
            ensure!((0.0..=1.0).contains(&appear_prob), "appear_prob must lie in [0, 1]");
        }
        Ok(())
    }
}

/// An environment with its target policy and the auxiliary policy that is
/// mixed in to form behavior policies.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub mdp: TabularMdp,
    pub target: Policy,
    pub plus: Policy,
    pub label: String,
}

impl Experiment {
    pub fn behavior(&self, alpha: f64) -> Result<Policy> {
        Ok(mix_policies(&self.target, &self.plus, alpha)?)
    }
}

pub fn build_env(spec: &EnvSpec) -> Result<(TabularMdp, String)> {
    Ok(match spec {
        EnvSpec::Taxi { appear_prob } => (build_taxi(*appear_prob)?, format!("taxi(appear_prob={appear_prob})")),
        EnvSpec::Model { path } => (load_model(path)?, format!("model({})", path.display())),
        EnvSpec::Desk => (DeskInstance::new().mdp, "desk".to_string()),
    })
}

/// Trains the target and auxiliary policies by soft-max Q-learning. Taxi
/// policies are restricted to moves that stay on the grid.
pub fn train_policies(mdp: &TabularMdp, spec: &TrainSpec, grid_mask: bool) -> Result<(Policy, Policy)> {
    let legal = |s: usize, a: usize| is_legal(s, a);
    let mask: Option<&dyn Fn(usize, usize) -> bool> = if grid_mask { Some(&legal) } else { None };
    let mut rng_e = stream_rng(derive_seed(spec.seed, &[0]), 0);
    let mut rng_p = stream_rng(derive_seed(spec.seed, &[1]), 0);
    let target = q_learning_softmax(mdp, spec.q_config(spec.target_iterations), mask, &mut rng_e)?;
    let plus = q_learning_softmax(mdp, spec.q_config(spec.plus_iterations), mask, &mut rng_p)?;
    Ok((target, plus))
}

pub fn build_experiment(cfg: &SweepConfig) -> Result<Experiment> {
    let (mdp, label) = build_env(&cfg.env)?;
    let is_taxi = matches!(cfg.env, EnvSpec::Taxi { .. });
    let (target, plus) = match (&cfg.env, &cfg.policies) {
        (EnvSpec::Desk, None | Some(PolicySpec::Builtin)) => {
            let desk = DeskInstance::new();
            (desk.target, desk.auxiliary)
        }
        (_, Some(PolicySpec::Files { target, plus })) => (load_policy(target)?, load_policy(plus)?),
        (_, Some(PolicySpec::Train(spec))) => train_policies(&mdp, spec, is_taxi)?,
        _ => bail!("no policies configured for {label}"),
    };
    target.conforms_to(&mdp)?;
    plus.conforms_to(&mdp)?;
    Ok(Experiment { mdp, target, plus, label })
}
