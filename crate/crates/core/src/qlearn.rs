//! Tabular Q-learning with soft-max policy extraction, and policy mixing.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMdp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Constant(f64),
    /// `scale / (1 + visits(s, a))^power`
    Decaying { scale: f64, power: f64 },
}

impl StepSize {
    fn at(self, visits: u64) -> f64 {
        match self {
            StepSize::Constant(a) => a,
            StepSize::Decaying { scale, power } => scale / (1.0 + visits as f64).powf(power),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QLearningConfig {
    /// Number of sampled transitions.
    pub iterations: usize,
    pub temperature: f64,
    pub step_size: StepSize,
    pub discount: f64,
    /// Episodes of the exploratory behavior are restarted after this many
    /// steps even if not absorbed.
    pub max_episode_len: usize,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        Self {
            iterations: 400_000,
            temperature: 1.0,
            step_size: StepSize::Constant(0.1),
            discount: 0.99,
            max_episode_len: 1000,
        }
    }
}

/// Learned action values plus the hyperparameters that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
    pub config: QLearningConfig,
}

impl QTable {
    pub fn value(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn greedy_action(&self, s: usize) -> usize {
        let row = &self.values[s * self.n_actions..(s + 1) * self.n_actions];
        let mut best = 0;
        for (a, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = a;
            }
        }
        best
    }

    /// `π(a|s) ∝ exp(Q(s,a)/τ)` over the actions `legal(s, a)` allows;
    /// disallowed actions get probability 0. `τ = ∞` gives the uniform
    /// distribution over legal actions.
    pub fn softmax_policy(&self, temperature: f64, legal: Option<&dyn Fn(usize, usize) -> bool>) -> Result<Policy> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
        }
        let h = self.n_actions;
        let mut probs = vec![0.0; self.n_states * h];
        for s in 0..self.n_states {
            let allowed: Vec<bool> = (0..h).map(|a| legal.is_none_or(|f| f(s, a))).collect();
            let row = &self.values[s * h..(s + 1) * h];
            let max = row
                .iter()
                .zip(&allowed)
                .filter(|(_, &ok)| ok)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::InvalidPolicy(format!("every action is masked in state {s}")));
            }
            let out = &mut probs[s * h..(s + 1) * h];
            for a in 0..h {
                if allowed[a] {
                    out[a] = if temperature.is_infinite() { 1.0 } else { ((row[a] - max) / temperature).exp() };
                }
            }
            let z: f64 = out.iter().sum();
            for p in out.iter_mut() {
                *p /= z;
            }
        }
        Policy::new(self.n_states, h, probs)
    }
}

/// Off-policy Q-learning on transitions drawn from a uniform-random behavior
/// with episode restarts. `Q(ξ, ·) = 0`.
pub fn q_learning<R: Rng + ?Sized>(env: &TabularMdp, config: QLearningConfig, rng: &mut R) -> Result<QTable> {
    if config.iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&config.discount) {
        return Err(Error::InvalidArgument(format!("discount must lie in [0, 1], got {}", config.discount)));
    }
    let (n, h) = (env.n_states(), env.n_actions());
    let xi = env.absorbing();
    let mut q = vec![0.0; n * h];
    let mut visits = vec![0u64; n * h];
    let mut s = env.sample_initial_state(rng);
    let mut t = 0;
    for _ in 0..config.iterations {
        let a = rng.random_range(0..h);
        let (r, next) = env.step(s, a, rng);
        let i = s * h + a;
        let target = if next == xi {
            r
        } else {
            let best = q[next * h..(next + 1) * h].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            r + config.discount * best
        };
        let alpha = config.step_size.at(visits[i]);
        visits[i] += 1;
        q[i] += alpha * (target - q[i]);
        t += 1;
        if next == xi || t >= config.max_episode_len {
            s = env.sample_initial_state(rng);
            t = 0;
        } else {
            s = next;
        }
    }
    Ok(QTable { n_states: n, n_actions: h, values: q, config })
}

/// Q-learning followed by soft-max extraction at the configured temperature.
pub fn q_learning_softmax<R: Rng + ?Sized>(
    env: &TabularMdp,
    config: QLearningConfig,
    legal: Option<&dyn Fn(usize, usize) -> bool>,
    rng: &mut R,
) -> Result<Policy> {
    q_learning(env, config, rng)?.softmax_policy(config.temperature, legal)
}

/// `α·π_e + (1−α)·π⁺`.
pub fn mix_policies(pi_e: &Policy, pi_plus: &Policy, alpha: f64) -> Result<Policy> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if pi_e.n_states() != pi_plus.n_states() || pi_e.n_actions() != pi_plus.n_actions() {
        return Err(Error::Shape("policies have different shapes".into()));
    }
    if alpha == 1.0 {
        return Ok(pi_e.clone());
    }
    if alpha == 0.0 {
        return Ok(pi_plus.clone());
    }
    let probs = pi_e.probs().iter().zip(pi_plus.probs()).map(|(e, p)| alpha * e + (1.0 - alpha) * p).collect();
    Policy::new(pi_e.n_states(), pi_e.n_actions(), probs)
}
