//! Random model generators and the fixed 8-state benchmark instance.

use rand::Rng;

use crate::mdp::{Policy, TabularMdp};
use crate::qlearn::mix_policies;
use crate::seed::stream_rng;
use crate::error::Result;

fn dirichlet_flat<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Parameters of [`random_mdp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomMdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    /// Per-step absorption probability is uniform on this interval.
    pub absorb: (f64, f64),
    /// Mean rewards are uniform on this interval.
    pub reward: (f64, f64),
    pub noise_halfwidth: f64,
}

impl RandomMdpSpec {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, absorb: (0.2, 0.5), reward: (0.0, 1.0), noise_halfwidth: 0.0 }
    }
}

/// Dense random absorbing MDP: every `(s, a)` reaches every state and ξ with
/// positive probability, and `μ` has full support.
pub fn random_mdp<R: Rng + ?Sized>(spec: RandomMdpSpec, rng: &mut R) -> TabularMdp {
    let (n, h) = (spec.n_states, spec.n_actions);
    let mut transition = Vec::with_capacity(n * h * (n + 1));
    let mut rewards = Vec::with_capacity(n * h);
    for _ in 0..n * h {
        let q = spec.absorb.0 + (spec.absorb.1 - spec.absorb.0) * rng.random::<f64>();
        let spread = dirichlet_flat(n, rng);
        transition.extend(spread.iter().map(|p| p * (1.0 - q)));
        // Put the rounding slack on ξ so the row sums to one.
        let stay: f64 = transition[transition.len() - n..].iter().sum();
        transition.push(1.0 - stay);
        rewards.push(spec.reward.0 + (spec.reward.1 - spec.reward.0) * rng.random::<f64>());
    }
    let mu = dirichlet_flat(n, rng);
    let mu_sum: f64 = mu.iter().sum();
    let mu = mu.into_iter().map(|x| x / mu_sum).collect();
    TabularMdp::new(n, h, &transition, rewards, mu, spec.noise_halfwidth).expect("generated model is valid")
}

/// Soft-max policy with logits uniform on `[−scale, scale]`.
pub fn random_softmax_policy<R: Rng + ?Sized>(n_states: usize, n_actions: usize, scale: f64, rng: &mut R) -> Policy {
    let mut probs = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states {
        let logits: Vec<f64> = (0..n_actions).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        probs.extend(exps.into_iter().map(|e| e / z));
    }
    Policy::new(n_states, n_actions, probs).expect("soft-max rows are distributions")
}

/// Fixed 8-state, 3-action model with a target and an auxiliary soft-max
/// policy, used for desk-scale experiments.
#[derive(Debug, Clone)]
pub struct DeskInstance {
    pub mdp: TabularMdp,
    pub target: Policy,
    pub auxiliary: Policy,
}

pub const DESK_SEED: u64 = 0x5eed_0de5;

impl DeskInstance {
    pub fn new() -> Self {
        let mut rng = stream_rng(DESK_SEED, 0);
        let spec = RandomMdpSpec { absorb: (0.1, 0.25), reward: (0.0, 1.0), noise_halfwidth: 0.5, ..RandomMdpSpec::new(8, 3) };
        let mdp = random_mdp(spec, &mut rng);
        let target = random_softmax_policy(8, 3, 2.0, &mut rng);
        let auxiliary = random_softmax_policy(8, 3, 2.0, &mut rng);
        Self { mdp, target, auxiliary }
    }

    /// `α·π_e + (1−α)·π⁺`.
    pub fn behavior(&self, alpha: f64) -> Result<Policy> {
        mix_policies(&self.target, &self.auxiliary, alpha)
    }
}

impl Default for DeskInstance {
    fn default() -> Self {
        Self::new()
    }
}
