//! Finite absorbing MDPs, stationary policies and truncated episodes.
//!
//! Non-absorbing states are `0..n_states`; the single absorbing state ξ is
//! the implicit index `n_states`. Nothing is stored for ξ: it has zero reward
//! and a self-loop under every action.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{spectral_radius_nonneg, SparseRows};
use crate::seed::stream_rng;

const PROB_TOL: f64 = 1e-12;

/// Finite MDP with one absorbing state.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Row `s·h + a` lists `(next, prob)` sorted by `next`; `next == n_states` is ξ.
    transitions: Vec<Vec<(usize, f64)>>,
    mean_reward: Vec<f64>,
    reward_noise_halfwidth: f64,
    initial_dist: Vec<f64>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::InvalidModel(format!("{what}: entry {x} is negative or non-finite")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidModel(format!("{what}: sums to {total:.17}")));
    }
    Ok(())
}

impl TabularMdp {
    /// Builds a model from a dense kernel laid out row-major as
    /// `transition[((s·h) + a)·(n+1) + s′]`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: &[f64],
        mean_reward: Vec<f64>,
        initial_dist: Vec<f64>,
        reward_noise_halfwidth: f64,
    ) -> Result<Self> {
        let width = n_states + 1;
        if transition.len() != n_states * n_actions * width {
            return Err(Error::Shape(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * width
            )));
        }
        let rows = transition
            .chunks(width)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &p)| p != 0.0)
                    .map(|(j, &p)| (j, p))
                    .collect()
            })
            .collect();
        Self::from_sparse(n_states, n_actions, rows, mean_reward, initial_dist, reward_noise_halfwidth)
    }

    /// Builds a model from sparse rows, one per `(s, a)` in `s·h + a` order.
    pub fn from_sparse(
        n_states: usize,
        n_actions: usize,
        rows: Vec<Vec<(usize, f64)>>,
        mean_reward: Vec<f64>,
        initial_dist: Vec<f64>,
        reward_noise_halfwidth: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidModel("need at least one state and one action".into()));
        }
        let sa = n_states * n_actions;
        if rows.len() != sa || mean_reward.len() != sa || initial_dist.len() != n_states {
            return Err(Error::Shape(format!(
                "rows {}, rewards {}, initial {} for n={n_states}, h={n_actions}",
                rows.len(),
                mean_reward.len(),
                initial_dist.len()
            )));
        }
        if !(reward_noise_halfwidth >= 0.0 && reward_noise_halfwidth.is_finite()) {
            return Err(Error::InvalidModel("reward noise halfwidth must be finite and >= 0".into()));
        }
        if mean_reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidModel("non-finite mean reward".into()));
        }
        check_distribution(&initial_dist, "initial distribution")?;
        let transitions = SparseRows::from_rows(n_states + 1, rows);
        let transitions: Vec<Vec<(usize, f64)>> =
            (0..sa).map(|i| transitions.row(i).to_vec()).collect();
        for (i, row) in transitions.iter().enumerate() {
            let probs: Vec<f64> = row.iter().map(|&(_, p)| p).collect();
            check_distribution(&probs, &format!("transition row (s={}, a={})", i / n_actions, i % n_actions))?;
        }
        let mdp = Self { n_states, n_actions, transitions, mean_reward, reward_noise_halfwidth, initial_dist };
        let rho = mdp.uniform_policy_spectral_radius();
        if rho >= 1.0 - 1e-12 {
            log::warn!(
                "uniform-random policy does not appear to absorb (spectral radius {rho:.6}); \
                 exact solves may fail for some policies"
            );
        }
        Ok(mdp)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Index of ξ.
    pub fn absorbing(&self) -> usize {
        self.n_states
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    #[inline]
    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[self.pair(s, a)]
    }

    /// `P(s′ | s, a)`, with `s′ == n_states` meaning ξ.
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        let row = self.transition_row(s, a);
        row.binary_search_by_key(&next, |&(j, _)| j).map(|k| row[k].1).unwrap_or(0.0)
    }

    pub fn absorb_prob(&self, s: usize, a: usize) -> f64 {
        self.prob(s, a, self.n_states)
    }

    pub fn mean_reward(&self, s: usize, a: usize) -> f64 {
        self.mean_reward[self.pair(s, a)]
    }

    pub fn mean_rewards(&self) -> &[f64] {
        &self.mean_reward
    }

    pub fn reward_noise_halfwidth(&self) -> f64 {
        self.reward_noise_halfwidth
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    /// Dense row-major kernel, `((s·h)+a)·(n+1) + s′`.
    pub fn dense_transition(&self) -> Vec<f64> {
        let width = self.n_states + 1;
        let mut out = vec![0.0; self.n_pairs() * width];
        for (i, row) in self.transitions.iter().enumerate() {
            for &(j, p) in row {
                out[i * width + j] = p;
            }
        }
        out
    }

    /// State-to-state substochastic matrix on S₀ under `policy`.
    pub fn state_matrix(&self, policy: &Policy) -> SparseRows {
        let rows = (0..self.n_states)
            .map(|s| {
                let mut row = Vec::new();
                for a in 0..self.n_actions {
                    let pa = policy.prob(s, a);
                    if pa == 0.0 {
                        continue;
                    }
                    for &(j, p) in self.transition_row(s, a) {
                        if j < self.n_states {
                            row.push((j, pa * p));
                        }
                    }
                }
                row
            })
            .collect();
        SparseRows::from_rows(self.n_states, rows)
    }

    /// Spectral radius of the uniform-random policy's substochastic matrix
    /// on S₀ (1000 power iterations).
    pub fn uniform_policy_spectral_radius(&self) -> f64 {
        let uniform = Policy::uniform(self.n_states, self.n_actions);
        spectral_radius_nonneg(&self.state_matrix(&uniform), 1000)
    }

    fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let row = self.transition_row(s, a);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(j, p) in row {
            acc += p;
            if u < acc {
                return j;
            }
        }
        row.last().map(|&(j, _)| j).unwrap_or(self.n_states)
    }

    fn sample_reward<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> f64 {
        let mean = self.mean_reward(s, a);
        if self.reward_noise_halfwidth > 0.0 {
            let u: f64 = rng.random();
            mean + self.reward_noise_halfwidth * (2.0 * u - 1.0)
        } else {
            mean
        }
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.initial_dist, rng)
    }

    /// One environment step: `(reward, next_state)`.
    pub fn step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> (f64, usize) {
        let r = self.sample_reward(s, a, rng);
        (r, self.sample_next(s, a, rng))
    }

    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sample_initial(rng)
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Stationary randomised policy `π(a|s)` over S₀.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::Shape(format!(
                "policy table has {} entries, expected {}",
                probs.len(),
                n_states * n_actions
            )));
        }
        for (s, row) in probs.chunks(n_actions.max(1)).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidPolicy(format!("row {s} has a negative or non-finite entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {total:.17}")));
            }
        }
        Ok(Self { n_states, n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, probs: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `q(s, π) = Σ_a π(a|s) q(s, a)`.
    pub fn expect(&self, q: &[f64], s: usize) -> f64 {
        self.row(s).iter().zip(&q[s * self.n_actions..]).map(|(p, v)| p * v).sum()
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_index(self.row(s), rng)
    }

    pub fn conforms_to(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states() || self.n_actions != mdp.n_actions() {
            return Err(Error::Shape(format!(
                "policy is {}x{}, model is {}x{}",
                self.n_states,
                self.n_actions,
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }
}

/// One trajectory truncated at `truncation` steps. `states` has one more
/// entry than `actions`; its last entry is ξ when `absorbed`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub absorbed: bool,
    pub truncation: usize,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Episodes sharing one `(n, h, H)` signature.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBatch {
    pub n_states: usize,
    pub n_actions: usize,
    pub truncation: usize,
    pub episodes: Vec<Episode>,
}

impl EpisodeBatch {
    pub fn new(n_states: usize, n_actions: usize, truncation: usize, episodes: Vec<Episode>) -> Result<Self> {
        for (i, ep) in episodes.iter().enumerate() {
            let ok = ep.states.len() == ep.actions.len() + 1
                && ep.rewards.len() == ep.actions.len()
                && !ep.actions.is_empty()
                && ep.actions.len() <= truncation
                && (ep.absorbed || ep.actions.len() == truncation)
                && ep.rewards.iter().all(|r| r.is_finite())
                && ep.truncation == truncation
                && ep.actions.iter().all(|&a| a < n_actions)
                && ep.states[..ep.actions.len()].iter().all(|&s| s < n_states)
                && *ep.states.last().unwrap() <= n_states
                && ep.absorbed == (*ep.states.last().unwrap() == n_states);
            if !ok {
                return Err(Error::Shape(format!("episode {i} does not match batch signature")));
            }
        }
        Ok(Self { n_states, n_actions, truncation, episodes })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn mean_length(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.len() as f64).sum::<f64>() / self.episodes.len() as f64
    }
}

/// Samples one episode `s₀∼μ, aₜ∼π(·|sₜ), rₜ, sₜ₊₁∼P`, stopping at ξ or after
/// `truncation` steps.
pub fn sample_episode<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &Policy,
    truncation: usize,
    rng: &mut R,
) -> Episode {
    assert!(truncation >= 1, "truncation must be at least 1");
    let xi = mdp.absorbing();
    let mut s = mdp.sample_initial(rng);
    let mut states = vec![s];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut absorbed = false;
    for _ in 0..truncation {
        let a = policy.sample_action(s, rng);
        let (r, next) = mdp.step(s, a, rng);
        actions.push(a);
        rewards.push(r);
        states.push(next);
        if next == xi {
            absorbed = true;
            break;
        }
        s = next;
    }
    Episode { states, actions, rewards, absorbed, truncation }
}

/// Samples `m` episodes; episode `i` uses ChaCha stream `i` of `seed`, so the
/// batch is identical for any worker count.
pub fn sample_batch(mdp: &TabularMdp, policy: &Policy, m: usize, truncation: usize, seed: u64) -> EpisodeBatch {
    let episodes = sample_episodes(mdp, policy, 0..m, truncation, seed);
    EpisodeBatch { n_states: mdp.n_states(), n_actions: mdp.n_actions(), truncation, episodes }
}

/// Episodes with stream indices in `streams`; `sample_batch` is the range
/// `0..m`, so a batch can be extended without changing its prefix.
pub fn sample_episodes(
    mdp: &TabularMdp,
    policy: &Policy,
    streams: std::ops::Range<usize>,
    truncation: usize,
    seed: u64,
) -> Vec<Episode> {
    let one = |i: usize| {
        let mut rng = stream_rng(seed, i as u64);
        sample_episode(mdp, policy, truncation, &mut rng)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        streams.into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    streams.map(one).collect()
}

/// Turns a discounted model over S₀ into an absorbing one: every transition
/// is kept with probability γ and otherwise goes to ξ. Rewards on S₀ are
/// unchanged. Mass the source already sends to ξ is scaled by γ as well.
pub fn absorbing_from_discounted(mdp: &TabularMdp, gamma: f64) -> Result<TabularMdp> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("discount must lie in (0, 1), got {gamma}")));
    }
    let xi = mdp.absorbing();
    let rows = mdp
        .transitions
        .iter()
        .map(|row| {
            let mut out: Vec<(usize, f64)> = row.iter().map(|&(j, p)| (j, gamma * p)).collect();
            out.push((xi, 1.0 - gamma));
            out
        })
        .collect();
    TabularMdp::from_sparse(
        mdp.n_states,
        mdp.n_actions,
        rows,
        mdp.mean_reward.clone(),
        mdp.initial_dist.clone(),
        mdp.reward_noise_halfwidth,
    )
}
