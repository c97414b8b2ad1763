//! Aggregated empirical quantities of an episode batch.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::exact::exact_occupancy;
use crate::linalg::SparseRows;
use crate::mdp::{Episode, EpisodeBatch, Policy, TabularMdp};

/// Episodes per accumulation chunk. Fixed so that floating-point reduction
/// order does not depend on the number of workers.
const CHUNK: usize = 4096;

/// Empirical occupancies, transition counts and reward sums of a batch,
/// together with the linear system of the tabular minimax problem for one
/// target policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub m: usize,
    pub n_states: usize,
    pub n_actions: usize,
    /// Average visits per episode, `d̂(s, a)`.
    pub visit_counts: Vec<f64>,
    /// Total transition counts; rows `(s, a)`, columns `S₀ ∪ {ξ}`.
    pub transition_counts: SparseRows,
    /// Total observed reward per `(s, a)`.
    pub reward_sums: Vec<f64>,
    /// Empirical initial-state distribution.
    pub mu_hat: Vec<f64>,
    /// `Â = (1/m) Σᵢ Σₜ 1_{(sₜ,aₜ)} [Σ_a π_e(a|sₜ₊₁) 1ᵀ_{(sₜ₊₁,a)} − 1ᵀ_{(sₜ,aₜ)}]`,
    /// first term dropped when `sₜ₊₁ = ξ`.
    pub a_hat: SparseRows,
    /// `b = Σ μ̂(s) π_e(a|s) 1_{(s,a)}`.
    pub b_vec: Vec<f64>,
    pub target: Policy,
}

#[derive(Default)]
struct Partial {
    visits: Vec<f64>,
    transitions: HashMap<(usize, usize), f64>,
    rewards: Vec<f64>,
    starts: Vec<f64>,
}

impl Partial {
    fn new(n: usize, h: usize) -> Self {
        Self { visits: vec![0.0; n * h], transitions: HashMap::new(), rewards: vec![0.0; n * h], starts: vec![0.0; n] }
    }

    fn add(&mut self, ep: &Episode, h: usize) {
        self.starts[ep.states[0]] += 1.0;
        for t in 0..ep.len() {
            let i = ep.states[t] * h + ep.actions[t];
            self.visits[i] += 1.0;
            self.rewards[i] += ep.rewards[t];
            *self.transitions.entry((i, ep.states[t + 1])).or_insert(0.0) += 1.0;
        }
    }

    fn merge(&mut self, other: Partial) {
        for (a, b) in self.visits.iter_mut().zip(other.visits) {
            *a += b;
        }
        for (a, b) in self.rewards.iter_mut().zip(other.rewards) {
            *a += b;
        }
        for (a, b) in self.starts.iter_mut().zip(other.starts) {
            *a += b;
        }
        for (k, v) in other.transitions {
            *self.transitions.entry(k).or_insert(0.0) += v;
        }
    }
}

/// Aggregates a batch for target policy `pi_e`.
pub fn accumulate_stats(batch: &EpisodeBatch, pi_e: &Policy) -> Result<SufficientStats> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (n, h) = (batch.n_states, batch.n_actions);
    if pi_e.n_states() != n || pi_e.n_actions() != h {
        return Err(Error::Shape("target policy does not match batch".into()));
    }
    let chunk_stats = |chunk: &[Episode]| {
        let mut p = Partial::new(n, h);
        for ep in chunk {
            p.add(ep, h);
        }
        p
    };
    #[cfg(feature = "parallel")]
    let partials: Vec<Partial> = {
        use rayon::prelude::*;
        batch.episodes.par_chunks(CHUNK).map(chunk_stats).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<Partial> = batch.episodes.chunks(CHUNK).map(chunk_stats).collect();

    let mut total = Partial::new(n, h);
    for p in partials {
        total.merge(p);
    }
    let m = batch.len();
    let mut rows = vec![Vec::new(); n * h];
    for ((i, j), c) in total.transitions {
        rows[i].push((j, c));
    }
    let transition_counts = SparseRows::from_rows(n + 1, rows);
    let mu_hat = total.starts.iter().map(|c| c / m as f64).collect();
    Ok(SufficientStats::from_totals(m, n, h, &total.visits, transition_counts, total.rewards, mu_hat, pi_e))
}

impl SufficientStats {
    #[allow(clippy::too_many_arguments)]
    fn from_totals(
        m: usize,
        n: usize,
        h: usize,
        visit_totals: &[f64],
        transition_counts: SparseRows,
        reward_sums: Vec<f64>,
        mu_hat: Vec<f64>,
        pi_e: &Policy,
    ) -> Self {
        let mf = m as f64;
        let visit_counts: Vec<f64> = visit_totals.iter().map(|v| v / mf).collect();
        let rows = (0..n * h)
            .map(|i| {
                let mut row = Vec::new();
                for &(next, c) in transition_counts.row(i) {
                    if next == n {
                        continue;
                    }
                    for a in 0..h {
                        let p = pi_e.prob(next, a);
                        if p > 0.0 {
                            row.push((next * h + a, c / mf * p));
                        }
                    }
                }
                if visit_counts[i] != 0.0 {
                    row.push((i, -visit_counts[i]));
                }
                row
            })
            .collect();
        let a_hat = SparseRows::from_rows(n * h, rows);
        let b_vec = target_start_weights(&mu_hat, pi_e);
        Self {
            m,
            n_states: n,
            n_actions: h,
            visit_counts,
            transition_counts,
            reward_sums,
            mu_hat,
            a_hat,
            b_vec,
            target: pi_e.clone(),
        }
    }

    /// Statistics in the limit `m → ∞`, `H → ∞`: exact behavior occupancy,
    /// exact transition probabilities and mean rewards. Reported with `m = 1`.
    pub fn population(mdp: &TabularMdp, pi_b: &Policy, pi_e: &Policy) -> Result<Self> {
        pi_e.conforms_to(mdp)?;
        let d_b = exact_occupancy(mdp, pi_b)?.occupancy;
        let (n, h) = (mdp.n_states(), mdp.n_actions());
        let rows = (0..n * h)
            .map(|i| mdp.transition_row(i / h, i % h).iter().map(|&(j, p)| (j, p * d_b[i])).collect())
            .collect();
        let tc = SparseRows::from_rows(n + 1, rows);
        let rewards = d_b.iter().zip(mdp.mean_rewards()).map(|(d, r)| d * r).collect();
        Ok(Self::from_totals(1, n, h, &d_b, tc, rewards, mdp.initial_dist().to_vec(), pi_e))
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// `d̂(s, a) > 0`.
    pub fn support(&self) -> Vec<bool> {
        self.visit_counts.iter().map(|&v| v > 0.0).collect()
    }

    /// Average truncated episode length.
    pub fn mean_length(&self) -> f64 {
        self.visit_counts.iter().sum()
    }

    /// Total number of `(s, a, r, s′)` tuples.
    pub fn tuple_count(&self) -> f64 {
        self.visit_counts.iter().sum::<f64>() * self.m as f64
    }

    /// `Â` as a dense matrix.
    pub fn a_hat_dense(&self) -> nalgebra::DMatrix<f64> {
        self.a_hat.to_dense()
    }
}

/// `Σ μ(s) π(a|s) 1_{(s,a)}`.
pub(crate) fn target_start_weights(mu: &[f64], pi: &Policy) -> Vec<f64> {
    let h = pi.n_actions();
    let mut b = vec![0.0; mu.len() * h];
    for (s, &m) in mu.iter().enumerate() {
        for a in 0..h {
            b[s * h + a] = m * pi.prob(s, a);
        }
    }
    b
}
