//! Return estimators on episode batches.
//!
//! The weight-learning estimators (MWLA, MSWLA, discounted MWL) all reduce to
//! the same program: with `Ĝ = diag(1/d̂) Â` restricted to visited rows,
//!
//! ```text
//!     û = argmin_{u ≥ 0} ‖(Ĝ + λI)ᵀ u + b̂‖²,      ŵ = û / d̂ on the support,
//! ```
//!
//! where `û` estimates the target occupancy and `ŵ` the occupancy ratio.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{l2_norm, min_norm_lstsq, SparseRows};
use crate::mdp::{EpisodeBatch, Policy};
use crate::nnls::{nnls_transposed, NnlsOptions};
use crate::stats::{accumulate_stats, target_start_weights, SufficientStats};

/// Regularisation used by the experiments.
pub const DEFAULT_LAMBDA: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Mwla,
    Mswla,
    OnPolicy,
    Naive,
    Is,
    MwlGamma,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Mwla, Method::Mswla, Method::OnPolicy, Method::Naive, Method::Is, Method::MwlGamma];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Mwla => "MWLA",
            Method::Mswla => "MSWLA",
            Method::OnPolicy => "ON_POLICY",
            Method::Naive => "NAIVE",
            Method::Is => "IS",
            Method::MwlGamma => "MWL_GAMMA",
        }
    }

    /// Whether the method reads data generated by the target policy.
    pub fn uses_target_data(self) -> bool {
        matches!(self, Method::OnPolicy)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Run metadata attached to an estimate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimateMeta {
    pub m: usize,
    pub horizon: usize,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub method: Method,
    pub point_estimate: f64,
    pub meta: EstimateMeta,
    /// `false` when the weight solver hit its iteration cap.
    pub converged: bool,
}

impl EstimateReport {
    fn new(method: Method, point_estimate: f64, meta: EstimateMeta, converged: bool) -> Result<Self> {
        if !point_estimate.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(Self { method, point_estimate, meta, converged })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.meta.seed = Some(seed);
        self
    }
}

/// Estimated occupancy ratio and solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightEstimate {
    /// Ratio estimate, zero off the empirical support.
    pub w: Vec<f64>,
    /// Estimated target occupancy.
    pub u: Vec<f64>,
    /// `‖(Ĝ + λI)ᵀ u + b̂‖₂`.
    pub residual_norm: f64,
    pub lambda: f64,
    pub support_mask: Vec<bool>,
    pub converged: bool,
    pub iterations: usize,
    /// Numerical rank of the system (unconstrained solve only).
    pub rank: Option<usize>,
}

/// Solves the row-normalised weight program for a generic system.
///
/// `a` has one row per index; `density` is the empirical frequency used to
/// normalise rows and convert `u` back to a ratio.
fn solve_weights(a: &SparseRows, density: &[f64], b: &[f64], lambda: f64, nonneg: bool) -> Result<WeightEstimate> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let support: Vec<bool> = density.iter().map(|&d| d > 0.0).collect();
    let inv: Vec<f64> = density.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 }).collect();
    let mut g = a.clone();
    g.scale_rows(&inv);

    let (u, converged, iterations, rank) = if nonneg {
        let sol = nnls_transposed(&g, lambda, b, NnlsOptions::default());
        if !sol.converged {
            log::warn!(
                "nonnegative weight solve stopped after {} iterations (projected gradient {:.3e})",
                sol.iterations,
                sol.projected_gradient_norm
            );
        }
        (sol.x, sol.converged, sol.iterations, None)
    } else {
        let mut dense = g.to_dense().transpose();
        for i in 0..dense.nrows() {
            dense[(i, i)] += lambda;
        }
        let neg_b: Vec<f64> = b.iter().map(|v| -v).collect();
        let (u, rank) = min_norm_lstsq(dense, &neg_b);
        if rank < u.len() {
            log::debug!("weight system is rank deficient: rank {rank} of {}", u.len());
        }
        (u, true, 0, Some(rank))
    };

    let mut resid = g.tr_mul_vec(&u);
    for ((r, ui), bi) in resid.iter_mut().zip(&u).zip(b) {
        *r += lambda * ui + bi;
    }
    let residual_norm = l2_norm(&resid);
    let w = u.iter().zip(&inv).zip(&support).map(|((ui, iv), &on)| if on { ui * iv } else { 0.0 }).collect();
    Ok(WeightEstimate { w, u, residual_norm, lambda, support_mask: support, converged, iterations, rank })
}

/// State-action occupancy-ratio estimate from batch statistics.
pub fn mwla_solve(stats: &SufficientStats, lambda: f64, nonneg: bool) -> Result<WeightEstimate> {
    solve_weights(&stats.a_hat, &stats.visit_counts, &stats.b_vec, lambda, nonneg)
}

fn meta_from(stats: &SufficientStats, horizon: usize) -> EstimateMeta {
    EstimateMeta { m: stats.m, horizon, ..Default::default() }
}

/// `R̂ = Σ ŵ(s,a) · reward_sums(s,a) / m`.
pub fn mwla_return(stats: &SufficientStats, weights: &WeightEstimate) -> Result<EstimateReport> {
    if weights.w.len() != stats.n_pairs() {
        return Err(Error::Shape("weights do not match statistics".into()));
    }
    let total: f64 = weights
        .w
        .iter()
        .zip(&stats.reward_sums)
        .filter(|(w, _)| **w != 0.0)
        .map(|(w, r)| w * r)
        .sum();
    let mut meta = meta_from(stats, 0);
    meta.lambda = Some(weights.lambda);
    EstimateReport::new(Method::Mwla, total / stats.m as f64, meta, weights.converged)
}

/// Full MWLA pipeline on a batch.
pub fn mwla_estimate(batch: &EpisodeBatch, pi_e: &Policy, lambda: f64, nonneg: bool) -> Result<EstimateReport> {
    let stats = accumulate_stats(batch, pi_e)?;
    let weights = mwla_solve(&stats, lambda, nonneg)?;
    let mut report = mwla_return(&stats, &weights)?;
    report.meta.horizon = batch.truncation;
    Ok(report)
}

/// Empirical error `L̂_m(w, q)`; transitions into ξ contribute only the
/// `−w·q(s,a)` term.
pub fn empirical_error(stats: &SufficientStats, pi_e: &Policy, w: &[f64], q: &[f64]) -> Result<f64> {
    let (n, h) = (stats.n_states, stats.n_actions);
    if w.len() != n * h || q.len() != n * h || pi_e.n_states() != n || pi_e.n_actions() != h {
        return Err(Error::Shape("tables do not conform to statistics".into()));
    }
    let mf = stats.m as f64;
    let q_pi: Vec<f64> = (0..n).map(|s| pi_e.expect(q, s)).collect();
    let mut total = 0.0;
    for i in 0..n * h {
        if w[i] == 0.0 {
            continue;
        }
        let next: f64 = stats
            .transition_counts
            .row(i)
            .iter()
            .filter(|&&(j, _)| j < n)
            .map(|&(j, c)| c * q_pi[j])
            .sum();
        total += w[i] * (next / mf - stats.visit_counts[i] * q[i]);
    }
    Ok(total + stats.mu_hat.iter().zip(&q_pi).map(|(m, v)| m * v).sum::<f64>())
}

fn check_behavior(stats: &SufficientStats, pi_b: &Policy) -> Result<()> {
    if pi_b.n_states() != stats.n_states || pi_b.n_actions() != stats.n_actions {
        return Err(Error::Shape("behavior policy does not match statistics".into()));
    }
    // Coverage is required on every visited state, including actions the
    // data never shows.
    let h = stats.n_actions;
    for s in 0..stats.n_states {
        if stats.visit_counts[s * h..(s + 1) * h].iter().all(|&v| v == 0.0) {
            continue;
        }
        for a in 0..h {
            if pi_b.prob(s, a) == 0.0 && (stats.visit_counts[s * h + a] > 0.0 || stats.target.prob(s, a) > 0.0) {
                return Err(Error::ZeroBehaviorProbability { state: s, action: a });
            }
        }
    }
    Ok(())
}

/// State-weight estimate for a known behavior policy, plus the ratio table
/// `π_e/π_b` it was built with.
pub fn mswla_weights(stats: &SufficientStats, pi_b: &Policy, lambda: f64, nonneg: bool) -> Result<WeightEstimate> {
    check_behavior(stats, pi_b)?;
    let (n, h) = (stats.n_states, stats.n_actions);
    let mf = stats.m as f64;
    let pi_e = &stats.target;
    let mut density = vec![0.0; n];
    let mut rows = vec![Vec::new(); n];
    for s in 0..n {
        for a in 0..h {
            let i = s * h + a;
            if stats.visit_counts[i] == 0.0 {
                continue;
            }
            density[s] += stats.visit_counts[i];
            let rho = pi_e.prob(s, a) / pi_b.prob(s, a);
            for &(j, c) in stats.transition_counts.row(i) {
                if j < n {
                    rows[s].push((j, rho * c / mf));
                }
            }
        }
        if density[s] != 0.0 {
            rows[s].push((s, -density[s]));
        }
    }
    let a = SparseRows::from_rows(n, rows);
    solve_weights(&a, &density, &stats.mu_hat, lambda, nonneg)
}

/// MSWLA return from precomputed statistics.
pub fn mswla_from_stats(stats: &SufficientStats, pi_b: &Policy, lambda: f64, nonneg: bool) -> Result<EstimateReport> {
    let weights = mswla_weights(stats, pi_b, lambda, nonneg)?;
    let h = stats.n_actions;
    let pi_e = &stats.target;
    let mut total = 0.0;
    for (i, &r) in stats.reward_sums.iter().enumerate() {
        if stats.visit_counts[i] == 0.0 {
            continue;
        }
        let (s, a) = (i / h, i % h);
        total += weights.w[s] * pi_e.prob(s, a) / pi_b.prob(s, a) * r;
    }
    let mut meta = meta_from(stats, 0);
    meta.lambda = Some(lambda);
    EstimateReport::new(Method::Mswla, total / stats.m as f64, meta, weights.converged)
}

/// MSWLA on a batch (behavior policy known).
pub fn mswla_solve(batch: &EpisodeBatch, pi_e: &Policy, pi_b: &Policy, lambda: f64) -> Result<EstimateReport> {
    mswla_solve_with(batch, pi_e, pi_b, lambda, true)
}

pub fn mswla_solve_with(
    batch: &EpisodeBatch,
    pi_e: &Policy,
    pi_b: &Policy,
    lambda: f64,
    nonneg: bool,
) -> Result<EstimateReport> {
    let stats = accumulate_stats(batch, pi_e)?;
    let mut report = mswla_from_stats(&stats, pi_b, lambda, nonneg)?;
    report.meta.horizon = batch.truncation;
    Ok(report)
}

fn batch_meta(batch: &EpisodeBatch) -> EstimateMeta {
    EstimateMeta { m: batch.len(), horizon: batch.truncation, ..Default::default() }
}

fn mean_return(batch: &EpisodeBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(batch.episodes.iter().map(|e| e.total_reward()).sum::<f64>() / batch.len() as f64)
}

/// Mean truncated return of behavior-policy episodes.
pub fn naive_average(batch: &EpisodeBatch) -> Result<EstimateReport> {
    EstimateReport::new(Method::Naive, mean_return(batch)?, batch_meta(batch), true)
}

/// Mean truncated return of target-policy episodes.
pub fn on_policy_estimate(batch: &EpisodeBatch) -> Result<EstimateReport> {
    EstimateReport::new(Method::OnPolicy, mean_return(batch)?, batch_meta(batch), true)
}

/// Whole-trajectory importance sampling,
/// `(1/m) Σᵢ (Πₜ π_e(aₜ|sₜ)/π_b(aₜ|sₜ)) Σₜ rₜ`.
pub fn trajectory_is(batch: &EpisodeBatch, pi_e: &Policy, pi_b: &Policy) -> Result<EstimateReport> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for ep in &batch.episodes {
        let mut weight = 1.0;
        for (&s, &a) in ep.states.iter().zip(&ep.actions) {
            let pb = pi_b.prob(s, a);
            if pb == 0.0 {
                return Err(Error::ZeroBehaviorProbability { state: s, action: a });
            }
            weight *= pi_e.prob(s, a) / pb;
        }
        total += weight * ep.total_reward();
    }
    EstimateReport::new(Method::Is, total / batch.len() as f64, batch_meta(batch), true)
}

/// Discounted minimax weight learning on the `(s, a, r, s′)` tuples of the
/// batch, using the normalised discounted-occupancy convention:
///
/// ```text
///   Â_γ = (1/N) Σ 1_{(s,a)} [γ Σ_a′ π_e(a′|s′) 1ᵀ_{(s′,a′)} − 1ᵀ_{(s,a)}],   b̂_γ = (1−γ) μ̂⊗π_e,
///   R̂_γ = 1/(1−γ) · Σ ŵ(s,a) · reward_sums(s,a) / N.
/// ```
pub fn mwl_gamma_from_stats(stats: &SufficientStats, gamma: f64, lambda: f64, nonneg: bool) -> Result<EstimateReport> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("discount must lie in (0, 1), got {gamma}")));
    }
    let (n, h) = (stats.n_states, stats.n_actions);
    let pi_e = &stats.target;
    let tuples = stats.tuple_count();
    if tuples == 0.0 {
        return Err(Error::EmptyBatch);
    }
    let mf = stats.m as f64;
    let freq: Vec<f64> = stats.visit_counts.iter().map(|v| v * mf / tuples).collect();
    let rows = (0..n * h)
        .map(|i| {
            let mut row = Vec::new();
            for &(j, c) in stats.transition_counts.row(i) {
                if j == n {
                    continue;
                }
                for a in 0..h {
                    let p = pi_e.prob(j, a);
                    if p > 0.0 {
                        row.push((j * h + a, gamma * c * p / tuples));
                    }
                }
            }
            if freq[i] != 0.0 {
                row.push((i, -freq[i]));
            }
            row
        })
        .collect();
    let a = SparseRows::from_rows(n * h, rows);
    let b: Vec<f64> = target_start_weights(&stats.mu_hat, pi_e).into_iter().map(|v| (1.0 - gamma) * v).collect();
    let weights = solve_weights(&a, &freq, &b, lambda, nonneg)?;
    let total: f64 = weights.w.iter().zip(&stats.reward_sums).map(|(w, r)| w * r).sum();
    let meta = EstimateMeta { m: stats.m, horizon: 0, lambda: Some(lambda), gamma: Some(gamma), seed: None };
    EstimateReport::new(Method::MwlGamma, total / tuples / (1.0 - gamma), meta, weights.converged)
}

pub fn mwl_gamma_solve(batch: &EpisodeBatch, pi_e: &Policy, gamma: f64, lambda: f64) -> Result<EstimateReport> {
    let stats = accumulate_stats(batch, pi_e)?;
    let mut report = mwl_gamma_from_stats(&stats, gamma, lambda, true)?;
    report.meta.horizon = batch.truncation;
    Ok(report)
}
