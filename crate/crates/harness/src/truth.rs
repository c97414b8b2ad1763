//! Ground-truth values of the target policy: exact linear solve plus a
//! truncated on-policy Monte-Carlo estimate.

use anyhow::Result;
use ope_absorb::exact::exact_return;
use ope_absorb::mdp::{sample_episodes, Policy, TabularMdp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Episodes per Monte-Carlo chunk; partial sums are merged in chunk order.
const CHUNK: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloTruth {
    pub mean: f64,
    pub standard_error: f64,
    pub episodes: usize,
    pub truncation: usize,
    /// Share of episodes that reached ξ before the truncation level.
    pub absorbed_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub exact: Option<f64>,
    pub monte_carlo: Option<MonteCarloTruth>,
}

#[derive(Default, Clone, Copy)]
struct Sums {
    n: usize,
    total: f64,
    total_sq: f64,
    absorbed: usize,
}

/// Mean truncated return of `episodes` on-policy trajectories.
pub fn monte_carlo_truth(
    mdp: &TabularMdp,
    pi_e: &Policy,
    episodes: usize,
    truncation: usize,
    seed: u64,
) -> MonteCarloTruth {
    let chunks = episodes.div_ceil(CHUNK);
    let parts: Vec<Sums> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let range = c * CHUNK..((c + 1) * CHUNK).min(episodes);
            let mut s = Sums::default();
            for ep in sample_episodes(mdp, pi_e, range, truncation, seed) {
                let r = ep.total_reward();
                s.n += 1;
                s.total += r;
                s.total_sq += r * r;
                s.absorbed += ep.absorbed as usize;
            }
            s
        })
        .collect();
    let mut all = Sums::default();
    for p in parts {
        all.n += p.n;
        all.total += p.total;
        all.total_sq += p.total_sq;
        all.absorbed += p.absorbed;
    }
    let n = all.n.max(1) as f64;
    let mean = all.total / n;
    let var = if all.n > 1 { ((all.total_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    MonteCarloTruth {
        mean,
        standard_error: (var / n).sqrt(),
        episodes,
        truncation,
        absorbed_fraction: all.absorbed as f64 / n,
    }
}

/// Exact value and, when `episodes > 0`, the Monte-Carlo estimate.
pub fn ground_truth(
    mdp: &TabularMdp,
    pi_e: &Policy,
    episodes: usize,
    truncation: usize,
    seed: u64,
) -> Result<GroundTruth> {
    let exact = Some(exact_return(mdp, pi_e)?);
    let monte_carlo = (episodes > 0).then(|| monte_carlo_truth(mdp, pi_e, episodes, truncation, seed));
    Ok(GroundTruth { exact, monte_carlo })
}
