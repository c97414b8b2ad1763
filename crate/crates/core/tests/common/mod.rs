#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ope_absorb::prelude::*;
use rand::Rng;

/// Random full-support model with two soft-max policies.
pub fn instance(seed: u64, k: u64, max_states: usize, max_actions: usize) -> (TabularMdp, Policy, Policy) {
    let mut rng = stream_rng(seed, k);
    let n = rng.random_range(2..=max_states);
    let h = rng.random_range(1..=max_actions);
    let mdp = random_mdp(RandomMdpSpec::new(n, h), &mut rng);
    let pi_e = random_softmax_policy(n, h, 1.0, &mut rng);
    let pi_b = random_softmax_policy(n, h, 1.0, &mut rng);
    (mdp, pi_e, pi_b)
}

pub fn random_table<R: Rng>(len: usize, lo: f64, hi: f64, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
}

/// One-step state-action kernel `M[(s,a),(s′,a′)] = P(s′|s,a) π(a′|s′)`.
pub fn pair_kernel(mdp: &TabularMdp, pi: &Policy) -> DMatrix<f64> {
    let (n, h) = (mdp.n_states(), mdp.n_actions());
    let mut m = DMatrix::zeros(n * h, n * h);
    for s in 0..n {
        for a in 0..h {
            for s2 in 0..n {
                for a2 in 0..h {
                    m[(s * h + a, s2 * h + a2)] = mdp.prob(s, a, s2) * pi.prob(s2, a2);
                }
            }
        }
    }
    m
}

pub fn start_weights(mdp: &TabularMdp, pi: &Policy) -> DVector<f64> {
    let (n, h) = (mdp.n_states(), mdp.n_actions());
    DVector::from_fn(n * h, |i, _| mdp.initial_dist()[i / h] * pi.prob(i / h, i % h))
}

/// Occupancy from the state-action system `(I − Mᵀ) d = μ⊗π`, by matrix inverse.
pub fn pair_occupancy(mdp: &TabularMdp, pi: &Policy) -> Vec<f64> {
    let m = pair_kernel(mdp, pi);
    let k = m.nrows();
    let inv = (DMatrix::identity(k, k) - m.transpose()).try_inverse().expect("invertible");
    (inv * start_weights(mdp, pi)).as_slice().to_vec()
}

/// `Σ_{t<H} (Mᵀ)ᵗ μ⊗π`.
pub fn truncated_occupancy(mdp: &TabularMdp, pi: &Policy, horizon: usize) -> Vec<f64> {
    let mt = pair_kernel(mdp, pi).transpose();
    let mut x = start_weights(mdp, pi);
    let mut total = x.clone();
    for _ in 1..horizon {
        x = &mt * x;
        total += &x;
    }
    total.as_slice().to_vec()
}

/// `Σ γᵗ E[rₜ]` by value iteration to machine precision.
pub fn discounted_value_iteration(mdp: &TabularMdp, pi: &Policy, gamma: f64) -> f64 {
    let (n, h) = (mdp.n_states(), mdp.n_actions());
    let mut v = vec![0.0; n];
    for _ in 0..200_000 {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                (0..h)
                    .map(|a| {
                        let cont: f64 = (0..n).map(|s2| mdp.prob(s, a, s2) * v[s2]).sum();
                        pi.prob(s, a) * (mdp.mean_reward(s, a) + gamma * cont)
                    })
                    .sum()
            })
            .collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = next.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        v = next;
        if delta <= 1e-15 * scale {
            break;
        }
    }
    v.iter().zip(mdp.initial_dist()).map(|(v, m)| v * m).sum()
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
