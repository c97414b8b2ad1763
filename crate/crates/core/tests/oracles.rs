mod common;

use common::*;
use ope_absorb::prelude::*;
use rand::Rng;

fn geometric(p_absorb: f64) -> TabularMdp {
    TabularMdp::new(1, 1, &[1.0 - p_absorb, p_absorb], vec![1.0], vec![1.0], 0.0).unwrap()
}

#[test]
fn forced_absorption_and_deterministic_chain() {
    let mdp = geometric(1.0);
    let ep = sample_episode(&mdp, &Policy::uniform(1, 1), 10, &mut stream_rng(0, 0));
    assert_eq!(ep.len(), 1);
    assert!(ep.absorbed);

    #[rustfmt::skip]
    let p = [
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    ];
    let chain = TabularMdp::new(3, 1, &p, vec![0.0; 3], vec![1.0, 0.0, 0.0], 0.0).unwrap();
    let ep = sample_episode(&chain, &Policy::uniform(3, 1), 2, &mut stream_rng(0, 0));
    assert_eq!(ep.states, vec![0, 1, 2]);
    assert_eq!(ep.len(), 2);
    assert!(!ep.absorbed);
}

#[test]
fn geometric_episode_length() {
    let mdp = geometric(0.5);
    let batch = sample_batch(&mdp, &Policy::uniform(1, 1), 100_000, 1_000_000, 11);
    let sigma = 2.0_f64.sqrt() / 100_000_f64.sqrt();
    assert!((batch.mean_length() - 2.0).abs() <= 3.0 * sigma, "mean length {}", batch.mean_length());
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let (mdp, pi, _) = instance(5, 0, 6, 3);
    let a = sample_batch(&mdp, &pi, 500, 50, 99);
    let b = sample_batch(&mdp, &pi, 500, 50, 99);
    assert_eq!(a.episodes, b.episodes);
    let bits = |batch: &EpisodeBatch| -> Vec<u64> {
        batch.episodes.iter().flat_map(|e| e.rewards.iter().map(|r| r.to_bits())).collect()
    };
    assert_eq!(bits(&a), bits(&b));
    let c = sample_batch(&mdp, &pi, 500, 50, 100);
    assert_ne!(a.episodes, c.episodes);
}

#[test]
fn geometric_occupancy_matches_visit_frequency() {
    let p = 0.3;
    let mdp = geometric(p);
    let sol = exact_occupancy(&mdp, &Policy::uniform(1, 1)).unwrap();
    assert!((sol.occupancy[0] - 1.0 / p).abs() < 1e-12);
    let batch = sample_batch(&mdp, &Policy::uniform(1, 1), 100_000, 1_000_000, 3);
    let visits: Vec<f64> = batch.episodes.iter().map(|e| e.len() as f64).collect();
    let (mean, se) = mean_and_se(&visits);
    assert!((mean - sol.occupancy[0]).abs() <= 4.0 * se, "{mean} vs {}", sol.occupancy[0]);
}

#[test]
fn occupancy_agrees_with_pair_level_inverse() {
    for k in 0..20 {
        let (mdp, pi_e, pi_b) = instance(17, k, 8, 3);
        for pi in [&pi_e, &pi_b] {
            let sol = exact_occupancy(&mdp, pi).unwrap();
            let oracle = pair_occupancy(&mdp, pi);
            assert!(max_abs_diff(&sol.occupancy, &oracle) < 1e-10);
            let reward: f64 = sol.occupancy.iter().zip(mdp.mean_rewards()).map(|(d, r)| d * r).sum();
            assert!((sol.expected_return - reward).abs() < 1e-10);
            let h = mdp.n_actions();
            for s in 0..mdp.n_states() {
                let row: f64 = sol.occupancy[s * h..(s + 1) * h].iter().sum();
                assert!((row - sol.state_occupancy[s]).abs() < 1e-12);
            }
            assert!(sol.occupancy.iter().all(|&d| d >= 0.0));
        }
    }
}

#[test]
fn exact_return_matches_monte_carlo() {
    let mut rng = stream_rng(23, 0);
    let spec = RandomMdpSpec { noise_halfwidth: 0.5, ..RandomMdpSpec::new(8, 3) };
    let mdp = random_mdp(spec, &mut rng);
    let pi = random_softmax_policy(8, 3, 1.0, &mut rng);
    let truth = exact_return(&mdp, &pi).unwrap();
    let batch = sample_batch(&mdp, &pi, 1_000_000, 100_000, 24);
    assert!(batch.episodes.iter().all(|e| e.absorbed));
    let returns: Vec<f64> = batch.episodes.iter().map(|e| e.total_reward()).collect();
    let (mean, se) = mean_and_se(&returns);
    assert!((mean - truth).abs() <= 4.0 * se, "{mean} vs {truth} (se {se})");
}

#[test]
fn expected_length_matches_monte_carlo() {
    for k in 0..5 {
        let (mdp, pi, _) = instance(29, k, 8, 3);
        let sol = exact_occupancy(&mdp, &pi).unwrap();
        let batch = sample_batch(&mdp, &pi, 100_000, 100_000, k);
        let lengths: Vec<f64> = batch.episodes.iter().map(|e| e.len() as f64).collect();
        let (mean, se) = mean_and_se(&lengths);
        assert!((mean - sol.expected_length()).abs() <= 4.0 * se);
    }
}

#[test]
fn trivial_returns_and_q_values() {
    #[rustfmt::skip]
    let p = [
        0.0, 1.0, 0.0,
        0.0, 0.0, 1.0,
    ];
    let chain = TabularMdp::new(2, 1, &p, vec![-2.0, -1.0], vec![1.0, 0.0], 0.0).unwrap();
    assert!((exact_return(&chain, &Policy::uniform(2, 1)).unwrap() + 3.0).abs() < 1e-14);
    let zero = TabularMdp::new(2, 1, &p, vec![0.0, 0.0], vec![1.0, 0.0], 0.0).unwrap();
    assert_eq!(exact_return(&zero, &Policy::uniform(2, 1)).unwrap(), 0.0);

    let one_step = TabularMdp::new(1, 1, &[0.0, 1.0], vec![5.0], vec![1.0], 0.0).unwrap();
    assert_eq!(exact_q(&one_step, &Policy::uniform(1, 1), None).unwrap(), vec![5.0]);
    let (mdp, pi, _) = instance(31, 0, 6, 3);
    let zeros = vec![0.0; mdp.n_pairs()];
    assert!(exact_q(&mdp, &pi, Some(&zeros)).unwrap().iter().all(|&v| v == 0.0));
}

/// `Σ μ(s)π(a|s) V_{s′,a′}(s,a) = d(s′,a′)`.
#[test]
fn indicator_q_functions_sum_to_occupancy() {
    let mut rng = stream_rng(37, 0);
    let mdp = random_mdp(RandomMdpSpec::new(6, 3), &mut rng);
    let pi = random_softmax_policy(6, 3, 1.0, &mut rng);
    let d = exact_occupancy(&mdp, &pi).unwrap().occupancy;
    let start = start_weights(&mdp, &pi);
    for target in 0..mdp.n_pairs() {
        let mut indicator = vec![0.0; mdp.n_pairs()];
        indicator[target] = 1.0;
        let v = exact_q(&mdp, &pi, Some(&indicator)).unwrap();
        let total: f64 = v.iter().zip(start.iter()).map(|(v, w)| v * w).sum();
        assert!((total - d[target]).abs() < 1e-9);
    }
}

#[test]
fn q_function_satisfies_bellman_equation() {
    let (mdp, pi, _) = instance(41, 0, 8, 3);
    let q = exact_q(&mdp, &pi, None).unwrap();
    let h = mdp.n_actions();
    for s in 0..mdp.n_states() {
        for a in 0..h {
            let next: f64 = (0..mdp.n_states()).map(|s2| mdp.prob(s, a, s2) * pi.expect(&q, s2)).sum();
            assert!((q[s * h + a] - mdp.mean_reward(s, a) - next).abs() < 1e-10);
        }
    }
}

#[test]
fn error_function_vanishes_at_true_ratio() {
    for k in 0..20 {
        let (mdp, pi_e, pi_b) = instance(43, k, 8, 3);
        let d_e = pair_occupancy(&mdp, &pi_e);
        let d_b = pair_occupancy(&mdp, &pi_b);
        let ratio: Vec<f64> = d_e.iter().zip(&d_b).map(|(e, b)| e / b).collect();
        let err = ErrorFunction::new(&mdp, &pi_b, &pi_e).unwrap();
        let mut rng = stream_rng(44, k);
        for _ in 0..50 {
            let q = random_table(mdp.n_pairs(), -5.0, 5.0, &mut rng);
            assert!(err.eval(&ratio, &q).abs() <= 1e-9);
        }
    }
}

#[test]
fn error_function_at_zero_weight_is_start_value() {
    let (mdp, pi_e, pi_b) = instance(47, 0, 8, 3);
    let mut rng = stream_rng(47, 1);
    let q = random_table(mdp.n_pairs(), -1.0, 1.0, &mut rng);
    let zero = vec![0.0; mdp.n_pairs()];
    let expected: f64 = (0..mdp.n_states()).map(|s| mdp.initial_dist()[s] * pi_e.expect(&q, s)).sum();
    let got = population_error(&mdp, &pi_b, &pi_e, &zero, &q).unwrap();
    assert!((got - expected).abs() < 1e-14);
}

#[test]
fn error_function_recovers_occupancy_gaps() {
    for k in 0..20 {
        let (mdp, pi_e, pi_b) = instance(53, k, 8, 3);
        let d_e = pair_occupancy(&mdp, &pi_e);
        let d_b = pair_occupancy(&mdp, &pi_b);
        let err = ErrorFunction::new(&mdp, &pi_b, &pi_e).unwrap();
        let mut rng = stream_rng(54, k);
        let w = random_table(mdp.n_pairs(), 0.0, 3.0, &mut rng);
        for target in 0..mdp.n_pairs() {
            let mut indicator = vec![0.0; mdp.n_pairs()];
            indicator[target] = 1.0;
            let v = exact_q(&mdp, &pi_e, Some(&indicator)).unwrap();
            let gap = err.eval(&w, &v);
            assert!((gap - (d_e[target] - w[target] * d_b[target])).abs() <= 1e-9);
            let scaled: Vec<f64> = v.iter().map(|x| x / d_b[target]).collect();
            let ratio_gap = err.eval(&w, &scaled);
            assert!((ratio_gap - (d_e[target] / d_b[target] - w[target])).abs() <= 1e-8);
        }
    }
}

/// `Σ q(s′,π) d(s,a,s′) − Σ q d + E_μ q(s,π) = 0`, evaluated from the dense kernel.
#[test]
fn occupancy_moment_identity() {
    for k in 0..20 {
        let (mdp, pi, _) = instance(59, k, 8, 3);
        let (n, h) = (mdp.n_states(), mdp.n_actions());
        let d = pair_occupancy(&mdp, &pi);
        let mut rng = stream_rng(60, k);
        for _ in 0..100 {
            let q = random_table(n * h, -2.0, 2.0, &mut rng);
            let q_pi: Vec<f64> = (0..n).map(|s| (0..h).map(|a| pi.prob(s, a) * q[s * h + a]).sum()).collect();
            let mut flow = 0.0;
            for s in 0..n {
                for a in 0..h {
                    for s2 in 0..n {
                        flow += q_pi[s2] * d[s * h + a] * mdp.prob(s, a, s2);
                    }
                }
            }
            let held: f64 = q.iter().zip(&d).map(|(q, d)| q * d).sum();
            let start: f64 = mdp.initial_dist().iter().zip(&q_pi).map(|(m, v)| m * v).sum();
            assert!((flow - held + start).abs() <= 1e-9);
        }
    }
}

fn stochastic_source<R: Rng>(n: usize, h: usize, rng: &mut R) -> TabularMdp {
    let mut p = Vec::new();
    for _ in 0..n * h {
        let raw = random_table(n, 0.05, 1.0, rng);
        let total: f64 = raw.iter().sum();
        p.extend(raw.iter().map(|x| x / total));
        p.push(0.0);
    }
    let mu = vec![1.0 / n as f64; n];
    TabularMdp::new(n, h, &p, random_table(n * h, -1.0, 1.0, rng), mu, 0.0).unwrap()
}

#[test]
fn discounted_transform_one_state() {
    let src = TabularMdp::new(1, 2, &[1.0, 0.0, 1.0, 0.0], vec![1.0, 2.0], vec![1.0], 0.0).unwrap();
    let out = absorbing_from_discounted(&src, 0.5).unwrap();
    for a in 0..2 {
        assert_eq!(out.prob(0, a, 0), 0.5);
        assert_eq!(out.absorb_prob(0, a), 0.5);
    }
    assert!(absorbing_from_discounted(&src, 1.0).is_err());
    assert!(absorbing_from_discounted(&src, 0.0).is_err());
}

#[test]
fn discounted_transform_preserves_value() {
    let mut rng = stream_rng(61, 0);
    for k in 0..20 {
        let n = if k == 0 { 5 } else { rng.random_range(2..=6) };
        let h = rng.random_range(1..=3);
        let src = stochastic_source(n, h, &mut rng);
        let pi = random_softmax_policy(n, h, 1.0, &mut rng);
        let gamma = rng.random_range(0.3..0.95);
        let out = absorbing_from_discounted(&src, gamma).unwrap();
        for s in 0..n {
            for a in 0..h {
                let total: f64 = out.transition_row(s, a).iter().map(|&(_, p)| p).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
        let undiscounted = exact_return(&out, &pi).unwrap();
        let oracle = discounted_value_iteration(&src, &pi, gamma);
        assert!((undiscounted - oracle).abs() < 1e-9, "{undiscounted} vs {oracle}");
        let direct = exact_discounted_return(&src, &pi, gamma).unwrap();
        assert!((direct - oracle).abs() < 1e-9);
    }
}

#[test]
fn singular_policy_is_rejected() {
    let src = TabularMdp::new(1, 1, &[1.0, 0.0], vec![1.0], vec![1.0], 0.0).unwrap();
    assert!(matches!(exact_occupancy(&src, &Policy::uniform(1, 1)), Err(Error::SingularSystem(_))));
}

#[test]
fn absorption_mgf_matches_monte_carlo() {
    let (mdp, pi, _) = instance(67, 0, 6, 2);
    let lambda = 0.05;
    let mgf = absorption_time_mgf(&mdp, &pi, lambda).unwrap().value().unwrap();
    let batch = sample_batch(&mdp, &pi, 200_000, 100_000, 68);
    let samples: Vec<f64> = batch.episodes.iter().map(|e| (lambda * e.len() as f64).exp()).collect();
    let (mean, se) = mean_and_se(&samples);
    assert!((mean - mgf).abs() <= 4.0 * se, "{mean} vs {mgf}");
}
