//! Exact linear-algebraic oracles: occupancy measures, returns, Q-functions,
//! the population error function and the absorption-time MGF.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, lu_solve, spectral_radius_nonneg, SparseRows};
use crate::mdp::{Policy, TabularMdp};

const CLAMP_TOL: f64 = 1e-10;

/// Occupancy measure, return and (optionally) Q-function of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    /// `d_π(s, a)`, indexed `s·h + a`.
    pub occupancy: Vec<f64>,
    /// `d_π(s) = Σ_a d_π(s, a)`.
    pub state_occupancy: Vec<f64>,
    pub expected_return: f64,
    /// `Q_π(s, a)`; filled by [`ExactSolution::solve`] only.
    pub q_function: Option<Vec<f64>>,
    /// Max-norm residual of the state-action fixed-point equations.
    pub residual: f64,
}

impl ExactSolution {
    /// Occupancy, return and Q-function in one call.
    pub fn solve(mdp: &TabularMdp, policy: &Policy) -> Result<Self> {
        let mut sol = exact_occupancy(mdp, policy)?;
        sol.q_function = Some(exact_q(mdp, policy, None)?);
        Ok(sol)
    }

    /// Expected episode length `E[T] = Σ d_π`.
    pub fn expected_length(&self) -> f64 {
        self.occupancy.iter().sum()
    }
}

/// `I − γ·M` as a dense matrix, optionally transposed.
fn identity_minus(m: &SparseRows, gamma: f64, transpose: bool) -> DMatrix<f64> {
    let n = m.n_rows();
    let mut a = DMatrix::identity(n, n);
    for i in 0..n {
        for &(j, v) in m.row(i) {
            if transpose {
                a[(j, i)] -= gamma * v;
            } else {
                a[(i, j)] -= gamma * v;
            }
        }
    }
    a
}

/// Solves `d = μ⊗π + (flow under π) d` for the state-action occupancy.
///
/// The state marginal is obtained from `(I − P_πᵀ) d = μ` and lifted with
/// `d(s, a) = d(s)·π(a|s)`. The residual of the full state-action system is
/// then checked.
pub fn exact_occupancy(mdp: &TabularMdp, policy: &Policy) -> Result<ExactSolution> {
    policy.conforms_to(mdp)?;
    let n = mdp.n_states();
    let h = mdp.n_actions();
    let pm = mdp.state_matrix(policy);
    let mut ds = lu_solve(identity_minus(&pm, 1.0, true), mdp.initial_dist(), "occupancy")?;
    for (i, v) in ds.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -CLAMP_TOL {
                return Err(Error::NegativeOccupancy { index: i, value: *v });
            }
            *v = 0.0;
        }
    }
    let mut occupancy = vec![0.0; n * h];
    for s in 0..n {
        for a in 0..h {
            occupancy[s * h + a] = ds[s] * policy.prob(s, a);
        }
    }

    // Residual of d(s,a) = μ(s)π(a|s) + π(a|s) Σ P(s|s',a') d(s',a').
    let mut inflow = vec![0.0; n];
    for sp in 0..n {
        for ap in 0..h {
            let d = occupancy[sp * h + ap];
            if d == 0.0 {
                continue;
            }
            for &(j, p) in mdp.transition_row(sp, ap) {
                if j < n {
                    inflow[j] += p * d;
                }
            }
        }
    }
    let mu = mdp.initial_dist();
    let mut residual = 0.0_f64;
    for s in 0..n {
        for a in 0..h {
            let pa = policy.prob(s, a);
            let r = occupancy[s * h + a] - pa * (mu[s] + inflow[s]);
            residual = residual.max(r.abs());
        }
    }
    if residual > 1e-10 * (1.0 + inf_norm(&occupancy)) {
        return Err(Error::SingularSystem(format!("occupancy residual {residual:.3e}")));
    }

    let expected_return = occupancy.iter().zip(mdp.mean_rewards()).map(|(d, r)| d * r).sum();
    Ok(ExactSolution { occupancy, state_occupancy: ds, expected_return, q_function: None, residual })
}

/// `R_π = Σ R(s, a) d_π(s, a)`.
pub fn exact_return(mdp: &TabularMdp, policy: &Policy) -> Result<f64> {
    Ok(exact_occupancy(mdp, policy)?.expected_return)
}

/// Solves `Q = R + P V`, `V(s) = Σ_a π(a|s) Q(s, a)` with `V(ξ) = 0`.
///
/// With `reward_override = 1_{(s′,a′)}` the result is the expected number of
/// visits to `(s′, a′)` starting from each pair.
pub fn exact_q(mdp: &TabularMdp, policy: &Policy, reward_override: Option<&[f64]>) -> Result<Vec<f64>> {
    policy.conforms_to(mdp)?;
    let n = mdp.n_states();
    let h = mdp.n_actions();
    let reward = reward_override.unwrap_or(mdp.mean_rewards());
    if reward.len() != n * h {
        return Err(Error::Shape(format!("reward table has {} entries, expected {}", reward.len(), n * h)));
    }
    let pm = mdp.state_matrix(policy);
    let r_pi: Vec<f64> = (0..n).map(|s| policy.expect(reward, s)).collect();
    let v = lu_solve(identity_minus(&pm, 1.0, false), &r_pi, "q-function")?;
    let q = (0..n * h)
        .map(|i| {
            let (s, a) = (i / h, i % h);
            reward[i]
                + mdp
                    .transition_row(s, a)
                    .iter()
                    .filter(|&&(j, _)| j < n)
                    .map(|&(j, p)| p * v[j])
                    .sum::<f64>()
        })
        .collect();
    Ok(q)
}

/// Discounted value `E_μ Σ γᵗ R(sₜ, aₜ)` of the model read as a discounted
/// process over S₀ (mass into ξ is lost).
pub fn exact_discounted_return(mdp: &TabularMdp, policy: &Policy, gamma: f64) -> Result<f64> {
    policy.conforms_to(mdp)?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("discount must lie in (0, 1), got {gamma}")));
    }
    let n = mdp.n_states();
    let pm = mdp.state_matrix(policy);
    let r_pi: Vec<f64> = (0..n).map(|s| policy.expect(mdp.mean_rewards(), s)).collect();
    let v = lu_solve(identity_minus(&pm, gamma, false), &r_pi, "discounted value")?;
    Ok(v.iter().zip(mdp.initial_dist()).map(|(v, m)| v * m).sum())
}

/// Elementwise `target / behavior`, zero where `behavior` vanishes.
pub fn occupancy_ratio(target: &[f64], behavior: &[f64]) -> Vec<f64> {
    target.iter().zip(behavior).map(|(t, b)| if *b > 0.0 { t / b } else { 0.0 }).collect()
}

/// Population error function `L(w, q)` for a fixed model, behavior
/// occupancy and target policy.
#[derive(Debug, Clone)]
pub struct ErrorFunction<'a> {
    mdp: &'a TabularMdp,
    pi_e: &'a Policy,
    d_b: Vec<f64>,
}

impl<'a> ErrorFunction<'a> {
    pub fn new(mdp: &'a TabularMdp, pi_b: &Policy, pi_e: &'a Policy) -> Result<Self> {
        pi_e.conforms_to(mdp)?;
        let d_b = exact_occupancy(mdp, pi_b)?.occupancy;
        Ok(Self { mdp, pi_e, d_b })
    }

    pub fn behavior_occupancy(&self) -> &[f64] {
        &self.d_b
    }

    /// `L(w,q) = Σ w q(s′,π_e) d_b(s,a,s′) − Σ w q d_b + E_μ q(s,π_e)` with
    /// `q(ξ, ·) = 0`.
    pub fn eval(&self, w: &[f64], q: &[f64]) -> f64 {
        let mdp = self.mdp;
        let n = mdp.n_states();
        let h = mdp.n_actions();
        assert_eq!(w.len(), n * h);
        assert_eq!(q.len(), n * h);
        let q_pi: Vec<f64> = (0..n).map(|s| self.pi_e.expect(q, s)).collect();
        let mut total = 0.0;
        for i in 0..n * h {
            let d = self.d_b[i];
            if d == 0.0 || w[i] == 0.0 {
                continue;
            }
            let (s, a) = (i / h, i % h);
            let next: f64 = mdp
                .transition_row(s, a)
                .iter()
                .filter(|&&(j, _)| j < n)
                .map(|&(j, p)| p * q_pi[j])
                .sum();
            total += w[i] * d * (next - q[i]);
        }
        total + mdp.initial_dist().iter().zip(&q_pi).map(|(m, v)| m * v).sum::<f64>()
    }
}

/// `L(w, q)` evaluated with the exact behavior occupancy.
pub fn population_error(mdp: &TabularMdp, pi_b: &Policy, pi_e: &Policy, w: &[f64], q: &[f64]) -> Result<f64> {
    Ok(ErrorFunction::new(mdp, pi_b, pi_e)?.eval(w, q))
}

/// Moment generating function of the absorption time at `λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mgf {
    Finite(f64),
    Divergent,
}

impl Mgf {
    pub fn value(self) -> Option<f64> {
        match self {
            Mgf::Finite(v) => Some(v),
            Mgf::Divergent => None,
        }
    }
}

/// `E_μ[e^{λT}]` under `policy`, via `g = e^λ (p_ξ + P_π g)`.
pub fn absorption_time_mgf(mdp: &TabularMdp, policy: &Policy, lambda: f64) -> Result<Mgf> {
    policy.conforms_to(mdp)?;
    let rho = spectral_radius_nonneg(&mdp.state_matrix(policy), 1000);
    mgf_with_radius(mdp, policy, lambda, rho)
}

/// Spectral radius of the state-to-state kernel of `policy` on S₀.
pub fn policy_spectral_radius(mdp: &TabularMdp, policy: &Policy) -> Result<f64> {
    policy.conforms_to(mdp)?;
    Ok(spectral_radius_nonneg(&mdp.state_matrix(policy), 1000))
}

pub(crate) fn mgf_with_radius(mdp: &TabularMdp, policy: &Policy, lambda: f64, rho: f64) -> Result<Mgf> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let n = mdp.n_states();
    let growth = lambda.exp();
    if growth * rho >= 1.0 {
        return Ok(Mgf::Divergent);
    }
    let pm = mdp.state_matrix(policy);
    let p_xi: Vec<f64> = (0..n)
        .map(|s| (0..mdp.n_actions()).map(|a| policy.prob(s, a) * mdp.absorb_prob(s, a)).sum::<f64>() * growth)
        .collect();
    let g = match lu_solve(identity_minus(&pm, growth, false), &p_xi, "mgf") {
        Ok(g) => g,
        Err(Error::SingularSystem(_)) => return Ok(Mgf::Divergent),
        Err(e) => return Err(e),
    };
    if g.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Ok(Mgf::Divergent);
    }
    Ok(Mgf::Finite(g.iter().zip(mdp.initial_dist()).map(|(g, m)| g * m).sum()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometric(p_absorb: f64, reward: f64) -> TabularMdp {
        TabularMdp::new(1, 1, &[1.0 - p_absorb, p_absorb], vec![reward], vec![1.0], 0.0).unwrap()
    }

    /// 0 → 1 → ξ, two actions with identical dynamics.
    fn chain2(r0: f64, r1: f64) -> TabularMdp {
        #[rustfmt::skip]
        let p = [
            0.0, 1.0, 0.0,  0.0, 1.0, 0.0,
            0.0, 0.0, 1.0,  0.0, 0.0, 1.0,
        ];
        TabularMdp::new(2, 2, &p, vec![r0, r0, r1, r1], vec![1.0, 0.0], 0.0).unwrap()
    }

    #[test]
    fn single_visit_occupancy() {
        let mdp = geometric(1.0, 0.0);
        let sol = exact_occupancy(&mdp, &Policy::uniform(1, 1)).unwrap();
        assert_eq!(sol.occupancy, vec![1.0]);
    }

    #[test]
    fn chain_occupancy_and_return() {
        let mdp = chain2(-2.0, -1.0);
        let pol = Policy::uniform(2, 2);
        let sol = exact_occupancy(&mdp, &pol).unwrap();
        assert!((sol.state_occupancy[0] - 1.0).abs() < 1e-14);
        assert!((sol.state_occupancy[1] - 1.0).abs() < 1e-14);
        assert!((sol.expected_return + 3.0).abs() < 1e-14);
        let zero = chain2(0.0, 0.0);
        assert_eq!(exact_return(&zero, &pol).unwrap(), 0.0);
    }

    #[test]
    fn geometric_occupancy() {
        for p in [0.1, 0.5, 0.9] {
            let sol = exact_occupancy(&geometric(p, 0.0), &Policy::uniform(1, 1)).unwrap();
            assert!((sol.occupancy[0] - 1.0 / p).abs() < 1e-12);
        }
    }

    #[test]
    fn q_function_basics() {
        let mdp = geometric(1.0, 5.0);
        let pol = Policy::uniform(1, 1);
        assert_eq!(exact_q(&mdp, &pol, None).unwrap(), vec![5.0]);
        let mdp = chain2(1.0, 2.0);
        let q = exact_q(&mdp, &Policy::uniform(2, 2), Some(&[0.0; 4])).unwrap();
        assert!(q.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn non_absorbing_policy_is_singular() {
        // action 0 loops forever, action 1 absorbs.
        let p = [1.0, 0.0, 0.0, 1.0];
        let mdp = TabularMdp::new(1, 2, &p, vec![0.0, 0.0], vec![1.0], 0.0).unwrap();
        let stay = Policy::new(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(matches!(exact_occupancy(&mdp, &stay), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn zero_weight_error_is_initial_expectation() {
        let mdp = chain2(0.0, 0.0);
        let pi = Policy::new(2, 2, vec![0.3, 0.7, 0.6, 0.4]).unwrap();
        let q = [1.0, 2.0, 3.0, 4.0];
        let l = population_error(&mdp, &pi, &pi, &[0.0; 4], &q).unwrap();
        assert!((l - (0.3 * 1.0 + 0.7 * 2.0)).abs() < 1e-14);
    }

    #[test]
    fn mgf_cases() {
        let pol = Policy::uniform(1, 1);
        for lam in [0.1, 1.0, 3.0] {
            let v = absorption_time_mgf(&geometric(1.0, 0.0), &pol, lam).unwrap();
            assert!((v.value().unwrap() - f64::exp(lam)).abs() < 1e-12 * f64::exp(lam));
        }
        let p = 0.5;
        let lam: f64 = 0.1;
        let closed = p * lam.exp() / (1.0 - (1.0 - p) * lam.exp());
        let v = absorption_time_mgf(&geometric(p, 0.0), &pol, lam).unwrap().value().unwrap();
        assert!((v - closed).abs() < 1e-12);
        // e^λ (1−p) ≥ 1 once λ ≥ ln 2.
        assert_eq!(absorption_time_mgf(&geometric(p, 0.0), &pol, 0.7).unwrap(), Mgf::Divergent);
        assert!(absorption_time_mgf(&geometric(p, 0.0), &pol, -1.0).is_err());
    }
}
