//! Bound-regime utilities: the `h_m` root, regime classification and the
//! Markov-inequality tail bound.

use crate::error::{Error, Result};
use crate::exact::{mgf_with_radius, policy_spectral_radius, Mgf};
use crate::mdp::{Policy, TabularMdp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmSolution {
    pub m: u64,
    pub h_m: f64,
    /// `2m h² + 2 ln m ln h − ln m` at the returned root.
    pub residual: f64,
}

fn hm_equation(m: f64, x: f64) -> f64 {
    let lm = m.ln();
    2.0 * m * x * x + 2.0 * lm * x.ln() - lm
}

/// Unique root in `(0, 1)` of `2m x² + 2 ln m · ln x − ln m = 0`.
///
/// The left side is strictly increasing on `(0, 1]`, tends to `−∞` at 0 and
/// equals `2m − ln m > 0` at 1, so bisection runs until the bracket cannot
/// shrink further in double precision.
pub fn solve_h_m(m: u64) -> Result<HmSolution> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("h_m needs m >= 2, got {m}")));
    }
    let mf = m as f64;
    let (mut lo, mut hi) = (f64::MIN_POSITIVE, 1.0_f64);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if hm_equation(mf, mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (flo, fhi) = (hm_equation(mf, lo), hm_equation(mf, hi));
    let (h_m, residual) = if flo.abs() <= fhi.abs() { (lo, flo) } else { (hi, fhi) };
    Ok(HmSolution { m, h_m, residual })
}

/// Which branch of the MSE bound is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `M₀ e^{−λ₀H} > h_m`: truncation error still visible.
    SmallH,
    /// `M₀ e^{−λ₀H} ≤ h_m`.
    LargeH,
}

impl Regime {
    pub fn tag(self) -> &'static str {
        match self {
            Regime::SmallH => "SMALL_H",
            Regime::LargeH => "LARGE_H",
        }
    }
}

pub fn regime_classify(m: u64, horizon: usize, lambda0: f64, m0: f64) -> Result<Regime> {
    let h_m = solve_h_m(m)?.h_m;
    Ok(if m0 * (-lambda0 * horizon as f64).exp() > h_m { Regime::SmallH } else { Regime::LargeH })
}

/// `min(1, mse/ε²)`, an upper bound on `P(|R̂ − R| > ε)`.
pub fn markov_bound(mse_estimate: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(mse_estimate >= 0.0) {
        return Err(Error::InvalidArgument(format!("mse must be nonnegative, got {mse_estimate}")));
    }
    Ok((mse_estimate / (epsilon * epsilon)).min(1.0))
}

/// Exponential-moment parameters `(λ₀, M₀ = E_μ[e^{λ₀T}])`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentParams {
    pub lambda0: f64,
    pub m0: f64,
}

/// Largest `λ` on the grid `{0.01, 0.02, …, 0.50}` with a finite absorption
/// MGF, or `None` when even `λ = 0.01` diverges.
pub fn scan_moment_params(mdp: &TabularMdp, policy: &Policy) -> Result<Option<MomentParams>> {
    let rho = policy_spectral_radius(mdp, policy)?;
    // The MGF is finite exactly below λ = −ln ρ, so search down from the
    // largest admissible grid point instead of solving at every point.
    let mut k = 50;
    while k > 0 && (k as f64 / 100.0).exp() * rho >= 1.0 {
        k -= 1;
    }
    while k > 0 {
        let lambda = k as f64 / 100.0;
        if let Mgf::Finite(m0) = mgf_with_radius(mdp, policy, lambda, rho)? {
            return Ok(Some(MomentParams { lambda0: lambda, m0 }));
        }
        k -= 1;
    }
    Ok(None)
}
