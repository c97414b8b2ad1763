//! Browser bindings: the `h_m` root, MSE against episode count and MSE
//! against truncation level on the built-in 8-state benchmark.
//!
//! Results come back as flat `Float64Array`s, one fixed-width row per grid
//! point.

use ope_absorb::prelude::{
    derive_seed, exact_return, mwla_estimate, naive_average, sample_batch, solve_h_m, trajectory_is, DeskInstance, Error,
};
use wasm_bindgen::prelude::*;

const LAMBDA: f64 = 0.001;

fn err(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Rows `[m, h_m, lower, upper]` on a log grid, with
/// `lower = √(ln m / 2m)` and `upper = ln m · √(e/m)`.
#[wasm_bindgen]
pub fn hm_curve(m_min: f64, m_max: f64, points: u32) -> Result<Vec<f64>, JsError> {
    if !(m_min >= 2.0 && m_max >= m_min && points >= 1) {
        return Err(JsError::new("need 2 <= m_min <= m_max and at least one point"));
    }
    let mut out = Vec::with_capacity(4 * points as usize);
    for i in 0..points {
        let t = if points == 1 { 0.0 } else { i as f64 / (points - 1) as f64 };
        let m = (m_min.ln() + t * (m_max.ln() - m_min.ln())).exp().round() as u64;
        let sol = solve_h_m(m).map_err(err)?;
        let mf = m as f64;
        out.extend([mf, sol.h_m, (mf.ln() / (2.0 * mf)).sqrt(), mf.ln() * (std::f64::consts::E / mf).sqrt()]);
    }
    Ok(out)
}

/// Exact value of the benchmark target policy.
#[wasm_bindgen]
pub fn desk_truth() -> Result<f64, JsError> {
    let desk = DeskInstance::new();
    exact_return(&desk.mdp, &desk.target).map_err(err)
}

struct Mse {
    mwla: f64,
    naive: f64,
    is: f64,
}

fn replicate_mse(alpha: f64, m: usize, horizon: usize, replicates: u32, seed: u64) -> Result<Mse, JsError> {
    if !(0.0..=1.0).contains(&alpha) || m == 0 || horizon == 0 || replicates == 0 {
        return Err(JsError::new("need alpha in [0, 1] and positive m, H, replicates"));
    }
    let desk = DeskInstance::new();
    let pi_b = desk.behavior(alpha).map_err(err)?;
    let truth = exact_return(&desk.mdp, &desk.target).map_err(err)?;
    let mut acc = Mse { mwla: 0.0, naive: 0.0, is: 0.0 };
    for rep in 0..replicates {
        let batch = sample_batch(&desk.mdp, &pi_b, m, horizon, derive_seed(seed, &[m as u64, horizon as u64, rep as u64]));
        let sq = |x: f64| (x - truth) * (x - truth);
        acc.mwla += sq(mwla_estimate(&batch, &desk.target, LAMBDA, true).map_err(err)?.point_estimate);
        acc.naive += sq(naive_average(&batch).map_err(err)?.point_estimate);
        acc.is += sq(trajectory_is(&batch, &desk.target, &pi_b).map_err(err)?.point_estimate);
    }
    let n = replicates as f64;
    Ok(Mse { mwla: acc.mwla / n, naive: acc.naive / n, is: acc.is / n })
}

/// Rows `[m, mse_mwla, mse_naive, mse_is]` for behavior mixture `alpha`.
#[wasm_bindgen]
pub fn mse_by_episodes(alpha: f64, horizon: u32, replicates: u32, seed: u32, ms: Vec<u32>) -> Result<Vec<f64>, JsError> {
    let mut out = Vec::with_capacity(4 * ms.len());
    for m in ms {
        let mse = replicate_mse(alpha, m as usize, horizon as usize, replicates, seed as u64)?;
        out.extend([m as f64, mse.mwla, mse.naive, mse.is]);
    }
    Ok(out)
}

/// Rows `[H, mse_mwla, mse_naive, mse_is]` at a fixed episode count.
#[wasm_bindgen]
pub fn mse_by_horizon(alpha: f64, m: u32, replicates: u32, seed: u32, horizons: Vec<u32>) -> Result<Vec<f64>, JsError> {
    let mut out = Vec::with_capacity(4 * horizons.len());
    for h in horizons {
        let mse = replicate_mse(alpha, m as usize, h as usize, replicates, seed as u64)?;
        out.extend([h as f64, mse.mwla, mse.naive, mse.is]);
    }
    Ok(out)
}
