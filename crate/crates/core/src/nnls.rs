//! Nonnegative least squares `min ½‖(M + λI)ᵀx + b‖²  s.t. x ≥ 0` by
//! spectral projected gradient (Barzilai–Borwein steps, nonmonotone
//! acceptance, exact step along the projected direction).

use nalgebra::DMatrix;

use crate::linalg::{inf_norm, l2_norm, min_norm_lstsq, SparseRows};

#[derive(Debug, Clone, Copy)]
pub struct NnlsOptions {
    /// Stop when the 2-norm of the projected gradient falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Problems up to this size get an active-set polish after the
    /// gradient phase.
    pub polish_limit: usize,
}

impl Default for NnlsOptions {
    fn default() -> Self {
        Self { tolerance: 1e-9, max_iterations: 100_000, polish_limit: 2000 }
    }
}

#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub x: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub projected_gradient_norm: f64,
}

const MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const STEP_MIN: f64 = 1e-30;
const STEP_MAX: f64 = 1e30;

struct Problem<'a> {
    m: &'a SparseRows,
    shift: f64,
    b: &'a [f64],
}

impl Problem<'_> {
    /// `(M + λI)ᵀ x`
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.m.tr_mul_vec(x);
        if self.shift != 0.0 {
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi += self.shift * xi;
            }
        }
        y
    }

    /// `(M + λI) r`
    fn apply_adjoint(&self, r: &[f64]) -> Vec<f64> {
        let mut y = self.m.mul_vec(r);
        if self.shift != 0.0 {
            for (yi, ri) in y.iter_mut().zip(r) {
                *yi += self.shift * ri;
            }
        }
        y
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.apply(x);
        for (ri, bi) in r.iter_mut().zip(self.b) {
            *ri += bi;
        }
        r
    }
}

fn projected_gradient(x: &[f64], g: &[f64]) -> Vec<f64> {
    x.iter().zip(g).map(|(&xi, &gi)| (xi - gi).max(0.0) - xi).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `min ½‖(M + shift·I)ᵀ x + b‖²` over `x ≥ 0` for square `M`.
pub fn nnls_transposed(m: &SparseRows, shift: f64, b: &[f64], opts: NnlsOptions) -> NnlsSolution {
    let n = m.n_rows();
    assert_eq!(m.n_cols(), n);
    assert_eq!(b.len(), n);
    let prob = Problem { m, shift, b };

    let mut x = vec![0.0; n];
    let mut r = prob.residual(&x);
    let mut g = prob.apply_adjoint(&r);
    let mut f = 0.5 * dot(&r, &r);
    let mut history = vec![f];
    let pg0 = projected_gradient(&x, &g);
    let mut step = {
        let s = inf_norm(&pg0);
        if s > 0.0 { (1.0 / s).clamp(STEP_MIN, STEP_MAX) } else { 1.0 }
    };

    let mut iterations = 0;
    let mut pg_norm = l2_norm(&pg0);
    let mut converged = pg_norm <= opts.tolerance;
    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let d: Vec<f64> = x.iter().zip(&g).map(|(&xi, &gi)| (xi - step * gi).max(0.0) - xi).collect();
        let bd = prob.apply(&d);
        let gd = dot(&g, &d);
        let dd = dot(&bd, &bd);
        if gd >= 0.0 || dd == 0.0 {
            // No descent along d; the BB step is stale.
            step = 1.0 / inf_norm(&g).max(1e-300);
            if gd >= 0.0 && l2_norm(&d) == 0.0 {
                break;
            }
            continue;
        }
        let f_ref = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let f_full = f + gd + 0.5 * dd;
        let t = if f_full <= f_ref + ARMIJO * gd { 1.0 } else { (-gd / dd).min(1.0) };

        let x_new: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| (xi + t * di).max(0.0)).collect();
        if iterations % 50 == 0 {
            r = prob.residual(&x_new);
        } else {
            for (ri, bdi) in r.iter_mut().zip(&bd) {
                *ri += t * bdi;
            }
        }
        let g_new = prob.apply_adjoint(&r);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 { (dot(&s, &s) / sy).clamp(STEP_MIN, STEP_MAX) } else { STEP_MAX.min(1e6 * step) };

        x = x_new;
        g = g_new;
        f = 0.5 * dot(&r, &r);
        history.push(f);
        if history.len() > MEMORY {
            history.remove(0);
        }
        pg_norm = l2_norm(&projected_gradient(&x, &g));
        converged = pg_norm <= opts.tolerance;
    }

    let mut sol = NnlsSolution { x, converged, iterations, projected_gradient_norm: pg_norm };
    if n <= opts.polish_limit {
        polish(&prob, &mut sol, opts.tolerance);
    }
    sol
}

/// Re-solves the unconstrained problem on the current free set and keeps the
/// result when it is feasible and does not worsen the KKT residual.
fn polish(prob: &Problem<'_>, sol: &mut NnlsSolution, tolerance: f64) {
    let n = sol.x.len();
    let free: Vec<usize> = (0..n).filter(|&i| sol.x[i] > 0.0).collect();
    if free.is_empty() {
        return;
    }
    // Columns of (M + λI)ᵀ restricted to the free set.
    let full = {
        let mut d = prob.m.to_dense().transpose();
        for i in 0..n {
            d[(i, i)] += prob.shift;
        }
        d
    };
    let mut sub = DMatrix::zeros(n, free.len());
    for (k, &j) in free.iter().enumerate() {
        sub.set_column(k, &full.column(j));
    }
    let neg_b: Vec<f64> = prob.b.iter().map(|v| -v).collect();
    let (xf, _) = min_norm_lstsq(sub, &neg_b);
    if xf.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return;
    }
    let mut x = vec![0.0; n];
    for (k, &j) in free.iter().enumerate() {
        x[j] = xf[k];
    }
    let r = prob.residual(&x);
    let g = prob.apply_adjoint(&r);
    let pg = l2_norm(&projected_gradient(&x, &g));
    if pg <= sol.projected_gradient_norm.max(tolerance) {
        sol.x = x;
        sol.projected_gradient_norm = pg;
        sol.converged = pg <= tolerance;
    }
}
