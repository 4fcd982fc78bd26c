//! Levenberg–Marquardt least squares with analytic Jacobians.

use crate::linalg::{solve, symmetric_pseudo_inverse};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmOptions {
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Converged once every free parameter moves by less than this fraction.
    pub rel_tol: f64,
    pub max_iterations: usize,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { lambda0: 1e-3, lambda_up: 10.0, lambda_down: 10.0, rel_tol: 1e-9, max_iterations: 200 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// Zero for fixed parameters, infinite for unidentifiable ones.
    pub stderrs: Vec<f64>,
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl LmOutcome {
    pub fn chi2_reduced(&self) -> f64 {
        if self.dof == 0 { 0.0 } else { self.chi2 / self.dof as f64 }
    }
}

/// A model `f(x; p)` that also writes `∂f/∂p` into `grad`.
pub trait Model {
    fn eval(&self, x: f64, p: &[f64], grad: &mut [f64]) -> f64;

    fn valid(&self, _p: &[f64]) -> bool {
        true
    }
}

/// Absolute floor for the per-parameter tolerance, so parameters that settle
/// at zero still register as converged.
const ABS_TOL_FLOOR: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e16;
const COV_REL_TOL: f64 = 1e-13;

fn chi2<M: Model>(m: &M, x: &[f64], y: &[f64], w: &[f64], p: &[f64], grad: &mut [f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(w)
        .map(|((&xi, &yi), &wi)| {
            let r = yi - m.eval(xi, p, grad);
            wi * r * r
        })
        .sum()
}

/// Minimizes `Σ ((y_i - f(x_i; p))/σ_i)²` over the parameters flagged in
/// `free`. Without `sigma` all points get unit weight and the reported
/// errors are scaled by `√χ²_red`.
pub fn levenberg_marquardt<M: Model>(
    model: &M,
    x: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
    p0: &[f64],
    free: &[bool],
    opts: &LmOptions,
) -> LmOutcome {
    let n_par = p0.len();
    let idx: Vec<usize> = (0..n_par).filter(|&i| free[i]).collect();
    let m = idx.len();
    let w: Vec<f64> = match sigma {
        Some(s) => s.iter().map(|s| 1.0 / (s * s)).collect(),
        None => vec![1.0; x.len()],
    };
    let mut grad = vec![0.0; n_par];
    let mut p = p0.to_vec();
    let mut cur = chi2(model, x, y, &w, &p, &mut grad);
    let mut lambda = opts.lambda0;
    let mut converged = false;
    let mut iterations = 0;

    let normal_equations = |p: &[f64], grad: &mut [f64]| {
        let mut jtj = vec![vec![0.0; m]; m];
        let mut jtr = vec![0.0; m];
        for ((&xi, &yi), &wi) in x.iter().zip(y).zip(&w) {
            let r = yi - model.eval(xi, p, grad);
            for a in 0..m {
                let ga = grad[idx[a]];
                jtr[a] += wi * ga * r;
                for b in 0..m {
                    jtj[a][b] += wi * ga * grad[idx[b]];
                }
            }
        }
        (jtj, jtr)
    };

    while iterations < opts.max_iterations && m > 0 {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&p, &mut grad);
        let diag_max = (0..m).map(|i| jtj[i][i]).fold(0.0f64, f64::max);
        let mut accepted = None;
        while lambda <= LAMBDA_MAX {
            let mut a = jtj.clone();
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-12 * diag_max).max(1e-300);
            }
            if let Some(delta) = solve(&a, &jtr) {
                let mut trial = p.clone();
                for (k, &i) in idx.iter().enumerate() {
                    trial[i] += delta[k];
                }
                if model.valid(&trial) {
                    let next = chi2(model, x, y, &w, &trial, &mut grad);
                    if next <= cur {
                        accepted = Some((trial, next));
                        break;
                    }
                }
            }
            lambda *= opts.lambda_up;
        }
        match accepted {
            Some((trial, next)) => {
                let small = idx
                    .iter()
                    .all(|&i| (trial[i] - p[i]).abs() <= opts.rel_tol * p[i].abs().max(ABS_TOL_FLOOR));
                p = trial;
                cur = next;
                lambda = (lambda / opts.lambda_down).max(1e-15);
                if small {
                    converged = true;
                    break;
                }
            }
            None => {
                // No damping level finds a lower χ²: at a minimum to precision.
                converged = true;
                break;
            }
        }
    }
    if m == 0 {
        converged = true;
    }

    let dof = x.len().saturating_sub(m);
    let (jtj, _) = normal_equations(&p, &mut grad);
    let cov = if m > 0 { symmetric_pseudo_inverse(&jtj, COV_REL_TOL) } else { Vec::new() };
    let scale = if sigma.is_none() && dof > 0 { cur / dof as f64 } else { 1.0 };
    let mut stderrs = vec![0.0; n_par];
    for (k, &i) in idx.iter().enumerate() {
        stderrs[i] = (cov[k][k] * scale).max(0.0).sqrt();
    }
    LmOutcome { params: p, stderrs, chi2: cur, dof, iterations, converged }
}
