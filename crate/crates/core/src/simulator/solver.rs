//! Jacobi-preconditioned conjugate gradients for SPD systems.

use crate::error::{Error, Result};

/// A square linear operator.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    /// `y = A·x`
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

impl LinearOperator for nalgebra::DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            *yr = self.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        self.diagonal().iter().copied().collect()
    }
}

/// Stopping rule. The solve succeeds once `‖b − A·x‖₂ ≤ tol_rel·‖b‖₂` and,
/// when weights are given, `max_i |w_i·(b − A·x)_i| ≤ tol_rel` as well.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub tol_rel: f64,
    pub max_iter: usize,
    pub residual_weights: Option<Vec<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_rel: 1e-10,
            max_iter: 20_000,
            residual_weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// ‖b − A·x‖₂ / ‖b‖₂ of the returned solution (0 when b = 0).
    pub relative_residual: f64,
    /// max |w_i·r_i|, or 0 without weights.
    pub weighted_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn weighted_max(r: &[f64], w: Option<&Vec<f64>>) -> f64 {
    match w {
        Some(w) => r.iter().zip(w).fold(0.0f64, |m, (ri, wi)| m.max((ri * wi).abs())),
        None => 0.0,
    }
}

/// Solve `A·x = b` for symmetric positive definite `A`, starting from zero.
pub fn solve_linear<A: LinearOperator + ?Sized>(a: &A, b: &[f64], opts: &SolveOptions) -> Result<SolveOutcome> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            actual: b.len(),
        });
    }
    if let Some(w) = &opts.residual_weights {
        if w.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                actual: w.len(),
            });
        }
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("right-hand side"));
    }
    let weights = opts.residual_weights.as_ref();
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(SolveOutcome {
            x,
            iterations: 0,
            relative_residual: 0.0,
            weighted_residual: 0.0,
        });
    }

    let inv_diag: Vec<f64> = a.diagonal().into_iter().map(|d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let converged = |r: &[f64]| norm(r) <= opts.tol_rel * b_norm && weighted_max(r, weights) <= opts.tol_rel;

    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);

    for iter in 1..=opts.max_iter {
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            if pap == 0.0 && converged(&r) {
                break;
            }
            return Err(Error::NonConvergence {
                iterations: iter,
                relative_residual: norm(&r) / b_norm,
            });
        }
        let alpha = rz / pap;
        for ((xi, ri), (pi, api)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
            *xi += alpha * pi;
            *ri -= alpha * api;
        }
        if converged(&r) {
            // confirm against the true residual; the recurrence drifts
            a.apply(&x, &mut ap);
            for ((ri, bi), axi) in r.iter_mut().zip(b).zip(&ap) {
                *ri = bi - axi;
            }
            if converged(&r) {
                return Ok(SolveOutcome {
                    relative_residual: norm(&r) / b_norm,
                    weighted_residual: weighted_max(&r, weights),
                    x,
                    iterations: iter,
                });
            }
            // restart from the true residual
            for ((zi, ri), di) in z.iter_mut().zip(&r).zip(&inv_diag) {
                *zi = ri * di;
            }
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        for ((zi, ri), di) in z.iter_mut().zip(&r).zip(&inv_diag) {
            *zi = ri * di;
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }

    a.apply(&x, &mut ap);
    let true_r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
    if converged(&true_r) {
        return Ok(SolveOutcome {
            relative_residual: norm(&true_r) / b_norm,
            weighted_residual: weighted_max(&true_r, weights),
            x,
            iterations: opts.max_iter,
        });
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        relative_residual: norm(&true_r) / b_norm,
    })
}
