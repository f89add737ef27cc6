//! High-accuracy reference solutions `x*_d` and optimal values `f*_d`.
//!
//! LASSO and NNLS are solved with restarted FISTA on the proximal/projected
//! gradient operator, interleaved with an active-set polish that solves the
//! smooth problem restricted to the current support exactly. Termination is
//! judged on the plain fixed-point residual of that operator, so the
//! accelerated path only changes how fast the tolerance is reached. ℓ₁–ℓ₁
//! problems run linearized ADMM directly.

use nalgebra::{DMatrix, DVector};

use super::{ProblemInstance, ProblemKind};
use crate::error::{Error, Result};
use crate::operators::{natural_fallback, FallbackOperator};

pub const REFERENCE_TOL: f64 = 1e-12;
pub const REFERENCE_MAX_ITER: usize = 1_000_000;

const POLISH_EVERY: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    /// Minimizer (for ℓ₁–ℓ₁, the x-block only).
    pub x: DVector<f64>,
    pub f: f64,
    /// Final fixed-point residual of the natural operator.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ProblemInstance {
    /// Reference solution at the default tolerance, computed once per
    /// instance and cached.
    pub fn reference(&self) -> Result<&Reference> {
        if let Some(r) = self.reference_cell().get() {
            return Ok(r);
        }
        let r = solve_reference(self, REFERENCE_TOL, REFERENCE_MAX_ITER)?;
        Ok(self.reference_cell().get_or_init(|| r))
    }

    /// Optimal value from [`Self::reference`].
    pub fn f_star(&self) -> Result<f64> {
        Ok(self.reference()?.f)
    }
}

/// Solve `problem` until the natural operator's residual is at most `tol`.
///
/// Hitting `max_iter` is not an error: the best iterate is returned with
/// `converged == false`.
pub fn solve_reference(problem: &ProblemInstance, tol: f64, max_iter: usize) -> Result<Reference> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let op = natural_fallback(problem)?;
    match problem.kind() {
        ProblemKind::L1L1 => plain_iteration(&op, tol, max_iter),
        ProblemKind::Lasso | ProblemKind::Nnls => accelerated(&op, tol, max_iter),
    }
}

fn finish(op: &FallbackOperator, point: DVector<f64>, residual: f64, iterations: usize, converged: bool) -> Result<Reference> {
    let x = op.primal(&point);
    let f = op.problem().objective(&x)?;
    if !f.is_finite() {
        return Err(Error::Numeric("reference objective is not finite".into()));
    }
    Ok(Reference { x, f, residual, iterations, converged })
}

fn plain_iteration(op: &FallbackOperator, tol: f64, max_iter: usize) -> Result<Reference> {
    let mut x = op.zero_point();
    let mut tx = op.apply(&x);
    let mut r = op.residual_from(&x, &tx);
    let mut k = 0;
    while r > tol && k < max_iter {
        x = tx;
        tx = op.apply(&x);
        r = op.residual_from(&x, &tx);
        k += 1;
    }
    finish(op, x, r, k, r <= tol)
}

fn accelerated(op: &FallbackOperator, tol: f64, max_iter: usize) -> Result<Reference> {
    let problem = op.problem();
    let mut x = op.zero_point();
    let mut tx = op.apply(&x);
    let mut r = op.residual_from(&x, &tx);
    let mut best = (x.clone(), r);
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut f_prev = problem.objective(&x)?;
    let mut k = 0;
    while r > tol && k < max_iter {
        // FISTA step from the extrapolated point.
        let x_new = op.apply(&y);
        let f_new = problem.objective(&x_new)?;
        if f_new > f_prev {
            // Adaptive restart: drop momentum and take a plain step.
            t = 1.0;
            x = tx.clone();
            y = x.clone();
            f_prev = problem.objective(&x)?;
        } else {
            let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
            t = t_new;
            x = x_new;
            f_prev = f_new;
        }
        k += 1;
        if k % POLISH_EVERY == 0 {
            if let Some(p) = polish(problem, &x) {
                let tp = op.apply(&p);
                let rp = op.residual_from(&p, &tp);
                if rp < op.residual(&x) {
                    x = p;
                    y = x.clone();
                    t = 1.0;
                    f_prev = problem.objective(&x)?;
                }
            }
        }
        tx = op.apply(&x);
        r = op.residual_from(&x, &tx);
        if !r.is_finite() {
            return Err(Error::Numeric("reference solver diverged".into()));
        }
        if r < best.1 {
            best = (x.clone(), r);
        }
    }
    let (xb, rb) = best;
    finish(op, xb, rb, k, rb <= tol)
}

/// Solve the smooth problem restricted to the support of `x`, keeping the
/// signs fixed. Returns `None` when the restricted system is singular or the
/// solution leaves the sign pattern.
fn polish(problem: &ProblemInstance, x: &DVector<f64>) -> Option<DVector<f64>> {
    let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
    if support.is_empty() || support.len() > problem.m() {
        return None;
    }
    let a = problem.a();
    let a_s = DMatrix::from_fn(a.nrows(), support.len(), |r, c| a[(r, support[c])]);
    let gram = a_s.tr_mul(&a_s);
    let mut rhs = a_s.tr_mul(problem.d());
    let tau = problem.tau();
    for (c, &i) in support.iter().enumerate() {
        rhs[c] -= tau * x[i].signum();
    }
    let sol = gram.cholesky()?.solve(&rhs);
    let mut out = DVector::zeros(x.len());
    for (c, &i) in support.iter().enumerate() {
        let keeps_sign = match problem.kind() {
            ProblemKind::Nnls => sol[c] > 0.0,
            _ => sol[c].signum() == x[i].signum() && sol[c] != 0.0,
        };
        if !keeps_sign || !sol[c].is_finite() {
            return None;
        }
        out[i] = sol[c];
    }
    Some(out)
}
