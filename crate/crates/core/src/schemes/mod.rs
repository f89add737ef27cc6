//! Unrolled learned update operators `L(x; ζ^k)`.
//!
//! * ALISTA: `η_θ(x − γWᵀ(Ax − d))` with an analytic weight `W` and two
//!   learned scalars per layer.
//! * LISTA-CP: `η_θ(x − W̃ᵀ(Ax − d))` with a learned `m×n` matrix per layer.
//! * NNLS-PG: `max(x − ζ(Ax − d), 0)` with a learned `n×m` matrix per layer.
//! * DLADMM: a linearized-ADMM layer on `[x; z; ν]` with learned per-entry
//!   step sizes and thresholds.
//!
//! Matrices `W`, `W̃` and `W₁` are stored with the shape of `A` (`m×n`) and
//! always applied transposed.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::check_len;
use crate::operators::{shrink, split_admm, stack_admm, LiAdmmParams};
use crate::problems::{ProblemInstance, ProblemKind};

mod io;

pub use io::{read_params, read_params_from, write_params, write_params_to, PARAMS_MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Alista,
    ListaCp,
    Dladmm,
    Nnlspg,
}

impl SchemeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::Alista => "alista",
            SchemeKind::ListaCp => "lista-cp",
            SchemeKind::Dladmm => "dladmm",
            SchemeKind::Nnlspg => "nnlspg",
        }
    }

    pub fn problem_kind(self) -> ProblemKind {
        match self {
            SchemeKind::Alista | SchemeKind::ListaCp => ProblemKind::Lasso,
            SchemeKind::Dladmm => ProblemKind::L1L1,
            SchemeKind::Nnlspg => ProblemKind::Nnls,
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "alista" => SchemeKind::Alista,
            "lista-cp" | "listacp" => SchemeKind::ListaCp,
            "dladmm" => SchemeKind::Dladmm,
            "nnlspg" | "nnls-pg" => SchemeKind::Nnlspg,
            other => return Err(Error::Parse(format!("unknown scheme {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlistaLayer {
    pub theta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ListaCpLayer {
    pub theta: f64,
    /// `m×n`, applied as `W̃ᵀ`.
    pub w: DMatrix<f64>,
}

/// Per-entry parameters of one DLADMM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DladmmLayer {
    /// Penalty, length `m`.
    pub alpha: DVector<f64>,
    /// x-threshold, length `n`.
    pub beta: DVector<f64>,
    /// z-threshold, length `m`.
    pub gamma: DVector<f64>,
    /// x step, length `n`.
    pub sigma: DVector<f64>,
    /// z step, length `m`.
    pub xi: DVector<f64>,
}

impl DladmmLayer {
    /// Constants reproducing one linearized ADMM step.
    pub fn from_liadmm(params: LiAdmmParams, tau: f64, m: usize, n: usize) -> Self {
        DladmmLayer {
            alpha: DVector::from_element(m, params.alpha),
            beta: DVector::from_element(n, params.beta * tau),
            gamma: DVector::from_element(m, params.gamma),
            sigma: DVector::from_element(n, params.beta),
            xi: DVector::from_element(m, params.gamma),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnlspgLayer {
    /// `n×m`.
    pub zeta: DMatrix<f64>,
}

/// Trainable parameters `Θ = {ζ^k}` of a `K`-layer scheme.
#[derive(Debug, Clone, PartialEq)]
pub enum SchemeParams {
    Alista { w: DMatrix<f64>, layers: Vec<AlistaLayer> },
    ListaCp { layers: Vec<ListaCpLayer> },
    /// `w1` is shared by all layers and held fixed.
    Dladmm { w1: DMatrix<f64>, layers: Vec<DladmmLayer> },
    Nnlspg { layers: Vec<NnlspgLayer> },
}

/// `W` minimizing `‖WᵀA‖_F` subject to `W_{:,ℓ}ᵀA_{:,ℓ} = 1`.
///
/// The problem decouples by column: `W_{:,ℓ} = (AAᵀ)⁻¹a_ℓ / (a_ℓᵀ(AAᵀ)⁻¹a_ℓ)`.
pub fn compute_alista_w(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = a * a.transpose();
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numeric("AAᵀ is not positive definite; A must have full row rank".into()))?;
    let mut w = chol.solve(a);
    for (l, mut col) in w.column_iter_mut().enumerate() {
        let s = col.dot(&a.column(l));
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Numeric(format!("column {l} of A is zero or degenerate")));
        }
        col /= s;
    }
    Ok(w)
}

fn check_matrix(what: &str, m: &DMatrix<f64>, shape: (usize, usize)) -> Result<()> {
    if m.shape() != shape {
        return Err(Error::dims(format!("{what} is {:?}, expected {shape:?}", m.shape())));
    }
    Ok(())
}

fn residual(a: &DMatrix<f64>, x: &DVector<f64>, d: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("x", x, a.ncols())?;
    check_len("d", d, a.nrows())?;
    let mut r = a * x;
    r -= d;
    Ok(r)
}

/// `η_θ(x − γWᵀ(Ax − d))`.
pub fn alista_layer(
    x: &DVector<f64>,
    theta: f64,
    gamma: f64,
    a: &DMatrix<f64>,
    w: &DMatrix<f64>,
    d: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_matrix("W", w, a.shape())?;
    let r = residual(a, x, d)?;
    let mut v = w.tr_mul(&r);
    v *= -gamma;
    v += x;
    v.apply(|e| *e = shrink(*e, theta));
    Ok(v)
}

/// `η_θ(x − W̃ᵀ(Ax − d))`.
pub fn listacp_layer(
    x: &DVector<f64>,
    theta: f64,
    w: &DMatrix<f64>,
    a: &DMatrix<f64>,
    d: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_matrix("W̃", w, a.shape())?;
    let r = residual(a, x, d)?;
    let mut v = x - w.tr_mul(&r);
    v.apply(|e| *e = shrink(*e, theta));
    Ok(v)
}

/// `max(x − ζ(Ax − d), 0)`.
pub fn nnlspg_layer(x: &DVector<f64>, zeta: &DMatrix<f64>, a: &DMatrix<f64>, d: &DVector<f64>) -> Result<DVector<f64>> {
    check_matrix("ζ", zeta, (a.ncols(), a.nrows()))?;
    let r = residual(a, x, d)?;
    let mut v = x - zeta * r;
    v.apply(|e| *e = e.max(0.0));
    Ok(v)
}

/// One DLADMM layer on `(x, z, ν)`:
///
/// ```text
/// x̃ = η_β(x − σ∘W₁ᵀ[ν + α∘(Ax − z − d)])
/// z̃ = η_γ(z + ξ∘[ν + α∘(Ax̃ − z − d)])
/// ν̃ = ν + α∘(Ax̃ − z̃ − d)
/// ```
pub fn dladmm_layer(
    state: (&DVector<f64>, &DVector<f64>, &DVector<f64>),
    layer: &DladmmLayer,
    w1: &DMatrix<f64>,
    a: &DMatrix<f64>,
    d: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let (x, z, nu) = state;
    let (m, n) = a.shape();
    check_matrix("W₁", w1, (m, n))?;
    check_len("z", z, m)?;
    check_len("ν", nu, m)?;
    for (what, v, len) in [
        ("α", &layer.alpha, m),
        ("β", &layer.beta, n),
        ("γ", &layer.gamma, m),
        ("σ", &layer.sigma, n),
        ("ξ", &layer.xi, m),
    ] {
        check_len(what, v, len)?;
    }
    let mut r = residual(a, x, d)?;
    r -= z;
    let g = nu + layer.alpha.component_mul(&r);
    let mut x_new = x - layer.sigma.component_mul(&w1.tr_mul(&g));
    x_new.zip_apply(&layer.beta, |e, t| *e = shrink(*e, t));

    let mut r = residual(a, &x_new, d)?;
    r -= z;
    let h = nu + layer.alpha.component_mul(&r);
    let mut z_new = z + layer.xi.component_mul(&h);
    z_new.zip_apply(&layer.gamma, |e, t| *e = shrink(*e, t));

    let mut r = residual(a, &x_new, d)?;
    r -= &z_new;
    let nu_new = nu + layer.alpha.component_mul(&r);
    Ok((x_new, z_new, nu_new))
}

impl SchemeParams {
    /// Parameters reproducing the scheme's conventional algorithm at every
    /// layer (up to ALISTA, whose analytic `W` differs from `A/L`).
    pub fn init(kind: SchemeKind, problem: &ProblemInstance, layers: usize) -> Result<Self> {
        if problem.kind() != kind.problem_kind() {
            return Err(Error::config(format!("{kind} needs a {} problem, got {}", kind.problem_kind(), problem.kind())));
        }
        let a = problem.a();
        let l = problem.lipschitz();
        let tau = problem.tau();
        Ok(match kind {
            SchemeKind::Alista => {
                let w = compute_alista_w(a)?;
                // γ = 1 overshoots: ‖WᵀA‖ is of the order of L. Scale the step
                // to the operator norm and the threshold with it.
                let gamma = 1.0 / crate::linalg::lipschitz(&(w.transpose() * a))?.sqrt();
                SchemeParams::Alista { w, layers: vec![AlistaLayer { theta: gamma * tau, gamma }; layers] }
            }
            SchemeKind::ListaCp => SchemeParams::ListaCp {
                layers: vec![ListaCpLayer { theta: tau / l, w: a / l }; layers],
            },
            SchemeKind::Nnlspg => SchemeParams::Nnlspg {
                layers: vec![NnlspgLayer { zeta: a.transpose() / l }; layers],
            },
            SchemeKind::Dladmm => {
                let params = LiAdmmParams::with_penalty(1.0, l);
                SchemeParams::Dladmm {
                    w1: a.clone(),
                    layers: vec![DladmmLayer::from_liadmm(params, tau, problem.m(), problem.n()); layers],
                }
            }
        })
    }

    pub fn kind(&self) -> SchemeKind {
        match self {
            SchemeParams::Alista { .. } => SchemeKind::Alista,
            SchemeParams::ListaCp { .. } => SchemeKind::ListaCp,
            SchemeParams::Dladmm { .. } => SchemeKind::Dladmm,
            SchemeParams::Nnlspg { .. } => SchemeKind::Nnlspg,
        }
    }

    /// Number of layers `K`.
    pub fn depth(&self) -> usize {
        match self {
            SchemeParams::Alista { layers, .. } => layers.len(),
            SchemeParams::ListaCp { layers } => layers.len(),
            SchemeParams::Dladmm { layers, .. } => layers.len(),
            SchemeParams::Nnlspg { layers } => layers.len(),
        }
    }

    /// `(m, n)` the parameters were built for, when determined by a tensor.
    pub fn dims(&self) -> Option<(usize, usize)> {
        match self {
            SchemeParams::Alista { w, .. } | SchemeParams::Dladmm { w1: w, .. } => Some(w.shape()),
            SchemeParams::ListaCp { layers } => layers.first().map(|l| l.w.shape()),
            SchemeParams::Nnlspg { layers } => layers.first().map(|l| (l.zeta.ncols(), l.zeta.nrows())),
        }
    }

    /// Keep only the first `k` layers.
    pub fn truncate(&mut self, k: usize) {
        match self {
            SchemeParams::Alista { layers, .. } => layers.truncate(k),
            SchemeParams::ListaCp { layers } => layers.truncate(k),
            SchemeParams::Dladmm { layers, .. } => layers.truncate(k),
            SchemeParams::Nnlspg { layers } => layers.truncate(k),
        }
    }

    /// Number of trainable scalars in layer `k` (0-based).
    pub fn layer_len(&self, k: usize) -> usize {
        match self {
            SchemeParams::Alista { .. } => 2,
            SchemeParams::ListaCp { layers } => 1 + layers[k].w.len(),
            SchemeParams::Dladmm { layers, .. } => {
                let l = &layers[k];
                l.alpha.len() + l.beta.len() + l.gamma.len() + l.sigma.len() + l.xi.len()
            }
            SchemeParams::Nnlspg { layers } => layers[k].zeta.len(),
        }
    }

    /// Trainable scalars of layers `0..k`, layer by layer; matrices in
    /// column-major order.
    pub fn flatten(&self, k: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for j in 0..k {
            match self {
                SchemeParams::Alista { layers, .. } => out.extend([layers[j].theta, layers[j].gamma]),
                SchemeParams::ListaCp { layers } => {
                    out.push(layers[j].theta);
                    out.extend(layers[j].w.iter());
                }
                SchemeParams::Dladmm { layers, .. } => {
                    let l = &layers[j];
                    for v in [&l.alpha, &l.beta, &l.gamma, &l.sigma, &l.xi] {
                        out.extend(v.iter());
                    }
                }
                SchemeParams::Nnlspg { layers } => out.extend(layers[j].zeta.iter()),
            }
        }
        out
    }

    /// Inverse of [`Self::flatten`].
    pub fn unflatten(&mut self, k: usize, flat: &[f64]) -> Result<()> {
        let expected: usize = (0..k).map(|j| self.layer_len(j)).sum();
        if flat.len() != expected {
            return Err(Error::dims(format!("{} parameters for {k} layers needing {expected}", flat.len())));
        }
        let mut it = flat.iter().copied();
        let mut fill = |dst: &mut [f64]| dst.iter_mut().for_each(|e| *e = it.next().unwrap());
        for j in 0..k {
            match self {
                SchemeParams::Alista { layers, .. } => {
                    let mut buf = [0.0; 2];
                    fill(&mut buf);
                    layers[j] = AlistaLayer { theta: buf[0], gamma: buf[1] };
                }
                SchemeParams::ListaCp { layers } => {
                    fill(std::slice::from_mut(&mut layers[j].theta));
                    fill(layers[j].w.as_mut_slice());
                }
                SchemeParams::Dladmm { layers, .. } => {
                    let l = &mut layers[j];
                    for v in [&mut l.alpha, &mut l.beta, &mut l.gamma, &mut l.sigma, &mut l.xi] {
                        fill(v.as_mut_slice());
                    }
                }
                SchemeParams::Nnlspg { layers } => fill(layers[j].zeta.as_mut_slice()),
            }
        }
        Ok(())
    }

    /// Clamp thresholds of layers `0..k` to be nonnegative.
    pub fn project(&mut self, k: usize) {
        let clamp = |v: &mut f64| *v = v.max(0.0);
        for j in 0..k {
            match self {
                SchemeParams::Alista { layers, .. } => clamp(&mut layers[j].theta),
                SchemeParams::ListaCp { layers } => clamp(&mut layers[j].theta),
                SchemeParams::Dladmm { layers, .. } => {
                    layers[j].beta.iter_mut().for_each(clamp);
                    layers[j].gamma.iter_mut().for_each(clamp);
                }
                SchemeParams::Nnlspg { .. } => {}
            }
        }
    }

    /// Check that the parameters fit `problem`.
    pub fn check_problem(&self, problem: &ProblemInstance) -> Result<()> {
        if problem.kind() != self.kind().problem_kind() {
            return Err(Error::config(format!(
                "{} parameters cannot run on a {} problem",
                self.kind(),
                problem.kind()
            )));
        }
        let (m, n) = (problem.m(), problem.n());
        match self.dims() {
            Some(dims) if dims != (m, n) => Err(Error::dims(format!(
                "parameters built for {dims:?}, problem is ({m}, {n})"
            ))),
            _ => Ok(()),
        }
    }

    /// Attach the parameters to one instance.
    pub fn bind<'a>(&'a self, problem: &'a ProblemInstance) -> Result<BoundScheme<'a>> {
        self.check_problem(problem)?;
        Ok(BoundScheme { params: self, problem })
    }

    /// Point dimension the scheme acts on for `problem`.
    pub fn point_dim(&self, problem: &ProblemInstance) -> usize {
        match self.kind() {
            SchemeKind::Dladmm => problem.n() + 2 * problem.m(),
            _ => problem.n(),
        }
    }
}

/// A learned update sequence `x ↦ L(x; ζ^k)`, `k = 0..depth()`.
pub trait L2oUpdate {
    fn depth(&self) -> usize;

    /// Apply layer `k` (0-based) to `x`.
    fn update(&self, k: usize, x: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Scheme parameters attached to a problem instance.
#[derive(Debug, Clone, Copy)]
pub struct BoundScheme<'a> {
    params: &'a SchemeParams,
    problem: &'a ProblemInstance,
}

impl L2oUpdate for BoundScheme<'_> {
    fn depth(&self) -> usize {
        self.params.depth()
    }

    fn update(&self, k: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        if k >= self.depth() {
            return Err(Error::config(format!("layer {k} requested from a {}-layer scheme", self.depth())));
        }
        let (a, d) = (self.problem.a(), self.problem.d());
        match self.params {
            SchemeParams::Alista { w, layers } => alista_layer(x, layers[k].theta, layers[k].gamma, a, w, d),
            SchemeParams::ListaCp { layers } => listacp_layer(x, layers[k].theta, &layers[k].w, a, d),
            SchemeParams::Nnlspg { layers } => nnlspg_layer(x, &layers[k].zeta, a, d),
            SchemeParams::Dladmm { w1, layers } => {
                let (m, n) = (self.problem.m(), self.problem.n());
                check_len("DLADMM point", x, n + 2 * m)?;
                let (x0, z0, u0) = split_admm(x, n, m);
                let (x1, z1, u1) = dladmm_layer((&x0, &z0, &u0), &layers[k], w1, a, d)?;
                Ok(stack_admm(&x1, &z1, &u1))
            }
        }
    }
}
