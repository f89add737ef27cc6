//! Proximal primitives and the averaged operators used as fallbacks.
//!
//! Every operator here maps a point to a point of the same dimension and is
//! averaged (hence nonexpansive) under its step-size condition, so plain
//! repeated application converges to a fixed point that solves the problem.
//! For the linearized ADMM operator the "point" is the stacked triple
//! `[x; z; u]` and the residual is measured on the associated averaged
//! sequence `ν` rather than on the triple itself.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{self, PSD_ROUNDOFF};
use crate::problems::{Dictionary, ProblemInstance, ProblemKind};

/// Scalar soft-thresholding `sgn(v)·max(|v| − t, 0)`.
#[inline]
pub fn shrink(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Componentwise soft-thresholding with a common threshold: the proximal
/// operator of `θ‖·‖₁`.
pub fn soft_threshold(x: &DVector<f64>, theta: f64) -> Result<DVector<f64>> {
    if !(theta >= 0.0) {
        return Err(Error::InvalidParameter(format!("threshold must be >= 0, got {theta}")));
    }
    Ok(x.map(|v| shrink(v, theta)))
}

/// Soft-thresholding with one threshold per component.
pub fn soft_threshold_vec(x: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
    linalg::check_len("threshold vector", theta, x.len())?;
    if let Some(t) = theta.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::InvalidParameter(format!("threshold must be >= 0, got {t}")));
    }
    Ok(x.zip_map(theta, shrink))
}

/// Projection onto the nonnegative orthant.
pub fn project_nonneg(x: &DVector<f64>) -> DVector<f64> {
    x.map(|v| v.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FallbackKind {
    /// `Id − α∇f` for a smooth objective (LASSO with `τ = 0`).
    GradDescent,
    /// `prox_{αf}` for a smooth least-squares objective (LASSO with `τ = 0`).
    ProxPoint,
    /// `proj_C ∘ (Id − α∇g)` with `C` the nonnegative orthant (NNLS).
    ProjGrad,
    /// `prox_{αf} ∘ (Id − α∇g)`: ISTA on LASSO, projected gradient on NNLS.
    ProxGrad,
    /// `½(Id + R_{α∂f} ∘ R_{α∂g})` with `f = τ‖·‖₁`, `g = ½‖A· − d‖²`.
    DouglasRachford,
    /// Linearized ADMM on the ℓ₁–ℓ₁ problem.
    LiAdmm,
}

impl FallbackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FallbackKind::GradDescent => "grad-descent",
            FallbackKind::ProxPoint => "prox-point",
            FallbackKind::ProjGrad => "proj-grad",
            FallbackKind::ProxGrad => "prox-grad",
            FallbackKind::DouglasRachford => "douglas-rachford",
            FallbackKind::LiAdmm => "liadmm",
        }
    }

    /// The conventional algorithm for each problem family.
    pub fn natural_for(kind: ProblemKind) -> Self {
        match kind {
            ProblemKind::Lasso => FallbackKind::ProxGrad,
            ProblemKind::Nnls => FallbackKind::ProjGrad,
            ProblemKind::L1L1 => FallbackKind::LiAdmm,
        }
    }

    fn uses_gradient(self) -> bool {
        matches!(self, FallbackKind::GradDescent | FallbackKind::ProjGrad | FallbackKind::ProxGrad)
    }
}

impl fmt::Display for FallbackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FallbackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "grad-descent" | "gd" => FallbackKind::GradDescent,
            "prox-point" => FallbackKind::ProxPoint,
            "proj-grad" => FallbackKind::ProjGrad,
            "prox-grad" | "ista" => FallbackKind::ProxGrad,
            "douglas-rachford" | "dr" => FallbackKind::DouglasRachford,
            "liadmm" => FallbackKind::LiAdmm,
            other => return Err(Error::Parse(format!("unknown fallback operator {other:?}"))),
        })
    }
}

/// Step sizes of linearized ADMM: penalty `alpha`, primal step `beta`,
/// auxiliary step `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiAdmmParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LiAdmmParams {
    /// `γ = 1/α` and `β = 0.99/(α‖AᵀA‖₂)`.
    pub fn with_penalty(alpha: f64, lipschitz: f64) -> Self {
        LiAdmmParams {
            alpha,
            beta: 0.99 / (alpha * lipschitz),
            gamma: 1.0 / alpha,
        }
    }

    fn validate(&self, lipschitz: f64) -> Result<()> {
        let LiAdmmParams { alpha, beta, gamma } = *self;
        if !(alpha > 0.0 && beta > 0.0 && gamma > 0.0) {
            return Err(Error::config(format!("LiADMM steps must be positive, got {self:?}")));
        }
        if !(alpha * beta * lipschitz < 1.0) {
            return Err(Error::config(format!(
                "LiADMM needs alpha*beta*||A^T A|| < 1, got {}",
                alpha * beta * lipschitz
            )));
        }
        // B = -Id, so ||B^T B|| = 1.
        if alpha * gamma > 1.0 + PSD_ROUNDOFF {
            return Err(Error::config(format!(
                "LiADMM needs alpha*gamma*||B^T B|| <= 1, got {}",
                alpha * gamma
            )));
        }
        Ok(())
    }
}

/// Stacked averaged-operator iterate `ν = (ν₁, ν₂, ν₃)` associated with a
/// linearized ADMM state.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedNu {
    pub nu1: DVector<f64>,
    pub nu2: DVector<f64>,
    pub nu3: DVector<f64>,
}

impl StackedNu {
    pub fn distance(&self, other: &StackedNu) -> f64 {
        ((&self.nu1 - &other.nu1).norm_squared()
            + (&self.nu2 - &other.nu2).norm_squared()
            + (&self.nu3 - &other.nu3).norm_squared())
        .sqrt()
    }
}

/// Linearized ADMM iterate `(x^k, z^k, u^k)`.
///
/// The state also carries `x_ahead = x^{k+1}`, the x-update computed from
/// it, because the averaged sequence pairs `z^k` with `x^{k+1}`:
/// `ν^k = (u^k/α + A x^{k+1}, P x^{k+1}, −Q z^k)`. Consequently
/// `nu.nu2 == P·x_ahead` and `nu.nu3 == −Q·z` after every step.
#[derive(Debug, Clone, PartialEq)]
pub struct LiAdmmState {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub u: DVector<f64>,
    pub x_ahead: DVector<f64>,
    pub nu: StackedNu,
}

/// Linearized ADMM for `min ‖Ax − d‖₁ + τ‖x‖₁`, written as
/// `min τ‖x‖₁ + ‖z‖₁ s.t. Ax − z = d` (so `B = −Id`).
#[derive(Debug, Clone)]
pub struct LiAdmm {
    problem: ProblemInstance,
    params: LiAdmmParams,
    p: DMatrix<f64>,
    q: DMatrix<f64>,
}

impl LiAdmm {
    pub fn new(problem: &ProblemInstance, params: LiAdmmParams) -> Result<Self> {
        if problem.kind() != ProblemKind::L1L1 {
            return Err(Error::config(format!("linearized ADMM needs an l1-l1 problem, got {}", problem.kind())));
        }
        params.validate(problem.lipschitz())?;
        let (p, q) = liadmm_pq(problem.a(), &params)?;
        Ok(LiAdmm { problem: problem.clone(), params, p, q })
    }

    fn with_pq(problem: &ProblemInstance, params: LiAdmmParams, p: DMatrix<f64>, q: DMatrix<f64>) -> Self {
        LiAdmm { problem: problem.clone(), params, p, q }
    }

    pub fn params(&self) -> LiAdmmParams {
        self.params
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn problem(&self) -> &ProblemInstance {
        &self.problem
    }

    /// `x⁺ = η_{βτ}(x − βAᵀ[u + α(Ax − z − d)])`.
    pub fn x_update(&self, x: &DVector<f64>, z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let LiAdmmParams { alpha, beta, .. } = self.params;
        let a = self.problem.a();
        let mut w = a * x;
        w -= z;
        w -= self.problem.d();
        w *= alpha;
        w += u;
        let mut v = a.tr_mul(&w);
        v *= -beta;
        v += x;
        let t = beta * self.problem.tau();
        v.apply(|e| *e = shrink(*e, t));
        v
    }

    /// z- and u-updates given the new `x`:
    /// `z⁺ = η_γ(z + γ[u + α(Ax⁺ − z − d)])`, `u⁺ = u + α(Ax⁺ − z⁺ − d)`.
    pub fn zu_update(&self, x_new: &DVector<f64>, z: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let LiAdmmParams { alpha, gamma, .. } = self.params;
        let mut ax_d = self.problem.a() * x_new;
        ax_d -= self.problem.d();
        let mut z_new = &ax_d - z;
        z_new *= alpha;
        z_new += u;
        z_new *= gamma;
        z_new += z;
        z_new.apply(|e| *e = shrink(*e, gamma));
        let mut u_new = ax_d - &z_new;
        u_new *= alpha;
        u_new += u;
        (z_new, u_new)
    }

    /// One pass of the three-line update.
    pub fn raw_step(
        &self,
        x: &DVector<f64>,
        z: &DVector<f64>,
        u: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let x_new = self.x_update(x, z, u);
        let (z_new, u_new) = self.zu_update(&x_new, z, u);
        (x_new, z_new, u_new)
    }

    fn nu(&self, x_ahead: &DVector<f64>, z: &DVector<f64>, u: &DVector<f64>) -> StackedNu {
        let mut nu1 = self.problem.a() * x_ahead;
        nu1.axpy(1.0 / self.params.alpha, u, 1.0);
        StackedNu {
            nu1,
            nu2: &self.p * x_ahead,
            nu3: -(&self.q * z),
        }
    }

    pub fn state(&self, x: DVector<f64>, z: DVector<f64>, u: DVector<f64>) -> Result<LiAdmmState> {
        let (m, n) = (self.problem.m(), self.problem.n());
        linalg::check_len("x", &x, n)?;
        linalg::check_len("z", &z, m)?;
        linalg::check_len("u", &u, m)?;
        let x_ahead = self.x_update(&x, &z, &u);
        let nu = self.nu(&x_ahead, &z, &u);
        Ok(LiAdmmState { x, z, u, x_ahead, nu })
    }

    /// Advance one iteration, reusing the carried x-update.
    pub fn step(&self, s: &LiAdmmState) -> LiAdmmState {
        let x = s.x_ahead.clone();
        let (z, u) = self.zu_update(&x, &s.z, &s.u);
        let x_ahead = self.x_update(&x, &z, &u);
        let nu = self.nu(&x_ahead, &z, &u);
        LiAdmmState { x, z, u, x_ahead, nu }
    }

    /// Residual of the averaged operator at `prev`, given `next = step(prev)`.
    pub fn residual(&self, prev: &LiAdmmState, next: &LiAdmmState) -> f64 {
        block_residual(&self.problem, &self.p, &self.q, &prev.x_ahead, &prev.z, &next.x_ahead, &next.z)
    }
}

fn liadmm_pq(a: &DMatrix<f64>, params: &LiAdmmParams) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.ncols();
    let m = a.nrows();
    let mut p2 = -(a.transpose() * a);
    for i in 0..n {
        p2[(i, i)] += 1.0 / (params.alpha * params.beta);
    }
    let q2 = DMatrix::from_diagonal_element(m, m, 1.0 / (params.alpha * params.gamma) - 1.0);
    Ok((linalg::psd_sqrt(&p2)?, linalg::psd_sqrt(&q2)?))
}

/// `‖[A x₂ − z₁ − d; P(x₂ − x₁); −Q(z₁ − z₀)]‖` where `x₁, x₂` are consecutive
/// x-updates and `z₀, z₁` consecutive z-updates.
fn block_residual(
    problem: &ProblemInstance,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    x1: &DVector<f64>,
    z0: &DVector<f64>,
    x2: &DVector<f64>,
    z1: &DVector<f64>,
) -> f64 {
    let mut b1 = problem.a() * x2;
    b1 -= z1;
    b1 -= problem.d();
    let b2 = p * (x2 - x1);
    let b3 = q * (z1 - z0);
    (b1.norm_squared() + b2.norm_squared() + b3.norm_squared()).sqrt()
}

/// One linearized ADMM step. Builds `P` and `Q` for the refreshed `ν`; when
/// stepping repeatedly, construct a [`LiAdmm`] once instead.
pub fn liadmm_step(state: &LiAdmmState, problem: &ProblemInstance, params: LiAdmmParams) -> Result<LiAdmmState> {
    let solver = LiAdmm::new(problem, params)?;
    let s = solver.state(state.x.clone(), state.z.clone(), state.u.clone())?;
    Ok(solver.step(&s))
}

/// Fixed-point residual of the averaged operator behind linearized ADMM,
/// evaluated from two consecutive states.
pub fn liadmm_residual(
    prev: &LiAdmmState,
    next: &LiAdmmState,
    problem: &ProblemInstance,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<f64> {
    let (m, n) = (problem.m(), problem.n());
    if p.shape() != (n, n) || q.shape() != (m, m) {
        return Err(Error::dims(format!(
            "P is {:?} and Q is {:?}, expected ({n}, {n}) and ({m}, {m})",
            p.shape(),
            q.shape()
        )));
    }
    for s in [prev, next] {
        linalg::check_len("x_ahead", &s.x_ahead, n)?;
        linalg::check_len("z", &s.z, m)?;
    }
    Ok(block_residual(problem, p, q, &prev.x_ahead, &prev.z, &next.x_ahead, &next.z))
}

#[derive(Debug)]
enum Aux {
    None,
    /// Cholesky factor of `Id + αAᵀA`.
    Resolvent(Cholesky<f64, Dyn>),
    LiAdmm { params: LiAdmmParams, p: DMatrix<f64>, q: DMatrix<f64> },
}

#[derive(Debug)]
struct OperatorCore {
    kind: FallbackKind,
    dict: Arc<Dictionary>,
    step: f64,
    aux: Aux,
}

/// An averaged operator bound to one problem instance.
///
/// Dictionary-level precomputations (factorizations, `P`, `Q`) live behind
/// an `Arc` and are shared by [`FallbackOperator::rebind`].
#[derive(Debug, Clone)]
pub struct FallbackOperator {
    core: Arc<OperatorCore>,
    problem: ProblemInstance,
    admm: Option<Arc<LiAdmm>>,
}

fn check_compat(kind: FallbackKind, problem: &ProblemInstance) -> Result<()> {
    let ok = match kind {
        FallbackKind::GradDescent | FallbackKind::ProxPoint => {
            problem.kind() == ProblemKind::Lasso && problem.tau() == 0.0
        }
        FallbackKind::ProjGrad => problem.kind() == ProblemKind::Nnls,
        FallbackKind::ProxGrad => matches!(problem.kind(), ProblemKind::Lasso | ProblemKind::Nnls),
        FallbackKind::DouglasRachford => problem.kind() == ProblemKind::Lasso,
        FallbackKind::LiAdmm => problem.kind() == ProblemKind::L1L1,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::config(format!(
            "{kind} is not applicable to a {} problem with tau = {}",
            problem.kind(),
            problem.tau()
        )))
    }
}

/// Build the averaged operator `kind` for `problem` with step `step`.
///
/// Gradient-based kinds require `0 < step < 2/L`. For [`FallbackKind::LiAdmm`]
/// `step` is the penalty and the other steps follow
/// [`LiAdmmParams::with_penalty`].
pub fn make_fallback(kind: FallbackKind, problem: &ProblemInstance, step: f64) -> Result<FallbackOperator> {
    check_compat(kind, problem)?;
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::config(format!("step must be positive, got {step}")));
    }
    let lipschitz = problem.lipschitz();
    if kind.uses_gradient() && !(step < 2.0 / lipschitz) {
        return Err(Error::config(format!(
            "step {step} violates step < 2/L = {}",
            2.0 / lipschitz
        )));
    }
    if kind == FallbackKind::LiAdmm {
        return make_liadmm(problem, LiAdmmParams::with_penalty(step, lipschitz));
    }
    let aux = match kind {
        FallbackKind::ProxPoint | FallbackKind::DouglasRachford => {
            let a = problem.a();
            let mut h = a.transpose() * a;
            h *= step;
            for i in 0..h.nrows() {
                h[(i, i)] += 1.0;
            }
            let chol = Cholesky::new(h).ok_or_else(|| Error::Numeric("Id + αAᵀA is not positive definite".into()))?;
            Aux::Resolvent(chol)
        }
        _ => Aux::None,
    };
    Ok(FallbackOperator {
        core: Arc::new(OperatorCore { kind, dict: problem.dictionary().clone(), step, aux }),
        problem: problem.clone(),
        admm: None,
    })
}

/// Conventional operator for a problem: ISTA / projected gradient with step
/// `1/L`, or linearized ADMM with unit penalty.
pub fn natural_fallback(problem: &ProblemInstance) -> Result<FallbackOperator> {
    match problem.kind() {
        ProblemKind::Lasso => make_fallback(FallbackKind::ProxGrad, problem, 1.0 / problem.lipschitz()),
        ProblemKind::Nnls => make_fallback(FallbackKind::ProjGrad, problem, 1.0 / problem.lipschitz()),
        ProblemKind::L1L1 => make_fallback(FallbackKind::LiAdmm, problem, 1.0),
    }
}

pub fn make_liadmm(problem: &ProblemInstance, params: LiAdmmParams) -> Result<FallbackOperator> {
    let solver = LiAdmm::new(problem, params)?;
    let core = OperatorCore {
        kind: FallbackKind::LiAdmm,
        dict: problem.dictionary().clone(),
        step: params.alpha,
        aux: Aux::LiAdmm { params, p: solver.p.clone(), q: solver.q.clone() },
    };
    Ok(FallbackOperator {
        core: Arc::new(core),
        problem: problem.clone(),
        admm: Some(Arc::new(solver)),
    })
}

impl FallbackOperator {
    /// The same operator for another instance sharing this dictionary.
    pub fn rebind(&self, problem: &ProblemInstance) -> Result<FallbackOperator> {
        let same_dict = Arc::ptr_eq(&self.core.dict, problem.dictionary())
            || self.core.dict.a() == problem.a();
        if !same_dict {
            return Err(Error::config("rebind needs an instance with the same dictionary"));
        }
        check_compat(self.core.kind, problem)?;
        let admm = match &self.core.aux {
            Aux::LiAdmm { params, p, q } => Some(Arc::new(LiAdmm::with_pq(problem, *params, p.clone(), q.clone()))),
            _ => None,
        };
        Ok(FallbackOperator { core: self.core.clone(), problem: problem.clone(), admm })
    }

    pub fn kind(&self) -> FallbackKind {
        self.core.kind
    }

    pub fn step(&self) -> f64 {
        self.core.step
    }

    pub fn problem(&self) -> &ProblemInstance {
        &self.problem
    }

    pub fn liadmm(&self) -> Option<&LiAdmm> {
        self.admm.as_deref()
    }

    /// Dimension of the points this operator acts on.
    pub fn dim(&self) -> usize {
        match self.core.kind {
            FallbackKind::LiAdmm => self.problem.n() + 2 * self.problem.m(),
            _ => self.problem.n(),
        }
    }

    /// Starting point with every entry zero.
    pub fn zero_point(&self) -> DVector<f64> {
        DVector::zeros(self.dim())
    }

    fn gradient_step(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = self.problem.data_residual(x);
        let mut v = self.problem.a().tr_mul(&r);
        v *= -self.core.step;
        v += x;
        v
    }

    fn resolvent_g(&self, x: &DVector<f64>) -> DVector<f64> {
        let Aux::Resolvent(chol) = &self.core.aux else {
            unreachable!("resolvent requested without a factorization")
        };
        let mut rhs = self.problem.a().tr_mul(self.problem.d());
        rhs *= self.core.step;
        rhs += x;
        chol.solve(&rhs)
    }

    /// Apply the operator. Panics if `x` does not have length [`Self::dim`].
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dim(), "point has the wrong dimension");
        let step = self.core.step;
        match self.core.kind {
            FallbackKind::GradDescent => self.gradient_step(x),
            FallbackKind::ProxPoint => self.resolvent_g(x),
            FallbackKind::ProjGrad => {
                let mut v = self.gradient_step(x);
                v.apply(|e| *e = e.max(0.0));
                v
            }
            FallbackKind::ProxGrad => {
                let mut v = self.gradient_step(x);
                match self.problem.kind() {
                    ProblemKind::Nnls => v.apply(|e| *e = e.max(0.0)),
                    _ => {
                        let t = step * self.problem.tau();
                        v.apply(|e| *e = shrink(*e, t));
                    }
                }
                v
            }
            FallbackKind::DouglasRachford => {
                let jg = self.resolvent_g(x);
                let rg = 2.0 * &jg - x;
                let t = step * self.problem.tau();
                let jf = rg.map(|e| shrink(e, t));
                let rf = 2.0 * jf - rg;
                0.5 * (x + rf)
            }
            FallbackKind::LiAdmm => {
                let admm = self.admm.as_ref().expect("LiADMM operator without solver");
                let (x0, z0, u0) = split_admm(x, self.problem.n(), self.problem.m());
                let (x1, z1, u1) = admm.raw_step(&x0, &z0, &u0);
                stack_admm(&x1, &z1, &u1)
            }
        }
    }

    /// Fixed-point residual `‖x − T(x)‖` (for linearized ADMM, the residual
    /// of the associated averaged sequence, which needs one lookahead step).
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        let tx = self.apply(x);
        self.residual_from(x, &tx)
    }

    /// [`Self::residual`] when `T(x)` is already known.
    pub fn residual_from(&self, x: &DVector<f64>, tx: &DVector<f64>) -> f64 {
        match &self.admm {
            None => (x - tx).norm(),
            Some(admm) => {
                let (n, m) = (self.problem.n(), self.problem.m());
                let (x1, z1, u1) = split_admm(tx, n, m);
                let z0 = x.rows(n, m).into_owned();
                let x2 = admm.x_update(&x1, &z1, &u1);
                block_residual(&self.problem, &admm.p, &admm.q, &x1, &z0, &x2, &z1)
            }
        }
    }

    /// The primal estimate carried by a point: `x` itself, the x-block of an
    /// ADMM triple, or `J_{α∂g}(z)` for Douglas–Rachford.
    pub fn primal(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.core.kind {
            FallbackKind::LiAdmm => x.rows(0, self.problem.n()).into_owned(),
            FallbackKind::DouglasRachford => self.resolvent_g(x),
            _ => x.clone(),
        }
    }

    /// Objective value at the primal estimate of `x`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.problem
            .objective(&self.primal(x))
            .expect("primal estimate has the problem dimension")
    }

    /// The iterate on which this operator is averaged: `x` itself, or the
    /// stacked `ν` for linearized ADMM.
    pub fn lift(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.admm {
            None => x.clone(),
            Some(admm) => {
                let (n, m) = (self.problem.n(), self.problem.m());
                let (x0, z0, u0) = split_admm(x, n, m);
                let xa = admm.x_update(&x0, &z0, &u0);
                let nu = admm.nu(&xa, &z0, &u0);
                let mut out = DVector::zeros(m + n + m);
                out.rows_mut(0, m).copy_from(&nu.nu1);
                out.rows_mut(m, n).copy_from(&nu.nu2);
                out.rows_mut(m + n, m).copy_from(&nu.nu3);
                out
            }
        }
    }
}

/// Split a stacked ADMM point `[x; z; u]`.
pub fn split_admm(p: &DVector<f64>, n: usize, m: usize) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    (
        p.rows(0, n).into_owned(),
        p.rows(n, m).into_owned(),
        p.rows(n + m, m).into_owned(),
    )
}

pub fn stack_admm(x: &DVector<f64>, z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let (n, m) = (x.len(), z.len());
    let mut out = DVector::zeros(n + 2 * m);
    out.rows_mut(0, n).copy_from(x);
    out.rows_mut(n, m).copy_from(z);
    out.rows_mut(n + m, m).copy_from(u);
    out
}
