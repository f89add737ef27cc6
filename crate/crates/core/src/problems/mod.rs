//! Problem definitions, synthetic data, reference solutions and the
//! relative objective error used for reporting.
//!
//! Three problem families are supported, all sharing a dictionary `A ∈ R^{m×n}`
//! and an observation `d ∈ R^m`:
//!
//! * LASSO: `½‖Ax − d‖² + τ‖x‖₁`
//! * ℓ₁–ℓ₁ sparse coding: `‖Ax − d‖₁ + τ‖x‖₁`
//! * NNLS: `½‖Ax − d‖²` subject to `x ≥ 0`

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

mod generate;
mod io;
mod reference;

pub use generate::{
    generate, generate_l1l1, generate_lasso, generate_nnls, CodeDistribution, Dataset,
    DatasetHeader, DistributionTag, GeneratorSpec, Split,
};
pub use io::{read_dataset, read_dataset_from, write_dataset, write_dataset_to, DATASET_MAGIC};
pub use reference::{solve_reference, Reference, REFERENCE_MAX_ITER, REFERENCE_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    Lasso,
    L1L1,
    Nnls,
}

impl ProblemKind {
    /// Regularization weight used by the synthetic experiments.
    pub fn default_tau(self) -> f64 {
        match self {
            ProblemKind::Lasso => 0.001,
            ProblemKind::L1L1 => 1.0,
            ProblemKind::Nnls => 0.0,
        }
    }

    /// Default `(m, n)` of the synthetic experiments.
    pub fn default_dims(self) -> (usize, usize) {
        match self {
            ProblemKind::Lasso | ProblemKind::L1L1 => (250, 500),
            ProblemKind::Nnls => (500, 250),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Lasso => "lasso",
            ProblemKind::L1L1 => "l1l1",
            ProblemKind::Nnls => "nnls",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lasso" => Ok(ProblemKind::Lasso),
            "l1l1" | "l1-l1" => Ok(ProblemKind::L1L1),
            "nnls" => Ok(ProblemKind::Nnls),
            other => Err(Error::Parse(format!("unknown problem kind {other:?}"))),
        }
    }
}

/// A dictionary together with its cached Lipschitz constant `‖AᵀA‖₂`.
#[derive(Debug, Clone)]
pub struct Dictionary {
    a: DMatrix<f64>,
    lipschitz: f64,
}

impl Dictionary {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let lipschitz = linalg::lipschitz(&a)?;
        Ok(Dictionary { a, lipschitz })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// `‖AᵀA‖₂`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn max_column_norm_deviation(&self) -> f64 {
        self.a
            .column_iter()
            .map(|c| (c.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// One convex problem: a dictionary, an observation and a regularizer weight.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    kind: ProblemKind,
    dict: Arc<Dictionary>,
    d: DVector<f64>,
    tau: f64,
    x_gen: Option<DVector<f64>>,
    reference: OnceLock<Reference>,
}

impl ProblemInstance {
    pub fn new(kind: ProblemKind, dict: Arc<Dictionary>, d: DVector<f64>, tau: f64) -> Result<Self> {
        linalg::check_len("observation d", &d, dict.m())?;
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::InvalidParameter(format!("tau must be finite and >= 0, got {tau}")));
        }
        if kind == ProblemKind::Nnls && tau != 0.0 {
            return Err(Error::config("NNLS has no regularizer; tau must be 0"));
        }
        Ok(ProblemInstance {
            kind,
            dict,
            d,
            tau,
            x_gen: None,
            reference: OnceLock::new(),
        })
    }

    /// Convenience constructor that builds a private dictionary.
    pub fn from_parts(kind: ProblemKind, a: DMatrix<f64>, d: DVector<f64>, tau: f64) -> Result<Self> {
        Self::new(kind, Arc::new(Dictionary::new(a)?), d, tau)
    }

    /// Attach the code that generated `d` (not the minimizer).
    pub fn with_generating_code(mut self, x: DVector<f64>) -> Result<Self> {
        linalg::check_len("generating code", &x, self.n())?;
        self.x_gen = Some(x);
        Ok(self)
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn dictionary(&self) -> &Arc<Dictionary> {
        &self.dict
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.dict.a
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn m(&self) -> usize {
        self.dict.m()
    }

    pub fn n(&self) -> usize {
        self.dict.n()
    }

    pub fn lipschitz(&self) -> f64 {
        self.dict.lipschitz
    }

    pub fn generating_code(&self) -> Option<&DVector<f64>> {
        self.x_gen.as_ref()
    }

    pub(crate) fn reference_cell(&self) -> &OnceLock<Reference> {
        &self.reference
    }

    /// `Ax − d`.
    pub fn data_residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut r = self.a() * x;
        r -= &self.d;
        r
    }

    /// Objective value at `x`. For ℓ₁–ℓ₁ problems `x` may also be a stacked
    /// ADMM point `[x; z; u]`, in which case only the leading block is used.
    pub fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        let n = self.n();
        let stacked = self.kind == ProblemKind::L1L1 && x.len() == n + 2 * self.m();
        let x = if x.len() == n || stacked {
            x.rows(0, n)
        } else {
            return Err(Error::dims(format!(
                "objective: point of length {} for a problem with n = {n}",
                x.len()
            )));
        };
        let mut r = self.a() * x;
        r -= &self.d;
        Ok(match self.kind {
            ProblemKind::Lasso => 0.5 * r.norm_squared() + self.tau * x.lp_norm(1),
            ProblemKind::L1L1 => r.lp_norm(1) + self.tau * x.lp_norm(1),
            ProblemKind::Nnls => 0.5 * r.norm_squared(),
        })
    }
}

/// Ratio-of-means relative objective error
/// `mean(f(x) − f*) / mean(f*)` over a batch.
pub fn relative_error(objectives: &[f64], f_stars: &[f64]) -> Result<f64> {
    if objectives.len() != f_stars.len() || objectives.is_empty() {
        return Err(Error::dims(format!(
            "relative error over {} objectives and {} optimal values",
            objectives.len(),
            f_stars.len()
        )));
    }
    let count = objectives.len() as f64;
    let gap: f64 = objectives.iter().zip(f_stars).map(|(f, s)| f - s).sum::<f64>() / count;
    let base: f64 = f_stars.iter().sum::<f64>() / count;
    if base == 0.0 {
        return Err(Error::Numeric("relative error with zero mean optimal value".into()));
    }
    Ok(gap / base)
}
