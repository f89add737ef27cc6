//! Safeguarded learned optimization.
//!
//! A learned update `L(x; ζ)` is accepted only when the fixed-point residual
//! of a trusted averaged operator `T` at the proposed point is small relative
//! to a running reference value `μ`; otherwise the iteration falls back to
//! `x ← T(x)`. This keeps the convergence guarantee of `T` while letting a
//! trained model do most of the work on data it was trained for.
//!
//! Modules, bottom-up:
//!
//! * [`problems`]: LASSO, ℓ₁–ℓ₁ and NNLS instances, synthetic data, reference solutions.
//! * [`operators`]: proximal primitives and averaged fallback operators.
//! * [`safeguards`]: the `μ` update rules.
//! * [`executor`]: fixed-point, unsafeguarded and safeguarded runs.
//! * [`schemes`]: unrolled learned layers (ALISTA, LISTA-CP, NNLS-PG, DLADMM).
//! * [`training`]: layerwise training of scheme parameters.

// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod executor;
pub mod linalg;
pub mod operators;
pub mod problems;
pub mod safeguards;
pub mod schemes;
pub mod training;

pub use error::{Error, Result};
