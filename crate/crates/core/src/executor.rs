//! Fixed-point iteration, unsafeguarded learned iteration and the
//! safeguarded method.
//!
//! Every run produces a [`RunTrace`] with one record per iterate `x^k`,
//! `k = 1, 2, …`. Record `k` carries the residual `‖x^k − T(x^k)‖`, the
//! safeguard value `μ_k` used to choose `x^{k+1}`, and whether that step
//! came from the fallback operator. A run of `N` steps therefore has up to
//! `N + 1` records; the last one describes the final point and never has
//! the fallback flag set.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::check_len;
use crate::operators::FallbackOperator;
use crate::safeguards::SafeguardSpec;
use crate::schemes::L2oUpdate;

/// Default stopping tolerance on the fixed-point residual.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Stop once the residual of the current iterate is at most `tol`.
    pub tol: f64,
    /// Evaluate the objective at every iterate.
    pub record_objective: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { tol: DEFAULT_TOL, record_objective: false }
    }
}

impl RunOptions {
    pub fn with_objective(mut self) -> Self {
        self.record_objective = true;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub k: usize,
    pub residual: f64,
    /// `μ_k`; `None` outside safeguarded runs.
    pub mu: Option<f64>,
    /// Whether `x^{k+1}` was produced by the fallback operator.
    pub used_fallback: bool,
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<IterRecord>,
    /// First iteration past the learned depth, when the run went beyond it.
    pub extension_start: Option<usize>,
    pub final_point: DVector<f64>,
}

impl RunTrace {
    pub fn final_record(&self) -> &IterRecord {
        self.records.last().expect("a trace always has at least one record")
    }

    pub fn final_residual(&self) -> f64 {
        self.final_record().residual
    }

    /// Number of steps taken (records minus one).
    pub fn steps(&self) -> usize {
        self.records.len() - 1
    }

    pub fn fallback_count(&self) -> usize {
        self.records.iter().filter(|r| r.used_fallback).count()
    }
}

struct Recorder<'a> {
    monitor: &'a FallbackOperator,
    opts: RunOptions,
    records: Vec<IterRecord>,
}

impl Recorder<'_> {
    fn push(&mut self, x: &DVector<f64>, residual: f64, mu: Option<f64>, used_fallback: bool) {
        let objective = self.opts.record_objective.then(|| self.monitor.objective(x));
        self.records.push(IterRecord {
            k: self.records.len() + 1,
            residual,
            mu,
            used_fallback,
            objective,
        });
    }
}

fn start(op: &FallbackOperator, x1: &DVector<f64>, opts: RunOptions) -> Result<()> {
    check_len("initial point", x1, op.dim())?;
    if !(opts.tol >= 0.0) {
        return Err(Error::config(format!("tolerance must be >= 0, got {}", opts.tol)));
    }
    Ok(())
}

/// `x^{k+1} = T(x^k)` for up to `iters` steps.
pub fn run_km(op: &FallbackOperator, x1: &DVector<f64>, iters: usize, opts: RunOptions) -> Result<RunTrace> {
    start(op, x1, opts)?;
    let mut rec = Recorder { monitor: op, opts, records: Vec::with_capacity(iters + 1) };
    let mut x = x1.clone();
    let mut tx = op.apply(&x);
    let mut r = op.residual_from(&x, &tx);
    for _ in 0..iters {
        if r <= opts.tol {
            break;
        }
        rec.push(&x, r, None, true);
        x = tx;
        tx = op.apply(&x);
        r = op.residual_from(&x, &tx);
    }
    rec.push(&x, r, None, false);
    Ok(RunTrace { records: rec.records, extension_start: None, final_point: x })
}

/// Unsafeguarded learned iteration `x^{k+1} = L(x^k; ζ^k)` over all layers.
///
/// `monitor` is only used to report residuals and objectives.
pub fn run_l2o(
    update: &dyn L2oUpdate,
    monitor: &FallbackOperator,
    x1: &DVector<f64>,
    opts: RunOptions,
) -> Result<RunTrace> {
    start(monitor, x1, opts)?;
    let depth = update.depth();
    let mut rec = Recorder { monitor, opts, records: Vec::with_capacity(depth + 1) };
    let mut x = x1.clone();
    for k in 0..depth {
        rec.push(&x, monitor.residual(&x), None, false);
        x = update.update(k, &x)?;
        check_len("learned update", &x, monitor.dim())?;
    }
    rec.push(&x, monitor.residual(&x), None, false);
    Ok(RunTrace { records: rec.records, extension_start: None, final_point: x })
}

/// Safeguarded learned iteration.
///
/// For `k ≤ K` the candidate `y = L(x^k; ζ^k)` is accepted when
/// `‖y − T(y)‖ ≤ α·μ_k`, otherwise `x^{k+1} = T(x^k)`. Past the learned depth
/// only `T` is applied. After each step `μ` is updated with the residual of
/// `x^{k+1}`. The run stops after `total_iters` steps or once the residual
/// drops to `opts.tol`.
pub fn run_safe_l2o(
    update: &dyn L2oUpdate,
    op: &FallbackOperator,
    safeguard: SafeguardSpec,
    x1: &DVector<f64>,
    total_iters: usize,
    opts: RunOptions,
) -> Result<RunTrace> {
    start(op, x1, opts)?;
    let depth = update.depth();
    let mut rec = Recorder { monitor: op, opts, records: Vec::with_capacity(total_iters + 1) };
    let mut x = x1.clone();
    let mut tx = op.apply(&x);
    let mut r = op.residual_from(&x, &tx);
    let mut sg = safeguard.init(r)?;
    let extension_start = (total_iters > depth).then_some(depth + 1);
    for k in 0..total_iters {
        if r <= opts.tol {
            break;
        }
        let mu = sg.mu();
        let mut accepted = None;
        if k < depth {
            let y = update.update(k, &x)?;
            check_len("learned update", &y, op.dim())?;
            let ty = op.apply(&y);
            let ry = op.residual_from(&y, &ty);
            if sg.check(ry) {
                accepted = Some((y, ty, ry));
            }
        }
        let used_fallback = accepted.is_none();
        let (next, t_next, r_next) = match accepted {
            Some(step) => step,
            None => {
                let t_next = op.apply(&tx);
                let r_next = op.residual_from(&tx, &t_next);
                (tx, t_next, r_next)
            }
        };
        rec.push(&x, r, Some(mu), used_fallback);
        sg.update(r_next);
        x = next;
        tx = t_next;
        r = r_next;
    }
    rec.push(&x, r, Some(sg.mu()), false);
    Ok(RunTrace { records: rec.records, extension_start, final_point: x })
}

/// Adversarial update `y = x + c`, for stress-testing the safeguard.
#[derive(Debug, Clone)]
pub struct ShiftUpdate {
    pub shift: DVector<f64>,
    pub depth: usize,
}

impl L2oUpdate for ShiftUpdate {
    fn depth(&self) -> usize {
        self.depth
    }

    fn update(&self, _k: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("shifted point", x, self.shift.len())?;
        Ok(x + &self.shift)
    }
}

/// The fallback operator used as a learned update.
#[derive(Debug, Clone)]
pub struct FallbackUpdate<'a> {
    pub op: &'a FallbackOperator,
    pub depth: usize,
}

impl L2oUpdate for FallbackUpdate<'_> {
    fn depth(&self) -> usize {
        self.depth
    }

    fn update(&self, _k: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.op.apply(x))
    }
}
