//! Layerwise training of scheme parameters.
//!
//! Stage `k` tunes layers `1..k` to minimize the mean loss of the `k`-th
//! iterate over the training set, starting from the parameters reached at
//! stage `k − 1` (the new layer starts at its initialization). A stage that
//! ends with a worse or non-finite loss is rolled back.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::operators::FallbackOperator;
use crate::problems::ProblemInstance;
use crate::schemes::SchemeParams;

mod batch;

pub use batch::{forward_loss, loss_and_gradient, Batch, Forward};

/// Training loss `φ_d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// `f_d(x)`.
    Objective,
    /// `‖x − x*_d‖²`.
    DistToSolution,
    /// `‖x − T_d(x)‖²`.
    FixedPointResidual,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Objective => "objective",
            LossKind::DistToSolution => "distance",
            LossKind::FixedPointResidual => "residual",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "objective" => LossKind::Objective,
            "distance" | "dist" => LossKind::DistToSolution,
            "residual" | "fpr" => LossKind::FixedPointResidual,
            other => return Err(Error::Parse(format!("unknown loss {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GradientMode {
    /// Central differences with step `1e−5·(1 + |p|)`.
    FiniteDiff,
    /// Reverse mode through the unrolled layers.
    Analytic,
}

impl FromStr for GradientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fd" | "finite-diff" => GradientMode::FiniteDiff,
            "analytic" => GradientMode::Analytic,
            other => return Err(Error::Parse(format!("unknown gradient mode {other:?}"))),
        })
    }
}

impl fmt::Display for GradientMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradientMode::FiniteDiff => "fd",
            GradientMode::Analytic => "analytic",
        })
    }
}

/// Finite differences are refused above this many parameters.
pub const FINITE_DIFF_MAX_PARAMS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub gradient: GradientMode,
    /// Step size each stage starts from.
    pub learning_rate: f64,
    /// Factor applied to the step size after every accepted step.
    pub lr_growth: f64,
    /// Halvings tried before giving up on a step.
    pub max_halvings: usize,
    pub epochs: usize,
    /// `None`: full batch up to 1000 samples, otherwise 256.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub joint_finetune: bool,
    pub joint_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Objective,
            gradient: GradientMode::Analytic,
            learning_rate: 1.0,
            lr_growth: 1.2,
            max_halvings: 30,
            epochs: 200,
            batch_size: None,
            seed: 0,
            joint_finetune: false,
            joint_epochs: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.lr_growth >= 1.0) {
            return Err(Error::config("learning rate must be positive and its growth factor >= 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("batch size must be positive"));
        }
        Ok(())
    }

    fn effective_batch(&self, samples: usize) -> usize {
        match self.batch_size {
            Some(b) => b.min(samples),
            None if samples <= 1000 => samples,
            None => 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    /// 1-based stage; `None` for joint fine-tuning.
    pub stage: Option<usize>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub reverted: bool,
    /// The stage hit a non-finite loss at some point.
    pub non_finite: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub stage: Option<usize>,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub stages: Vec<StageReport>,
    pub log: Vec<LogEntry>,
}

impl TrainReport {
    /// CSV with columns `stage,epoch,loss`; joint fine-tuning is stage `joint`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "stage,epoch,loss")?;
        for e in &self.log {
            match e.stage {
                Some(s) => writeln!(w, "{s},{},{:e}", e.epoch, e.loss)?,
                None => writeln!(w, "joint,{},{:e}", e.epoch, e.loss)?,
            }
        }
        Ok(())
    }
}

/// Loss of a single iterate. `x_star` is required for the distance loss.
pub fn loss_value(
    loss: LossKind,
    problem: &ProblemInstance,
    x: &DVector<f64>,
    x_star: Option<&DVector<f64>>,
    op: &FallbackOperator,
) -> Result<f64> {
    match loss {
        LossKind::Objective => problem.objective(x),
        LossKind::DistToSolution => {
            let xs = x_star.ok_or_else(|| Error::config("distance loss needs a reference solution"))?;
            let n = problem.n();
            crate::linalg::check_len("reference solution", xs, n)?;
            if x.len() < n {
                return Err(Error::dims(format!("point of length {} for n = {n}", x.len())));
            }
            Ok((x.rows(0, n) - xs).norm_squared())
        }
        LossKind::FixedPointResidual => {
            crate::linalg::check_len("point", x, op.dim())?;
            Ok(op.residual(x).powi(2))
        }
    }
}

fn clone_with(params: &SchemeParams, k: usize, flat: &[f64]) -> Result<SchemeParams> {
    let mut p = params.clone();
    p.unflatten(k, flat)?;
    Ok(p)
}

/// Central-difference gradient of the mean loss after `k` layers.
pub fn finite_diff_gradient(params: &SchemeParams, k: usize, batch: &Batch, loss: LossKind) -> Result<(f64, Vec<f64>)> {
    let flat = params.flatten(k);
    if flat.len() > FINITE_DIFF_MAX_PARAMS {
        return Err(Error::config(format!(
            "finite differences over {} parameters; use analytic gradients",
            flat.len()
        )));
    }
    let base = forward_loss(params, k, batch, loss)?.loss;
    let mut grad = vec![0.0; flat.len()];
    let mut probe = flat.clone();
    for i in 0..flat.len() {
        let h = 1e-5 * (1.0 + flat[i].abs());
        probe[i] = flat[i] + h;
        let up = forward_loss(&clone_with(params, k, &probe)?, k, batch, loss)?.loss;
        probe[i] = flat[i] - h;
        let down = forward_loss(&clone_with(params, k, &probe)?, k, batch, loss)?.loss;
        probe[i] = flat[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok((base, grad))
}

/// Mean loss after `k` layers and its gradient under `mode`.
pub fn gradient(params: &SchemeParams, k: usize, batch: &Batch, loss: LossKind, mode: GradientMode) -> Result<(f64, Vec<f64>)> {
    match mode {
        GradientMode::Analytic => loss_and_gradient(params, k, batch, loss),
        GradientMode::FiniteDiff => finite_diff_gradient(params, k, batch, loss),
    }
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    full: Vec<Batch>,
    samples: &'a [ProblemInstance],
    with_solutions: bool,
    rng: ChaCha8Rng,
}

impl Trainer<'_> {
    /// Mean loss over the whole training set (weighted by chunk size).
    fn full_loss(&self, params: &SchemeParams, k: usize) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0;
        for b in &self.full {
            total += forward_loss(params, k, b, self.cfg.loss)?.loss * b.len() as f64;
            count += b.len();
        }
        Ok(total / count as f64)
    }

    fn batches(&mut self) -> Result<Vec<Batch>> {
        let size = self.cfg.effective_batch(self.samples.len());
        if size >= self.samples.len() {
            return Ok(self.full.clone());
        }
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut self.rng);
        order
            .chunks(size)
            .map(|c| {
                let refs: Vec<&ProblemInstance> = c.iter().map(|&i| &self.samples[i]).collect();
                Batch::new(&refs, self.with_solutions)
            })
            .collect()
    }

    /// Gradient descent with backtracking on layers `0..k`.
    fn stage(&mut self, params: &mut SchemeParams, k: usize, stage: Option<usize>, epochs: usize, report: &mut TrainReport) -> Result<()> {
        let warm = params.clone();
        let initial = self.full_loss(params, k)?;
        let mut lr = self.cfg.learning_rate;
        let mut non_finite = !initial.is_finite();
        for epoch in 1..=epochs {
            if non_finite {
                break;
            }
            for batch in self.batches()? {
                let (loss, grad) = gradient(params, k, &batch, self.cfg.loss, self.cfg.gradient)?;
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    non_finite = true;
                    break;
                }
                let flat = params.flatten(k);
                let mut step_taken = false;
                for _ in 0..=self.cfg.max_halvings {
                    let cand: Vec<f64> = flat.iter().zip(&grad).map(|(p, g)| p - lr * g).collect();
                    let mut trial = clone_with(params, k, &cand)?;
                    trial.project(k);
                    let l = forward_loss(&trial, k, &batch, self.cfg.loss)?.loss;
                    if l.is_finite() && l <= loss {
                        *params = trial;
                        lr *= self.cfg.lr_growth;
                        step_taken = true;
                        break;
                    }
                    lr *= 0.5;
                }
                if !step_taken {
                    lr = self.cfg.learning_rate;
                }
            }
            let loss = self.full_loss(params, k)?;
            non_finite |= !loss.is_finite();
            report.log.push(LogEntry { stage, epoch, loss });
        }
        let mut final_loss = self.full_loss(params, k)?;
        non_finite |= !final_loss.is_finite();
        let reverted = non_finite || final_loss > initial;
        if reverted {
            *params = warm;
            final_loss = initial;
        }
        report.stages.push(StageReport { stage, initial_loss: initial, final_loss, reverted, non_finite });
        Ok(())
    }
}

/// Train all layers of `params` stage by stage on `samples`.
pub fn train_layerwise(
    params: SchemeParams,
    samples: &[ProblemInstance],
    cfg: &TrainConfig,
) -> Result<(SchemeParams, TrainReport)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    for p in samples {
        params.check_problem(p)?;
    }
    let with_solutions = cfg.loss == LossKind::DistToSolution;
    // Full-set evaluation in chunks to bound memory.
    let full = samples
        .chunks(1000)
        .map(|c| Batch::new(&c.iter().collect::<Vec<_>>(), with_solutions))
        .collect::<Result<Vec<_>>>()?;
    let mut trainer = Trainer {
        cfg,
        full,
        samples,
        with_solutions,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let mut params = params;
    let mut report = TrainReport::default();
    let depth = params.depth();
    for k in 1..=depth {
        trainer.stage(&mut params, k, Some(k), cfg.epochs, &mut report)?;
    }
    if cfg.joint_finetune && depth > 0 {
        trainer.stage(&mut params, depth, None, cfg.joint_epochs, &mut report)?;
    }
    Ok((params, report))
}

#[cfg(test)]
mod tests;
