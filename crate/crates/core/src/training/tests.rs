use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::operators::natural_fallback;
use crate::problems::{generate_l1l1, generate_lasso, generate_nnls, Dataset, DistributionTag, ProblemKind};
use crate::schemes::{L2oUpdate, SchemeKind};

fn data(kind: SchemeKind, count: usize, seed: u64) -> Dataset {
    match kind {
        SchemeKind::Alista | SchemeKind::ListaCp => generate_lasso(8, 14, 0.05, count, 0, DistributionTag::Seen, seed),
        SchemeKind::Dladmm => generate_l1l1(6, 9, 0.5, count, 0, DistributionTag::Seen, seed),
        SchemeKind::Nnlspg => generate_nnls(12, 7, count, 0, DistributionTag::Seen, seed),
    }
    .unwrap()
}

fn batch_of(ds: &Dataset, with_solutions: bool) -> Batch {
    let refs: Vec<_> = ds.train().iter().collect();
    Batch::new(&refs, with_solutions).unwrap()
}

fn perturb(params: &SchemeParams, k: usize, rng: &mut ChaCha8Rng, scale: f64) -> SchemeParams {
    let flat: Vec<f64> = params
        .flatten(k)
        .iter()
        .map(|p| p + scale * (p.abs() + 0.05) * rng.random_range(-1.0..1.0))
        .collect();
    let mut out = params.clone();
    out.unflatten(k, &flat).unwrap();
    out.project(k);
    out
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let da = DVector::from_column_slice(a);
    let db = DVector::from_column_slice(b);
    (&da - &db).norm() / db.norm().max(1e-12)
}

#[test]
fn loss_value_examples() {
    let p = ProblemInstance::from_parts(ProblemKind::Lasso, DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 0.0]), 1.0)
        .unwrap();
    let op = natural_fallback(&p).unwrap();
    let x = DVector::from_vec(vec![1.0, 0.0]);
    assert_eq!(loss_value(LossKind::Objective, &p, &x, None, &op).unwrap(), 1.0);
    assert_eq!(loss_value(LossKind::DistToSolution, &p, &x, Some(&x), &op).unwrap(), 0.0);
    assert!(loss_value(LossKind::DistToSolution, &p, &x, None, &op).is_err());
    // x = 0 is the minimizer (τ = 1 ≥ |Aᵀd|), hence a fixed point
    assert_eq!(loss_value(LossKind::FixedPointResidual, &p, &DVector::zeros(2), None, &op).unwrap(), 0.0);
}

#[test]
fn batched_residual_loss_matches_operator() {
    for kind in [SchemeKind::ListaCp, SchemeKind::Dladmm, SchemeKind::Nnlspg] {
        let ds = data(kind, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = perturb(&SchemeParams::init(kind, &ds.train()[0], 3).unwrap(), 3, &mut rng, 0.3);
        let fwd = forward_loss(&params, 3, &batch_of(&ds, false), LossKind::FixedPointResidual).unwrap();
        for (p, v) in ds.train().iter().zip(&fwd.per_instance) {
            let op = natural_fallback(p).unwrap();
            let bound = params.bind(p).unwrap();
            let mut x = op.zero_point();
            for k in 0..3 {
                x = bound.update(k, &x).unwrap();
            }
            let direct = loss_value(LossKind::FixedPointResidual, p, &x, None, &op).unwrap();
            assert!((direct - v).abs() <= 1e-10 * (1.0 + direct), "{kind}: {direct} vs {v}");
            let obj = loss_value(LossKind::Objective, p, &x, None, &op).unwrap();
            let fo = forward_loss(&params, 3, &Batch::new(&[p], false).unwrap(), LossKind::Objective).unwrap();
            assert!((obj - fo.loss).abs() <= 1e-12 * (1.0 + obj));
        }
    }
}

#[test]
fn initial_stage_loss_is_one_conventional_step() {
    for kind in [SchemeKind::ListaCp, SchemeKind::Dladmm, SchemeKind::Nnlspg] {
        let ds = data(kind, 5, 4);
        let params = SchemeParams::init(kind, &ds.train()[0], 2).unwrap();
        let fwd = forward_loss(&params, 1, &batch_of(&ds, false), LossKind::Objective).unwrap();
        let mut expected = 0.0;
        for p in ds.train() {
            let op = natural_fallback(p).unwrap();
            expected += op.objective(&op.apply(&op.zero_point()));
        }
        expected /= ds.train().len() as f64;
        assert!((fwd.loss - expected).abs() <= 1e-12, "{kind}");
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let losses = [LossKind::Objective, LossKind::DistToSolution, LossKind::FixedPointResidual];
    for kind in [SchemeKind::Alista, SchemeKind::ListaCp, SchemeKind::Dladmm, SchemeKind::Nnlspg] {
        let ds = data(kind, 3, 5);
        let batch = batch_of(&ds, true);
        let init = SchemeParams::init(kind, &ds.train()[0], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for loss in losses {
            let mut checked = 0;
            for _ in 0..40 {
                let params = perturb(&init, 3, &mut rng, 0.2);
                let fwd = forward_loss(&params, 3, &batch, loss).unwrap();
                if fwd.kink_margin < 1e-3 {
                    continue;
                }
                let (la, ga) = loss_and_gradient(&params, 3, &batch, loss).unwrap();
                let (lf, gf) = finite_diff_gradient(&params, 3, &batch, loss).unwrap();
                assert!((la - lf).abs() <= 1e-12 * (1.0 + la.abs()));
                let rd = rel_diff(&ga, &gf);
                assert!(rd <= 1e-4, "{kind} / {loss}: relative difference {rd}");
                checked += 1;
            }
            assert!(checked >= 5, "{kind} / {loss}: only {checked} kink-free points");
        }
    }
}

/// `½‖A(x − γWᵀ(Ax − d)) − d‖²` with `x = 0`: `∂/∂γ = (AWᵀd)ᵀ(γAWᵀd − d)`.
#[test]
fn alista_gamma_gradient_closed_form() {
    let ds = data(SchemeKind::Alista, 1, 7);
    let p0 = &ds.train()[0];
    let p = ProblemInstance::new(ProblemKind::Lasso, p0.dictionary().clone(), p0.d().clone(), 0.0).unwrap();
    let mut params = SchemeParams::init(SchemeKind::Alista, &p, 1).unwrap();
    params.unflatten(1, &[0.0, 0.4]).unwrap();
    let SchemeParams::Alista { w, .. } = &params else { unreachable!() };
    let v = p.a() * w.transpose() * p.d();
    let expected = v.dot(&(&v * 0.4 - p.d()));
    let (_, g) = loss_and_gradient(&params, 1, &Batch::new(&[&p], false).unwrap(), LossKind::Objective).unwrap();
    assert!((g[1] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
}

#[test]
fn nnlspg_gradient_vanishes_on_consistent_data() {
    let ds = data(SchemeKind::Nnlspg, 2, 8);
    let p = &ds.train()[0];
    // d = 0: every layer maps 0 to 0 and the residual factor is zero.
    let q = ProblemInstance::new(ProblemKind::Nnls, p.dictionary().clone(), DVector::zeros(p.m()), 0.0).unwrap();
    let params = SchemeParams::init(SchemeKind::Nnlspg, &q, 2).unwrap();
    let (l, g) = loss_and_gradient(&params, 2, &Batch::new(&[&q], false).unwrap(), LossKind::Objective).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.iter().all(|e| *e == 0.0));
}

#[test]
fn zero_epochs_returns_initialization() {
    let ds = data(SchemeKind::Alista, 10, 9);
    let params = SchemeParams::init(SchemeKind::Alista, &ds.train()[0], 3).unwrap();
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
    let (trained, report) = train_layerwise(params.clone(), ds.train(), &cfg).unwrap();
    assert_eq!(trained, params);
    assert_eq!(report.stages.len(), 3);
    assert!(report.stages.iter().all(|s| s.final_loss == s.initial_loss && !s.reverted));
}

#[test]
fn single_alista_layer_improves_on_its_initialization() {
    let ds = generate_lasso(20, 40, 0.001, 200, 0, DistributionTag::Seen, 10).unwrap();
    let params = SchemeParams::init(SchemeKind::Alista, &ds.train()[0], 1).unwrap();
    let cfg = TrainConfig { epochs: 30, ..TrainConfig::default() };
    let (_, report) = train_layerwise(params, ds.train(), &cfg).unwrap();
    let s = &report.stages[0];
    assert!(s.final_loss < s.initial_loss, "{s:?}");
    assert_eq!(report.log.len(), 30);
}

#[test]
fn stages_never_end_worse_than_they_start() {
    for kind in [SchemeKind::ListaCp, SchemeKind::Dladmm, SchemeKind::Nnlspg] {
        let ds = data(kind, 30, 11);
        let params = SchemeParams::init(kind, &ds.train()[0], 3).unwrap();
        let cfg = TrainConfig { epochs: 5, loss: LossKind::FixedPointResidual, ..TrainConfig::default() };
        let (_, report) = train_layerwise(params, ds.train(), &cfg).unwrap();
        for s in &report.stages {
            assert!(s.final_loss <= s.initial_loss, "{kind}: {s:?}");
        }
    }
}

#[test]
fn training_is_deterministic_with_minibatches() {
    let ds = data(SchemeKind::Nnlspg, 40, 12);
    let params = SchemeParams::init(SchemeKind::Nnlspg, &ds.train()[0], 2).unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: Some(16), seed: 5, ..TrainConfig::default() };
    let a = train_layerwise(params.clone(), ds.train(), &cfg).unwrap();
    let b = train_layerwise(params, ds.train(), &cfg).unwrap();
    assert_eq!(a, b);
    let mut csv = Vec::new();
    a.1.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("stage,epoch,loss\n1,1,"));
}

#[test]
fn nnlspg_beats_projected_gradient_after_training() {
    let ds = generate_nnls(30, 15, 200, 0, DistributionTag::Seen, 13).unwrap();
    let params = SchemeParams::init(SchemeKind::Nnlspg, &ds.train()[0], 4).unwrap();
    let cfg = TrainConfig { epochs: 30, ..TrainConfig::default() };
    let (trained, _) = train_layerwise(params.clone(), ds.train(), &cfg).unwrap();
    let batch = batch_of(&ds, false);
    let before = forward_loss(&params, 4, &batch, LossKind::Objective).unwrap().loss;
    let after = forward_loss(&trained, 4, &batch, LossKind::Objective).unwrap().loss;
    assert!(after <= before, "{after} > {before}");
}

#[test]
fn joint_finetune_adds_a_stage_and_fd_is_bounded() {
    let ds = data(SchemeKind::Alista, 20, 14);
    let params = SchemeParams::init(SchemeKind::Alista, &ds.train()[0], 2).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        joint_finetune: true,
        joint_epochs: 2,
        gradient: GradientMode::FiniteDiff,
        ..TrainConfig::default()
    };
    let (_, report) = train_layerwise(params, ds.train(), &cfg).unwrap();
    assert_eq!(report.stages.len(), 3);
    assert_eq!(report.stages[2].stage, None);

    let big = generate_lasso(70, 80, 0.01, 2, 0, DistributionTag::Seen, 1).unwrap();
    let lista = SchemeParams::init(SchemeKind::ListaCp, &big.train()[0], 1).unwrap();
    assert!(finite_diff_gradient(&lista, 1, &batch_of(&big, false), LossKind::Objective).is_err());
}
