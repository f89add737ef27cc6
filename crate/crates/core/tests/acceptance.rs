//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line
//! each plus a summary. With `--strict` (or `ACCEPTANCE_STRICT` set) any
//! failure makes the exit status non-zero.
//!
//! Run alone with `cargo test -p safe-l2o --test acceptance`; positional
//! arguments select criteria by number.

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use safe_l2o::executor::{run_km, run_l2o, run_safe_l2o, RunOptions, RunTrace, ShiftUpdate};
use safe_l2o::operators::{make_fallback, natural_fallback, FallbackKind, LiAdmm, LiAdmmParams, shrink, liadmm_residual};
use safe_l2o::problems::{
    generate_l1l1, generate_lasso, relative_error, Dataset, DistributionTag, ProblemInstance,
};
use safe_l2o::safeguards::{Safeguard, SafeguardScheme, SafeguardSpec};
use safe_l2o::schemes::{compute_alista_w, L2oUpdate, SchemeKind, SchemeParams};
use safe_l2o::training::{
    finite_diff_gradient, forward_loss, loss_and_gradient, train_layerwise, Batch, LossKind, TrainConfig,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const SCHEMES: [SafeguardScheme; 5] = [
    SafeguardScheme::Geometric { theta: 0.5 },
    SafeguardScheme::RecentTerm,
    SafeguardScheme::ArithmeticAverage,
    SafeguardScheme::ExponentialAverage { theta: 0.25 },
    SafeguardScheme::RecentMax { m: 3 },
];

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn adversarial_safeguard() -> Outcome {
    let data = generate_lasso(50, 100, 0.001, 20, 0, DistributionTag::Seen, 101).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dir = DVector::from_fn(100, |_, _| rng.sample::<f64, _>(StandardNormal));
    let shift = ShiftUpdate { shift: dir.normalize() * 10.0, depth: 5000 };
    let mut worst_safe: f64 = 0.0;
    let mut details = Vec::new();
    for scheme in SCHEMES {
        let spec = SafeguardSpec::new(scheme, 0.99).unwrap();
        let finals: Vec<f64> = data
            .train()
            .iter()
            .map(|p| {
                let op = natural_fallback(p).unwrap();
                run_safe_l2o(&shift, &op, spec, &op.zero_point(), 5000, RunOptions::default())
                    .unwrap()
                    .final_residual()
            })
            .collect();
        worst_safe = worst_safe.max(mean(&finals));
        details.push(format!("{scheme}={:.1e}", mean(&finals)));
    }
    let unsafe_finals: Vec<f64> = data
        .train()
        .iter()
        .map(|p| {
            let op = natural_fallback(p).unwrap();
            run_l2o(&shift, &op, &op.zero_point(), RunOptions::default()).unwrap().final_residual()
        })
        .collect();
    let unsafe_mean = mean(&unsafe_finals);
    // The fallback alone over the same budget: the safeguarded runs cannot
    // be expected to beat it by much, since every rejection is one ISTA step.
    let ista: Vec<f64> = data
        .train()
        .iter()
        .map(|p| {
            let op = natural_fallback(p).unwrap();
            run_km(&op, &op.zero_point(), 5000, RunOptions::default()).unwrap().final_residual()
        })
        .collect();
    check(
        worst_safe <= 1e-5 && unsafe_mean > 1e3,
        format!(
            "safe mean residuals [{}], unsafeguarded {:.1e}, plain ISTA {:.1e}",
            details.join(", "),
            unsafe_mean,
            mean(&ista)
        ),
    )
}

fn liadmm_residual_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let data = generate_l1l1(5, 8, 1.0, 1, 0, DistributionTag::Seen, 300 + seed).unwrap();
        let p = &data.train()[0];
        let l = p.lipschitz();
        let alpha = rng.random_range(0.3..3.0);
        let params = LiAdmmParams {
            alpha,
            beta: rng.random_range(0.1..0.99) / (alpha * l),
            gamma: rng.random_range(0.1..1.0) / alpha,
        };
        let admm = LiAdmm::new(p, params).unwrap();
        // Independent iteration from the three-line update and the
        // definition ν^k = (u^k/α + A x^{k+1}, P x^{k+1}, −Q z^k).
        let (a, d, tau) = (p.a(), p.d(), p.tau());
        let (al, be, ga) = (params.alpha, params.beta, params.gamma);
        let mut xs = vec![DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0))];
        let mut zs = vec![DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0))];
        let mut us = vec![DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0))];
        for k in 0..102 {
            let x = (&xs[k] - a.transpose() * (&us[k] + (a * &xs[k] - &zs[k] - d) * al) * be).map(|e| shrink(e, be * tau));
            let z = (&zs[k] + (&us[k] + (a * &x - &zs[k] - d) * al) * ga).map(|e| shrink(e, ga));
            let u = &us[k] + (a * &x - &z - d) * al;
            xs.push(x);
            zs.push(z);
            us.push(u);
        }
        let nu = |k: usize| {
            let top = &us[k] / al + a * &xs[k + 1];
            let mid = admm.p() * &xs[k + 1];
            let bot = -(admm.q() * &zs[k]);
            DVector::from_iterator(18, top.iter().chain(mid.iter()).chain(bot.iter()).copied())
        };
        let mut s = admm.state(xs[0].clone(), zs[0].clone(), us[0].clone()).unwrap();
        for k in 0..100 {
            let next = admm.step(&s);
            let formula = liadmm_residual(&s, &next, p, admm.p(), admm.q()).unwrap();
            worst = worst.max((formula - (nu(k + 1) - nu(k)).norm()).abs());
            s = next;
        }
    }
    check(worst <= 1e-9, format!("max |formula − ‖ν^(k+1) − ν^k‖| = {worst:.2e}"))
}

fn mu_decay() -> Outcome {
    let alpha = 0.5;
    let n = 200;
    let mut worst_excess = f64::NEG_INFINITY;
    for scheme in SCHEMES {
        let mut sg = Safeguard::init(1.0, scheme, alpha).unwrap();
        for k in 1..=n {
            let r = alpha * sg.mu();
            if !sg.update(r) {
                return Err(format!("{scheme}: constant-ratio residual rejected at {k}"));
            }
            worst_excess = worst_excess.max(sg.mu() - scheme.decay_bound(alpha, k));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for scheme in SCHEMES {
        for _ in 0..200 {
            let a = rng.random_range(0.0..0.999);
            let mut sg = Safeguard::init(rng.random_range(0.0..5.0), scheme, a).unwrap();
            for _ in 0..200 {
                let before = sg.mu();
                sg.update(rng.random_range(0.0..5.0) * before.max(1e-3));
                if sg.mu() > before {
                    return Err(format!("{scheme}: μ increased from {before} to {}", sg.mu()));
                }
            }
        }
    }
    check(
        worst_excess <= 1e-12,
        format!("max (μ_N/μ_1 − bound) = {worst_excess:.2e} over N ≤ {n}; μ monotone on 1000 random streams"),
    )
}

fn ista_monotone() -> Outcome {
    let data = generate_lasso(250, 500, 0.001, 10, 0, DistributionTag::Seen, 404).unwrap();
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut min_residual = f64::INFINITY;
    for p in data.train() {
        let op = natural_fallback(p).unwrap();
        let t = run_km(&op, &op.zero_point(), 1000, RunOptions::default().with_tol(0.0).with_objective()).unwrap();
        if t.records.len() != 1001 {
            return Err(format!("stopped after {} records", t.records.len()));
        }
        for w in t.records.windows(2) {
            worst = worst.max(w[1].objective.unwrap() - w[0].objective.unwrap());
        }
        min_residual = min_residual.min(t.records.iter().map(|r| r.residual).fold(f64::INFINITY, f64::min));
    }
    check(
        worst <= 1e-12 && min_residual > 0.0,
        format!("max f(x^(k+1)) − f(x^k) = {worst:.2e}, min residual {min_residual:.2e}"),
    )
}

struct Trained {
    seen: Dataset,
    unseen: Dataset,
    params: SchemeParams,
}

fn trained_alista() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let seen = generate_lasso(100, 200, 0.001, 1000, 200, DistributionTag::Seen, 505).unwrap();
        let unseen = generate_lasso(100, 200, 0.001, 0, 200, DistributionTag::Unseen, 505).unwrap();
        let init = SchemeParams::init(SchemeKind::Alista, &seen.train()[0], 16).unwrap();
        let cfg = TrainConfig { epochs: ALISTA_EPOCHS, loss: LossKind::Objective, ..TrainConfig::default() };
        let (params, _) = train_layerwise(init, seen.train(), &cfg).unwrap();
        Trained { seen, unseen, params }
    })
}

const ALISTA_EPOCHS: usize = 40;

/// Relative error after `steps` updates over a set of traces.
fn rel_error_at(problems: &[ProblemInstance], traces: &[RunTrace], steps: usize) -> f64 {
    let f: Vec<f64> = traces
        .iter()
        .map(|t| t.records[steps.min(t.records.len() - 1)].objective.unwrap())
        .collect();
    let fs: Vec<f64> = problems.iter().map(|p| p.f_star().unwrap()).collect();
    relative_error(&f, &fs).unwrap()
}

fn ista_traces(problems: &[ProblemInstance], iters: usize) -> Vec<RunTrace> {
    problems
        .iter()
        .map(|p| {
            let op = natural_fallback(p).unwrap();
            run_km(&op, &op.zero_point(), iters, RunOptions::default().with_objective()).unwrap()
        })
        .collect()
}

fn alista_speedup() -> Outcome {
    let t = trained_alista();
    let test = t.seen.test();
    let learned: Vec<RunTrace> = test
        .iter()
        .map(|p| {
            let op = natural_fallback(p).unwrap();
            run_l2o(&t.params.bind(p).unwrap(), &op, &op.zero_point(), RunOptions::default().with_objective()).unwrap()
        })
        .collect();
    let alista = rel_error_at(test, &learned, 16);
    let ista = rel_error_at(test, &ista_traces(test, 200), 200);
    check(alista <= ista, format!("ALISTA layer 16 rel. error {alista:.3e}, ISTA iteration 200 {ista:.3e}"))
}

fn unseen_rescue() -> Outcome {
    let t = trained_alista();
    let test = t.unseen.test();
    let spec = SafeguardSpec::new(SafeguardScheme::ExponentialAverage { theta: 0.25 }, 0.99).unwrap();
    let opts = RunOptions::default().with_objective();
    let mut safe = Vec::new();
    let mut plain = Vec::new();
    for p in test {
        let op = natural_fallback(p).unwrap();
        let bound = t.params.bind(p).unwrap();
        safe.push(run_safe_l2o(&bound, &op, spec, &op.zero_point(), 2000, opts).unwrap());
        plain.push(run_l2o(&bound, &op, &op.zero_point(), opts).unwrap());
    }
    let k = t.params.depth();
    let safe_final = rel_error_at(test, &safe, 2000);
    let ista_final = rel_error_at(test, &ista_traces(test, 2000), 2000);
    let any_fallback = (0..k).any(|j| safe.iter().any(|tr| tr.records[j].used_fallback));
    // Closest approach to a rejection: r(x^{j+1}) / μ_j over accepted layers.
    let worst_ratio = safe
        .iter()
        .flat_map(|tr| (0..k).map(move |j| tr.records[j + 1].residual / tr.records[j].mu.unwrap()))
        .fold(0.0, f64::max);
    let safe_k = rel_error_at(test, &safe, k);
    let plain_k = rel_error_at(test, &plain, k);
    check(
        safe_final <= 1.1 * ista_final && any_fallback && plain_k > safe_k,
        format!(
            "final safe {safe_final:.3e} vs ISTA {ista_final:.3e}; fallback within 1..{k}: {any_fallback}; \
             layer {k}: unsafeguarded {plain_k:.3e}, safe {safe_k:.3e}; \
             max r/μ over layers {worst_ratio:.3}"
        ),
    )
}

fn fallback_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    let lasso = generate_lasso(50, 100, 0.01, 3, 0, DistributionTag::Seen, 707).unwrap();
    let nnls = safe_l2o::problems::generate_nnls(100, 50, 3, 0, DistributionTag::Seen, 707).unwrap();
    for (kind, problems, fallback) in [
        (SchemeKind::ListaCp, lasso.train(), FallbackKind::ProxGrad),
        (SchemeKind::Nnlspg, nnls.train(), FallbackKind::ProjGrad),
    ] {
        for p in problems {
            // LISTA-CP: W̃ = A/L, θ = τ/L. NNLS-PG: ζ = Aᵀ/L. Both are the default init.
            let params = SchemeParams::init(kind, p, 100).unwrap();
            let bound = params.bind(p).unwrap();
            let op = make_fallback(fallback, p, 1.0 / p.lipschitz()).unwrap();
            let mut x = op.zero_point();
            let mut y = op.zero_point();
            for k in 0..100 {
                x = bound.update(k, &x).unwrap();
                y = op.apply(&y);
                worst = worst.max((&x - &y).amax());
            }
            let l2o = run_l2o(&bound, &op, &op.zero_point(), RunOptions::default()).unwrap();
            let km = run_km(&op, &op.zero_point(), 100, RunOptions::default().with_tol(0.0)).unwrap();
            worst = worst.max((&l2o.final_point - &km.final_point).amax());
        }
    }
    check(worst <= 1e-12, format!("max per-step deviation {worst:.2e} over 100 steps"))
}

fn alista_w_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut a = DMatrix::from_fn(20, 40, |_, _| rng.sample::<f64, _>(StandardNormal));
    for mut c in a.column_iter_mut() {
        c.normalize_mut();
    }
    let w = compute_alista_w(&a).map_err(|e| e.to_string())?;
    let constraint = (0..40).map(|l| (w.column(l).dot(&a.column(l)) - 1.0).abs()).fold(0.0, f64::max);
    let base = (w.transpose() * &a).norm();
    let mut best_gain = f64::NEG_INFINITY;
    for i in 0..1000 {
        let scale = 10f64.powf(-4.0 + 4.0 * (i as f64 / 999.0));
        let mut dw = DMatrix::from_fn(20, 40, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
        for l in 0..40 {
            let al = a.column(l).into_owned();
            let c = dw.column(l).dot(&al) / al.norm_squared();
            dw.column_mut(l).axpy(-c, &al, 1.0);
        }
        let f = ((&w + dw).transpose() * &a).norm();
        best_gain = best_gain.max(base - f);
    }
    check(
        constraint <= 1e-10 && best_gain <= 1e-8,
        format!("constraint residual {constraint:.2e}, best improvement by a feasible perturbation {best_gain:.2e}"),
    )
}

fn gradient_correctness() -> Outcome {
    let mut report = Vec::new();
    let mut worst: f64 = 0.0;
    let losses = [LossKind::Objective, LossKind::DistToSolution, LossKind::FixedPointResidual];
    for kind in [SchemeKind::Alista, SchemeKind::ListaCp, SchemeKind::Dladmm, SchemeKind::Nnlspg] {
        let data = match kind {
            SchemeKind::Alista | SchemeKind::ListaCp => generate_lasso(6, 10, 0.05, 4, 0, DistributionTag::Seen, 909),
            SchemeKind::Dladmm => generate_l1l1(5, 7, 0.5, 4, 0, DistributionTag::Seen, 909),
            SchemeKind::Nnlspg => safe_l2o::problems::generate_nnls(10, 6, 4, 0, DistributionTag::Seen, 909),
        }
        .unwrap();
        let refs: Vec<&ProblemInstance> = data.train().iter().collect();
        let batch = Batch::new(&refs, true).unwrap();
        let init = SchemeParams::init(kind, &data.train()[0], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(910);
        let mut accepted = 0;
        let mut tries = 0;
        while accepted < 50 {
            tries += 1;
            if tries > 2000 {
                return Err(format!("{kind}: only {accepted} kink-free points in {tries} draws"));
            }
            let loss = losses[tries % 3];
            let flat: Vec<f64> = init
                .flatten(3)
                .iter()
                .map(|p| p + 0.3 * (p.abs() + 0.05) * rng.random_range(-1.0..1.0))
                .collect();
            let mut params = init.clone();
            params.unflatten(3, &flat).unwrap();
            params.project(3);
            if forward_loss(&params, 3, &batch, loss).unwrap().kink_margin < 1e-3 {
                continue;
            }
            let (_, ga) = loss_and_gradient(&params, 3, &batch, loss).unwrap();
            let (_, gf) = finite_diff_gradient(&params, 3, &batch, loss).unwrap();
            let ga = DVector::from_vec(ga);
            let gf = DVector::from_vec(gf);
            worst = worst.max((&ga - &gf).norm() / gf.norm().max(1e-12));
            accepted += 1;
        }
        report.push(format!("{kind}: 50 points"));
    }
    check(worst <= 1e-4, format!("max relative difference {worst:.2e} ({})", report.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 safeguard under adversarial updates", adversarial_safeguard),
        ("2 linearized ADMM residual identity", liadmm_residual_identity),
        ("3 safeguard decay laws", mu_decay),
        ("4 ISTA monotone objective", ista_monotone),
        ("5 trained ALISTA speedup", alista_speedup),
        ("6 unseen-distribution rescue", unseen_rescue),
        ("7 fallback-equivalent parameters", fallback_equivalence),
        ("8 ALISTA weight optimality", alista_w_optimality),
        ("9 analytic gradients", gradient_correctness),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strict = args.iter().any(|a| a == "--strict") || std::env::var_os("ACCEPTANCE_STRICT").is_some();
    let filter: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let (mut ran, mut failed) = (0, 0);
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name} ({secs:.1}s): {detail}");
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    // FAIL lines are reported either way; only strict mode turns them into a
    // failing exit status, so the rest of `cargo test` still runs.
    if failed > 0 && strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
