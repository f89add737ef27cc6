//! Batched forward and reverse passes through unrolled layers.
//!
//! A batch stacks instance vectors as columns: iterates are `dim×B`, data
//! `m×B`. All instances of a batch share one dictionary. Gradients are
//! returned flat, in the order of [`SchemeParams::flatten`].

use nalgebra::{DMatrix, DVector};

use super::LossKind;
use crate::error::{Error, Result};
use crate::operators::{natural_fallback, shrink, LiAdmmParams};
use crate::problems::{ProblemInstance, ProblemKind};
use crate::schemes::{DladmmLayer, SchemeParams};

/// Shared data of a batch of instances.
#[derive(Debug, Clone)]
pub struct Batch {
    kind: ProblemKind,
    a: DMatrix<f64>,
    d: DMatrix<f64>,
    tau: f64,
    x_star: Option<DMatrix<f64>>,
    fixed: FixedLayer,
}

/// The fallback step written as a layer with frozen parameters, used by the
/// fixed-point-residual loss.
#[derive(Debug, Clone)]
enum FixedLayer {
    Shrink { w: DMatrix<f64>, theta: f64 },
    Project { zeta: DMatrix<f64> },
    Admm { layer: DladmmLayer, alpha: f64, p: DMatrix<f64>, q: DMatrix<f64> },
}

impl Batch {
    /// Gather `instances`; `x_star` columns are filled when `with_solutions`.
    pub fn new(instances: &[&ProblemInstance], with_solutions: bool) -> Result<Self> {
        let first = *instances
            .first()
            .ok_or_else(|| Error::config("cannot build an empty batch"))?;
        let (m, n) = (first.m(), first.n());
        for p in instances {
            let same = std::sync::Arc::ptr_eq(p.dictionary(), first.dictionary()) || p.a() == first.a();
            if !same || p.tau() != first.tau() || p.kind() != first.kind() {
                return Err(Error::config("batch instances must share kind, dictionary and tau"));
            }
        }
        let b = instances.len();
        let mut d = DMatrix::zeros(m, b);
        for (j, p) in instances.iter().enumerate() {
            d.set_column(j, p.d());
        }
        let x_star = if with_solutions {
            let mut xs = DMatrix::zeros(n, b);
            for (j, p) in instances.iter().enumerate() {
                xs.set_column(j, &p.reference()?.x);
            }
            Some(xs)
        } else {
            None
        };
        let l = first.lipschitz();
        let a = first.a().clone();
        let fixed = match first.kind() {
            ProblemKind::Lasso => FixedLayer::Shrink { w: &a / l, theta: first.tau() / l },
            ProblemKind::Nnls => FixedLayer::Project { zeta: a.transpose() / l },
            ProblemKind::L1L1 => {
                let op = natural_fallback(first)?;
                let admm = op.liadmm().expect("l1-l1 fallback is linearized ADMM");
                let params: LiAdmmParams = admm.params();
                FixedLayer::Admm {
                    layer: DladmmLayer::from_liadmm(params, first.tau(), m, n),
                    alpha: params.alpha,
                    p: admm.p().clone(),
                    q: admm.q().clone(),
                }
            }
        };
        Ok(Batch { kind: first.kind(), a, d, tau: first.tau(), x_star, fixed })
    }

    pub fn len(&self) -> usize {
        self.d.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn m(&self) -> usize {
        self.a.nrows()
    }

    fn n(&self) -> usize {
        self.a.ncols()
    }

    /// Rows of an iterate: `n`, or `n + 2m` for stacked ADMM points.
    pub fn dim(&self) -> usize {
        match self.kind {
            ProblemKind::L1L1 => self.n() + 2 * self.m(),
            _ => self.n(),
        }
    }

    fn residual(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut r = &self.a * x;
        r -= &self.d;
        r
    }
}

/// `aᵀb` through an explicit transpose: the product then goes through the
/// blocked gemm kernel, which `tr_mul` bypasses.
fn tmul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * b
}

fn scale_rows(m: &mut DMatrix<f64>, v: &DVector<f64>) {
    for mut col in m.column_iter_mut() {
        col.component_mul_assign(v);
    }
}

fn scaled_rows(m: &DMatrix<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    scale_rows(&mut out, v);
    out
}

/// `Σ_b a_{ib} b_{ib}` for each row `i`.
fn row_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.nrows());
    for (ca, cb) in a.column_iter().zip(b.column_iter()) {
        out += ca.component_mul(&cb);
    }
    out
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Derivative of `v ↦ shrink(v, t)` is 1 for `|v| > t`, 0 otherwise
/// (including the kink). Returns `(dv, Σ ∂/∂t)` for an upstream `g`.
fn shrink_back(v: f64, t: f64, g: f64) -> (f64, f64) {
    if v.abs() > t {
        (g, -sgn(v) * g)
    } else {
        (0.0, 0.0)
    }
}

fn margin_shrink(v: &DMatrix<f64>, t: impl Fn(usize) -> f64) -> f64 {
    let mut best = f64::INFINITY;
    for col in v.column_iter() {
        for (i, e) in col.iter().enumerate() {
            best = best.min((e.abs() - t(i)).abs());
        }
    }
    best
}

/// One layer, borrowed from a parameter set or the fixed fallback.
#[derive(Clone, Copy)]
enum LayerRef<'a> {
    Alista { w: &'a DMatrix<f64>, theta: f64, gamma: f64 },
    ListaCp { w: &'a DMatrix<f64>, theta: f64 },
    Nnlspg { zeta: &'a DMatrix<f64> },
    Dladmm { w1: &'a DMatrix<f64>, p: &'a DladmmLayer },
}

fn layer_ref(params: &SchemeParams, k: usize) -> LayerRef<'_> {
    match params {
        SchemeParams::Alista { w, layers } => LayerRef::Alista { w, theta: layers[k].theta, gamma: layers[k].gamma },
        SchemeParams::ListaCp { layers } => LayerRef::ListaCp { w: &layers[k].w, theta: layers[k].theta },
        SchemeParams::Nnlspg { layers } => LayerRef::Nnlspg { zeta: &layers[k].zeta },
        SchemeParams::Dladmm { w1, layers } => LayerRef::Dladmm { w1, p: &layers[k] },
    }
}

impl FixedLayer {
    fn as_ref<'a>(&'a self, a: &'a DMatrix<f64>) -> LayerRef<'a> {
        match self {
            FixedLayer::Shrink { w, theta } => LayerRef::ListaCp { w, theta: *theta },
            FixedLayer::Project { zeta } => LayerRef::Nnlspg { zeta },
            FixedLayer::Admm { layer, .. } => LayerRef::Dladmm { w1: a, p: layer },
        }
    }
}

/// Forward intermediates of one layer.
enum Cache {
    Alista { g: DMatrix<f64>, v: DMatrix<f64> },
    Affine { r: DMatrix<f64>, v: DMatrix<f64> },
    Dladmm(Box<AdmmCache>),
}

struct AdmmCache {
    r1: DMatrix<f64>,
    h1: DMatrix<f64>,
    v: DMatrix<f64>,
    r2: DMatrix<f64>,
    hh: DMatrix<f64>,
    y: DMatrix<f64>,
    r3: DMatrix<f64>,
}

fn forward_layer(layer: LayerRef<'_>, batch: &Batch, s: &DMatrix<f64>) -> (DMatrix<f64>, Cache) {
    match layer {
        LayerRef::Alista { w, theta, gamma } => {
            let r = batch.residual(s);
            let g = tmul(w, &r);
            let v = s - &g * gamma;
            let out = v.map(|e| shrink(e, theta));
            (out, Cache::Alista { g, v })
        }
        LayerRef::ListaCp { w, theta } => {
            let r = batch.residual(s);
            let v = s - tmul(w, &r);
            let out = v.map(|e| shrink(e, theta));
            (out, Cache::Affine { r, v })
        }
        LayerRef::Nnlspg { zeta } => {
            let r = batch.residual(s);
            let v = s - zeta * &r;
            let out = v.map(|e| e.max(0.0));
            (out, Cache::Affine { r, v })
        }
        LayerRef::Dladmm { w1, p } => {
            let (m, n) = (batch.m(), batch.n());
            let x = s.rows(0, n).into_owned();
            let z = s.rows(n, m).into_owned();
            let nu = s.rows(n + m, m).into_owned();
            let mut r1 = batch.residual(&x);
            r1 -= &z;
            let g = &nu + scaled_rows(&r1, &p.alpha);
            let h1 = tmul(w1, &g);
            let v = &x - scaled_rows(&h1, &p.sigma);
            let mut x_new = v.clone();
            for mut col in x_new.column_iter_mut() {
                col.zip_apply(&p.beta, |e, t| *e = shrink(*e, t));
            }
            let mut r2 = batch.residual(&x_new);
            r2 -= &z;
            let hh = &nu + scaled_rows(&r2, &p.alpha);
            let y = &z + scaled_rows(&hh, &p.xi);
            let mut z_new = y.clone();
            for mut col in z_new.column_iter_mut() {
                col.zip_apply(&p.gamma, |e, t| *e = shrink(*e, t));
            }
            let mut r3 = batch.residual(&x_new);
            r3 -= &z_new;
            let nu_new = &nu + scaled_rows(&r3, &p.alpha);
            let mut out = DMatrix::zeros(n + 2 * m, s.ncols());
            out.rows_mut(0, n).copy_from(&x_new);
            out.rows_mut(n, m).copy_from(&z_new);
            out.rows_mut(n + m, m).copy_from(&nu_new);
            (out, Cache::Dladmm(Box::new(AdmmCache { r1, h1, v, r2, hh, y, r3 })))
        }
    }
}

fn cache_margin(layer: LayerRef<'_>, cache: &Cache) -> f64 {
    match (layer, cache) {
        (LayerRef::Alista { theta, .. }, Cache::Alista { v, .. })
        | (LayerRef::ListaCp { theta, .. }, Cache::Affine { v, .. }) => margin_shrink(v, |_| theta),
        (LayerRef::Nnlspg { .. }, Cache::Affine { v, .. }) => margin_shrink(v, |_| 0.0),
        (LayerRef::Dladmm { p, .. }, Cache::Dladmm(c)) => {
            margin_shrink(&c.v, |i| p.beta[i]).min(margin_shrink(&c.y, |i| p.gamma[i]))
        }
        _ => unreachable!("cache does not belong to layer"),
    }
}

/// Reverse pass of one layer. Returns the gradient with respect to the
/// layer input and, when `want_params`, the flat parameter gradient.
fn backward_layer(
    layer: LayerRef<'_>,
    batch: &Batch,
    cache: &Cache,
    ds_out: &DMatrix<f64>,
    want_params: bool,
) -> (DMatrix<f64>, Vec<f64>) {
    let a = &batch.a;
    match (layer, cache) {
        (LayerRef::Alista { w, theta, gamma }, Cache::Alista { g, v }) => {
            let mut dtheta = 0.0;
            let dv = v.zip_map(ds_out, |e, up| {
                let (dv, dt) = shrink_back(e, theta, up);
                dtheta += dt;
                dv
            });
            let dgamma = -g.dot(&dv);
            let ds = &dv - tmul(a, &(w * &dv)) * gamma;
            (ds, if want_params { vec![dtheta, dgamma] } else { Vec::new() })
        }
        (LayerRef::ListaCp { w, theta }, Cache::Affine { r, v }) => {
            let mut dtheta = 0.0;
            let dv = v.zip_map(ds_out, |e, up| {
                let (dv, dt) = shrink_back(e, theta, up);
                dtheta += dt;
                dv
            });
            let ds = &dv - tmul(a, &(w * &dv));
            let grads = if want_params {
                let dw = -(r * dv.transpose());
                std::iter::once(dtheta).chain(dw.iter().copied()).collect()
            } else {
                Vec::new()
            };
            (ds, grads)
        }
        (LayerRef::Nnlspg { zeta }, Cache::Affine { r, v }) => {
            let dv = v.zip_map(ds_out, |e, up| if e > 0.0 { up } else { 0.0 });
            let ds = &dv - tmul(a, &tmul(zeta, &dv));
            let grads = if want_params { (-(&dv * r.transpose())).iter().copied().collect() } else { Vec::new() };
            (ds, grads)
        }
        (LayerRef::Dladmm { w1, p }, Cache::Dladmm(c)) => {
            let (m, n) = (batch.m(), batch.n());
            let dx_out = ds_out.rows(0, n).into_owned();
            let dz_out = ds_out.rows(n, m).into_owned();
            let dnu_out = ds_out.rows(n + m, m).into_owned();

            // ν' = ν + α∘(Ax' − z' − d)
            let mut dnu = dnu_out.clone();
            let mut dalpha = row_dot(&c.r3, &dnu_out);
            let dr3 = scaled_rows(&dnu_out, &p.alpha);
            let mut dxn = dx_out + tmul(a, &dr3);
            let dzn = dz_out - &dr3;

            // z' = η_γ(y), y = z + ξ∘hh
            let mut dgamma = DVector::zeros(m);
            let mut dy = DMatrix::zeros(m, c.y.ncols());
            for (b, (ycol, gcol)) in c.y.column_iter().zip(dzn.column_iter()).enumerate() {
                for i in 0..m {
                    let (dv, dt) = shrink_back(ycol[i], p.gamma[i], gcol[i]);
                    dy[(i, b)] = dv;
                    dgamma[i] += dt;
                }
            }
            let mut dz = dy.clone();
            let dxi = row_dot(&c.hh, &dy);
            let dhh = scaled_rows(&dy, &p.xi);

            // hh = ν + α∘(Ax' − z − d)
            dnu += &dhh;
            dalpha += row_dot(&c.r2, &dhh);
            let dr2 = scaled_rows(&dhh, &p.alpha);
            dxn += tmul(a, &dr2);
            dz -= &dr2;

            // x' = η_β(v), v = x − σ∘W₁ᵀg
            let mut dbeta = DVector::zeros(n);
            let mut dv = DMatrix::zeros(n, c.v.ncols());
            for (b, (vcol, gcol)) in c.v.column_iter().zip(dxn.column_iter()).enumerate() {
                for i in 0..n {
                    let (d, dt) = shrink_back(vcol[i], p.beta[i], gcol[i]);
                    dv[(i, b)] = d;
                    dbeta[i] += dt;
                }
            }
            let mut dx = dv.clone();
            let dsigma = -row_dot(&c.h1, &dv);
            let dh1 = -scaled_rows(&dv, &p.sigma);
            let dg = w1 * dh1;

            // g = ν + α∘(Ax − z − d)
            dnu += &dg;
            dalpha += row_dot(&c.r1, &dg);
            let dr1 = scaled_rows(&dg, &p.alpha);
            dx += tmul(a, &dr1);
            dz -= &dr1;

            let mut ds = DMatrix::zeros(n + 2 * m, ds_out.ncols());
            ds.rows_mut(0, n).copy_from(&dx);
            ds.rows_mut(n, m).copy_from(&dz);
            ds.rows_mut(n + m, m).copy_from(&dnu);
            let grads = if want_params {
                [&dalpha, &dbeta, &dgamma, &dsigma, &dxi].iter().flat_map(|v| v.iter().copied()).collect()
            } else {
                Vec::new()
            };
            (ds, grads)
        }
        _ => unreachable!("cache does not belong to layer"),
    }
}

/// Per-column loss values and, optionally, the gradient with respect to the
/// output iterate (unscaled, i.e. for the sum over columns). The second
/// value is the smallest distance to a kink of the loss itself.
fn output_loss(batch: &Batch, loss: LossKind, s: &DMatrix<f64>, want_grad: bool) -> Result<(Vec<f64>, Option<DMatrix<f64>>, f64)> {
    let n = batch.n();
    let x = s.rows(0, n);
    let b = s.ncols();
    let mut margin = f64::INFINITY;
    match loss {
        LossKind::Objective => {
            let r = batch.residual(&x.into_owned());
            let mut vals = Vec::with_capacity(b);
            for j in 0..b {
                let xj = x.column(j);
                let rj = r.column(j);
                vals.push(match batch.kind {
                    ProblemKind::Lasso => 0.5 * rj.norm_squared() + batch.tau * xj.lp_norm(1),
                    ProblemKind::Nnls => 0.5 * rj.norm_squared(),
                    ProblemKind::L1L1 => rj.lp_norm(1) + batch.tau * xj.lp_norm(1),
                });
            }
            if batch.kind == ProblemKind::L1L1 {
                margin = r.iter().fold(f64::INFINITY, |acc, e| acc.min(e.abs()));
            }
            let grad = want_grad.then(|| {
                let mut g = DMatrix::zeros(s.nrows(), b);
                let gx = match batch.kind {
                    ProblemKind::Lasso => tmul(&batch.a, &r) + x.map(sgn) * batch.tau,
                    ProblemKind::Nnls => tmul(&batch.a, &r),
                    ProblemKind::L1L1 => tmul(&batch.a, &r.map(sgn)) + x.map(sgn) * batch.tau,
                };
                g.rows_mut(0, n).copy_from(&gx);
                g
            });
            Ok((vals, grad, margin))
        }
        LossKind::DistToSolution => {
            let xs = batch
                .x_star
                .as_ref()
                .ok_or_else(|| Error::config("distance loss needs reference solutions"))?;
            let e = x - xs;
            let vals = e.column_iter().map(|c| c.norm_squared()).collect();
            let grad = want_grad.then(|| {
                let mut g = DMatrix::zeros(s.nrows(), b);
                g.rows_mut(0, n).copy_from(&(e * 2.0));
                g
            });
            Ok((vals, grad, margin))
        }
        LossKind::FixedPointResidual => {
            let fixed = batch.fixed.as_ref(&batch.a);
            let (s1, c1) = forward_layer(fixed, batch, s);
            margin = cache_margin(fixed, &c1);
            match &batch.fixed {
                FixedLayer::Admm { alpha, p, q, .. } => {
                    let m = batch.m();
                    let (s2, c2) = forward_layer(fixed, batch, &s1);
                    margin = margin.min(cache_margin(fixed, &c2));
                    let dx = s1.rows(0, n) - s2.rows(0, n);
                    let e1 = (s.rows(n + m, m) - s1.rows(n + m, m)) / *alpha + &batch.a * &dx;
                    let e2 = p * &dx;
                    let e3 = -(q * (s.rows(n, m) - s1.rows(n, m)));
                    let vals = (0..b)
                        .map(|j| e1.column(j).norm_squared() + e2.column(j).norm_squared() + e3.column(j).norm_squared())
                        .collect();
                    let grad = want_grad.then(|| {
                        let (g1, g2, g3) = (&e1 * 2.0, &e2 * 2.0, &e3 * 2.0);
                        let gx = tmul(&batch.a, &g1) + tmul(p, &g2);
                        let gz = tmul(q, &g3);
                        let mut d_s = DMatrix::zeros(s.nrows(), b);
                        let mut d_s1 = DMatrix::zeros(s.nrows(), b);
                        let mut d_s2 = DMatrix::zeros(s.nrows(), b);
                        d_s.rows_mut(n + m, m).copy_from(&(&g1 / *alpha));
                        d_s1.rows_mut(n + m, m).copy_from(&(-&g1 / *alpha));
                        d_s1.rows_mut(0, n).copy_from(&gx);
                        d_s2.rows_mut(0, n).copy_from(&(-&gx));
                        d_s.rows_mut(n, m).copy_from(&(-&gz));
                        d_s1.rows_mut(n, m).copy_from(&gz);
                        let (back2, _) = backward_layer(fixed, batch, &c2, &d_s2, false);
                        d_s1 += back2;
                        let (back1, _) = backward_layer(fixed, batch, &c1, &d_s1, false);
                        d_s + back1
                    });
                    Ok((vals, grad, margin))
                }
                _ => {
                    let e = s - &s1;
                    let vals = e.column_iter().map(|c| c.norm_squared()).collect();
                    let grad = want_grad.then(|| {
                        let g = &e * 2.0;
                        let (back, _) = backward_layer(fixed, batch, &c1, &(-&g), false);
                        g + back
                    });
                    Ok((vals, grad, margin))
                }
            }
        }
    }
}

/// Output of a forward pass through the first `k` layers.
pub struct Forward {
    /// Mean loss over the batch.
    pub loss: f64,
    /// Per-instance loss values.
    pub per_instance: Vec<f64>,
    /// Distance of the pass from the nearest kink of a threshold,
    /// projection or absolute value.
    pub kink_margin: f64,
}

fn check_stage(params: &SchemeParams, k: usize, batch: &Batch) -> Result<()> {
    if k == 0 || k > params.depth() {
        return Err(Error::config(format!("stage {k} of a {}-layer scheme", params.depth())));
    }
    if params.kind().problem_kind() != batch.kind {
        return Err(Error::config(format!("{} parameters on a {} batch", params.kind(), batch.kind)));
    }
    if let Some(dims) = params.dims() {
        if dims != (batch.m(), batch.n()) {
            return Err(Error::dims(format!("parameters built for {dims:?}, batch is {:?}", (batch.m(), batch.n()))));
        }
    }
    Ok(())
}

fn run_forward(params: &SchemeParams, k: usize, batch: &Batch) -> (Vec<DMatrix<f64>>, Vec<Cache>) {
    let mut states = vec![DMatrix::zeros(batch.dim(), batch.len())];
    let mut caches = Vec::with_capacity(k);
    for j in 0..k {
        let (next, cache) = forward_layer(layer_ref(params, j), batch, states.last().unwrap());
        states.push(next);
        caches.push(cache);
    }
    (states, caches)
}

/// Loss after `k` layers started from zero.
pub fn forward_loss(params: &SchemeParams, k: usize, batch: &Batch, loss: LossKind) -> Result<Forward> {
    check_stage(params, k, batch)?;
    let (states, caches) = run_forward(params, k, batch);
    let (vals, _, loss_margin) = output_loss(batch, loss, states.last().unwrap(), false)?;
    let kink_margin = caches
        .iter()
        .enumerate()
        .map(|(j, c)| cache_margin(layer_ref(params, j), c))
        .fold(loss_margin, f64::min);
    Ok(Forward { loss: vals.iter().sum::<f64>() / vals.len() as f64, per_instance: vals, kink_margin })
}

/// Mean loss after `k` layers and its gradient with respect to the
/// parameters of layers `0..k`.
pub fn loss_and_gradient(params: &SchemeParams, k: usize, batch: &Batch, loss: LossKind) -> Result<(f64, Vec<f64>)> {
    check_stage(params, k, batch)?;
    let (states, caches) = run_forward(params, k, batch);
    let (vals, grad, _) = output_loss(batch, loss, states.last().unwrap(), true)?;
    let scale = 1.0 / vals.len() as f64;
    let mut ds = grad.expect("gradient requested") * scale;
    let mut per_layer = vec![Vec::new(); k];
    for j in (0..k).rev() {
        let (d_in, g) = backward_layer(layer_ref(params, j), batch, &caches[j], &ds, true);
        per_layer[j] = g;
        ds = d_in;
    }
    Ok((vals.iter().sum::<f64>() * scale, per_layer.concat()))
}
