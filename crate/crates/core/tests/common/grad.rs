//! Finite-difference gradient checks shared by the gradient suite and the
//! acceptance report.

use cotrain::autograd::{
    add, affine, batchnorm, clamp, concat, conv3d, dropout, exp, finite_difference_check, index_select, linear,
    ln, log_softmax, maxpool3d, mean, mul, nudge_off_zero, relu, reshape, row_matvec, row_scale, scatter_sum,
    segment_max, sigmoid, sum, Mode, RunningStats, Tensor, FLOOR,
};
use cotrain::collab::{batch_loss, Arm};
use cotrain::data::{generate_cohort, CohortSpec};
use cotrain::model::{init_params, CnnConfig, GnnConfig, ModelState};
use cotrain::prep::{prepare, Prepared};
use cotrain::rng::seeded;
use cotrain::Result;
use rand::Rng;

/// Tolerance for ops that are smooth at the checked point.
pub const SMOOTH_TOL: f64 = 1e-6;
/// Tolerance for piecewise ops and whole-model checks.
pub const TOL: f64 = 1e-4;

/// Every differentiable primitive of the autograd engine.
pub const PRIMITIVES: [&str; 23] = [
    "conv3d", "maxpool3d", "batchnorm", "linear", "relu", "sigmoid", "log_softmax", "scatter_sum", "dropout",
    "add", "mul", "sum", "mean", "concat", "index_select", "reshape", "exp", "ln", "affine", "clamp",
    "row_matvec", "row_scale", "segment_max",
];

#[derive(Debug, Clone)]
pub struct GradRecord {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl GradRecord {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

fn random(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Distinct values well apart from each other, so max-type ops have no ties
/// within the step size.
fn distinct(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    v.iter().map(|x| x - 0.005 * n as f64).collect()
}

/// `sum(op(x) * w)` with fixed random weights `w`, so every output
/// coordinate contributes a distinct amount.
fn weighted(y: Tensor, w: &[f64]) -> Result<Tensor> {
    let w = Tensor::new(w.to_vec(), y.shape())?;
    Ok(sum(&mul(&y, &w)?))
}

struct Checker {
    rng: rand_chacha::ChaCha8Rng,
    records: Vec<GradRecord>,
}

impl Checker {
    fn check<F>(&mut self, name: &str, tol: f64, x: Vec<f64>, shape: &[usize], out_len: usize, f: F) -> Result<()>
    where
        F: Fn(&Tensor) -> Result<Tensor>,
    {
        let w = random(&mut self.rng, out_len, -1.0, 1.0);
        let x = Tensor::new(x, shape)?;
        let error = finite_difference_check(|t| weighted(f(t)?, &w), &x, 1e-3)?;
        self.records.push(GradRecord {
            name: name.to_string(),
            error,
            tolerance: tol,
        });
        Ok(())
    }
}

/// One record per primitive and differentiable argument.
pub fn primitive_checks(seed: u64) -> Result<Vec<GradRecord>> {
    let mut c = Checker {
        rng: seeded(seed),
        records: Vec::new(),
    };
    let r = &mut seeded(seed ^ 0x5eed);

    // conv3d: input, kernel and bias, with padding and stride.
    let (b, cin, cout, d, k) = (2, 2, 3, 5, 3);
    let input = random(r, b * cin * d * d * d, -1.0, 1.0);
    let kernel = random(r, cout * cin * k * k * k, -0.5, 0.5);
    let bias = random(r, cout, -0.5, 0.5);
    for (stride, padding) in [(1, 1), (2, 0)] {
        let e = cotrain::autograd::conv_out_extent(d, k, stride, padding);
        let out = b * cout * e * e * e;
        let (kt, bt) = (Tensor::new(kernel.clone(), &[cout, cin, k, k, k])?, Tensor::new(bias.clone(), &[cout])?);
        let it = Tensor::new(input.clone(), &[b, cin, d, d, d])?;
        c.check(&format!("conv3d/input s{stride}p{padding}"), SMOOTH_TOL, input.clone(), &[b, cin, d, d, d], out, |x| {
            conv3d(x, &kt, &bt, stride, padding)
        })?;
        c.check(&format!("conv3d/kernel s{stride}p{padding}"), SMOOTH_TOL, kernel.clone(), &[cout, cin, k, k, k], out, |w| {
            conv3d(&it, w, &bt, stride, padding)
        })?;
        c.check(&format!("conv3d/bias s{stride}p{padding}"), SMOOTH_TOL, bias.clone(), &[cout], out, |bb| {
            conv3d(&it, &kt, bb, stride, padding)
        })?;
    }

    // maxpool3d, including a ragged edge.
    let pool_in = distinct(r, 2 * 2 * 5 * 5 * 5);
    c.check("maxpool3d", TOL, pool_in, &[2, 2, 5, 5, 5], 2 * 2 * 8, |x| Ok(maxpool3d(x, 2, 2)?.0))?;

    // batchnorm in both modes.
    let (bn_b, bn_c, sp) = (3, 2, 4);
    let bn_in = random(r, bn_b * bn_c * sp, -2.0, 2.0);
    let gamma = random(r, bn_c, 0.5, 1.5);
    let beta = random(r, bn_c, -0.5, 0.5);
    let mut stats = RunningStats::new(bn_c);
    stats.mean = vec![0.3, -0.2];
    stats.var = vec![1.5, 0.7];
    let shape = [bn_b, bn_c, sp];
    let n = bn_in.len();
    let (gt, bt, it) = (Tensor::new(gamma.clone(), &[bn_c])?, Tensor::new(beta.clone(), &[bn_c])?, Tensor::new(bn_in.clone(), &shape)?);
    for mode in [Mode::Train, Mode::Eval] {
        let tag = if mode == Mode::Train { "train" } else { "eval" };
        c.check(&format!("batchnorm/input {tag}"), SMOOTH_TOL, bn_in.clone(), &shape, n, |x| {
            batchnorm(x, &gt, &bt, &mut stats.clone(), mode)
        })?;
        c.check(&format!("batchnorm/gamma {tag}"), SMOOTH_TOL, gamma.clone(), &[bn_c], n, |g| {
            batchnorm(&it, g, &bt, &mut stats.clone(), mode)
        })?;
        c.check(&format!("batchnorm/beta {tag}"), SMOOTH_TOL, beta.clone(), &[bn_c], n, |bb| {
            batchnorm(&it, &gt, bb, &mut stats.clone(), mode)
        })?;
    }

    // linear
    let (lb, li, lo) = (3, 4, 5);
    let x = random(r, lb * li, -1.0, 1.0);
    let w = random(r, lo * li, -1.0, 1.0);
    let bias = random(r, lo, -1.0, 1.0);
    let (xt, wt, bt) = (Tensor::new(x.clone(), &[lb, li])?, Tensor::new(w.clone(), &[lo, li])?, Tensor::new(bias.clone(), &[lo])?);
    c.check("linear/input", SMOOTH_TOL, x.clone(), &[lb, li], lb * lo, |x| linear(x, &wt, &bt))?;
    c.check("linear/weight", SMOOTH_TOL, w, &[lo, li], lb * lo, |w| linear(&xt, w, &bt))?;
    c.check("linear/bias", SMOOTH_TOL, bias, &[lo], lb * lo, |b| linear(&xt, &wt, b))?;

    // elementwise
    let mut kinked = random(r, 12, -1.0, 1.0);
    nudge_off_zero(&mut kinked, 1e-2);
    c.check("relu", TOL, kinked, &[12], 12, |x| Ok(relu(x)))?;
    c.check("sigmoid", SMOOTH_TOL, random(r, 12, -4.0, 4.0), &[12], 12, |x| Ok(sigmoid(x)))?;
    c.check("exp", SMOOTH_TOL, random(r, 12, -2.0, 2.0), &[12], 12, |x| Ok(exp(x)))?;
    c.check("ln", SMOOTH_TOL, random(r, 12, 0.2, 3.0), &[12], 12, |x| ln(x))?;
    c.check("affine", SMOOTH_TOL, random(r, 12, -2.0, 2.0), &[12], 12, |x| Ok(affine(x, -1.7, 0.3)))?;
    let mut inside = random(r, 12, -1.0, 1.0);
    for v in inside.iter_mut() {
        if (v.abs() - 0.5).abs() < 1e-2 {
            *v += 0.05;
        }
    }
    c.check("clamp", TOL, inside, &[12], 12, |x| Ok(clamp(x, -0.5, 0.5)))?;
    let other = Tensor::new(random(r, 12, -1.0, 1.0), &[3, 4])?;
    c.check("add", SMOOTH_TOL, random(r, 12, -1.0, 1.0), &[3, 4], 12, |x| add(x, &other))?;
    c.check("mul", SMOOTH_TOL, random(r, 12, -1.0, 1.0), &[3, 4], 12, |x| mul(x, &other))?;
    c.check("mul/self", SMOOTH_TOL, random(r, 12, -1.0, 1.0), &[3, 4], 12, |x| mul(x, x))?;
    c.check("sum", SMOOTH_TOL, random(r, 12, -1.0, 1.0), &[3, 4], 1, |x| Ok(sum(&mul(x, x)?)))?;
    c.check("mean", SMOOTH_TOL, random(r, 12, -1.0, 1.0), &[3, 4], 1, |x| mean(&mul(x, x)?))?;
    c.check("reshape", SMOOTH_TOL, random(r, 12, -1.0, 1.0), &[3, 4], 12, |x| reshape(&mul(x, x)?, &[2, 6]))?;
    for axis in [0, 1] {
        c.check(&format!("log_softmax/axis{axis}"), SMOOTH_TOL, random(r, 12, -3.0, 3.0), &[3, 4], 12, |x| {
            log_softmax(x, axis)
        })?;
    }
    let side = Tensor::new(random(r, 6, -1.0, 1.0), &[3, 2])?;
    c.check("concat/axis1", SMOOTH_TOL, random(r, 12, -1.0, 1.0), &[3, 4], 18, |x| concat(&[side.clone(), x.clone()], 1))?;
    let below = Tensor::new(random(r, 8, -1.0, 1.0), &[2, 4])?;
    c.check("concat/axis0", SMOOTH_TOL, random(r, 12, -1.0, 1.0), &[3, 4], 20, |x| concat(&[x.clone(), below.clone()], 0))?;

    // graph ops
    let (nodes, edges, f) = (5, 9, 3);
    let targets: Vec<usize> = (0..edges).map(|i| (i * 3 + 1) % nodes).collect();
    let picks: Vec<usize> = (0..edges).map(|i| (i * 2) % nodes).collect();
    c.check("index_select", SMOOTH_TOL, random(r, nodes * f, -1.0, 1.0), &[nodes, f], edges * f, |x| index_select(x, &picks))?;
    c.check("scatter_sum", SMOOTH_TOL, random(r, edges * f, -1.0, 1.0), &[edges, f], nodes * f, |x| {
        scatter_sum(x, &targets, nodes)
    })?;
    let fout = 2;
    let mats = random(r, edges * f * fout, -1.0, 1.0);
    let xs = random(r, edges * f, -1.0, 1.0);
    let (mt, xt) = (Tensor::new(mats.clone(), &[edges, f * fout])?, Tensor::new(xs.clone(), &[edges, f])?);
    c.check("row_matvec/x", SMOOTH_TOL, xs.clone(), &[edges, f], edges * fout, |x| row_matvec(x, &mt, fout))?;
    c.check("row_matvec/mats", SMOOTH_TOL, mats, &[edges, f * fout], edges * fout, |m| row_matvec(&xt, m, fout))?;
    let scales = random(r, edges, 0.1, 1.0);
    let st = Tensor::new(scales.clone(), &[edges])?;
    c.check("row_scale/x", SMOOTH_TOL, xs, &[edges, f], edges * f, |x| row_scale(x, &st))?;
    c.check("row_scale/s", SMOOTH_TOL, scales, &[edges], edges * f, |s| row_scale(&xt, s))?;
    let segments: Vec<usize> = (0..edges).map(|i| i % 4).collect();
    c.check("segment_max", TOL, distinct(r, edges * f), &[edges, f], 4 * f, |x| segment_max(x, &segments, 4))?;

    // dropout with a fixed mask (the same stream on every evaluation)
    c.check("dropout", SMOOTH_TOL, random(r, 20, -1.0, 1.0), &[4, 5], 20, |x| {
        dropout(x, 0.3, Mode::Train, &mut seeded(4))
    })?;
    Ok(c.records)
}

pub fn tiny_model(seed: u64) -> Result<ModelState> {
    let cnn = CnnConfig {
        widths: vec![2, 3, 4, 4],
        fc: vec![12, 8, 1],
        crop: 8,
        dropout: 0.0,
        ..CnnConfig::default()
    };
    let gnn = GnnConfig {
        widths: vec![8, 8, 8, 8],
        edge_hidden: 4,
        fc: vec![12, 8, 1],
        dropout: 0.0,
        ..GnnConfig::default()
    };
    let mut state = init_params(&cnn, &gnn, seed)?;
    // He-scale the weights so activations are O(1) and relu kinks sit far
    // from the probed point relative to the step size.
    for i in 0..state.names().len() {
        let name = &state.names()[i];
        if name.ends_with("weight") || name.ends_with("root") {
            let v = state.params()[i].data().iter().map(|w| w * 6f64.sqrt()).collect();
            state.set_param_at(i, v)?;
        }
    }
    Ok(state)
}

pub fn tiny_batch(seed: u64) -> Result<Vec<Prepared>> {
    let spec = CohortSpec {
        n_samples: 2,
        dims: [12; 3],
        class_ratio: 0.5,
        seed,
        ..CohortSpec::default()
    };
    generate_cohort(&spec)?
        .iter()
        .map(|s| prepare(s, 8, 16, seed))
        .collect()
}

/// Largest relative error between backprop and five-point differences of the
/// collaborative loss (both branches, train-mode batch norm, 2 samples of an
/// 8^3 crop and a 16-point cloud) over every parameter coordinate.
///
/// The per-coordinate error is `|a - n| / max(|a|, |n|, FLOOR)`, as in
/// [`finite_difference_check`].
pub fn full_model_check(seed: u64, h: f64) -> Result<(f64, usize)> {
    let mut state = tiny_model(seed)?;
    let batch = tiny_batch(seed)?;
    let loss_at = |state: &mut ModelState| -> Result<Tensor> {
        Ok(batch_loss(state, &batch, Arm::Collaborative, 1.0, Mode::Train, &mut seeded(0))?.0)
    };
    state.zero_grad();
    let loss = loss_at(&mut state)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = state
        .params()
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    state.zero_grad();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (i, grads) in analytic.iter().enumerate() {
        let base = state.params()[i].data().to_vec();
        for (j, &a) in grads.iter().enumerate() {
            let mut at = |d: f64| -> Result<f64> {
                let mut v = base.clone();
                v[j] += d;
                state.set_param_at(i, v)?;
                Ok(loss_at(&mut state)?.item())
            };
            let numeric = (at(-2.0 * h)? - 8.0 * at(-h)? + 8.0 * at(h)? - at(2.0 * h)?) / (12.0 * h);
            let e = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(e);
            checked += 1;
        }
        state.set_param_at(i, base)?;
    }
    Ok((worst, checked))
}
