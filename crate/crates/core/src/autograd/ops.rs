use super::{gemm, numel, Op, Tensor};
use crate::{Error, Result};

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(data, a.shape().to_vec(), Op::Add(a.clone(), b.clone())))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "mul")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_op(data, a.shape().to_vec(), Op::Mul(a.clone(), b.clone())))
}

/// Sum of all elements, as a shape-`[]` scalar.
pub fn sum(x: &Tensor) -> Tensor {
    let s = x.data().iter().sum();
    Tensor::from_op(vec![s], vec![], Op::Sum(x.clone()))
}

pub fn mean(x: &Tensor) -> Result<Tensor> {
    if x.numel() == 0 {
        return Err(Error::Shape("mean of an empty tensor".into()));
    }
    let s: f64 = x.data().iter().sum();
    Ok(Tensor::from_op(
        vec![s / x.numel() as f64],
        vec![],
        Op::Mean(x.clone()),
    ))
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::from_op(data, x.shape().to_vec(), Op::Relu(x.clone()))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| stable_sigmoid(v)).collect();
    Tensor::from_op(data, x.shape().to_vec(), Op::Sigmoid(x.clone()))
}

pub(crate) fn stable_sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn exp(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|v| v.exp()).collect();
    Tensor::from_op(data, x.shape().to_vec(), Op::Exp(x.clone()))
}

/// Natural log; inputs must be strictly positive.
pub fn ln(x: &Tensor) -> Result<Tensor> {
    if let Some(v) = x.data().iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidArgument(format!("ln of non-positive value {v}")));
    }
    let data = x.data().iter().map(|v| v.ln()).collect();
    Ok(Tensor::from_op(data, x.shape().to_vec(), Op::Ln(x.clone())))
}

/// `scale * x + shift` with constant scalars.
pub fn affine(x: &Tensor, scale: f64, shift: f64) -> Tensor {
    let data = x.data().iter().map(|v| scale * v + shift).collect();
    Tensor::from_op(
        data,
        x.shape().to_vec(),
        Op::Affine {
            input: x.clone(),
            scale,
        },
    )
}

/// Clamp into `[lo, hi]`; the gradient is zero where the clamp is active.
pub fn clamp(x: &Tensor, lo: f64, hi: f64) -> Tensor {
    let data = x.data().iter().map(|v| v.clamp(lo, hi)).collect();
    Tensor::from_op(
        data,
        x.shape().to_vec(),
        Op::Clamp {
            input: x.clone(),
            lo,
            hi,
        },
    )
}

pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if numel(shape) != x.numel() {
        return Err(Error::Shape(format!(
            "cannot reshape {:?} into {:?}",
            x.shape(),
            shape
        )));
    }
    Ok(Tensor::from_op(
        x.data().to_vec(),
        shape.to_vec(),
        Op::Reshape(x.clone()),
    ))
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Log-softmax along `axis`, computed with max subtraction.
pub fn log_softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.shape().len() {
        return Err(Error::Shape(format!(
            "log_softmax axis {axis} out of range for {:?}",
            x.shape()
        )));
    }
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * n * inner + k * inner + i;
            let m = (0..n).map(|k| src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..n).map(|k| (src[at(k)] - m).exp()).sum::<f64>().ln();
            for k in 0..n {
                out[at(k)] = src[at(k)] - lse;
            }
        }
    }
    Ok(Tensor::from_op(
        out,
        x.shape().to_vec(),
        Op::LogSoftmax {
            input: x.clone(),
            axis,
        },
    ))
}

/// `input [B,Fin] x weight[Fout,Fin]^T + bias[Fout]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (is, ws, bs) = (input.shape(), weight.shape(), bias.shape());
    if is.len() != 2 || ws.len() != 2 || bs.len() != 1 || is[1] != ws[1] || bs[0] != ws[0] {
        return Err(Error::Shape(format!(
            "linear: input {is:?}, weight {ws:?}, bias {bs:?} do not compose"
        )));
    }
    let (b, fin, fout) = (is[0], is[1], ws[0]);
    let mut out = Vec::with_capacity(b * fout);
    for _ in 0..b {
        out.extend_from_slice(bias.data());
    }
    gemm(b, fin, fout, input.data(), false, weight.data(), true, 1.0, &mut out);
    Ok(Tensor::from_op(
        out,
        vec![b, fout],
        Op::Linear {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.clone(),
        },
    ))
}

/// Row `i` of the result is the sum of the rows of `values` whose target is `i`.
pub fn scatter_sum(values: &Tensor, targets: &[usize], out_size: usize) -> Result<Tensor> {
    let vs = values.shape();
    if vs.len() != 2 || vs[0] != targets.len() {
        return Err(Error::Shape(format!(
            "scatter_sum: values {vs:?} vs {} targets",
            targets.len()
        )));
    }
    if let Some(t) = targets.iter().find(|&&t| t >= out_size) {
        return Err(Error::InvalidArgument(format!(
            "scatter_sum target {t} out of range 0..{out_size}"
        )));
    }
    let f = vs[1];
    let mut out = vec![0.0; out_size * f];
    for (e, &t) in targets.iter().enumerate() {
        let src = &values.data()[e * f..(e + 1) * f];
        out[t * f..(t + 1) * f]
            .iter_mut()
            .zip(src)
            .for_each(|(o, v)| *o += v);
    }
    Ok(Tensor::from_op(
        out,
        vec![out_size, f],
        Op::ScatterSum {
            values: values.clone(),
            targets: targets.to_vec(),
        },
    ))
}

/// Gathers rows (first axis) by index.
pub fn index_select(x: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let s = x.shape();
    if s.is_empty() {
        return Err(Error::Shape("index_select on a scalar".into()));
    }
    if let Some(i) = indices.iter().find(|&&i| i >= s[0]) {
        return Err(Error::InvalidArgument(format!(
            "index_select index {i} out of range 0..{}",
            s[0]
        )));
    }
    let row = numel(&s[1..]);
    let mut out = Vec::with_capacity(indices.len() * row);
    for &i in indices {
        out.extend_from_slice(&x.data()[i * row..(i + 1) * row]);
    }
    let mut shape = s.to_vec();
    shape[0] = indices.len();
    Ok(Tensor::from_op(
        out,
        shape,
        Op::IndexSelect {
            input: x.clone(),
            indices: indices.to_vec(),
        },
    ))
}

pub fn concat(inputs: &[Tensor], axis: usize) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
    let rank = first.shape().len();
    if axis >= rank {
        return Err(Error::Shape(format!("concat axis {axis} for rank {rank}")));
    }
    for t in inputs {
        let ok = t.shape().len() == rank
            && t
                .shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !ok {
            return Err(Error::Shape(format!(
                "concat: {:?} incompatible with {:?} on axis {axis}",
                t.shape(),
                first.shape()
            )));
        }
    }
    let (outer, _, inner) = axis_split(first.shape(), axis);
    let total: usize = inputs.iter().map(|t| t.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for t in inputs {
            let n = t.shape()[axis] * inner;
            out.extend_from_slice(&t.data()[o * n..(o + 1) * n]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Ok(Tensor::from_op(
        out,
        shape,
        Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        },
    ))
}

/// Per-row matrix-vector product: `out[e] = x[e] · M[e]` where `mats[e]` is
/// read as a row-major `Fin x Fout` matrix.
pub fn row_matvec(x: &Tensor, mats: &Tensor, fout: usize) -> Result<Tensor> {
    let (xs, ms) = (x.shape(), mats.shape());
    if xs.len() != 2 || ms.len() != 2 || xs[0] != ms[0] || ms[1] != xs[1] * fout {
        return Err(Error::Shape(format!(
            "row_matvec: x {xs:?} and mats {ms:?} do not give {fout} outputs"
        )));
    }
    let (e, fin) = (xs[0], xs[1]);
    let mut out = vec![0.0; e * fout];
    for r in 0..e {
        let xr = &x.data()[r * fin..(r + 1) * fin];
        let mr = &mats.data()[r * fin * fout..(r + 1) * fin * fout];
        let or = &mut out[r * fout..(r + 1) * fout];
        for (i, &xv) in xr.iter().enumerate() {
            let row = &mr[i * fout..(i + 1) * fout];
            or.iter_mut().zip(row).for_each(|(o, m)| *o += xv * m);
        }
    }
    Ok(Tensor::from_op(
        out,
        vec![e, fout],
        Op::RowMatVec {
            x: x.clone(),
            mats: mats.clone(),
        },
    ))
}

/// Scales row `e` of `x[E,F]` by `s[e]`.
pub fn row_scale(x: &Tensor, s: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 2 || s.numel() != xs[0] {
        return Err(Error::Shape(format!(
            "row_scale: x {xs:?} with {} scales",
            s.numel()
        )));
    }
    let f = xs[1];
    let mut out = x.data().to_vec();
    for (r, &sv) in s.data().iter().enumerate() {
        out[r * f..(r + 1) * f].iter_mut().for_each(|v| *v *= sv);
    }
    Ok(Tensor::from_op(
        out,
        xs.to_vec(),
        Op::RowScale {
            x: x.clone(),
            s: s.clone(),
        },
    ))
}

/// Column-wise max of the rows of `x[N,F]` belonging to each segment.
/// Ties go to the lowest row index. Every segment must be non-empty.
pub fn segment_max(x: &Tensor, segments: &[usize], n_segments: usize) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 2 || xs[0] != segments.len() {
        return Err(Error::Shape(format!(
            "segment_max: x {xs:?} with {} segment ids",
            segments.len()
        )));
    }
    let f = xs[1];
    let mut out = vec![f64::NEG_INFINITY; n_segments * f];
    let mut argmax = vec![usize::MAX; n_segments * f];
    for (r, &s) in segments.iter().enumerate() {
        if s >= n_segments {
            return Err(Error::InvalidArgument(format!(
                "segment id {s} out of range 0..{n_segments}"
            )));
        }
        for c in 0..f {
            let v = x.data()[r * f + c];
            let slot = s * f + c;
            if argmax[slot] == usize::MAX || v > out[slot] {
                out[slot] = v;
                argmax[slot] = r * f + c;
            }
        }
    }
    if argmax.contains(&usize::MAX) && f > 0 {
        return Err(Error::InvalidArgument("segment_max: empty segment".into()));
    }
    Ok(Tensor::from_op(
        out,
        vec![n_segments, f],
        Op::SegmentMax {
            input: x.clone(),
            argmax,
        },
    ))
}

/// Sends `g[k]` to position `argmax[k]` of an `n`-element gradient.
pub(super) fn route(n: usize, argmax: &[usize], g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (&a, &gv) in argmax.iter().zip(g) {
        out[a] += gv;
    }
    out
}

pub(super) fn backward(op: &Op, out: &Tensor, g: &[f64]) -> Vec<(Tensor, Vec<f64>)> {
    match op {
        Op::Add(a, b) => vec![(a.clone(), g.to_vec()), (b.clone(), g.to_vec())],
        Op::Mul(a, b) => vec![
            (a.clone(), g.iter().zip(b.data()).map(|(g, v)| g * v).collect()),
            (b.clone(), g.iter().zip(a.data()).map(|(g, v)| g * v).collect()),
        ],
        Op::Sum(x) => vec![(x.clone(), vec![g[0]; x.numel()])],
        Op::Mean(x) => vec![(x.clone(), vec![g[0] / x.numel() as f64; x.numel()])],
        Op::Relu(x) => vec![(
            x.clone(),
            g.iter()
                .zip(x.data())
                .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                .collect(),
        )],
        Op::Sigmoid(x) => vec![(
            x.clone(),
            g.iter()
                .zip(out.data())
                .map(|(g, s)| g * s * (1.0 - s))
                .collect(),
        )],
        Op::Exp(x) => vec![(
            x.clone(),
            g.iter().zip(out.data()).map(|(g, y)| g * y).collect(),
        )],
        Op::Ln(x) => vec![(
            x.clone(),
            g.iter().zip(x.data()).map(|(g, v)| g / v).collect(),
        )],
        Op::Affine { input, scale } => {
            vec![(input.clone(), g.iter().map(|g| g * scale).collect())]
        }
        Op::Clamp { input, lo, hi } => vec![(
            input.clone(),
            g.iter()
                .zip(input.data())
                .map(|(g, v)| if v < lo || v > hi { 0.0 } else { *g })
                .collect(),
        )],
        Op::Reshape(x) => vec![(x.clone(), g.to_vec())],
        Op::LogSoftmax { input, axis } => {
            let (outer, n, inner) = axis_split(input.shape(), *axis);
            let y = out.data();
            let mut dx = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| o * n * inner + k * inner + i;
                    let gs: f64 = (0..n).map(|k| g[at(k)]).sum();
                    for k in 0..n {
                        dx[at(k)] = g[at(k)] - y[at(k)].exp() * gs;
                    }
                }
            }
            vec![(input.clone(), dx)]
        }
        Op::Linear {
            input,
            weight,
            bias,
        } => {
            let (b, fin) = (input.shape()[0], input.shape()[1]);
            let fout = weight.shape()[0];
            let mut dx = vec![0.0; b * fin];
            gemm(b, fout, fin, g, false, weight.data(), false, 0.0, &mut dx);
            let mut dw = vec![0.0; fout * fin];
            gemm(fout, b, fin, g, true, input.data(), false, 0.0, &mut dw);
            let mut db = vec![0.0; fout];
            for r in 0..b {
                db.iter_mut()
                    .zip(&g[r * fout..(r + 1) * fout])
                    .for_each(|(d, g)| *d += g);
            }
            vec![
                (input.clone(), dx),
                (weight.clone(), dw),
                (bias.clone(), db),
            ]
        }
        Op::ScatterSum { values, targets } => {
            let f = values.shape()[1];
            let mut dv = Vec::with_capacity(values.numel());
            for &t in targets {
                dv.extend_from_slice(&g[t * f..(t + 1) * f]);
            }
            vec![(values.clone(), dv)]
        }
        Op::IndexSelect { input, indices } => {
            let row = numel(&input.shape()[1..]);
            let mut dx = vec![0.0; input.numel()];
            for (r, &i) in indices.iter().enumerate() {
                dx[i * row..(i + 1) * row]
                    .iter_mut()
                    .zip(&g[r * row..(r + 1) * row])
                    .for_each(|(d, g)| *d += g);
            }
            vec![(input.clone(), dx)]
        }
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = axis_split(out.shape(), *axis);
            let mut grads: Vec<Vec<f64>> =
                inputs.iter().map(|t| Vec::with_capacity(t.numel())).collect();
            for o in 0..outer {
                let mut off = o * total * inner;
                for (t, gt) in inputs.iter().zip(grads.iter_mut()) {
                    let n = t.shape()[*axis] * inner;
                    gt.extend_from_slice(&g[off..off + n]);
                    off += n;
                }
            }
            inputs.iter().cloned().zip(grads).collect()
        }
        Op::RowMatVec { x, mats } => {
            let (e, fin) = (x.shape()[0], x.shape()[1]);
            let fout = out.shape()[1];
            let mut dx = vec![0.0; e * fin];
            let mut dm = vec![0.0; e * fin * fout];
            for r in 0..e {
                let gr = &g[r * fout..(r + 1) * fout];
                let mr = &mats.data()[r * fin * fout..(r + 1) * fin * fout];
                for i in 0..fin {
                    let row = &mr[i * fout..(i + 1) * fout];
                    dx[r * fin + i] = row.iter().zip(gr).map(|(m, g)| m * g).sum();
                    let xv = x.data()[r * fin + i];
                    let base = r * fin * fout + i * fout;
                    dm[base..base + fout]
                        .iter_mut()
                        .zip(gr)
                        .for_each(|(d, g)| *d = xv * g);
                }
            }
            vec![(x.clone(), dx), (mats.clone(), dm)]
        }
        Op::RowScale { x, s } => {
            let f = x.shape()[1];
            let mut dx = g.to_vec();
            let mut ds = vec![0.0; s.numel()];
            for (r, &sv) in s.data().iter().enumerate() {
                let span = r * f..(r + 1) * f;
                ds[r] = g[span.clone()]
                    .iter()
                    .zip(&x.data()[span.clone()])
                    .map(|(g, v)| g * v)
                    .sum();
                dx[span].iter_mut().for_each(|d| *d *= sv);
            }
            vec![(x.clone(), dx), (s.clone(), ds)]
        }
        Op::SegmentMax { input, argmax } => vec![(input.clone(), route(input.numel(), argmax, g))],
        Op::Conv3d { .. } | Op::MaxPool3d { .. } | Op::BatchNorm { .. } | Op::Dropout { .. } => {
            unreachable!("handled by the volume and norm modules")
        }
    }
}
