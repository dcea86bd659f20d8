//! 3D convolution and max pooling over `[B, C, D, H, W]` volumes.

use super::{gemm, Op, Tensor};
use crate::{Error, Result};

/// Output extent of a sliding window along one axis.
pub fn conv_out_extent(extent: usize, k: usize, stride: usize, padding: usize) -> usize {
    (extent + 2 * padding - k) / stride + 1
}

struct Geometry {
    cin: usize,
    k: usize,
    stride: usize,
    padding: usize,
    dims: [usize; 3],
    out: [usize; 3],
}

impl Geometry {
    fn out_len(&self) -> usize {
        self.out.iter().product()
    }

    fn in_len(&self) -> usize {
        self.dims.iter().product()
    }

    /// Unfolds one batch element into `[cin*k^3, out_len]` columns.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let [d, h, w] = self.dims;
        let [od, oh, ow] = self.out;
        let k = self.k;
        let p = self.padding as isize;
        let s = self.stride as isize;
        let olen = self.out_len();
        for c in 0..self.cin {
            let xc = &x[c * d * h * w..(c + 1) * d * h * w];
            for kz in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = ((c * k + kz) * k + ky) * k + kx;
                        let dst = &mut cols[row * olen..(row + 1) * olen];
                        let mut idx = 0;
                        for z in 0..od {
                            let iz = z as isize * s + kz as isize - p;
                            for y in 0..oh {
                                let iy = y as isize * s + ky as isize - p;
                                let zy_ok = iz >= 0 && iz < d as isize && iy >= 0 && iy < h as isize;
                                let base = if zy_ok {
                                    (iz as usize * h + iy as usize) * w
                                } else {
                                    0
                                };
                                for x_ in 0..ow {
                                    let ix = x_ as isize * s + kx as isize - p;
                                    dst[idx] = if zy_ok && ix >= 0 && ix < w as isize {
                                        xc[base + ix as usize]
                                    } else {
                                        0.0
                                    };
                                    idx += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: accumulates columns back into `dx`.
    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let [d, h, w] = self.dims;
        let [od, oh, ow] = self.out;
        let k = self.k;
        let p = self.padding as isize;
        let s = self.stride as isize;
        let olen = self.out_len();
        for c in 0..self.cin {
            let xc = &mut dx[c * d * h * w..(c + 1) * d * h * w];
            for kz in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = ((c * k + kz) * k + ky) * k + kx;
                        let src = &cols[row * olen..(row + 1) * olen];
                        let mut idx = 0;
                        for z in 0..od {
                            let iz = z as isize * s + kz as isize - p;
                            for y in 0..oh {
                                let iy = y as isize * s + ky as isize - p;
                                let zy_ok = iz >= 0 && iz < d as isize && iy >= 0 && iy < h as isize;
                                for x_ in 0..ow {
                                    let ix = x_ as isize * s + kx as isize - p;
                                    if zy_ok && ix >= 0 && ix < w as isize {
                                        xc[(iz as usize * h + iy as usize) * w + ix as usize] +=
                                            src[idx];
                                    }
                                    idx += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geometry(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Geometry> {
    if input.len() != 5 || kernel.len() != 5 {
        return Err(Error::Shape(format!(
            "conv3d expects 5-d input and kernel, got {input:?} and {kernel:?}"
        )));
    }
    let k = kernel[2];
    if kernel[3] != k || kernel[4] != k || k % 2 == 0 {
        return Err(Error::Shape(format!("conv3d kernel {kernel:?} is not an odd cube")));
    }
    if input[1] != kernel[1] {
        return Err(Error::Shape(format!(
            "conv3d: input has {} channels, kernel expects {}",
            input[1], kernel[1]
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv3d stride must be positive".into()));
    }
    let dims = [input[2], input[3], input[4]];
    if dims.iter().any(|&e| e + 2 * padding < k) {
        return Err(Error::Shape(format!(
            "conv3d: padded extent of {dims:?} smaller than kernel {k}"
        )));
    }
    let out = dims.map(|e| conv_out_extent(e, k, stride, padding));
    Ok(Geometry {
        cin: input[1],
        k,
        stride,
        padding,
        dims,
        out,
    })
}

/// Cross-correlation of `input[B,Cin,D,H,W]` with `kernel[Cout,Cin,k,k,k]`
/// plus `bias[Cout]`.
pub fn conv3d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let geo = geometry(input.shape(), kernel.shape(), stride, padding)?;
    let cout = kernel.shape()[0];
    if bias.shape() != [cout] {
        return Err(Error::Shape(format!(
            "conv3d bias {:?} for {cout} output channels",
            bias.shape()
        )));
    }
    if input.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("conv3d input".into()));
    }
    let b = input.shape()[0];
    let rows = geo.cin * geo.k.pow(3);
    let olen = geo.out_len();
    let ilen = geo.cin * geo.in_len();
    let mut cols = vec![0.0; rows * olen];
    let mut out = vec![0.0; b * cout * olen];
    for n in 0..b {
        geo.im2col(&input.data()[n * ilen..(n + 1) * ilen], &mut cols);
        let dst = &mut out[n * cout * olen..(n + 1) * cout * olen];
        for (c, chunk) in dst.chunks_mut(olen).enumerate() {
            chunk.fill(bias.data()[c]);
        }
        gemm(cout, rows, olen, kernel.data(), false, &cols, false, 1.0, dst);
    }
    let [od, oh, ow] = geo.out;
    Ok(Tensor::from_op(
        out,
        vec![b, cout, od, oh, ow],
        Op::Conv3d {
            input: input.clone(),
            kernel: kernel.clone(),
            bias: bias.clone(),
            stride,
            padding,
        },
    ))
}

pub(super) fn conv3d_backward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    out_shape: &[usize],
    g: &[f64],
) -> Vec<(Tensor, Vec<f64>)> {
    let geo = geometry(input.shape(), kernel.shape(), stride, padding)
        .expect("shapes validated in forward");
    let (b, cout) = (out_shape[0], out_shape[1]);
    let rows = geo.cin * geo.k.pow(3);
    let olen = geo.out_len();
    let ilen = geo.cin * geo.in_len();
    let mut cols = vec![0.0; rows * olen];
    let mut dcols = vec![0.0; rows * olen];
    let mut dx = vec![0.0; input.numel()];
    let mut dk = vec![0.0; kernel.numel()];
    let mut db = vec![0.0; cout];
    for n in 0..b {
        let gn = &g[n * cout * olen..(n + 1) * cout * olen];
        for (c, chunk) in gn.chunks(olen).enumerate() {
            db[c] += chunk.iter().sum::<f64>();
        }
        if kernel.requires_grad() {
            geo.im2col(&input.data()[n * ilen..(n + 1) * ilen], &mut cols);
            gemm(cout, olen, rows, gn, false, &cols, true, 1.0, &mut dk);
        }
        if input.requires_grad() {
            gemm(rows, cout, olen, kernel.data(), true, gn, false, 0.0, &mut dcols);
            geo.col2im(&dcols, &mut dx[n * ilen..(n + 1) * ilen]);
        }
    }
    vec![
        (input.clone(), dx),
        (kernel.clone(), dk),
        (bias.clone(), db),
    ]
}

/// Max pooling over cubic windows. Returns the pooled tensor and, for each
/// output cell, the flat input index that supplied the maximum (ties go to
/// the lowest linear index).
pub fn maxpool3d(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let s = input.shape();
    if s.len() != 5 {
        return Err(Error::Shape(format!("maxpool3d expects 5-d input, got {s:?}")));
    }
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument("maxpool3d window and stride must be positive".into()));
    }
    let [d, h, w] = [s[2], s[3], s[4]];
    if window > d || window > h || window > w {
        return Err(Error::Shape(format!(
            "maxpool3d window {window} larger than volume {:?}",
            [d, h, w]
        )));
    }
    let [od, oh, ow] = [d, h, w].map(|e| (e - window) / stride + 1);
    let planes = s[0] * s[1];
    let vol = d * h * w;
    let mut out = Vec::with_capacity(planes * od * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    let x = input.data();
    for p in 0..planes {
        let base = p * vol;
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = usize::MAX;
                    for dz in 0..window {
                        for dy in 0..window {
                            let row = base + ((z * stride + dz) * h + y * stride + dy) * w;
                            for dx in 0..window {
                                let at = row + xo * stride + dx;
                                if best_at == usize::MAX || x[at] > best {
                                    best = x[at];
                                    best_at = at;
                                }
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_at);
                }
            }
        }
    }
    let t = Tensor::from_op(
        out,
        vec![s[0], s[1], od, oh, ow],
        Op::MaxPool3d {
            input: input.clone(),
            argmax: argmax.clone(),
        },
    );
    Ok((t, argmax))
}
