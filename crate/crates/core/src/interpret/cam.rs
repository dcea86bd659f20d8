use super::{AttributionKind, AttributionMap};
use crate::autograd::{affine, reshape, sum, Mode, Tensor};
use crate::grid::Mask;
use crate::model::{cnn_forward, ModelState};
use crate::prep::{CropBox, Prepared, SurfaceCloud};
use crate::rng::seeded;
use crate::{Error, Result};

/// Rescales to `[0, 1]` by `(v - min) / (max - min)`. A constant map becomes
/// all ones when positive and all zeros otherwise.
pub fn min_max_normalize(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if values.is_empty() {
        return;
    }
    let range = hi - lo;
    if range <= 1e-12 * hi.abs().max(1.0) {
        let fill = if hi > 0.0 { 1.0 } else { 0.0 };
        values.iter_mut().for_each(|v| *v = fill);
        return;
    }
    values.iter_mut().for_each(|v| *v = (*v - lo) / range);
}

/// Trilinear resampling of a `[e, e, e]` grid to `[s, s, s]`, aligning voxel
/// centres (`src = (o + 0.5) e / s - 0.5`, clamped to the grid).
pub fn trilinear_upsample(values: &[f64], e: usize, s: usize) -> Vec<f64> {
    let axis: Vec<(usize, usize, f64)> = (0..s)
        .map(|o| {
            let c = ((o as f64 + 0.5) * e as f64 / s as f64 - 0.5).clamp(0.0, (e - 1) as f64);
            let i0 = c.floor() as usize;
            let i1 = (i0 + 1).min(e - 1);
            (i0, i1, c - i0 as f64)
        })
        .collect();
    let at = |z: usize, y: usize, x: usize| values[(z * e + y) * e + x];
    let mut out = Vec::with_capacity(s * s * s);
    for &(z0, z1, tz) in &axis {
        for &(y0, y1, ty) in &axis {
            for &(x0, x1, tx) in &axis {
                let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
                let plane = |z: usize| {
                    lerp(
                        lerp(at(z, y0, x0), at(z, y0, x1), tx),
                        lerp(at(z, y1, x0), at(z, y1, x1), tx),
                        ty,
                    )
                };
                out.push(lerp(plane(z0), plane(z1), tz));
            }
        }
    }
    out
}

/// Grad-CAM from a `[K, e, e, e]` activation and its gradient: channel
/// weights are spatially averaged gradients, the map is
/// `relu(sum_k alpha_k A_k)`, upsampled to the crop, zeroed outside the
/// mask and min-max normalized.
pub fn cam_from_maps(activations: &[f64], gradients: &[f64], channels: usize, e: usize, mask: &Mask) -> Result<Vec<f64>> {
    let vox = e * e * e;
    if activations.len() != channels * vox || gradients.len() != channels * vox {
        return Err(Error::Shape(format!(
            "cam: {} activations / {} gradients for {channels} x {e}^3",
            activations.len(),
            gradients.len()
        )));
    }
    let s = mask.dims[0];
    if mask.dims != [s, s, s] {
        return Err(Error::Shape(format!("cam mask must be cubic, got {:?}", mask.dims)));
    }
    let mut weighted = vec![0.0; vox];
    for k in 0..channels {
        let g = &gradients[k * vox..(k + 1) * vox];
        let alpha = g.iter().sum::<f64>() / vox as f64;
        let a = &activations[k * vox..(k + 1) * vox];
        weighted.iter_mut().zip(a).for_each(|(w, v)| *w += alpha * v);
    }
    weighted.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut cam = trilinear_upsample(&weighted, e, s);
    for (v, &m) in cam.iter_mut().zip(&mask.data) {
        if !m {
            *v = 0.0;
        }
    }
    min_max_normalize(&mut cam);
    Ok(cam)
}

/// Grad-CAM of the CNN for `class` at conv block `layer` of one prepared
/// sample, in eval mode. The class-1 score is the logit, the class-0 score
/// its negation.
pub fn grad_cam_3d(state: &mut ModelState, sample: &Prepared, layer: usize, class: u8) -> Result<AttributionMap> {
    let n_layers = state.cnn.widths.len();
    if layer >= n_layers {
        return Err(Error::InvalidArgument(format!(
            "conv layer {layer} out of range 0..{n_layers}"
        )));
    }
    let s = sample.crop.size();
    let x = Tensor::new(sample.crop.data.clone(), &[1, state.cnn.in_channels, s, s, s])?;
    let out = cnn_forward(state, &x, Mode::Eval, &mut seeded(0))?;
    let sign = if class == 1 { 1.0 } else { -1.0 };
    let score = affine(&sum(&reshape(&out.out.logit, &[1])?), sign, 0.0);
    score.backward()?;
    let act = &out.activations[layer];
    let grads = act.grad().unwrap_or_else(|| vec![0.0; act.numel()]);
    state.zero_grad();
    let sh = act.shape();
    let values = cam_from_maps(act.data(), &grads, sh[1], sh[2], &sample.crop.mask)?;
    Ok(AttributionMap {
        kind: AttributionKind::Voxel,
        sample_id: sample.id.clone(),
        dims: Some([s, s, s]),
        values,
    })
}

/// Maps each surface point back through the cloud normalization and the crop
/// resampling, and reads the CAM at the nearest foreground crop voxel centre
/// (ties: lowest linear index). Surface points sit on voxel boundaries, so
/// the nearest centre overall is as often a background voxel as an object
/// voxel; restricting to the object keeps the surface voxels' values.
pub fn project_cam_to_points(cam: &AttributionMap, surface: &SurfaceCloud, bbox: &CropBox, mask: &Mask) -> Result<AttributionMap> {
    let dims = cam
        .dims
        .ok_or_else(|| Error::InvalidArgument("projection needs a voxel map".into()))?;
    if dims != mask.dims || dims != [bbox.size; 3] || cam.values.len() != mask.len() {
        return Err(Error::Shape(format!(
            "cam dims {dims:?}, mask {:?}, crop size {}",
            mask.dims, bbox.size
        )));
    }
    if surface.transform.scale == 0.0 {
        return Err(Error::InvalidArgument("cloud transform is degenerate".into()));
    }
    let candidates: Vec<usize> = if mask.count() > 0 {
        (0..mask.len()).filter(|&i| mask.data[i]).collect()
    } else {
        (0..mask.len()).collect()
    };
    let values = surface
        .cloud
        .points
        .iter()
        .map(|p| {
            let v = surface.to_voxel(p); // (x, y, z)
            let c = [bbox.to_crop(0, v[2]), bbox.to_crop(1, v[1]), bbox.to_crop(2, v[0])];
            let mut best = (f64::INFINITY, usize::MAX);
            for &i in &candidates {
                let q = mask.coords(i);
                let d: f64 = (0..3).map(|a| (q[a] as f64 - c[a]).powi(2)).sum();
                if d < best.0 {
                    best = (d, i);
                }
            }
            cam.values[best.1]
        })
        .collect();
    Ok(AttributionMap {
        kind: AttributionKind::Point,
        sample_id: cam.sample_id.clone(),
        dims: None,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_edge_cases() {
        let mut z = vec![0.0; 4];
        min_max_normalize(&mut z);
        assert_eq!(z, vec![0.0; 4]);
        let mut c = vec![2.0; 3];
        min_max_normalize(&mut c);
        assert_eq!(c, vec![1.0; 3]);
        let mut r = vec![1.0, 3.0, 2.0];
        min_max_normalize(&mut r);
        assert_eq!(r, vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn upsample_constant_and_identity() {
        assert_eq!(trilinear_upsample(&[3.0; 8], 2, 4), vec![3.0; 64]);
        let v: Vec<f64> = (0..8).map(|i| i as f64).collect();
        assert_eq!(trilinear_upsample(&v, 2, 2), v);
    }

    #[test]
    fn toy_two_channel_layer() {
        // A1 = left half, A2 = right half, alpha = (1, -1)
        let e = 2;
        let mut acts = vec![0.0; 16];
        let mut grads = vec![0.0; 16];
        for i in 0..8 {
            let x = i % 2;
            acts[i] = f64::from(x == 0);
            acts[8 + i] = f64::from(x == 1);
            grads[i] = 1.0;
            grads[8 + i] = -1.0;
        }
        let mask = Mask::filled([2, 2, 2], true);
        let cam = cam_from_maps(&acts, &grads, 2, e, &mask).unwrap();
        for (i, v) in cam.iter().enumerate() {
            assert_eq!(*v > 0.0, i % 2 == 0);
        }
        let neg: Vec<f64> = grads.iter().map(|g| -g.abs()).collect();
        assert!(cam_from_maps(&acts, &neg, 2, e, &mask).unwrap().iter().all(|&v| v == 0.0));
    }
}
