//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

pub mod grad;

use cotrain::geometry::PointCloud;
use cotrain::grid::Mask;
use rand::Rng;

/// Direct six-nested-loop 3D cross-correlation (plus batch/channel loops).
pub fn conv3d_reference(
    input: &[f64],
    ishape: [usize; 5],
    kernel: &[f64],
    cout: usize,
    k: usize,
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 5]) {
    let [b, cin, d, h, w] = ishape;
    let o = |e: usize| (e + 2 * pad - k) / stride + 1;
    let (od, oh, ow) = (o(d), o(h), o(w));
    let mut out = vec![0.0; b * cout * od * oh * ow];
    for n in 0..b {
        for co in 0..cout {
            for z in 0..od {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = bias[co];
                        for ci in 0..cin {
                            for kz in 0..k {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iz = (z * stride + kz) as isize - pad as isize;
                                        let iy = (y * stride + ky) as isize - pad as isize;
                                        let ix = (x * stride + kx) as isize - pad as isize;
                                        if iz < 0
                                            || iy < 0
                                            || ix < 0
                                            || iz >= d as isize
                                            || iy >= h as isize
                                            || ix >= w as isize
                                        {
                                            continue;
                                        }
                                        let iv = input[(((n * cin + ci) * d + iz as usize) * h
                                            + iy as usize)
                                            * w
                                            + ix as usize];
                                        let kv =
                                            kernel[(((co * cin + ci) * k + kz) * k + ky) * k + kx];
                                        acc += iv * kv;
                                    }
                                }
                            }
                        }
                        out[(((n * cout + co) * od + z) * oh + y) * ow + x] = acc;
                    }
                }
            }
        }
    }
    (out, [b, cout, od, oh, ow])
}

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// O(N^2) radius neighbour list: `(source, target)` pairs ordered by target,
/// then distance, then source.
pub fn radius_edges_reference(cloud: &PointCloud, r: f64, max_degree: usize) -> Vec<(usize, usize)> {
    let p = &cloud.points;
    let mut edges = Vec::new();
    for i in 0..p.len() {
        let mut nb: Vec<(f64, usize)> = (0..p.len())
            .filter(|&j| j != i)
            .map(|j| (d2(&p[j], &p[i]), j))
            .filter(|&(d, _)| d > 0.0 && d <= r * r)
            .collect();
        nb.sort_by(|a, b| a.partial_cmp(b).unwrap());
        edges.extend(nb.into_iter().take(max_degree).map(|(_, j)| (j, i)));
    }
    edges
}

/// Greedy farthest-point selection recomputing every min-distance from
/// scratch: O(N^2 K).
pub fn fps_reference(cloud: &PointCloud, k: usize, start: usize) -> Vec<usize> {
    let p = &cloud.points;
    let mut chosen = vec![start];
    while chosen.len() < k {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..p.len() {
            if chosen.contains(&i) {
                continue;
            }
            let m = chosen
                .iter()
                .map(|&c| d2(&p[i], &p[c]))
                .fold(f64::INFINITY, f64::min);
            if best.map_or(true, |(bm, _)| m > bm) {
                best = Some((m, i));
            }
        }
        chosen.push(best.unwrap().1);
    }
    chosen
}

pub fn random_cloud<R: Rng>(rng: &mut R, n: usize, spread: f64) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-spread..spread),
                    rng.random_range(-spread..spread),
                    rng.random_range(-spread..spread),
                ]
            })
            .collect(),
    )
}

/// A single 6-connected blob grown by random face-adjacent steps.
pub fn random_blob<R: Rng>(rng: &mut R, dims: [usize; 3], voxels: usize) -> Mask {
    let mut m = Mask::filled(dims, false);
    let mut cells = vec![[dims[0] / 2, dims[1] / 2, dims[2] / 2]];
    m.set(cells[0][0], cells[0][1], cells[0][2], true);
    let mut guard = 0;
    while cells.len() < voxels && guard < voxels * 50 {
        guard += 1;
        let base = cells[rng.random_range(0..cells.len())];
        let axis = rng.random_range(0..3);
        let step: isize = if rng.random_bool(0.5) { 1 } else { -1 };
        let mut c = base.map(|v| v as isize);
        c[axis] += step;
        if c.iter().zip(dims).any(|(&v, d)| v < 0 || v >= d as isize) {
            continue;
        }
        let c = c.map(|v| v as usize);
        if !m.get(c[0], c[1], c[2]) {
            m.set(c[0], c[1], c[2], true);
            cells.push(c);
        }
    }
    m
}
