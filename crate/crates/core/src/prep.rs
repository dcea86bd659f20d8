//! Turns a volume sample into the two branch inputs: the masked, normalized
//! voxel crop for the CNN and the normalized surface point cloud for the GNN.

use serde::{Deserialize, Serialize};

use crate::data::{VolumeSample, N_CHANNELS};
use crate::geometry::{marching_cubes, normalize_cloud, sample_point_cloud, CloudTransform, Point, PointCloud, SurfaceMesh};
use crate::grid::Mask;
use crate::rng::derived;
use crate::{Error, Result};

/// Where a cubic crop came from: the mask bounding box `[lo, hi)` in
/// `[z, y, x]` voxel indices of the source volume, resampled to `size³`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
    pub size: usize,
}

impl CropBox {
    /// Source voxel index read by crop index `o` along axis `a`
    /// (nearest neighbour at the crop voxel centre).
    pub fn source_index(&self, a: usize, o: usize) -> usize {
        let extent = self.hi[a] - self.lo[a];
        self.lo[a] + (((o as f64 + 0.5) * extent as f64 / self.size as f64) as usize).min(extent - 1)
    }

    /// Continuous crop coordinate (voxel-centre units) of a source coordinate
    /// along axis `a`; inverse of the centre-to-centre map used for sampling.
    pub fn to_crop(&self, a: usize, source: f64) -> f64 {
        let extent = (self.hi[a] - self.lo[a]) as f64;
        (source - self.lo[a] as f64 + 0.5) * self.size as f64 / extent - 0.5
    }
}

/// CNN input: `[4, S, S, S]` values, zero outside the (resampled) mask and
/// z-scored per channel over mask voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub data: Vec<f64>,
    pub mask: Mask,
    pub bbox: CropBox,
}

impl Crop {
    pub fn size(&self) -> usize {
        self.bbox.size
    }
}

pub fn crop_volume(sample: &VolumeSample, size: usize) -> Result<Crop> {
    if size == 0 {
        return Err(Error::InvalidArgument("crop size must be positive".into()));
    }
    let (lo, hi) = sample
        .mask
        .bounding_box()
        .ok_or_else(|| Error::InvalidArgument(format!("sample {} has an empty mask", sample.id)))?;
    let bbox = CropBox { lo, hi, size };
    let src: Vec<Vec<usize>> = (0..3).map(|a| (0..size).map(|o| bbox.source_index(a, o)).collect()).collect();
    let n = size * size * size;
    let mut mask = Mask::filled([size; 3], false);
    let mut source_of = Vec::with_capacity(n);
    for z in 0..size {
        for y in 0..size {
            for x in 0..size {
                let i = sample.mask.index(src[0][z], src[1][y], src[2][x]);
                source_of.push(i);
            }
        }
    }
    for (k, &i) in source_of.iter().enumerate() {
        mask.data[k] = sample.mask.data[i];
    }
    let inside = mask.count();
    let mut data = vec![0.0; N_CHANNELS * n];
    for (c, ch) in sample.channels.iter().enumerate() {
        let out = &mut data[c * n..(c + 1) * n];
        for (k, &i) in source_of.iter().enumerate() {
            if mask.data[k] {
                out[k] = ch.data[i] as f64;
            }
        }
        let mean = out.iter().sum::<f64>() / inside as f64;
        let var = out
            .iter()
            .zip(&mask.data)
            .filter(|(_, &m)| m)
            .map(|(v, _)| (v - mean) * (v - mean))
            .sum::<f64>()
            / inside as f64;
        let std = var.sqrt();
        let scale = if std > 1e-12 { 1.0 / std } else { 1.0 };
        for (v, &m) in out.iter_mut().zip(&mask.data) {
            if m {
                *v = (*v - mean) * scale;
            }
        }
    }
    Ok(Crop { data, mask, bbox })
}

/// GNN input with what is needed to map points back to voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceCloud {
    pub mesh: SurfaceMesh,
    /// Normalized to `[-1, 1]`.
    pub cloud: PointCloud,
    pub transform: CloudTransform,
}

impl SurfaceCloud {
    /// `(x, y, z)` source-voxel coordinates of normalized point `p`.
    pub fn to_voxel(&self, p: &Point) -> Point {
        self.transform.invert(p)
    }
}

/// Mesh the mask, sample `n_points` surface points with a stream derived from
/// `seed` and the sample id, and normalize them.
pub fn surface_cloud(sample: &VolumeSample, n_points: usize, seed: u64) -> Result<SurfaceCloud> {
    let mesh = marching_cubes(&sample.mask)?;
    let mut rng = derived(seed, &format!("points/{}", sample.id));
    let raw = sample_point_cloud(&mesh, n_points, &mut rng)?;
    let (cloud, transform) = normalize_cloud(&raw);
    Ok(SurfaceCloud {
        mesh,
        cloud,
        transform,
    })
}

/// Both branch inputs of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub id: String,
    pub label: u8,
    pub crop: Crop,
    pub surface: SurfaceCloud,
}

pub fn prepare(sample: &VolumeSample, crop_size: usize, n_points: usize, seed: u64) -> Result<Prepared> {
    Ok(Prepared {
        id: sample.id.clone(),
        label: sample.label,
        crop: crop_volume(sample, crop_size)?,
        surface: surface_cloud(sample, n_points, seed)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn block_sample() -> VolumeSample {
        let dims = [6, 6, 6];
        let mut mask = Mask::filled(dims, false);
        for z in 1..5 {
            for y in 2..4 {
                for x in 1..3 {
                    mask.set(z, y, x, true);
                }
            }
        }
        let ramp: Vec<f32> = (0..216).map(|v| v as f32).collect();
        VolumeSample {
            id: "b".into(),
            channels: (0..4).map(|_| Grid::from_vec(dims, ramp.clone()).unwrap()).collect(),
            mask,
            label: 0,
        }
    }

    #[test]
    fn crop_fills_cube_and_standardizes() {
        let s = block_sample();
        let c = crop_volume(&s, 4).unwrap();
        assert_eq!(c.bbox.lo, [1, 2, 1]);
        assert_eq!(c.bbox.hi, [5, 4, 3]);
        // the bounding box is the full object, so the crop is all foreground
        assert_eq!(c.mask.count(), 64);
        let ch0 = &c.data[..64];
        let mean: f64 = ch0.iter().sum::<f64>() / 64.0;
        let var: f64 = ch0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn outside_mask_is_zero() {
        let mut s = block_sample();
        s.mask.set(1, 2, 1, false);
        let c = crop_volume(&s, 8).unwrap();
        for ch in 0..4 {
            for k in 0..512 {
                if !c.mask.data[k] {
                    assert_eq!(c.data[ch * 512 + k], 0.0);
                }
            }
        }
        assert!(c.mask.count() < 512);
    }

    #[test]
    fn crop_coordinates_invert_sampling() {
        let b = CropBox { lo: [2, 0, 1], hi: [6, 8, 3], size: 8 };
        for a in 0..3 {
            for o in 0..8 {
                let s = b.source_index(a, o);
                let back = b.to_crop(a, s as f64);
                // the source voxel centre maps inside the run of crop voxels reading it
                assert_eq!(b.source_index(a, back.round().clamp(0.0, 7.0) as usize), s);
            }
        }
    }

    #[test]
    fn cloud_is_normalized_and_seeded() {
        let s = block_sample();
        let a = surface_cloud(&s, 32, 1).unwrap();
        assert_eq!(a.cloud.len(), 32);
        assert!(a.cloud.points.iter().all(|p| p.iter().all(|v| v.abs() <= 1.0)));
        assert_eq!(a, surface_cloud(&s, 32, 1).unwrap());
        let v = a.to_voxel(&a.cloud.points[0]);
        assert!(v.iter().all(|c| (0.0..6.0).contains(c)));
    }
}
