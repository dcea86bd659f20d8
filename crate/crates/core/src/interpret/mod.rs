//! Attribution maps: Grad-CAM over the CNN crop, its projection onto the
//! surface points, and a learned edge-mask explanation of the GNN.

mod cam;
mod explain;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{write_volume_file, VolumeHeader};
use crate::geometry::{dist2, write_points_csv, PointCloud};
use crate::grid::Grid;
use crate::{Error, Result};

pub use cam::{cam_from_maps, grad_cam_3d, min_max_normalize, project_cam_to_points, trilinear_upsample};
pub use explain::{gnn_explain, ExplainConfig, Explanation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionKind {
    Voxel,
    Point,
    Edge,
}

/// Importance values in `[0, 1]` for the voxels of a crop, the points of a
/// cloud or the edges of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub kind: AttributionKind,
    pub sample_id: String,
    /// Crop dims `[S, S, S]` for voxel maps.
    pub dims: Option<[usize; 3]>,
    pub values: Vec<f64>,
}

/// Points above one threshold grouped by linkage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub indices: Vec<usize>,
    pub centroid: [f64; 3],
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdClusters {
    pub threshold: f64,
    pub clusters: Vec<Cluster>,
}

/// Normalized distance at which points above a threshold join a cluster.
pub const LINK_DISTANCE: f64 = 0.25;

/// For each threshold, the single-linkage clusters (link distance 0.25) of
/// the points whose importance exceeds it, ordered by lowest member index.
pub fn threshold_report(map: &AttributionMap, cloud: &PointCloud, thresholds: &[f64]) -> Result<Vec<ThresholdClusters>> {
    if map.values.len() != cloud.len() {
        return Err(Error::Shape(format!(
            "{} importances for {} points",
            map.values.len(),
            cloud.len()
        )));
    }
    Ok(thresholds
        .iter()
        .map(|&t| {
            let above: Vec<usize> = (0..cloud.len()).filter(|&i| map.values[i] > t).collect();
            let mut parent: Vec<usize> = (0..above.len()).collect();
            fn find(p: &mut [usize], mut i: usize) -> usize {
                while p[i] != i {
                    p[i] = p[p[i]];
                    i = p[i];
                }
                i
            }
            for a in 0..above.len() {
                for b in a + 1..above.len() {
                    if dist2(&cloud.points[above[a]], &cloud.points[above[b]]) <= LINK_DISTANCE * LINK_DISTANCE {
                        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
            let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
            for a in 0..above.len() {
                let r = find(&mut parent, a);
                groups.entry(r).or_default().push(above[a]);
            }
            let clusters = groups
                .into_values()
                .map(|indices| {
                    let n = indices.len() as f64;
                    let mut c = [0.0; 3];
                    for &i in &indices {
                        for a in 0..3 {
                            c[a] += cloud.points[i][a] / n;
                        }
                    }
                    Cluster {
                        size: indices.len(),
                        centroid: c,
                        indices,
                    }
                })
                .collect();
            ThresholdClusters { threshold: t, clusters }
        })
        .collect())
}

/// Writes a voxel map in the volume file format (one channel, no mask).
pub fn write_voxel_map(path: &Path, map: &AttributionMap) -> Result<()> {
    let dims = map
        .dims
        .ok_or_else(|| Error::InvalidArgument("attribution map has no voxel dims".into()))?;
    let grid = Grid::from_vec(dims, map.values.iter().map(|&v| v as f32).collect())?;
    let header = VolumeHeader {
        id: map.sample_id.clone(),
        dims,
        channels: 1,
        dtype: "f32-le".into(),
        label: None,
        mask: false,
    };
    write_volume_file(path, &header, &[grid], None)
}

/// Writes `x,y,z,importance` rows.
pub fn write_point_map(path: &Path, cloud: &PointCloud, map: &AttributionMap) -> Result<()> {
    write_points_csv(path, cloud, Some(&map.values))
}
