use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Point, PointCloud, SurfaceMesh};
use crate::{Error, Result};

/// Draws `n` mesh vertices: without replacement when the mesh has at least
/// `n` vertices, otherwise every vertex once (shuffled) topped up with
/// replacement draws.
pub fn sample_point_cloud<R: Rng + ?Sized>(
    mesh: &SurfaceMesh,
    n: usize,
    rng: &mut R,
) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument("point count must be positive".into()));
    }
    let v = mesh.vertices.len();
    if v == 0 {
        return Err(Error::Mesh("cannot sample an empty mesh".into()));
    }
    let picks: Vec<usize> = if v >= n {
        index::sample(rng, v, n).into_vec()
    } else {
        let mut all: Vec<usize> = (0..v).collect();
        all.shuffle(rng);
        all.extend((0..n - v).map(|_| rng.random_range(0..v)));
        all
    };
    Ok(PointCloud::new(
        picks.into_iter().map(|i| mesh.vertices[i]).collect(),
    ))
}

/// Maps voxel-space points into the unit cube and back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudTransform {
    pub center: Point,
    /// Largest half-extent of the bounding box; zero for degenerate clouds.
    pub scale: f64,
}

impl CloudTransform {
    pub fn apply(&self, p: &Point) -> Point {
        if self.scale == 0.0 {
            return [0.0; 3];
        }
        [0, 1, 2].map(|a| (p[a] - self.center[a]) / self.scale)
    }

    pub fn invert(&self, p: &Point) -> Point {
        [0, 1, 2].map(|a| p[a] * self.scale + self.center[a])
    }
}

/// Centres the bounding box on the origin and scales every axis by the same
/// factor so the largest half-extent is 1. A cloud with no extent collapses
/// onto the origin.
pub fn normalize_cloud(cloud: &PointCloud) -> (PointCloud, CloudTransform) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &cloud.points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    if cloud.is_empty() {
        return (
            cloud.clone(),
            CloudTransform {
                center: [0.0; 3],
                scale: 0.0,
            },
        );
    }
    let center = [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a]));
    let scale = (0..3).map(|a| 0.5 * (hi[a] - lo[a])).fold(0.0, f64::max);
    let t = CloudTransform { center, scale };
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let q = t.apply(p);
            // guard the last ulp so the cube bound holds exactly
            q.map(|v| v.clamp(-1.0, 1.0))
        })
        .collect();
    (PointCloud::new(points), t)
}
