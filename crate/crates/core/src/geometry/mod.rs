//! Surface extraction and point-cloud graph machinery for the GNN branch.

mod cloud;
mod export;
mod graph;
mod mesh;

use serde::{Deserialize, Serialize};

pub use cloud::{normalize_cloud, sample_point_cloud, CloudTransform};
pub use export::{read_points_csv, write_mesh_off, write_points_csv};
pub use graph::{fps, fps_count, pool_cloud, radius_graph, FpsSelection, SpatialGraph};
pub use mesh::marching_cubes;


pub type Point = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMesh {
    /// `(x, y, z)` in voxel units.
    pub vertices: Vec<Point>,
    pub triangles: Vec<[u32; 3]>,
}

impl SurfaceMesh {
    /// Undirected edges with the number of triangles using each.
    pub fn edge_incidence(&self) -> std::collections::BTreeMap<(u32, u32), usize> {
        let mut counts = std::collections::BTreeMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        !self.triangles.is_empty() && self.edge_incidence().values().all(|&c| c == 2)
    }

    /// V - E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_incidence().len() as i64
            + self.triangles.len() as i64
    }

    /// Signed enclosed volume; positive when triangles wind outward.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                (a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                    + a[2] * (b[0] * c[1] - b[1] * c[0]))
                    / 6.0
            })
            .sum()
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
                let n = [
                    u[1] * v[2] - u[2] * v[1],
                    u[2] * v[0] - u[0] * v[2],
                    u[0] * v[1] - u[1] * v[0],
                ];
                0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
            })
            .sum()
    }
}

/// A set of 3D points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Mask;

    #[test]
    fn single_voxel_surface_is_a_sphere() {
        let mut m = Mask::filled([3, 3, 3], false);
        m.set(1, 1, 1, true);
        let mesh = marching_cubes(&m).unwrap();
        assert!(mesh.is_closed());
        assert_eq!(mesh.euler_characteristic(), 2);
        assert!(mesh.signed_volume() > 0.0);
    }

    #[test]
    fn block_surface_is_a_sphere() {
        let mut m = Mask::filled([4, 4, 4], false);
        for z in 1..3 {
            for y in 1..3 {
                for x in 1..3 {
                    m.set(z, y, x, true);
                }
            }
        }
        let mesh = marching_cubes(&m).unwrap();
        assert!(mesh.is_closed());
        assert_eq!(mesh.euler_characteristic(), 2);
        assert!(mesh.signed_volume() > 0.0);
    }

    #[test]
    fn border_touching_mask_is_closed() {
        let m = Mask::filled([2, 3, 2], true);
        let mesh = marching_cubes(&m).unwrap();
        assert!(mesh.is_closed());
        assert_eq!(mesh.euler_characteristic(), 2);
    }
}
