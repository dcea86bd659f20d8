//! Marching cubes on binary masks.
//!
//! The 256-entry case table is generated rather than transcribed. Each cube
//! face is resolved on its own corner values only, with diagonal foreground
//! corners kept apart (matching 6-connectivity of the mask), so the two cubes
//! sharing a face always cut it the same way and the surface is closed.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use super::SurfaceMesh;
use crate::grid::Mask;
use crate::{Error, Result};

/// Corner `i` of a cell sits at offset `(i & 1, (i >> 1) & 1, (i >> 2) & 1)`
/// in `(x, y, z)`.
fn corner_offset(i: usize) -> [usize; 3] {
    [i & 1, (i >> 1) & 1, (i >> 2) & 1]
}

/// The twelve cell edges as `(low corner, axis)`, axis 0 = x.
fn cell_edges() -> [(usize, usize); 12] {
    let mut edges = [(0, 0); 12];
    let mut n = 0;
    for axis in 0..3 {
        for c in 0..8 {
            if c & (1 << axis) == 0 {
                edges[n] = (c, axis);
                n += 1;
            }
        }
    }
    edges
}

fn edge_between(a: usize, b: usize) -> usize {
    let diff = a ^ b;
    debug_assert!(diff.count_ones() == 1);
    let axis = diff.trailing_zeros() as usize;
    let low = a.min(b);
    cell_edges()
        .iter()
        .position(|&(c, ax)| c == low && ax == axis)
        .expect("adjacent corners share an edge")
}

/// Face corners in counter-clockwise order seen from outside the cell.
fn face_corners(axis: usize, side: usize) -> [usize; 4] {
    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
    let at = |bu: usize, bv: usize| (side << axis) | (bu << u) | (bv << v);
    let ccw = [at(0, 0), at(1, 0), at(1, 1), at(0, 1)];
    if side == 1 {
        ccw
    } else {
        [ccw[0], ccw[3], ccw[2], ccw[1]]
    }
}

fn edge_faces(edge: usize) -> [(usize, usize); 2] {
    let (c, axis) = cell_edges()[edge];
    let mut faces = [(0, 0); 2];
    let mut n = 0;
    for a in 0..3 {
        if a != axis {
            faces[n] = (a, (c >> a) & 1);
            n += 1;
        }
    }
    faces
}

/// Triangles (as cell-edge triples) for one corner configuration.
fn triangulate_case(case: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| case & (1 << c) != 0;
    // next[e] = edge reached from e along the surface/cell-face intersection
    let mut next = [usize::MAX; 12];
    for axis in 0..3 {
        for side in 0..2 {
            let q = face_corners(axis, side);
            for k in 0..4 {
                let prev = q[(k + 3) % 4];
                if !inside(q[k]) || inside(prev) {
                    continue;
                }
                // q[k] starts a run of foreground corners
                let mut m = k;
                while inside(q[(m + 1) % 4]) {
                    m = (m + 1) % 4;
                }
                let entry = edge_between(prev, q[k]);
                let exit = edge_between(q[m], q[(m + 1) % 4]);
                next[exit] = entry;
            }
        }
    }
    let mut used = [false; 12];
    let mut tris = Vec::new();
    for start in 0..12 {
        if next[start] == usize::MAX || used[start] {
            continue;
        }
        let mut poly = Vec::new();
        let mut e = start;
        while !used[e] {
            used[e] = true;
            poly.push(e);
            e = next[e];
        }
        debug_assert_eq!(e, start);
        fan(&poly, &mut tris);
    }
    tris
}

/// Fan-triangulates a cycle, preferring an apex whose chords do not lie in a
/// cell face (a chord in a face could coincide with one from the neighbour).
fn fan(poly: &[usize], tris: &mut Vec<[u8; 3]>) {
    let n = poly.len();
    let shares_face = |a: usize, b: usize| {
        let fb = edge_faces(b);
        edge_faces(a).iter().any(|f| fb.contains(f))
    };
    let apex = (0..n)
        .find(|&a| (2..n - 1).all(|j| !shares_face(poly[a], poly[(a + j) % n])))
        .unwrap_or(0);
    for j in 1..n - 1 {
        let b = poly[(apex + j) % n];
        let c = poly[(apex + j + 1) % n];
        // reversed so normals face from foreground to background
        tris.push([poly[apex] as u8, c as u8, b as u8]);
    }
}

fn case_table() -> &'static [Vec<[u8; 3]>] {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(triangulate_case).collect())
}

/// Extracts the 0.5 isosurface of a binary mask with vertices at edge
/// midpoints. Coordinates are in voxel units as `(x, y, z)`, voxel centres on
/// integer positions. Cells outside the grid read as background, so masks
/// touching the border still give closed surfaces.
pub fn marching_cubes(mask: &Mask) -> Result<SurfaceMesh> {
    if mask.count() == 0 {
        return Err(Error::Mesh("empty mask has no surface".into()));
    }
    let comps = mask.components();
    if comps != 1 {
        return Err(Error::Mesh(format!(
            "mask has {comps} 6-connected components, expected 1"
        )));
    }
    let [d, h, w] = mask.dims;
    let edges = cell_edges();
    let table = case_table();
    // vertex ids keyed by (x, y, z, axis) of the low end, shifted by one so
    // the virtual padding layer is addressable
    let mut vertex_of: BTreeMap<(usize, usize, usize, usize), u32> = BTreeMap::new();
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    for z in -1..d as isize {
        for y in -1..h as isize {
            for x in -1..w as isize {
                let mut case = 0;
                for c in 0..8 {
                    let [ox, oy, oz] = corner_offset(c);
                    if mask.get_padded(z + oz as isize, y + oy as isize, x + ox as isize) {
                        case |= 1 << c;
                    }
                }
                let tris = &table[case];
                if tris.is_empty() {
                    continue;
                }
                let mut local = [u32::MAX; 12];
                for tri in tris {
                    let mut ids = [0u32; 3];
                    for (slot, &e) in ids.iter_mut().zip(tri) {
                        let e = e as usize;
                        if local[e] == u32::MAX {
                            let (c, axis) = edges[e];
                            let [ox, oy, oz] = corner_offset(c);
                            let key = (
                                (x + 1) as usize + ox,
                                (y + 1) as usize + oy,
                                (z + 1) as usize + oz,
                                axis,
                            );
                            local[e] = *vertex_of.entry(key).or_insert_with(|| {
                                let mut p = [
                                    key.0 as f64 - 1.0,
                                    key.1 as f64 - 1.0,
                                    key.2 as f64 - 1.0,
                                ];
                                p[axis] += 0.5;
                                vertices.push(p);
                                (vertices.len() - 1) as u32
                            });
                        }
                        *slot = local[e];
                    }
                    triangles.push(ids);
                }
            }
        }
    }
    Ok(SurfaceMesh {
        vertices,
        triangles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_gives_closed_cycles() {
        // within one cell each surface vertex lies on exactly one cycle
        for case in 0..256usize {
            let tris = triangulate_case(case);
            let crossing = cell_edges()
                .iter()
                .filter(|&&(c, axis)| ((case >> c) & 1) != ((case >> (c | (1 << axis))) & 1))
                .count();
            let mut seen = std::collections::BTreeSet::new();
            for t in &tris {
                seen.extend(t.iter().copied());
            }
            assert_eq!(seen.len(), crossing, "case {case}");
        }
    }

    #[test]
    fn complementary_trivial_cases_are_empty() {
        assert!(triangulate_case(0).is_empty());
        assert!(triangulate_case(255).is_empty());
        assert_eq!(triangulate_case(1).len(), 1);
    }

    #[test]
    fn single_voxel_is_an_octahedron() {
        let mut m = Mask::filled([3, 3, 3], false);
        m.set(1, 1, 1, true);
        let mesh = marching_cubes(&m).unwrap();
        assert_eq!(mesh.vertices.len(), 6);
        assert_eq!(mesh.triangles.len(), 8);
    }

    #[test]
    fn rejects_empty_and_split_masks() {
        let mut m = Mask::filled([4, 4, 4], false);
        assert!(matches!(marching_cubes(&m), Err(Error::Mesh(_))));
        m.set(0, 0, 0, true);
        m.set(2, 2, 2, true);
        assert!(matches!(marching_cubes(&m), Err(Error::Mesh(_))));
    }
}
