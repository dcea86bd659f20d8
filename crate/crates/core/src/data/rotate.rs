//! The 24 proper rotations of the cube acting on `[z, y, x]` grids.

use serde::{Deserialize, Serialize};

use super::VolumeSample;
use crate::grid::Grid;

/// Output axis `a` reads input axis `perm[a]`, reversed when `flip[a]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rotation {
    pub perm: [usize; 3],
    pub flip: [bool; 3],
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        perm: [0, 1, 2],
        flip: [false; 3],
    };

    pub fn inverse(&self) -> Rotation {
        let mut perm = [0; 3];
        let mut flip = [false; 3];
        for a in 0..3 {
            perm[self.perm[a]] = a;
            flip[self.perm[a]] = self.flip[a];
        }
        Rotation { perm, flip }
    }

    pub fn rotated_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        self.perm.map(|p| dims[p])
    }

    pub fn apply<T: Clone>(&self, grid: &Grid<T>) -> Grid<T> {
        let dims = self.rotated_dims(grid.dims);
        let n = grid.len();
        let mut data = Vec::with_capacity(n);
        let mut src = [0usize; 3];
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    for (a, c) in [z, y, x].into_iter().enumerate() {
                        let p = self.perm[a];
                        src[p] = if self.flip[a] { grid.dims[p] - 1 - c } else { c };
                    }
                    data.push(grid.get(src[0], src[1], src[2]).clone());
                }
            }
        }
        Grid { dims, data }
    }
}

fn permutation_sign(p: [usize; 3]) -> i32 {
    let mut inversions = 0;
    for i in 0..3 {
        for j in i + 1..3 {
            if p[i] > p[j] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 {
        1
    } else {
        -1
    }
}

/// All 24 rotations (signed axis permutations with determinant +1),
/// identity first.
pub fn rotations() -> Vec<Rotation> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for perm in PERMS {
        for bits in 0..8u8 {
            let flip = [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0];
            let flips = flip.iter().filter(|&&f| f).count() as i32;
            let det = permutation_sign(perm) * if flips % 2 == 0 { 1 } else { -1 };
            if det == 1 {
                out.push(Rotation { perm, flip });
            }
        }
    }
    out
}

/// Rotates every channel and the mask identically; id and label are kept.
pub fn augment_rotate(sample: &VolumeSample, rotation: &Rotation) -> VolumeSample {
    VolumeSample {
        id: sample.id.clone(),
        channels: sample.channels.iter().map(|c| rotation.apply(c)).collect(),
        mask: rotation.apply(&sample.mask),
        label: sample.label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3]) -> Grid<usize> {
        Grid {
            dims,
            data: (0..dims.iter().product()).collect(),
        }
    }

    #[test]
    fn twenty_four_distinct_rotations() {
        let rs = rotations();
        assert_eq!(rs.len(), 24);
        assert_eq!(rs[0], Rotation::IDENTITY);
        let g = ramp([2, 3, 4]);
        let images: std::collections::BTreeSet<Vec<usize>> =
            rs.iter().map(|r| r.apply(&g).data).collect();
        assert_eq!(images.len(), 24);
    }

    #[test]
    fn inverse_restores() {
        let g = ramp([2, 3, 4]);
        for r in rotations() {
            assert_eq!(r.inverse().apply(&r.apply(&g)), g);
            assert!(rotations().contains(&r.inverse()));
        }
    }

    #[test]
    fn quarter_turn_moves_corner() {
        // swapping y and x with x reversed is a quarter turn about z
        let r = Rotation {
            perm: [0, 2, 1],
            flip: [false, false, true],
        };
        assert!(rotations().contains(&r));
        let g = ramp([1, 2, 2]);
        // out[0][y][x] = in[0][1 - x][y]
        assert_eq!(r.apply(&g).data, vec![2, 0, 3, 1]);
    }
}
