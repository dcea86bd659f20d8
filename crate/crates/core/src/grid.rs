//! Dense 3D grids indexed `[z][y][x]` (x fastest).

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    /// `[D, H, W]`
    pub dims: [usize; 3],
    pub data: Vec<T>,
}

pub type Mask = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn filled(dims: [usize; 3], value: T) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "grid {dims:?} needs {} values, got {}",
                dims.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> &T {
        &self.data[self.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, v: T) {
        let i = self.index(z, y, x);
        self.data[i] = v;
    }

    /// `(z, y, x)` of a flat index.
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let [_, h, w] = self.dims;
        [i / (h * w), (i / w) % h, i % w]
    }
}

impl Grid<bool> {
    /// Value with everything outside the grid reading as background.
    #[inline]
    pub fn get_padded(&self, z: isize, y: isize, x: isize) -> bool {
        let [d, h, w] = self.dims;
        if z < 0 || y < 0 || x < 0 || z >= d as isize || y >= h as isize || x >= w as isize {
            return false;
        }
        *self.get(z as usize, y as usize, x as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Number of 6-connected foreground components.
    pub fn components(&self) -> usize {
        self.label_components().1
    }

    /// Foreground component labels (`usize::MAX` for background) and the
    /// number of components, numbered in scan order.
    pub fn label_components(&self) -> (Vec<usize>, usize) {
        let mut label = vec![usize::MAX; self.len()];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.len() {
            if !self.data[start] || label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let [z, y, x] = self.coords(i);
                for (dz, dy, dx) in NEIGHBORS_6 {
                    let (nz, ny, nx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                    if self.get_padded(nz, ny, nx) {
                        let j = self.index(nz as usize, ny as usize, nx as usize);
                        if label[j] == usize::MAX {
                            label[j] = count;
                            stack.push(j);
                        }
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    /// Keeps only the largest 6-connected component (earliest on ties).
    pub fn largest_component(&self) -> Mask {
        let (label, count) = self.label_components();
        if count <= 1 {
            return self.clone();
        }
        let mut sizes = vec![0usize; count];
        for &l in &label {
            if l != usize::MAX {
                sizes[l] += 1;
            }
        }
        let mut best = 0;
        for (k, &s) in sizes.iter().enumerate() {
            if s > sizes[best] {
                best = k;
            }
        }
        Grid {
            dims: self.dims,
            data: label.iter().map(|&l| l == best).collect(),
        }
    }

    /// Number of foreground voxel faces adjacent to background (including
    /// faces on the grid border).
    pub fn exposed_faces(&self) -> usize {
        let mut n = 0;
        for i in 0..self.len() {
            if !self.data[i] {
                continue;
            }
            let [z, y, x] = self.coords(i);
            for (dz, dy, dx) in NEIGHBORS_6 {
                if !self.get_padded(z as isize + dz, y as isize + dy, x as isize + dx) {
                    n += 1;
                }
            }
        }
        n
    }

    /// Inclusive-exclusive bounding box `(lo, hi)` of the foreground, `[z, y, x]`.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0; 3];
        let mut any = false;
        for (i, &v) in self.data.iter().enumerate() {
            if v {
                any = true;
                let c = self.coords(i);
                for a in 0..3 {
                    lo[a] = lo[a].min(c[a]);
                    hi[a] = hi[a].max(c[a] + 1);
                }
            }
        }
        any.then_some((lo, hi))
    }
}

pub(crate) const NEIGHBORS_6: [(isize, isize, isize); 6] = [
    (-1, 0, 0),
    (1, 0, 0),
    (0, -1, 0),
    (0, 1, 0),
    (0, 0, -1),
    (0, 0, 1),
];
