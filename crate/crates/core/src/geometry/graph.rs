use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{dist2, Point, PointCloud};
use crate::autograd::{index_select, Tensor};
use crate::{Error, Result};

/// Directed radius graph over a point cloud.
///
/// Edge `k` runs from `sources[k]` (j) to `targets[k]` (i) and carries the
/// feature `p_j - p_i`. Edges are grouped by target in ascending order and,
/// within a target, sorted by distance then source index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGraph {
    pub n_nodes: usize,
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
    pub edge_features: Vec<Point>,
    /// Initial node features: the point coordinates.
    pub node_features: Vec<Point>,
}

impl SpatialGraph {
    pub fn n_edges(&self) -> usize {
        self.sources.len()
    }
}

/// Links `j -> i` whenever `0 < |p_j - p_i| <= r`, keeping at most
/// `max_degree` nearest sources per target (ties by lower index).
pub fn radius_graph(cloud: &PointCloud, r: f64, max_degree: usize) -> Result<SpatialGraph> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    let pts = &cloud.points;
    let r2 = r * r;
    // cells a hair wider than r so rounding never pushes a neighbour two cells away
    let cell = r * (1.0 + 1e-9);
    let cell_of = |p: &Point| p.map(|v| (v / cell).floor() as i64);
    let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        cells.entry(cell_of(p)).or_default().push(i);
    }
    let mut graph = SpatialGraph {
        n_nodes: pts.len(),
        sources: Vec::new(),
        targets: Vec::new(),
        edge_features: Vec::new(),
        node_features: pts.clone(),
    };
    let mut cand: Vec<(f64, usize)> = Vec::new();
    for (i, pi) in pts.iter().enumerate() {
        cand.clear();
        let c = cell_of(pi);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let Some(bucket) = cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &j in bucket {
                        let d = dist2(&pts[j], pi);
                        if d > 0.0 && d <= r2 {
                            cand.push((d, j));
                        }
                    }
                }
            }
        }
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in cand.iter().take(max_degree) {
            graph.sources.push(j);
            graph.targets.push(i);
            let pj = &pts[j];
            graph
                .edge_features
                .push([pj[0] - pi[0], pj[1] - pi[1], pj[2] - pi[2]]);
        }
    }
    Ok(graph)
}

/// Ordered farthest-point selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FpsSelection {
    pub indices: Vec<usize>,
    pub start: usize,
}

/// `ceil(ratio * n)`, at least 1 for a non-empty cloud.
pub fn fps_count(n: usize, ratio: f64) -> usize {
    if n == 0 {
        return 0;
    }
    // the epsilon keeps e.g. 0.3 * 10 from rounding up to 4
    (((ratio * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
}

/// Greedy farthest-point sampling from `start`: each step takes the unchosen
/// point with the largest squared distance to the chosen set, lowest index
/// on ties.
pub fn fps(cloud: &PointCloud, ratio: f64, start: usize) -> Result<FpsSelection> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("fps ratio {ratio} outside (0, 1]")));
    }
    let n = cloud.len();
    if n == 0 {
        return Ok(FpsSelection {
            indices: vec![],
            start,
        });
    }
    if start >= n {
        return Err(Error::InvalidArgument(format!(
            "fps start {start} out of range 0..{n}"
        )));
    }
    let k = fps_count(n, ratio);
    let pts = &cloud.points;
    let mut chosen = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut indices = Vec::with_capacity(k);
    let mut cur = start;
    loop {
        chosen[cur] = true;
        indices.push(cur);
        if indices.len() == k {
            break;
        }
        let pc = pts[cur];
        let mut best = usize::MAX;
        for i in 0..n {
            let d = dist2(&pts[i], &pc);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !chosen[i] && (best == usize::MAX || min_d[i] > min_d[best]) {
                best = i;
            }
        }
        cur = best;
    }
    Ok(FpsSelection { indices, start })
}

/// Keeps the selected points and feature rows, in selection order.
pub fn pool_cloud(
    cloud: &PointCloud,
    features: &Tensor,
    selection: &FpsSelection,
) -> Result<(PointCloud, Tensor)> {
    if features.shape().first() != Some(&cloud.len()) {
        return Err(Error::Shape(format!(
            "{} points but features of shape {:?}",
            cloud.len(),
            features.shape()
        )));
    }
    if let Some(&i) = selection.indices.iter().find(|&&i| i >= cloud.len()) {
        return Err(Error::InvalidArgument(format!(
            "selection index {i} out of range 0..{}",
            cloud.len()
        )));
    }
    let pts = selection.indices.iter().map(|&i| cloud.points[i]).collect();
    Ok((PointCloud::new(pts), index_select(features, &selection.indices)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_points_one_pair() {
        let cloud = PointCloud::new(vec![[0.0, 0.0, 0.0], [0.2, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let g = radius_graph(&cloud, 0.25, 32).unwrap();
        assert_eq!(g.sources, vec![1, 0]);
        assert_eq!(g.targets, vec![0, 1]);
        assert_eq!(g.edge_features[0], [0.2, 0.0, 0.0]);
        assert_eq!(g.edge_features[1], [-0.2, 0.0, 0.0]);
    }

    #[test]
    fn big_radius_gives_complete_digraph() {
        let cloud = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let g = radius_graph(&cloud, 10.0, 10).unwrap();
        assert_eq!(g.n_edges(), 12);
        assert!(g.sources.iter().zip(&g.targets).all(|(s, t)| s != t));
    }

    #[test]
    fn single_point_has_no_edges() {
        let g = radius_graph(&PointCloud::new(vec![[0.5; 3]]), 1.0, 32).unwrap();
        assert_eq!(g.n_edges(), 0);
        assert!(radius_graph(&PointCloud::new(vec![[0.5; 3]]), 0.0, 32).is_err());
    }

    #[test]
    fn degree_cap_keeps_nearest() {
        let cloud = PointCloud::new(vec![
            [0.0; 3],
            [0.3, 0.0, 0.0],
            [0.1, 0.0, 0.0],
            [0.0, 0.2, 0.0],
        ]);
        let g = radius_graph(&cloud, 1.0, 2).unwrap();
        let into0: Vec<usize> = g
            .targets
            .iter()
            .zip(&g.sources)
            .filter(|(t, _)| **t == 0)
            .map(|(_, s)| *s)
            .collect();
        assert_eq!(into0, vec![2, 3]);
    }

    #[test]
    fn collinear_fps() {
        let cloud = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [10.0, 0.0, 0.0]]);
        let sel = fps(&cloud, 0.5, 0).unwrap();
        assert_eq!(sel.indices, vec![0, 3]);
        let all = fps(&cloud, 1.0, 0).unwrap();
        assert_eq!(all.indices, vec![0, 3, 2, 1]);
    }

    #[test]
    fn fps_count_is_ceiling() {
        assert_eq!(fps_count(16, 0.5), 8);
        assert_eq!(fps_count(15, 0.5), 8);
        assert_eq!(fps_count(10, 0.3), 3);
        assert_eq!(fps_count(1, 0.5), 1);
    }

    #[test]
    fn pool_keeps_selected_rows() {
        let cloud = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [9.0, 0.0, 0.0]]);
        let feats = Tensor::new((0..8).map(|v| v as f64).collect(), &[4, 2]).unwrap();
        let sel = fps(&cloud, 0.5, 0).unwrap();
        let (pc, pf) = pool_cloud(&cloud, &feats, &sel).unwrap();
        assert_eq!(pc.points, vec![[0.0; 3], [9.0, 0.0, 0.0]]);
        assert_eq!(pf.data(), &[0.0, 1.0, 6.0, 7.0]);
        let bad = FpsSelection {
            indices: vec![7],
            start: 0,
        };
        assert!(pool_cloud(&cloud, &feats, &bad).is_err());
    }
}
