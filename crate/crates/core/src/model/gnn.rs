use rand::Rng;

use super::cnn::{fc_head, norm};
use super::{BranchOutput, ModelState};
use crate::autograd::{
    add, index_select, linear, relu, row_matvec, row_scale, scatter_sum, segment_max, Mode, Tensor,
};
use crate::geometry::{fps, radius_graph, FpsSelection, PointCloud, SpatialGraph};
use crate::{Error, Result};

/// FPS starts from the lexicographically smallest point so the selection
/// does not depend on the input order.
pub fn fps_start(cloud: &PointCloud) -> usize {
    let mut best = 0;
    for (i, p) in cloud.points.iter().enumerate() {
        let q = &cloud.points[best];
        if (p[0], p[1], p[2]) < (q[0], q[1], q[2]) {
            best = i;
        }
    }
    best
}

/// The radius graph layer `layer` builds over `cloud`.
pub fn layer_graph(state: &ModelState, layer: usize, cloud: &PointCloud) -> Result<SpatialGraph> {
    radius_graph(cloud, state.gnn.radii[layer], state.gnn.max_degree)
}

/// One point-conv layer over a batch of clouds whose features are stacked in
/// `features` (`[sum N, Fin]`, sample by sample).
#[derive(Debug, Clone)]
pub struct PointConvOutput {
    /// Post-relu node features before pooling, `[sum N, Fout]`.
    pub conv: Tensor,
    /// Graph of each sample.
    pub graphs: Vec<SpatialGraph>,
    pub selections: Vec<FpsSelection>,
    pub clouds: Vec<PointCloud>,
    /// Pooled features, `[sum ceil(ratio N), Fout]`.
    pub features: Tensor,
}

/// Graph generation at the layer's radius, edge-conditioned convolution
/// `x_i' = W x_i + sum_j M(p_j - p_i) x_j`, relu, then FPS pooling.
///
/// `edge_mask`, when given, scales the message of every edge (edges of all
/// samples concatenated in order).
pub fn pointconv_layer(
    state: &mut ModelState,
    layer: usize,
    clouds: &[PointCloud],
    features: &Tensor,
    mode: Mode,
    edge_mask: Option<&Tensor>,
) -> Result<PointConvOutput> {
    if clouds.iter().any(PointCloud::is_empty) {
        return Err(Error::InvalidArgument("point conv on an empty cloud".into()));
    }
    let fin = state.gnn.layer_inputs()[layer];
    let fout = state.gnn.widths[layer];
    let total: usize = clouds.iter().map(PointCloud::len).sum();
    if features.shape() != [total, fin] {
        return Err(Error::Shape(format!(
            "layer {layer} expects features [{total}, {fin}], got {:?}",
            features.shape()
        )));
    }
    let mut graphs = Vec::with_capacity(clouds.len());
    let (mut sources, mut targets, mut efeat) = (Vec::new(), Vec::new(), Vec::new());
    let mut offset = 0;
    for cloud in clouds {
        let g = layer_graph(state, layer, cloud)?;
        sources.extend(g.sources.iter().map(|s| s + offset));
        targets.extend(g.targets.iter().map(|t| t + offset));
        efeat.extend(g.edge_features.iter().flatten().copied());
        offset += cloud.len();
        graphs.push(g);
    }
    let n_edges = sources.len();
    let p = |state: &ModelState, name: &str| state.param(&format!("gnn.conv{layer}.{name}")).clone();
    let root = linear(features, &p(state, "root"), &Tensor::zeros(&[fout]))?;
    let pre = if n_edges == 0 {
        root
    } else {
        let e = Tensor::new(efeat, &[n_edges, 3])?;
        let h = linear(&e, &p(state, "edge1.weight"), &p(state, "edge1.bias"))?;
        let name = format!("gnn.conv{layer}.edge_bn");
        let h = relu(&norm(state, &h, &name, &name, mode)?);
        let mats = linear(&h, &p(state, "edge2.weight"), &p(state, "edge2.bias"))?;
        let mut msg = row_matvec(&index_select(features, &sources)?, &mats, fout)?;
        if let Some(m) = edge_mask {
            msg = row_scale(&msg, m)?;
        }
        add(&root, &scatter_sum(&msg, &targets, total)?)?
    };
    let conv = relu(&pre);
    let mut keep = Vec::new();
    let mut selections = Vec::with_capacity(clouds.len());
    let mut pooled = Vec::with_capacity(clouds.len());
    let mut offset = 0;
    for cloud in clouds {
        let sel = fps(cloud, state.gnn.ratio, fps_start(cloud))?;
        keep.extend(sel.indices.iter().map(|i| i + offset));
        pooled.push(PointCloud::new(sel.indices.iter().map(|&i| cloud.points[i]).collect()));
        offset += cloud.len();
        selections.push(sel);
    }
    let features = index_select(&conv, &keep)?;
    Ok(PointConvOutput {
        conv,
        graphs,
        selections,
        clouds: pooled,
        features,
    })
}

/// GNN branch output plus the first layer's graphs (the explainer's target).
#[derive(Debug, Clone)]
pub struct GnnOutput {
    pub out: BranchOutput,
    pub first_graphs: Vec<SpatialGraph>,
}

/// Runs a batch of normalized clouds as one disjoint union graph.
pub fn gnn_forward<R: Rng + ?Sized>(
    state: &mut ModelState,
    clouds: &[PointCloud],
    mode: Mode,
    rng: &mut R,
    edge_mask: Option<&Tensor>,
) -> Result<GnnOutput> {
    if clouds.is_empty() {
        return Err(Error::InvalidArgument("gnn batch is empty".into()));
    }
    let need = state.gnn.min_points();
    if let Some(c) = clouds.iter().find(|c| c.len() < need) {
        return Err(Error::InvalidArgument(format!(
            "gnn needs at least {need} points per cloud, got {}",
            c.len()
        )));
    }
    let coords: Vec<f64> = clouds.iter().flat_map(|c| c.points.iter().flatten().copied()).collect();
    if coords.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gnn input points".into()));
    }
    let total = coords.len() / 3;
    let mut x = Tensor::new(coords, &[total, 3])?;
    let mut clouds = clouds.to_vec();
    let mut first_graphs = Vec::new();
    for layer in 0..state.gnn.widths.len() {
        let mask = if layer == 0 { edge_mask } else { None };
        let out = pointconv_layer(state, layer, &clouds, &x, mode, mask)?;
        if layer == 0 {
            first_graphs = out.graphs;
        }
        x = out.features;
        clouds = out.clouds;
    }
    let segments: Vec<usize> = clouds
        .iter()
        .enumerate()
        .flat_map(|(s, c)| std::iter::repeat_n(s, c.len()))
        .collect();
    let pooled = segment_max(&x, &segments, clouds.len())?;
    let p = state.gnn.dropout;
    let out = fc_head(state, "gnn", &pooled, p, mode, rng)?;
    Ok(GnnOutput { out, first_graphs })
}
