use serde::{Deserialize, Serialize};

use super::cam::min_max_normalize;
use super::{AttributionKind, AttributionMap};
use crate::autograd::{add, affine, clamp, ln, mean, mul, sigmoid, sum, Mode, Tensor};
use crate::collab::{bce, ADAM_EPS, BETA1, BETA2};
use crate::geometry::{PointCloud, SpatialGraph};
use crate::model::{gnn_forward, ModelState};
use crate::rng::seeded;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Weight of the summed mask values.
    pub size_weight: f64,
    /// Weight of the mean binary entropy of the mask values.
    pub entropy_weight: f64,
    /// Initial mask value (the free parameters start at its logit).
    pub init: f64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 0.01,
            size_weight: 0.005,
            entropy_weight: 0.1,
            init: 0.9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Explanation {
    /// Max normalized mask over each point's incident edges (0 if isolated).
    pub points: AttributionMap,
    /// Min-max normalized edge mask over the first layer's graph.
    pub edges: AttributionMap,
    /// Mask values before normalization.
    pub raw_mask: Vec<f64>,
    pub graph: SpatialGraph,
    /// Objective value before each step.
    pub losses: Vec<f64>,
    /// Label the unmasked model predicts; the mask is fit to keep it.
    pub predicted: u8,
}

/// Learns a soft mask over the first point-conv layer's edges that keeps the
/// model's own prediction while staying small and decisive:
/// `BCE(prediction | masked) + size_weight * sum(m) + entropy_weight * mean H(m)`,
/// minimized by Adam over the mask logits.
pub fn gnn_explain(state: &mut ModelState, cloud: &PointCloud, id: &str, cfg: &ExplainConfig) -> Result<Explanation> {
    if !(cfg.init > 0.0 && cfg.init < 1.0) || !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument(
            "explainer needs an initial mask in (0, 1) and a positive learning rate".into(),
        ));
    }
    let clouds = std::slice::from_ref(cloud);
    let mut rng = seeded(0);
    let plain = gnn_forward(state, clouds, Mode::Eval, &mut rng, None)?;
    let predicted = u8::from(plain.out.prob.item() >= 0.5);
    let graph = plain.first_graphs.into_iter().next().expect("one cloud in, one graph out");
    let e = graph.n_edges();
    let mut logits = vec![(cfg.init / (1.0 - cfg.init)).ln(); e];
    let (mut m1, mut m2) = (vec![0.0; e], vec![0.0; e]);
    let mut losses = Vec::with_capacity(cfg.steps);
    if e > 0 {
        for step in 1..=cfg.steps {
            let w = Tensor::param(logits.clone(), &[e])?;
            let m = sigmoid(&w);
            let out = gnn_forward(state, clouds, Mode::Eval, &mut rng, Some(&m))?.out;
            let fit = bce(&[predicted], &out.prob)?;
            let mc = clamp(&m, 1e-7, 1.0 - 1e-7);
            let not_m = affine(&mc, -1.0, 1.0);
            let entropy = affine(
                &add(&mul(&mc, &ln(&mc)?)?, &mul(&not_m, &ln(&not_m)?)?)?,
                -1.0,
                0.0,
            );
            let loss = add(
                &add(&fit, &affine(&sum(&m), cfg.size_weight, 0.0))?,
                &affine(&mean(&entropy)?, cfg.entropy_weight, 0.0),
            )?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "explainer objective at step {step} for {id}"
                )));
            }
            losses.push(value);
            loss.backward()?;
            let g = w.grad().unwrap_or_else(|| vec![0.0; e]);
            state.zero_grad();
            let (c1, c2) = (1.0 - BETA1.powi(step as i32), 1.0 - BETA2.powi(step as i32));
            for k in 0..e {
                m1[k] = BETA1 * m1[k] + (1.0 - BETA1) * g[k];
                m2[k] = BETA2 * m2[k] + (1.0 - BETA2) * g[k] * g[k];
                logits[k] -= cfg.lr * (m1[k] / c1) / ((m2[k] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
    let raw_mask: Vec<f64> = logits.iter().map(|&l| 1.0 / (1.0 + (-l).exp())).collect();
    let mut norm = raw_mask.clone();
    min_max_normalize(&mut norm);
    let mut points = vec![0.0f64; cloud.len()];
    for (k, &v) in norm.iter().enumerate() {
        for node in [graph.sources[k], graph.targets[k]] {
            points[node] = points[node].max(v);
        }
    }
    Ok(Explanation {
        points: AttributionMap {
            kind: AttributionKind::Point,
            sample_id: id.to_string(),
            dims: None,
            values: points,
        },
        edges: AttributionMap {
            kind: AttributionKind::Edge,
            sample_id: id.to_string(),
            dims: None,
            values: norm,
        },
        raw_mask,
        graph,
        losses,
        predicted,
    })
}
