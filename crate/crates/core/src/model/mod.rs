//! The two branches: a 3D CNN over the masked voxel crop and a point-cloud
//! GNN over the surface samples. Both end in three fully connected layers
//! producing a latent vector (second FC output) and a probability.

mod checkpoint;
mod cnn;
mod gnn;
mod state;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::{Error, Result};

pub use checkpoint::{load_state, save_state, CHECKPOINT_VERSION};
pub use cnn::{cnn_forward, CnnOutput};
pub use gnn::{fps_start, gnn_forward, layer_graph, pointconv_layer, GnnOutput, PointConvOutput};
pub use state::{init_params, param_count, ModelState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub in_channels: usize,
    /// Output channels of the conv blocks.
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    /// Widths of the three FC layers; the second is the latent.
    pub fc: Vec<usize>,
    pub dropout: f64,
    /// Edge length of the cubic input crop.
    pub crop: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            in_channels: 4,
            widths: vec![8, 16, 32, 64],
            kernel: 3,
            pool: 2,
            fc: vec![256, 128, 1],
            dropout: 0.3,
            crop: 32,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        check_fc("cnn", &self.fc)?;
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(format!("cnn widths {:?} invalid", self.widths)));
        }
        if self.in_channels == 0 || self.kernel % 2 == 0 || self.pool == 0 || self.crop == 0 {
            return Err(Error::Config(
                "cnn needs input channels, an odd kernel, a pool window and a crop size".into(),
            ));
        }
        check_dropout(self.dropout)
    }

    /// Spatial extent entering each conv block, and after the last one.
    /// Pooling is skipped once the extent is smaller than the window.
    pub fn extents(&self) -> Vec<usize> {
        let mut e = vec![self.crop];
        for _ in &self.widths {
            let last = *e.last().expect("non-empty");
            e.push(if last >= self.pool { last / self.pool } else { last });
        }
        e
    }

    pub fn flatten_width(&self) -> usize {
        let e = *self.extents().last().expect("non-empty");
        self.widths.last().expect("validated") * e * e * e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnConfig {
    /// Graph radius per point-conv layer, strictly increasing.
    pub radii: Vec<f64>,
    /// FPS keep ratio per layer.
    pub ratio: f64,
    /// Output widths of the point-conv layers (input width is 3).
    pub widths: Vec<usize>,
    pub edge_hidden: usize,
    /// Neighbour cap per node when building each radius graph.
    pub max_degree: usize,
    pub fc: Vec<usize>,
    pub dropout: f64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            radii: vec![0.25, 0.5, 0.75, 1.0],
            ratio: 0.5,
            widths: vec![16, 32, 64, 128],
            edge_hidden: 32,
            max_degree: 32,
            fc: vec![256, 128, 1],
            dropout: 0.3,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        check_fc("gnn", &self.fc)?;
        if self.widths.is_empty() || self.widths.len() != self.radii.len() || self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "gnn needs one radius per layer: widths {:?}, radii {:?}",
                self.widths, self.radii
            )));
        }
        if self.radii[0] <= 0.0 || self.radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "gnn radii {:?} must be positive and strictly increasing",
                self.radii
            )));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) || self.edge_hidden == 0 || self.max_degree == 0 {
            return Err(Error::Config(
                "gnn needs a ratio in (0, 1], an edge hidden width and a degree cap".into(),
            ));
        }
        check_dropout(self.dropout)
    }

    /// Fewest input points for which every pooling step leaves one point.
    pub fn min_points(&self) -> usize {
        1 << self.widths.len()
    }

    /// Feature width entering each layer.
    pub fn layer_inputs(&self) -> Vec<usize> {
        std::iter::once(3).chain(self.widths.iter().copied()).take(self.widths.len()).collect()
    }
}

fn check_fc(branch: &str, fc: &[usize]) -> Result<()> {
    if fc.len() != 3 || fc[2] != 1 || fc.contains(&0) {
        return Err(Error::Config(format!(
            "{branch} FC widths {fc:?}: need three layers ending in 1"
        )));
    }
    Ok(())
}

fn check_dropout(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout {p} outside [0, 1)")));
    }
    Ok(())
}

/// Result of one branch over a batch.
#[derive(Debug, Clone)]
pub struct BranchOutput {
    /// `[B]`, sigmoid of the logit.
    pub prob: Tensor,
    /// `[B]`
    pub logit: Tensor,
    /// `[B, latent]`, the post-relu second FC output.
    pub latent: Tensor,
}

/// Which branch a parameter or loss term belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Cnn,
    Gnn,
}

impl Branch {
    pub fn prefix(self) -> &'static str {
        match self {
            Branch::Cnn => "cnn.",
            Branch::Gnn => "gnn.",
        }
    }
}
