use serde::{Deserialize, Serialize};

use crate::model::ModelState;
use crate::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    /// Epochs without a strict validation-loss improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    /// Weight of the KL term.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr_start: 1e-3,
            lr_end: 1e-4,
            weight_decay: 1e-4,
            patience: 20,
            batch_size: 8,
            lambda: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config(
                "epochs, batch_size and patience must be positive".into(),
            ));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end) {
            return Err(Error::Config(format!(
                "learning rates need lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        if !(self.weight_decay >= 0.0 && self.lambda >= 0.0) {
            return Err(Error::Config("weight_decay and lambda must be non-negative".into()));
        }
        Ok(())
    }
}

/// Linear schedule from `lr_start` at epoch 0 to `lr_end` at the last epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} outside 0..{}",
            cfg.epochs
        )));
    }
    if cfg.epochs == 1 {
        return Ok(cfg.lr_start);
    }
    let t = epoch as f64 / (cfg.epochs - 1) as f64;
    Ok(cfg.lr_start + (cfg.lr_end - cfg.lr_start) * t)
}

/// One Adam step with bias correction and decoupled weight decay
/// (`θ ← θ - lr·wd·θ` first) over the parameters `active`, reading their
/// accumulated gradients (missing gradients count as zero). Parameters and
/// moments are stored rounded to f32.
pub fn adam_step(state: &mut ModelState, active: &[usize], lr: f64, weight_decay: f64) -> Result<()> {
    let grads: Vec<Vec<f64>> = active
        .iter()
        .map(|&i| {
            let p = &state.params()[i];
            let g = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", state.names()[i])));
            }
            Ok(g)
        })
        .collect::<Result<_>>()?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let r = |v: f64| v as f32 as f64;
    for (&i, g) in active.iter().zip(grads) {
        let mut theta = state.params()[i].data().to_vec();
        let (m, v) = (&mut state.adam_m[i], &mut state.adam_v[i]);
        for k in 0..theta.len() {
            theta[k] -= lr * weight_decay * theta[k];
            m[k] = r(BETA1 * m[k] + (1.0 - BETA1) * g[k]);
            v[k] = r(BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k]);
            let step = lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
            theta[k] = r(theta[k] - step);
        }
        state.set_param_at(i, theta)?;
    }
    state.round_stats();
    Ok(())
}
