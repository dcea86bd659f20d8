use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{single_loss, total_loss, LossBreakdown};
use super::optim::{adam_step, lr_at, TrainConfig};
use super::{batch_crops, Arm};
use crate::autograd::{Mode, Tensor};
use crate::model::{cnn_forward, gnn_forward, Branch, ModelState};
use crate::prep::Prepared;
use crate::rng::{derived, Rng};
use crate::{Error, Result};

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_bce: f64,
    pub train_kl: f64,
    pub val_loss: f64,
    /// Fraction of validation samples classified correctly.
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// The state at the epoch with the lowest validation loss.
    pub state: ModelState,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Loss of one batch under the arm's objective.
pub fn batch_loss(
    state: &mut ModelState,
    batch: &[Prepared],
    arm: Arm,
    lambda: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor, LossBreakdown, Vec<f64>)> {
    let labels: Vec<u8> = batch.iter().map(|p| p.label).collect();
    let cnn = if arm != Arm::GnnOnly {
        Some(cnn_forward(state, &batch_crops(batch)?, mode, rng)?.out)
    } else {
        None
    };
    let gnn = if arm != Arm::CnnOnly {
        let clouds: Vec<_> = batch.iter().map(|p| p.surface.cloud.clone()).collect();
        Some(gnn_forward(state, &clouds, mode, rng, None)?.out)
    } else {
        None
    };
    let (loss, parts, probs) = match (&cnn, &gnn) {
        (Some(u), Some(v)) => {
            let (l, b) = total_loss(&labels, u, v, lambda)?;
            let p = u.prob.data().iter().zip(v.prob.data()).map(|(a, b)| 0.5 * (a + b)).collect();
            (l, b, p)
        }
        (Some(o), None) | (None, Some(o)) => {
            let (l, b) = single_loss(&labels, o)?;
            (l, b, o.prob.data().to_vec())
        }
        (None, None) => unreachable!("every arm trains a branch"),
    };
    if !parts.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss on batch starting at {}",
            batch[0].id
        )));
    }
    Ok((loss, parts, probs))
}

/// Validation loss (sample-weighted mean) and accuracy in eval mode.
fn validate(state: &mut ModelState, val: &[Prepared], arm: Arm, cfg: &TrainConfig) -> Result<(f64, f64)> {
    let mut rng = derived(cfg.seed, "val");
    let (mut loss, mut correct) = (0.0, 0);
    for chunk in val.chunks(cfg.batch_size) {
        let (_, parts, probs) = batch_loss(state, chunk, arm, cfg.lambda, Mode::Eval, &mut rng)?;
        loss += parts.total * chunk.len() as f64;
        correct += chunk
            .iter()
            .zip(probs)
            .filter(|(p, q)| u8::from(*q >= 0.5) == p.label)
            .count();
    }
    let n = val.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains `state` on `fit`, early-stopping on the validation loss over
/// `val`. Only the parameters of the arm's branches are updated.
pub fn train(
    mut state: ModelState,
    fit: &[Prepared],
    val: &[Prepared],
    cfg: &TrainConfig,
    arm: Arm,
) -> Result<TrainResult> {
    cfg.validate()?;
    if fit.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs non-empty fit and validation sets".into(),
        ));
    }
    let active: Vec<usize> = arm
        .branches()
        .iter()
        .flat_map(|&b: &Branch| state.branch_params(b))
        .collect();
    let mut shuffle_rng = derived(cfg.seed, "shuffle");
    let mut noise_rng = derived(cfg.seed, "dropout");
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelState)> = None;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg)?;
        order.shuffle(&mut shuffle_rng);
        let (mut bce, mut kl) = (0.0, 0.0);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Prepared> = idx.iter().map(|&i| fit[i].clone()).collect();
            state.zero_grad();
            let (loss, parts, _) = batch_loss(&mut state, &batch, arm, cfg.lambda, Mode::Train, &mut noise_rng)?;
            loss.backward()?;
            adam_step(&mut state, &active, lr, cfg.weight_decay)?;
            bce += parts.bce * batch.len() as f64;
            kl += parts.kl * batch.len() as f64;
        }
        let (val_loss, val_acc) = validate(&mut state, val, arm, cfg)?;
        history.push(EpochRecord {
            epoch,
            lr,
            train_bce: bce / fit.len() as f64,
            train_kl: kl / fit.len() as f64,
            val_loss,
            val_acc,
        });
        match &best {
            Some((b, _, _)) if val_loss >= *b => {}
            _ => best = Some((val_loss, epoch, state.clone())),
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let (_, best_epoch, state) = best.expect("at least one epoch ran");
    Ok(TrainResult {
        state,
        history,
        best_epoch,
    })
}

/// Writes the history as JSON lines.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in history {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
