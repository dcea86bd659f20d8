use rand::Rng;

use super::{BranchOutput, ModelState};
use crate::autograd::{
    batchnorm, conv3d, dropout, linear, maxpool3d, relu, reshape, sigmoid, Mode, Tensor,
};
use crate::{Error, Result};

/// CNN branch output plus the post-relu, pre-pool activation of every conv
/// block (what Grad-CAM weighs).
#[derive(Debug, Clone)]
pub struct CnnOutput {
    pub out: BranchOutput,
    pub activations: Vec<Tensor>,
}

/// Batchnorm that falls back to running statistics when a train-mode batch
/// has fewer than two values per channel.
pub(crate) fn norm(state: &mut ModelState, x: &Tensor, prefix: &str, stats: &str, mode: Mode) -> Result<Tensor> {
    let s = x.shape();
    let count = s[0] * s[2..].iter().product::<usize>();
    let mode = if count < 2 { Mode::Eval } else { mode };
    let gamma = state.param(&format!("{prefix}.gamma")).clone();
    let beta = state.param(&format!("{prefix}.beta")).clone();
    batchnorm(x, &gamma, &beta, state.stats_mut(stats), mode)
}

/// FC(relu, dropout) -> FC(relu) = latent -> FC -> sigmoid.
pub(crate) fn fc_head<R: Rng + ?Sized>(
    state: &ModelState,
    branch: &str,
    x: &Tensor,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<BranchOutput> {
    let fc = |i: usize, x: &Tensor| {
        linear(
            x,
            state.param(&format!("{branch}.fc{i}.weight")),
            state.param(&format!("{branch}.fc{i}.bias")),
        )
    };
    let h = dropout(&relu(&fc(0, x)?), p, mode, rng)?;
    let latent = relu(&fc(1, &h)?);
    let logit = fc(2, &latent)?;
    let b = logit.shape()[0];
    let logit = reshape(&logit, &[b])?;
    Ok(BranchOutput {
        prob: sigmoid(&logit),
        logit,
        latent,
    })
}

/// `input` is `[B, C, S, S, S]`: the masked, standardized crops.
pub fn cnn_forward<R: Rng + ?Sized>(
    state: &mut ModelState,
    input: &Tensor,
    mode: Mode,
    rng: &mut R,
) -> Result<CnnOutput> {
    let cfg = state.cnn.clone();
    let s = input.shape();
    let c = cfg.crop;
    if s.len() != 5 || s[1] != cfg.in_channels || s[2..] != [c, c, c] || s[0] == 0 {
        return Err(Error::Shape(format!(
            "cnn expects [B, {}, {c}, {c}, {c}], got {s:?}",
            cfg.in_channels
        )));
    }
    if input.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cnn input volume".into()));
    }
    let pad = cfg.kernel / 2;
    let mut x = input.clone();
    let mut activations = Vec::with_capacity(cfg.widths.len());
    for i in 0..cfg.widths.len() {
        let conv = conv3d(
            &x,
            state.param(&format!("cnn.conv{i}.weight")),
            state.param(&format!("cnn.conv{i}.bias")),
            1,
            pad,
        )?;
        let a = relu(&norm(state, &conv, &format!("cnn.bn{i}"), &format!("cnn.bn{i}"), mode)?);
        activations.push(a.clone());
        x = if a.shape()[2] >= cfg.pool {
            maxpool3d(&a, cfg.pool, cfg.pool)?.0
        } else {
            a
        };
    }
    let b = s[0];
    let flat = reshape(&x, &[b, cfg.flatten_width()])?;
    let out = fc_head(state, "cnn", &flat, cfg.dropout, mode, rng)?;
    Ok(CnnOutput { out, activations })
}
