use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Mode, Op, Tensor};
use crate::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel running mean and (unbiased) variance used in eval mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// Batch normalization over `[B, C, ...]`.
///
/// Train mode normalizes with the batch statistics of each channel and folds
/// them into `stats` with momentum 0.1; eval mode uses `stats` as is.
pub fn batchnorm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut RunningStats,
    mode: Mode,
) -> Result<Tensor> {
    let s = input.shape();
    if s.len() < 2 {
        return Err(Error::Shape(format!("batchnorm expects [B, C, ...], got {s:?}")));
    }
    let (b, c) = (s[0], s[1]);
    let spatial: usize = s[2..].iter().product();
    if gamma.shape() != [c] || beta.shape() != [c] || stats.mean.len() != c || stats.var.len() != c
    {
        return Err(Error::Shape(format!(
            "batchnorm affine/stats sized for {:?} channels, input has {c}",
            gamma.shape()
        )));
    }
    let batch_stats = mode == Mode::Train;
    let count = b * spatial;
    if batch_stats && count < 2 {
        return Err(Error::InvalidArgument(format!(
            "batchnorm in train mode needs at least 2 values per channel, got {count}"
        )));
    }
    let x = input.data();
    let at = |n: usize, ch: usize, i: usize| (n * c + ch) * spatial + i;
    let mut inv_std = vec![0.0; c];
    let mut means = vec![0.0; c];
    for ch in 0..c {
        let (mu, var) = if batch_stats {
            let mut sum = 0.0;
            for n in 0..b {
                for i in 0..spatial {
                    sum += x[at(n, ch, i)];
                }
            }
            let mu = sum / count as f64;
            let mut sq = 0.0;
            for n in 0..b {
                for i in 0..spatial {
                    let d = x[at(n, ch, i)] - mu;
                    sq += d * d;
                }
            }
            let var = sq / count as f64;
            let unbiased = sq / (count - 1) as f64;
            stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * mu;
            stats.var[ch] = (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * unbiased;
            (mu, var)
        } else {
            (stats.mean[ch], stats.var[ch])
        };
        means[ch] = mu;
        inv_std[ch] = 1.0 / (var + BN_EPS).sqrt();
    }
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for n in 0..b {
        for ch in 0..c {
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            for i in 0..spatial {
                let k = at(n, ch, i);
                let xh = (x[k] - means[ch]) * inv_std[ch];
                xhat[k] = xh;
                out[k] = g * xh + bt;
            }
        }
    }
    Ok(Tensor::from_op(
        out,
        s.to_vec(),
        Op::BatchNorm {
            input: input.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            xhat,
            inv_std,
            batch_stats,
        },
    ))
}

pub(super) fn batchnorm_backward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    xhat: &[f64],
    inv_std: &[f64],
    batch_stats: bool,
    g: &[f64],
) -> Vec<(Tensor, Vec<f64>)> {
    let s = input.shape();
    let (b, c) = (s[0], s[1]);
    let spatial: usize = s[2..].iter().product();
    let count = (b * spatial) as f64;
    let at = |n: usize, ch: usize, i: usize| (n * c + ch) * spatial + i;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for n in 0..b {
        for ch in 0..c {
            for i in 0..spatial {
                let k = at(n, ch, i);
                dgamma[ch] += g[k] * xhat[k];
                dbeta[ch] += g[k];
            }
        }
    }
    let mut dx = vec![0.0; g.len()];
    for n in 0..b {
        for ch in 0..c {
            let scale = gamma.data()[ch] * inv_std[ch];
            for i in 0..spatial {
                let k = at(n, ch, i);
                dx[k] = if batch_stats {
                    scale / count * (count * g[k] - dbeta[ch] - xhat[k] * dgamma[ch])
                } else {
                    scale * g[k]
                };
            }
        }
    }
    vec![
        (input.clone(), dx),
        (gamma.clone(), dgamma),
        (beta.clone(), dbeta),
    ]
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `p` and survivors are scaled by `1/(1-p)`. Eval mode is the identity.
pub fn dropout<R: Rng + ?Sized>(input: &Tensor, p: f64, mode: Mode, rng: &mut R) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "dropout probability {p} outside [0, 1)"
        )));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(input.clone());
    }
    let keep = 1.0 / (1.0 - p);
    let scale: Vec<f64> = (0..input.numel())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let out = input.data().iter().zip(&scale).map(|(x, s)| x * s).collect();
    Ok(Tensor::from_op(
        out,
        input.shape().to_vec(),
        Op::Dropout {
            input: input.clone(),
            scale,
        },
    ))
}
