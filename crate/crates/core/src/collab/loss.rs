use serde::{Deserialize, Serialize};

use crate::autograd::{add, affine, clamp, exp, ln, log_softmax, mul, sum, Tensor};
use crate::model::BranchOutput;
use crate::{Error, Result};

/// Probabilities are clamped to `[P_MIN, 1 - P_MIN]` before taking logs.
pub const P_MIN: f64 = 1e-7;

/// Mean binary cross-entropy of probabilities `x[B]` against labels.
pub fn bce(labels: &[u8], x: &Tensor) -> Result<Tensor> {
    if x.shape() != [labels.len()] || labels.is_empty() {
        return Err(Error::Shape(format!(
            "bce: probabilities {:?} for {} labels",
            x.shape(),
            labels.len()
        )));
    }
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    let not_y: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let b = labels.len();
    let p = clamp(x, P_MIN, 1.0 - P_MIN);
    let pos = mul(&ln(&p)?, &Tensor::new(y, &[b])?)?;
    let neg = mul(&ln(&affine(&p, -1.0, 1.0))?, &Tensor::new(not_y, &[b])?)?;
    Ok(affine(&sum(&add(&pos, &neg)?), -1.0 / b as f64, 0.0))
}

/// Sum of the two branches' binary cross-entropies, averaged over the batch.
pub fn bce_pair_loss(labels: &[u8], x_u: &Tensor, x_v: &Tensor) -> Result<Tensor> {
    add(&bce(labels, x_u)?, &bce(labels, x_v)?)
}

/// Symmetric KL divergence between the softmax distributions of two latent
/// batches `[B, D]`: `KL(p||q) + KL(q||p) = sum (p - q)(log p - log q)`,
/// averaged over the batch. The product form makes it exactly symmetric.
pub fn kl_pair_loss(z_u: &Tensor, z_v: &Tensor) -> Result<Tensor> {
    if z_u.shape() != z_v.shape() || z_u.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "kl: latents {:?} and {:?}",
            z_u.shape(),
            z_v.shape()
        )));
    }
    if z_u.data().iter().chain(z_v.data()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("latent features".into()));
    }
    let lp = log_softmax(z_u, 1)?;
    let lq = log_softmax(z_v, 1)?;
    let dp = add(&exp(&lp), &affine(&exp(&lq), -1.0, 0.0))?;
    let dl = add(&lp, &affine(&lq, -1.0, 0.0))?;
    let b = z_u.shape()[0] as f64;
    Ok(affine(&sum(&mul(&dp, &dl)?), 1.0 / b, 0.0))
}

/// Loss terms of one batch; `total = bce + lambda * kl`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce: f64,
    pub kl: f64,
    pub lambda: f64,
    pub total: f64,
}

/// The collaborative objective with its breakdown.
pub fn total_loss(
    labels: &[u8],
    out_u: &BranchOutput,
    out_v: &BranchOutput,
    lambda: f64,
) -> Result<(Tensor, LossBreakdown)> {
    let b = bce_pair_loss(labels, &out_u.prob, &out_v.prob)?;
    let k = kl_pair_loss(&out_u.latent, &out_v.latent)?;
    let total = add(&b, &affine(&k, lambda, 0.0))?;
    let breakdown = LossBreakdown {
        bce: b.item(),
        kl: k.item(),
        lambda,
        total: total.item(),
    };
    Ok((total, breakdown))
}

/// BCE of a single branch (the ablation arms): no KL term.
pub fn single_loss(labels: &[u8], out: &BranchOutput) -> Result<(Tensor, LossBreakdown)> {
    let b = bce(labels, &out.prob)?;
    let v = b.item();
    Ok((
        b,
        LossBreakdown {
            bce: v,
            kl: 0.0,
            lambda: 0.0,
            total: v,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(v.to_vec(), &[v.len()]).unwrap()
    }

    fn z(v: &[f64]) -> Tensor {
        Tensor::new(v.to_vec(), &[1, v.len()]).unwrap()
    }

    #[test]
    fn bce_examples() {
        let l = bce_pair_loss(&[1], &t(&[0.5]), &t(&[0.5])).unwrap().item();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
        let l = bce_pair_loss(&[0], &t(&[0.5]), &t(&[0.1])).unwrap().item();
        assert!((l - 0.798508).abs() < 1e-6);
        let l = bce_pair_loss(&[1], &t(&[1.0 - 1e-7]), &t(&[1.0 - 1e-7])).unwrap().item();
        assert!((0.0..=3e-7).contains(&l));
        // saturated probabilities are clamped, never infinite
        assert!(bce_pair_loss(&[1], &t(&[0.0]), &t(&[1.0])).unwrap().item().is_finite());
    }

    #[test]
    fn kl_examples() {
        // softmax(0, 0) = (0.5, 0.5); softmax(0, ln 3) = (0.25, 0.75)
        let k = kl_pair_loss(&z(&[0.0, 0.0]), &z(&[0.0, 3f64.ln()])).unwrap().item();
        let (p, q) = ([0.5, 0.5], [0.25, 0.75]);
        let exact: f64 = (0..2).map(|i| (p[i] - q[i]) * (p[i] / q[i] as f64).ln()).sum();
        assert!((k - exact).abs() < 1e-12 && (k - 0.27465).abs() < 1e-5);
        let a = z(&[0.3, -1.2, 2.0]);
        let b = z(&[1.1, 0.4, -0.7]);
        assert_eq!(kl_pair_loss(&a, &b).unwrap().item(), kl_pair_loss(&b, &a).unwrap().item());
        assert_eq!(kl_pair_loss(&a, &a).unwrap().item(), 0.0);
    }

    #[test]
    fn lambda_zero_is_bce_only() {
        let out = |p: f64, l: &[f64]| BranchOutput {
            prob: t(&[p]),
            logit: t(&[0.0]),
            latent: z(l),
        };
        let (u, v) = (out(0.3, &[1.0, 2.0]), out(0.6, &[0.0, -1.0]));
        let (_, b0) = total_loss(&[1], &u, &v, 0.0).unwrap();
        assert_eq!(b0.total, b0.bce);
        let (_, b1) = total_loss(&[1], &u, &v, 1.0).unwrap();
        assert!((b1.total - (b1.bce + b1.kl)).abs() <= 1e-12);
        let (_, same) = total_loss(&[1], &u, &out(0.6, &[1.0, 2.0]), 1.0).unwrap();
        assert_eq!(same.total, same.bce);
    }
}
