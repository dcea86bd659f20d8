use super::Tensor;
use crate::{Error, Result};

/// Compares the backward gradient of `f` at `x` with the five-point central
/// difference (error `O(h^4)`), which leaves room for a step large enough to
/// keep rounding noise small.
///
/// Returns the largest relative error over all coordinates, where the error
/// of one coordinate is `|a - n| / max(|a|, |n|, FLOOR)`: derivatives
/// smaller than the floor are compared on an absolute scale, since a
/// difference quotient cannot resolve them relative to themselves.
/// Magnitude below which derivatives are compared absolutely.
pub const FLOOR: f64 = 1e-6;

pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let shape = x.shape().to_vec();
    let base = x.data().to_vec();
    let leaf = Tensor::param(base.clone(), &shape)?;
    let y = f(&leaf)?;
    if !y.item().is_finite() {
        return Err(Error::NonFinite("f(x) in finite-difference check".into()));
    }
    y.backward()?;
    let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; base.len()]);
    let eval = |v: Vec<f64>| -> Result<f64> {
        let y = f(&Tensor::new(v, &shape)?)?;
        Ok(y.item())
    };
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let at = |d: f64| {
            let mut v = base.clone();
            v[i] += d;
            eval(v)
        };
        let numeric = (at(-2.0 * h)? - 8.0 * at(-h)? + 8.0 * at(h)? - at(2.0 * h)?) / (12.0 * h);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Moves every value closer than `gap` to zero out to `±gap`, keeping its
/// sign (zero goes to `+gap`). Used to keep relu inputs off the kink.
pub fn nudge_off_zero(values: &mut [f64], gap: f64) {
    for v in values.iter_mut() {
        if v.abs() < gap {
            *v = if *v < 0.0 { -gap } else { gap };
        }
    }
}
