//! Synthetic two-class cohort.
//!
//! Each sample is a randomized superellipsoid blob. Two independent cues carry
//! the label:
//!
//! - geometry: a sinusoidal radial perturbation of the surface (spiky for
//!   label 1, smooth for label 0);
//! - intensity: a bright (label 1) or dim (label 0) core in channel 2,
//!   relative to the rest of the object.
//!
//! A cue is informative for a sample with probability equal to its signal
//! strength; otherwise it is drawn at a class-independent middle level. With
//! both signals at 0 the two classes have identical distributions, and with a
//! signal below 1 neither cue alone separates the classes perfectly.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{VolumeSample, N_CHANNELS};
use crate::grid::{Grid, Mask};
use crate::rng::derived;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_samples: usize,
    /// `[D, H, W]`
    pub dims: [usize; 3],
    /// Fraction of label-1 samples.
    pub class_ratio: f64,
    pub geometry_signal: f64,
    pub intensity_signal: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_samples: 200,
            dims: [32, 32, 32],
            class_ratio: 0.3,
            geometry_signal: 0.7,
            intensity_signal: 0.7,
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("cohort needs at least one sample".into()));
        }
        if self.dims.iter().any(|&d| d < 8) {
            return Err(Error::Config(format!(
                "cohort dims {:?}: every extent must be at least 8",
                self.dims
            )));
        }
        if !(self.class_ratio > 0.0 && self.class_ratio < 1.0) {
            return Err(Error::Config(format!(
                "class_ratio {} outside (0, 1)",
                self.class_ratio
            )));
        }
        for (name, v) in [
            ("geometry_signal", self.geometry_signal),
            ("intensity_signal", self.intensity_signal),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Radial perturbation amplitudes: smooth, neutral, spiky.
const SPIKE_LEVELS: [f64; 3] = [0.0, 0.22, 0.45];
/// Channel-2 core contrast: dim, neutral, bright.
const CORE_LEVELS: [f64; 3] = [-1.2, 0.0, 1.2];

/// Picks the class level with probability `signal`, else the neutral one.
/// Always consumes one draw so the stream does not depend on the label.
fn cue_level<R: Rng + ?Sized>(rng: &mut R, signal: f64, label: u8, levels: [f64; 3]) -> f64 {
    let informative = rng.random::<f64>() < signal;
    match (informative, label) {
        (false, _) => levels[1],
        (true, 0) => levels[0],
        (true, _) => levels[2],
    }
}

/// Draws one sample of the given label. Deterministic in `rng`.
pub fn generate_sample<R: Rng + ?Sized>(
    spec: &CohortSpec,
    label: u8,
    id: &str,
    rng: &mut R,
) -> Result<VolumeSample> {
    spec.validate()?;
    if label > 1 {
        return Err(Error::InvalidArgument(format!("label {label} is not 0 or 1")));
    }
    let [d, h, w] = spec.dims;
    let amp = cue_level(rng, spec.geometry_signal, label, SPIKE_LEVELS);
    let core = cue_level(rng, spec.intensity_signal, label, CORE_LEVELS);

    // shape nuisances shared by both classes
    let center = [d, h, w].map(|e| e as f64 / 2.0 - 0.5 + rng.random_range(-1.0..1.0));
    let semi = [d, h, w].map(|e| e as f64 * rng.random_range(0.2..0.28));
    let exponent = rng.random_range(1.7..2.6);
    let freq = [rng.random_range(3..=4) as f64, rng.random_range(2..=3) as f64];
    let phase = [
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::TAU),
    ];
    let rim = rng.random_range(0.2..0.8);

    let radial = |z: usize, y: usize, x: usize| -> (f64, f64) {
        let u = [
            (x as f64 - center[2]) / semi[2],
            (y as f64 - center[1]) / semi[1],
            (z as f64 - center[0]) / semi[0],
        ];
        let rho = u.iter().map(|c| c.abs().powf(exponent)).sum::<f64>().powf(1.0 / exponent);
        let r = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        let theta = u[1].atan2(u[0]);
        let phi = if r > 0.0 { (u[2] / r).clamp(-1.0, 1.0).acos() } else { 0.0 };
        let bump = (freq[0] * theta + phase[0]).sin() * (freq[1] * phi + phase[1]).sin();
        (rho, 1.0 + amp * bump)
    };

    let mut mask = Mask::filled(spec.dims, false);
    let mut depth = Grid::filled(spec.dims, 0.0f64);
    for i in 0..mask.len() {
        let [z, y, x] = mask.coords(i);
        let (rho, surface) = radial(z, y, x);
        if rho <= surface {
            mask.data[i] = true;
            depth.data[i] = rho / surface;
        }
    }
    let mut mask = mask.largest_component();
    if mask.count() == 0 {
        // degenerate draw: keep the voxel nearest the centre
        let c = center.map(|v| v.round().max(0.0) as usize);
        mask.set(c[0].min(d - 1), c[1].min(h - 1), c[2].min(w - 1), true);
    }

    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut channels: Vec<Grid<f32>> = (0..N_CHANNELS).map(|_| Grid::filled(spec.dims, 0.0)).collect();
    for i in 0..mask.len() {
        let mut e = [0.0; N_CHANNELS];
        for v in e.iter_mut() {
            *v = noise.sample(rng);
        }
        let vals = if mask.data[i] {
            let t = depth.data[i];
            let core_weight = (1.0 - t / 0.6).max(0.0);
            [
                0.6 + 0.3 * e[0],
                0.5 + rim * t + 0.3 * e[1],
                1.0 + core * core_weight + 0.4 * e[2],
                0.8 + 0.2 * t + 0.3 * e[3],
            ]
        } else {
            e.map(|v| 0.2 * v)
        };
        for (ch, v) in channels.iter_mut().zip(vals) {
            ch.data[i] = v as f32;
        }
    }
    Ok(VolumeSample {
        id: id.to_string(),
        channels,
        mask,
        label,
    })
}

/// The whole cohort: `round(n * class_ratio)` label-1 samples (at least one of
/// each class when `n >= 2`) in a seeded order, ids `s0000`, `s0001`, ...
/// Each sample draws from its own stream derived from the seed and its id, so
/// any sample can be regenerated alone.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<VolumeSample>> {
    spec.validate()?;
    let n = spec.n_samples;
    let mut n1 = (n as f64 * spec.class_ratio).round() as usize;
    if n >= 2 {
        n1 = n1.clamp(1, n - 1);
    }
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n1)).collect();
    labels.shuffle(&mut derived(spec.seed, "cohort-labels"));
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let id = format!("s{i:04}");
            generate_sample(spec, label, &id, &mut derived(spec.seed, &id))
        })
        .collect()
}
