//! Synthetic cohorts, volume files, dataset splits, rotations and DICE.

mod io;
mod rotate;
mod split;
mod synth;

use serde::{Deserialize, Serialize};

use crate::grid::{Grid, Mask};
use crate::{Error, Result};

pub use io::{
    load_manifest, load_volume, read_volume_file, save_manifest, save_volume, write_volume_file, DTYPE,
    ManifestEntry,
    VolumeHeader,
};
pub use rotate::{augment_rotate, rotations, Rotation};
pub use split::{balance_minority, cv_folds, split_dataset, Labeled};
pub use synth::{generate_cohort, generate_sample, CohortSpec};

pub const N_CHANNELS: usize = 4;

/// A four-channel volume with its object mask and class label.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSample {
    pub id: String,
    /// Four intensity grids sharing the mask's dims.
    pub channels: Vec<Grid<f32>>,
    pub mask: Mask,
    /// 1 = minority (mutant-analogue) class, 0 = wild-type analogue.
    pub label: u8,
}

impl VolumeSample {
    pub fn dims(&self) -> [usize; 3] {
        self.mask.dims
    }

    /// Rotated copies made for class balancing carry a `_rot<k>` suffix.
    pub fn is_augmented(&self) -> bool {
        is_augmented_id(&self.id)
    }

    /// Checks the structural invariants: four channels of the mask's dims,
    /// a non-empty single-component mask, finite intensities, label in {0, 1}.
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != N_CHANNELS {
            return Err(Error::Shape(format!(
                "sample {} has {} channels, expected {N_CHANNELS}",
                self.id,
                self.channels.len()
            )));
        }
        if let Some(c) = self.channels.iter().find(|c| c.dims != self.mask.dims) {
            return Err(Error::Shape(format!(
                "sample {}: channel dims {:?} differ from mask dims {:?}",
                self.id, c.dims, self.mask.dims
            )));
        }
        if self.label > 1 {
            return Err(Error::InvalidArgument(format!(
                "sample {}: label {} is not 0 or 1",
                self.id, self.label
            )));
        }
        if self.channels.iter().any(|c| c.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("intensities of sample {}", self.id)));
        }
        let comps = self.mask.components();
        if comps != 1 {
            return Err(Error::InvalidArgument(format!(
                "sample {}: mask has {comps} components, expected exactly 1",
                self.id
            )));
        }
        Ok(())
    }
}

impl Labeled for VolumeSample {
    fn label(&self) -> u8 {
        self.label
    }
}

pub(crate) fn is_augmented_id(id: &str) -> bool {
    id.rsplit_once("_rot")
        .is_some_and(|(_, k)| !k.is_empty() && k.bytes().all(|b| b.is_ascii_digit()))
}

/// `2|A∩B| / (|A| + |B|)`, defined as 1 when both masks are empty.
pub fn dice_score(a: &Mask, b: &Mask) -> Result<f64> {
    if a.dims != b.dims {
        return Err(Error::Shape(format!(
            "dice of masks with dims {:?} and {:?}",
            a.dims, b.dims
        )));
    }
    let (na, nb) = (a.count(), b.count());
    if na + nb == 0 {
        return Ok(1.0);
    }
    let both = a.data.iter().zip(&b.data).filter(|(x, y)| **x && **y).count();
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Id and label only, as listed in a cohort manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRef {
    pub id: String,
    pub label: u8,
}

impl Labeled for SampleRef {
    fn label(&self) -> u8 {
        self.label
    }
}
