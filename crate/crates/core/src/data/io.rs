//! Volume files: a JSON header `<id>.json` next to a raw payload `<id>.bin`
//! holding little-endian f32 channels (channel-major, then z, y, x) followed
//! by one 0/1 byte per voxel of mask.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SampleRef, VolumeSample, N_CHANNELS};
use crate::grid::{Grid, Mask};
use crate::{Error, Result};

pub const DTYPE: &str = "f32-le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub id: String,
    pub dims: [usize; 3],
    pub channels: usize,
    pub dtype: String,
    /// Absent for unlabeled volumes such as exported attribution maps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    /// Whether mask bytes follow the channels.
    #[serde(default = "default_true")]
    pub mask: bool,
}

fn default_true() -> bool {
    true
}

fn payload_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("bin")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a header and payload for arbitrary channel grids. The payload goes
/// to the header path with extension `.bin`.
pub fn write_volume_file(
    header_path: &Path,
    header: &VolumeHeader,
    channels: &[Grid<f32>],
    mask: Option<&Mask>,
) -> Result<()> {
    if channels.len() != header.channels || header.mask != mask.is_some() {
        return Err(Error::InvalidArgument(format!(
            "header for {} does not describe the given grids",
            header.id
        )));
    }
    let voxels: usize = header.dims.iter().product();
    let mut bytes = Vec::with_capacity(channels.len() * voxels * 4 + voxels);
    for ch in channels {
        if ch.dims != header.dims {
            return Err(Error::Shape(format!(
                "channel dims {:?} differ from header dims {:?}",
                ch.dims, header.dims
            )));
        }
        for v in &ch.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(m) = mask {
        bytes.extend(m.data.iter().map(|&b| u8::from(b)));
    }
    let json = serde_json::to_vec_pretty(header).expect("header serializes");
    write_file(header_path, &json)?;
    write_file(&payload_path(header_path), &bytes)
}

/// Saves to `<dir>/<id>.json` + `<dir>/<id>.bin` and returns the header path.
pub fn save_volume(sample: &VolumeSample, dir: &Path) -> Result<PathBuf> {
    let header = VolumeHeader {
        id: sample.id.clone(),
        dims: sample.dims(),
        channels: sample.channels.len(),
        dtype: DTYPE.into(),
        label: Some(sample.label),
        mask: true,
    };
    let path = dir.join(format!("{}.json", sample.id));
    write_volume_file(&path, &header, &sample.channels, Some(&sample.mask))?;
    Ok(path)
}

/// Reads the header and raw payload of any volume file.
pub fn read_volume_file(header_path: &Path) -> Result<(VolumeHeader, Vec<Grid<f32>>, Option<Mask>)> {
    let text = std::fs::read(header_path).map_err(|e| Error::io(header_path, e))?;
    let header: VolumeHeader = serde_json::from_slice(&text).map_err(|e| Error::Header {
        path: header_path.into(),
        reason: e.to_string(),
    })?;
    let violation = |reason: String| Error::Format {
        path: header_path.into(),
        reason,
    };
    if header.dtype != DTYPE {
        return Err(violation(format!("dtype {:?}, expected {DTYPE:?}", header.dtype)));
    }
    if header.dims.contains(&0) {
        return Err(violation(format!("empty dims {:?}", header.dims)));
    }
    if header.channels == 0 {
        return Err(violation("zero channels".into()));
    }
    let payload = payload_path(header_path);
    let bytes = std::fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    let voxels: usize = header.dims.iter().product();
    let expected = header.channels * voxels * 4 + if header.mask { voxels } else { 0 };
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: payload,
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::PayloadMismatch {
            path: payload,
            expected,
            found: bytes.len(),
        });
    }
    let mut channels = Vec::with_capacity(header.channels);
    for c in 0..header.channels {
        let data = bytes[c * voxels * 4..(c + 1) * voxels * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
            .collect();
        channels.push(Grid::from_vec(header.dims, data)?);
    }
    let mask = if header.mask {
        let raw = &bytes[header.channels * voxels * 4..];
        if let Some(&b) = raw.iter().find(|&&b| b > 1) {
            return Err(Error::Format {
                path: payload,
                reason: format!("mask byte {b} is not 0 or 1"),
            });
        }
        Some(Grid::from_vec(header.dims, raw.iter().map(|&b| b == 1).collect())?)
    } else {
        None
    };
    Ok((header, channels, mask))
}

/// Loads a sample saved by [`save_volume`]; `path` is the header file.
pub fn load_volume(path: &Path) -> Result<VolumeSample> {
    let (header, channels, mask) = read_volume_file(path)?;
    let violation = |reason: String| Error::Format {
        path: path.into(),
        reason,
    };
    if header.channels != N_CHANNELS {
        return Err(violation(format!(
            "{} channels, expected {N_CHANNELS}",
            header.channels
        )));
    }
    let label = match header.label {
        Some(l @ (0 | 1)) => l,
        Some(l) => return Err(violation(format!("label {l} is not 0 or 1"))),
        None => return Err(violation("missing label".into())),
    };
    let mask = mask.ok_or_else(|| violation("volume has no mask".into()))?;
    Ok(VolumeSample {
        id: header.id,
        channels,
        mask,
        label,
    })
}

pub type ManifestEntry = SampleRef;

pub fn save_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let json = serde_json::to_vec_pretty(entries).expect("manifest serializes");
    write_file(path, &json)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&text).map_err(|e| Error::Header {
        path: path.into(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sample, CohortSpec};
    use crate::rng::seeded;

    fn sample() -> VolumeSample {
        let spec = CohortSpec {
            dims: [8, 9, 10],
            ..CohortSpec::default()
        };
        generate_sample(&spec, 1, "s0001", &mut seeded(1)).unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        let p = save_volume(&s, dir.path()).unwrap();
        assert_eq!(load_volume(&p).unwrap(), s);
    }

    #[test]
    fn truncated_and_oversized_payloads() {
        let dir = tempfile::tempdir().unwrap();
        let p = save_volume(&sample(), dir.path()).unwrap();
        let bin = p.with_extension("bin");
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes.push(0);
        std::fs::write(&bin, &bytes).unwrap();
        assert!(matches!(load_volume(&p), Err(Error::PayloadMismatch { .. })));
        bytes.truncate(100);
        std::fs::write(&bin, &bytes).unwrap();
        assert!(matches!(load_volume(&p), Err(Error::Truncated { .. })));
    }

    #[test]
    fn header_violations() {
        let dir = tempfile::tempdir().unwrap();
        let p = save_volume(&sample(), dir.path()).unwrap();
        let mut h: serde_json::Value = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
        h["channels"] = 5.into();
        std::fs::write(&p, serde_json::to_vec(&h).unwrap()).unwrap();
        // 5 channels promise more bytes than present
        assert!(matches!(load_volume(&p), Err(Error::Truncated { .. })));
        h["channels"] = 1.into();
        std::fs::write(&p, serde_json::to_vec(&h).unwrap()).unwrap();
        assert!(matches!(load_volume(&p), Err(Error::PayloadMismatch { .. })));
        std::fs::write(&p, b"{not json").unwrap();
        assert!(matches!(load_volume(&p), Err(Error::Header { .. })));
    }

    #[test]
    fn five_channel_file_is_a_format_violation() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        let mut chans = s.channels.clone();
        chans.push(chans[0].clone());
        let header = VolumeHeader {
            id: "five".into(),
            dims: s.dims(),
            channels: 5,
            dtype: DTYPE.into(),
            label: Some(0),
            mask: true,
        };
        let p = dir.path().join("five.json");
        write_volume_file(&p, &header, &chans, Some(&s.mask)).unwrap();
        assert!(matches!(load_volume(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cohort.json");
        let entries = vec![
            ManifestEntry { id: "a".into(), label: 0 },
            ManifestEntry { id: "b".into(), label: 1 },
        ];
        save_manifest(&p, &entries).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), entries);
    }
}
