//! Checkpoints: a JSON manifest naming every stored array in payload order,
//! next to a raw little-endian f32 payload (`<manifest>.bin`).

use std::path::Path;

use serde::{Deserialize, Serialize};


use super::state::layout;
use super::{CnnConfig, GnnConfig, ModelState};
use crate::autograd::{RunningStats, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EntryKind {
    Param,
    AdamM,
    AdamV,
    RunningMean,
    RunningVar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    kind: EntryKind,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    seed: u64,
    step: u64,
    cnn: CnnConfig,
    gnn: GnnConfig,
    entries: Vec<Entry>,
    payload_bytes: usize,
    sha256: String,
}

pub fn save_state(state: &ModelState, path: &Path) -> Result<()> {
    let mut entries = Vec::new();
    let mut values: Vec<f32> = Vec::new();
    let mut push = |name: &str, kind: EntryKind, shape: Vec<usize>, data: &[f64]| {
        entries.push(Entry {
            name: name.to_string(),
            kind,
            shape,
        });
        values.extend(data.iter().map(|&v| v as f32));
    };
    for (i, (name, p)) in state.names().iter().zip(state.params()).enumerate() {
        push(name, EntryKind::Param, p.shape().to_vec(), p.data());
        push(name, EntryKind::AdamM, p.shape().to_vec(), &state.adam_m[i]);
        push(name, EntryKind::AdamV, p.shape().to_vec(), &state.adam_v[i]);
    }
    for (name, s) in state.stat_names().iter().zip(state.stats()) {
        push(name, EntryKind::RunningMean, vec![s.mean.len()], &s.mean);
        push(name, EntryKind::RunningVar, vec![s.var.len()], &s.var);
    }
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        seed: state.seed,
        step: state.step,
        cnn: state.cnn.clone(),
        gnn: state.gnn.clone(),
        entries,
        payload_bytes: bytes.len(),
        sha256: crate::hash::sha256_hex(&bytes),
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let bin = path.with_extension("bin");
    std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))
}

pub fn load_state(path: &Path) -> Result<ModelState> {
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_slice(&text).map_err(|e| Error::Header {
        path: path.into(),
        reason: e.to_string(),
    })?;
    if m.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            expected: CHECKPOINT_VERSION,
            found: m.version,
        });
    }
    let bin = path.with_extension("bin");
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() < m.payload_bytes {
        return Err(Error::Truncated {
            path: bin,
            expected: m.payload_bytes,
            found: bytes.len(),
        });
    }
    if bytes.len() != m.payload_bytes {
        return Err(Error::PayloadMismatch {
            path: bin,
            expected: m.payload_bytes,
            found: bytes.len(),
        });
    }
    if crate::hash::sha256_hex(&bytes) != m.sha256 {
        return Err(Error::Corrupt { path: bin });
    }
    let violation = |reason: String| Error::Format {
        path: path.into(),
        reason,
    };
    m.cnn.validate()?;
    m.gnn.validate()?;
    let (params_layout, stats_layout) = layout(&m.cnn, &m.gnn);
    let mut expected = Vec::new();
    for (name, shape, _) in &params_layout {
        for kind in [EntryKind::Param, EntryKind::AdamM, EntryKind::AdamV] {
            expected.push((name.clone(), kind, shape.clone()));
        }
    }
    for (name, c) in &stats_layout {
        for kind in [EntryKind::RunningMean, EntryKind::RunningVar] {
            expected.push((name.clone(), kind, vec![*c]));
        }
    }
    if expected.len() != m.entries.len()
        || expected
            .iter()
            .zip(&m.entries)
            .any(|((n, k, s), e)| *n != e.name || *k != e.kind || *s != e.shape)
    {
        return Err(violation("entries do not match the configured architecture".into()));
    }
    let total: usize = m.entries.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if total * 4 != bytes.len() {
        return Err(violation(format!(
            "entries hold {total} values but payload has {} bytes",
            bytes.len()
        )));
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")) as f64);
    let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
    let mut names = Vec::new();
    let mut params = Vec::new();
    let mut adam_m = Vec::new();
    let mut adam_v = Vec::new();
    for (name, shape, _) in &params_layout {
        let n = shape.iter().product();
        params.push(Tensor::param(take(n), shape)?);
        adam_m.push(take(n));
        adam_v.push(take(n));
        names.push(name.clone());
    }
    let mut stat_names = Vec::new();
    let mut stats = Vec::new();
    for (name, c) in &stats_layout {
        stats.push(RunningStats {
            mean: take(*c),
            var: take(*c),
        });
        stat_names.push(name.clone());
    }
    let mut state = ModelState::assemble(m.cnn, m.gnn, m.seed, names, params, stat_names, stats)?;
    state.adam_m = adam_m;
    state.adam_v = adam_v;
    state.step = m.step;
    Ok(state)
}
