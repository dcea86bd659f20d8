use std::collections::HashMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::{Branch, CnnConfig, GnnConfig};
use crate::autograd::{RunningStats, Tensor};
use crate::rng::derived;
use crate::{Error, Result};

/// Every trainable tensor of both branches, batchnorm running statistics and
/// Adam moments.
///
/// All stored values are kept representable in f32 (rounded after
/// initialization and after every optimizer step) so a checkpoint written in
/// f32 reloads bit-exactly, while all arithmetic runs in f64.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub cnn: CnnConfig,
    pub gnn: GnnConfig,
    pub seed: u64,
    names: Vec<String>,
    params: Vec<Tensor>,
    index: HashMap<String, usize>,
    stat_names: Vec<String>,
    stats: Vec<RunningStats>,
    stat_index: HashMap<String, usize>,
    pub adam_m: Vec<Vec<f64>>,
    pub adam_v: Vec<Vec<f64>>,
    /// Number of optimizer steps taken.
    pub step: u64,
}

/// Parameter shape list in declaration order: `(name, shape, fan_in)`;
/// fan-in 0 marks zero-initialized biases/betas and `usize::MAX` gammas.
pub(crate) fn layout(cnn: &CnnConfig, gnn: &GnnConfig) -> (Vec<(String, Vec<usize>, usize)>, Vec<(String, usize)>) {
    const ONES: usize = usize::MAX;
    let mut p = Vec::new();
    let mut s = Vec::new();
    let k = cnn.kernel;
    let mut cin = cnn.in_channels;
    for (i, &c) in cnn.widths.iter().enumerate() {
        p.push((format!("cnn.conv{i}.weight"), vec![c, cin, k, k, k], cin * k * k * k));
        p.push((format!("cnn.conv{i}.bias"), vec![c], 0));
        p.push((format!("cnn.bn{i}.gamma"), vec![c], ONES));
        p.push((format!("cnn.bn{i}.beta"), vec![c], 0));
        s.push((format!("cnn.bn{i}"), c));
        cin = c;
    }
    fc_layout("cnn", cnn.flatten_width(), &cnn.fc, &mut p);
    for (i, (&fin, &fout)) in gnn.layer_inputs().iter().zip(&gnn.widths).enumerate() {
        let h = gnn.edge_hidden;
        p.push((format!("gnn.conv{i}.edge1.weight"), vec![h, 3], 3));
        p.push((format!("gnn.conv{i}.edge1.bias"), vec![h], 0));
        p.push((format!("gnn.conv{i}.edge_bn.gamma"), vec![h], ONES));
        p.push((format!("gnn.conv{i}.edge_bn.beta"), vec![h], 0));
        s.push((format!("gnn.conv{i}.edge_bn"), h));
        p.push((format!("gnn.conv{i}.edge2.weight"), vec![fin * fout, h], h));
        p.push((format!("gnn.conv{i}.edge2.bias"), vec![fin * fout], 0));
        p.push((format!("gnn.conv{i}.root"), vec![fout, fin], fin));
    }
    fc_layout("gnn", *gnn.widths.last().expect("validated"), &gnn.fc, &mut p);
    (p, s)
}

fn fc_layout(branch: &str, mut fin: usize, fc: &[usize], p: &mut Vec<(String, Vec<usize>, usize)>) {
    for (i, &fout) in fc.iter().enumerate() {
        p.push((format!("{branch}.fc{i}.weight"), vec![fout, fin], fin));
        p.push((format!("{branch}.fc{i}.bias"), vec![fout], 0));
        fin = fout;
    }
}

/// Closed-form number of trainable scalars for the given configs.
pub fn param_count(cnn: &CnnConfig, gnn: &GnnConfig) -> usize {
    let k3 = cnn.kernel.pow(3);
    let mut n = 0;
    let mut cin = cnn.in_channels;
    for &c in &cnn.widths {
        n += c * cin * k3 + 3 * c;
        cin = c;
    }
    let fc = |mut fin: usize, widths: &[usize]| {
        widths
            .iter()
            .map(|&fout| {
                let c = fout * fin + fout;
                fin = fout;
                c
            })
            .sum::<usize>()
    };
    n += fc(cnn.flatten_width(), &cnn.fc);
    let h = gnn.edge_hidden;
    for (&fin, &fout) in gnn.layer_inputs().iter().zip(&gnn.widths) {
        n += 3 * h + 3 * h + (fin * fout) * (h + 1) + fout * fin;
    }
    n + fc(*gnn.widths.last().expect("validated"), &gnn.fc)
}

/// Uniform `±sqrt(1 / fan_in)` weights, zero biases and betas, unit gammas,
/// fresh running statistics; deterministic in `seed`.
pub fn init_params(cnn: &CnnConfig, gnn: &GnnConfig, seed: u64) -> Result<ModelState> {
    cnn.validate()?;
    gnn.validate()?;
    let (layout, stat_layout) = layout(cnn, gnn);
    let mut rng = derived(seed, "init");
    let mut names = Vec::with_capacity(layout.len());
    let mut params = Vec::with_capacity(layout.len());
    for (name, shape, fan_in) in layout {
        let n: usize = shape.iter().product();
        let data = match fan_in {
            0 => vec![0.0; n],
            usize::MAX => vec![1.0; n],
            f => {
                let bound = (1.0 / f as f64).sqrt();
                (0..n)
                    .map(|_| round_f32(rng.random_range(-bound..bound)))
                    .collect()
            }
        };
        params.push(Tensor::param(data, &shape)?);
        names.push(name);
    }
    let stat_names: Vec<String> = stat_layout.iter().map(|(n, _)| n.clone()).collect();
    let stats = stat_layout.iter().map(|&(_, c)| RunningStats::new(c)).collect();
    ModelState::assemble(cnn.clone(), gnn.clone(), seed, names, params, stat_names, stats)
}

#[inline]
pub(crate) fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

impl ModelState {
    pub(crate) fn assemble(
        cnn: CnnConfig,
        gnn: GnnConfig,
        seed: u64,
        names: Vec<String>,
        params: Vec<Tensor>,
        stat_names: Vec<String>,
        stats: Vec<RunningStats>,
    ) -> Result<Self> {
        let index = names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        let stat_index = stat_names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        let adam_m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let adam_v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Ok(Self {
            cnn,
            gnn,
            seed,
            names,
            params,
            index,
            stat_names,
            stats,
            stat_index,
            adam_m,
            adam_v,
            step: 0,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Panics on an unknown name: parameter names are fixed by the configs.
    pub fn param(&self, name: &str) -> &Tensor {
        match self.index.get(name) {
            Some(&i) => &self.params[i],
            None => panic!("no parameter named {name}"),
        }
    }

    /// Replaces the values of a parameter (shape unchanged).
    pub fn set_param(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let i = self
            .param_index(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))?;
        self.set_param_at(i, data)
    }

    pub fn set_param_at(&mut self, i: usize, data: Vec<f64>) -> Result<()> {
        let shape = self.params[i].shape().to_vec();
        self.params[i] = Tensor::param(data, &shape)?;
        Ok(())
    }

    pub fn stat_names(&self) -> &[String] {
        &self.stat_names
    }

    pub fn stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn stats_mut(&mut self, name: &str) -> &mut RunningStats {
        match self.stat_index.get(name) {
            Some(&i) => &mut self.stats[i],
            None => panic!("no running statistics named {name}"),
        }
    }

    /// Total number of trainable scalars.
    pub fn n_params(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(Tensor::zero_grad);
    }

    /// Parameter indices belonging to `branch`.
    pub fn branch_params(&self, branch: Branch) -> Vec<usize> {
        (0..self.names.len())
            .filter(|&i| self.names[i].starts_with(branch.prefix()))
            .collect()
    }

    /// Rounds running statistics to f32 (parameters and moments are rounded
    /// where they are written).
    pub(crate) fn round_stats(&mut self) {
        for s in &mut self.stats {
            s.mean.iter_mut().chain(s.var.iter_mut()).for_each(|v| *v = round_f32(*v));
        }
    }

    /// SHA-256 over the f32 values of the parameters, statistics and moments
    /// whose name starts with `prefix` (empty prefix: everything).
    pub fn fingerprint(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (i, name) in self.names.iter().enumerate() {
            if name.starts_with(prefix) {
                h.update(name.as_bytes());
                for v in self.params[i].data().iter().chain(&self.adam_m[i]).chain(&self.adam_v[i]) {
                    h.update((*v as f32).to_le_bytes());
                }
            }
        }
        for (name, s) in self.stat_names.iter().zip(&self.stats) {
            if name.starts_with(prefix) {
                h.update(name.as_bytes());
                for v in s.mean.iter().chain(&s.var) {
                    h.update((*v as f32).to_le_bytes());
                }
            }
        }
        if prefix.is_empty() {
            h.update(self.step.to_le_bytes());
        }
        crate::hash::hex(&h.finalize())
    }

    /// Exact equality of all stored values and configs.
    pub fn same_values(&self, other: &ModelState) -> bool {
        self.cnn == other.cnn
            && self.gnn == other.gnn
            && self.seed == other.seed
            && self.step == other.step
            && self.names == other.names
            && self.stat_names == other.stat_names
            && self.stats == other.stats
            && self.adam_m == other.adam_m
            && self.adam_v == other.adam_v
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.data() == b.data())
    }
}
