use serde::{Deserialize, Serialize, Serializer};

use super::{batch_crops, Fusion};
use crate::autograd::Mode;
use crate::model::{cnn_forward, gnn_forward, ModelState};
use crate::prep::Prepared;
use crate::rng::seeded;
use crate::{Error, Result};

fn one_decimal<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((v * 10.0).round() / 10.0)
}

/// Confusion counts and percent metrics at threshold 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(serialize_with = "one_decimal")]
    pub accuracy: f64,
    #[serde(serialize_with = "one_decimal")]
    pub sensitivity: f64,
    #[serde(serialize_with = "one_decimal")]
    pub specificity: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `(id, fused probability, label)` per sample.
    pub probabilities: Vec<(String, f64, u8)>,
}

fn percent(num: usize, den: usize) -> f64 {
    // an empty class has no rate; report 0 rather than NaN
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_confusion(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        Self {
            accuracy: percent(tp + tn, tp + fp + tn + fn_),
            sensitivity: percent(tp, tp + fn_),
            specificity: percent(tn, tn + fp),
            tp,
            fp,
            tn,
            fn_,
            probabilities: Vec::new(),
        }
    }

    /// Scores `(id, probability, label)` triples: predicted 1 iff p >= 0.5.
    pub fn from_predictions(probabilities: Vec<(String, f64, u8)>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::InvalidArgument("evaluation over an empty dataset".into()));
        }
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (_, p, y) in &probabilities {
            match (*p >= 0.5, *y == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Ok(Self {
            probabilities,
            ..Self::from_confusion(tp, fp, tn, fn_)
        })
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Probability per sample under the given fusion rule, in eval mode. Only
/// the branches the rule needs are run.
pub fn predict(state: &mut ModelState, data: &[Prepared], fusion: Fusion, batch: usize) -> Result<Vec<f64>> {
    let mut probs = Vec::with_capacity(data.len());
    let mut rng = seeded(0);
    for chunk in data.chunks(batch.max(1)) {
        let cnn = if fusion != Fusion::Gnn {
            let x = batch_crops(chunk)?;
            Some(cnn_forward(state, &x, Mode::Eval, &mut rng)?.out.prob)
        } else {
            None
        };
        let gnn = if fusion != Fusion::Cnn {
            let clouds: Vec<_> = chunk.iter().map(|p| p.surface.cloud.clone()).collect();
            Some(gnn_forward(state, &clouds, Mode::Eval, &mut rng, None)?.out.prob)
        } else {
            None
        };
        for k in 0..chunk.len() {
            probs.push(match (&cnn, &gnn) {
                (Some(u), Some(v)) => 0.5 * (u.data()[k] + v.data()[k]),
                (Some(u), None) => u.data()[k],
                (None, Some(v)) => v.data()[k],
                (None, None) => unreachable!("fusion uses at least one branch"),
            });
        }
    }
    Ok(probs)
}

pub fn evaluate(state: &mut ModelState, data: &[Prepared], fusion: Fusion) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluation over an empty dataset".into()));
    }
    let probs = predict(state, data, fusion, 16)?;
    EvalReport::from_predictions(
        data.iter()
            .zip(probs)
            .map(|(d, p)| (d.id.clone(), p, d.label))
            .collect(),
    )
}

/// Arithmetic mean of the percent metrics of several reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanReport {
    #[serde(serialize_with = "one_decimal")]
    pub accuracy: f64,
    #[serde(serialize_with = "one_decimal")]
    pub sensitivity: f64,
    #[serde(serialize_with = "one_decimal")]
    pub specificity: f64,
    pub n: usize,
}

impl MeanReport {
    pub fn of(reports: &[EvalReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let avg = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Self {
            accuracy: avg(|r| r.accuracy),
            sensitivity: avg(|r| r.sensitivity),
            specificity: avg(|r| r.specificity),
            n: reports.len(),
        }
    }
}
