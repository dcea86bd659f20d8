//! The collaborative objective, optimizer, training loop, evaluation,
//! cross-validation and the single-branch ablation.

mod eval;
mod loss;
mod optim;
mod train;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::data::{balance_minority, cv_folds, split_dataset, VolumeSample, N_CHANNELS};
use crate::model::{init_params, Branch, CnnConfig, GnnConfig, ModelState};
use crate::prep::{prepare, Prepared};
use crate::rng::derive_seed;
use crate::{Error, Result};

pub use eval::{evaluate, predict, EvalReport, MeanReport};
pub use loss::{bce, bce_pair_loss, kl_pair_loss, single_loss, total_loss, LossBreakdown, P_MIN};
pub use optim::{adam_step, lr_at, TrainConfig, ADAM_EPS, BETA1, BETA2};
pub use train::{batch_loss, train, write_history, EpochRecord, TrainResult};

/// Which objective a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Collaborative,
    CnnOnly,
    GnnOnly,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::CnnOnly, Arm::GnnOnly, Arm::Collaborative];

    pub fn branches(self) -> &'static [Branch] {
        match self {
            Arm::Collaborative => &[Branch::Cnn, Branch::Gnn],
            Arm::CnnOnly => &[Branch::Cnn],
            Arm::GnnOnly => &[Branch::Gnn],
        }
    }

    /// The inference rule matching the objective.
    pub fn fusion(self) -> Fusion {
        match self {
            Arm::Collaborative => Fusion::Average,
            Arm::CnnOnly => Fusion::Cnn,
            Arm::GnnOnly => Fusion::Gnn,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Arm::Collaborative => "Collaborative framework",
            Arm::CnnOnly => "CNN only",
            Arm::GnnOnly => "GNN only",
        }
    }
}

/// How branch probabilities combine at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Mean of the two branch probabilities.
    Average,
    Cnn,
    Gnn,
}

/// Everything a training run needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Experiment {
    pub cnn: CnnConfig,
    pub gnn: GnnConfig,
    pub train: TrainConfig,
    /// Surface points sampled per sample.
    pub n_points: usize,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            cnn: CnnConfig::default(),
            gnn: GnnConfig::default(),
            train: TrainConfig::default(),
            n_points: 512,
        }
    }
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        self.cnn.validate()?;
        self.gnn.validate()?;
        self.train.validate()?;
        if self.n_points < self.gnn.min_points() {
            return Err(Error::Config(format!(
                "{} points per cloud, the GNN needs at least {}",
                self.n_points,
                self.gnn.min_points()
            )));
        }
        Ok(())
    }

    pub fn init(&self) -> Result<ModelState> {
        init_params(&self.cnn, &self.gnn, derive_seed(self.train.seed, "model"))
    }

    /// Crops and point clouds for a list of samples.
    pub fn prepare(&self, samples: &[VolumeSample]) -> Result<Vec<Prepared>> {
        samples
            .iter()
            .map(|s| prepare(s, self.cnn.crop, self.n_points, self.train.seed))
            .collect()
    }
}

/// Stacks the crops of a batch into `[B, 4, S, S, S]`.
pub fn batch_crops(batch: &[Prepared]) -> Result<Tensor> {
    let s = batch
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?
        .crop
        .size();
    let data: Vec<f64> = batch.iter().flat_map(|p| p.crop.data.iter().copied()).collect();
    Tensor::new(data, &[batch.len(), N_CHANNELS, s, s, s])
}

/// A fit/validation pair ready for [`train`]: the fit part is class-balanced
/// by rotation, the validation part never contains augmented copies.
pub struct PreparedSplit {
    pub fit: Vec<Prepared>,
    pub val: Vec<Prepared>,
}

pub fn prepare_split(
    exp: &Experiment,
    fit: Vec<VolumeSample>,
    val: &[VolumeSample],
) -> Result<PreparedSplit> {
    let fit = balance_minority(fit)?;
    Ok(PreparedSplit {
        fit: exp.prepare(&fit)?,
        val: exp.prepare(val)?,
    })
}

/// Stratified 4:1 train/test split, the train part split 4:1 again into
/// fit/validation: `(fit, val, test)`.
pub fn holdout_split(
    samples: &[VolumeSample],
    seed: u64,
) -> Result<(Vec<VolumeSample>, Vec<VolumeSample>, Vec<VolumeSample>)> {
    let (train_set, test_set) = split_dataset(samples, true, derive_seed(seed, "test-split"))?;
    let (fit, val) = split_dataset(&train_set, true, derive_seed(seed, "val-split"))?;
    Ok((fit, val, test_set))
}

/// One trained model per fold, evaluated on its validation samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<EvalReport>,
    pub mean: MeanReport,
}

pub fn cross_validate(samples: &[VolumeSample], k: usize, exp: &Experiment, arm: Arm) -> Result<CvReport> {
    exp.validate()?;
    let folds = cv_folds(samples, k, derive_seed(exp.train.seed, "cv"))?;
    let mut reports = Vec::with_capacity(k);
    for (fit, val) in folds {
        let split = prepare_split(exp, fit, &val)?;
        let run = train(exp.init()?, &split.fit, &split.val, &exp.train, arm)?;
        let mut state = run.state;
        reports.push(evaluate(&mut state, &split.val, arm.fusion())?);
    }
    Ok(CvReport {
        mean: MeanReport::of(&reports),
        folds: reports,
    })
}

/// One row of the ablation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: Arm,
    pub model: String,
    pub val: EvalReport,
    pub test: EvalReport,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, arm: Arm) -> &AblationRow {
        self.rows.iter().find(|r| r.arm == arm).expect("every arm has a row")
    }

    /// Plain-text table with accuracy, sensitivity and specificity (%) on the
    /// validation and test sets.
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<26}{:>9}{:>9}{:>9}{:>10}{:>10}{:>10}\n",
            "Models", "Val Acc", "Val Sen", "Val Spe", "Test Acc", "Test Sen", "Test Spe"
        );
        for r in &self.rows {
            s += &format!(
                "{:<26}{:>9.1}{:>9.1}{:>9.1}{:>10.1}{:>10.1}{:>10.1}\n",
                r.model,
                r.val.accuracy,
                r.val.sensitivity,
                r.val.specificity,
                r.test.accuracy,
                r.test.sensitivity,
                r.test.specificity
            );
        }
        s
    }
}

/// A finished ablation: the table plus the trained state of every arm.
pub struct Ablation {
    pub table: AblationTable,
    pub initial: ModelState,
    pub states: Vec<(Arm, ModelState)>,
}

/// Trains CNN-only, GNN-only and collaborative models from the same
/// initialization on the same stratified 4:1 train/test split (train further
/// split 4:1 into fit/validation) and reports each on validation and test.
pub fn ablate(samples: &[VolumeSample], exp: &Experiment) -> Result<Ablation> {
    exp.validate()?;
    let (fit, val, test_set) = holdout_split(samples, exp.train.seed)?;
    let split = prepare_split(exp, fit, &val)?;
    let test = exp.prepare(&test_set)?;
    let initial = exp.init()?;
    let mut rows = Vec::new();
    let mut states = Vec::new();
    for arm in Arm::ALL {
        let run = train(initial.clone(), &split.fit, &split.val, &exp.train, arm)?;
        let mut state = run.state;
        rows.push(AblationRow {
            arm,
            model: arm.label().to_string(),
            val: evaluate(&mut state, &split.val, arm.fusion())?,
            test: evaluate(&mut state, &test, arm.fusion())?,
            best_epoch: run.best_epoch,
            epochs_run: run.history.len(),
        });
        states.push((arm, state));
    }
    Ok(Ablation {
        table: AblationTable { rows },
        initial,
        states,
    })
}
