use std::path::{Path, PathBuf};

use cotrain::collab::{Arm, Experiment, TrainConfig};
use cotrain::data::CohortSpec;
use cotrain::interpret::ExplainConfig;
use cotrain::model::{CnnConfig, GnnConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a run depends on. Unknown keys are rejected at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub cohort: CohortSpec,
    pub cnn: CnnConfig,
    pub gnn: GnnConfig,
    pub train: TrainConfig,
    pub explain: ExplainConfig,
    /// Surface points sampled per sample.
    pub n_points: usize,
    /// Objective trained by `train`.
    pub arm: Arm,
    pub out: PathBuf,
    /// Master seed; overrides the cohort and training seeds.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cohort: CohortSpec::default(),
            cnn: CnnConfig::default(),
            gnn: GnnConfig::default(),
            train: TrainConfig::default(),
            explain: ExplainConfig::default(),
            n_points: 512,
            arm: Arm::Collaborative,
            out: PathBuf::from("run"),
            seed: 0,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub points: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_slice(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies overrides, propagates the master seed and validates.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self, CliError> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(points) = o.points {
            self.n_points = points;
        }
        self.cohort.seed = self.seed;
        self.train.seed = self.seed;
        self.cohort.validate()?;
        self.experiment().validate()?;
        if !(self.explain.lr > 0.0) || !(self.explain.init > 0.0 && self.explain.init < 1.0) {
            return Err(CliError::Config(
                "explain needs a positive lr and an init inside (0, 1)".into(),
            ));
        }
        Ok(self)
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            cnn: self.cnn.clone(),
            gnn: self.gnn.clone(),
            train: self.train.clone(),
            n_points: self.n_points,
        }
    }

    /// Writes the resolved config next to the run's outputs.
    pub fn snapshot(&self, dir: &Path) -> Result<(), CliError> {
        crate::write_json(&dir.join("config.json"), self)
    }
}
