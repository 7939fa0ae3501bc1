use std::fs;
use std::path::{Path, PathBuf};

use redcore::datagen::GenConfig;
use redcore::trainer::{combinations, combo_name, Mode, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::exit::{CliResult, Failure};

/// One JSON document describing data, training and evaluation. Every field
/// is optional; command-line flags override what it sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: GenConfig,
    pub train: TrainConfig,
    /// Overrides `train.mode` when set.
    pub mode: Option<Mode>,
    pub out: Option<PathBuf>,
    /// Combination names such as `"A"` or `"VL"` (or `"m1+m3"` when the
    /// modality count is not three). All combinations when unset.
    pub combos: Option<Vec<String>>,
    /// Share of samples held out for evaluation. Zero trains on everything
    /// and evaluates on the training set.
    pub test_fraction: f64,
    /// Write a checkpoint every this many outer steps; zero writes one at the end only.
    pub checkpoint_every: usize,
    pub sweep: SweepGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub missing_rates: Vec<Vec<f64>>,
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            missing_rates: vec![vec![0.8, 0.2, 0.5]],
            modes: vec![Mode::Core, Mode::Redcore],
            seeds: vec![0, 1, 2],
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: GenConfig::default(),
            train: TrainConfig::default(),
            mode: None,
            out: None,
            combos: None,
            test_fraction: 0.2,
            checkpoint_every: 0,
            sweep: SweepGrid::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = self.train.clone();
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        cfg
    }

    pub fn check_test_fraction(&self) -> CliResult<()> {
        if (0.0..1.0).contains(&self.test_fraction) {
            Ok(())
        } else {
            Err(Failure::config(format!(
                "test_fraction {} not in [0, 1)",
                self.test_fraction
            )))
        }
    }

    /// The evaluation subsets as `(name, modality indices)`.
    pub fn eval_combos(&self, n_modalities: usize) -> CliResult<Vec<(String, Vec<usize>)>> {
        let all: Vec<(String, Vec<usize>)> = combinations(n_modalities)
            .into_iter()
            .map(|s| (combo_name(&s, n_modalities), s))
            .collect();
        let Some(names) = &self.combos else {
            return Ok(all);
        };
        if names.is_empty() {
            return Err(Failure::config("combos must not be empty"));
        }
        names
            .iter()
            .map(|n| {
                all.iter()
                    .find(|(name, _)| name == n)
                    .cloned()
                    .ok_or_else(|| Failure::config(format!("unknown modality combination {n:?}")))
            })
            .collect()
    }
}
