//! Experiment configuration: a TOML file with documented defaults for every
//! field. The fully resolved config is echoed into every output so any report
//! can be regenerated from its own header.

use crate::attack::AttackConfig;
use crate::defense::{DefenseConfig, RandomizationParams};
use crate::error::{Error, Result};
use crate::harness::ScenarioKind;
use crate::model::{AdvTrainConfig, ModelArch, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// "synthetic" or a directory containing train.rast/test.rast.
    pub dataset: String,
    pub output_dir: String,
    pub model: ModelSection,
    pub defense: DefenseSection,
    pub attacks: Vec<AttackConfig>,
    pub scenarios: ScenarioSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 42,
            dataset: "synthetic".into(),
            output_dir: "runs/default".into(),
            model: ModelSection::default(),
            defense: DefenseSection::default(),
            attacks: vec![
                AttackConfig::fgsm(2.0 / 255.0),
                AttackConfig::fgsm(5.0 / 255.0),
                AttackConfig::fgsm(10.0 / 255.0),
                AttackConfig::deepfool(),
                AttackConfig::cw(),
            ],
            scenarios: ScenarioSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub input_side: usize,
    pub channels: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub num_classes: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub train_seed: u64,
    /// Train with FGSM-mixed batches.
    pub adversarial: bool,
    pub mix_fraction: f64,
    pub epsilons: Vec<f64>,
    /// Samples generated when the dataset is "synthetic".
    pub synthetic_train: usize,
    pub synthetic_test: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let arch = ModelArch::default();
        let train = TrainConfig::default();
        let adv = AdvTrainConfig::default();
        Self {
            input_side: arch.input_side,
            channels: arch.channels,
            conv1_filters: arch.conv1_filters,
            conv2_filters: arch.conv2_filters,
            num_classes: arch.num_classes,
            epochs: train.epochs,
            lr: train.lr,
            momentum: train.momentum,
            batch_size: train.batch_size,
            train_seed: train.seed,
            adversarial: false,
            mix_fraction: adv.mix_fraction,
            epsilons: adv.epsilons,
            synthetic_train: 8000,
            synthetic_test: 2000,
        }
    }
}

impl ModelSection {
    pub fn arch(&self) -> ModelArch {
        ModelArch {
            input_side: self.input_side,
            channels: self.channels,
            conv1_filters: self.conv1_filters,
            conv2_filters: self.conv2_filters,
            num_classes: self.num_classes,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            seed: self.train_seed,
        }
    }

    pub fn adv_train_config(&self) -> AdvTrainConfig {
        AdvTrainConfig {
            base: self.train_config(),
            epsilons: self.epsilons.clone(),
            mix_fraction: self.mix_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseSection {
    #[serde(flatten)]
    pub randomization: RandomizationParams,
    pub n_iterations: usize,
    pub defense_runs: usize,
}

impl Default for DefenseSection {
    fn default() -> Self {
        Self {
            randomization: RandomizationParams::default(),
            n_iterations: 1,
            defense_runs: 3,
        }
    }
}

impl DefenseSection {
    pub fn defense_config(&self) -> DefenseConfig {
        DefenseConfig {
            randomization: self.randomization.clone(),
            n_iterations: self.n_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSection {
    pub kinds: Vec<ScenarioKind>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            kinds: vec![
                ScenarioKind::Vanilla,
                ScenarioKind::SinglePattern,
                ScenarioKind::EnsemblePattern,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    /// Correct-subset size for vanilla/single-pattern scenarios.
    pub n_images: usize,
    /// Correct-subset size for the heavier ensemble scenario.
    pub n_images_ensemble: usize,
    pub subset_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_images: 200,
            n_images_ensemble: 50,
            subset_seed: 7,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.arch();
        self.defense
            .defense_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.defense.defense_runs == 0 {
            return Err(Error::Config("defense_runs must be positive".into()));
        }
        for a in &self.attacks {
            a.clone()
                .normalized()
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.eval.n_images == 0 {
            return Err(Error::Config("eval.n_images must be positive".into()));
        }
        Ok(())
    }

    /// Attacks with per-kind defaults resolved.
    pub fn normalized_attacks(&self) -> Vec<AttackConfig> {
        self.attacks
            .iter()
            .map(|a| a.clone().normalized())
            .collect()
    }
}

/// Parses a TOML config file; parse failures carry the offending line/key.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::AttackKind;

    #[test]
    fn empty_config_resolves_to_defaults() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_config_overrides_only_named_fields() {
        let text = r#"
master_seed = 7

[model]
epochs = 3

[defense]
resize_min = 20
resize_max_exclusive = 28
pad_to = 28

[[attacks]]
kind = "cw"
max_iter = 50
"#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.model.epochs, 3);
        assert_eq!(cfg.model.batch_size, ModelSection::default().batch_size);
        assert_eq!(cfg.defense.randomization.resize_min, 20);
        assert_eq!(cfg.attacks.len(), 1);
        assert_eq!(cfg.attacks[0].kind, AttackKind::Cw);
        assert_eq!(cfg.normalized_attacks()[0].max_iter, 50);
    }

    #[test]
    fn malformed_config_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "master_seed = \"not a number\"\n").unwrap();
        match load_config(&path) {
            Err(Error::Config(msg)) => {
                assert!(msg.contains("master_seed") || msg.contains("line"), "{msg}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn config_echo_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
