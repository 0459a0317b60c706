//! Run configuration, read from a TOML file. Every section and key is
//! optional; unknown keys are rejected.
//!
//! ```toml
//! seed = 1
//!
//! [kg]            # synthetic graph: entities, relations, triples, chain_density, ...
//! [vocab]         # max_size, min_freq
//! [model]         # vocab_size (0 = size of the built vocabulary), layers, dim, heads, ...
//! [base]          # epochs, batch_size, peak_lr, seed: MLM warm-up of the base on scrambled facts
//! [pretrain]      # variant, epochs, batch_size, peak_lr, workers, [pretrain.optimizer]
//! [qa]            # questions, test_fraction, hard_fraction, candidates
//! [finetune]      # epochs, batch_size, peak_lr, objective, train_frac, [finetune.optimizer]
//! ```

use std::fs;
use std::path::Path;

use kgc_core::curriculum::{CurriculumSchedule, Variant};
use kgc_core::kg::synthetic::SyntheticKgConfig;
use kgc_neural::model::{ModelConfig, QaObjective};
use kgc_neural::optim::AdamWConfig;
use serde::{Deserialize, Serialize};

use crate::base::BaseConfig;
use crate::{io_err, HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub kg: SyntheticKgConfig,
    pub vocab: VocabConfig,
    pub model: ModelConfig,
    pub base: BaseConfig,
    pub pretrain: PretrainConfig,
    pub qa: QaConfig,
    pub finetune: FinetuneConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 1,
            kg: SyntheticKgConfig::default(),
            vocab: VocabConfig::default(),
            model: ModelConfig {
                vocab_size: 0,
                ..ModelConfig::default()
            },
            base: BaseConfig::default(),
            pretrain: PretrainConfig::default(),
            qa: QaConfig::default(),
            finetune: FinetuneConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabConfig {
    pub max_size: usize,
    pub min_freq: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            max_size: 30_000,
            min_freq: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub variant: Variant,
    /// Epochs per lesson.
    pub epochs: u32,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub optimizer: AdamWConfig,
    /// Corpus generation threads.
    pub workers: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            variant: Variant::Cr,
            epochs: 3,
            batch_size: 32,
            peak_lr: 5e-4,
            optimizer: AdamWConfig::default(),
            workers: 1,
        }
    }
}

impl PretrainConfig {
    pub fn schedule(&self) -> CurriculumSchedule {
        CurriculumSchedule::new(self.variant)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QaConfig {
    /// Total questions across both splits.
    pub questions: usize,
    pub test_fraction: f64,
    /// Share of questions built from compositions of several triples.
    pub hard_fraction: f64,
    pub candidates: usize,
}

impl Default for QaConfig {
    fn default() -> Self {
        QaConfig {
            questions: 1000,
            test_fraction: 0.3,
            hard_fraction: 0.3,
            candidates: 11,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub objective: QaObjective,
    /// Share of the training split used.
    pub train_frac: f64,
    pub optimizer: AdamWConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 3,
            batch_size: 32,
            peak_lr: 1e-4,
            objective: QaObjective::Softmax,
            train_frac: 1.0,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: Config = toml::from_str(&text).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.pretrain.batch_size == 0 || self.finetune.batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.pretrain.peak_lr > 0.0 && self.finetune.peak_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.finetune.train_frac > 0.0 && self.finetune.train_frac <= 1.0) {
            return bad("train_frac must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.qa.test_fraction) || !(0.0..=1.0).contains(&self.qa.hard_fraction) {
            return bad("qa fractions must lie in [0, 1)");
        }
        if self.qa.candidates < 2 {
            return bad("need at least two candidates per question");
        }
        Ok(())
    }

    /// Model configuration with the vocabulary size filled in.
    pub fn model_for(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: if self.model.vocab_size == 0 {
                vocab_size
            } else {
                self.model.vocab_size
            },
            ..self.model.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: Config = toml::from_str("").unwrap();
        assert_eq!(cfg, Config::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("sed = 3").is_err());
        assert!(toml::from_str::<Config>("[pretrain]\nepoch = 3").is_err());
    }

    #[test]
    fn nested_sections_parse() {
        let cfg: Config = toml::from_str(
            "seed = 9\n[pretrain]\nvariant = \"CR-13\"\nepochs = 5\n[finetune]\nobjective = \"sigmoid\"\n[kg]\ntriples = 100\n",
        )
        .unwrap();
        assert_eq!(cfg.pretrain.variant, Variant::Cr13);
        assert_eq!(cfg.pretrain.epochs, 5);
        assert_eq!(cfg.finetune.objective, QaObjective::Sigmoid);
        assert_eq!(cfg.kg.triples, 100);
        assert_eq!(cfg.seed, 9);
    }
}
