//! Experiment configuration, stored as TOML with one section per concern.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::recognizers::{CharConfig, RecognizerKind, Seq2SeqConfig, WordConfig};
use crate::synth::{AugRanges, FormGenerator};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub vocab_size: usize,
    pub train_forms: usize,
    pub valid_forms: usize,
    pub test_forms: usize,
    /// Write `train_da` splits holding the originals plus augmented copies.
    pub augment: bool,
    /// Augmented copies per original in the `train_da` splits.
    pub augment_copies: usize,
    /// Train on `train_da` instead of `train`.
    pub train_on_augmented: bool,
    /// Minimum pepper rate of the noisy recognition test split.
    pub noise_floor: f64,
    pub generator: FormGenerator,
    pub augmentation: AugRanges,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            vocab_size: 30,
            train_forms: 500,
            valid_forms: 50,
            test_forms: 50,
            augment: true,
            augment_copies: 1,
            train_on_augmented: false,
            noise_floor: 0.02,
            generator: FormGenerator::default(),
            augmentation: AugRanges::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsConfig {
    pub detector: DetectorConfig,
    pub word: WordConfig,
    pub char: CharConfig,
    pub seq2seq: Seq2SeqConfig,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            detector: DetectorConfig::default(),
            word: WordConfig::default(),
            char: CharConfig::default(),
            seq2seq: Seq2SeqConfig::default(),
        }
    }
}

/// Training schedule per task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub detector: TrainConfig,
    pub word: TrainConfig,
    pub char: TrainConfig,
    pub seq2seq: TrainConfig,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let base = TrainConfig::default();
        ScheduleConfig {
            detector: TrainConfig {
                epochs: 6,
                ..base.clone()
            },
            word: TrainConfig {
                epochs: 4,
                ..base.clone()
            },
            char: TrainConfig {
                epochs: 8,
                ..base.clone()
            },
            seq2seq: TrainConfig { epochs: 5, ..base },
        }
    }
}

impl ScheduleConfig {
    pub fn for_recognizer(&self, kind: RecognizerKind) -> &TrainConfig {
        match kind {
            RecognizerKind::Word => &self.word,
            RecognizerKind::Char => &self.char,
            RecognizerKind::Seq2seq => &self.seq2seq,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Dataset root; falls back to `SCRIPTORIUM_DATA_DIR`, then `data`.
    pub data_dir: Option<PathBuf>,
    /// Where `train` writes checkpoints when no output path is given.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub models: ModelsConfig,
    pub schedule: ScheduleConfig,
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            data: DataConfig::default(),
            models: ModelsConfig::default(),
            schedule: ScheduleConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        // TOML integers are signed.
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed must be at most {}", i64::MAX)));
        }
        let d = &self.data;
        if !(1..=100_000).contains(&d.vocab_size) {
            return Err(Error::Config("data.vocab_size must be in 1..=100000".into()));
        }
        if d.train_forms == 0 || d.test_forms == 0 {
            return Err(Error::Config("data.train_forms and data.test_forms must be positive".into()));
        }
        if d.train_forms.max(d.valid_forms).max(d.test_forms) > 1_000_000 {
            return Err(Error::Config("at most 1000000 forms per split".into()));
        }
        if d.augment && !(1..=16).contains(&d.augment_copies) {
            return Err(Error::Config("data.augment_copies must be in 1..=16".into()));
        }
        if d.train_on_augmented && !d.augment {
            return Err(Error::Config("data.train_on_augmented requires data.augment".into()));
        }
        if !(0.0..=0.5).contains(&d.noise_floor) {
            return Err(Error::Config("data.noise_floor must be in [0, 0.5]".into()));
        }
        d.generator.validate()?;
        d.augmentation.validate()?;
        self.models.detector.validate()?;
        self.models.word.backbone.validate()?;
        self.models.char.backbone.validate()?;
        if self.models.char.beam_width == 0 {
            return Err(Error::Config("models.char.beam_width must be at least 1".into()));
        }
        self.models.seq2seq.validate()?;
        for t in [
            &self.schedule.detector,
            &self.schedule.word,
            &self.schedule.char,
            &self.schedule.seq2seq,
        ] {
            t.validate()?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 9;
        cfg.data.train_forms = 12;
        cfg.models.seq2seq.lambda_ctc = 0.25;
        cfg.schedule.word.fault_inject_nan_step = Some(3);
        cfg.paths.data_dir = Some("somewhere".into());
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn partial_files_take_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 3\n[data]\ntrain_forms = 7\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.data.train_forms, 7);
        assert_eq!(cfg.data.test_forms, 50);
    }

    #[test]
    fn unknown_keys_and_bad_ranges_are_rejected() {
        assert!(ExperimentConfig::from_toml("sed = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("[data]\ntrain_form = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("[schedule.word]\nlr = 0.1\n").is_err());
        assert!(ExperimentConfig::from_toml("[data]\ntrain_forms = 0\n").is_err());
        assert!(ExperimentConfig::from_toml("[schedule.seq2seq]\nbatch_size = 0\n").is_err());
        let cfg = ExperimentConfig { seed: u64::MAX, ..ExperimentConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
