//! Experiment configuration.
//!
//! A TOML file is layered over the built-in defaults table by table, then
//! command-line flags are applied on top. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use gif_fusion::degradation::TestCondition;
use gif_fusion::detector::{FusionMode, ModelConfig, TrainConfig};
use gif_fusion::synth::SceneParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult, IoContext};

pub const OUTPUT_DIR_ENV: &str = "GIF_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "gif-out";

/// Top-level keys that may be absent from the defaults.
const OPTIONAL_KEYS: [&str; 2] = ["dataset_dir", "checkpoint_dir"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// One full train/eval run per seed; the seed drives data, init,
    /// shuffling, augmentation and test corruptions.
    pub seeds: Vec<u64>,
    pub modes: Vec<FusionMode>,
    pub conditions: Vec<TestCondition>,
    /// Generated pool sizes. With `dataset_dir` the stored samples are split
    /// in the same proportion instead.
    pub train_samples: usize,
    pub test_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/checkpoints`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
    pub scene: SceneParams,
    /// `mode` is replaced by each entry of `modes`.
    pub model: ModelConfig,
    /// `seed` is replaced by each entry of `seeds`.
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let output_dir = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| DEFAULT_OUTPUT_DIR.into());
        Self {
            seeds: vec![1, 2, 3],
            modes: vec![FusionMode::Gif, FusionMode::FixedWeights, FusionMode::Modality1Only, FusionMode::Modality2Only],
            conditions: TestCondition::ALL.to_vec(),
            train_samples: 400,
            test_samples: 200,
            dataset_dir: None,
            output_dir,
            checkpoint_dir: None,
            scene: SceneParams::default(),
            model: ModelConfig::default(),
            train: TrainConfig::desk(),
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value, path: &str) -> CliResult<()> {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &key)?,
                    None if path.is_empty() && OPTIONAL_KEYS.contains(&k.as_str()) => {
                        b.insert(k, v);
                    }
                    None => return Err(CliError::config(format!("unknown config key {key:?}"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let over: toml::Value = toml::from_str(text).map_err(|e| CliError::config(format!("parse: {e}")))?;
        let mut base = toml::Value::try_from(Self::default()).expect("defaults serialize");
        merge(&mut base, over, "")?;
        base.try_into().map_err(|e| CliError::config(format!("invalid value: {e}")))
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).at(p)?;
                Self::from_toml(&text).map_err(|e| e.context(p.display().to_string()))
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        let need = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(CliError::config(msg)) };
        need(!self.seeds.is_empty(), "at least one seed is required")?;
        need(!self.modes.is_empty(), "at least one fusion mode is required")?;
        need(!self.conditions.is_empty(), "at least one test condition is required")?;
        need(self.train_samples > 0 && self.test_samples > 0, "train_samples and test_samples must be positive")?;
        if let Some(d) = &self.dataset_dir {
            need(d.is_dir(), &format!("dataset_dir {} does not exist", d.display()))?;
        }
        self.scene.validate()?;
        self.train.validate()?;
        for &mode in &self.modes {
            self.model_for(mode).validate().map_err(CliError::config)?;
            if self.model.second_scale && !mode.has_fusion_block() {
                return Err(CliError::config(format!("second_scale is only available for fusion modes, not {mode}")));
            }
        }
        Ok(())
    }

    pub fn model_for(&self, mode: FusionMode) -> ModelConfig {
        ModelConfig { mode, ..self.model.clone() }
    }

    pub fn train_for(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.checkpoint_dir.clone().unwrap_or_else(|| self.output_dir.join("checkpoints"))
    }

    /// SHA-256 over everything that affects results; output locations are
    /// excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.checkpoint_dir = None;
        hash_json(&c)
    }
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(value).expect("serializable")))
}

pub fn checkpoint_name(mode: FusionMode, seed: u64) -> String {
    format!("{mode}_seed{seed}.bin")
}
