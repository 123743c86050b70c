use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{forward_on_tape, loss_on_tape, Model, ModelConfig, TapeParams};
use crate::checkpoint::{self, CheckpointError};
use crate::degradation::{apply, sample_spec, DegradationRanges, ModalityConstraints, Sample};
use crate::rng::{rng_for, stream};
use crate::tensor::{sgd_step, SgdState, Tape, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub augmentation: bool,
    pub constraints: ModalityConstraints,
    pub ranges: DegradationRanges,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0005,
            momentum: 0.9,
            batch_size: 2,
            weight_decay: 0.0005,
            epochs: 30,
            seed: 0,
            augmentation: true,
            constraints: ModalityConstraints::default(),
            ranges: DegradationRanges::default(),
        }
    }
}

impl TrainConfig {
    /// Learning rate used for from-scratch training of the toy detector.
    pub const DESK_LEARNING_RATE: f64 = 0.005;

    /// Default recipe with the learning rate raised for training from
    /// scratch at desk scale.
    pub fn desk() -> Self {
        Self { learning_rate: Self::DESK_LEARNING_RATE, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        for (name, v) in [("momentum", self.momentum), ("weight_decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TrainError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::Config("batch_size and epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-sample training loss.
    pub loss: f64,
    pub learning_rate: f64,
    /// Cell accuracy on the (possibly augmented) training samples.
    pub accuracy: f64,
}

/// Model plus optimizer state; enough to resume training exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub model: Model,
    pub sgd: SgdState,
    pub config: TrainConfig,
    /// Number of finished epochs.
    pub epoch: usize,
    pub log: Vec<EpochMetrics>,
}

const MOMENTUM_PREFIX: &str = "momentum/";

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let sgd = SgdState::new(config.learning_rate, config.momentum, config.weight_decay);
        Ok(Self { model, sgd, config, epoch: 0, log: Vec::new() })
    }

    fn training_sample(&self, data: &[Sample], idx: usize) -> Sample {
        if !self.config.augmentation {
            return data[idx].clone();
        }
        let s = &data[idx];
        let mut rng = rng_for(self.config.seed, &[stream::AUGMENT, self.epoch as u64, idx as u64]);
        let spec = sample_spec(&mut rng, &self.config.constraints, s.modality1.height, s.modality1.width, &self.config.ranges);
        apply(s, &spec)
    }

    /// One pass over `data` in seeded shuffled mini-batches.
    pub fn run_epoch(&mut self, data: &[Sample]) -> Result<EpochMetrics, TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng_for(self.config.seed, &[stream::SHUFFLE, self.epoch as u64]));
        let (mut loss_sum, mut correct, mut cells) = (0.0, 0usize, 0usize);
        for batch in order.chunks(self.config.batch_size) {
            let mut grads: Vec<Vec<f64>> = self.model.params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            for &idx in batch {
                let sample = self.training_sample(data, idx);
                let mut tape = Tape::new();
                let p = TapeParams::put(&mut tape, &self.model, true);
                let nodes = forward_on_tape(&mut tape, &self.model, &p, &sample)?;
                let loss = loss_on_tape(&mut tape, &nodes, &sample)?;
                let scaled = tape.scale(loss, 1.0 / batch.len() as f64)?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(TrainError::Diverged { epoch: self.epoch });
                }
                loss_sum += value;
                tape.backward(scaled)?;
                for (acc, &v) in grads.iter_mut().zip(&p.vars) {
                    if let Some(g) = tape.grad(v) {
                        acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                    }
                }
                let labels = sample.labels.classes();
                let preds = predicted_classes(&nodes.logits.iter().map(|&v| tape.value(v)).collect::<Vec<_>>());
                correct += preds.iter().zip(&labels).filter(|(a, b)| a == b).count();
                cells += labels.len();
            }
            for ((_, t), g) in self.model.params.iter_mut().zip(&grads) {
                t.zero_grad();
                t.accumulate_grad(g)?;
            }
            let mut refs: Vec<&mut Tensor> = self.model.params.iter_mut().map(|(_, t)| t).collect();
            sgd_step(&mut refs, &mut self.sgd)?;
            refs.iter_mut().for_each(|t| t.clear_grad());
            if self.model.params.iter().any(|(_, t)| !t.is_finite()) {
                return Err(TrainError::Diverged { epoch: self.epoch });
            }
        }
        let m = EpochMetrics {
            epoch: self.epoch,
            loss: loss_sum / data.len() as f64,
            learning_rate: self.sgd.learning_rate,
            accuracy: correct as f64 / cells.max(1) as f64,
        };
        self.epoch += 1;
        self.log.push(m.clone());
        Ok(m)
    }

    /// Runs until `config.epochs` epochs are done.
    pub fn run(&mut self, data: &[Sample]) -> Result<(), TrainError> {
        while self.epoch < self.config.epochs {
            self.run_epoch(data)?;
        }
        Ok(())
    }

    /// Parameters, momentum buffers and progress in one checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        self.save_with_metadata(path, serde_json::Map::new())
    }

    /// [`Trainer::save`] with extra metadata keys; they are ignored on load.
    pub fn save_with_metadata(&self, path: impl AsRef<Path>, extra: serde_json::Map<String, serde_json::Value>) -> Result<(), TrainError> {
        let names: Vec<String> = self.model.params.iter().map(|(n, _)| format!("{MOMENTUM_PREFIX}{n}")).collect();
        let buffers: Vec<(usize, Tensor)> = self
            .model
            .params
            .iter()
            .enumerate()
            .filter_map(|(i, (_, t))| self.sgd.buffer(i).map(|b| (i, Tensor::new(t.shape(), b.to_vec()).expect("same shape"))))
            .collect();
        let mut tensors = self.model.named_tensors();
        tensors.extend(buffers.iter().map(|(i, t)| (names[*i].as_str(), t)));
        let mut metadata = serde_json::json!({
            "epoch": self.epoch,
            "model": self.model.config,
            "train": self.config,
            "log": self.log,
        });
        if let Some(map) = metadata.as_object_mut() {
            map.extend(extra);
        }
        checkpoint::save(path, &tensors, metadata)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let ck = checkpoint::load(path)?;
        let meta = |key: &str| ck.metadata.get(key).cloned().ok_or_else(|| CheckpointError::Missing(format!("metadata.{key}")));
        let parse = |e: serde_json::Error| TrainError::Checkpoint(CheckpointError::Manifest(e));
        let model_cfg: ModelConfig = serde_json::from_value(meta("model")?).map_err(parse)?;
        let config: TrainConfig = serde_json::from_value(meta("train")?).map_err(parse)?;
        let epoch: usize = serde_json::from_value(meta("epoch")?).map_err(parse)?;
        let log: Vec<EpochMetrics> = serde_json::from_value(meta("log")?).map_err(parse)?;
        let model = Model::from_checkpoint(model_cfg, &ck)?;
        let mut sgd = SgdState::new(config.learning_rate, config.momentum, config.weight_decay);
        for (i, (name, _)) in model.params.iter().enumerate() {
            if let Ok(t) = ck.get(&format!("{MOMENTUM_PREFIX}{name}")) {
                sgd.set_buffer(i, t.data().to_vec());
            }
        }
        Ok(Self { model, sgd, config, epoch, log })
    }
}

pub(crate) fn predicted_classes(maps: &[&Tensor]) -> Vec<usize> {
    let cells = maps[0].len() / 2;
    (0..cells)
        .map(|i| {
            let p1: f64 = maps.iter().map(|m| super::softmax2(m.data()[i], m.data()[cells + i]).1).sum::<f64>() / maps.len() as f64;
            usize::from(p1 > 0.5)
        })
        .collect()
}

/// Fresh model trained on `data` for `cfg.epochs` epochs.
pub fn train(model_cfg: ModelConfig, data: &[Sample], cfg: &TrainConfig) -> Result<Trainer, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let model = Model::init(model_cfg, cfg.seed)?;
    let mut t = Trainer::new(model, cfg.clone())?;
    t.run(data)?;
    Ok(t)
}
