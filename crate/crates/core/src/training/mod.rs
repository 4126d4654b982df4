//! Training regimes: contrastive encoder training (stage 1), frozen-encoder
//! classifier head training (stage 2), and the end-to-end supervised
//! baseline. All randomness derives from the configured seed per stage and
//! epoch, so an interrupted run resumed from its state file finishes exactly
//! like an uninterrupted one.

pub mod augment;
pub mod head;
pub mod sampler;
mod stages;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_model::{MotionGrade, SliceRecord};
use crate::ingestion::{preprocess_to, PreprocessedImage};
use crate::nn::{Adam, AdamConfig, LrSchedule, Module};
use crate::store::{self, checkpoint_err, Store, TensorEntry};
use crate::{Error, Result};

pub use augment::{augment, AugmentConfig};
pub use head::MlpHead;
pub use sampler::{balanced_batches, shuffled_batches};
pub use stages::{
    train_head, train_stage1, train_stage2, train_supervised_baseline, HeadOutcome, Stage1Outcome, Stage2Outcome,
    SupervisedNet, SupervisedOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage1Method {
    Supcon,
    Simclr,
    /// Keep the initialized encoder as is.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage1_method: Stage1Method,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub supervised_epochs: usize,
    pub batch_size: usize,
    /// Learning rate for encoder training (stage 1 and the supervised arm).
    pub lr: f64,
    /// Learning rate for the stage-2 head.
    pub head_lr: f64,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    /// Contrastive temperature.
    pub temperature: f64,
    /// Augmented views per image in a supervised contrastive batch (1 or 2).
    pub views: usize,
    pub augment: AugmentConfig,
    /// Optional hidden layer width of the classifier head.
    pub head_hidden: Option<usize>,
    /// Stage 2 on embeddings computed once up front rather than per batch.
    pub stage2_cached: bool,
    pub seed: u64,
    /// Where per-epoch state and logs go; no persistence when unset.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_method: Stage1Method::Supcon,
            stage1_epochs: 50,
            stage2_epochs: 30,
            supervised_epochs: 50,
            batch_size: 32,
            lr: 1e-4,
            head_lr: 1e-3,
            schedule: LrSchedule::Cosine,
            weight_decay: 0.0,
            temperature: crate::losses::DEFAULT_TEMPERATURE,
            views: 2,
            augment: AugmentConfig::default(),
            head_hidden: None,
            stage2_cached: true,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        for (name, lr) in [("lr", self.lr), ("head_lr", self.head_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !matches!(self.views, 1 | 2) {
            return Err(Error::Config(format!("views must be 1 or 2, got {}", self.views)));
        }
        if self.head_hidden == Some(0) {
            return Err(Error::Config("head_hidden must be positive".into()));
        }
        self.augment.validate()
    }

    fn adam(&self) -> Adam {
        Adam::new(AdamConfig {
            weight_decay: self.weight_decay as f32,
            ..AdamConfig::default()
        })
    }
}

/// Preprocessed images with their grades.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<PreprocessedImage>,
    pub labels: Vec<MotionGrade>,
}

impl Dataset {
    pub fn new(images: Vec<PreprocessedImage>, labels: Vec<MotionGrade>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Shape(format!("{} images but {} labels", images.len(), labels.len())));
        }
        Ok(Dataset { images, labels })
    }

    /// Preprocesses graded records to `size x size`.
    pub fn from_records(records: &[SliceRecord], size: usize) -> Result<Self> {
        let labels = records.iter().map(SliceRecord::require_grade).collect::<Result<Vec<_>>>()?;
        let images = records.iter().map(|r| preprocess_to(r, size)).collect();
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn label_indices(&self) -> Vec<usize> {
        self.labels.iter().map(|g| g.index()).collect()
    }

    /// Hash of ids and labels, used to refuse resuming on different data.
    fn key(&self) -> String {
        let mut h = Sha256::new();
        for (img, label) in self.images.iter().zip(&self.labels) {
            h.update(img.source_id().as_bytes());
            h.update([0, label.index() as u8]);
        }
        hex::encode(h.finalize())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub stage: String,
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub lr: f64,
    pub wall_time_s: f64,
}

/// Newline-delimited JSON rendering of a log.
pub fn log_to_ndjson(log: &[LogRecord]) -> String {
    log.iter()
        .map(|r| serde_json::to_string(r).expect("log records serialize") + "\n")
        .collect()
}

pub fn write_log(path: &Path, log: &[LogRecord]) -> Result<()> {
    store::write_atomic(path, log_to_ndjson(log).as_bytes())
}

/// Share of argmax-correct rows (ties toward the more severe grade).
pub fn accuracy(logits: &[[f64; 3]], labels: &[MotionGrade]) -> f64 {
    let correct = logits
        .iter()
        .zip(labels)
        .filter(|(l, &g)| crate::data_model::argmax_toward_severe(l) == g)
        .count();
    correct as f64 / labels.len().max(1) as f64
}

#[derive(Debug, Clone, Copy)]
enum Selection {
    MinLoss,
    MaxAccuracy,
}

#[derive(Debug, Clone, Copy)]
struct Metrics {
    loss: f64,
    accuracy: Option<f64>,
}

impl Metrics {
    fn beats(&self, other: &Metrics, selection: Selection) -> bool {
        match selection {
            Selection::MinLoss => self.loss < other.loss,
            Selection::MaxAccuracy => {
                let (a, b) = (self.accuracy.unwrap_or(0.0), other.accuracy.unwrap_or(0.0));
                a > b || (a == b && self.loss < other.loss)
            }
        }
    }
}

struct TrainedModel<M> {
    best: M,
    log: Vec<LogRecord>,
    best_epoch: usize,
}

/// Epoch loop shared by every regime: schedule, validation, best-checkpoint
/// selection, NDJSON log and resumable state.
struct EpochLoop<'a> {
    stage: &'a str,
    config: &'a TrainConfig,
    epochs: usize,
    base_lr: f64,
    selection: Selection,
    /// Identifies the run for resume: configuration and data.
    run_key: String,
}

impl EpochLoop<'_> {
    fn state_path(&self) -> Option<PathBuf> {
        self.config
            .checkpoint_dir
            .as_ref()
            .map(|d| d.join(format!("{}_state.safetensors", self.stage)))
    }

    fn log_path(&self) -> Option<PathBuf> {
        self.config
            .checkpoint_dir
            .as_ref()
            .map(|d| d.join(format!("{}_log.ndjson", self.stage)))
    }

    fn run<M: Module + Clone>(
        &self,
        mut model: M,
        mut train_epoch: impl FnMut(&mut M, &mut Adam, usize, f32) -> Result<Metrics>,
        mut validate: impl FnMut(&M) -> Result<Metrics>,
    ) -> Result<TrainedModel<M>> {
        let mut adam = self.config.adam();
        let mut best = model.clone();
        let mut best_metrics: Option<Metrics> = None;
        let mut best_epoch = 0;
        let mut log = Vec::new();
        let mut start = 0;

        if let Some(path) = self.state_path().filter(|p| p.is_file()) {
            let state = store::read_store(&path)?;
            if state.require_meta("run_key", &path)? != self.run_key {
                return Err(Error::Config(format!(
                    "{} holds state from a different configuration or dataset; use a fresh checkpoint directory",
                    path.display()
                )));
            }
            store::assign_module(&mut model, "model", &state, &path)?;
            store::assign_module(&mut best, "best", &state, &path)?;
            restore_adam(&mut adam, &state, &path)?;
            let meta = |k: &str| -> Result<String> { Ok(state.require_meta(k, &path)?.to_string()) };
            start = parse_meta(&meta("completed_epochs")?, &path)?;
            best_epoch = parse_meta(&meta("best_epoch")?, &path)?;
            best_metrics = serde_json::from_str::<Option<(f64, Option<f64>)>>(&meta("best_metrics")?)
                .map_err(|e| checkpoint_err(&path, e.to_string()))?
                .map(|(loss, accuracy)| Metrics { loss, accuracy });
            log = serde_json::from_str(&meta("log")?).map_err(|e| checkpoint_err(&path, e.to_string()))?;
            log::info!("{}: resuming after epoch {start} from {}", self.stage, path.display());
        }

        for epoch in start..self.epochs {
            let lr = self.config.schedule.rate(self.base_lr as f32, epoch, self.epochs);
            let t0 = Instant::now();
            let train = train_epoch(&mut model, &mut adam, epoch, lr)?;
            let val = validate(&model)?;
            let wall = t0.elapsed().as_secs_f64();
            for (split, m) in [("train", train), ("val", val)] {
                log.push(LogRecord {
                    stage: self.stage.to_string(),
                    epoch: epoch + 1,
                    split: split.to_string(),
                    loss: m.loss,
                    accuracy: m.accuracy,
                    lr: f64::from(lr),
                    wall_time_s: wall,
                });
            }
            log::info!(
                "{} epoch {}/{}: train loss {:.4}, val loss {:.4}{}",
                self.stage,
                epoch + 1,
                self.epochs,
                train.loss,
                val.loss,
                val.accuracy.map_or(String::new(), |a| format!(", val acc {a:.4}"))
            );
            if best_metrics.is_none_or(|b| val.beats(&b, self.selection)) {
                best_metrics = Some(val);
                best = model.clone();
                best_epoch = epoch + 1;
            }
            if let Some(path) = self.state_path() {
                let mut state = Store::default();
                state.tensors.extend(store::module_entries(&model, "model"));
                state.tensors.extend(store::module_entries(&best, "best"));
                save_adam(&adam, &mut state);
                let m = &mut state.metadata;
                m.insert("run_key".into(), self.run_key.clone());
                m.insert("completed_epochs".into(), (epoch + 1).to_string());
                m.insert("best_epoch".into(), best_epoch.to_string());
                let bm = best_metrics.map(|b| (b.loss, b.accuracy));
                m.insert("best_metrics".into(), serde_json::to_string(&bm).expect("serializable"));
                m.insert("log".into(), serde_json::to_string(&log).expect("serializable"));
                store::write_store(&path, &state)?;
            }
            if let Some(path) = self.log_path() {
                write_log(&path, &log)?;
            }
        }
        if self.epochs == 0 {
            best = model;
        }
        Ok(TrainedModel { best, log, best_epoch })
    }
}

fn parse_meta(raw: &str, path: &Path) -> Result<usize> {
    raw.parse()
        .map_err(|_| checkpoint_err(path, format!("expected an integer, got `{raw}`")))
}

fn save_adam(adam: &Adam, state: &mut Store) {
    for (i, (m, v)) in adam.first.iter().zip(&adam.second).enumerate() {
        state.tensors.push(TensorEntry::new(format!("adam.m.{i}"), vec![m.len()], m.clone()));
        state.tensors.push(TensorEntry::new(format!("adam.v.{i}"), vec![v.len()], v.clone()));
    }
    state.metadata.insert("adam_steps".into(), adam.steps.to_string());
    state.metadata.insert("adam_slots".into(), adam.first.len().to_string());
}

fn restore_adam(adam: &mut Adam, state: &Store, path: &Path) -> Result<()> {
    let slots = parse_meta(state.require_meta("adam_slots", path)?, path)?;
    adam.steps = parse_meta(state.require_meta("adam_steps", path)?, path)? as u64;
    adam.first.clear();
    adam.second.clear();
    for i in 0..slots {
        for (prefix, dst) in [("m", &mut adam.first), ("v", &mut adam.second)] {
            let name = format!("adam.{prefix}.{i}");
            let t = state.get(&name).ok_or_else(|| checkpoint_err(path, format!("missing tensor `{name}`")))?;
            dst.push(t.data.clone());
        }
    }
    Ok(())
}

fn run_key(stage: &str, parts: &[&str]) -> String {
    let mut h = Sha256::new();
    h.update(stage.as_bytes());
    for p in parts {
        h.update([0]);
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}
