use std::path::Path;

use ndarray::ArrayView2;

use sha2::Digest;

use super::{
    accuracy, augment, balanced_batches, run_key, shuffled_batches, Dataset, EpochLoop, LogRecord, Metrics,
    MlpHead, Selection, Stage1Method, TrainConfig, TrainedModel,
};
use crate::data_model::{Embedding, GradePrediction, MotionGrade};
use crate::encoder::{build_encoder, Encoder, EncoderConfig};
use crate::ingestion::PreprocessedImage;
use crate::losses::{cross_entropy_loss, ntxent_loss, supcon_loss};
use crate::nn::{join, Module, Param, Tensor};
use crate::seed::{derive_seed, rng_for};
use crate::store::{self, checkpoint_err, Store};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Stage1Outcome {
    /// Encoder at the epoch with the lowest validation loss.
    pub encoder: Encoder,
    pub log: Vec<LogRecord>,
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct Stage2Outcome {
    /// Head at the epoch with the best validation accuracy.
    pub head: MlpHead,
    pub log: Vec<LogRecord>,
    pub best_epoch: usize,
    /// Fingerprint of the frozen encoder, identical before and after.
    pub encoder_fingerprint: String,
}

fn matrix_view(t: &Tensor) -> ArrayView2<'_, f32> {
    ArrayView2::from_shape((t.batch(), t.item_len()), &t.data).expect("contiguous matrix")
}

fn grad_tensor(grad: ndarray::Array2<f32>) -> Tensor {
    let (n, d) = grad.dim();
    Tensor::matrix(n, d, grad.into_raw_vec_and_offset().0)
}

fn check_sizes(encoder_size: usize, sets: &[&Dataset]) -> Result<()> {
    for set in sets {
        if let Some(img) = set.images.iter().find(|i| i.size() != encoder_size) {
            return Err(Error::Shape(format!(
                "image `{}` is {}x{}, encoder expects {encoder_size}",
                img.source_id(),
                img.size(),
                img.size()
            )));
        }
    }
    Ok(())
}

/// Contrastive encoder training. Supervised contrastive batches are
/// class-balanced; SimCLR batches ignore labels. The validation loss uses
/// two fixed augmented views of every validation image.
pub fn train_stage1(
    encoder_config: &EncoderConfig,
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<Stage1Outcome> {
    config.validate()?;
    let encoder = build_encoder(encoder_config)?;
    check_sizes(encoder.input_size(), &[train, val])?;
    let method = config.stage1_method;
    if method == Stage1Method::None {
        return Ok(Stage1Outcome {
            encoder,
            log: Vec::new(),
            best_epoch: 0,
        });
    }
    if train.is_empty() || val.len() < 2 {
        return Err(Error::Data("stage 1 needs training data and at least 2 validation samples".into()));
    }
    let seed = derive_seed(config.seed, "stage1", 0);
    let views = if method == Stage1Method::Simclr { 2 } else { config.views };
    let val_views = fixed_views(&val.images, config, seed);
    let val_labels: Vec<usize> = val.label_indices().repeat(2);
    let supervised = method == Stage1Method::Supcon;
    // SimCLR never sees labels, including in the resume key.
    let train_key = if supervised { train.key() } else { unlabeled_key(train) };
    let encoder_key = serde_json::to_string(encoder_config).map_err(|e| Error::Data(e.to_string()))?;
    let config_key = serde_json::to_string(&TrainConfig {
        checkpoint_dir: None,
        ..config.clone()
    })
    .map_err(|e| Error::Data(e.to_string()))?;
    let looper = EpochLoop {
        stage: if supervised { "stage1_supcon" } else { "stage1_simclr" },
        config,
        epochs: config.stage1_epochs,
        base_lr: config.lr,
        selection: Selection::MinLoss,
        run_key: run_key("stage1", &[&encoder_key, &config_key, &train_key]),
    };
    let tau = config.temperature;
    let out = looper.run(
        encoder,
        |enc, adam, epoch, lr| {
            let mut rng = rng_for(seed, "epoch", epoch as u64);
            let batches = if supervised {
                balanced_batches(&train.labels, config.batch_size, &mut rng)?
            } else {
                shuffled_batches(train.len(), config.batch_size, 2, &mut rng)
            };
            let (mut total, mut count) = (0.0, 0usize);
            for batch in &batches {
                let mut imgs = Vec::with_capacity(batch.len() * views);
                let mut labels = Vec::with_capacity(batch.len() * views);
                for _ in 0..views {
                    for &i in batch {
                        imgs.push(augment(&train.images[i], &config.augment, &mut rng));
                        labels.push(train.labels[i].index());
                    }
                }
                let refs: Vec<&PreprocessedImage> = imgs.iter().collect();
                let x = enc.batch_tensor(&refs)?;
                enc.zero_grad();
                let z = enc.forward_train(&x);
                let value = if supervised {
                    supcon_loss(matrix_view(&z), &labels, tau)?
                } else {
                    let n = batch.len();
                    let zv = matrix_view(&z);
                    ntxent_loss(zv.slice(ndarray::s![..n, ..]), zv.slice(ndarray::s![n.., ..]), tau)?
                };
                enc.backward(&grad_tensor(value.grad));
                adam.step(enc, lr);
                total += value.loss * batch.len() as f64;
                count += batch.len();
            }
            Ok(Metrics {
                loss: total / count.max(1) as f64,
                accuracy: None,
            })
        },
        |enc| {
            let emb = embed_matrix(enc, &val_views)?;
            let n = val.len();
            let view = ArrayView2::from_shape((2 * n, enc.embedding_dim()), &emb).expect("embedding matrix");
            let loss = if supervised {
                supcon_loss(view, &val_labels, tau)?.loss
            } else {
                ntxent_loss(view.slice(ndarray::s![..n, ..]), view.slice(ndarray::s![n.., ..]), tau)?.loss
            };
            Ok(Metrics { loss, accuracy: None })
        },
    )?;
    Ok(Stage1Outcome {
        encoder: out.best,
        log: out.log,
        best_epoch: out.best_epoch,
    })
}

fn unlabeled_key(set: &Dataset) -> String {
    let ids: Vec<&str> = set.images.iter().map(PreprocessedImage::source_id).collect();
    run_key("images", &ids)
}

/// Two augmented views per image (all first views, then all second views)
/// from a stream that does not depend on the epoch.
fn fixed_views(images: &[PreprocessedImage], config: &TrainConfig, seed: u64) -> Vec<PreprocessedImage> {
    let mut rng = rng_for(seed, "val-views", 0);
    let mut out = Vec::with_capacity(2 * images.len());
    for _ in 0..2 {
        for img in images {
            out.push(augment(img, &config.augment, &mut rng));
        }
    }
    out
}

fn embed_matrix(encoder: &Encoder, images: &[PreprocessedImage]) -> Result<Vec<f32>> {
    Ok(encoder.embed(images)?.into_iter().flat_map(Embedding::into_vec).collect())
}

/// Trains the classifier head on frozen encoder embeddings. The encoder is
/// only read; its fingerprint is checked before and after.
pub fn train_stage2(encoder: &Encoder, config: &TrainConfig, train: &Dataset, val: &Dataset) -> Result<Stage2Outcome> {
    config.validate()?;
    check_sizes(encoder.input_size(), &[train, val])?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("stage 2 needs training and validation samples".into()));
    }
    let before = encoder.fingerprint();
    let dim = encoder.embedding_dim();
    let cached = if config.stage2_cached {
        Some(embed_matrix(encoder, &train.images)?)
    } else {
        None
    };
    let rows_for = |batch: &[usize]| -> Result<Vec<f32>> {
        match &cached {
            Some(all) => Ok(batch
                .iter()
                .flat_map(|&i| all[i * dim..(i + 1) * dim].iter().copied())
                .collect()),
            None => {
                let refs: Vec<&PreprocessedImage> = batch.iter().map(|&i| &train.images[i]).collect();
                Ok(encoder.embed_refs(&refs)?.into_iter().flat_map(Embedding::into_vec).collect())
            }
        }
    };
    let head_data = HeadData {
        dim,
        train_labels: &train.labels,
        val_rows: embed_matrix(encoder, &val.images)?,
        val_labels: &val.labels,
        data_key: format!("{before}:{}", train.key()),
    };
    let out = fit_head(config, &head_data, rows_for)?;
    let after = encoder.fingerprint();
    if after != before {
        return Err(Error::FingerprintMismatch {
            expected: before,
            found: after,
        });
    }
    Ok(Stage2Outcome {
        head: out.best,
        log: out.log,
        best_epoch: out.best_epoch,
        encoder_fingerprint: before,
    })
}

/// Head trained directly on precomputed embeddings.
#[derive(Debug, Clone)]
pub struct HeadOutcome {
    /// Head at the epoch with the best validation accuracy.
    pub head: MlpHead,
    pub log: Vec<LogRecord>,
    pub best_epoch: usize,
}

/// Stage-2 head training on embeddings that are already computed, with the
/// same batching, schedule and selection as [`train_stage2`].
pub fn train_head(
    config: &TrainConfig,
    train: &[Embedding],
    train_labels: &[MotionGrade],
    val: &[Embedding],
    val_labels: &[MotionGrade],
) -> Result<HeadOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("head training needs training and validation samples".into()));
    }
    if train.len() != train_labels.len() || val.len() != val_labels.len() {
        return Err(Error::Shape("embeddings and labels differ in length".into()));
    }
    let dim = train[0].dim();
    if train.iter().chain(val).any(|e| e.dim() != dim) {
        return Err(Error::Shape(format!("embeddings differ in length from {dim}")));
    }
    let mut h = sha2::Sha256::new();
    for (e, g) in train.iter().zip(train_labels) {
        for v in e.values() {
            h.update(v.to_le_bytes());
        }
        h.update([g.index() as u8]);
    }
    let head_data = HeadData {
        dim,
        train_labels,
        val_rows: val.iter().flat_map(|e| e.values().iter().copied()).collect(),
        val_labels,
        data_key: hex::encode(h.finalize()),
    };
    let rows_for = |batch: &[usize]| -> Result<Vec<f32>> {
        Ok(batch.iter().flat_map(|&i| train[i].values().iter().copied()).collect())
    };
    let out = fit_head(config, &head_data, rows_for)?;
    Ok(HeadOutcome {
        head: out.best,
        log: out.log,
        best_epoch: out.best_epoch,
    })
}

struct HeadData<'a> {
    dim: usize,
    train_labels: &'a [MotionGrade],
    val_rows: Vec<f32>,
    val_labels: &'a [MotionGrade],
    data_key: String,
}

fn fit_head(
    config: &TrainConfig,
    data: &HeadData<'_>,
    rows_for: impl Fn(&[usize]) -> Result<Vec<f32>>,
) -> Result<TrainedModel<MlpHead>> {
    let seed = derive_seed(config.seed, "stage2", 0);
    let dim = data.dim;
    let n = data.train_labels.len();
    let val_labels: Vec<usize> = data.val_labels.iter().map(|g| g.index()).collect();
    let config_key = serde_json::to_string(&TrainConfig {
        checkpoint_dir: None,
        stage2_cached: true,
        ..config.clone()
    })
    .map_err(|e| Error::Data(e.to_string()))?;
    let looper = EpochLoop {
        stage: "stage2",
        config,
        epochs: config.stage2_epochs,
        base_lr: config.head_lr,
        selection: Selection::MaxAccuracy,
        run_key: run_key("stage2", &[&config_key, &data.data_key]),
    };
    let head = MlpHead::new(dim, config.head_hidden, derive_seed(seed, "head-init", 0));
    looper.run(
        head,
        |head, adam, epoch, lr| {
            let mut rng = rng_for(seed, "epoch", epoch as u64);
            let batches = shuffled_batches(n, config.batch_size, 1, &mut rng);
            let (mut total, mut correct, mut count) = (0.0, 0.0, 0usize);
            for batch in &batches {
                let rows = rows_for(batch)?;
                let labels: Vec<usize> = batch.iter().map(|&i| data.train_labels[i].index()).collect();
                head.zero_grad();
                let logits = head.forward_train(&Tensor::matrix(batch.len(), dim, rows));
                let value = cross_entropy_loss(matrix_view(&logits), &labels)?;
                head.backward(&grad_tensor(value.grad), false);
                adam.step(head, lr);
                let grades: Vec<_> = batch.iter().map(|&i| data.train_labels[i]).collect();
                correct += accuracy(&rows3(&logits), &grades) * batch.len() as f64;
                total += value.loss * batch.len() as f64;
                count += batch.len();
            }
            Ok(Metrics {
                loss: total / count as f64,
                accuracy: Some(correct / count as f64),
            })
        },
        |head| {
            let logits = head.forward_eval(&Tensor::matrix(data.val_labels.len(), dim, data.val_rows.clone()));
            let loss = cross_entropy_loss(matrix_view(&logits), &val_labels)?.loss;
            Ok(Metrics {
                loss,
                accuracy: Some(accuracy(&rows3(&logits), data.val_labels)),
            })
        },
    )
}

fn rows3(logits: &Tensor) -> Vec<[f64; 3]> {
    (0..logits.batch())
        .map(|i| {
            let r = logits.item(i);
            [f64::from(r[0]), f64::from(r[1]), f64::from(r[2])]
        })
        .collect()
}

/// Encoder and head trained jointly with cross-entropy.
#[derive(Debug, Clone)]
pub struct SupervisedNet {
    pub encoder: Encoder,
    pub head: MlpHead,
}

#[derive(Debug, Clone)]
pub struct SupervisedOutcome {
    /// Network at the epoch with the best validation accuracy.
    pub net: SupervisedNet,
    pub log: Vec<LogRecord>,
    pub best_epoch: usize,
}

impl SupervisedNet {
    pub fn predict(&self, images: &[PreprocessedImage]) -> Result<Vec<GradePrediction>> {
        let emb = self.encoder.embed(images)?;
        let rows: Vec<&[f32]> = emb.iter().map(Embedding::values).collect();
        self.head.predict(&rows)
    }

    /// Single end-to-end checkpoint.
    pub fn to_store(&self) -> Result<Store> {
        let mut store = self.encoder.to_store()?;
        let head = self.head.to_store(&self.encoder.fingerprint());
        store.tensors.extend(head.tensors);
        store.metadata.insert("kind".into(), "supervised".into());
        for key in ["input_dim", "hidden"] {
            store.metadata.insert(key.into(), head.metadata[key].clone());
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        store::write_store(path, &self.to_store()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut store = store::read_store(path)?;
        if store.meta("kind") != Some("supervised") {
            return Err(checkpoint_err(path, "not an end-to-end supervised checkpoint"));
        }
        let encoder = Encoder::from_store(&store, path)?;
        let fingerprint = encoder.fingerprint();
        store.metadata.insert("encoder_fingerprint".into(), fingerprint);
        let (head, _) = MlpHead::from_store(&store, path)?;
        Ok(SupervisedNet { encoder, head })
    }
}

impl Module for SupervisedNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.encoder.visit(prefix, f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_mut(prefix, f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// End-to-end cross-entropy training of encoder plus head on single
/// augmented views; selection by validation accuracy.
pub fn train_supervised_baseline(
    encoder_config: &EncoderConfig,
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<SupervisedOutcome> {
    config.validate()?;
    let encoder = build_encoder(encoder_config)?;
    check_sizes(encoder.input_size(), &[train, val])?;
    if train.len() < 2 || val.is_empty() {
        return Err(Error::Data("supervised training needs at least 2 training and 1 validation sample".into()));
    }
    let seed = derive_seed(config.seed, "supervised", 0);
    let head = MlpHead::new(encoder.embedding_dim(), config.head_hidden, derive_seed(seed, "head-init", 0));
    let encoder_key = serde_json::to_string(encoder_config).map_err(|e| Error::Data(e.to_string()))?;
    let config_key = serde_json::to_string(&TrainConfig {
        checkpoint_dir: None,
        ..config.clone()
    })
    .map_err(|e| Error::Data(e.to_string()))?;
    let looper = EpochLoop {
        stage: "supervised",
        config,
        epochs: config.supervised_epochs,
        base_lr: config.lr,
        selection: Selection::MaxAccuracy,
        run_key: run_key("supervised", &[&encoder_key, &config_key, &train.key()]),
    };
    let val_labels = val.label_indices();
    let out = looper.run(
        SupervisedNet { encoder, head },
        |net, adam, epoch, lr| {
            let mut rng = rng_for(seed, "epoch", epoch as u64);
            let batches = shuffled_batches(train.len(), config.batch_size, 2, &mut rng);
            let (mut total, mut correct, mut count) = (0.0, 0.0, 0usize);
            for batch in &batches {
                let imgs: Vec<PreprocessedImage> = batch
                    .iter()
                    .map(|&i| augment(&train.images[i], &config.augment, &mut rng))
                    .collect();
                let refs: Vec<&PreprocessedImage> = imgs.iter().collect();
                let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i].index()).collect();
                let x = net.encoder.batch_tensor(&refs)?;
                net.zero_grad();
                let z = net.encoder.forward_train(&x);
                let logits = net.head.forward_train(&z);
                let value = cross_entropy_loss(matrix_view(&logits), &labels)?;
                let gz = net.head.backward(&grad_tensor(value.grad), true).expect("input grad requested");
                net.encoder.backward(&gz);
                adam.step(net, lr);
                let grades: Vec<_> = batch.iter().map(|&i| train.labels[i]).collect();
                correct += accuracy(&rows3(&logits), &grades) * batch.len() as f64;
                total += value.loss * batch.len() as f64;
                count += batch.len();
            }
            Ok(Metrics {
                loss: total / count.max(1) as f64,
                accuracy: Some(correct / count.max(1) as f64),
            })
        },
        |net| {
            let emb = embed_matrix(&net.encoder, &val.images)?;
            let logits = net.head.forward_eval(&Tensor::matrix(val.len(), net.encoder.embedding_dim(), emb));
            let loss = cross_entropy_loss(matrix_view(&logits), &val_labels)?.loss;
            Ok(Metrics {
                loss,
                accuracy: Some(accuracy(&rows3(&logits), &val.labels)),
            })
        },
    )?;
    Ok(SupervisedOutcome {
        net: out.best,
        log: out.log,
        best_epoch: out.best_epoch,
    })
}
