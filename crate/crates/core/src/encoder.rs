//! Embedding network: residual backbone followed by a stack of fully
//! connected layers whose last output is the embedding.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_model::Embedding;
use crate::ingestion::PreprocessedImage;
use crate::nn::resnet::reset_linear;
use crate::nn::{join, relu_backward, relu_forward, BackboneSpec, Linear, Module, Param, ResNet, Tensor};
use crate::seed::derive_seed;
use crate::store::{self, checkpoint_err, Store};
use crate::{Error, Result};

/// Environment variable naming a directory that holds `resnet18.safetensors`.
pub const WEIGHTS_DIR_ENV: &str = "AUTOMAC_WEIGHTS_DIR";
pub const PRETRAINED_FILE: &str = "resnet18.safetensors";

/// Images per forward pass in [`Encoder::embed`].
const EMBED_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Resnet18,
    /// Three-stage miniature for tests and CPU-scale runs.
    Tiny,
}

impl Backbone {
    pub fn spec(self) -> BackboneSpec {
        match self {
            Backbone::Resnet18 => BackboneSpec::resnet18(),
            Backbone::Tiny => BackboneSpec::tiny(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    pub fc_widths: Vec<usize>,
    pub pretrained: bool,
    /// Apply a ReLU after the last fully connected layer as well.
    pub final_activation: bool,
    /// Side length of the square network input.
    pub input_size: usize,
    /// Seed for every randomly initialized parameter.
    pub init_seed: u64,
    /// Directory with `resnet18.safetensors`; the environment variable
    /// takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights_dir: Option<PathBuf>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            backbone: Backbone::Resnet18,
            fc_widths: vec![512, 512],
            pretrained: true,
            final_activation: false,
            input_size: crate::ingestion::DEFAULT_INPUT_SIZE,
            init_seed: 0,
            weights_dir: None,
        }
    }
}

impl EncoderConfig {
    /// Randomly initialized miniature backbone on 64-pixel inputs with the
    /// standard 512-512 head.
    pub fn tiny() -> Self {
        EncoderConfig {
            backbone: Backbone::Tiny,
            pretrained: false,
            input_size: 64,
            ..EncoderConfig::default()
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.fc_widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fc_widths.is_empty() || self.fc_widths.contains(&0) {
            return Err(Error::Config(format!(
                "encoder fc_widths must be non-empty and positive, got {:?}",
                self.fc_widths
            )));
        }
        if self.input_size < crate::data_model::MIN_SLICE_SIDE {
            return Err(Error::Config(format!(
                "encoder input_size {} is below {}",
                self.input_size,
                crate::data_model::MIN_SLICE_SIDE
            )));
        }
        if self.pretrained && self.backbone != Backbone::Resnet18 {
            return Err(Error::Unsupported(format!(
                "pretrained weights exist only for resnet18, not {:?}",
                self.backbone
            )));
        }
        Ok(())
    }

    /// Location of the pretrained backbone file.
    pub fn weights_path(&self) -> PathBuf {
        let dir = std::env::var_os(WEIGHTS_DIR_ENV)
            .map(PathBuf::from)
            .or_else(|| self.weights_dir.clone())
            .unwrap_or_else(default_weights_dir);
        dir.join(PRETRAINED_FILE)
    }
}

fn default_weights_dir() -> PathBuf {
    std::env::var_os("HOME")
        .map(PathBuf::from)
        .unwrap_or_default()
        .join(".cache")
        .join("automac")
}

/// Backbone plus fully connected stack. Inference through `&self` is
/// read-only; training goes through `forward_train`/`backward`.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    backbone: ResNet,
    fc: Vec<Linear>,
    activations: Vec<Tensor>,
}

/// Builds an encoder: random initialization from `init_seed`, then the
/// pretrained backbone when requested.
pub fn build_encoder(config: &EncoderConfig) -> Result<Encoder> {
    config.validate()?;
    let mut encoder = Encoder::skeleton(config.clone());
    encoder.reset_parameters(config.init_seed);
    if config.pretrained {
        let path = config.weights_path();
        if !path.is_file() {
            return Err(Error::PretrainedUnavailable { path });
        }
        encoder.load_backbone(&path)?;
    }
    Ok(encoder)
}

impl Encoder {
    fn skeleton(config: EncoderConfig) -> Self {
        let spec = config.backbone.spec();
        let mut width = spec.feature_dim();
        let fc = config
            .fc_widths
            .iter()
            .map(|&out| {
                let layer = Linear::new(width, out);
                width = out;
                layer
            })
            .collect();
        Encoder {
            backbone: ResNet::new(spec),
            fc,
            activations: Vec::new(),
            config,
        }
    }

    fn reset_parameters(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "encoder-init", 0));
        self.backbone.reset_parameters(&mut rng);
        for layer in &mut self.fc {
            reset_linear(layer, &mut rng);
        }
    }

    /// Copies torchvision-named backbone tensors (`conv1.weight`,
    /// `layer1.0.bn1.running_mean`, ...) from a container file. The
    /// classifier and batch counters are ignored.
    fn load_backbone(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let store = store::decode_store(&bytes, path, |name| {
            !name.starts_with("fc.") && !name.ends_with("num_batches_tracked")
        })?;
        store::assign_module(&mut self.backbone, "", &store, path)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim()
    }

    pub fn input_size(&self) -> usize {
        self.config.input_size
    }

    /// Stacks preprocessed images into a `[N, 3, S, S]` batch.
    pub fn batch_tensor(&self, images: &[&PreprocessedImage]) -> Result<Tensor> {
        let s = self.config.input_size;
        let plane = s * s;
        let mut data = Vec::with_capacity(images.len() * 3 * plane);
        for img in images {
            if img.size() != s || img.plane().ncols() != s {
                return Err(Error::Shape(format!(
                    "image `{}` is {}x{}, encoder expects {s}x{s}",
                    img.source_id(),
                    img.plane().nrows(),
                    img.plane().ncols()
                )));
            }
            let start = data.len();
            data.extend(img.plane().iter().copied());
            data.extend_from_within(start..start + plane);
            data.extend_from_within(start..start + plane);
        }
        Ok(Tensor::from_vec([images.len(), 3, s, s], data))
    }

    fn head_eval(&self, mut h: Tensor) -> Tensor {
        let last = self.fc.len() - 1;
        for (i, layer) in self.fc.iter().enumerate() {
            h = layer.forward_eval(&h);
            if i < last || self.config.final_activation {
                relu_forward(&mut h);
            }
        }
        h
    }

    /// Inference forward pass: `[N, 3, S, S]` to `[N, embedding_dim]`.
    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        self.head_eval(self.backbone.forward_eval(x))
    }

    /// Training forward pass (batch statistics, caches for `backward`).
    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let mut h = self.backbone.forward_train(x);
        let last = self.fc.len() - 1;
        self.activations.clear();
        for (i, layer) in self.fc.iter_mut().enumerate() {
            h = layer.forward_train(&h);
            if i < last || self.config.final_activation {
                relu_forward(&mut h);
            }
            self.activations.push(h.clone());
        }
        h
    }

    /// Backpropagates an embedding gradient into all parameters.
    pub fn backward(&mut self, grad: &Tensor) {
        let last = self.fc.len() - 1;
        let mut g = grad.clone();
        for (i, layer) in self.fc.iter_mut().enumerate().rev() {
            let out = self.activations.pop().expect("encoder backward without a training forward");
            if i < last || self.config.final_activation {
                relu_backward(&mut g, &out);
            }
            g = layer.backward(&g, true).expect("input grad requested");
        }
        self.backbone.backward(&g);
    }

    /// One embedding per image, computed in fixed-size chunks.
    pub fn embed(&self, images: &[PreprocessedImage]) -> Result<Vec<Embedding>> {
        let refs: Vec<&PreprocessedImage> = images.iter().collect();
        self.embed_refs(&refs)
    }

    pub fn embed_refs(&self, images: &[&PreprocessedImage]) -> Result<Vec<Embedding>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EMBED_CHUNK) {
            let y = self.forward_eval(&self.batch_tensor(chunk)?);
            for i in 0..y.batch() {
                out.push(Embedding::new(y.item(i).to_vec())?);
            }
        }
        Ok(out)
    }

    /// SHA-256 over every parameter and buffer in canonical order: name,
    /// shape and little-endian values.
    pub fn fingerprint(&self) -> String {
        fingerprint_module(self)
    }

    /// Self-describing checkpoint: configuration, all tensors, fingerprint.
    pub fn to_store(&self) -> Result<Store> {
        let mut store = Store {
            tensors: store::module_entries(self, ""),
            ..Store::default()
        };
        let config = serde_json::to_string(&self.config).map_err(|e| Error::Data(e.to_string()))?;
        store.metadata.insert("kind".into(), "encoder".into());
        store.metadata.insert("config".into(), config);
        store.metadata.insert("fingerprint".into(), self.fingerprint());
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        store::write_store(path, &self.to_store()?)
    }

    /// Rebuilds an encoder from a checkpoint and verifies its fingerprint.
    pub fn from_store(store: &Store, path: &Path) -> Result<Self> {
        let config: EncoderConfig = serde_json::from_str(store.require_meta("config", path)?)
            .map_err(|e| checkpoint_err(path, format!("encoder config: {e}")))?;
        let mut encoder = Encoder::skeleton(config);
        store::assign_module(&mut encoder, "", store, path)?;
        let expected = store.require_meta("fingerprint", path)?;
        let found = encoder.fingerprint();
        if expected != found {
            return Err(Error::FingerprintMismatch {
                expected: expected.to_string(),
                found,
            });
        }
        Ok(encoder)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Encoder::from_store(&store::read_store(path)?, path)
    }
}

impl Module for Encoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        for (i, layer) in self.fc.iter().enumerate() {
            layer.visit(&join(prefix, &format!("fc.{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.backbone.visit_mut(&join(prefix, "backbone"), f);
        for (i, layer) in self.fc.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("fc.{i}")), f);
        }
    }
}

/// Content hash of a module's parameters and buffers.
pub fn fingerprint_module(module: &dyn Module) -> String {
    let mut hasher = Sha256::new();
    module.visit("", &mut |name, p| {
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update((p.shape.len() as u64).to_le_bytes());
        for &d in &p.shape {
            hasher.update((d as u64).to_le_bytes());
        }
        for v in &p.value {
            hasher.update(v.to_le_bytes());
        }
    });
    hex::encode(hasher.finalize())
}
