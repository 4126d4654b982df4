use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data_model::{GradePrediction, MotionGrade};
use crate::nn::resnet::reset_linear;
use crate::nn::{join, relu_backward, relu_forward, Linear, Module, Param, Tensor};
use crate::store::{self, checkpoint_err, Store};
use crate::{Error, Result};

/// Grade classifier on embeddings: one linear map to three logits, with an
/// optional ReLU hidden layer in front.
#[derive(Debug, Clone)]
pub struct MlpHead {
    hidden: Option<Linear>,
    out: Linear,
    hidden_act: Option<Tensor>,
}

impl MlpHead {
    pub fn new(input_dim: usize, hidden: Option<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = hidden.map(|width| {
            let mut layer = Linear::new(input_dim, width);
            reset_linear(&mut layer, &mut rng);
            layer
        });
        let mut out = Linear::new(hidden.as_ref().map_or(input_dim, |h| h.out_features), MotionGrade::COUNT);
        reset_linear(&mut out, &mut rng);
        MlpHead {
            hidden,
            out,
            hidden_act: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().unwrap_or(&self.out).in_features
    }

    pub fn hidden_width(&self) -> Option<usize> {
        self.hidden.as_ref().map(|h| h.out_features)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        match &self.hidden {
            Some(layer) => {
                let mut h = layer.forward_eval(x);
                relu_forward(&mut h);
                self.out.forward_eval(&h)
            }
            None => self.out.forward_eval(x),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        match &mut self.hidden {
            Some(layer) => {
                let mut h = layer.forward_train(x);
                relu_forward(&mut h);
                self.hidden_act = Some(h.clone());
                self.out.forward_train(&h)
            }
            None => self.out.forward_train(x),
        }
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, grad: &Tensor, input_grad: bool) -> Option<Tensor> {
        match &mut self.hidden {
            Some(layer) => {
                let mut g = self.out.backward(grad, true).expect("input grad requested");
                relu_backward(&mut g, &self.hidden_act.take().expect("head backward without forward"));
                layer.backward(&g, input_grad)
            }
            None => self.out.backward(grad, input_grad),
        }
    }

    /// Logits for a batch of embedding rows.
    pub fn logits(&self, embeddings: &[&[f32]]) -> Result<Vec<[f64; 3]>> {
        let d = self.input_dim();
        if let Some(bad) = embeddings.iter().find(|e| e.len() != d) {
            return Err(Error::Shape(format!("head expects {d}-D embeddings, got {}", bad.len())));
        }
        let data = embeddings.iter().flat_map(|e| e.iter().copied()).collect();
        let y = self.forward_eval(&Tensor::matrix(embeddings.len(), d, data));
        Ok((0..y.batch())
            .map(|i| {
                let r = y.item(i);
                [f64::from(r[0]), f64::from(r[1]), f64::from(r[2])]
            })
            .collect())
    }

    pub fn predict(&self, embeddings: &[&[f32]]) -> Result<Vec<GradePrediction>> {
        self.logits(embeddings)?.into_iter().map(GradePrediction::from_logits).collect()
    }

    /// Container holding the head tensors and the fingerprint of the encoder
    /// whose embeddings it consumes.
    pub fn to_store(&self, encoder_fingerprint: &str) -> Store {
        let mut store = Store {
            tensors: store::module_entries(self, "head"),
            ..Store::default()
        };
        store.metadata.insert("kind".into(), "head".into());
        store.metadata.insert("input_dim".into(), self.input_dim().to_string());
        store.metadata.insert(
            "hidden".into(),
            self.hidden_width().map_or_else(|| "none".into(), |w| w.to_string()),
        );
        store.metadata.insert("encoder_fingerprint".into(), encoder_fingerprint.into());
        store
    }

    pub fn save(&self, path: &Path, encoder_fingerprint: &str) -> Result<()> {
        store::write_store(path, &self.to_store(encoder_fingerprint))
    }

    /// Rebuilds a head; returns it with the bound encoder fingerprint.
    pub fn from_store(store: &Store, path: &Path) -> Result<(Self, String)> {
        let parse = |key: &str| -> Result<Option<usize>> {
            let raw = store.require_meta(key, path)?;
            if raw == "none" {
                return Ok(None);
            }
            raw.parse()
                .map(Some)
                .map_err(|_| checkpoint_err(path, format!("metadata `{key}` is not an integer: {raw}")))
        };
        let input_dim = parse("input_dim")?.ok_or_else(|| checkpoint_err(path, "input_dim missing"))?;
        let mut head = MlpHead::new(input_dim, parse("hidden")?, 0);
        store::assign_module(&mut head, "head", store, path)?;
        let fingerprint = store.require_meta("encoder_fingerprint", path)?.to_string();
        Ok((head, fingerprint))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        MlpHead::from_store(&store::read_store(path)?, path)
    }
}

impl Module for MlpHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        if let Some(h) = &self.hidden {
            h.visit(&join(prefix, "hidden"), f);
        }
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        if let Some(h) = &mut self.hidden {
            h.visit_mut(&join(prefix, "hidden"), f);
        }
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}
