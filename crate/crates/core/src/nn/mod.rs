//! Minimal CPU layer engine for the encoder: NCHW `f32` activations, layers
//! with hand-written backward passes, and GEMM through `matrixmultiply`.
//!
//! Layers expose two forward paths. `forward_eval` takes `&self` and keeps
//! nothing, so inference is shareable across threads. `forward_train` caches
//! what the matching `backward` needs and accumulates parameter gradients.

pub mod conv;
pub mod gemm;
pub mod layers;
pub mod optim;
pub mod resnet;

pub use conv::Conv2d;
pub use layers::{BatchNorm2d, Linear, MaxPool2d};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use resnet::{BackboneSpec, ResNet};

/// Dense NCHW tensor. Matrices are stored as `[rows, cols, 1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 4],
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape {shape:?} does not match {} values",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        Self::from_vec([rows, cols, 1, 1], data)
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn item(&self, i: usize) -> &[f32] {
        let n = self.item_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Learnable tensor (with gradient) or non-learnable buffer such as batch
/// norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub trainable: bool,
}

impl Param {
    pub fn new(shape: Vec<usize>, value: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Param {
            shape,
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(shape: Vec<usize>, value: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        Param {
            shape,
            value,
            grad: Vec::new(),
            trainable: false,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Named traversal over parameters and buffers in a fixed canonical order.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    fn trainable_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.trainable {
                n += p.value.len()
            }
        });
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn relu_forward(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(grad: &mut Tensor, output: &Tensor) {
    for (g, &y) in grad.data.iter_mut().zip(&output.data) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Mean over spatial positions: `[N, C, H, W] -> [N, C, 1, 1]`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape;
    let hw = h * w;
    let data = x
        .data
        .chunks_exact(hw)
        .map(|plane| plane.iter().sum::<f32>() / hw as f32)
        .collect();
    Tensor::from_vec([n, c, 1, 1], data)
}

pub fn global_avg_pool_backward(grad: &Tensor, input_shape: [usize; 4]) -> Tensor {
    let hw = input_shape[2] * input_shape[3];
    let scale = 1.0 / hw as f32;
    let mut out = Vec::with_capacity(grad.len() * hw);
    for &g in &grad.data {
        out.extend(std::iter::repeat_n(g * scale, hw));
    }
    Tensor::from_vec(input_shape, out)
}

#[cfg(test)]
pub(crate) mod gradcheck {
    use super::*;

    /// Deterministic pseudo-random values in `[-1, 1)`.
    pub fn noise(len: usize, seed: u64) -> Vec<f32> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Weighted-sum objective `sum(w * f(x))` and its central difference
    /// with respect to one coordinate.
    pub fn numeric<F: FnMut(&Tensor) -> Tensor>(
        mut f: F,
        x: &Tensor,
        weights: &[f32],
        index: usize,
        eps: f32,
    ) -> f64 {
        let objective = |t: &Tensor| -> f64 {
            t.data
                .iter()
                .zip(weights)
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum()
        };
        let mut plus = x.clone();
        plus.data[index] += eps;
        let mut minus = x.clone();
        minus.data[index] -= eps;
        (objective(&f(&plus)) - objective(&f(&minus))) / (2.0 * f64::from(eps))
    }

    pub fn assert_close(analytic: f64, numeric: f64, what: &str) {
        let tol = 2e-2 * numeric.abs().max(analytic.abs()).max(1.0);
        assert!(
            (analytic - numeric).abs() < tol,
            "{what}: analytic {analytic} vs numeric {numeric}"
        );
    }
}
