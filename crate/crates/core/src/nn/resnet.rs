//! Residual backbone built from basic blocks, with torchvision parameter names
//! (`conv1`, `bn1`, `layer1.0.conv1`, `layer2.0.downsample.0`, ...).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::nn::{
    global_avg_pool, global_avg_pool_backward, join, relu_backward, relu_forward, BatchNorm2d, Conv2d,
    Linear, MaxPool2d, Module, Param, Tensor,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_pool: bool,
    /// Output channels of each stage.
    pub widths: Vec<usize>,
    /// Basic blocks per stage.
    pub blocks: Vec<usize>,
}

impl BackboneSpec {
    /// 18-layer ImageNet layout.
    pub fn resnet18() -> Self {
        BackboneSpec {
            stem_channels: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
            widths: vec![64, 128, 256, 512],
            blocks: vec![2, 2, 2, 2],
        }
    }

    /// Three-stage miniature with one block per stage, for fast tests and
    /// CPU-scale experiments.
    pub fn tiny() -> Self {
        BackboneSpec {
            stem_channels: 16,
            stem_kernel: 3,
            stem_stride: 2,
            stem_pool: false,
            widths: vec![16, 32, 64],
            blocks: vec![1, 1, 1],
        }
    }

    pub fn feature_dim(&self) -> usize {
        *self.widths.last().expect("backbone has at least one stage")
    }
}

#[derive(Debug, Clone)]
pub struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
    cache: Option<(Tensor, Tensor)>,
}

impl BasicBlock {
    fn new(in_ch: usize, out_ch: usize, stride: usize) -> Self {
        let downsample = (stride != 1 || in_ch != out_ch)
            .then(|| (Conv2d::new(in_ch, out_ch, 1, stride, 0), BatchNorm2d::new(out_ch)));
        BasicBlock {
            conv1: Conv2d::new(in_ch, out_ch, 3, stride, 1),
            bn1: BatchNorm2d::new(out_ch),
            conv2: Conv2d::new(out_ch, out_ch, 3, 1, 1),
            bn2: BatchNorm2d::new(out_ch),
            downsample,
            cache: None,
        }
    }

    fn forward_eval(&self, x: &Tensor) -> Tensor {
        let mut h = self.bn1.forward_eval(&self.conv1.forward_eval(x));
        relu_forward(&mut h);
        let mut out = self.bn2.forward_eval(&self.conv2.forward_eval(&h));
        match &self.downsample {
            Some((conv, bn)) => add_assign(&mut out, &bn.forward_eval(&conv.forward_eval(x))),
            None => add_assign(&mut out, x),
        }
        relu_forward(&mut out);
        out
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let mut h = self.bn1.forward_train(&self.conv1.forward_train(x));
        relu_forward(&mut h);
        let mut out = self.bn2.forward_train(&self.conv2.forward_train(&h));
        match &mut self.downsample {
            Some((conv, bn)) => add_assign(&mut out, &bn.forward_train(&conv.forward_train(x))),
            None => add_assign(&mut out, x),
        }
        relu_forward(&mut out);
        self.cache = Some((h, out.clone()));
        out
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (h, out) = self.cache.take().expect("block backward without a training forward");
        let mut g = grad.clone();
        relu_backward(&mut g, &out);
        let mut gh = self
            .conv2
            .backward(&self.bn2.backward(&g), true)
            .expect("input grad requested");
        relu_backward(&mut gh, &h);
        let mut dx = self
            .conv1
            .backward(&self.bn1.backward(&gh), true)
            .expect("input grad requested");
        match &mut self.downsample {
            Some((conv, bn)) => {
                let gd = conv.backward(&bn.backward(&g), true).expect("input grad requested");
                add_assign(&mut dx, &gd);
            }
            None => add_assign(&mut dx, &g),
        }
        dx
    }
}

impl Module for BasicBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        if let Some((conv, bn)) = &self.downsample {
            conv.visit(&join(prefix, "downsample.0"), f);
            bn.visit(&join(prefix, "downsample.1"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.bn2.visit_mut(&join(prefix, "bn2"), f);
        if let Some((conv, bn)) = &mut self.downsample {
            conv.visit_mut(&join(prefix, "downsample.0"), f);
            bn.visit_mut(&join(prefix, "downsample.1"), f);
        }
    }
}

fn add_assign(a: &mut Tensor, b: &Tensor) {
    assert_eq!(a.shape, b.shape, "residual shapes differ");
    a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
}

/// Convolutional trunk ending in global average pooling: `[N, 3, H, W]` to
/// `[N, feature_dim]`.
#[derive(Debug, Clone)]
pub struct ResNet {
    spec: BackboneSpec,
    conv1: Conv2d,
    bn1: BatchNorm2d,
    pool: Option<MaxPool2d>,
    stages: Vec<Vec<BasicBlock>>,
    cache: Option<(Tensor, [usize; 4])>,
}

impl ResNet {
    pub fn new(spec: BackboneSpec) -> Self {
        let conv1 = Conv2d::new(3, spec.stem_channels, spec.stem_kernel, spec.stem_stride, spec.stem_kernel / 2);
        let bn1 = BatchNorm2d::new(spec.stem_channels);
        let pool = spec.stem_pool.then(|| MaxPool2d::new(3, 2, 1));
        let mut in_ch = spec.stem_channels;
        let stages = spec
            .widths
            .iter()
            .zip(&spec.blocks)
            .enumerate()
            .map(|(i, (&width, &count))| {
                (0..count)
                    .map(|j| {
                        let stride = if i > 0 && j == 0 { 2 } else { 1 };
                        let block = BasicBlock::new(in_ch, width, stride);
                        in_ch = width;
                        block
                    })
                    .collect()
            })
            .collect();
        ResNet {
            spec,
            conv1,
            bn1,
            pool,
            stages,
            cache: None,
        }
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    /// Kaiming-normal (fan-out) convolutions, unit/zero batch norm.
    pub fn reset_parameters<R: Rng>(&mut self, rng: &mut R) {
        self.visit_mut("", &mut |name, p| {
            if !p.trainable {
                p.value.iter_mut().for_each(|v| *v = 0.0);
                if name.ends_with("running_var") {
                    p.value.iter_mut().for_each(|v| *v = 1.0);
                }
            } else if p.shape.len() == 4 {
                let fan_out = p.shape[0] * p.shape[2] * p.shape[3];
                let normal = Normal::new(0.0, (2.0 / fan_out as f64).sqrt()).expect("valid std");
                p.value.iter_mut().for_each(|v| *v = normal.sample(rng) as f32);
            } else if name.ends_with("weight") {
                p.value.iter_mut().for_each(|v| *v = 1.0);
            } else {
                p.value.iter_mut().for_each(|v| *v = 0.0);
            }
        });
    }

    fn stem_eval(&self, x: &Tensor) -> Tensor {
        let mut h = self.bn1.forward_eval(&self.conv1.forward_eval(x));
        relu_forward(&mut h);
        match &self.pool {
            Some(pool) => pool.forward_eval(&h),
            None => h,
        }
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        let mut h = self.stem_eval(x);
        for block in self.stages.iter().flatten() {
            h = block.forward_eval(&h);
        }
        let pooled = global_avg_pool(&h);
        Tensor::matrix(pooled.shape[0], pooled.shape[1], pooled.data)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let mut h = self.bn1.forward_train(&self.conv1.forward_train(x));
        relu_forward(&mut h);
        let stem_out = h.clone();
        if let Some(pool) = &mut self.pool {
            h = pool.forward_train(&h);
        }
        for block in self.stages.iter_mut().flatten() {
            h = block.forward_train(&h);
        }
        self.cache = Some((stem_out, h.shape));
        let pooled = global_avg_pool(&h);
        Tensor::matrix(pooled.shape[0], pooled.shape[1], pooled.data)
    }

    /// Backpropagates a `[N, feature_dim]` gradient into the parameters.
    pub fn backward(&mut self, grad: &Tensor) {
        let (stem_out, last_shape) = self.cache.take().expect("backbone backward without a training forward");
        let mut g = global_avg_pool_backward(grad, last_shape);
        for block in self.stages.iter_mut().flatten().rev() {
            g = block.backward(&g);
        }
        if let Some(pool) = &mut self.pool {
            g = pool.backward(&g);
        }
        relu_backward(&mut g, &stem_out);
        let g = self.bn1.backward(&g);
        self.conv1.backward(&g, false);
    }
}

impl Module for ResNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        for (i, stage) in self.stages.iter().enumerate() {
            for (j, block) in stage.iter().enumerate() {
                block.visit(&join(prefix, &format!("layer{}.{j}", i + 1)), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            for (j, block) in stage.iter_mut().enumerate() {
                block.visit_mut(&join(prefix, &format!("layer{}.{j}", i + 1)), f);
            }
        }
    }
}

/// PyTorch default linear init: uniform in `±1/sqrt(fan_in)`.
pub fn reset_linear<R: Rng>(layer: &mut Linear, rng: &mut R) {
    let bound = 1.0 / (layer.in_features as f32).sqrt();
    layer
        .weight
        .value
        .iter_mut()
        .chain(layer.bias.value.iter_mut())
        .for_each(|v| *v = rng.random_range(-bound..bound));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{assert_close, noise, numeric};
    use rand::SeedableRng;

    #[test]
    fn resnet18_has_the_reference_parameter_count() {
        let net = ResNet::new(BackboneSpec::resnet18());
        // torchvision resnet18 without its 1000-way classifier
        assert_eq!(net.trainable_count(), 11_689_512 - 513_000);
        let mut names = Vec::new();
        net.visit("", &mut |n, _| names.push(n.to_string()));
        assert!(names.contains(&"layer2.0.downsample.1.running_var".to_string()));
        assert!(names.contains(&"layer4.1.conv2.weight".to_string()));
    }

    #[test]
    fn block_input_gradient_matches_finite_differences() {
        let mut block = BasicBlock::new(2, 3, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        block.visit_mut("", &mut |_, p| {
            if p.trainable && p.shape.len() == 4 {
                p.value.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            }
        });
        let x = Tensor::from_vec([2, 2, 5, 5], noise(100, 9));
        let out = block.forward_train(&x);
        let weights = noise(out.len(), 10);
        let dx = block.backward(&Tensor::from_vec(out.shape, weights.clone()));
        let probe = block.clone();
        for i in [0, 13, 49, 99] {
            let num = numeric(|t| probe.clone().forward_train(t), &x, &weights, i, 5e-3);
            assert_close(f64::from(dx.data[i]), num, "block dx");
        }
    }

    #[test]
    fn eval_forward_is_per_sample() {
        let mut net = ResNet::new(BackboneSpec::tiny());
        net.reset_parameters(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        let x = Tensor::from_vec([3, 3, 32, 32], noise(3 * 3 * 32 * 32, 1));
        let all = net.forward_eval(&x);
        let one = net.forward_eval(&Tensor::from_vec([1, 3, 32, 32], x.item(1).to_vec()));
        assert_eq!(all.shape, [3, 64, 1, 1]);
        for (a, b) in all.item(1).iter().zip(&one.data) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
