use crate::nn::gemm::{gemm, MatRef};
use crate::nn::{join, Module, Param, Tensor};

/// Per-channel batch normalization with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f32,
    pub eps: f32,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    normalized: Tensor,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(vec![channels], vec![1.0; channels]),
            beta: Param::new(vec![channels], vec![0.0; channels]),
            running_mean: Param::buffer(vec![channels], vec![0.0; channels]),
            running_var: Param::buffer(vec![channels], vec![1.0; channels]),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape;
        assert_eq!(c, self.channels());
        let hw = h * w;
        let mut out = x.clone();
        for b in 0..n {
            for ch in 0..c {
                let scale = self.gamma.value[ch] / (self.running_var.value[ch] + self.eps).sqrt();
                let shift = self.beta.value[ch] - self.running_mean.value[ch] * scale;
                let plane = &mut out.data[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                plane.iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
        out
    }

    /// Normalizes with batch statistics and updates the running averages
    /// (unbiased variance, as in the common reference implementations).
    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape;
        assert_eq!(c, self.channels());
        let hw = h * w;
        let count = (n * hw) as f64;
        let mut normalized = Tensor::zeros(x.shape);
        let mut out = Tensor::zeros(x.shape);
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let planes = (0..n).map(|b| &x.data[(b * c + ch) * hw..(b * c + ch + 1) * hw]);
            let mean = planes.clone().flatten().map(|&v| f64::from(v)).sum::<f64>() / count;
            let var = planes
                .flatten()
                .map(|&v| (f64::from(v) - mean).powi(2))
                .sum::<f64>()
                / count;
            let istd = 1.0 / (var + f64::from(self.eps)).sqrt();
            inv_std[ch] = istd as f32;
            let (g, bt) = (self.gamma.value[ch], self.beta.value[ch]);
            for b in 0..n {
                let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                for i in range {
                    let xh = ((f64::from(x.data[i]) - mean) * istd) as f32;
                    normalized.data[i] = xh;
                    out.data[i] = g * xh + bt;
                }
            }
            let m = f64::from(self.momentum);
            let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
            let rm = &mut self.running_mean.value[ch];
            *rm = ((1.0 - m) * f64::from(*rm) + m * mean) as f32;
            let rv = &mut self.running_var.value[ch];
            *rv = ((1.0 - m) * f64::from(*rv) + m * unbiased) as f32;
        }
        self.cache = Some(BnCache { normalized, inv_std });
        out
    }

    pub fn backward(&mut self, grad: &Tensor) -> Tensor {
        let cache = self.cache.take().expect("batch norm backward without a training forward");
        let [n, c, h, w] = grad.shape;
        let hw = h * w;
        let count = (n * hw) as f32;
        let mut dx = Tensor::zeros(grad.shape);
        for ch in 0..c {
            let mut dgamma = 0.0f64;
            let mut dbeta = 0.0f64;
            for b in 0..n {
                for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                    dgamma += f64::from(grad.data[i]) * f64::from(cache.normalized.data[i]);
                    dbeta += f64::from(grad.data[i]);
                }
            }
            self.gamma.grad[ch] += dgamma as f32;
            self.beta.grad[ch] += dbeta as f32;
            let k = self.gamma.value[ch] * cache.inv_std[ch] / count;
            let (dg, db) = (dgamma as f32, dbeta as f32);
            for b in 0..n {
                for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                    dx.data[i] = k * (count * grad.data[i] - db - cache.normalized.data[i] * dg);
                }
            }
        }
        dx
    }
}

impl Module for BatchNorm2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.gamma);
        f(&join(prefix, "bias"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.gamma);
        f(&join(prefix, "bias"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

/// Fully connected layer on `[N, in]` matrices.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out, in]`
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Linear {
            in_features,
            out_features,
            weight: Param::new(vec![out_features, in_features], vec![0.0; in_features * out_features]),
            bias: Param::new(vec![out_features], vec![0.0; out_features]),
            input: None,
        }
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        let n = x.batch();
        assert_eq!(x.item_len(), self.in_features, "linear input width");
        let mut out = Vec::with_capacity(n * self.out_features);
        for _ in 0..n {
            out.extend_from_slice(&self.bias.value);
        }
        gemm(
            1.0,
            MatRef::new(&x.data, n, self.in_features),
            MatRef::new(&self.weight.value, self.out_features, self.in_features).t(),
            1.0,
            &mut out,
        );
        Tensor::matrix(n, self.out_features, out)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let out = self.forward_eval(x);
        self.input = Some(x.clone());
        out
    }

    pub fn backward(&mut self, grad: &Tensor, input_grad: bool) -> Option<Tensor> {
        let x = self.input.take().expect("linear backward without a training forward");
        let n = x.batch();
        assert_eq!(grad.shape, [n, self.out_features, 1, 1]);
        gemm(
            1.0,
            MatRef::new(&grad.data, n, self.out_features).t(),
            MatRef::new(&x.data, n, self.in_features),
            1.0,
            &mut self.weight.grad,
        );
        for row in grad.data.chunks_exact(self.out_features) {
            for (b, g) in self.bias.grad.iter_mut().zip(row) {
                *b += g;
            }
        }
        input_grad.then(|| {
            let mut dx = vec![0.0; n * self.in_features];
            gemm(
                1.0,
                MatRef::new(&grad.data, n, self.out_features),
                MatRef::new(&self.weight.value, self.out_features, self.in_features),
                0.0,
                &mut dx,
            );
            Tensor::from_vec(x.shape, dx)
        })
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Max pooling with implicit negative-infinity padding.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<(Vec<usize>, [usize; 4])>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        MaxPool2d {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    fn run(&self, x: &Tensor) -> (Tensor, Vec<usize>) {
        let [n, c, h, w] = x.shape;
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (w + 2 * p - k) / s + 1;
        let mut out = Tensor::zeros([n, c, ho, wo]);
        let mut argmax = vec![0usize; out.len()];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = base;
                    for ki in 0..k {
                        let ih = (oh * s + ki) as isize - p as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let iw = (ow * s + kj) as isize - p as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            let i = base + ih as usize * w + iw as usize;
                            if x.data[i] > best {
                                best = x.data[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (plane * ho + oh) * wo + ow;
                    out.data[o] = best;
                    argmax[o] = best_i;
                }
            }
        }
        (out, argmax)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        self.run(x).0
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let (out, argmax) = self.run(x);
        self.cache = Some((argmax, x.shape));
        out
    }

    pub fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (argmax, shape) = self.cache.take().expect("max pool backward without a training forward");
        let mut dx = Tensor::zeros(shape);
        for (&i, &g) in argmax.iter().zip(&grad.data) {
            dx.data[i] += g;
        }
        dx
    }
}
