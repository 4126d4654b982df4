use crate::nn::gemm::{gemm, MatRef};
use crate::nn::{join, Module, Param, Tensor};

/// Upper bound on the im2col buffer, in floats.
const COL_BUDGET: usize = 1 << 24;

/// Bias-free 2-D convolution (square kernel, symmetric zero padding).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out_channels, in_channels, kernel, kernel]`
    pub weight: Param,
    input: Option<Tensor>,
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let len = out_channels * in_channels * kernel * kernel;
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::new(vec![out_channels, in_channels, kernel, kernel], vec![0.0; len]),
            input: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    fn geometry(&self, x: &Tensor) -> Geometry {
        let [n, c, h, w] = x.shape;
        assert_eq!(c, self.in_channels, "conv expects {} input channels, got {c}", self.in_channels);
        assert!(
            h + 2 * self.padding >= self.kernel && w + 2 * self.padding >= self.kernel,
            "input {h}x{w} smaller than kernel"
        );
        let (ho, wo) = self.output_hw(h, w);
        Geometry { n, c, h, w, ho, wo }
    }

    fn chunk(&self, g: &Geometry) -> usize {
        let per_image = g.c * self.kernel * self.kernel * g.ho * g.wo;
        (COL_BUDGET / per_image.max(1)).clamp(1, g.n.max(1))
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        let g = self.geometry(x);
        let k_len = g.c * self.kernel * self.kernel;
        let plane = g.ho * g.wo;
        let mut out = Tensor::zeros([g.n, self.out_channels, g.ho, g.wo]);
        let chunk = self.chunk(&g);
        let mut col = Vec::new();
        let mut tmp = Vec::new();
        let mut n0 = 0;
        while n0 < g.n {
            let nb = chunk.min(g.n - n0);
            let cols = nb * plane;
            col.resize(k_len * cols, 0.0);
            self.im2col(x, &g, n0, nb, &mut col);
            tmp.resize(self.out_channels * cols, 0.0);
            gemm(
                1.0,
                MatRef::new(&self.weight.value, self.out_channels, k_len),
                MatRef::new(&col, k_len, cols),
                0.0,
                &mut tmp,
            );
            for co in 0..self.out_channels {
                for nl in 0..nb {
                    let src = &tmp[co * cols + nl * plane..co * cols + (nl + 1) * plane];
                    let dst = ((n0 + nl) * self.out_channels + co) * plane;
                    out.data[dst..dst + plane].copy_from_slice(src);
                }
            }
            n0 += nb;
        }
        out
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let out = self.forward_eval(x);
        self.input = Some(x.clone());
        out
    }

    /// Accumulates the weight gradient; returns the input gradient when asked.
    pub fn backward(&mut self, grad: &Tensor, input_grad: bool) -> Option<Tensor> {
        let x = self.input.take().expect("conv backward without a training forward");
        let g = self.geometry(&x);
        assert_eq!(grad.shape, [g.n, self.out_channels, g.ho, g.wo]);
        let k_len = g.c * self.kernel * self.kernel;
        let plane = g.ho * g.wo;
        let chunk = self.chunk(&g);
        let mut dx = input_grad.then(|| Tensor::zeros(x.shape));
        let (mut col, mut gmat, mut dcol) = (Vec::new(), Vec::new(), Vec::new());
        let mut n0 = 0;
        while n0 < g.n {
            let nb = chunk.min(g.n - n0);
            let cols = nb * plane;
            gmat.resize(self.out_channels * cols, 0.0);
            for co in 0..self.out_channels {
                for nl in 0..nb {
                    let src = ((n0 + nl) * self.out_channels + co) * plane;
                    gmat[co * cols + nl * plane..co * cols + (nl + 1) * plane]
                        .copy_from_slice(&grad.data[src..src + plane]);
                }
            }
            col.resize(k_len * cols, 0.0);
            self.im2col(&x, &g, n0, nb, &mut col);
            gemm(
                1.0,
                MatRef::new(&gmat, self.out_channels, cols),
                MatRef::new(&col, k_len, cols).t(),
                1.0,
                &mut self.weight.grad,
            );
            if let Some(dx) = dx.as_mut() {
                dcol.resize(k_len * cols, 0.0);
                gemm(
                    1.0,
                    MatRef::new(&self.weight.value, self.out_channels, k_len).t(),
                    MatRef::new(&gmat, self.out_channels, cols),
                    0.0,
                    &mut dcol,
                );
                self.col2im(&dcol, &g, n0, nb, dx);
            }
            n0 += nb;
        }
        dx
    }

    fn im2col(&self, x: &Tensor, g: &Geometry, n0: usize, nb: usize, col: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let plane = g.ho * g.wo;
        let cols = nb * plane;
        for c in 0..g.c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for nl in 0..nb {
                        let src = &x.data[((n0 + nl) * g.c + c) * g.h * g.w..][..g.h * g.w];
                        let dst = &mut dst[nl * plane..(nl + 1) * plane];
                        for oh in 0..g.ho {
                            let out_row = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                            let ih = (oh * s + ki) as isize - p as isize;
                            if ih < 0 || ih >= g.h as isize {
                                out_row.iter_mut().for_each(|v| *v = 0.0);
                                continue;
                            }
                            let src_row = &src[ih as usize * g.w..(ih as usize + 1) * g.w];
                            for (ow, v) in out_row.iter_mut().enumerate() {
                                let iw = (ow * s + kj) as isize - p as isize;
                                *v = if iw < 0 || iw >= g.w as isize {
                                    0.0
                                } else {
                                    src_row[iw as usize]
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f32], g: &Geometry, n0: usize, nb: usize, dx: &mut Tensor) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let plane = g.ho * g.wo;
        let cols = nb * plane;
        for c in 0..g.c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &col[row * cols..(row + 1) * cols];
                    for nl in 0..nb {
                        let base = ((n0 + nl) * g.c + c) * g.h * g.w;
                        let src = &src[nl * plane..(nl + 1) * plane];
                        for oh in 0..g.ho {
                            let ih = (oh * s + ki) as isize - p as isize;
                            if ih < 0 || ih >= g.h as isize {
                                continue;
                            }
                            let dst_row = base + ih as usize * g.w;
                            for ow in 0..g.wo {
                                let iw = (ow * s + kj) as isize - p as isize;
                                if iw >= 0 && iw < g.w as isize {
                                    dx.data[dst_row + iw as usize] += src[oh * g.wo + ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Module for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{assert_close, noise, numeric};

    fn direct_conv(conv: &Conv2d, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape;
        let (ho, wo) = conv.output_hw(h, w);
        let k = conv.kernel;
        let mut out = Tensor::zeros([n, conv.out_channels, ho, wo]);
        for b in 0..n {
            for co in 0..conv.out_channels {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = 0.0f64;
                        for ci in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let ih = (oh * conv.stride + ki) as isize - conv.padding as isize;
                                    let iw = (ow * conv.stride + kj) as isize - conv.padding as isize;
                                    if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                        continue;
                                    }
                                    let xv = x.data[((b * c + ci) * h + ih as usize) * w + iw as usize];
                                    let wv = conv.weight.value[((co * c + ci) * k + ki) * k + kj];
                                    acc += f64::from(xv) * f64::from(wv);
                                }
                            }
                        }
                        out.data[((b * conv.out_channels + co) * ho + oh) * wo + ow] = acc as f32;
                    }
                }
            }
        }
        out
    }

    fn setup(stride: usize, padding: usize, kernel: usize) -> (Conv2d, Tensor) {
        let mut conv = Conv2d::new(3, 4, kernel, stride, padding);
        conv.weight.value = noise(conv.weight.value.len(), 1);
        let x = Tensor::from_vec([2, 3, 7, 6], noise(2 * 3 * 7 * 6, 2));
        (conv, x)
    }

    #[test]
    fn matches_direct_convolution() {
        for (s, p, k) in [(1, 1, 3), (2, 1, 3), (2, 0, 1), (2, 3, 7)] {
            let (conv, x) = setup(s, p, k);
            let fast = conv.forward_eval(&x);
            let slow = direct_conv(&conv, &x);
            assert_eq!(fast.shape, slow.shape);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (mut conv, x) = setup(2, 1, 3);
        let out = conv.forward_train(&x);
        let weights = noise(out.len(), 3);
        let grad = Tensor::from_vec(out.shape, weights.clone());
        let dx = conv.backward(&grad, true).unwrap();
        for i in [0, 17, 55, x.len() - 1] {
            let num = numeric(|t| conv.forward_eval(t), &x, &weights, i, 1e-2);
            assert_close(f64::from(dx.data[i]), num, "conv dx");
        }
        let base = conv.clone();
        for i in [0, 9, 50, base.weight.value.len() - 1] {
            let w = Tensor::from_vec([1, 1, 1, base.weight.value.len()], base.weight.value.clone());
            let num = numeric(
                |t| {
                    let mut c = base.clone();
                    c.weight.value = t.data.clone();
                    c.forward_eval(&x)
                },
                &w,
                &weights,
                i,
                1e-2,
            );
            assert_close(f64::from(base.weight.grad[i]), num, "conv dw");
        }
    }
}
