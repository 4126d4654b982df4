use serde::{Deserialize, Serialize};

use crate::nn::Module;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Decoupled weight decay; 0 gives plain Adam.
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the base rate to zero over the run.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f32, epoch: usize, epochs: usize) -> f32 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = epoch as f64 / epochs.max(1) as f64;
                (f64::from(base) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())) as f32
            }
        }
    }
}

/// Adam over the trainable parameters of one module. Moment buffers follow
/// the module's visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub steps: u64,
    pub first: Vec<Vec<f32>>,
    pub second: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&mut self, module: &mut dyn Module, lr: f32) {
        self.steps += 1;
        let c = self.config;
        let bias1 = 1.0 - f64::from(c.beta1).powi(self.steps as i32);
        let bias2 = 1.0 - f64::from(c.beta2).powi(self.steps as i32);
        let step_size = (f64::from(lr) / bias1) as f32;
        let bias2_sqrt = bias2.sqrt() as f32;
        let mut slot = 0;
        let (first, second) = (&mut self.first, &mut self.second);
        module.visit_mut("", &mut |_, p| {
            if !p.trainable {
                return;
            }
            if first.len() == slot {
                first.push(vec![0.0; p.value.len()]);
                second.push(vec![0.0; p.value.len()]);
            }
            let (m, v) = (&mut first[slot], &mut second[slot]);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                if c.weight_decay > 0.0 {
                    p.value[i] -= lr * c.weight_decay * p.value[i];
                }
                p.value[i] -= step_size * m[i] / (v[i].sqrt() / bias2_sqrt + c.eps);
            }
            slot += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, Tensor};

    #[test]
    fn first_step_moves_each_weight_by_the_learning_rate() {
        let mut lin = Linear::new(2, 1);
        lin.weight.value = vec![0.5, -0.5];
        lin.weight.grad = vec![3.0, -0.01];
        lin.bias.grad = vec![0.0];
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut lin, 0.1);
        assert!((lin.weight.value[0] - 0.4).abs() < 1e-5);
        assert!((lin.weight.value[1] + 0.4).abs() < 1e-4);
        assert_eq!(lin.bias.value[0], 0.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut lin = Linear::new(3, 1);
        let target = [1.0f32, -2.0, 0.5];
        let x = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..500 {
            lin.zero_grad();
            let y = lin.forward_train(&x);
            let grad: Vec<f32> = y.data.iter().zip(&target).map(|(a, b)| a - b).collect();
            lin.backward(&Tensor::matrix(3, 1, grad), false);
            adam.step(&mut lin, 0.05);
        }
        let y = lin.forward_eval(&x);
        for (a, b) in y.data.iter().zip(&target) {
            assert!((a - b).abs() < 1e-2, "{a} vs {b}");
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(LrSchedule::Cosine.rate(1.0, 0, 10), 1.0);
        assert!((LrSchedule::Cosine.rate(1.0, 5, 10) - 0.5).abs() < 1e-6);
        assert_eq!(LrSchedule::Constant.rate(0.3, 7, 10), 0.3);
    }
}
