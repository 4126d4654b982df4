//! Training objectives with analytic gradients: supervised contrastive
//! ("out" form), NT-Xent, and softmax cross-entropy.
//!
//! Inputs are `f32` matrices with one sample per row; losses and gradients are
//! accumulated in `f64`. The contrastive losses L2-normalize rows internally,
//! and the returned gradient is with respect to the raw rows.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    SupconOut,
    Ntxent,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub temperature: f64,
    pub variant: LossVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            temperature: DEFAULT_TEMPERATURE,
            variant: LossVariant::SupconOut,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)
    }
}

/// Loss value and its gradient with respect to the input rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub grad: Array2<f32>,
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be positive, got {t}")))
    }
}

/// Supervised contrastive loss, positives averaged outside the log: for each
/// anchor `i`, the mean over same-label `p != i` of
/// `-log(exp(u_i.u_p/t) / sum_{a != i} exp(u_i.u_a/t))`, then the mean over
/// anchors, where `u` are the L2-normalized rows.
pub fn supcon_loss(z: ArrayView2<'_, f32>, labels: &[usize], temperature: f64) -> Result<LossValue> {
    check_temperature(temperature)?;
    let n = z.nrows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} embeddings but {} labels", labels.len())));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("supervised contrastive loss needs at least 2 samples".into()));
    }
    for (i, &label) in labels.iter().enumerate() {
        if !labels.iter().enumerate().any(|(j, &l)| j != i && l == label) {
            return Err(Error::NoPositives(label));
        }
    }
    contrastive(z, labels, temperature)
}

/// NT-Xent over `2N` views: each row of `a` is paired with the same row of
/// `b`, and every other view is a negative. Returns the gradient for the
/// stacked `[a; b]` matrix.
pub fn ntxent_loss(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>, temperature: f64) -> Result<LossValue> {
    check_temperature(temperature)?;
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("view shapes differ: {:?} vs {:?}", a.dim(), b.dim())));
    }
    let n = a.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("NT-Xent needs at least one pair".into()));
    }
    let stacked = ndarray::concatenate(Axis(0), &[a, b]).expect("equal view widths");
    let pairs: Vec<usize> = (0..n).chain(0..n).collect();
    contrastive(stacked.view(), &pairs, temperature)
}

/// Shared contrastive core: every row is an anchor, positives are the other
/// rows with the same group id, the denominator runs over all other rows.
fn contrastive(z: ArrayView2<'_, f32>, groups: &[usize], t: f64) -> Result<LossValue> {
    let (n, d) = z.dim();
    let mut u = Array2::<f64>::zeros((n, d));
    let mut norms = vec![0.0f64; n];
    for (i, row) in z.outer_iter().enumerate() {
        let norm = row.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Data(format!("embedding row {i} has norm {norm}")));
        }
        norms[i] = norm;
        u.row_mut(i).assign(&row.mapv(|v| f64::from(v) / norm));
    }
    let sim = u.dot(&u.t()) / t;

    let mut loss = 0.0;
    let mut coef = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let max = (0..n).filter(|&j| j != i).map(|j| sim[[i, j]]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&j| j != i).map(|j| (sim[[i, j]] - max).exp()).sum();
        let lse = max + denom.ln();
        let positives: Vec<usize> = (0..n).filter(|&j| j != i && groups[j] == groups[i]).collect();
        let np = positives.len() as f64;
        loss += lse - positives.iter().map(|&p| sim[[i, p]]).sum::<f64>() / np;
        for j in (0..n).filter(|&j| j != i) {
            coef[[i, j]] += (sim[[i, j]] - lse).exp();
        }
        for &p in &positives {
            coef[[i, p]] -= 1.0 / np;
        }
    }
    let scale = 1.0 / (n as f64 * t);
    // d/du_i of sum c_ij u_i.u_j covers both the anchor and the partner role.
    let grad_u = (coef.dot(&u) + coef.t().dot(&u)) * scale;
    let mut grad = Array2::<f32>::zeros((n, d));
    for i in 0..n {
        let ui = u.row(i);
        let gi = grad_u.row(i);
        let radial = gi.dot(&ui);
        for k in 0..d {
            grad[[i, k]] = ((gi[k] - radial * ui[k]) / norms[i]) as f32;
        }
    }
    Ok(LossValue {
        loss: loss / n as f64,
        grad,
    })
}

/// Mean negative log-softmax of the true class.
pub fn cross_entropy_loss(logits: ArrayView2<'_, f32>, labels: &[usize]) -> Result<LossValue> {
    let (n, c) = logits.dim();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} logit rows but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("cross-entropy needs at least one sample".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidArgument(format!("label {bad} outside 0..{c}")));
    }
    let mut loss = 0.0;
    let mut grad = Array2::<f32>::zeros((n, c));
    for (i, row) in logits.outer_iter().enumerate() {
        let probs = softmax(row.iter().map(|&v| f64::from(v)));
        loss -= probs[labels[i]].ln();
        for k in 0..c {
            let target = if k == labels[i] { 1.0 } else { 0.0 };
            grad[[i, k]] = ((probs[k] - target) / n as f64) as f32;
        }
    }
    Ok(LossValue {
        loss: loss / n as f64,
        grad,
    })
}

/// Numerically stable softmax.
pub fn softmax(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let v: Vec<f64> = values.into_iter().collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn random(n: usize, d: usize, seed: u64) -> Array2<f32> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    fn numeric_grad(f: impl Fn(&Array2<f32>) -> f64, z: &Array2<f32>, idx: (usize, usize)) -> f64 {
        let eps = 1e-3f32;
        let mut plus = z.clone();
        plus[idx] += eps;
        let mut minus = z.clone();
        minus[idx] -= eps;
        (f(&plus) - f(&minus)) / (2.0 * f64::from(eps))
    }

    #[test]
    fn supcon_pair_of_positives_is_zero() {
        let z = random(2, 3, 1);
        let v = supcon_loss(z.view(), &[1, 1], 1.0).unwrap();
        assert!(v.loss.abs() < 1e-12);
    }

    #[test]
    fn supcon_orthogonal_pairs_give_ln_three() {
        let z = Array2::<f32>::eye(4);
        let v = supcon_loss(z.view(), &[0, 0, 1, 1], 1.0).unwrap();
        assert!((v.loss - 3f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn supcon_rejects_lonely_labels() {
        let z = random(3, 2, 2);
        assert!(matches!(supcon_loss(z.view(), &[0, 0, 2], 0.1), Err(Error::NoPositives(2))));
        assert!(supcon_loss(z.view(), &[0, 0, 0], 0.0).is_err());
    }

    #[test]
    fn ntxent_single_pair_is_zero_and_two_pairs_match_hand_value() {
        let a = random(1, 4, 3);
        let b = random(1, 4, 4);
        assert!(ntxent_loss(a.view(), b.view(), 0.5).unwrap().loss.abs() < 1e-12);
        let a = array![[1.0f32, 0.0], [0.0, 1.0]];
        let v = ntxent_loss(a.view(), a.view(), 1.0).unwrap();
        let want = (1.0 + 2.0 / std::f64::consts::E).ln();
        assert!((v.loss - want).abs() < 1e-9, "{}", v.loss);
        assert!(ntxent_loss(a.view(), random(3, 2, 1).view(), 1.0).is_err());
    }

    #[test]
    fn contrastive_gradients_match_finite_differences() {
        let z = random(6, 4, 5);
        let labels = [0, 1, 2, 0, 1, 2];
        let v = supcon_loss(z.view(), &labels, 0.5).unwrap();
        for idx in [(0, 0), (2, 3), (5, 1)] {
            let num = numeric_grad(|m| supcon_loss(m.view(), &labels, 0.5).unwrap().loss, &z, idx);
            assert!((f64::from(v.grad[idx]) - num).abs() < 1e-3, "{idx:?}");
        }
        let (a, b) = (random(3, 4, 6), random(3, 4, 7));
        let v = ntxent_loss(a.view(), b.view(), 0.3).unwrap();
        for idx in [(0, 1), (2, 2)] {
            let num = numeric_grad(|m| ntxent_loss(m.view(), b.view(), 0.3).unwrap().loss, &a, idx);
            assert!((f64::from(v.grad[idx]) - num).abs() < 1e-3);
            let num = numeric_grad(|m| ntxent_loss(a.view(), m.view(), 0.3).unwrap().loss, &b, idx);
            assert!((f64::from(v.grad[(idx.0 + 3, idx.1)]) - num).abs() < 1e-3);
        }
    }

    #[test]
    fn supcon_is_scale_invariant_and_finite_at_low_temperature() {
        let z = random(8, 4, 8);
        let labels = [0, 0, 1, 1, 2, 2, 0, 1];
        let base = supcon_loss(z.view(), &labels, 0.07).unwrap().loss;
        for c in [0.1f32, 10.0] {
            let scaled = supcon_loss((&z * c).view(), &labels, 0.07).unwrap().loss;
            assert!((scaled - base).abs() < 1e-6);
        }
        let cold = supcon_loss(z.view(), &labels, 1e-3).unwrap();
        assert!(cold.loss.is_finite() && cold.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn supcon_falls_when_positives_move_together() {
        let far = array![[1.0f32, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        let near = array![[1.0f32, 0.0], [0.9, 0.3], [-1.0, 0.0], [-0.9, -0.3]];
        let labels = [0, 0, 1, 1];
        let a = supcon_loss(far.view(), &labels, 0.5).unwrap().loss;
        let b = supcon_loss(near.view(), &labels, 0.5).unwrap().loss;
        assert!(b < a);
    }

    #[test]
    fn cross_entropy_values_and_gradient() {
        let uniform = Array2::<f32>::zeros((4, 3));
        let v = cross_entropy_loss(uniform.view(), &[0, 1, 2, 2]).unwrap();
        assert!((v.loss - 3f64.ln()).abs() < 1e-12);
        let logits = array![[2.0f32, 0.0, 0.0]];
        let v = cross_entropy_loss(logits.view(), &[0]).unwrap();
        let want = -(2f64.exp() / (2f64.exp() + 2.0)).ln();
        assert!((v.loss - want).abs() < 1e-9);
        assert!((f64::from(v.grad[(0, 1)]) - 1.0 / (2f64.exp() + 2.0)).abs() < 1e-7);
        assert!(cross_entropy_loss(logits.view(), &[3]).is_err());
    }

    #[test]
    fn losses_ignore_batch_order() {
        let z = random(6, 3, 9);
        let labels = [0, 1, 2, 0, 1, 2];
        let order = [4, 0, 5, 2, 1, 3];
        let zp = z.select(Axis(0), &order);
        let lp: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let a = supcon_loss(z.view(), &labels, 0.2).unwrap().loss;
        let b = supcon_loss(zp.view(), &lp, 0.2).unwrap().loss;
        assert!((a - b).abs() < 1e-12);
        let a = cross_entropy_loss(z.view(), &labels).unwrap().loss;
        let b = cross_entropy_loss(zp.view(), &lp).unwrap().loss;
        assert!((a - b).abs() < 1e-12);
    }
}
