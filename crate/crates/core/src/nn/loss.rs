use serde::{Deserialize, Serialize};

use super::{Element, Tensor};

/// Smoothing constant of the soft dice loss.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LossKind {
    #[default]
    Bce,
    SoftDice,
}

impl LossKind {
    /// Loss value and gradient with respect to the logits.
    pub fn eval<E: Element>(self, logits: &Tensor<E>, targets: &[E]) -> (f64, Tensor<E>) {
        match self {
            LossKind::Bce => bce_with_logits(logits, targets),
            LossKind::SoftDice => soft_dice_with_logits(logits, targets),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy over all elements, computed from logits.
pub fn bce_with_logits<E: Element>(logits: &Tensor<E>, targets: &[E]) -> (f64, Tensor<E>) {
    assert_eq!(logits.data.len(), targets.len(), "bce target length");
    let n = logits.data.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(logits.shape);
    for ((g, &z), &t) in grad.data.iter_mut().zip(&logits.data).zip(targets) {
        let z = z.to_f64().unwrap_or(0.0);
        let t = t.to_f64().unwrap_or(0.0);
        // max(z,0) - z t + log(1 + e^{-|z|})
        loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        *g = E::of((sigmoid(z) - t) / n);
    }
    (loss / n, grad)
}

/// Soft dice loss `1 - mean_b (2 sum(p t) + s) / (sum p + sum t + s)` with
/// `p = sigmoid(logits)`, averaged over the batch.
pub fn soft_dice_with_logits<E: Element>(logits: &Tensor<E>, targets: &[E]) -> (f64, Tensor<E>) {
    assert_eq!(logits.data.len(), targets.len(), "dice target length");
    let batch = logits.batch().max(1);
    let per = logits.image_len();
    let s = DICE_SMOOTH;
    let mut grad = Tensor::zeros(logits.shape);
    let mut total = 0.0;
    for b in 0..logits.batch() {
        let z = &logits.image(b);
        let t = &targets[b * per..(b + 1) * per];
        let p: Vec<f64> = z
            .iter()
            .map(|v| sigmoid(v.to_f64().unwrap_or(0.0)))
            .collect();
        let t: Vec<f64> = t.iter().map(|v| v.to_f64().unwrap_or(0.0)).collect();
        let inter: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
        let denom = p.iter().sum::<f64>() + t.iter().sum::<f64>() + s;
        let num = 2.0 * inter + s;
        total += num / denom;
        let g = grad.image_mut(b);
        for i in 0..per {
            let dd_dp = (2.0 * t[i] * denom - num) / (denom * denom);
            g[i] = E::of(-dd_dp * p[i] * (1.0 - p[i]) / batch as f64);
        }
    }
    (1.0 - total / batch as f64, grad)
}
