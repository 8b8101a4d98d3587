use super::descriptor::{Variant, THREE_CLASSES};
use super::layers::log_sum_exp;
use super::network::Predictions;
use super::tensor::{Scalar, Tensor};
use super::NetError;

/// Clamp applied to probabilities inside binary cross-entropy.
pub const PROB_EPS: f64 = 1e-7;

/// Flat `[batch * au]` targets for one batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// `y` in {0, 1}; entries with `mask == false` are ignored.
    Binary { y: Vec<u8>, mask: Vec<bool> },
    /// Class indices 0 (absent), 1 (unknown), 2 (present).
    ThreeClass { class: Vec<u8> },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Binary { y, .. } => y.len(),
            Targets::ThreeClass { class } => class.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-AU weights. Binary uses `[negative, positive]`; three-class uses one
/// weight per class index.
#[derive(Debug, Clone, PartialEq)]
pub enum LossWeights {
    Binary(Vec<[f64; 2]>),
    ThreeClass(Vec<[f64; THREE_CLASSES]>),
}

impl LossWeights {
    pub fn au_count(&self) -> usize {
        match self {
            LossWeights::Binary(w) => w.len(),
            LossWeights::ThreeClass(w) => w.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub loss: f64,
    /// Gradient of `loss` with respect to the output logits.
    pub logit_grad: Tensor<T>,
}

/// Weighted mean cross-entropy: `sum(w * l) / sum(w)` over unmasked entries.
/// Without weights this is the plain mean over outputs and batch.
pub fn loss<T: Scalar>(
    pred: &Predictions<T>,
    targets: &Targets,
    weights: Option<&LossWeights>,
) -> Result<LossOutput<T>, NetError> {
    let (batch, au) = (pred.batch(), pred.au_count());
    if targets.len() != batch * au {
        return Err(NetError::ShapeMismatch(format!(
            "{} targets for a {batch}x{au} prediction",
            targets.len()
        )));
    }
    if let Some(w) = weights {
        if w.au_count() != au {
            return Err(NetError::ShapeMismatch(format!("weights for {} AUs, network has {au}", w.au_count())));
        }
    }
    match (pred.variant, targets, weights) {
        (Variant::Binary, Targets::Binary { y, mask }, None | Some(LossWeights::Binary(_))) => {
            if mask.len() != y.len() {
                return Err(NetError::ShapeMismatch("mask and targets differ in length".into()));
            }
            let w = match weights {
                Some(LossWeights::Binary(w)) => Some(w.as_slice()),
                _ => None,
            };
            Ok(binary_cross_entropy(pred, y, mask, w))
        }
        (Variant::ThreeClass, Targets::ThreeClass { class }, None | Some(LossWeights::ThreeClass(_))) => {
            if let Some(&c) = class.iter().find(|&&c| c as usize >= THREE_CLASSES) {
                return Err(NetError::ShapeMismatch(format!("class index {c} out of range")));
            }
            let w = match weights {
                Some(LossWeights::ThreeClass(w)) => Some(w.as_slice()),
                _ => None,
            };
            Ok(categorical_cross_entropy(pred, class, w))
        }
        _ => Err(NetError::ShapeMismatch(format!(
            "targets or weights do not match the {} variant",
            pred.variant.name()
        ))),
    }
}

fn binary_cross_entropy<T: Scalar>(
    pred: &Predictions<T>,
    y: &[u8],
    mask: &[bool],
    weights: Option<&[[f64; 2]]>,
) -> LossOutput<T> {
    let au = pred.au_count();
    let probs = pred.probs.data();
    let mut total = 0.0;
    let mut wsum = 0.0;
    let mut grad = vec![0.0f64; probs.len()];
    for i in 0..probs.len() {
        if !mask[i] {
            continue;
        }
        let target = y[i] as f64;
        let w = weights.map_or(1.0, |w| w[i % au][y[i] as usize]);
        let p_raw = probs[i].f64();
        let p = p_raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
        total += -w * (target * p.ln() + (1.0 - target) * (1.0 - p).ln());
        wsum += w;
        // d/dz of the clamped loss: zero where the clamp is active
        if p == p_raw {
            grad[i] = w * (p - target);
        }
    }
    finish(pred, total, wsum, grad)
}

fn categorical_cross_entropy<T: Scalar>(
    pred: &Predictions<T>,
    class: &[u8],
    weights: Option<&[[f64; THREE_CLASSES]]>,
) -> LossOutput<T> {
    let au = pred.au_count();
    let logits = pred.logits.data();
    let mut total = 0.0;
    let mut wsum = 0.0;
    let mut grad = vec![0.0f64; logits.len()];
    for (i, &c) in class.iter().enumerate() {
        let c = c as usize;
        let z: Vec<f64> = logits[i * THREE_CLASSES..(i + 1) * THREE_CLASSES].iter().map(|v| v.f64()).collect();
        let lse = log_sum_exp(&z);
        let w = weights.map_or(1.0, |w| w[i % au][c]);
        total += w * (lse - z[c]);
        wsum += w;
        for k in 0..THREE_CLASSES {
            let p = (z[k] - lse).exp();
            let onehot = if k == c { 1.0 } else { 0.0 };
            grad[i * THREE_CLASSES + k] = w * (p - onehot);
        }
    }
    finish(pred, total, wsum, grad)
}

fn finish<T: Scalar>(pred: &Predictions<T>, total: f64, wsum: f64, grad: Vec<f64>) -> LossOutput<T> {
    let scale = if wsum > 0.0 { 1.0 / wsum } else { 0.0 };
    LossOutput {
        loss: total * scale,
        logit_grad: Tensor::from_vec(pred.logits.dims(), grad.into_iter().map(|g| T::of(g * scale)).collect())
            .expect("gradient shaped like logits"),
    }
}
