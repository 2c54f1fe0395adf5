//! Per-head cross-entropy, the masked weighted total, and accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::Head;
use crate::tensor::Tensor;

/// Probabilities are clamped to at least this before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Relative weight of each head's loss in the total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub emotion: f64,
    pub gender: f64,
    pub race: f64,
    pub age: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            emotion: 2.0,
            gender: 0.1,
            race: 1.5,
            age: 4.0,
        }
    }
}

impl LossWeights {
    pub fn get(&self, head: Head) -> f64 {
        match head {
            Head::Emotion => self.emotion,
            Head::Gender => self.gender,
            Head::Race => self.race,
            Head::Age => self.age,
        }
    }

    /// Emotion only; the other heads get weight zero.
    pub fn emotion_only(emotion: f64) -> Self {
        LossWeights {
            emotion,
            gender: 0.0,
            race: 0.0,
            age: 0.0,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        LossWeights {
            emotion: self.emotion * c,
            gender: self.gender * c,
            race: self.race * c,
            age: self.age * c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for h in Head::ALL {
            let w = self.get(h);
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!(
                    "loss_weights.{h} must be a non-negative number, got {w}"
                )));
            }
        }
        if Head::ALL.iter().all(|&h| self.get(h) == 0.0) {
            return Err(Error::Config("loss_weights: at least one weight must be positive".into()));
        }
        Ok(())
    }
}

/// Which heads carry a label for one example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HeadMask(pub [bool; 4]);

impl HeadMask {
    pub fn present(&self, head: Head) -> bool {
        self.0[head.index()]
    }
}

/// Count of examples per head with a label present.
pub fn present_counts(masks: &[HeadMask]) -> [usize; 4] {
    let mut n = [0; 4];
    for m in masks {
        for h in Head::ALL {
            n[h.index()] += m.present(h) as usize;
        }
    }
    n
}

/// `−Σ target_i · ln(max(probs_i, 1e-12))` for a one-hot target.
pub fn cce(probs: &[f64], target: &[f64]) -> Result<f64> {
    if probs.len() != target.len() {
        return Err(Error::Dimension(format!(
            "{} probabilities for a {}-class target",
            probs.len(),
            target.len()
        )));
    }
    let ones = target.iter().filter(|&&t| t == 1.0).count();
    if ones != 1 || target.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::Label(format!("target {target:?} is not one-hot")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Numeric(format!("probabilities sum to {sum}, not 1")));
    }
    let class = target.iter().position(|&t| t == 1.0).expect("one 1 present");
    Ok(cce_index(probs, class))
}

/// Cross-entropy against the class index directly.
pub fn cce_index(probs: &[f64], class: usize) -> f64 {
    -probs[class].max(LOG_CLAMP).ln()
}

/// Gradient of `scale · cce(softmax(z), class)` with respect to the logits
/// `z`: `scale · (p − onehot(class))`.
pub fn cce_logit_grad(probs: &[f64], class: usize, scale: f64) -> Tensor {
    let mut g: Vec<f64> = probs.iter().map(|&p| scale * p).collect();
    g[class] -= scale;
    Tensor::from_vec(g)
}

/// `Σ_h w_h · L_h` where `L_h` are per-head mean losses over mask-present
/// examples. Heads with no present example in `batch_masks` contribute 0.
pub fn weighted_total_loss(head_losses: [f64; 4], weights: &LossWeights, batch_masks: &[HeadMask]) -> Result<f64> {
    weights.validate()?;
    let counts = present_counts(batch_masks);
    Ok(Head::ALL
        .iter()
        .filter(|h| counts[h.index()] > 0)
        .map(|&h| weights.get(h) * head_losses[h.index()])
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub value: f64,
    pub present: usize,
    /// True when no example was present; `value` is then 0.
    pub empty: bool,
}

/// Fraction of mask-present examples whose prediction equals the target.
pub fn accuracy(predictions: &[usize], targets: &[usize], mask: &[bool]) -> Result<Accuracy> {
    if predictions.len() != targets.len() || targets.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "accuracy over {} predictions, {} targets, {} mask flags",
            predictions.len(),
            targets.len(),
            mask.len()
        )));
    }
    let mut present = 0;
    let mut correct = 0;
    for ((p, t), &m) in predictions.iter().zip(targets).zip(mask) {
        if m {
            present += 1;
            correct += (p == t) as usize;
        }
    }
    Ok(Accuracy {
        value: if present == 0 { 0.0 } else { correct as f64 / present as f64 },
        present,
        empty: present == 0,
    })
}
