use super::{check_shape, Cache};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu_forward(input: &Tensor) -> (Tensor, Cache) {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
    (out, Cache::Relu { input: input.clone() })
}

/// Derivative at exactly zero is taken as 0.
pub fn relu_backward(grad_out: &Tensor, cache: Cache) -> Result<Tensor> {
    let Cache::Relu { input } = cache else {
        return Err(cache.mismatch("relu"));
    };
    check_shape(grad_out, input.shape(), "relu")?;
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

/// `σ(z)_i = e^{z_i} / Σ_j e^{z_j}`, evaluated after subtracting `max z`.
pub fn softmax(z: &Tensor) -> Result<Tensor> {
    if z.shape().len() != 1 {
        return Err(Error::Dimension(format!(
            "softmax expects a vector, got shape {:?}",
            z.shape()
        )));
    }
    z.ensure_finite("softmax input")?;
    let max = z.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.data().iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(Tensor::from_vec(exps.into_iter().map(|e| e / sum).collect()))
}

/// Vector-Jacobian product of softmax given its output `probs`:
/// `∂L/∂z = p ⊙ (g − ⟨g, p⟩)`.
pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    check_shape(grad_out, probs.shape(), "softmax")?;
    let dot: f64 = probs
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(p, g)| p * g)
        .sum();
    Ok(Tensor::from_vec(
        probs
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(p, g)| p * (g - dot))
            .collect(),
    ))
}
