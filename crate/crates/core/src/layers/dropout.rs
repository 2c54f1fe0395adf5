use super::{check_shape, Cache};
use crate::error::{Error, Result};
use crate::model::Mode;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Inverted dropout.
///
/// In [`Mode::Train`] each unit survives with probability `1 − rate` and is
/// scaled by `1 / (1 − rate)`; the mask is kept for the backward pass. In
/// [`Mode::Infer`] the input is returned untouched and no randomness is drawn.
pub fn dropout_forward(input: &Tensor, rate: f64, mode: Mode, rng: &mut Rng) -> Result<(Tensor, Cache)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Range(format!("dropout rate {rate} is outside [0, 1)")));
    }
    let shape = input.shape().to_vec();
    if mode == Mode::Infer {
        return Ok((input.clone(), Cache::Dropout { mask: None, shape }));
    }
    let scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..input.len())
        .map(|_| if rng.next_f64() >= rate { scale } else { 0.0 })
        .collect();
    let mut out = input.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((out, Cache::Dropout { mask: Some(mask), shape }))
}

pub fn dropout_backward(grad_out: &Tensor, cache: Cache) -> Result<Tensor> {
    let Cache::Dropout { mask, shape } = cache else {
        return Err(cache.mismatch("dropout"));
    };
    check_shape(grad_out, &shape, "dropout")?;
    let mut g = grad_out.clone();
    if let Some(mask) = mask {
        for (v, &m) in g.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
    }
    Ok(g)
}
