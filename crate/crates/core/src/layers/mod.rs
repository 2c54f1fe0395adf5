//! Forward and backward kernels for every layer kind in the network.
//!
//! Each forward call returns the output together with a [`Cache`] holding
//! exactly what the matching backward call needs. Backward consumes the
//! cache, so one forward pairs with at most one backward.

mod activation;
mod conv;
mod dense;
mod dropout;
mod pool;

pub use activation::{relu_backward, relu_forward, softmax, softmax_backward};
pub use conv::{Conv2d, Padding};
pub use dense::Dense;
pub use dropout::{dropout_backward, dropout_forward};
pub use pool::MaxPool;

use crate::error::{Error, Result};
use crate::model::Mode;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A trunk layer together with its parameters and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    MaxPool(MaxPool),
    Dense(Dense),
    Relu,
    Dropout { rate: f64 },
    Flatten,
}

/// Activations saved by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Conv2d {
        cols: Vec<f64>,
        input_shape: [usize; 3],
        output_shape: [usize; 3],
    },
    MaxPool {
        argmax: Vec<usize>,
        input_shape: [usize; 3],
        output_shape: [usize; 3],
    },
    Dense {
        input: Tensor,
    },
    Relu {
        input: Tensor,
    },
    Dropout {
        mask: Option<Vec<f64>>,
        shape: Vec<usize>,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
}

impl Cache {
    fn kind(&self) -> &'static str {
        match self {
            Cache::Conv2d { .. } => "conv2d",
            Cache::MaxPool { .. } => "maxpool",
            Cache::Dense { .. } => "dense",
            Cache::Relu { .. } => "relu",
            Cache::Dropout { .. } => "dropout",
            Cache::Flatten { .. } => "flatten",
        }
    }

    pub(crate) fn mismatch(self, expected: &str) -> Error {
        Error::Usage(format!(
            "{expected} backward received a {} cache",
            self.kind()
        ))
    }
}

/// Gradients produced by one backward call.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub input: Tensor,
    pub weights: Option<Tensor>,
    pub bias: Option<Tensor>,
}

impl LayerGrads {
    fn input_only(input: Tensor) -> Self {
        LayerGrads {
            input,
            weights: None,
            bias: None,
        }
    }
}

pub fn flatten_forward(input: &Tensor) -> (Tensor, Cache) {
    let out = Tensor::from_vec(input.data().to_vec());
    (
        out,
        Cache::Flatten {
            input_shape: input.shape().to_vec(),
        },
    )
}

pub fn flatten_backward(grad_out: &Tensor, cache: Cache) -> Result<Tensor> {
    match cache {
        Cache::Flatten { input_shape } => grad_out.clone().reshape(input_shape),
        other => Err(other.mismatch("flatten")),
    }
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::MaxPool(_) => "maxpool",
            Layer::Dense(_) => "dense",
            Layer::Relu => "relu",
            Layer::Dropout { .. } => "dropout",
            Layer::Flatten => "flatten",
        }
    }

    pub fn forward(&self, input: &Tensor, mode: Mode, rng: &mut Rng) -> Result<(Tensor, Cache)> {
        match self {
            Layer::Conv2d(c) => c.forward(input),
            Layer::MaxPool(p) => p.forward(input),
            Layer::Dense(d) => d.forward(input),
            Layer::Relu => Ok(relu_forward(input)),
            Layer::Dropout { rate } => dropout_forward(input, *rate, mode, rng),
            Layer::Flatten => Ok(flatten_forward(input)),
        }
    }

    pub fn backward(&self, grad_out: &Tensor, cache: Cache) -> Result<LayerGrads> {
        match self {
            Layer::Conv2d(c) => c.backward(grad_out, cache),
            Layer::MaxPool(p) => p.backward(grad_out, cache).map(LayerGrads::input_only),
            Layer::Dense(d) => d.backward(grad_out, cache),
            Layer::Relu => relu_backward(grad_out, cache).map(LayerGrads::input_only),
            Layer::Dropout { .. } => dropout_backward(grad_out, cache).map(LayerGrads::input_only),
            Layer::Flatten => flatten_backward(grad_out, cache).map(LayerGrads::input_only),
        }
    }

    /// Weight and bias tensors, if the layer has any.
    pub fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Conv2d(c) => Some((&c.weights, &c.bias)),
            Layer::Dense(d) => Some((&d.weights, &d.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Conv2d(c) => Some((&mut c.weights, &mut c.bias)),
            Layer::Dense(d) => Some((&mut d.weights, &mut d.bias)),
            _ => None,
        }
    }
}

pub(crate) fn check_shape(grad: &Tensor, expected: &[usize], layer: &str) -> Result<()> {
    if grad.shape() != expected {
        return Err(Error::Dimension(format!(
            "{layer} backward: upstream gradient has shape {:?}, forward output was {expected:?}",
            grad.shape()
        )));
    }
    Ok(())
}

pub(crate) fn image_dims(t: &Tensor, layer: &str) -> Result<[usize; 3]> {
    match t.shape() {
        &[h, w, c] => Ok([h, w, c]),
        s => Err(Error::Dimension(format!(
            "{layer} expects an h×w×c input, got shape {s:?}"
        ))),
    }
}
