use super::{check_shape, Cache, LayerGrads};
use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_a_bt, gemm_at_b, Tensor};

/// Fully connected layer: `y = x·W + b` with `W: in×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let &[_, out] = weights.shape() else {
            return Err(Error::Dimension(format!(
                "dense weights must be in×out, got {:?}",
                weights.shape()
            )));
        };
        if bias.shape() != [out] {
            return Err(Error::Dimension(format!(
                "dense bias must have shape [{out}], got {:?}",
                bias.shape()
            )));
        }
        Ok(Dense { weights, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Cache)> {
        let out = self.apply(input)?;
        Ok((out, Cache::Dense { input: input.clone() }))
    }

    /// Forward pass without a cache.
    pub fn apply(&self, input: &Tensor) -> Result<Tensor> {
        let (n, m) = (self.in_features(), self.out_features());
        if input.shape() != [n] {
            return Err(Error::Dimension(format!(
                "dense expects input of shape [{n}], got {:?}",
                input.shape()
            )));
        }
        let mut out = self.bias.data().to_vec();
        gemm(input.data(), self.weights.data(), &mut out, 1, n, m);
        Tensor::new(vec![m], out)
    }

    pub fn backward(&self, grad_out: &Tensor, cache: Cache) -> Result<LayerGrads> {
        let Cache::Dense { input } = cache else {
            return Err(cache.mismatch("dense"));
        };
        let (n, m) = (self.in_features(), self.out_features());
        check_shape(grad_out, &[m], "dense")?;
        let mut grad_w = vec![0.0; n * m];
        gemm_at_b(input.data(), grad_out.data(), &mut grad_w, n, 1, m);
        let mut grad_in = vec![0.0; n];
        gemm_a_bt(grad_out.data(), self.weights.data(), &mut grad_in, 1, m, n);
        Ok(LayerGrads {
            input: Tensor::new(vec![n], grad_in)?,
            weights: Some(Tensor::new(vec![n, m], grad_w)?),
            bias: Some(grad_out.clone()),
        })
    }
}
