use super::{check_shape, image_dims, Cache};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Non-overlapping max pooling with a square `window` and stride equal to
/// the window. Trailing rows/columns that do not fill a window are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool {
    pub window: usize,
}

impl MaxPool {
    pub fn output_shape(&self, [h, w, c]: [usize; 3]) -> Result<[usize; 3]> {
        if self.window == 0 || h < self.window || w < self.window {
            return Err(Error::Dimension(format!(
                "pool window {} does not fit input {:?}",
                self.window,
                [h, w, c]
            )));
        }
        Ok([h / self.window, w / self.window, c])
    }

    /// Records, per output, the flat input index of the window maximum.
    /// Ties keep the first position in row-major scan order.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Cache)> {
        let input_shape = image_dims(input, "maxpool")?;
        let output_shape = self.output_shape(input_shape)?;
        let [_, w, c] = input_shape;
        let [oh, ow, _] = output_shape;
        let p = self.window;
        let src = input.data();
        let mut out = Vec::with_capacity(oh * ow * c);
        let mut argmax = Vec::with_capacity(oh * ow * c);
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((oy * p) * w + ox * p) * c + ch;
                    for dy in 0..p {
                        for dx in 0..p {
                            let idx = ((oy * p + dy) * w + ox * p + dx) * c + ch;
                            if src[idx] > src[best_idx] {
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(src[best_idx]);
                    argmax.push(best_idx);
                }
            }
        }
        Ok((
            Tensor::new(output_shape.to_vec(), out)?,
            Cache::MaxPool {
                argmax,
                input_shape,
                output_shape,
            },
        ))
    }

    pub fn backward(&self, grad_out: &Tensor, cache: Cache) -> Result<Tensor> {
        let Cache::MaxPool {
            argmax,
            input_shape,
            output_shape,
        } = cache
        else {
            return Err(cache.mismatch("maxpool"));
        };
        check_shape(grad_out, &output_shape, "maxpool")?;
        let mut grad_in = Tensor::zeros(&input_shape);
        let g = grad_in.data_mut();
        for (&idx, &v) in argmax.iter().zip(grad_out.data()) {
            g[idx] += v;
        }
        Ok(grad_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_hand_case() {
        let pool = MaxPool { window: 2 };
        let input = Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, cache) = pool.forward(&input).unwrap();
        assert_eq!(out.data(), &[4.0]);
        let g = pool.backward(&Tensor::new(vec![1, 1, 1], vec![1.5]).unwrap(), cache).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.5]);
    }

    #[test]
    fn ties_go_to_first_position() {
        let pool = MaxPool { window: 2 };
        let input = Tensor::filled(&[2, 2, 1], 3.0);
        let (_, cache) = pool.forward(&input).unwrap();
        let g = pool.backward(&Tensor::filled(&[1, 1, 1], 1.0), cache).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn odd_extent_floors() {
        let pool = MaxPool { window: 2 };
        assert_eq!(pool.output_shape([25, 25, 64]).unwrap(), [12, 12, 64]);
        assert!(pool.output_shape([1, 4, 1]).is_err());
    }
}
