use serde::{Deserialize, Serialize};

use super::{check_shape, image_dims, Cache, LayerGrads};
use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_a_bt, gemm_at_b, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding so that the output is `ceil(input / stride)` per side.
    Same,
    /// No padding.
    Valid,
}

/// 2-D convolution over `h×w×c_in` inputs with `k×k×c_in×c_out` kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weights: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: Padding,
}

struct Geometry {
    k: usize,
    c_in: usize,
    c_out: usize,
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

fn out_extent(size: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = size.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(size);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if size < k {
                return Err(Error::Dimension(format!(
                    "kernel {k} does not fit input extent {size} without padding"
                )));
            }
            Ok(((size - k) / stride + 1, 0))
        }
    }
}

impl Conv2d {
    pub fn new(weights: Tensor, bias: Tensor, stride: usize, padding: Padding) -> Result<Self> {
        let &[k, k2, _, c_out] = weights.shape() else {
            return Err(Error::Dimension(format!(
                "conv kernels must be k×k×c_in×c_out, got {:?}",
                weights.shape()
            )));
        };
        if k != k2 {
            return Err(Error::Dimension(format!(
                "conv kernels must be square, got {:?}",
                weights.shape()
            )));
        }
        if bias.shape() != [c_out] {
            return Err(Error::Dimension(format!(
                "conv bias must have shape [{c_out}], got {:?}",
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Range("conv stride must be at least 1".into()));
        }
        Ok(Conv2d {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[3]
    }

    /// Output `h×w×c_out` for a given input shape.
    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let g = self.geometry(input)?;
        Ok([g.out_h, g.out_w, g.c_out])
    }

    fn geometry(&self, [h, w, c]: [usize; 3]) -> Result<Geometry> {
        let k = self.kernel_size();
        if c != self.in_channels() {
            return Err(Error::Dimension(format!(
                "conv expects {} input channels, got input {:?}",
                self.in_channels(),
                [h, w, c]
            )));
        }
        let (out_h, pad_top) = out_extent(h, k, self.stride, self.padding)?;
        let (out_w, pad_left) = out_extent(w, k, self.stride, self.padding)?;
        Ok(Geometry {
            k,
            c_in: c,
            c_out: self.out_channels(),
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    /// `out[y][x][o] = bias[o] + Σ_{dy,dx,i} in[y·s+dy−p][x·s+dx−p][i] · w[dy][dx][i][o]`
    /// with zeros outside the input.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Cache)> {
        let input_shape = image_dims(input, "conv2d")?;
        let g = self.geometry(input_shape)?;
        let [h, w, _] = input_shape;
        let patch = g.k * g.k * g.c_in;
        let positions = g.out_h * g.out_w;

        let mut cols = vec![0.0; positions * patch];
        let src = input.data();
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = &mut cols[(oy * g.out_w + ox) * patch..][..patch];
                for dy in 0..g.k {
                    let y = (oy * self.stride + dy) as isize - g.pad_top as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for dx in 0..g.k {
                        let x = (ox * self.stride + dx) as isize - g.pad_left as isize;
                        if x < 0 || x >= w as isize {
                            continue;
                        }
                        let from = (y as usize * w + x as usize) * g.c_in;
                        let to = (dy * g.k + dx) * g.c_in;
                        row[to..to + g.c_in].copy_from_slice(&src[from..from + g.c_in]);
                    }
                }
            }
        }

        let mut out = Vec::with_capacity(positions * g.c_out);
        for _ in 0..positions {
            out.extend_from_slice(self.bias.data());
        }
        gemm(&cols, self.weights.data(), &mut out, positions, patch, g.c_out);

        let output_shape = [g.out_h, g.out_w, g.c_out];
        Ok((
            Tensor::new(output_shape.to_vec(), out)?,
            Cache::Conv2d {
                cols,
                input_shape,
                output_shape,
            },
        ))
    }

    pub fn backward(&self, grad_out: &Tensor, cache: Cache) -> Result<LayerGrads> {
        let Cache::Conv2d {
            cols,
            input_shape,
            output_shape,
        } = cache
        else {
            return Err(cache.mismatch("conv2d"));
        };
        check_shape(grad_out, &output_shape, "conv2d")?;
        let g = self.geometry(input_shape)?;
        let [h, w, _] = input_shape;
        let patch = g.k * g.k * g.c_in;
        let positions = g.out_h * g.out_w;
        let go = grad_out.data();

        let mut grad_w = vec![0.0; patch * g.c_out];
        gemm_at_b(&cols, go, &mut grad_w, patch, positions, g.c_out);

        let mut grad_b = vec![0.0; g.c_out];
        for p in 0..positions {
            for (b, &v) in grad_b.iter_mut().zip(&go[p * g.c_out..(p + 1) * g.c_out]) {
                *b += v;
            }
        }

        let mut grad_cols = vec![0.0; positions * patch];
        gemm_a_bt(go, self.weights.data(), &mut grad_cols, positions, g.c_out, patch);

        let mut grad_in = vec![0.0; h * w * g.c_in];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = &grad_cols[(oy * g.out_w + ox) * patch..][..patch];
                for dy in 0..g.k {
                    let y = (oy * self.stride + dy) as isize - g.pad_top as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for dx in 0..g.k {
                        let x = (ox * self.stride + dx) as isize - g.pad_left as isize;
                        if x < 0 || x >= w as isize {
                            continue;
                        }
                        let to = (y as usize * w + x as usize) * g.c_in;
                        let from = (dy * g.k + dx) * g.c_in;
                        for (d, &s) in grad_in[to..to + g.c_in].iter_mut().zip(&row[from..from + g.c_in]) {
                            *d += s;
                        }
                    }
                }
            }
        }

        Ok(LayerGrads {
            input: Tensor::new(input_shape.to_vec(), grad_in)?,
            weights: Some(Tensor::new(self.weights.shape().to_vec(), grad_w)?),
            bias: Some(Tensor::new(vec![g.c_out], grad_b)?),
        })
    }
}
