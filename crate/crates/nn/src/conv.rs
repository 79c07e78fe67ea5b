//! 2-D cross-correlation via im2col + GEMM.
//!
//! Weights are laid out `(out_channels, in_channels, kh, kw)`. Padding is
//! symmetric zero padding. Backward recomputes the column matrix instead of
//! caching it, so the forward pass never holds more than one column buffer.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// `floor((size + 2 * padding - kernel) / stride) + 1`, or `None` when the
/// kernel does not fit.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || size + 2 * padding < kernel {
        return None;
    }
    Some((size + 2 * padding - kernel) / stride + 1)
}

#[derive(Clone, Debug)]
pub struct Conv2dGrads<T> {
    pub input: Tensor4<T>,
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

struct Geometry {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn check<T: Scalar>(
        input: Shape4,
        weight: &Tensor4<T>,
        bias_len: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let ws = weight.shape();
        if ws.channels != input.channels {
            return Err(shape_err(
                "conv2d",
                format!("input has {} channels, weight expects {}", input.channels, ws.channels),
            ));
        }
        if ws.height % 2 == 0 || ws.width % 2 == 0 {
            return Err(shape_err(
                "conv2d",
                format!("kernel {}x{} must have odd sizes", ws.height, ws.width),
            ));
        }
        if bias_len != ws.batch {
            return Err(shape_err(
                "conv2d",
                format!("bias has {bias_len} entries for {} output channels", ws.batch),
            ));
        }
        let out_h = conv_output_size(input.height, ws.height, stride, pad);
        let out_w = conv_output_size(input.width, ws.width, stride, pad);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(shape_err(
                "conv2d",
                format!(
                    "kernel {}x{} stride {stride} pad {pad} does not fit input {}x{}",
                    ws.height, ws.width, input.height, input.width
                ),
            ));
        };
        Ok(Self {
            in_c: input.channels,
            in_h: input.height,
            in_w: input.width,
            out_c: ws.batch,
            kh: ws.height,
            kw: ws.width,
            out_h,
            out_w,
            stride,
            pad,
        })
    }

    fn col_rows(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source row/column for an output position and kernel tap, if inside the
    /// unpadded input.
    #[inline]
    fn source(&self, out: usize, tap: usize, in_size: usize) -> Option<usize> {
        let pos = (out * self.stride + tap) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < in_size).then_some(pos as usize)
    }

    fn im2col<T: Scalar>(&self, sample: &[T], cols: &mut [T]) {
        let n = self.col_cols();
        let plane = self.in_h * self.in_w;
        for c in 0..self.in_c {
            let src = &sample[c * plane..(c + 1) * plane];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..self.out_h {
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        match self.source(oy, ki, self.in_h) {
                            None => line.fill(T::zero()),
                            Some(iy) => {
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match self.source(ox, kj, self.in_w) {
                                        Some(ix) => src[iy * self.in_w + ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], sample: &mut [T]) {
        let n = self.col_cols();
        let plane = self.in_h * self.in_w;
        for c in 0..self.in_c {
            let dst = &mut sample[c * plane..(c + 1) * plane];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..self.out_h {
                        let Some(iy) = self.source(oy, ki, self.in_h) else {
                            continue;
                        };
                        for ox in 0..self.out_w {
                            if let Some(ix) = self.source(ox, kj, self.in_w) {
                                dst[iy * self.in_w + ix] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. Output spatial size follows [`conv_output_size`].
pub fn conv2d<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: &[T],
    stride: usize,
    padding: usize,
) -> Result<Tensor4<T>> {
    let g = Geometry::check(input.shape(), weight, bias.len(), stride, padding)?;
    let batch = input.shape().batch;
    let out_shape = Shape4::new(batch, g.out_c, g.out_h, g.out_w);
    let mut out = Tensor4::zeros(out_shape);
    let (k, n) = (g.col_rows(), g.col_cols());
    let mut cols = vec![T::zero(); k * n];
    for b in 0..batch {
        g.im2col(input.sample(b), &mut cols);
        let dst = out.sample_mut(b);
        for (co, &bv) in bias.iter().enumerate() {
            dst[co * n..(co + 1) * n].fill(bv);
        }
        T::gemm(
            g.out_c,
            k,
            n,
            T::one(),
            weight.data(),
            k,
            1,
            &cols,
            n,
            1,
            T::one(),
            dst,
            n,
            1,
        );
    }
    Ok(out)
}

/// Gradients of a convolution with respect to input, weight and bias, given
/// the upstream gradient `grad_out` of the output.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    stride: usize,
    padding: usize,
) -> Result<Conv2dGrads<T>> {
    let out_c = weight.shape().batch;
    let g = Geometry::check(input.shape(), weight, out_c, stride, padding)?;
    let batch = input.shape().batch;
    let expected = Shape4::new(batch, g.out_c, g.out_h, g.out_w);
    if grad_out.shape() != expected {
        return Err(shape_err(
            "conv2d_backward",
            format!("grad_out {} but output is {expected}", grad_out.shape()),
        ));
    }
    let (k, n) = (g.col_rows(), g.col_cols());
    let mut grad_input = Tensor4::zeros(input.shape());
    let mut grad_weight = Tensor4::zeros(weight.shape());
    let mut grad_bias = vec![T::zero(); g.out_c];
    let mut cols = vec![T::zero(); k * n];
    let mut grad_cols = vec![T::zero(); k * n];
    for b in 0..batch {
        let go = grad_out.sample(b);
        for (co, gb) in grad_bias.iter_mut().enumerate() {
            *gb += go[co * n..(co + 1) * n].iter().copied().sum::<T>();
        }
        g.im2col(input.sample(b), &mut cols);
        // dW[co, k] += sum_p dY[co, p] * cols[k, p]
        T::gemm(
            g.out_c,
            n,
            k,
            T::one(),
            go,
            n,
            1,
            &cols,
            1,
            n,
            T::one(),
            grad_weight.data_mut(),
            k,
            1,
        );
        // dcols[k, p] = sum_co W[co, k] * dY[co, p]
        T::gemm(
            k,
            g.out_c,
            n,
            T::one(),
            weight.data(),
            1,
            k,
            go,
            n,
            1,
            T::zero(),
            &mut grad_cols,
            n,
            1,
        );
        g.col2im(&grad_cols, grad_input.sample_mut(b));
    }
    Ok(Conv2dGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}
