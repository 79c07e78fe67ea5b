//! Elementwise and structural operators with their backward passes.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor4::from_vec(x.shape(), data).expect("same shape")
}

/// Gradient of [`relu`] given its output `y`.
pub fn relu_backward<T: Scalar>(y: &Tensor4<T>, grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
    same_shape("relu_backward", y.shape(), grad_y.shape())?;
    let data = y
        .data()
        .iter()
        .zip(grad_y.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(y.shape(), data)
}

/// Nearest-neighbour upsampling by 2 in both spatial axes.
pub fn upsample_nearest2<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let s = x.shape();
    let out_shape = Shape4::new(s.batch, s.channels, s.height * 2, s.width * 2);
    let mut out = Tensor4::zeros(out_shape);
    let (w, ow) = (s.width, s.width * 2);
    for (src, dst) in x
        .data()
        .chunks_exact(s.plane())
        .zip(out.data_mut().chunks_exact_mut(out_shape.plane()))
    {
        for y in 0..s.height {
            let row = &src[y * w..(y + 1) * w];
            for dy in 0..2 {
                let line = &mut dst[(2 * y + dy) * ow..(2 * y + dy + 1) * ow];
                for (xx, &v) in row.iter().enumerate() {
                    line[2 * xx] = v;
                    line[2 * xx + 1] = v;
                }
            }
        }
    }
    out
}

pub fn upsample_nearest2_backward<T: Scalar>(grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
    let s = grad_y.shape();
    if s.height % 2 != 0 || s.width % 2 != 0 {
        return Err(shape_err(
            "upsample_nearest2_backward",
            format!("gradient {s} has odd spatial size"),
        ));
    }
    let in_shape = Shape4::new(s.batch, s.channels, s.height / 2, s.width / 2);
    Ok(reduce2(grad_y, in_shape, |a, b, c, d| a + b + c + d))
}

/// Joins `a` and `b` along the channel axis, `a` first.
pub fn concat_channels<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.batch != sb.batch || sa.height != sb.height || sa.width != sb.width {
        return Err(shape_err("concat_channels", format!("{sa} vs {sb}")));
    }
    let out_shape = Shape4::new(sa.batch, sa.channels + sb.channels, sa.height, sa.width);
    let mut data = Vec::with_capacity(out_shape.len());
    for n in 0..sa.batch {
        data.extend_from_slice(a.sample(n));
        data.extend_from_slice(b.sample(n));
    }
    Tensor4::from_vec(out_shape, data)
}

/// Splits a concatenated gradient back into the parts for `a` (the first
/// `a_channels` channels) and `b`.
pub fn concat_channels_backward<T: Scalar>(
    grad_y: &Tensor4<T>,
    a_channels: usize,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let s = grad_y.shape();
    if a_channels == 0 || a_channels >= s.channels {
        return Err(shape_err(
            "concat_channels_backward",
            format!("cannot split {} channels at {a_channels}", s.channels),
        ));
    }
    let sa = Shape4::new(s.batch, a_channels, s.height, s.width);
    let sb = Shape4::new(s.batch, s.channels - a_channels, s.height, s.width);
    let mut da = Vec::with_capacity(sa.len());
    let mut db = Vec::with_capacity(sb.len());
    for n in 0..s.batch {
        let (x, y) = grad_y.sample(n).split_at(sa.sample_len());
        da.extend_from_slice(x);
        db.extend_from_slice(y);
    }
    Ok((Tensor4::from_vec(sa, da)?, Tensor4::from_vec(sb, db)?))
}

/// 2x2 average pooling with stride 2.
pub fn avg_pool2<T: Scalar>(x: &Tensor4<T>) -> Result<Tensor4<T>> {
    let out_shape = pooled_shape("avg_pool2", x.shape())?;
    let quarter = T::cast_from(0.25);
    Ok(reduce2(x, out_shape, |a, b, c, d| (a + b + c + d) * quarter))
}

pub fn avg_pool2_backward<T: Scalar>(grad_y: &Tensor4<T>) -> Tensor4<T> {
    let quarter = T::cast_from(0.25);
    let mut g = upsample_nearest2(grad_y);
    g.data_mut().iter_mut().for_each(|v| *v *= quarter);
    g
}

/// 2x2 max pooling with stride 2.
pub fn max_pool2<T: Scalar>(x: &Tensor4<T>) -> Result<Tensor4<T>> {
    let out_shape = pooled_shape("max_pool2", x.shape())?;
    Ok(reduce2(x, out_shape, |a, b, c, d| a.max(b).max(c.max(d))))
}

/// Routes each pooled gradient to the first maximal element of its window.
pub fn max_pool2_backward<T: Scalar>(x: &Tensor4<T>, grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
    let out_shape = pooled_shape("max_pool2_backward", x.shape())?;
    same_shape("max_pool2_backward", out_shape, grad_y.shape())?;
    let s = x.shape();
    let mut gx = Tensor4::zeros(s);
    for n in 0..s.batch {
        for c in 0..s.channels {
            for oy in 0..out_shape.height {
                for ox in 0..out_shape.width {
                    let mut best = (2 * oy, 2 * ox);
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let (y, xx) = (2 * oy + dy, 2 * ox + dx);
                        if x.get(n, c, y, xx) > x.get(n, c, best.0, best.1) {
                            best = (y, xx);
                        }
                    }
                    let g = grad_y.get(n, c, oy, ox);
                    let i = gx.index(n, c, best.0, best.1);
                    gx.data_mut()[i] += g;
                }
            }
        }
    }
    Ok(gx)
}

fn pooled_shape(op: &'static str, s: Shape4) -> Result<Shape4> {
    if s.height % 2 != 0 || s.width % 2 != 0 {
        return Err(shape_err(op, format!("input {s} has odd spatial size")));
    }
    Ok(Shape4::new(s.batch, s.channels, s.height / 2, s.width / 2))
}

fn reduce2<T: Scalar>(x: &Tensor4<T>, out_shape: Shape4, f: impl Fn(T, T, T, T) -> T) -> Tensor4<T> {
    let w = x.shape().width;
    let mut out = Tensor4::zeros(out_shape);
    for (src, dst) in x
        .data()
        .chunks_exact(x.shape().plane())
        .zip(out.data_mut().chunks_exact_mut(out_shape.plane()))
    {
        for oy in 0..out_shape.height {
            let r0 = &src[2 * oy * w..(2 * oy + 1) * w];
            let r1 = &src[(2 * oy + 1) * w..(2 * oy + 2) * w];
            for ox in 0..out_shape.width {
                dst[oy * out_shape.width + ox] =
                    f(r0[2 * ox], r0[2 * ox + 1], r1[2 * ox], r1[2 * ox + 1]);
            }
        }
    }
    out
}

fn same_shape(op: &'static str, a: Shape4, b: Shape4) -> Result<()> {
    if a != b {
        return Err(shape_err(op, format!("{a} vs {b}")));
    }
    Ok(())
}
