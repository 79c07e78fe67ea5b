use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// `(batch, channels, height, width)` in NCHW order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape4 {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one sample.
    pub const fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }
}

impl std::fmt::Display for Shape4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.batch, self.channels, self.height, self.width
        )
    }
}

/// Dense NCHW tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(shape: Shape4) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn full(shape: Shape4, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        if shape.len() != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape} needs {} values, got {}", shape.len(), data.len()),
            ));
        }
        if shape.dims().contains(&0) {
            return Err(shape_err("tensor", format!("zero-sized dimension in {shape}")));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        ((b * self.shape.channels + c) * self.shape.height + h) * self.shape.width + w
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(b, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.index(b, c, h, w);
        self.data[i] = v;
    }

    /// Contiguous slice holding sample `b`.
    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.shape.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.shape.sample_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err(
                "add",
                format!("{} vs {}", self.shape, other.shape),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Element type conversion.
    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::cast_from(v.as_f64())).collect(),
        }
    }
}

/// A trainable tensor together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor4<T>,
    pub grad: Tensor4<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor4<T>) -> Self {
        let grad = Tensor4::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.shape().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let s = Shape4::new(1, 2, 2, 2);
        assert!(Tensor4::<f64>::from_vec(s, vec![0.0; 7]).is_err());
        assert!(Tensor4::<f64>::from_vec(s, vec![0.0; 8]).is_ok());
        assert!(Tensor4::<f64>::from_vec(Shape4::new(0, 1, 1, 1), vec![]).is_err());
    }

    #[test]
    fn nchw_indexing() {
        let s = Shape4::new(2, 3, 4, 5);
        let t = Tensor4::<f32>::from_vec(s, (0..s.len()).map(|i| i as f32).collect()).unwrap();
        assert_eq!(t.get(1, 2, 3, 4), (s.len() - 1) as f32);
        assert_eq!(t.get(0, 1, 0, 0), 20.0);
        assert_eq!(t.sample(1)[0], 60.0);
    }
}
