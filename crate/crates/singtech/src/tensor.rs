//! Dense row-major tensors, the value/gradient carrier for every layer.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;

/// Dense n-dimensional array of reals in row-major (C) order.
///
/// 4-D activations use the layout `[batch N, channel C, height H = frequency,
/// width W = time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?} (= {} elements)",
                data.len(),
                shape,
                expect
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Uniform draw from `[-bound, bound)` for every element, in index order.
    pub fn rand_uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Extent of dimension `d`.
    #[inline]
    pub fn dim(&self, d: usize) -> usize {
        self.shape[d]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elements) to {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v = *v * s);
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + *b;
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    /// True when every element is finite (no NaN/Inf).
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (*a - *b).abs().to_f64_())
            .fold(0.0, f64::max)
    }

    /// Cast element type, e.g. build the `f64` twin of an `f32` tensor.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64_())).collect(),
        }
    }

    /// Stack same-shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArg("stack of zero tensors".into()))?;
        let mut shape = Vec::with_capacity(first.shape.len() + 1);
        shape.push(items.len());
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::Shape(format!(
                    "stack of mismatched shapes {:?} vs {:?}",
                    t.shape, first.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape, data })
    }

    /// Row `i` of the leading axis as a tensor of the remaining shape.
    pub fn index_axis0(&self, i: usize) -> Tensor<T> {
        let inner: usize = self.shape[1..].iter().product();
        Tensor { shape: self.shape[1..].to_vec(), data: self.data[i * inner..(i + 1) * inner].to_vec() }
    }
}

/// A parameter tensor together with its gradient accumulator.
///
/// The two tensors always have identical shape; `grad` starts at zero.
#[derive(Debug, Clone)]
pub struct GradPair<T = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> GradPair<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        GradPair { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

pub(crate) fn check_4d<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::Shape(format!("{what}: expected 4-D [N,C,H,W], got {:?}", t.shape()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        let r = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]);
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn data_length_matches_shape_product() {
        let t = Tensor::<f32>::zeros(&[2, 3, 4]);
        assert_eq!(t.len(), 24);
        assert_eq!(t.shape(), &[2, 3, 4]);
    }

    #[test]
    fn stack_and_index_roundtrip() {
        let a = Tensor::from_vec(&[2], vec![1.0f32, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![3.0f32, 4.0]).unwrap();
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.index_axis0(1).data(), &[3.0, 4.0]);
    }

    #[test]
    fn gradpair_shapes_stay_equal() {
        let p = GradPair::new(Tensor::<f32>::zeros(&[3, 4]));
        assert_eq!(p.value.shape(), p.grad.shape());
    }
}
