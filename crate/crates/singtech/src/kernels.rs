//! Tight inner loops shared by the layer implementations.
//!
//! Reductions use fixed 8-way unrolled accumulators: LLVM will not reorder
//! float sums on its own, and the fixed order keeps results identical for
//! every thread count.

use crate::scalar::Scalar;

/// `dst[i] += s * src[i]`.
#[inline]
pub(crate) fn axpy<T: Scalar>(dst: &mut [T], s: T, src: &[T]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, x) in dst.iter_mut().zip(src.iter()) {
        *d = *d + s * *x;
    }
}

/// Dot product with 8 partial accumulators.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (pa, pb) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for l in 0..8 {
            acc[l] = acc[l] + pa[l] * pb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail = tail + a[i] * b[i];
    }
    (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail
}

/// Sum with 8 partial accumulators.
#[inline]
pub(crate) fn sum<T: Scalar>(a: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let p = &a[i * 8..i * 8 + 8];
        for l in 0..8 {
            acc[l] = acc[l] + p[l];
        }
    }
    let mut tail = T::zero();
    for v in &a[chunks * 8..] {
        tail = tail + *v;
    }
    (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| i as f64 * 0.25).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn sum_matches_naive() {
        let a: Vec<f64> = (0..101).map(|i| (i as f64).cos()).collect();
        let naive: f64 = a.iter().sum();
        assert!((sum(&a) - naive).abs() < 1e-12);
    }
}
