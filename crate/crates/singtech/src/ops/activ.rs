//! ReLU, inverted dropout, and global average pooling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{check_4d, Tensor};

/// Packed per-element boolean mask (ReLU active set, dropout keep set).
#[derive(Debug, Clone)]
pub struct BitMask {
    words: Vec<u64>,
    len: usize,
}

impl BitMask {
    pub fn with_len(len: usize) -> Self {
        BitMask { words: vec![0u64; len.div_ceil(64)], len }
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1u64 << (i % 64);
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// `max(x, 0)`; the mask records which elements were positive.
pub fn relu<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, BitMask) {
    let mut mask = BitMask::with_len(input.len());
    let mut out = Tensor::zeros(input.shape());
    for (i, (o, x)) in out.data_mut().iter_mut().zip(input.data().iter()).enumerate() {
        if *x > T::zero() {
            *o = *x;
            mask.set(i);
        }
    }
    (out, mask)
}

pub fn relu_backward<T: Scalar>(mask: &BitMask, grad_out: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(mask.len(), grad_out.len());
    let mut dx = Tensor::zeros(grad_out.shape());
    for (i, (d, g)) in dx.data_mut().iter_mut().zip(grad_out.data().iter()).enumerate() {
        if mask.get(i) {
            *d = *g;
        }
    }
    dx
}

/// Keep mask plus the inverted-scaling factor applied at train time.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    pub keep: BitMask,
    pub scale: f64,
}

/// Inverted dropout: kept activations are divided by `1 - rate` in training
/// mode so that eval mode is the identity.
pub fn dropout<T: Scalar>(
    input: Tensor<T>,
    rate: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<(Tensor<T>, Option<DropoutMask>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArg(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((input, None));
    }
    let mut input = input;
    let scale = 1.0 / (1.0 - rate);
    let scale_t = T::from_f64(scale);
    let mut keep = BitMask::with_len(input.len());
    for (i, v) in input.data_mut().iter_mut().enumerate() {
        if rng.gen::<f64>() >= rate {
            keep.set(i);
            *v = *v * scale_t;
        } else {
            *v = T::zero();
        }
    }
    Ok((input, Some(DropoutMask { keep, scale })))
}

pub fn dropout_backward<T: Scalar>(mask: &DropoutMask, grad_out: &Tensor<T>) -> Tensor<T> {
    let scale = T::from_f64(mask.scale);
    let mut dx = Tensor::zeros(grad_out.shape());
    for (i, (d, g)) in dx.data_mut().iter_mut().zip(grad_out.data().iter()).enumerate() {
        if mask.keep.get(i) {
            *d = *g * scale;
        }
    }
    dx
}

/// Mean over the spatial extent: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = check_4d(input, "global_avg_pool input")?;
    let plane = h * w;
    let inv = T::one() / T::from_usize_(plane);
    let mut out = Tensor::zeros(&[n, c]);
    for (pi, o) in out.data_mut().iter_mut().enumerate() {
        *o = crate::kernels::sum(&input.data()[pi * plane..(pi + 1) * plane]) * inv;
    }
    Ok(out)
}

pub fn global_avg_pool_backward<T: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = *input_shape else {
        return Err(Error::Shape(format!("expected 4-D input shape, got {input_shape:?}")));
    };
    if grad_out.shape() != [n, c] {
        return Err(Error::Shape(format!(
            "global_avg_pool grad_out {:?}, expected [{n}, {c}]",
            grad_out.shape()
        )));
    }
    let plane = h * w;
    let inv = T::one() / T::from_usize_(plane);
    let mut dx = Tensor::zeros(input_shape);
    for (pi, g) in grad_out.data().iter().enumerate() {
        let gv = *g * inv;
        dx.data_mut()[pi * plane..(pi + 1) * plane].iter_mut().for_each(|d| *d = gv);
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_vec(&[3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        let (y, _) = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn dropout_eval_is_bitwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::from_vec(&[4], vec![0.25f32, -1.5, 3.0, 0.0]).unwrap();
        let (y, mask) = dropout(x.clone(), 0.3, false, &mut rng).unwrap();
        assert!(mask.is_none());
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn dropout_training_scales_kept_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::filled(&[1000], 1.0f32);
        let (y, mask) = dropout(x, 0.3, true, &mut rng).unwrap();
        let mask = mask.unwrap();
        let kept = (0..1000).filter(|i| mask.keep.get(*i)).count();
        // Crude Bernoulli(0.7) bound.
        assert!((600..=800).contains(&kept), "kept {kept}");
        for i in 0..1000 {
            let expect = if mask.keep.get(i) { 1.0 / 0.7 } else { 0.0 };
            assert!((y.data()[i] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_rate_one_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f32>::zeros(&[2]);
        assert!(dropout(x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn gap_means_each_channel() {
        let x = Tensor::from_vec(&[1, 2, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert_eq!(y.data(), &[2.5, 0.0]);
    }
}
