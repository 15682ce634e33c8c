//! Batch normalization over `[N, H, W]` per channel.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::sum;
use crate::scalar::Scalar;
use crate::tensor::{check_4d, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch statistics saved by the training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
}

fn check_channel_vec<T: Scalar>(v: &Tensor<T>, c: usize, what: &str) -> Result<()> {
    if v.shape() != [c] {
        return Err(Error::Shape(format!("{what} has shape {:?}, expected [{c}]", v.shape())));
    }
    Ok(())
}

/// Normalizes by batch statistics (training) or running statistics (eval).
///
/// Training mode updates `running_mean`/`running_var` in place with momentum
/// 0.1 (unbiased variance) and returns the cache needed by the backward pass.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    training: bool,
) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
    let (n, c, h, w) = check_4d(input, "batchnorm input")?;
    if c == 0 {
        return Err(Error::Shape("batchnorm: zero-extent channel dimension".into()));
    }
    check_channel_vec(gamma, c, "gamma")?;
    check_channel_vec(beta, c, "beta")?;
    check_channel_vec(running_mean, c, "running_mean")?;
    check_channel_vec(running_var, c, "running_var")?;

    let m = n * h * w;
    let eps = T::from_f64(BN_EPS);
    let plane = h * w;
    let chw = c * plane;
    let xdata = input.data();

    let (mean, inv_std, cache) = if training {
        if m < 2 {
            return Err(Error::InvalidArg(
                "batchnorm training needs more than one value per channel".into(),
            ));
        }
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        mean.par_iter_mut().zip(var.par_iter_mut()).enumerate().for_each(|(ci, (mu, va))| {
            let mut acc = T::zero();
            for ni in 0..n {
                acc = acc + sum(&xdata[ni * chw + ci * plane..ni * chw + (ci + 1) * plane]);
            }
            let mu_c = acc / T::from_usize_(m);
            let mut acc2 = T::zero();
            for ni in 0..n {
                for v in &xdata[ni * chw + ci * plane..ni * chw + (ci + 1) * plane] {
                    let d = *v - mu_c;
                    acc2 = acc2 + d * d;
                }
            }
            *mu = mu_c;
            *va = acc2 / T::from_usize_(m);
        });

        let mom = T::from_f64(BN_MOMENTUM);
        let one = T::one();
        let unbias = T::from_usize_(m) / T::from_usize_(m - 1);
        for ci in 0..c {
            let rm = &mut running_mean.data_mut()[ci];
            *rm = (one - mom) * *rm + mom * mean[ci];
            let rv = &mut running_var.data_mut()[ci];
            *rv = (one - mom) * *rv + mom * var[ci] * unbias;
        }
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let cache = BatchNormCache { mean: mean.clone(), inv_std: inv_std.clone() };
        (mean, inv_std, Some(cache))
    } else {
        let mean = running_mean.data().to_vec();
        let inv_std: Vec<T> =
            running_var.data().iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        (mean, inv_std, None)
    };

    let mut out = Tensor::zeros(&[n, c, h, w]);
    let gdata = gamma.data();
    let bdata = beta.data();
    out.data_mut().par_chunks_mut(plane).enumerate().for_each(|(pi, out_p)| {
        let ci = pi % c;
        let x_p = &xdata[pi * plane..(pi + 1) * plane];
        let (mu, istd, ga, be) = (mean[ci], inv_std[ci], gdata[ci], bdata[ci]);
        for (o, x) in out_p.iter_mut().zip(x_p.iter()) {
            *o = ga * (*x - mu) * istd + be;
        }
    });
    Ok((out, cache))
}

/// Full batch-statistics gradient: `(d_input, d_gamma, d_beta)`.
pub fn batchnorm2d_backward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BatchNormCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = check_4d(input, "batchnorm input")?;
    if grad_out.shape() != input.shape() {
        return Err(Error::Shape(format!(
            "batchnorm grad_out {:?} does not match input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let plane = h * w;
    let chw = c * plane;
    let m = n * h * w;
    let m_t = T::from_usize_(m);
    let xdata = input.data();
    let gdata = grad_out.data();

    let mut d_gamma = Tensor::zeros(&[c]);
    let mut d_beta = Tensor::zeros(&[c]);
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    d_gamma
        .data_mut()
        .par_iter_mut()
        .zip(d_beta.data_mut().par_iter_mut())
        .zip(sum_dy.par_iter_mut().zip(sum_dy_xhat.par_iter_mut()))
        .enumerate()
        .for_each(|(ci, ((dg, db), (sdy, sdyx)))| {
            let (mu, istd) = (cache.mean[ci], cache.inv_std[ci]);
            let mut acc_dy = T::zero();
            let mut acc_dyx = T::zero();
            for ni in 0..n {
                let base = ni * chw + ci * plane;
                for k in 0..plane {
                    let dy = gdata[base + k];
                    let xhat = (xdata[base + k] - mu) * istd;
                    acc_dy = acc_dy + dy;
                    acc_dyx = acc_dyx + dy * xhat;
                }
            }
            *dg = acc_dyx;
            *db = acc_dy;
            *sdy = acc_dy;
            *sdyx = acc_dyx;
        });

    let mut d_input = Tensor::zeros(&[n, c, h, w]);
    let gam = gamma.data();
    d_input.data_mut().par_chunks_mut(plane).enumerate().for_each(|(pi, dx_p)| {
        let ci = pi % c;
        let (mu, istd) = (cache.mean[ci], cache.inv_std[ci]);
        let scale = gam[ci] * istd / m_t;
        let (sdy, sdyx) = (sum_dy[ci], sum_dy_xhat[ci]);
        let x_p = &xdata[pi * plane..(pi + 1) * plane];
        let g_p = &gdata[pi * plane..(pi + 1) * plane];
        for k in 0..plane {
            let xhat = (x_p[k] - mu) * istd;
            dx_p[k] = scale * (m_t * g_p[k] - sdy - xhat * sdyx);
        }
    });

    Ok((d_input, d_gamma, d_beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn stats(xs: &[f32]) -> (f32, f32) {
        let m = xs.iter().sum::<f32>() / xs.len() as f32;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f32>() / xs.len() as f32;
        (m, v)
    }

    #[test]
    fn training_mode_normalizes_per_channel() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f32>::rand_uniform(&[2, 3, 4, 4], 5.0, &mut rng);
        let gamma = Tensor::filled(&[3], 1.0f32);
        let beta = Tensor::zeros(&[3]);
        let mut rm = Tensor::zeros(&[3]);
        let mut rv = Tensor::filled(&[3], 1.0f32);
        let (y, _) = batchnorm2d(&x, &gamma, &beta, &mut rm, &mut rv, true).unwrap();
        for ci in 0..3 {
            let vals: Vec<f32> = (0..2)
                .flat_map(|ni| y.data()[(ni * 3 + ci) * 16..(ni * 3 + ci + 1) * 16].to_vec())
                .collect();
            let (m, v) = stats(&vals);
            assert!(m.abs() < 1e-4, "channel {ci} mean {m}");
            assert!((v - 1.0).abs() < 1e-3, "channel {ci} var {v}");
        }
    }

    #[test]
    fn gamma_beta_shift_and_scale() {
        // Already-normalized input: standard normal draws, then exact
        // re-standardization so the batch stats are (0, 1).
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let raw = Tensor::<f32>::rand_uniform(&[4, 1, 5, 5], 2.0, &mut rng);
        let (m0, v0) = stats(raw.data());
        let x = Tensor::from_vec(
            &[4, 1, 5, 5],
            raw.data().iter().map(|x| (x - m0) / v0.sqrt()).collect(),
        )
        .unwrap();
        let gamma = Tensor::filled(&[1], 2.0f32);
        let beta = Tensor::filled(&[1], 3.0f32);
        let mut rm = Tensor::zeros(&[1]);
        let mut rv = Tensor::filled(&[1], 1.0f32);
        let (y, _) = batchnorm2d(&x, &gamma, &beta, &mut rm, &mut rv, true).unwrap();
        let (m, v) = stats(y.data());
        assert!((m - 3.0).abs() < 1e-3, "mean {m}");
        assert!((v.sqrt() - 2.0).abs() < 1e-2, "std {}", v.sqrt());
    }

    #[test]
    fn eval_mode_is_deterministic_and_leaves_stats_alone() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::rand_uniform(&[2, 2, 3, 3], 1.0, &mut rng);
        let gamma = Tensor::filled(&[2], 1.5f32);
        let beta = Tensor::filled(&[2], -0.5f32);
        let mut rm = Tensor::from_vec(&[2], vec![0.1f32, -0.2]).unwrap();
        let mut rv = Tensor::from_vec(&[2], vec![1.3f32, 0.7]).unwrap();
        let rm0 = rm.clone();
        let rv0 = rv.clone();
        let (y1, c1) = batchnorm2d(&x, &gamma, &beta, &mut rm, &mut rv, false).unwrap();
        let (y2, _) = batchnorm2d(&x, &gamma, &beta, &mut rm, &mut rv, false).unwrap();
        assert!(c1.is_none());
        assert_eq!(y1.data(), y2.data());
        assert_eq!(rm.data(), rm0.data());
        assert_eq!(rv.data(), rv0.data());
    }

    #[test]
    fn zero_channel_input_is_an_error() {
        let x = Tensor::<f32>::zeros(&[1, 0, 2, 2]);
        let g = Tensor::<f32>::zeros(&[0]);
        let b = Tensor::<f32>::zeros(&[0]);
        let mut rm = Tensor::<f32>::zeros(&[0]);
        let mut rv = Tensor::<f32>::zeros(&[0]);
        assert!(batchnorm2d(&x, &g, &b, &mut rm, &mut rv, true).is_err());
    }
}
