//! Non-overlapping max pooling with floor truncation of remainders.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{check_4d, Tensor};

/// Per-output-element argmax positions, as linear indices within the input
/// `[H, W]` plane. Ties pick the first occurrence in row-major scan order.
#[derive(Debug, Clone)]
pub struct PoolArgmax {
    pub input_shape: [usize; 4],
    pub pool_h: usize,
    pub pool_w: usize,
    pub indices: Vec<u32>,
}

/// Window max over `pool_h x pool_w` tiles; remainder rows/cols are dropped.
pub fn maxpool2d<T: Scalar>(
    input: &Tensor<T>,
    pool_h: usize,
    pool_w: usize,
) -> Result<(Tensor<T>, PoolArgmax)> {
    let (n, c, h, w) = check_4d(input, "maxpool2d input")?;
    if pool_h == 0 || pool_w == 0 {
        return Err(Error::InvalidArg("pool extents must be positive".into()));
    }
    if pool_h > h || pool_w > w {
        return Err(Error::InvalidArg(format!(
            "pool {pool_h}x{pool_w} exceeds input {h}x{w}"
        )));
    }
    let (oh, ow) = (h / pool_h, w / pool_w);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut indices = vec![0u32; n * c * oh * ow];
    let xdata = input.data();

    out.data_mut()
        .par_chunks_mut(oh * ow)
        .zip(indices.par_chunks_mut(oh * ow))
        .enumerate()
        .for_each(|(plane, (out_p, idx_p))| {
            let x_p = &xdata[plane * h * w..(plane + 1) * h * w];
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut best = x_p[oi * pool_h * w + oj * pool_w];
                    let mut best_idx = (oi * pool_h * w + oj * pool_w) as u32;
                    for u in 0..pool_h {
                        let row = (oi * pool_h + u) * w + oj * pool_w;
                        for v in 0..pool_w {
                            let val = x_p[row + v];
                            if val > best {
                                best = val;
                                best_idx = (row + v) as u32;
                            }
                        }
                    }
                    out_p[oi * ow + oj] = best;
                    idx_p[oi * ow + oj] = best_idx;
                }
            }
        });

    Ok((out, PoolArgmax { input_shape: [n, c, h, w], pool_h, pool_w, indices }))
}

/// Routes each upstream gradient element to its argmax input position.
pub fn maxpool2d_backward<T: Scalar>(argmax: &PoolArgmax, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = argmax.input_shape;
    let (oh, ow) = (h / argmax.pool_h, w / argmax.pool_w);
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(Error::Shape(format!(
            "maxpool2d grad_out {:?}, expected [{n}, {c}, {oh}, {ow}]",
            grad_out.shape()
        )));
    }
    let mut d_input = Tensor::zeros(&[n, c, h, w]);
    let gdata = grad_out.data();
    d_input
        .data_mut()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(plane, dx_p)| {
            let g_p = &gdata[plane * oh * ow..(plane + 1) * oh * ow];
            let idx_p = &argmax.indices[plane * oh * ow..(plane + 1) * oh * ow];
            for (g, idx) in g_p.iter().zip(idx_p.iter()) {
                dx_p[*idx as usize] = dx_p[*idx as usize] + *g;
            }
        });
    Ok(d_input)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_window_takes_global_max() {
        let input = Tensor::from_vec(&[1, 1, 4, 4], (0..16).map(|i| i as f32).collect()).unwrap();
        let (out, _) = maxpool2d(&input, 4, 4).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data()[0], 15.0);
    }

    #[test]
    fn pool_1x1_is_identity() {
        let input = Tensor::from_vec(&[1, 2, 2, 2], vec![3.0f32, -1.0, 0.0, 2.0, 5.0, 5.0, -2.0, 7.0]).unwrap();
        let (out, _) = maxpool2d(&input, 1, 1).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn remainders_are_dropped_and_match_window_scan() {
        let input = Tensor::from_vec(&[1, 1, 5, 5], (0..25).map(|i| ((i * 7) % 13) as f32).collect()).unwrap();
        let (out, _) = maxpool2d(&input, 2, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        // Brute-force window scan over the kept 4x4 region.
        for oi in 0..2 {
            for oj in 0..2 {
                let mut best = f32::NEG_INFINITY;
                for u in 0..2 {
                    for v in 0..2 {
                        best = best.max(input.data()[(oi * 2 + u) * 5 + (oj * 2 + v)]);
                    }
                }
                assert_eq!(out.data()[oi * 2 + oj], best);
            }
        }
    }

    #[test]
    fn oversized_pool_is_an_error() {
        let input = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        assert!(maxpool2d(&input, 4, 1).is_err());
    }

    #[test]
    fn backward_routes_to_first_argmax_on_ties() {
        let input = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f32, 1.0, 1.0, 1.0]).unwrap();
        let (_, am) = maxpool2d(&input, 2, 2).unwrap();
        let g = Tensor::from_vec(&[1, 1, 1, 1], vec![5.0f32]).unwrap();
        let dx = maxpool2d_backward(&am, &g).unwrap();
        assert_eq!(dx.data(), &[5.0, 0.0, 0.0, 0.0]);
    }
}
