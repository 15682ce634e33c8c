//! 2-D cross-correlation with zero "same" padding, stride 1.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{axpy, dot, sum};
use crate::scalar::Scalar;
use crate::tensor::{check_4d, Tensor};

/// Static description of a convolution: channel counts and kernel extents.
///
/// Stride is fixed to 1 and padding is "same": output spatial extents equal
/// input extents, with the asymmetric remainder of the padding going to the
/// bottom/right. `kernel_h` indexes frequency, `kernel_w` indexes time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel_h: usize, kernel_w: usize) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 {
            return Err(Error::InvalidArg(format!(
                "conv spec extents must be positive: cin={in_channels} cout={out_channels} kh={kernel_h} kw={kernel_w}"
            )));
        }
        Ok(ConvSpec { in_channels, out_channels, kernel_h, kernel_w })
    }

    /// Kernel grid size `M = kernel_h * kernel_w`.
    pub fn grid_size(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    /// Top padding; the remaining `kernel_h - 1 - pad_top` rows pad the bottom.
    pub fn pad_top(&self) -> usize {
        (self.kernel_h - 1) / 2
    }

    pub fn pad_left(&self) -> usize {
        (self.kernel_w - 1) / 2
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    /// Kernel-grid offset of point `m` relative to the output location,
    /// in (row, col) input coordinates under same padding.
    #[inline]
    pub fn grid_offset(&self, m: usize) -> (isize, isize) {
        let u = m / self.kernel_w;
        let v = m % self.kernel_w;
        (u as isize - self.pad_top() as isize, v as isize - self.pad_left() as isize)
    }

    pub(crate) fn check_shapes<T: Scalar>(
        &self,
        input: &Tensor<T>,
        weights: &Tensor<T>,
        bias: &Tensor<T>,
    ) -> Result<(usize, usize, usize)> {
        let (n, cin, h, w) = check_4d(input, "conv2d input")?;
        if cin != self.in_channels {
            return Err(Error::Shape(format!(
                "conv2d input has {cin} channels, spec expects {}",
                self.in_channels
            )));
        }
        if weights.shape() != self.weight_shape() {
            return Err(Error::Shape(format!(
                "conv2d weights {:?}, spec expects {:?}",
                weights.shape(),
                self.weight_shape()
            )));
        }
        if bias.shape() != [self.out_channels] {
            return Err(Error::Shape(format!(
                "conv2d bias {:?}, spec expects [{}]",
                bias.shape(),
                self.out_channels
            )));
        }
        Ok((n, h, w))
    }
}

/// Valid output-column range `[j0, j1)` for kernel column `v`, plus the
/// corresponding start column in the input row.
#[inline]
fn col_range(w: usize, v: usize, pad_left: usize) -> (usize, usize, usize) {
    let lo = pad_left.saturating_sub(v);
    let hi = (w + pad_left).saturating_sub(v).min(w);
    let src = (lo + v) - pad_left;
    (lo, hi.max(lo), src)
}

/// Forward cross-correlation. Output shape `[N, Cout, H, W]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (n, h, w) = spec.check_shapes(input, weights, bias)?;
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let (pt, pl) = (spec.pad_top(), spec.pad_left());

    let mut out = Tensor::zeros(&[n, cout, h, w]);
    let in_chw = cin * h * w;
    let out_chw = cout * h * w;
    let xdata = input.data();
    let wdata = weights.data();
    let bdata = bias.data();

    out.data_mut()
        .par_chunks_mut(out_chw)
        .enumerate()
        .for_each(|(ni, out_n)| {
            let x_n = &xdata[ni * in_chw..(ni + 1) * in_chw];
            for co in 0..cout {
                let plane = &mut out_n[co * h * w..(co + 1) * h * w];
                plane.iter_mut().for_each(|o| *o = bdata[co]);
                for ci in 0..cin {
                    let x_c = &x_n[ci * h * w..(ci + 1) * h * w];
                    let w_cc = &wdata[(co * cin + ci) * kh * kw..(co * cin + ci + 1) * kh * kw];
                    for u in 0..kh {
                        let i_lo = pt.saturating_sub(u);
                        let i_hi = (h + pt).saturating_sub(u).min(h);
                        if i_hi <= i_lo {
                            continue;
                        }
                        if kw == 1 {
                            // Column-free kernels span whole contiguous row
                            // blocks: one long fused update.
                            let len = (i_hi - i_lo) * w;
                            let iy = i_lo + u - pt;
                            axpy(
                                &mut plane[i_lo * w..i_lo * w + len],
                                w_cc[u],
                                &x_c[iy * w..iy * w + len],
                            );
                            continue;
                        }
                        for i in i_lo..i_hi {
                            let iy = i + u - pt;
                            let x_row = &x_c[iy * w..(iy + 1) * w];
                            let out_row = &mut plane[i * w..(i + 1) * w];
                            for v in 0..kw {
                                let (j0, j1, src) = col_range(w, v, pl);
                                if j1 > j0 {
                                    axpy(
                                        &mut out_row[j0..j1],
                                        w_cc[u * kw + v],
                                        &x_row[src..src + (j1 - j0)],
                                    );
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Exact gradients: `(d_input, d_weights, d_bias)` for upstream `grad_out`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, cin, h, w) = check_4d(input, "conv2d input")?;
    let (gn, gc, gh, gw) = check_4d(grad_out, "conv2d grad_out")?;
    if (gn, gc, gh, gw) != (n, spec.out_channels, h, w) {
        return Err(Error::Shape(format!(
            "conv2d grad_out {:?} does not match output [{n}, {}, {h}, {w}]",
            grad_out.shape(),
            spec.out_channels
        )));
    }
    let cout = spec.out_channels;
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let (pt, pl) = (spec.pad_top(), spec.pad_left());
    let in_chw = cin * h * w;
    let out_chw = cout * h * w;
    let xdata = input.data();
    let gdata = grad_out.data();
    let wdata = weights.data();

    let mut d_bias = Tensor::zeros(&[cout]);
    d_bias.data_mut().par_iter_mut().enumerate().for_each(|(co, db)| {
        let mut acc = T::zero();
        for ni in 0..n {
            let g_plane = &gdata[ni * out_chw + co * h * w..ni * out_chw + (co + 1) * h * w];
            acc = acc + sum(g_plane);
        }
        *db = acc;
    });

    let mut d_weights = Tensor::zeros(&[cout, cin, kh, kw]);
    d_weights
        .data_mut()
        .par_chunks_mut(cin * kh * kw)
        .enumerate()
        .for_each(|(co, dw_co)| {
            for ci in 0..cin {
                for u in 0..kh {
                    let i_lo = pt.saturating_sub(u);
                    let i_hi = (h + pt).saturating_sub(u).min(h);
                    if kw == 1 {
                        let mut acc = T::zero();
                        if i_hi > i_lo {
                            let len = (i_hi - i_lo) * w;
                            let iy = i_lo + u - pt;
                            for ni in 0..n {
                                let g_c = &gdata[ni * out_chw + co * h * w..];
                                let x_c = &xdata[ni * in_chw + ci * h * w..];
                                acc = acc
                                    + dot(&g_c[i_lo * w..i_lo * w + len], &x_c[iy * w..iy * w + len]);
                            }
                        }
                        dw_co[ci * kh + u] = acc;
                        continue;
                    }
                    for v in 0..kw {
                        let (j0, j1, src) = col_range(w, v, pl);
                        let mut acc = T::zero();
                        if j1 > j0 && i_hi > i_lo {
                            for ni in 0..n {
                                let g_c = &gdata[ni * out_chw + co * h * w..ni * out_chw + (co + 1) * h * w];
                                let x_c = &xdata[ni * in_chw + ci * h * w..ni * in_chw + (ci + 1) * h * w];
                                for i in i_lo..i_hi {
                                    let iy = i + u - pt;
                                    acc = acc
                                        + dot(
                                            &g_c[i * w + j0..i * w + j1],
                                            &x_c[iy * w + src..iy * w + src + (j1 - j0)],
                                        );
                                }
                            }
                        }
                        dw_co[ci * kh * kw + u * kw + v] = acc;
                    }
                }
            }
        });

    let mut d_input = Tensor::zeros(&[n, cin, h, w]);
    d_input
        .data_mut()
        .par_chunks_mut(in_chw)
        .enumerate()
        .for_each(|(ni, dx_n)| {
            for co in 0..cout {
                let g_c = &gdata[ni * out_chw + co * h * w..ni * out_chw + (co + 1) * h * w];
                for ci in 0..cin {
                    let dx_c = &mut dx_n[ci * h * w..(ci + 1) * h * w];
                    let w_cc = &wdata[(co * cin + ci) * kh * kw..(co * cin + ci + 1) * kh * kw];
                    for u in 0..kh {
                        let i_lo = pt.saturating_sub(u);
                        let i_hi = (h + pt).saturating_sub(u).min(h);
                        if i_hi <= i_lo {
                            continue;
                        }
                        if kw == 1 {
                            let len = (i_hi - i_lo) * w;
                            let iy = i_lo + u - pt;
                            axpy(
                                &mut dx_c[iy * w..iy * w + len],
                                w_cc[u],
                                &g_c[i_lo * w..i_lo * w + len],
                            );
                            continue;
                        }
                        for i in i_lo..i_hi {
                            let iy = i + u - pt;
                            let g_row = &g_c[i * w..(i + 1) * w];
                            let dx_row = &mut dx_c[iy * w..(iy + 1) * w];
                            for v in 0..kw {
                                let (j0, j1, src) = col_range(w, v, pl);
                                if j1 > j0 {
                                    axpy(
                                        &mut dx_row[src..src + (j1 - j0)],
                                        w_cc[u * kw + v],
                                        &g_row[j0..j1],
                                    );
                                }
                            }
                        }
                    }
                }
            }
        });

    Ok((d_input, d_weights, d_bias))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(cin: usize, cout: usize, kh: usize, kw: usize) -> ConvSpec {
        ConvSpec::new(cin, cout, kh, kw).unwrap()
    }

    #[test]
    fn ones_kernel_sums_under_zero_padding() {
        let input = Tensor::filled(&[1, 1, 3, 3], 1.0f32);
        let weights = Tensor::filled(&[1, 1, 2, 2], 1.0f32);
        let bias = Tensor::zeros(&[1]);
        let out = conv2d(&input, &weights, &bias, &spec(1, 1, 2, 2)).unwrap();
        // kh=kw=2 puts the padding on the bottom/right, so the top-left 2x2
        // region sees full windows.
        let expect = [4.0, 4.0, 2.0, 4.0, 4.0, 2.0, 2.0, 2.0, 1.0];
        assert_eq!(out.shape(), &[1, 1, 3, 3]);
        for (o, e) in out.data().iter().zip(expect.iter()) {
            assert!((o - e).abs() < 1e-6, "{o} vs {e}");
        }
    }

    #[test]
    fn identity_kernel_is_identity() {
        let input = Tensor::from_vec(&[1, 1, 2, 3], vec![1.0f32, -2.0, 3.0, 0.5, 4.0, -1.0]).unwrap();
        let weights = Tensor::filled(&[1, 1, 1, 1], 1.0f32);
        let bias = Tensor::zeros(&[1]);
        let out = conv2d(&input, &weights, &bias, &spec(1, 1, 1, 1)).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let input = Tensor::<f32>::zeros(&[1, 2, 3, 3]);
        let weights = Tensor::<f32>::zeros(&[1, 1, 1, 1]);
        let bias = Tensor::<f32>::zeros(&[1]);
        let err = conv2d(&input, &weights, &bias, &spec(1, 1, 1, 1)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn asymmetric_padding_goes_bottom_right() {
        // kernel 2x1: pad_top = 0, pad_bottom = 1.
        let s = spec(1, 1, 2, 1);
        assert_eq!(s.pad_top(), 0);
        // kernel 4x1: pad_top = 1, pad_bottom = 2.
        assert_eq!(spec(1, 1, 4, 1).pad_top(), 1);
        assert_eq!(spec(1, 1, 1, 16).pad_left(), 7);
    }

    #[test]
    fn backward_matches_brute_force_on_small_case() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let s = spec(2, 3, 2, 3);
        let x = Tensor::<f64>::rand_uniform(&[2, 2, 4, 5], 1.0, &mut rng);
        let wt = Tensor::<f64>::rand_uniform(&s.weight_shape(), 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(&[3], 1.0, &mut rng);
        let g = Tensor::<f64>::rand_uniform(&[2, 3, 4, 5], 1.0, &mut rng);

        let (dx, dw, db) = conv2d_backward(&x, &wt, &s, &g).unwrap();

        // Brute-force: differentiate sum(g .* conv(x)) by explicit loops.
        let (pt, pl) = (s.pad_top() as isize, s.pad_left() as isize);
        let mut dx_ref = Tensor::<f64>::zeros(&[2, 2, 4, 5]);
        let mut dw_ref = Tensor::<f64>::zeros(&s.weight_shape());
        let mut db_ref = Tensor::<f64>::zeros(&[3]);
        let (h, w) = (4isize, 5isize);
        for n in 0..2usize {
            for co in 0..3usize {
                for i in 0..4usize {
                    for j in 0..5usize {
                        let gv = g.data()[((n * 3 + co) * 4 + i) * 5 + j];
                        db_ref.data_mut()[co] += gv;
                        for ci in 0..2usize {
                            for u in 0..2usize {
                                for v in 0..3usize {
                                    let iy = i as isize + u as isize - pt;
                                    let jx = j as isize + v as isize - pl;
                                    if iy >= 0 && iy < h && jx >= 0 && jx < w {
                                        let xi = ((n * 2 + ci) * 4 + iy as usize) * 5 + jx as usize;
                                        let wi = ((co * 2 + ci) * 2 + u) * 3 + v;
                                        dw_ref.data_mut()[wi] += gv * x.data()[xi];
                                        dx_ref.data_mut()[xi] += gv * wt.data()[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        assert!(dx.max_abs_diff(&dx_ref) < 1e-12);
        assert!(dw.max_abs_diff(&dw_ref) < 1e-12);
        assert!(db.max_abs_diff(&db_ref) < 1e-12);
    }
}
