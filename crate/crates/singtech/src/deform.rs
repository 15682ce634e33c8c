//! Modulated deformable 2-D convolution.
//!
//! A second convolution branch with the same kernel shape as the main one
//! predicts, per output location and kernel point, a fractional (dy, dx)
//! displacement plus a modulation mask. Sampling is bilinear with zero
//! padding outside the map. Masks enter as `2 * sigmoid(logit)` so the
//! zero-initialized branch (offsets 0, masks 0.5) reproduces the standard
//! convolution exactly.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::dot;
use crate::ops::conv::{conv2d, conv2d_backward, ConvSpec};
use crate::scalar::Scalar;
use crate::tensor::{check_4d, GradPair, Tensor};

const INVALID: usize = usize::MAX;

/// Corner indices (plane-linear, `INVALID` when outside the map) and
/// interpolation weights for one sampling position.
#[derive(Debug, Clone, Copy)]
struct BilinearPoint {
    idx: [usize; 4],
    wgt: [f64; 4],
    dw_dy: [f64; 4],
    dw_dx: [f64; 4],
}

fn bilinear_point(h: usize, w: usize, y: f64, x: f64) -> BilinearPoint {
    let y0 = y.floor();
    let x0 = x.floor();
    let ty = y - y0;
    let tx = x - x0;
    let (y0i, x0i) = (y0 as isize, x0 as isize);
    let corner = |cy: isize, cx: isize| -> usize {
        if cy >= 0 && cy < h as isize && cx >= 0 && cx < w as isize {
            cy as usize * w + cx as usize
        } else {
            INVALID
        }
    };
    BilinearPoint {
        idx: [corner(y0i, x0i), corner(y0i, x0i + 1), corner(y0i + 1, x0i), corner(y0i + 1, x0i + 1)],
        wgt: [(1.0 - ty) * (1.0 - tx), (1.0 - ty) * tx, ty * (1.0 - tx), ty * tx],
        dw_dy: [-(1.0 - tx), -tx, 1.0 - tx, tx],
        dw_dx: [-(1.0 - ty), 1.0 - ty, -ty, ty],
    }
}

/// Bilinear interpolation of `map: [C, H, W]` at fractional (y, x), one value
/// per channel. Positions outside `[0, H-1] x [0, W-1]` read as zero.
pub fn bilinear_sample<T: Scalar>(map: &Tensor<T>, y: f64, x: f64) -> Result<Vec<T>> {
    let [c, h, w] = *map.shape() else {
        return Err(Error::Shape(format!("bilinear_sample map must be [C,H,W], got {:?}", map.shape())));
    };
    let pt = bilinear_point(h, w, y, x);
    let plane = h * w;
    let mut out = Vec::with_capacity(c);
    for ci in 0..c {
        let base = &map.data()[ci * plane..(ci + 1) * plane];
        let mut acc = T::zero();
        for k in 0..4 {
            if pt.idx[k] != INVALID {
                acc = acc + T::from_f64(pt.wgt[k]) * base[pt.idx[k]];
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// Per-location fractional displacements and modulation masks for every
/// kernel point: `offsets: [N, 2M, H, W]` as (dy_m, dx_m) channel pairs,
/// `masks: [N, M, H, W]` already passed through the sigmoid.
#[derive(Debug, Clone)]
pub struct OffsetField<T> {
    pub offsets: Tensor<T>,
    pub masks: Tensor<T>,
}

/// Main convolution parameters plus the offset branch. The branch has the
/// same kernel shape and input channels as the main convolution and 3M
/// output channels (2M offsets + M mask logits).
#[derive(Debug, Clone)]
pub struct DeformConvLayer<T> {
    pub spec: ConvSpec,
    pub weights: GradPair<T>,
    pub bias: GradPair<T>,
    pub offset_weights: GradPair<T>,
    pub offset_bias: GradPair<T>,
}

impl<T: Scalar> DeformConvLayer<T> {
    /// Kaiming-uniform main weights; offset branch zero-initialized so the
    /// layer starts at the standard-convolution fixed point.
    pub fn new(spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let fan_in = (spec.in_channels * spec.kernel_h * spec.kernel_w) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let weights = GradPair::new(Tensor::rand_uniform(&spec.weight_shape(), bound, rng));
        let bias = GradPair::new(Tensor::zeros(&[spec.out_channels]));
        let off = offset_spec(&spec);
        let offset_weights = GradPair::new(Tensor::zeros(&off.weight_shape()));
        let offset_bias = GradPair::new(Tensor::zeros(&[off.out_channels]));
        DeformConvLayer { spec, weights, bias, offset_weights, offset_bias }
    }
}

/// Spec of the offset branch: same kernel, `3M` output channels.
pub fn offset_spec(main: &ConvSpec) -> ConvSpec {
    ConvSpec {
        in_channels: main.in_channels,
        out_channels: 3 * main.grid_size(),
        kernel_h: main.kernel_h,
        kernel_w: main.kernel_w,
    }
}

/// Runs the offset branch and splits its `3M` channels into raw offsets and
/// sigmoid masks. Spatial extents always equal the input's.
pub fn offset_branch_forward<T: Scalar>(
    layer: &DeformConvLayer<T>,
    input: &Tensor<T>,
) -> Result<OffsetField<T>> {
    let raw = conv2d(input, &layer.offset_weights.value, &layer.offset_bias.value, &offset_spec(&layer.spec))?;
    split_offset_field(&raw, layer.spec.grid_size())
}

/// Splits a raw `[N, 3M, H, W]` branch output into `2M` offsets (as-is) and
/// `M` masks (sigmoid applied).
pub fn split_offset_field<T: Scalar>(raw: &Tensor<T>, m: usize) -> Result<OffsetField<T>> {
    let (n, c, h, w) = check_4d(raw, "offset field")?;
    if c != 3 * m {
        return Err(Error::Shape(format!("offset field has {c} channels, expected 3M = {}", 3 * m)));
    }
    let plane = h * w;
    let mut offsets = Tensor::zeros(&[n, 2 * m, h, w]);
    let mut masks = Tensor::zeros(&[n, m, h, w]);
    for ni in 0..n {
        let src = &raw.data()[ni * c * plane..(ni + 1) * c * plane];
        offsets.data_mut()[ni * 2 * m * plane..(ni + 1) * 2 * m * plane]
            .copy_from_slice(&src[..2 * m * plane]);
        for (dst, v) in masks.data_mut()[ni * m * plane..(ni + 1) * m * plane]
            .iter_mut()
            .zip(&src[2 * m * plane..])
        {
            *dst = T::one() / (T::one() + (-*v).exp());
        }
    }
    Ok(OffsetField { offsets, masks })
}

fn check_field<T: Scalar>(
    spec: &ConvSpec,
    input: &Tensor<T>,
    offsets: &Tensor<T>,
    masks: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    let (n, cin, h, w) = check_4d(input, "deformable conv input")?;
    if cin != spec.in_channels {
        return Err(Error::Shape(format!(
            "deformable conv input has {cin} channels, spec expects {}",
            spec.in_channels
        )));
    }
    let m = spec.grid_size();
    if offsets.shape() != [n, 2 * m, h, w] {
        return Err(Error::Shape(format!(
            "offsets {:?}, expected [{n}, {}, {h}, {w}]",
            offsets.shape(),
            2 * m
        )));
    }
    if masks.shape() != [n, m, h, w] {
        return Err(Error::Shape(format!(
            "masks {:?}, expected [{n}, {m}, {h}, {w}]",
            masks.shape()
        )));
    }
    Ok((n, h, w))
}

/// Weights regrouped as `[M][Cout][Cin]` for contiguous per-kernel-point dots.
fn regroup_weights<T: Scalar>(weights: &Tensor<T>, spec: &ConvSpec) -> Vec<T> {
    let (cout, cin, m) = (spec.out_channels, spec.in_channels, spec.grid_size());
    let mut wt = vec![T::zero(); m * cout * cin];
    for co in 0..cout {
        for ci in 0..cin {
            for k in 0..m {
                wt[(k * cout + co) * cin + ci] = weights.data()[(co * cin + ci) * m + k];
            }
        }
    }
    wt
}

/// Deformed convolution given an explicit offset field:
/// `out[p0, co] = bias[co] + sum_m 2*mask_m(p0) * sum_ci w[co,ci,m] *
/// sample(input[ci], p0 + grid_m + offset_m(p0))`.
pub fn deform_apply<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
    offsets: &Tensor<T>,
    masks: &Tensor<T>,
) -> Result<Tensor<T>> {
    spec.check_shapes(input, weights, bias)?;
    let (n, h, w) = check_field(spec, input, offsets, masks)?;
    let (cin, cout, m) = (spec.in_channels, spec.out_channels, spec.grid_size());
    let plane = h * w;
    let wt = regroup_weights(weights, spec);
    let grid: Vec<(isize, isize)> = (0..m).map(|k| spec.grid_offset(k)).collect();
    let two = T::from_f64(2.0);

    let mut out = Tensor::zeros(&[n, cout, h, w]);
    let xdata = input.data();
    let odata = offsets.data();
    let mdata = masks.data();
    let bdata = bias.data();

    out.data_mut().par_chunks_mut(cout * plane).enumerate().for_each(|(ni, out_n)| {
        let x_n = &xdata[ni * cin * plane..(ni + 1) * cin * plane];
        let off_n = &odata[ni * 2 * m * plane..(ni + 1) * 2 * m * plane];
        let msk_n = &mdata[ni * m * plane..(ni + 1) * m * plane];
        let mut sampled = vec![T::zero(); m * cin];
        for i in 0..h {
            for j in 0..w {
                let pos = i * w + j;
                for (k, s_k) in sampled.chunks_mut(cin).enumerate() {
                    let dy = off_n[(2 * k) * plane + pos].to_f64_();
                    let dx = off_n[(2 * k + 1) * plane + pos].to_f64_();
                    let y = i as f64 + grid[k].0 as f64 + dy;
                    let x = j as f64 + grid[k].1 as f64 + dx;
                    let pt = bilinear_point(h, w, y, x);
                    for (ci, s) in s_k.iter_mut().enumerate() {
                        let base = &x_n[ci * plane..(ci + 1) * plane];
                        let mut acc = T::zero();
                        for c4 in 0..4 {
                            if pt.idx[c4] != INVALID {
                                acc = acc + T::from_f64(pt.wgt[c4]) * base[pt.idx[c4]];
                            }
                        }
                        *s = acc;
                    }
                }
                for co in 0..cout {
                    let mut acc = bdata[co];
                    for k in 0..m {
                        let modw = two * msk_n[k * plane + pos];
                        acc = acc
                            + modw
                                * dot(&wt[(k * cout + co) * cin..(k * cout + co + 1) * cin], &sampled[k * cin..(k + 1) * cin]);
                    }
                    out_n[co * plane + pos] = acc;
                }
            }
        }
    });
    Ok(out)
}

/// Gradients of [`deform_apply`] w.r.t. every argument:
/// `(d_input, d_weights, d_bias, d_offsets, d_masks)`. `d_masks` is the
/// gradient w.r.t. the post-sigmoid masks.
pub fn deform_apply_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    offsets: &Tensor<T>,
    masks: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, h, w) = check_field(spec, input, offsets, masks)?;
    let (cin, cout, m) = (spec.in_channels, spec.out_channels, spec.grid_size());
    if grad_out.shape() != [n, cout, h, w] {
        return Err(Error::Shape(format!(
            "deformable conv grad_out {:?}, expected [{n}, {cout}, {h}, {w}]",
            grad_out.shape()
        )));
    }
    let plane = h * w;
    let wt = regroup_weights(weights, spec);
    let grid: Vec<(isize, isize)> = (0..m).map(|k| spec.grid_offset(k)).collect();
    let two = T::from_f64(2.0);

    let xdata = input.data();
    let odata = offsets.data();
    let mdata = masks.data();
    let gdata = grad_out.data();

    struct PerSample<T> {
        dx: Vec<T>,
        dw: Vec<T>,
        db: Vec<T>,
        doff: Vec<T>,
        dmask: Vec<T>,
    }

    let per_sample: Vec<PerSample<T>> = (0..n)
        .into_par_iter()
        .map(|ni| {
            let x_n = &xdata[ni * cin * plane..(ni + 1) * cin * plane];
            let off_n = &odata[ni * 2 * m * plane..(ni + 1) * 2 * m * plane];
            let msk_n = &mdata[ni * m * plane..(ni + 1) * m * plane];
            let g_n = &gdata[ni * cout * plane..(ni + 1) * cout * plane];
            let mut dx = vec![T::zero(); cin * plane];
            // dw is accumulated in the [M][Cout][Cin] regrouped layout.
            let mut dw = vec![T::zero(); m * cout * cin];
            let mut db = vec![T::zero(); cout];
            let mut doff = vec![T::zero(); 2 * m * plane];
            let mut dmask = vec![T::zero(); m * plane];
            let mut tvec = vec![T::zero(); cin];
            let mut sampled = vec![T::zero(); cin];
            for i in 0..h {
                for j in 0..w {
                    let pos = i * w + j;
                    for co in 0..cout {
                        db[co] = db[co] + g_n[co * plane + pos];
                    }
                    for k in 0..m {
                        let dy_off = off_n[(2 * k) * plane + pos].to_f64_();
                        let dx_off = off_n[(2 * k + 1) * plane + pos].to_f64_();
                        let y = i as f64 + grid[k].0 as f64 + dy_off;
                        let x = j as f64 + grid[k].1 as f64 + dx_off;
                        let pt = bilinear_point(h, w, y, x);
                        for (ci, s) in sampled.iter_mut().enumerate() {
                            let base = &x_n[ci * plane..(ci + 1) * plane];
                            let mut acc = T::zero();
                            for c4 in 0..4 {
                                if pt.idx[c4] != INVALID {
                                    acc = acc + T::from_f64(pt.wgt[c4]) * base[pt.idx[c4]];
                                }
                            }
                            *s = acc;
                        }
                        // tvec[ci] = sum_co g[co] * w[k, co, ci]
                        tvec.iter_mut().for_each(|t| *t = T::zero());
                        for co in 0..cout {
                            let g = g_n[co * plane + pos];
                            if g != T::zero() {
                                crate::kernels::axpy(
                                    &mut tvec,
                                    g,
                                    &wt[(k * cout + co) * cin..(k * cout + co + 1) * cin],
                                );
                            }
                        }
                        let mask = msk_n[k * plane + pos];
                        let modw = two * mask;
                        // d/dmask: out depends linearly on mask via 2 * mask.
                        dmask[k * plane + pos] = two * dot(&tvec, &sampled);
                        // dw[k, co, ci] += g[co] * modw * sampled[ci]
                        for co in 0..cout {
                            let gm = g_n[co * plane + pos] * modw;
                            if gm != T::zero() {
                                crate::kernels::axpy(
                                    &mut dw[(k * cout + co) * cin..(k * cout + co + 1) * cin],
                                    gm,
                                    &sampled,
                                );
                            }
                        }
                        // Sampling gradients: onto the 4 corners and (y, x).
                        let mut dy_acc = 0.0f64;
                        let mut dx_acc = 0.0f64;
                        for (ci, t) in tvec.iter().enumerate() {
                            let ds = modw * *t;
                            if ds == T::zero() {
                                continue;
                            }
                            let base = ci * plane;
                            let mut val = [0.0f64; 4];
                            for c4 in 0..4 {
                                if pt.idx[c4] != INVALID {
                                    val[c4] = x_n[base + pt.idx[c4]].to_f64_();
                                    dx[base + pt.idx[c4]] =
                                        dx[base + pt.idx[c4]] + ds * T::from_f64(pt.wgt[c4]);
                                }
                            }
                            let ds64 = ds.to_f64_();
                            dy_acc += ds64
                                * (pt.dw_dy[0] * val[0] + pt.dw_dy[1] * val[1] + pt.dw_dy[2] * val[2] + pt.dw_dy[3] * val[3]);
                            dx_acc += ds64
                                * (pt.dw_dx[0] * val[0] + pt.dw_dx[1] * val[1] + pt.dw_dx[2] * val[2] + pt.dw_dx[3] * val[3]);
                        }
                        doff[(2 * k) * plane + pos] = T::from_f64(dy_acc);
                        doff[(2 * k + 1) * plane + pos] = T::from_f64(dx_acc);
                    }
                }
            }
            PerSample { dx, dw, db, doff, dmask }
        })
        .collect();

    let mut d_input = Tensor::zeros(&[n, cin, h, w]);
    let mut d_weights = Tensor::zeros(&spec.weight_shape());
    let mut d_bias = Tensor::zeros(&[cout]);
    let mut d_offsets = Tensor::zeros(&[n, 2 * m, h, w]);
    let mut d_masks = Tensor::zeros(&[n, m, h, w]);
    for (ni, ps) in per_sample.iter().enumerate() {
        d_input.data_mut()[ni * cin * plane..(ni + 1) * cin * plane].copy_from_slice(&ps.dx);
        d_offsets.data_mut()[ni * 2 * m * plane..(ni + 1) * 2 * m * plane].copy_from_slice(&ps.doff);
        d_masks.data_mut()[ni * m * plane..(ni + 1) * m * plane].copy_from_slice(&ps.dmask);
        for (co, db) in d_bias.data_mut().iter_mut().enumerate() {
            *db = *db + ps.db[co];
        }
        // Un-regroup dw back to [Cout, Cin, kh, kw].
        for co in 0..cout {
            for ci in 0..cin {
                for k in 0..m {
                    let dst = (co * cin + ci) * m + k;
                    d_weights.data_mut()[dst] =
                        d_weights.data()[dst] + ps.dw[(k * cout + co) * cin + ci];
                }
            }
        }
    }
    Ok((d_input, d_weights, d_bias, d_offsets, d_masks))
}

/// Full forward pass of a deformable layer: offset branch, split, deformed
/// convolution.
pub fn deformable_conv2d<T: Scalar>(layer: &DeformConvLayer<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let field = offset_branch_forward(layer, input)?;
    deform_apply(input, &layer.weights.value, &layer.bias.value, &layer.spec, &field.offsets, &field.masks)
}

/// Backward pass through the whole layer. Accumulates parameter gradients
/// into the layer's `GradPair`s and returns the input gradient.
pub fn deformable_conv2d_backward<T: Scalar>(
    layer: &mut DeformConvLayer<T>,
    input: &Tensor<T>,
    field: &OffsetField<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (d_input_sampling, d_weights, d_bias, d_offsets, d_masks) = deform_apply_backward(
        input,
        &layer.weights.value,
        &layer.spec,
        &field.offsets,
        &field.masks,
        grad_out,
    )?;
    layer.weights.grad.add_assign(&d_weights);
    layer.bias.grad.add_assign(&d_bias);

    // Chain into the offset branch: sigmoid backward for the mask logits,
    // then the standard convolution backward.
    let (n, _, h, w) = check_4d(input, "deformable conv input")?;
    let m = layer.spec.grid_size();
    let plane = h * w;
    let mut d_raw = Tensor::zeros(&[n, 3 * m, h, w]);
    for ni in 0..n {
        let dst = &mut d_raw.data_mut()[ni * 3 * m * plane..(ni + 1) * 3 * m * plane];
        dst[..2 * m * plane]
            .copy_from_slice(&d_offsets.data()[ni * 2 * m * plane..(ni + 1) * 2 * m * plane]);
        for (k, d) in dst[2 * m * plane..].iter_mut().enumerate() {
            let mask = field.masks.data()[ni * m * plane + k];
            let dmask = d_masks.data()[ni * m * plane + k];
            *d = dmask * mask * (T::one() - mask);
        }
    }
    let ospec = offset_spec(&layer.spec);
    let (d_input_branch, d_ow, d_ob) =
        conv2d_backward(input, &layer.offset_weights.value, &ospec, &d_raw)?;
    layer.offset_weights.grad.add_assign(&d_ow);
    layer.offset_bias.grad.add_assign(&d_ob);

    let mut d_input = d_input_sampling;
    d_input.add_assign(&d_input_branch);
    Ok(d_input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn integer_coordinates_read_exact_values() {
        let map = Tensor::from_vec(&[1, 3, 4], (0..12).map(|i| i as f64).collect()).unwrap();
        let v = bilinear_sample(&map, 1.0, 2.0).unwrap();
        assert_eq!(v, vec![6.0]);
    }

    #[test]
    fn midpoint_interpolates_linearly() {
        let map = Tensor::from_vec(&[1, 2, 1], vec![3.0f64, 5.0]).unwrap();
        let v = bilinear_sample(&map, 0.5, 0.0).unwrap();
        assert!((v[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn far_out_of_bounds_reads_zero() {
        let map = Tensor::filled(&[2, 3, 3], 7.0f64);
        let v = bilinear_sample(&map, -5.0, -5.0).unwrap();
        assert_eq!(v, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_branch_gives_zero_offsets_and_half_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = ConvSpec::new(2, 3, 4, 1).unwrap();
        let layer = DeformConvLayer::<f32>::new(spec, &mut rng);
        let input = Tensor::rand_uniform(&[1, 2, 6, 5], 1.0, &mut rng);
        let field = offset_branch_forward(&layer, &input).unwrap();
        assert!(field.offsets.data().iter().all(|v| *v == 0.0));
        assert!(field.masks.data().iter().all(|v| (*v - 0.5).abs() < 1e-7));
        // Same spatial resolution as the input.
        assert_eq!(field.offsets.shape(), &[1, 8, 6, 5]);
        assert_eq!(field.masks.shape(), &[1, 4, 6, 5]);
    }

    #[test]
    fn branch_channel_extent_is_three_m() {
        for (kh, kw, expect) in [(4, 1, 12), (16, 1, 48), (1, 4, 12), (1, 16, 48)] {
            let spec = ConvSpec::new(5, 7, kh, kw).unwrap();
            assert_eq!(offset_spec(&spec).out_channels, expect);
        }
    }

    #[test]
    fn offset_field_spatial_extents_track_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec::new(1, 2, 1, 4).unwrap();
        let layer = DeformConvLayer::<f32>::new(spec, &mut rng);
        for (h, w) in [(3, 9), (17, 2), (8, 8)] {
            let input = Tensor::rand_uniform(&[2, 1, h, w], 1.0, &mut rng);
            let field = offset_branch_forward(&layer, &input).unwrap();
            assert_eq!(&field.offsets.shape()[2..], &[h, w]);
        }
    }

    #[test]
    fn zero_init_reproduces_standard_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let spec = ConvSpec::new(3, 4, 16, 1).unwrap();
        let layer = DeformConvLayer::<f32>::new(spec.clone(), &mut rng);
        let input = Tensor::rand_uniform(&[2, 3, 20, 7], 1.0, &mut rng);
        let deformed = deformable_conv2d(&layer, &input).unwrap();
        let standard = conv2d(&input, &layer.weights.value, &layer.bias.value, &spec).unwrap();
        assert!(deformed.max_abs_diff(&standard) < 1e-5);
    }

    /// Shifts an `[1,1,5,5]` map right by one column, zero-filled edge.
    fn shift_right(input: &Tensor<f64>) -> Tensor<f64> {
        let mut shifted = Tensor::zeros(&[1, 1, 5, 5]);
        for i in 0..5 {
            for j in 1..5 {
                shifted.data_mut()[i * 5 + j] = input.data()[i * 5 + j - 1];
            }
        }
        shifted
    }

    fn constant_shift_field(m: usize) -> (Tensor<f64>, Tensor<f64>) {
        // dy = 0, dx = -1 everywhere; masks forced to the neutral 0.5.
        let mut offsets = Tensor::zeros(&[1, 2 * m, 5, 5]);
        for k in 0..m {
            for p in 0..25 {
                offsets.data_mut()[(2 * k + 1) * 25 + p] = -1.0;
            }
        }
        (offsets, Tensor::filled(&[1, m, 5, 5], 0.5))
    }

    #[test]
    fn constant_shift_offset_equals_shifted_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = ConvSpec::new(1, 1, 1, 1).unwrap();
        let input = Tensor::<f64>::rand_uniform(&[1, 1, 5, 5], 1.0, &mut rng);
        let weights = Tensor::rand_uniform(&spec.weight_shape(), 1.0, &mut rng);
        let bias = Tensor::rand_uniform(&[1], 1.0, &mut rng);
        let (offsets, masks) = constant_shift_field(1);
        let deformed = deform_apply(&input, &weights, &bias, &spec, &offsets, &masks).unwrap();
        let standard = conv2d(&shift_right(&input), &weights, &bias, &spec).unwrap();
        assert!(deformed.max_abs_diff(&standard) < 1e-12);
    }

    #[test]
    fn constant_shift_offset_matches_shifted_convolution_inside_the_canvas() {
        // With a wider kernel the shifted-input picture is only defined where
        // the base window never overflows the right edge: there the deformed
        // sample would read a real pixel while the shifted map has none.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = ConvSpec::new(1, 1, 1, 3).unwrap();
        let input = Tensor::<f64>::rand_uniform(&[1, 1, 5, 5], 1.0, &mut rng);
        let weights = Tensor::rand_uniform(&spec.weight_shape(), 1.0, &mut rng);
        let bias = Tensor::rand_uniform(&[1], 1.0, &mut rng);
        let (offsets, masks) = constant_shift_field(3);
        let deformed = deform_apply(&input, &weights, &bias, &spec, &offsets, &masks).unwrap();
        let standard = conv2d(&shift_right(&input), &weights, &bias, &spec).unwrap();
        // Base window right reach is kw - 1 - pad_left = 1 column.
        for i in 0..5 {
            for j in 0..4 {
                let d = deformed.data()[i * 5 + j];
                let s = standard.data()[i * 5 + j];
                assert!((d - s).abs() < 1e-12, "({i},{j}): {d} vs {s}");
            }
        }
    }

    #[test]
    fn sampling_gradient_is_conserved_at_the_four_neighbors() {
        // Single kernel point, fully in-range fractional position: the
        // gradient routed to the corners must sum to g * w * mask * 2.
        let input = Tensor::from_vec(&[1, 1, 3, 3], (0..9).map(|v| v as f64 * 0.3).collect()).unwrap();
        let spec = ConvSpec::new(1, 1, 1, 1).unwrap();
        let weights = Tensor::filled(&spec.weight_shape(), 1.7f64);
        let mut offsets = Tensor::zeros(&[1, 2, 3, 3]);
        offsets.fill(0.4);
        let masks = Tensor::filled(&[1, 1, 3, 3], 0.3f64);
        let mut grad_out = Tensor::zeros(&[1, 1, 3, 3]);
        grad_out.data_mut()[4] = 2.5; // only the center position
        let (d_input, ..) =
            deform_apply_backward(&input, &weights, &spec, &offsets, &masks, &grad_out).unwrap();
        let total: f64 = d_input.data().iter().sum();
        let expect = 2.5 * 1.7 * 0.3 * 2.0;
        assert!((total - expect).abs() < 1e-12, "{total} vs {expect}");
    }
}
