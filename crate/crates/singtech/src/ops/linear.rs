//! Fully connected layer.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{axpy, dot, sum};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_shapes<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    let [n, din] = *input.shape() else {
        return Err(Error::Shape(format!("linear input must be [N, Din], got {:?}", input.shape())));
    };
    let [dout, wdin] = *weights.shape() else {
        return Err(Error::Shape(format!(
            "linear weights must be [Dout, Din], got {:?}",
            weights.shape()
        )));
    };
    if wdin != din || bias.shape() != [dout] {
        return Err(Error::Shape(format!(
            "linear shapes inconsistent: input {:?}, weights {:?}, bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    Ok((n, din, dout))
}

/// `y = x W^T + b` for row-major `x: [N, Din]`, `W: [Dout, Din]`.
pub fn linear<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, din, dout) = check_shapes(input, weights, bias)?;
    let mut out = Tensor::zeros(&[n, dout]);
    let xdata = input.data();
    let wdata = weights.data();
    let bdata = bias.data();
    out.data_mut().par_chunks_mut(dout).enumerate().for_each(|(ni, row)| {
        let x_row = &xdata[ni * din..(ni + 1) * din];
        for (o, out_v) in row.iter_mut().enumerate() {
            *out_v = dot(x_row, &wdata[o * din..(o + 1) * din]) + bdata[o];
        }
    });
    Ok(out)
}

/// Gradients `(d_input, d_weights, d_bias)`.
pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [n, din] = *input.shape() else {
        return Err(Error::Shape(format!("linear input must be [N, Din], got {:?}", input.shape())));
    };
    let [dout, _] = *weights.shape() else {
        return Err(Error::Shape(format!("linear weights must be 2-D, got {:?}", weights.shape())));
    };
    if grad_out.shape() != [n, dout] {
        return Err(Error::Shape(format!(
            "linear grad_out {:?}, expected [{n}, {dout}]",
            grad_out.shape()
        )));
    }
    let xdata = input.data();
    let wdata = weights.data();
    let gdata = grad_out.data();

    let mut d_input = Tensor::zeros(&[n, din]);
    d_input.data_mut().par_chunks_mut(din).enumerate().for_each(|(ni, dx_row)| {
        for o in 0..dout {
            axpy(dx_row, gdata[ni * dout + o], &wdata[o * din..(o + 1) * din]);
        }
    });

    let mut d_weights = Tensor::zeros(&[dout, din]);
    d_weights.data_mut().par_chunks_mut(din).enumerate().for_each(|(o, dw_row)| {
        for ni in 0..n {
            axpy(dw_row, gdata[ni * dout + o], &xdata[ni * din..(ni + 1) * din]);
        }
    });

    let mut d_bias = Tensor::zeros(&[dout]);
    for (o, db) in d_bias.data_mut().iter_mut().enumerate() {
        let col: Vec<T> = (0..n).map(|ni| gdata[ni * dout + o]).collect();
        *db = sum(&col);
    }
    Ok((d_input, d_weights, d_bias))
}
