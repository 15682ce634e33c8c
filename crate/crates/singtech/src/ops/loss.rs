//! Sample-weighted softmax cross-entropy.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Loss value plus the gradient w.r.t. the logits.
#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: T,
    pub grad_logits: Tensor<T>,
    /// Unweighted per-sample cross-entropy, for logging.
    pub per_sample_ce: Vec<T>,
}

/// Per-sample loss `-w_i * log softmax(x_i)[y_i]`, reduced as the weighted
/// mean `sum(w_i * ce_i) / sum(w_i)`. The gradient is
/// `w_i * (softmax(x_i) - onehot(y_i)) / sum(w)`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
    sample_weights: &[T],
) -> Result<LossOutput<T>> {
    let [n, c] = *logits.shape() else {
        return Err(Error::Shape(format!("logits must be [N, C], got {:?}", logits.shape())));
    };
    if targets.len() != n || sample_weights.len() != n {
        return Err(Error::Shape(format!(
            "batch size mismatch: logits N={n}, targets {}, weights {}",
            targets.len(),
            sample_weights.len()
        )));
    }
    if let Some(w) = sample_weights.iter().find(|w| **w < T::zero()) {
        return Err(Error::InvalidArg(format!("negative sample weight {w}")));
    }
    let weight_sum: T = sample_weights.iter().copied().sum();
    if weight_sum <= T::zero() {
        return Err(Error::InvalidArg("all sample weights are zero".into()));
    }
    if let Some(t) = targets.iter().find(|t| **t >= c) {
        return Err(Error::InvalidArg(format!("target {t} out of range for {c} classes")));
    }

    let mut grad = Tensor::zeros(&[n, c]);
    let mut per_sample_ce = Vec::with_capacity(n);
    let mut weighted = T::zero();
    for i in 0..n {
        let row = &logits.data()[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for v in row {
            denom = denom + (*v - max).exp();
        }
        let log_denom = denom.ln();
        let ce = -(row[targets[i]] - max - log_denom);
        per_sample_ce.push(ce);
        weighted = weighted + sample_weights[i] * ce;

        let gscale = sample_weights[i] / weight_sum;
        let g_row = &mut grad.data_mut()[i * c..(i + 1) * c];
        for (k, g) in g_row.iter_mut().enumerate() {
            let p = (row[k] - max).exp() / denom;
            let onehot = if k == targets[i] { T::one() } else { T::zero() };
            *g = gscale * (p - onehot);
        }
    }
    Ok(LossOutput { loss: weighted / weight_sum, grad_logits: grad, per_sample_ce })
}
