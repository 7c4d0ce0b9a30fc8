use super::{L2Mode, ParamStore, Scalar, Tensor};
use crate::{Error, Result};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    /// Data term plus regularizer.
    pub loss: T,
    pub data_loss: T,
    pub penalty: T,
    /// ∂loss/∂probs (data term only; the regularizer gradient goes straight
    /// into the parameter store).
    pub grad_probs: Tensor<T>,
    /// Labels whose probability had to be clamped.
    pub clamped: usize,
}

/// `−(1/N)·Σ log p[label] + λ·Ω(α)`. Adds `λ·∇Ω` to the parameter
/// gradients.
pub fn xent_l2_loss<T: Scalar>(
    probs: &Tensor<T>,
    labels: &[usize],
    params: &mut ParamStore<T>,
    lambda: T,
    mode: L2Mode,
) -> Result<LossOutput<T>> {
    let (n, k) = probs.dims2("loss")?;
    if labels.len() != n || n == 0 {
        return Err(Error::dim(
            "loss",
            format!("{n} prediction rows for {} labels", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::dim(
            "loss",
            format!("label {bad} out of {k} classes"),
        ));
    }
    let inv_n = T::one() / T::lit(n as f64);
    let floor = T::lit(PROB_FLOOR);
    let mut clamped = 0;
    let mut data_loss = T::zero();
    let mut grad = Tensor::zeros(probs.shape());
    for (i, &l) in labels.iter().enumerate() {
        let mut p = probs.data()[i * k + l];
        if p < floor {
            p = floor;
            clamped += 1;
        }
        data_loss -= p.ln() * inv_n;
        grad.data_mut()[i * k + l] = -inv_n / p;
    }
    if clamped > 0 {
        log::warn!("clamped {clamped} label probabilities at {PROB_FLOOR}");
    }
    let penalty = lambda * params.l2_penalty(mode);
    params.add_l2_grad(lambda, mode);
    Ok(LossOutput {
        loss: data_loss + penalty,
        data_loss,
        penalty,
        grad_probs: grad,
        clamped,
    })
}

/// Gradient of the mean cross-entropy w.r.t. the logits that produced
/// `probs`: `(probs − onehot) / N`.
pub fn softmax_xent_logit_grad<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Tensor<T> {
    let k = probs.shape()[1];
    let inv_n = T::one() / T::lit(labels.len() as f64);
    let mut g = probs.map(|p| p * inv_n);
    for (i, &l) in labels.iter().enumerate() {
        g.data_mut()[i * k + l] -= inv_n;
    }
    g
}
