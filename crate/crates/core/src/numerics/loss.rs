use crate::error::{Error, Result};

use super::{cast, Matrix, Scalar};

/// Mean softmax cross-entropy and its gradient with respect to the logits,
/// `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[usize],
) -> Result<(T, Matrix<T>)> {
    let (batch, classes) = logits.shape();
    if labels.len() != batch {
        return Err(Error::invalid(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if batch == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let inv_batch: T = cast(1.0 / batch as f64);
    let mut grad = Matrix::zeros(batch, classes);
    let mut total = T::zero();
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for &z in row {
            denom = denom + (z - max).exp();
        }
        let log_denom = denom.ln();
        total = total + (log_denom - (row[label] - max));
        for (c, &z) in row.iter().enumerate() {
            let p = (z - max).exp() / denom;
            let target = if c == label { T::one() } else { T::zero() };
            grad[(r, c)] = (p - target) * inv_batch;
        }
    }
    Ok((total * inv_batch, grad))
}

/// `(critic_term, generator_loss)` with `critic_term = mean(fake) - mean(real)`
/// and `generator_loss = -mean(fake)`.
pub fn wasserstein_losses<T: Scalar>(d_real: &[T], d_fake: &[T]) -> Result<(T, T)> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::invalid("critic outputs must be non-empty"));
    }
    let mean = |v: &[T]| v.iter().fold(T::zero(), |a, &b| a + b) / cast(v.len() as f64);
    let fake = mean(d_fake);
    Ok((fake - mean(d_real), -fake))
}
