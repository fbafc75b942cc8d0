//! Multi-label sigmoid binary cross-entropy, computed in the numerically
//! stable logits form.

use crate::error::{Error, Result};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean over labels of `-[y ln σ(z) + (1-y) ln(1-σ(z))]`, evaluated as
/// `softplus(z) - y*z` per label.
pub fn bce_loss(logits: &[f64], labels: &[u8]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::Shape {
            context: "bce_loss",
            expected: labels.len(),
            got: logits.len(),
        });
    }
    if logits.is_empty() {
        return Err(Error::invalid_data("bce_loss on empty label vector"));
    }
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| softplus(z) - f64::from(y) * z)
        .sum();
    Ok(total / logits.len() as f64)
}
