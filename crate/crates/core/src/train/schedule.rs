use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Cosine annealing without restarts:
/// `lr(t) = lr_min + (lr_max - lr_min) * (1 + cos(pi * t)) / 2` for `t` in `[0, 1]`.
pub fn cosine_lr(t: f64, lr_max: f64, lr_min: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(
            "cosine_lr",
            format!("progress {t} outside [0, 1]"),
        ));
    }
    if !(lr_max.is_finite() && lr_min.is_finite()) || lr_min < 0.0 || lr_min > lr_max {
        return Err(Error::invalid(
            "cosine_lr",
            format!("need 0 <= lr_min <= lr_max, got {lr_min} and {lr_max}"),
        ));
    }
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * t).cos()))
}

/// Learning rate of epoch `e` (0-based) out of `epochs`, with progress `e / epochs`.
pub fn epoch_lr(epoch: usize, epochs: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if epochs == 0 || epoch >= epochs {
        return Err(Error::invalid(
            "epoch_lr",
            format!("epoch {epoch} outside 0..{epochs}"),
        ));
    }
    cosine_lr(epoch as f64 / epochs as f64, lr_max, lr_min)
}
