use crate::error::{Error, Result};

/// The `ceil(fraction * K)` classes with the lowest accuracy, ties broken
/// by class index, returned in ascending class order.
pub fn hard_class_select(per_class_accuracy: &[f64], fraction: f64) -> Result<Vec<usize>> {
    let k = per_class_accuracy.len();
    if k == 0 {
        return Err(Error::invalid("hard_class_select", "no classes"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(
            "hard_class_select",
            format!("fraction {fraction} outside (0, 1]"),
        ));
    }
    if per_class_accuracy.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid(
            "hard_class_select",
            "accuracies must be finite",
        ));
    }
    let m = ((fraction * k as f64).ceil() as usize).clamp(1, k);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        per_class_accuracy[a]
            .total_cmp(&per_class_accuracy[b])
            .then(a.cmp(&b))
    });
    let mut chosen = order[..m].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}
