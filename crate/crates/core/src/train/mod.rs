//! Optimizer, learning-rate schedule and training loop.

pub mod adam;
pub mod fit;
pub mod hard;
pub mod metrics;
pub mod schedule;

pub use adam::{Adam, AdamConfig};
pub use fit::{argmax, evaluate, fit, EvalResult, FitOutput, HardPretrainConfig, TrainConfig};
pub use hard::hard_class_select;
pub use metrics::{MetricsRecord, CSV_HEADER};
pub use schedule::{cosine_lr, epoch_lr};
