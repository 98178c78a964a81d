//! Losses, the grouped Adam optimizer, the learning-rate schedule and the
//! training loop.

mod audit;
mod loss;
mod optim;
mod schedule;
mod trainer;

pub use audit::{gradient_audit, reference_audit_network, AuditConfig, AuditReport};
pub use loss::{cross_entropy, mase, mse, persistence_scale, LossKind, LossValue};
pub use optim::{AdamConfig, OptimState};
pub use schedule::Schedule;
pub use trainer::{
    batch_loss, check_compatible, evaluate, higher_is_better, metric_name, read_metrics,
    target_scale, Control, EpochRecord, Evaluation, TrainConfig, TrainOutcome, Trainer,
    BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_FILE, METRICS_HEADER,
};
