use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Linear warmup from 0 to `base_lr`, then cosine decay to 0, as a function
/// of fractional epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub base_lr: f64,
    pub total_epochs: usize,
    /// Fraction of `total_epochs` spent warming up.
    pub warmup: f64,
}

impl Schedule {
    pub fn new(base_lr: f64, total_epochs: usize, warmup: f64) -> Self {
        Self {
            base_lr,
            total_epochs,
            warmup: warmup.clamp(0.0, 1.0),
        }
    }

    pub fn warmup_end(&self) -> f64 {
        self.warmup * self.total_epochs as f64
    }

    pub fn lr(&self, epoch: f64) -> f64 {
        let total = self.total_epochs as f64;
        let w = self.warmup_end();
        let e = epoch.clamp(0.0, total);
        if e < w {
            self.base_lr * e / w
        } else if total > w {
            self.base_lr * 0.5 * (1.0 + (PI * (e - w) / (total - w)).cos())
        } else {
            self.base_lr
        }
    }
}
