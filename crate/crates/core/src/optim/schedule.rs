//! Linear warmup from `η/10` to `η`, then cosine annealing to a floor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn d_warmup() -> f64 {
    10.0
}
fn d_min() -> f64 {
    1e-5
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant,
    WarmupCosine {
        #[serde(default = "d_warmup")]
        warmup_epochs: f64,
        /// Total epochs `T`; the floor is reached at epoch `T - 1`.
        total_epochs: f64,
        #[serde(default = "d_min")]
        min_lr: f64,
    },
}

impl Schedule {
    pub fn warmup_cosine(total_epochs: usize) -> Self {
        Schedule::WarmupCosine { warmup_epochs: d_warmup(), total_epochs: total_epochs as f64, min_lr: d_min() }
    }

    pub fn validate(&self) -> Result<()> {
        if let Schedule::WarmupCosine { warmup_epochs, total_epochs, min_lr } = *self {
            if !(warmup_epochs >= 0.0 && min_lr >= 0.0) {
                return Err(Error::invalid("schedule", "negative warmup or floor"));
            }
            if !(total_epochs - 1.0 > warmup_epochs) {
                return Err(Error::invalid(
                    "schedule",
                    format!("total_epochs ({total_epochs}) must exceed warmup_epochs + 1 ({})", warmup_epochs + 1.0),
                ));
            }
        }
        Ok(())
    }

    /// Rate at fractional epoch `epoch` for peak rate `peak`. Epochs past
    /// the end stay at the floor, which never exceeds the peak.
    pub fn lr_at(&self, peak: f64, epoch: f64) -> f64 {
        match *self {
            Schedule::Constant => peak,
            Schedule::WarmupCosine { warmup_epochs: w, total_epochs: t, min_lr } => {
                let min_lr = min_lr.min(peak);
                let e = epoch.max(0.0);
                let last = t - 1.0;
                if e < w {
                    let start = peak / 10.0;
                    start + (peak - start) * e / w
                } else if e >= last {
                    min_lr
                } else {
                    let progress = (e - w) / (last - w);
                    min_lr + (peak - min_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
                }
            }
        }
    }

    /// Rate at optimizer step `step` of epoch `epoch`.
    pub fn lr_at_step(&self, peak: f64, epoch: usize, step: usize, steps_per_epoch: usize) -> f64 {
        let frac = step as f64 / steps_per_epoch.max(1) as f64;
        self.lr_at(peak, epoch as f64 + frac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_values() {
        let s = Schedule::warmup_cosine(30);
        let eta = 5e-4;
        assert_eq!(s.lr_at(eta, 0.0), eta / 10.0);
        assert_eq!(s.lr_at(eta, 10.0), eta);
        assert_eq!(s.lr_at(eta, 29.0), 1e-5);
        assert_eq!(s.lr_at(eta, 100.0), 1e-5);
    }

    #[test]
    fn continuous_at_warmup_boundary() {
        let s = Schedule::warmup_cosine(30);
        let eta = 5e-4;
        let left = s.lr_at(eta, 10.0 - 1e-12);
        let right = s.lr_at(eta, 10.0);
        assert!((left - right).abs() < 1e-12);
    }

    #[test]
    fn monotone_pieces() {
        let s = Schedule::warmup_cosine(40);
        let lrs: Vec<f64> = (0..=390).map(|i| s.lr_at(1e-3, i as f64 / 10.0)).collect();
        assert!(lrs[..=100].windows(2).all(|w| w[0] <= w[1]));
        assert!(lrs[100..].windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn floor_capped_by_peak() {
        let s = Schedule::warmup_cosine(30);
        assert!((0..300).all(|i| s.lr_at(0.0, i as f64 / 10.0) == 0.0));
    }

    #[test]
    fn too_short_rejected() {
        assert!(Schedule::warmup_cosine(11).validate().is_err());
        assert!(Schedule::warmup_cosine(12).validate().is_ok());
    }
}
