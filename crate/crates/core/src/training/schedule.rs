//! Per-epoch learning-rate schedules with linear warmup.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// Linear warmup, then cosine decay reaching `min_lr` at the last epoch.
    WarmupCosine {
        base_lr: f64,
        warmup_start_lr: f64,
        warmup_epochs: usize,
        #[serde(default = "default_min_lr")]
        min_lr: f64,
    },
    /// Linear warmup, then a `gamma` factor at every milestone epoch.
    WarmupStep {
        base_lr: f64,
        warmup_start_lr: f64,
        warmup_epochs: usize,
        milestones: Vec<usize>,
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
}

fn default_min_lr() -> f64 {
    1e-6
}

fn default_gamma() -> f64 {
    0.1
}

impl Schedule {
    /// Warmup 1e-5 → 3e-4 over 5 epochs, cosine afterwards.
    pub fn cosine_default() -> Self {
        Schedule::WarmupCosine {
            base_lr: 3e-4,
            warmup_start_lr: 1e-5,
            warmup_epochs: 5,
            min_lr: default_min_lr(),
        }
    }

    /// Warmup 3e-6 → 3e-4 over 10 epochs, ×0.1 at epochs 60 and 100.
    pub fn step_default() -> Self {
        Schedule::WarmupStep {
            base_lr: 3e-4,
            warmup_start_lr: 3e-6,
            warmup_epochs: 10,
            milestones: vec![60, 100],
            gamma: 0.1,
        }
    }

    pub fn base_lr(&self) -> f64 {
        match self {
            Schedule::WarmupCosine { base_lr, .. } | Schedule::WarmupStep { base_lr, .. } => *base_lr,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        let (base, start) = match self {
            Schedule::WarmupCosine {
                base_lr,
                warmup_start_lr,
                min_lr,
                ..
            } => {
                if !(*min_lr > 0.0 && min_lr <= base_lr) {
                    p.push(format!("min_lr must be in (0, base_lr], got {min_lr}"));
                }
                (*base_lr, *warmup_start_lr)
            }
            Schedule::WarmupStep {
                base_lr,
                warmup_start_lr,
                milestones,
                gamma,
                ..
            } => {
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    p.push(format!("milestones must be strictly increasing, got {milestones:?}"));
                }
                if !(*gamma > 0.0 && gamma.is_finite()) {
                    p.push(format!("gamma must be positive, got {gamma}"));
                }
                (*base_lr, *warmup_start_lr)
            }
        };
        if !(base > 0.0 && base.is_finite()) {
            p.push(format!("base_lr must be positive, got {base}"));
        }
        if !(start > 0.0 && start.is_finite()) {
            p.push(format!("warmup_start_lr must be positive, got {start}"));
        }
        p
    }

    /// Learning rate at `epoch + step_fraction` of a stage lasting `epochs`.
    pub fn lr_at(&self, epochs: usize, epoch: usize, step_fraction: f64) -> f64 {
        let t = epoch as f64 + step_fraction.clamp(0.0, 1.0);
        let warm = |start: f64, base: f64, w: usize| -> Option<f64> {
            (w > 0 && t < w as f64).then(|| start + (base - start) * t / w as f64)
        };
        match self {
            Schedule::WarmupCosine {
                base_lr,
                warmup_start_lr,
                warmup_epochs,
                min_lr,
            } => warm(*warmup_start_lr, *base_lr, *warmup_epochs).unwrap_or_else(|| {
                let span = (epochs.saturating_sub(1) as f64 - *warmup_epochs as f64).max(1.0);
                let progress = ((t - *warmup_epochs as f64) / span).clamp(0.0, 1.0);
                min_lr + (base_lr - min_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }),
            Schedule::WarmupStep {
                base_lr,
                warmup_start_lr,
                warmup_epochs,
                milestones,
                gamma,
            } => warm(*warmup_start_lr, *base_lr, *warmup_epochs).unwrap_or_else(|| {
                let passed = milestones.iter().filter(|&&m| epoch >= m).count();
                base_lr * gamma.powi(passed as i32)
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cosine_warmup_endpoints() {
        let s = Schedule::cosine_default();
        assert_relative_eq!(s.lr_at(120, 0, 0.0), 1e-5);
        assert_relative_eq!(s.lr_at(120, 5, 0.0), 3e-4);
        assert!(s.lr_at(120, 119, 0.0) <= 1e-2 * 3e-4);
        assert!(s.lr_at(120, 119, 0.0) > 0.0);
        let mid = s.lr_at(120, 2, 0.5);
        assert!(mid > 1e-5 && mid < 3e-4);
    }

    #[test]
    fn step_milestones() {
        let s = Schedule::step_default();
        assert_relative_eq!(s.lr_at(180, 0, 0.0), 3e-6);
        assert_relative_eq!(s.lr_at(180, 10, 0.0), 3e-4);
        assert_relative_eq!(s.lr_at(180, 59, 0.0), 3e-4);
        assert_relative_eq!(s.lr_at(180, 60, 0.0), 3e-5);
        assert_relative_eq!(s.lr_at(180, 100, 0.0), 3e-6);
    }

    #[test]
    fn positive_everywhere() {
        for s in [Schedule::cosine_default(), Schedule::step_default()] {
            for e in 0..15 {
                for f in [0.0, 0.5, 0.99] {
                    assert!(s.lr_at(15, e, f) > 0.0);
                }
            }
        }
    }

    #[test]
    fn validation() {
        let bad = Schedule::WarmupStep {
            base_lr: -1.0,
            warmup_start_lr: 1e-6,
            warmup_epochs: 1,
            milestones: vec![5, 5],
            gamma: 0.1,
        };
        assert_eq!(bad.validate().len(), 2);
        assert!(Schedule::step_default().validate().is_empty());
    }
}
