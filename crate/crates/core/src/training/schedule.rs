use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Constant,
    /// `lr0·(1 − t/T)` over optimizer steps, clamped at zero.
    Linear,
    /// `lr0·factor^⌊e/every⌋` over epochs.
    Step,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    #[serde(default = "default_every")]
    pub step_every: usize,
    #[serde(default = "default_factor")]
    pub step_factor: f64,
}

fn default_every() -> usize {
    3
}

fn default_factor() -> f64 {
    0.8
}

impl Schedule {
    pub fn linear(base_lr: f64) -> Self {
        Self { kind: ScheduleKind::Linear, base_lr, step_every: default_every(), step_factor: default_factor() }
    }

    pub fn step(base_lr: f64) -> Self {
        Self { kind: ScheduleKind::Step, ..Self::linear(base_lr) }
    }

    pub fn constant(base_lr: f64) -> Self {
        Self { kind: ScheduleKind::Constant, ..Self::linear(base_lr) }
    }

    /// Rate for optimizer step `t` of `total` taken during `epoch`.
    pub fn lr(&self, t: u64, total: u64, epoch: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.base_lr,
            ScheduleKind::Linear => {
                if total == 0 || t >= total {
                    0.0
                } else {
                    self.base_lr * (1.0 - t as f64 / total as f64)
                }
            }
            ScheduleKind::Step => {
                let k = epoch / self.step_every.max(1);
                self.base_lr * libm::pow(self.step_factor, k as f64)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_endpoints_and_midpoint() {
        let s = Schedule::linear(1e-4);
        assert_eq!(s.lr(0, 100, 0), 1e-4);
        assert_eq!(s.lr(50, 100, 0), 5e-5);
        assert_eq!(s.lr(100, 100, 0), 0.0);
        assert_eq!(s.lr(150, 100, 0), 0.0);
    }

    #[test]
    fn step_decay() {
        let s = Schedule::step(2e-3);
        assert_eq!(s.lr(0, 0, 0), 2e-3);
        assert_eq!(s.lr(0, 0, 2), 2e-3);
        assert!((s.lr(0, 0, 3) - 1.6e-3).abs() < 1e-18);
        // epoch 7: two decays
        assert!((s.lr(0, 0, 7) - 2e-3 * 0.8 * 0.8).abs() < 1e-18);
    }
}
