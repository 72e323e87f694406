use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    StepDecay,
}

/// Piecewise-constant learning rate. At a decay epoch the decayed value
/// already applies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub factor: f64,
    pub decay_epochs: Vec<f64>,
}

impl Schedule {
    pub fn constant(lr: f64) -> Self {
        Schedule { kind: ScheduleKind::Constant, base_lr: lr, factor: 1.0, decay_epochs: Vec::new() }
    }

    pub fn step_decay(lr: f64, factor: f64, decay_epochs: &[f64]) -> Result<Self> {
        let s = Schedule {
            kind: ScheduleKind::StepDecay,
            base_lr: lr,
            factor,
            decay_epochs: decay_epochs.to_vec(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(Error::invalid("decay factor must lie in (0, 1]"));
        }
        if self.decay_epochs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("decay epochs must be strictly increasing"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: f64) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.base_lr,
            ScheduleKind::StepDecay => {
                let drops = self.decay_epochs.iter().filter(|&&d| epoch >= d).count();
                self.base_lr * self.factor.powi(drops as i32)
            }
        }
    }
}

/// Learning rate at epoch `t`.
pub fn schedule_lr(schedule: &Schedule, t: f64) -> f64 {
    schedule.lr_at(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_schedule() {
        let s = Schedule::constant(0.05);
        assert_eq!(schedule_lr(&s, 0.0), 0.05);
        assert_eq!(schedule_lr(&s, 1e6), 0.05);
    }

    #[test]
    fn resnet20_cifar10_step_decay() {
        let s = Schedule::step_decay(0.1, 0.1, &[80.0, 120.0]).unwrap();
        assert_eq!(schedule_lr(&s, 79.9), 0.1);
        assert!((schedule_lr(&s, 80.0) - 0.01).abs() < 1e-15);
        assert!((schedule_lr(&s, 100.0) - 0.01).abs() < 1e-15);
        assert!((schedule_lr(&s, 120.0) - 0.001).abs() < 1e-15);
        assert!((schedule_lr(&s, 159.0) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn invalid_schedules() {
        assert!(Schedule::step_decay(0.1, 0.1, &[120.0, 80.0]).is_err());
        assert!(Schedule::step_decay(0.1, 1.5, &[80.0]).is_err());
        assert!(Schedule::step_decay(0.1, 0.0, &[80.0]).is_err());
    }
}
