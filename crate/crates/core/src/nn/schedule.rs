use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Learning-rate bounds used for image models.
pub const IMAGE_LR_MAX: f64 = 0.002;
/// Learning-rate bounds used for text models.
pub const TEXT_LR_MAX: f64 = 0.01;
pub const LR_MIN: f64 = 1e-6;

/// Cosine decay from `l_max` to `l_min` over the batches of one epoch,
/// restarting at `l_max` when the next epoch begins:
///
/// `rate(k) = ½(l_max − l_min)(cos(kπ/N) + 1) + l_min`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineBatchSchedule {
    l_max: f64,
    l_min: f64,
    batches_per_epoch: usize,
}

impl CosineBatchSchedule {
    pub fn new(l_max: f64, l_min: f64, batches_per_epoch: usize) -> Result<Self> {
        if !(l_min > 0.0) || !l_max.is_finite() || l_min > l_max {
            return Err(Error::InvalidArgument(format!(
                "learning rates need 0 < l_min <= l_max, got l_min={l_min}, l_max={l_max}"
            )));
        }
        if batches_per_epoch == 0 {
            return Err(Error::InvalidArgument(
                "batches per epoch must be positive".into(),
            ));
        }
        Ok(CosineBatchSchedule {
            l_max,
            l_min,
            batches_per_epoch,
        })
    }

    pub fn l_max(&self) -> f64 {
        self.l_max
    }

    pub fn l_min(&self) -> f64 {
        self.l_min
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.batches_per_epoch
    }

    /// Same bounds, different epoch length.
    pub fn with_batches(&self, batches_per_epoch: usize) -> Result<Self> {
        Self::new(self.l_max, self.l_min, batches_per_epoch)
    }

    /// Learning rate for batch `k` (0-indexed) within an epoch.
    pub fn rate(&self, k: usize) -> Result<f64> {
        if k > self.batches_per_epoch {
            return Err(Error::InvalidArgument(format!(
                "batch index {k} outside [0, {}]",
                self.batches_per_epoch
            )));
        }
        Ok(self.rate_at(k as f64))
    }

    /// The decay curve at a real position in `[0, N]`. The endpoints are
    /// returned exactly.
    pub fn rate_at(&self, k: f64) -> f64 {
        let n = self.batches_per_epoch as f64;
        if k <= 0.0 {
            return self.l_max;
        }
        if k >= n {
            return self.l_min;
        }
        0.5 * (self.l_max - self.l_min) * ((k * PI / n).cos() + 1.0) + self.l_min
    }
}

pub fn schedule_rate(schedule: &CosineBatchSchedule, k: usize) -> Result<f64> {
    schedule.rate(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_examples() {
        let s = CosineBatchSchedule::new(IMAGE_LR_MAX, LR_MIN, 100).unwrap();
        assert_eq!(s.rate(0).unwrap(), 0.002);
        assert_eq!(s.rate(100).unwrap(), 1e-6);
        assert!(s.rate(101).is_err());
    }

    #[test]
    fn midpoint_example() {
        let s = CosineBatchSchedule::new(TEXT_LR_MAX, LR_MIN, 100).unwrap();
        assert!((s.rate(50).unwrap() - 0.0050005).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(CosineBatchSchedule::new(0.001, 0.01, 10).is_err());
        assert!(CosineBatchSchedule::new(0.01, 0.0, 10).is_err());
        assert!(CosineBatchSchedule::new(0.01, 1e-6, 0).is_err());
    }
}
