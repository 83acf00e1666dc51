//! Cosine learning-rate annealing without warmup.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("step {step} outside 0..={total}")]
    OutOfRange { step: usize, total: usize },
    #[error("total_steps must be at least 1")]
    NoSteps,
}

/// `lr_min + ½(lr0 − lr_min)(1 + cos(π·step/total))`.
///
/// Evaluated as the convex combination `w·lr0 + (1 − w)·lr_min` so both
/// endpoints come out exactly.
pub fn cosine_lr(step: usize, total: usize, lr0: f64, lr_min: f64) -> Result<f64, ScheduleError> {
    if total == 0 {
        return Err(ScheduleError::NoSteps);
    }
    if step > total {
        return Err(ScheduleError::OutOfRange { step, total });
    }
    let w = 0.5 * (1.0 + (PI * step as f64 / total as f64).cos());
    Ok(w * lr0 + (1.0 - w) * lr_min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 1000, 3e-4, 1e-6).unwrap(), 3e-4);
        assert_eq!(cosine_lr(1000, 1000, 3e-4, 1e-6).unwrap(), 1e-6);
        let mid = cosine_lr(500, 1000, 3e-4, 1e-6).unwrap();
        assert!((mid - 1.505e-4).abs() < 1e-16);
    }

    #[test]
    fn out_of_range() {
        assert!(cosine_lr(11, 10, 3e-4, 1e-6).is_err());
        assert!(cosine_lr(0, 0, 3e-4, 1e-6).is_err());
    }

    #[test]
    fn monotone_non_increasing() {
        let total = 777;
        let lrs: Vec<f64> = (0..=total)
            .map(|s| cosine_lr(s, total, 3e-4, 1e-6).unwrap())
            .collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
}
