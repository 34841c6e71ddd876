use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid on `[0, T]` with `n = T / dt` steps.
///
/// Field sample `k` drives the step from `t_k` to `t_{k+1}` and is
/// associated with the end-of-step time `(k + 1) dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    total_time: f64,
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(total_time: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::param("dt", format!("must be positive and finite, got {dt}")));
        }
        if !(total_time.is_finite() && total_time > 0.0) {
            return Err(Error::param("T", format!("must be positive and finite, got {total_time}")));
        }
        let n = (total_time / dt).round();
        if n < 1.0 || (n * dt - total_time).abs() >= 1e-12 * total_time {
            return Err(Error::param(
                "dt",
                format!("T={total_time} is not an integer multiple of dt={dt}"),
            ));
        }
        Ok(Self { total_time, dt, steps: n as usize })
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Time attached to field sample `k` (end of step `k`).
    pub fn sample_time(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.dt
    }

    pub fn sample_times(&self) -> Vec<f64> {
        (0..self.steps).map(|k| self.sample_time(k)).collect()
    }

    /// Same `T`, `dt` up to round-off.
    pub fn matches(&self, other: &TimeGrid) -> bool {
        self.steps == other.steps && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }
}
