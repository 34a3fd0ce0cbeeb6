use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values on a uniform time grid t_i = i·dt, linearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(dt: f64, values: Vec<f64>) -> Self {
        TimeSeries { dt, values }
    }

    pub fn end(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dt
    }

    /// Interpolated value; clamps to the grid ends within one rounding step.
    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        let x = t / self.dt;
        let last = self.values.len() - 1;
        if x <= 0.0 {
            return self.values[0];
        }
        let i = x.floor() as usize;
        if i >= last {
            return self.values[last];
        }
        let w = x - i as f64;
        self.values[i] + w * (self.values[i + 1] - self.values[i])
    }

    pub fn try_at(&self, t: f64) -> Result<f64> {
        let end = self.end();
        if !(t >= -1e-12 && t <= end * (1.0 + 1e-12) + 1e-12) {
            return Err(Error::OutOfRange { what: "time", value: t, lo: 0.0, hi: end });
        }
        Ok(self.at(t))
    }
}
