use crate::error::{Error, Result};

/// Default recording density.
pub const POINTS_PER_DECADE: usize = 48;

/// Earliest non-zero recording time of a logarithmic grid, in `1/κ`.
pub const FIRST_RECORD: f64 = 0.1;

/// Recording times expressed as step counts from the start of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingGrid {
    dt: f64,
    steps: Vec<u64>,
}

impl RecordingGrid {
    /// `τ = 0` followed by log-spaced times up to `horizon`, snapped to whole
    /// steps. The horizon itself is always recorded.
    pub fn logarithmic(horizon: f64, dt: f64, per_decade: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "horizon must be non-negative, got {horizon}"
            )));
        }
        if per_decade == 0 {
            return Err(Error::InvalidParams("points per decade must be positive".into()));
        }
        let last = (horizon / dt).round() as u64;
        let mut steps = vec![0u64];
        if last > 0 {
            let t0 = FIRST_RECORD.max(dt);
            let decades = (horizon / t0).log10().max(0.0);
            let count = (decades * per_decade as f64).ceil() as usize;
            for k in 0..=count {
                let tau = t0 * 10f64.powf(k as f64 / per_decade as f64);
                let s = ((tau / dt).round() as u64).clamp(1, last);
                if s > *steps.last().unwrap() {
                    steps.push(s);
                }
            }
            if *steps.last().unwrap() != last {
                steps.push(last);
            }
        }
        Ok(Self { dt, steps })
    }

    /// Explicit times; must be non-decreasing after snapping.
    pub fn from_times(times: &[f64], dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")));
        }
        let steps: Vec<u64> = times.iter().map(|t| (t / dt).round().max(0.0) as u64).collect();
        if steps.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParams("recording times must be monotone".into()));
        }
        Ok(Self { dt, steps })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|&s| s as f64 * self.dt).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.steps.last().map(|&s| s as f64 * self.dt).unwrap_or(0.0)
    }
}
