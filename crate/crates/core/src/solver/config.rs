use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::SegmentSchedule;

/// Backtracking step sizes `1, 1/2, ..., 2^-10`.
pub fn default_alpha_schedule() -> Vec<f64> {
    (0..=10).map(|i| 0.5f64.powi(i)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Horizon in steps.
    pub horizon: usize,
    /// Number of segments; branching happens only at segment ends.
    pub segments: usize,
    /// Explicit branch times `0 = tau_0 < ... < tau_k = horizon`; overrides equal lengths.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<Vec<usize>>,
    pub max_iterations: usize,
    /// Stop when the relative cost improvement of an accepted step falls below this.
    pub cost_tolerance: f64,
    /// Stop when the mean scaled open-loop update falls below this.
    pub gradient_tolerance: f64,
    pub alpha_schedule: Vec<f64>,
    pub regularization_init: f64,
    pub regularization_increase: f64,
    pub regularization_decrease: f64,
    pub regularization_min: f64,
    pub regularization_max: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            horizon: 30,
            segments: 3,
            boundaries: None,
            max_iterations: 100,
            cost_tolerance: 1e-6,
            gradient_tolerance: 1e-6,
            alpha_schedule: default_alpha_schedule(),
            regularization_init: 1e-6,
            regularization_increase: 10.0,
            regularization_decrease: 2.0,
            regularization_min: 1e-9,
            regularization_max: 1e10,
        }
    }
}

impl SolverConfig {
    pub fn schedule(&self) -> Result<SegmentSchedule> {
        match &self.boundaries {
            Some(b) => {
                let s = SegmentSchedule::new(b.clone())?;
                if s.horizon() != self.horizon {
                    return Err(Error::Config(format!(
                        "boundaries end at {} but horizon is {}",
                        s.horizon(),
                        self.horizon
                    )));
                }
                Ok(s)
            }
            None => SegmentSchedule::uniform(self.horizon, self.segments),
        }
    }

    /// Same settings on an explicit schedule.
    pub fn with_schedule(&self, schedule: &SegmentSchedule) -> Self {
        Self {
            horizon: schedule.horizon(),
            segments: schedule.num_segments(),
            boundaries: Some(schedule.boundaries().to_vec()),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        if self.alpha_schedule.is_empty()
            || self.alpha_schedule.iter().any(|a| !(*a > 0.0 && *a <= 1.0))
        {
            return Err(Error::Config(
                "alpha_schedule entries must lie in (0, 1]".into(),
            ));
        }
        if self.alpha_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(
                "alpha_schedule must be strictly decreasing".into(),
            ));
        }
        if !(self.regularization_init > 0.0
            && self.regularization_increase > 1.0
            && self.regularization_decrease >= 1.0
            && self.regularization_max >= self.regularization_init)
        {
            return Err(Error::Config("inconsistent regularization settings".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        Ok(())
    }
}
