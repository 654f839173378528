//! Goal uncertainty: a corridor that splits into a left and a right arm.

use nalgebra::{DMatrix, DVector, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use super::bicycle::{bicycle_jacobians, bicycle_step, clamp_bicycle_control, BicycleParams};
use super::smooth::{sigmoid, sigmoid_prime, softplus};
use super::Scenario;
use crate::belief::{Belief, LatentSet};
use crate::error::{Error, Result};
use crate::model::ProblemModel;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TMazeConfig {
    pub vehicle: BicycleParams,
    pub dt: f64,
    /// Length of the shared corridor, m.
    pub corridor_length: f64,
    pub corridor_width: f64,
    /// Goals sit at `(-goal_x, goal_y)` (left) and `(goal_x, goal_y)` (right).
    pub goal_x: f64,
    pub goal_y: f64,
    /// Half-depth of the crossbar beyond the goal line, m.
    pub arm_half_width: f64,
    pub start_speed: f64,
    pub goal_weight: f64,
    pub final_weight: f64,
    pub wall_weight: f64,
    /// Softness of the wall penalties, 1/m.
    pub wall_sharpness: f64,
    pub steer_weight: f64,
    pub accel_weight: f64,
    /// Observation standard deviation at the start of the corridor.
    pub sigma_level: f64,
    /// Slope of the variance decay along the corridor, 1/m.
    pub decay_rate: f64,
    /// Where the variance has halved, m.
    pub decay_center: f64,
    pub variance_floor: f64,
    /// P(left) at the start of an episode.
    pub prior_left: f64,
}

impl Default for TMazeConfig {
    fn default() -> Self {
        Self {
            vehicle: BicycleParams::default(),
            dt: 0.1,
            corridor_length: 20.0,
            corridor_width: 4.0,
            goal_x: 6.0,
            goal_y: 24.0,
            arm_half_width: 2.5,
            start_speed: 5.0,
            goal_weight: 1.0,
            final_weight: 20.0,
            wall_weight: 50.0,
            wall_sharpness: 3.0,
            steer_weight: 20.0,
            accel_weight: 0.2,
            sigma_level: 9.1,
            decay_rate: 0.8,
            decay_center: 12.0,
            variance_floor: 1e-4,
            prior_left: 0.49,
        }
    }
}

impl TMazeConfig {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        let positive = [
            self.dt,
            self.corridor_length,
            self.corridor_width,
            self.goal_x,
            self.goal_y,
            self.arm_half_width,
            self.wall_sharpness,
            self.decay_rate,
            self.variance_floor,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(
                "tmaze geometry, dt and decay settings must be positive".into(),
            ));
        }
        let weights = [
            self.goal_weight,
            self.final_weight,
            self.wall_weight,
            self.steer_weight,
            self.accel_weight,
        ];
        if weights.iter().any(|v| !(*v >= 0.0 && v.is_finite()))
            || self.steer_weight == 0.0 && self.accel_weight == 0.0
        {
            return Err(Error::Config(
                "tmaze weights must be non-negative with some control cost".into(),
            ));
        }
        if !(self.sigma_level >= 0.0 && self.start_speed >= 0.0) {
            return Err(Error::Config(
                "sigma_level and start_speed must be non-negative".into(),
            ));
        }
        if !(self.prior_left > 0.0 && self.prior_left < 1.0) {
            return Err(Error::Config(
                "prior_left must lie strictly between 0 and 1".into(),
            ));
        }
        if self.goal_y <= self.corridor_length {
            return Err(Error::Config("goals must lie beyond the corridor".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TMaze {
    pub cfg: TMazeConfig,
    latents: LatentSet,
}

impl TMaze {
    pub fn new(cfg: TMazeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            latents: LatentSet::new(["left", "right"])?,
        })
    }

    pub fn goal(&self, z: usize) -> (f64, f64) {
        let gx = if z == LEFT {
            -self.cfg.goal_x
        } else {
            self.cfg.goal_x
        };
        (gx, self.cfg.goal_y)
    }

    /// Observation variance as a function of progress along the corridor.
    pub fn observation_variance(&self, py: f64) -> f64 {
        let c = &self.cfg;
        c.sigma_level.powi(2) * sigmoid(-c.decay_rate * (py - c.decay_center)) + c.variance_floor
    }

    /// Smooth penalty for leaving the corridor or overshooting the crossbar,
    /// with its gradient in `(px, py)`.
    pub fn wall_cost(&self, px: f64, py: f64) -> (f64, f64, f64) {
        let c = &self.cfg;
        let k = c.wall_sharpness;
        let hw = 0.5 * c.corridor_width;
        // (softplus(k d) / k)^2 ~ d^2 past the wall, ~0 inside.
        let side = |d: f64| {
            let sp = softplus(k * d) / k;
            (sp * sp, 2.0 * sp * sigmoid(k * d))
        };
        let (right, d_right) = side(px - hw);
        let (left, d_left) = side(-px - hw);
        let gate = sigmoid(k * (c.corridor_length - py));
        let d_gate = -k * sigmoid_prime(k * (c.corridor_length - py));
        let top_line = c.goal_y + c.arm_half_width;
        let (top, d_top) = side(py - top_line);
        let w = c.wall_weight;
        let value = w * ((right + left) * gate + top);
        let dpx = w * (d_right - d_left) * gate;
        let dpy = w * ((right + left) * d_gate + d_top);
        (value, dpx, dpy)
    }

    fn goal_terms(&self, x: &DVector<f64>, z: usize, weight: f64) -> (f64, f64, f64) {
        let (gx, gy) = self.goal(z);
        let (dx, dy) = (x[0] - gx, x[1] - gy);
        (
            weight * (dx * dx + dy * dy),
            2.0 * weight * dx,
            2.0 * weight * dy,
        )
    }
}

fn bike(x: &DVector<f64>) -> Vector4<f64> {
    Vector4::new(x[0], x[1], x[2], x[3])
}

impl ProblemModel for TMaze {
    fn state_dim(&self) -> usize {
        4
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn obs_dim(&self) -> usize {
        1
    }
    fn latents(&self) -> &LatentSet {
        &self.latents
    }
    fn dt(&self) -> f64 {
        self.cfg.dt
    }

    fn dynamics_mean(&self, x: &DVector<f64>, u: &DVector<f64>, _z: usize) -> DVector<f64> {
        let n = bicycle_step(
            &self.cfg.vehicle,
            &bike(x),
            &Vector2::new(u[0], u[1]),
            self.cfg.dt,
        );
        DVector::from_column_slice(n.as_slice())
    }

    fn dynamics_noise(&self, _z: usize) -> DMatrix<f64> {
        DMatrix::zeros(4, 4)
    }

    fn observation_mean(&self, _x: &DVector<f64>, z: usize) -> DVector<f64> {
        DVector::from_element(1, if z == LEFT { -1.0 } else { 1.0 })
    }

    fn observation_noise(&self, x: &DVector<f64>, _z: usize) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.observation_variance(x[1]))
    }

    fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>, z: usize) -> f64 {
        let (goal, _, _) = self.goal_terms(x, z, self.cfg.goal_weight);
        let (wall, _, _) = self.wall_cost(x[0], x[1]);
        goal + wall + self.cfg.steer_weight * u[0] * u[0] + self.cfg.accel_weight * u[1] * u[1]
    }

    fn final_cost(&self, x: &DVector<f64>, z: usize) -> f64 {
        let (goal, _, _) = self.goal_terms(x, z, self.cfg.final_weight);
        goal + self.wall_cost(x[0], x[1]).0
    }

    fn dynamics_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _z: usize,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let (fx, fu) = bicycle_jacobians(
            &self.cfg.vehicle,
            &bike(x),
            &Vector2::new(u[0], u[1]),
            self.cfg.dt,
        );
        Some((
            DMatrix::from_column_slice(4, 4, fx.as_slice()),
            DMatrix::from_column_slice(4, 2, fu.as_slice()),
        ))
    }

    fn running_cost_gradient(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        z: usize,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let (_, gx, gy) = self.goal_terms(x, z, self.cfg.goal_weight);
        let (_, wx, wy) = self.wall_cost(x[0], x[1]);
        let lx = DVector::from_vec(vec![gx + wx, gy + wy, 0.0, 0.0]);
        let lu = DVector::from_vec(vec![
            2.0 * self.cfg.steer_weight * u[0],
            2.0 * self.cfg.accel_weight * u[1],
        ]);
        Some((lx, lu))
    }

    fn final_cost_gradient(&self, x: &DVector<f64>, z: usize) -> Option<DVector<f64>> {
        let (_, gx, gy) = self.goal_terms(x, z, self.cfg.final_weight);
        let (_, wx, wy) = self.wall_cost(x[0], x[1]);
        Some(DVector::from_vec(vec![gx + wx, gy + wy, 0.0, 0.0]))
    }

    fn clamp_control(&self, u: &DVector<f64>) -> DVector<f64> {
        let c = clamp_bicycle_control(&self.cfg.vehicle, &Vector2::new(u[0], u[1]));
        DVector::from_vec(vec![c[0], c[1]])
    }
}

impl Scenario for TMaze {
    fn initial_state(&self) -> DVector<f64> {
        DVector::from_vec(vec![
            0.0,
            0.0,
            std::f64::consts::FRAC_PI_2,
            self.cfg.start_speed,
        ])
    }

    fn default_prior(&self) -> Belief {
        Belief::new([self.cfg.prior_left, 1.0 - self.cfg.prior_left]).expect("validated prior")
    }
}
