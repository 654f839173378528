//! Interactive lane change next to a driver of unknown intent.
//!
//! State `(px, py, theta, v, other_lon, other_v)`: the ego bicycle followed by
//! the other car, which drives along the centerline of the target lane.

use nalgebra::{DMatrix, DVector, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use super::bicycle::{bicycle_jacobians, bicycle_step, clamp_bicycle_control, BicycleParams};
use super::idm::{idm_accel, IdmParams};
use super::smooth::{sigmoid, sigmoid_prime};
use super::Scenario;
use crate::belief::{Belief, LatentSet};
use crate::error::{Error, Result};
use crate::model::ProblemModel;

pub const NICE: usize = 0;
pub const AGGRESSIVE: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaneChangeConfig {
    pub vehicle: BicycleParams,
    pub dt: f64,
    /// Lateral position of the target lane's centerline; the ego starts at 0, m.
    pub target_lane: f64,
    pub ego_start_speed: f64,
    pub other_start_lon: f64,
    pub other_start_speed: f64,
    pub ego_desired_speed: f64,
    pub nice: IdmParams,
    pub aggressive: IdmParams,
    /// Slope of the ego's lane-overlap sigmoid as seen by the other driver, 1/m.
    pub overlap_sharpness: f64,
    pub lane_weight: f64,
    pub speed_weight: f64,
    pub heading_weight: f64,
    pub final_weight: f64,
    pub steer_weight: f64,
    pub accel_weight: f64,
    pub collision_weight: f64,
    /// Longitudinal and lateral length scales of the collision penalty, m.
    pub collision_length: f64,
    pub collision_width: f64,
    /// Process noise standard deviation per state dimension.
    pub process_sigma: [f64; 6],
    /// b(nice) at the start of an episode.
    pub prior_nice: f64,
}

impl Default for LaneChangeConfig {
    fn default() -> Self {
        Self {
            vehicle: BicycleParams::default(),
            dt: 0.2,
            target_lane: 3.5,
            ego_start_speed: 10.0,
            other_start_lon: 0.0,
            other_start_speed: 10.0,
            ego_desired_speed: 12.0,
            nice: IdmParams {
                desired_speed: 10.0,
                yields: true,
                ..IdmParams::default()
            },
            aggressive: IdmParams {
                desired_speed: 15.0,
                yields: false,
                ..IdmParams::default()
            },
            overlap_sharpness: 4.0,
            lane_weight: 1.0,
            speed_weight: 0.5,
            heading_weight: 5.0,
            final_weight: 10.0,
            steer_weight: 20.0,
            accel_weight: 0.5,
            collision_weight: 300.0,
            collision_length: 4.0,
            collision_width: 1.5,
            process_sigma: [0.02, 0.02, 0.005, 0.05, 0.02, 0.05],
            prior_nice: 0.49,
        }
    }
}

impl LaneChangeConfig {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.nice.validate()?;
        self.aggressive.validate()?;
        let positive = [
            self.dt,
            self.target_lane,
            self.overlap_sharpness,
            self.collision_length,
            self.collision_width,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(
                "lane change geometry and dt must be positive".into(),
            ));
        }
        let weights = [
            self.lane_weight,
            self.speed_weight,
            self.heading_weight,
            self.final_weight,
            self.steer_weight,
            self.accel_weight,
            self.collision_weight,
        ];
        if weights.iter().any(|v| !(*v >= 0.0 && v.is_finite()))
            || self.steer_weight == 0.0 && self.accel_weight == 0.0
        {
            return Err(Error::Config(
                "lane change weights must be non-negative with some control cost".into(),
            ));
        }
        if self
            .process_sigma
            .iter()
            .any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return Err(Error::Config(
                "process_sigma entries must be positive".into(),
            ));
        }
        if !(self.prior_nice > 0.0 && self.prior_nice < 1.0) {
            return Err(Error::Config(
                "prior_nice must lie strictly between 0 and 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LaneChange {
    pub cfg: LaneChangeConfig,
    latents: LatentSet,
}

impl LaneChange {
    pub fn new(cfg: LaneChangeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            latents: LatentSet::new(["nice", "aggressive"])?,
        })
    }

    pub fn driver(&self, z: usize) -> &IdmParams {
        if z == NICE {
            &self.cfg.nice
        } else {
            &self.cfg.aggressive
        }
    }

    /// How far the ego has moved into the other car's lane, in `[0, 1]`.
    pub fn lane_overlap(&self, py: f64) -> (f64, f64) {
        let k = self.cfg.overlap_sharpness;
        let arg = k * (py - 0.5 * self.cfg.target_lane);
        (sigmoid(arg), k * sigmoid_prime(arg))
    }

    fn other_accel(&self, x: &DVector<f64>, z: usize) -> (f64, [f64; 6]) {
        let (overlap, d_overlap) = self.lane_overlap(x[1]);
        let a = idm_accel(x[4], x[5], x[0], x[3], overlap, self.driver(z));
        (
            a.value,
            [
                a.d_leader_lon,
                a.d_overlap * d_overlap,
                0.0,
                a.d_leader_v,
                a.d_lon,
                a.d_v,
            ],
        )
    }

    fn collision(&self, x: &DVector<f64>) -> (f64, f64, f64, f64) {
        let c = &self.cfg;
        let dx = x[0] - x[4];
        let dy = x[1] - c.target_lane;
        let (lx, ly) = (c.collision_length, c.collision_width);
        let e = c.collision_weight * (-(dx * dx / (lx * lx) + dy * dy / (ly * ly))).exp();
        let ddx = -2.0 * dx / (lx * lx) * e;
        let ddy = -2.0 * dy / (ly * ly) * e;
        // d/d px, d/d py, d/d other_lon
        (e, ddx, ddy, -ddx)
    }

    fn state_cost(&self, x: &DVector<f64>, scale: f64) -> (f64, DVector<f64>) {
        let c = &self.cfg;
        let dy = x[1] - c.target_lane;
        let dv = x[3] - c.ego_desired_speed;
        let value = scale
            * (c.lane_weight * dy * dy + c.speed_weight * dv * dv + c.heading_weight * x[2] * x[2]);
        let mut grad = DVector::zeros(6);
        grad[1] = scale * 2.0 * c.lane_weight * dy;
        grad[2] = scale * 2.0 * c.heading_weight * x[2];
        grad[3] = scale * 2.0 * c.speed_weight * dv;
        let (e, ex, ey, eo) = self.collision(x);
        grad[0] += ex;
        grad[1] += ey;
        grad[4] += eo;
        (value + e, grad)
    }

    /// Signed longitudinal lead of the ego over the other car.
    pub fn lead(x: &DVector<f64>) -> f64 {
        x[0] - x[4]
    }
}

impl ProblemModel for LaneChange {
    fn state_dim(&self) -> usize {
        6
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

    fn dynamics_mean(&self, x: &DVector<f64>, u: &DVector<f64>, z: usize) -> DVector<f64> {
        let dt = self.cfg.dt;
        let ego = bicycle_step(
            &self.cfg.vehicle,
            &Vector4::new(x[0], x[1], x[2], x[3]),
            &Vector2::new(u[0], u[1]),
            dt,
        );
        let (acc, _) = self.other_accel(x, z);
        let v = (x[5] + acc * dt).clamp(0.0, self.cfg.vehicle.v_max);
        DVector::from_vec(vec![ego[0], ego[1], ego[2], ego[3], x[4] + x[5] * dt, v])
    }

    fn dynamics_noise(&self, _z: usize) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            6,
            self.cfg.process_sigma.iter().map(|s| s * s),
        ))
    }

    fn observation_mean(&self, _x: &DVector<f64>, _z: usize) -> DVector<f64> {
        DVector::zeros(1)
    }

    fn observation_noise(&self, _x: &DVector<f64>, _z: usize) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }

    fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>, _z: usize) -> f64 {
        self.state_cost(x, 1.0).0
            + self.cfg.steer_weight * u[0] * u[0]
            + self.cfg.accel_weight * u[1] * u[1]
    }

    fn final_cost(&self, x: &DVector<f64>, _z: usize) -> f64 {
        self.state_cost(x, self.cfg.final_weight).0
    }

    fn dynamics_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        z: usize,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let dt = self.cfg.dt;
        let (bx, bu) = bicycle_jacobians(
            &self.cfg.vehicle,
            &Vector4::new(x[0], x[1], x[2], x[3]),
            &Vector2::new(u[0], u[1]),
            dt,
        );
        let mut fx = DMatrix::zeros(6, 6);
        let mut fu = DMatrix::zeros(6, 2);
        fx.view_mut((0, 0), (4, 4)).copy_from(&bx);
        fu.view_mut((0, 0), (4, 2)).copy_from(&bu);
        fx[(4, 4)] = 1.0;
        fx[(4, 5)] = dt;
        let (acc, grad) = self.other_accel(x, z);
        let raw = x[5] + acc * dt;
        if (0.0..=self.cfg.vehicle.v_max).contains(&raw) {
            for (j, g) in grad.iter().enumerate() {
                fx[(5, j)] = g * dt;
            }
            fx[(5, 5)] += 1.0;
        }
        Some((fx, fu))
    }

    fn running_cost_gradient(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _z: usize,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let (_, lx) = self.state_cost(x, 1.0);
        let lu = DVector::from_vec(vec![
            2.0 * self.cfg.steer_weight * u[0],
            2.0 * self.cfg.accel_weight * u[1],
        ]);
        Some((lx, lu))
    }

    fn final_cost_gradient(&self, x: &DVector<f64>, _z: usize) -> Option<DVector<f64>> {
        Some(self.state_cost(x, self.cfg.final_weight).1)
    }

    fn clamp_control(&self, u: &DVector<f64>) -> DVector<f64> {
        let c = clamp_bicycle_control(&self.cfg.vehicle, &Vector2::new(u[0], u[1]));
        DVector::from_vec(vec![c[0], c[1]])
    }
}

impl Scenario for LaneChange {
    fn initial_state(&self) -> DVector<f64> {
        let c = &self.cfg;
        DVector::from_vec(vec![
            0.0,
            0.0,
            0.0,
            c.ego_start_speed,
            c.other_start_lon,
            c.other_start_speed,
        ])
    }

    fn default_prior(&self) -> Belief {
        Belief::new([self.cfg.prior_nice, 1.0 - self.cfg.prior_nice]).expect("validated prior")
    }
}
