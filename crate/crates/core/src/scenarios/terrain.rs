//! Dynamics-mode uncertainty: muddy ground that may be smooth to the right.

use nalgebra::{DMatrix, DVector, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use super::bicycle::{bicycle_jacobians, bicycle_step, clamp_bicycle_control, BicycleParams};
use super::smooth::{sigmoid, sigmoid_prime};
use super::Scenario;
use crate::belief::{Belief, LatentSet};
use crate::error::{Error, Result};
use crate::model::ProblemModel;

pub const SMOOTH: usize = 0;
pub const ROUGH: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainConfig {
    pub vehicle: BicycleParams,
    pub dt: f64,
    /// Resistance coefficient of rough ground, m/s^2.
    pub rho_rough: f64,
    /// Resistance of smooth ground; the model requires 0 <= rho_smooth < rho_rough.
    pub rho_smooth: f64,
    /// Lateral position where smooth ground takes over (latent smooth only), m.
    pub transition_center: f64,
    /// Steepness of the transition, 1/m.
    pub transition_steepness: f64,
    pub goal_x: f64,
    pub goal_y: f64,
    pub start_speed: f64,
    pub goal_weight: f64,
    /// Extra running penalty on lateral distance from the goal line.
    pub lateral_weight: f64,
    pub final_weight: f64,
    pub steer_weight: f64,
    pub accel_weight: f64,
    /// Process noise standard deviation for (px, py, theta, v).
    pub process_sigma: [f64; 4],
    /// b(smooth) at the start of an episode.
    pub prior_smooth: f64,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        Self {
            vehicle: BicycleParams::default(),
            dt: 0.1,
            rho_rough: 8.0,
            rho_smooth: 0.0,
            transition_center: 1.5,
            transition_steepness: 3.0,
            goal_x: 0.0,
            goal_y: 18.0,
            start_speed: 6.0,
            goal_weight: 0.05,
            lateral_weight: 0.3,
            final_weight: 20.0,
            steer_weight: 5.0,
            accel_weight: 0.25,
            process_sigma: [0.02, 0.02, 0.005, 0.01],
            prior_smooth: 0.49,
        }
    }
}

impl TerrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        if !(self.rho_rough > self.rho_smooth && self.rho_smooth >= 0.0) {
            return Err(Error::Config(
                "terrain requires rho_rough > rho_smooth >= 0".into(),
            ));
        }
        if !(self.dt > 0.0 && self.transition_steepness > 0.0 && self.start_speed >= 0.0) {
            return Err(Error::Config(
                "dt and transition_steepness must be positive".into(),
            ));
        }
        let weights = [
            self.goal_weight,
            self.lateral_weight,
            self.final_weight,
            self.steer_weight,
            self.accel_weight,
        ];
        if weights.iter().any(|v| !(*v >= 0.0 && v.is_finite()))
            || self.steer_weight == 0.0 && self.accel_weight == 0.0
        {
            return Err(Error::Config(
                "terrain weights must be non-negative with some control cost".into(),
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
        if !(self.prior_smooth > 0.0 && self.prior_smooth < 1.0) {
            return Err(Error::Config(
                "prior_smooth must lie strictly between 0 and 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Terrain {
    pub cfg: TerrainConfig,
    latents: LatentSet,
}

impl Terrain {
    pub fn new(cfg: TerrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            latents: LatentSet::new(["smooth", "rough"])?,
        })
    }

    /// Resistance coefficient at lateral position `px` and its slope in `px`.
    pub fn rho(&self, px: f64, z: usize) -> (f64, f64) {
        let c = &self.cfg;
        if z == ROUGH {
            return (c.rho_rough, 0.0);
        }
        let arg = c.transition_steepness * (px - c.transition_center);
        let span = c.rho_rough - c.rho_smooth;
        (
            c.rho_smooth + span * (1.0 - sigmoid(arg)),
            -span * c.transition_steepness * sigmoid_prime(arg),
        )
    }

    /// Resistive deceleration `rho tanh(v)`.
    pub fn resistance(&self, px: f64, v: f64, z: usize) -> f64 {
        self.rho(px, z).0 * v.tanh()
    }

    fn goal_terms(&self, x: &DVector<f64>, weight: f64) -> (f64, f64, f64) {
        let (dx, dy) = (x[0] - self.cfg.goal_x, x[1] - self.cfg.goal_y);
        (
            weight * (dx * dx + dy * dy),
            2.0 * weight * dx,
            2.0 * weight * dy,
        )
    }
}

impl ProblemModel for Terrain {
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

    fn dynamics_mean(&self, x: &DVector<f64>, u: &DVector<f64>, z: usize) -> DVector<f64> {
        let effective = u[1] - self.resistance(x[0], x[3], z);
        let n = bicycle_step(
            &self.cfg.vehicle,
            &Vector4::new(x[0], x[1], x[2], x[3]),
            &Vector2::new(u[0], effective),
            self.cfg.dt,
        );
        DVector::from_column_slice(n.as_slice())
    }

    fn dynamics_noise(&self, _z: usize) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            4,
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
        let lateral = x[0] - self.cfg.goal_x;
        self.goal_terms(x, self.cfg.goal_weight).0
            + self.cfg.lateral_weight * lateral * lateral
            + self.cfg.steer_weight * u[0] * u[0]
            + self.cfg.accel_weight * u[1] * u[1]
    }

    fn final_cost(&self, x: &DVector<f64>, _z: usize) -> f64 {
        self.goal_terms(x, self.cfg.final_weight).0
    }

    fn dynamics_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        z: usize,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let (rho, drho) = self.rho(x[0], z);
        let v = x[3];
        let effective = u[1] - rho * v.tanh();
        let (mut fx, fu) = bicycle_jacobians(
            &self.cfg.vehicle,
            &Vector4::new(x[0], x[1], x[2], v),
            &Vector2::new(u[0], effective),
            self.cfg.dt,
        );
        // Chain rule through the effective acceleration; fu[(3, 1)] is dt or 0.
        let slope = fu[(3, 1)];
        fx[(3, 0)] -= slope * drho * v.tanh();
        fx[(3, 3)] -= slope * rho / v.cosh().powi(2);
        Some((
            DMatrix::from_column_slice(4, 4, fx.as_slice()),
            DMatrix::from_column_slice(4, 2, fu.as_slice()),
        ))
    }

    fn running_cost_gradient(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _z: usize,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let (_, gx, gy) = self.goal_terms(x, self.cfg.goal_weight);
        let lu = DVector::from_vec(vec![
            2.0 * self.cfg.steer_weight * u[0],
            2.0 * self.cfg.accel_weight * u[1],
        ]);
        let lateral = 2.0 * self.cfg.lateral_weight * (x[0] - self.cfg.goal_x);
        Some((DVector::from_vec(vec![gx + lateral, gy, 0.0, 0.0]), lu))
    }

    fn final_cost_gradient(&self, x: &DVector<f64>, _z: usize) -> Option<DVector<f64>> {
        let (_, gx, gy) = self.goal_terms(x, self.cfg.final_weight);
        Some(DVector::from_vec(vec![gx, gy, 0.0, 0.0]))
    }

    fn clamp_control(&self, u: &DVector<f64>) -> DVector<f64> {
        let c = clamp_bicycle_control(&self.cfg.vehicle, &Vector2::new(u[0], u[1]));
        DVector::from_vec(vec![c[0], c[1]])
    }
}

impl Scenario for Terrain {
    fn initial_state(&self) -> DVector<f64> {
        DVector::from_vec(vec![
            0.0,
            0.0,
            std::f64::consts::FRAC_PI_2,
            self.cfg.start_speed,
        ])
    }

    fn default_prior(&self) -> Belief {
        Belief::new([self.cfg.prior_smooth, 1.0 - self.cfg.prior_smooth]).expect("validated prior")
    }
}
