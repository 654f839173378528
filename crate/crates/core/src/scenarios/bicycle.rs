//! Kinematic bicycle integrated with explicit Euler.
//!
//! State `(px, py, theta, v)`, control `(steer, accel)`.

use nalgebra::{Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BicycleParams {
    /// Wheelbase, m.
    pub wheelbase: f64,
    /// Speed cap, m/s.
    pub v_max: f64,
    /// Steering limit applied at execution, rad.
    pub steer_max: f64,
    /// Acceleration limit applied at execution, m/s^2.
    pub accel_max: f64,
}

impl Default for BicycleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.5,
            v_max: 30.0,
            steer_max: 0.6,
            accel_max: 8.0,
        }
    }
}

impl BicycleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.wheelbase > 0.0
            && self.v_max > 0.0
            && self.steer_max > 0.0
            && self.accel_max > 0.0)
        {
            return Err(Error::Config("bicycle parameters must be positive".into()));
        }
        if self.steer_max >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Config("steer_max must be below pi/2".into()));
        }
        Ok(())
    }
}

pub type BicycleState = Vector4<f64>;
pub type BicycleControl = Vector2<f64>;

pub fn bicycle_step(
    p: &BicycleParams,
    x: &BicycleState,
    u: &BicycleControl,
    dt: f64,
) -> BicycleState {
    let (theta, v) = (x[2], x[3]);
    Vector4::new(
        x[0] + v * theta.cos() * dt,
        x[1] + v * theta.sin() * dt,
        theta + v / p.wheelbase * u[0].tan() * dt,
        (v + u[1] * dt).clamp(0.0, p.v_max),
    )
}

/// `(d x' / d x, d x' / d u)`. The speed clamp contributes zero slope when active.
pub fn bicycle_jacobians(
    p: &BicycleParams,
    x: &BicycleState,
    u: &BicycleControl,
    dt: f64,
) -> (Matrix4<f64>, Matrix4x2<f64>) {
    let (theta, v) = (x[2], x[3]);
    let (s, c) = theta.sin_cos();
    let inside = {
        let raw = v + u[1] * dt;
        (0.0..=p.v_max).contains(&raw)
    };
    let mut fx = Matrix4::identity();
    fx[(0, 2)] = -v * s * dt;
    fx[(0, 3)] = c * dt;
    fx[(1, 2)] = v * c * dt;
    fx[(1, 3)] = s * dt;
    fx[(2, 3)] = u[0].tan() / p.wheelbase * dt;
    fx[(3, 3)] = if inside { 1.0 } else { 0.0 };
    let mut fu = Matrix4x2::zeros();
    let sec = 1.0 / u[0].cos();
    fu[(2, 0)] = v / p.wheelbase * sec * sec * dt;
    fu[(3, 1)] = if inside { dt } else { 0.0 };
    (fx, fu)
}

pub fn clamp_bicycle_control(p: &BicycleParams, u: &BicycleControl) -> BicycleControl {
    Vector2::new(
        u[0].clamp(-p.steer_max, p.steer_max),
        u[1].clamp(-p.accel_max, p.accel_max),
    )
}
