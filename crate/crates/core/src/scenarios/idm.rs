//! Intelligent Driver Model with a smooth leader boundary.

use serde::{Deserialize, Serialize};

use super::smooth::{sigmoid, sigmoid_prime, softplus, softplus_prime};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmParams {
    /// Desired speed v0, m/s.
    pub desired_speed: f64,
    /// Time headway, s.
    pub time_headway: f64,
    /// Maximum acceleration, m/s^2.
    pub max_accel: f64,
    /// Comfortable deceleration, m/s^2.
    pub comfortable_decel: f64,
    /// Jam distance s0, m.
    pub min_gap: f64,
    /// Whether the driver reacts to a vehicle ahead of it at all.
    pub yields: bool,
    /// Slope of the sigmoid that decides whether the other car is ahead, 1/m.
    pub leader_sharpness: f64,
    /// Gaps below this are softly floored so the interaction term stays finite, m.
    pub gap_floor: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed: 15.0,
            time_headway: 1.5,
            max_accel: 1.5,
            comfortable_decel: 2.0,
            min_gap: 2.0,
            yields: true,
            leader_sharpness: 3.0,
            gap_floor: 0.5,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.desired_speed,
            self.time_headway,
            self.max_accel,
            self.comfortable_decel,
            self.min_gap,
            self.leader_sharpness,
            self.gap_floor,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("IDM parameters must be positive".into()));
        }
        Ok(())
    }
}

/// IDM acceleration and its partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdmAccel {
    pub value: f64,
    pub d_lon: f64,
    pub d_v: f64,
    pub d_leader_lon: f64,
    pub d_leader_v: f64,
    pub d_overlap: f64,
}

/// `a [1 - (v/v0)^4 - w (s*/s)^2]` for a vehicle at `(lon, v)` behind a
/// potential leader at `(leader_lon, leader_v)`, where
/// `s* = s0 + softplus(v T + v dv / (2 sqrt(a b)))`, `s` is the softly floored
/// gap and `w = sigmoid(k gap) * overlap` (zero when the driver does not yield).
pub fn idm_accel(
    lon: f64,
    v: f64,
    leader_lon: f64,
    leader_v: f64,
    overlap: f64,
    p: &IdmParams,
) -> IdmAccel {
    let a = p.max_accel;
    let ratio = v / p.desired_speed;
    let free = 1.0 - ratio.powi(4);
    let d_free_v = -4.0 * ratio.powi(3) / p.desired_speed;
    if !p.yields {
        return IdmAccel {
            value: a * free,
            d_lon: 0.0,
            d_v: a * d_free_v,
            d_leader_lon: 0.0,
            d_leader_v: 0.0,
            d_overlap: 0.0,
        };
    }

    let root = 2.0 * (a * p.comfortable_decel).sqrt();
    let dv = v - leader_v;
    let arg = v * p.time_headway + v * dv / root;
    let desired = p.min_gap + softplus(arg);
    let d_desired_v = softplus_prime(arg) * (p.time_headway + (dv + v) / root);
    let d_desired_lv = softplus_prime(arg) * (-v / root);

    let gap = leader_lon - lon;
    let s = p.gap_floor + softplus(gap - p.gap_floor);
    let ds = softplus_prime(gap - p.gap_floor);
    let ahead = sigmoid(p.leader_sharpness * gap);
    let w = ahead * overlap;
    let dw_gap = p.leader_sharpness * sigmoid_prime(p.leader_sharpness * gap) * overlap;

    let q = desired / s;
    let inter = w * q * q;
    let d_inter_v = w * 2.0 * q * d_desired_v / s;
    let d_inter_lv = w * 2.0 * q * d_desired_lv / s;
    let d_inter_gap = dw_gap * q * q - w * 2.0 * q * q * ds / s;

    IdmAccel {
        value: a * (free - inter),
        d_lon: a * d_inter_gap,
        d_v: a * (d_free_v - d_inter_v),
        d_leader_lon: -a * d_inter_gap,
        d_leader_v: -a * d_inter_lv,
        d_overlap: -a * ahead * q * q,
    }
}
