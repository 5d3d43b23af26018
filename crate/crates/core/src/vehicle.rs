//! Unicycle vehicles steered through their hand position.
//!
//! The hand point `s = r + L(cosθ, sinθ)` obeys `s̈ = u` exactly once the
//! force/torque pair is chosen by [`feedback_linearize`], so a fleet of
//! vehicles can run any double-integrator protocol.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VehicleError {
    #[error("vehicle parameter {name} must be finite and positive, got {value}")]
    Parameter { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// kg·m²
    pub inertia: f64,
    /// Hand offset ahead of the axle, m.
    pub hand: f64,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), VehicleError> {
        for (name, value) in [("mass", self.mass), ("inertia", self.inertia), ("hand", self.hand)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(VehicleError::Parameter { name, value });
            }
        }
        Ok(())
    }
}

/// `(r_x, r_y, θ, v̄, w̄)`; `θ` is never wrapped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehiclePose {
    pub rx: f64,
    pub ry: f64,
    pub theta: f64,
    pub speed: f64,
    pub turn_rate: f64,
}

impl VehiclePose {
    pub fn from_slice(s: &[f64]) -> Self {
        VehiclePose { rx: s[0], ry: s[1], theta: s[2], speed: s[3], turn_rate: s[4] }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.rx, self.ry, self.theta, self.speed, self.turn_rate]
    }
}

pub fn hand_position(pose: &VehiclePose, hand: f64) -> (f64, f64) {
    let (s, c) = pose.theta.sin_cos();
    (pose.rx + hand * c, pose.ry + hand * s)
}

pub fn hand_velocity(pose: &VehiclePose, hand: f64) -> (f64, f64) {
    let (s, c) = pose.theta.sin_cos();
    let (v, w) = (pose.speed, pose.turn_rate);
    (v * c - hand * w * s, v * s + hand * w * c)
}

/// Hand position and velocity stacked as the double-integrator state.
pub fn hand_state(pose: &VehiclePose, hand: f64) -> [f64; 4] {
    let (x, y) = hand_position(pose, hand);
    let (vx, vy) = hand_velocity(pose, hand);
    [x, y, vx, vy]
}

/// Force and torque that make the hand acceleration equal `u`.
pub fn feedback_linearize(pose: &VehiclePose, u: [f64; 2], p: &VehicleParams) -> (f64, f64) {
    let (s, c) = pose.theta.sin_cos();
    let (v, w, l) = (pose.speed, pose.turn_rate, p.hand);
    // drift of s̈ with F = τ = 0
    let d0 = -v * w * s - l * w * w * c;
    let d1 = v * w * c - l * w * w * s;
    let (r0, r1) = (u[0] - d0, u[1] - d1);
    // inverse of [[c/m, −(L/J)s], [s/m, (L/J)c]] is [[m c, m s], [−(J/L)s, (J/L)c]]
    let force = p.mass * (c * r0 + s * r1);
    let torque = p.inertia / l * (-s * r0 + c * r1);
    (force, torque)
}

pub fn vehicle_derivative(pose: &VehiclePose, force: f64, torque: f64, p: &VehicleParams) -> [f64; 5] {
    let (s, c) = pose.theta.sin_cos();
    [pose.speed * c, pose.speed * s, pose.turn_rate, force / p.mass, torque / p.inertia]
}

/// Pose that puts the hand at `state = (x, y, ẋ, ẏ)` with heading `theta`.
pub fn pose_from_hand(state: &[f64], theta: f64, hand: f64) -> VehiclePose {
    let (s, c) = theta.sin_cos();
    // invert the velocity map [[c, −Ls], [s, Lc]]
    let speed = c * state[2] + s * state[3];
    let turn_rate = (-s * state[2] + c * state[3]) / hand;
    VehiclePose { rx: state[0] - hand * c, ry: state[1] - hand * s, theta, speed, turn_rate }
}
