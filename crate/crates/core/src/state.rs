//! Optimization variables: per-frame IMU motion states and the shared
//! calibration state.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::lie::{Pose, Rotation};

/// Default gravity magnitude, m/s².
pub const GRAVITY_NORM: f64 = 9.81;

/// Tangent dimension of one motion state, `[δθ, δv, δp]`.
pub const MOTION_DIM: usize = 9;

/// Calibration tangent layout. Extrinsic blocks are `[δθ, δp]`.
pub mod calib_index {
    pub const EXTRINSIC0: usize = 0;
    pub const EXTRINSIC1: usize = 6;
    pub const TIME_OFFSET: usize = 12;
    pub const BIAS_GYRO: usize = 13;
    pub const BIAS_ACCEL: usize = 16;
    pub const GRAVITY: usize = 19;
    pub const DIM: usize = 21;

    pub const fn extrinsic(camera: usize) -> usize {
        if camera == 0 {
            EXTRINSIC0
        } else {
            EXTRINSIC1
        }
    }
}

pub const CALIB_DIM: usize = calib_index::DIM;

/// Total number of optimized scalars for `frames` motion states.
pub fn state_dimension(frames: usize) -> usize {
    MOTION_DIM * frames + CALIB_DIM
}

/// IMU pose and velocity in the world frame at one (shifted) frame time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionState {
    /// ᵂ_I R
    pub rotation: Rotation,
    /// ᵂv_I, m/s
    pub velocity: Vector3<f64>,
    /// ᵂp_I, m
    pub position: Vector3<f64>,
    /// Frame time on the IMU clock, seconds.
    pub t: f64,
}

impl MotionState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.rotation, self.position)
    }

    /// Left-perturbed rotation, additive velocity and position. Tangent
    /// order `[δθ, δv, δp]`.
    pub fn retract(&self, delta: &[f64]) -> Self {
        let v3 = |i: usize| Vector3::new(delta[i], delta[i + 1], delta[i + 2]);
        Self {
            rotation: self.rotation.retract(&v3(0)),
            velocity: self.velocity + v3(3),
            position: self.position + v3(6),
            t: self.t,
        }
    }
}

/// Gravity from its spherical angles, `ρ[cosθ sinφ, sinθ sinφ, cosφ]`.
pub fn gravity_from_angles(rho: f64, theta: f64, phi: f64) -> Vector3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    rho * Vector3::new(ct * sp, st * sp, cp)
}

/// `∂g/∂(θ, φ)` as two columns.
pub fn gravity_angle_jacobian(rho: f64, theta: f64, phi: f64) -> nalgebra::Matrix3x2<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    nalgebra::Matrix3x2::new(-rho * st * sp, rho * ct * cp, rho * ct * sp, rho * st * cp, 0.0, -rho * sp)
}

/// Inverse of [`gravity_from_angles`] for any non-zero vector; `φ ∈ [0, π]`.
pub fn angles_from_gravity(g: &Vector3<f64>) -> Vector2<f64> {
    let n = g.norm();
    let phi = (g.z / n).clamp(-1.0, 1.0).acos();
    let theta = g.y.atan2(g.x);
    Vector2::new(theta, phi)
}

/// Shared calibration variables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibState {
    /// ᴵ_{C0}T, camera 0 to IMU.
    pub extrinsic0: Pose,
    /// ᴵ_{C1}T, camera 1 to IMU. Unused for monocular rigs.
    pub extrinsic1: Pose,
    /// Cumulative time offset already folded into frame times, seconds.
    pub time_offset: f64,
    /// Increment being solved for in the current pass, seconds.
    pub time_offset_step: f64,
    pub bias_gyro: Vector3<f64>,
    pub bias_accel: Vector3<f64>,
    pub gravity_theta: f64,
    pub gravity_phi: f64,
    /// Fixed, m/s².
    pub gravity_norm: f64,
}

impl Default for CalibState {
    fn default() -> Self {
        Self {
            extrinsic0: Pose::identity(),
            extrinsic1: Pose::identity(),
            time_offset: 0.0,
            time_offset_step: 0.0,
            bias_gyro: Vector3::zeros(),
            bias_accel: Vector3::zeros(),
            gravity_theta: 0.0,
            gravity_phi: std::f64::consts::PI,
            gravity_norm: GRAVITY_NORM,
        }
    }
}

impl CalibState {
    pub fn extrinsic(&self, camera: usize) -> &Pose {
        if camera == 0 {
            &self.extrinsic0
        } else {
            &self.extrinsic1
        }
    }

    pub fn extrinsic_mut(&mut self, camera: usize) -> &mut Pose {
        if camera == 0 {
            &mut self.extrinsic0
        } else {
            &mut self.extrinsic1
        }
    }

    /// `t_d`: folded offset plus the pending increment.
    pub fn total_time_offset(&self) -> f64 {
        self.time_offset + self.time_offset_step
    }

    pub fn gravity(&self) -> Vector3<f64> {
        gravity_from_angles(self.gravity_norm, self.gravity_theta, self.gravity_phi)
    }

    pub fn set_gravity_direction(&mut self, g: &Vector3<f64>) {
        let a = angles_from_gravity(g);
        self.gravity_theta = a.x;
        self.gravity_phi = a.y;
    }

    /// Applies a 21-vector in the [`calib_index`] layout.
    pub fn retract(&self, d: &[f64]) -> Self {
        use calib_index::*;
        let v6 = |i: usize| nalgebra::Vector6::from_column_slice(&d[i..i + 6]);
        let v3 = |i: usize| Vector3::new(d[i], d[i + 1], d[i + 2]);
        Self {
            extrinsic0: self.extrinsic0.retract(&v6(EXTRINSIC0)),
            extrinsic1: self.extrinsic1.retract(&v6(EXTRINSIC1)),
            time_offset: self.time_offset,
            time_offset_step: self.time_offset_step + d[TIME_OFFSET],
            bias_gyro: self.bias_gyro + v3(BIAS_GYRO),
            bias_accel: self.bias_accel + v3(BIAS_ACCEL),
            gravity_theta: self.gravity_theta + d[GRAVITY],
            gravity_phi: self.gravity_phi + d[GRAVITY + 1],
            gravity_norm: self.gravity_norm,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn table_dimensions() {
        assert_eq!(state_dimension(1414), 12747);
        assert_eq!(state_dimension(1036), 9345);
    }

    #[test]
    fn gravity_angle_round_trip() {
        for i in 1..100 {
            let phi = PI * i as f64 / 100.0;
            for j in 0..20 {
                let theta = -PI + 2.0 * PI * (j as f64 + 0.5) / 20.0;
                let g = gravity_from_angles(9.81, theta, phi);
                assert!((g.norm() - 9.81).abs() < 1e-12);
                let a = angles_from_gravity(&g);
                assert!((a.x - theta).abs() < 1e-12, "{theta} {}", a.x);
                assert!((a.y - phi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gravity_jacobian_matches_fd() {
        let (t, p, h) = (0.7, 1.2, 1e-6);
        let j = gravity_angle_jacobian(9.81, t, p);
        let dt = (gravity_from_angles(9.81, t + h, p) - gravity_from_angles(9.81, t - h, p)) / (2.0 * h);
        let dp = (gravity_from_angles(9.81, t, p + h) - gravity_from_angles(9.81, t, p - h)) / (2.0 * h);
        assert!((j.column(0) - dt).norm() < 1e-8);
        assert!((j.column(1) - dp).norm() < 1e-8);
    }
}
