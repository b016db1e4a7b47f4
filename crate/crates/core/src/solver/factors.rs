//! IMU motion factor and the robust kernel used on reprojection terms.

use nalgebra::{Cholesky, SMatrix};

use crate::imu::{Matrix9, Matrix93, PreintegratedImu};
use crate::lie::{left_jacobian_inv, log_matrix, skew};
use crate::state::{gravity_angle_jacobian, CalibState, MotionState};

pub type Vector9 = SMatrix<f64, 9, 1>;
/// Columns `[b_ω (3), b_a (3), θ, φ]` of the calibration state.
pub type Matrix98 = SMatrix<f64, 9, 8>;

/// IMU residual and Jacobians. Residual rows are `[r_ΔR, r_Δv, r_Δp]`.
#[derive(Clone, Copy, Debug)]
pub struct ImuResidual {
    pub residual: Vector9,
    /// w.r.t. frame i `[δθ, δv, δp]`
    pub d_first: Matrix9,
    /// w.r.t. frame i+1
    pub d_second: Matrix9,
    /// w.r.t. `[b_ω, b_a, θ, φ]`
    pub d_calib: Matrix98,
}

impl ImuResidual {
    /// Pre-multiplies residual and Jacobians by `L⁻¹` (`Σ = LLᵀ`).
    pub fn whitened(&self, sqrt_info: &Matrix9) -> Self {
        Self {
            residual: sqrt_info * self.residual,
            d_first: sqrt_info * self.d_first,
            d_second: sqrt_info * self.d_second,
            d_calib: sqrt_info * self.d_calib,
        }
    }
}

/// Unwhitened IMU residual between two consecutive motion states.
///
/// Bias sensitivities come from the preintegration bias Jacobians; the
/// gravity sensitivity is `∂r/∂g · ∂g/∂(θ, φ)`.
pub fn imu_residual_raw(
    first: &MotionState,
    second: &MotionState,
    calib: &CalibState,
    preint: &PreintegratedImu,
) -> ImuResidual {
    let dt = preint.dt;
    let g = calib.gravity();
    let ri = *first.rotation.matrix();
    let rj = *second.rotation.matrix();
    let ri_t = ri.transpose();
    let dr = *preint.delta_r.matrix();

    let r_rot = log_matrix(&(dr * rj.transpose() * ri));
    let u = second.velocity - first.velocity - g * dt;
    let w = second.position - first.position - first.velocity * dt - 0.5 * g * dt * dt;
    let r_vel = ri_t * u - preint.delta_v;
    let r_pos = ri_t * w - preint.delta_p;

    let mut residual = Vector9::zeros();
    residual.fixed_rows_mut::<3>(0).copy_from(&r_rot);
    residual.fixed_rows_mut::<3>(3).copy_from(&r_vel);
    residual.fixed_rows_mut::<3>(6).copy_from(&r_pos);

    let jl_inv = left_jacobian_inv(&r_rot);
    let rot_coupling = jl_inv * dr * rj.transpose();

    let mut d_first = Matrix9::zeros();
    d_first.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot_coupling);
    d_first.fixed_view_mut::<3, 3>(3, 0).copy_from(&(ri_t * skew(&u)));
    d_first.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-ri_t));
    d_first.fixed_view_mut::<3, 3>(6, 0).copy_from(&(ri_t * skew(&w)));
    d_first.fixed_view_mut::<3, 3>(6, 3).copy_from(&(-ri_t * dt));
    d_first.fixed_view_mut::<3, 3>(6, 6).copy_from(&(-ri_t));

    let mut d_second = Matrix9::zeros();
    d_second.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-rot_coupling));
    d_second.fixed_view_mut::<3, 3>(3, 3).copy_from(&ri_t);
    d_second.fixed_view_mut::<3, 3>(6, 6).copy_from(&ri_t);

    let bias_block = |jac: &Matrix93| -> SMatrix<f64, 9, 3> {
        let mut out = -jac;
        let rot = jl_inv * jac.fixed_view::<3, 3>(0, 0);
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        out
    };
    let dg = gravity_angle_jacobian(calib.gravity_norm, calib.gravity_theta, calib.gravity_phi);
    let mut d_calib = Matrix98::zeros();
    d_calib.fixed_view_mut::<9, 3>(0, 0).copy_from(&bias_block(&preint.jac_bias_gyro));
    d_calib.fixed_view_mut::<9, 3>(0, 3).copy_from(&bias_block(&preint.jac_bias_accel));
    d_calib.fixed_view_mut::<3, 2>(3, 6).copy_from(&(-ri_t * dg * dt));
    d_calib.fixed_view_mut::<3, 2>(6, 6).copy_from(&(-ri_t * dg * (0.5 * dt * dt)));

    ImuResidual { residual, d_first, d_second, d_calib }
}

/// Whitened IMU residual `L⁻¹·r` with `Σ_{i,i+1} = LLᵀ`.
pub fn imu_residual(
    first: &MotionState,
    second: &MotionState,
    calib: &CalibState,
    preint: &PreintegratedImu,
    sqrt_info: &Matrix9,
) -> ImuResidual {
    imu_residual_raw(first, second, calib, preint).whitened(sqrt_info)
}

/// `L⁻¹` for `Σ = LLᵀ`. Falls back to `Σ + 1e-12·I` when `Σ` is not
/// positive definite; the flag reports the fallback.
pub fn sqrt_information(cov: &Matrix9) -> (Matrix9, bool) {
    let invert = |m: Matrix9| Cholesky::new(m).and_then(|c| c.l().try_inverse());
    match invert(*cov) {
        Some(l_inv) if l_inv.iter().all(|x| x.is_finite()) => (l_inv, false),
        _ => {
            let reg = cov + Matrix9::identity() * 1e-12;
            (invert(reg).unwrap_or_else(|| Matrix9::identity() * 1e6), true)
        }
    }
}

/// IRLS weight of the Huber kernel for a residual of norm `r_norm`.
#[inline]
pub fn huber_weight(r_norm: f64, delta: f64) -> f64 {
    if r_norm <= delta {
        1.0
    } else {
        delta / r_norm
    }
}

/// Huber loss on a squared norm `s`: `s` inside `δ²`, `2δ√s − δ²` outside.
#[inline]
pub fn huber_cost(s: f64, delta: f64) -> f64 {
    if s <= delta * delta {
        s
    } else {
        2.0 * delta * s.sqrt() - delta * delta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imu::{integrate, ImuNoiseModel, ImuSample, IntegrationScheme};
    use crate::lie::Rotation;
    use nalgebra::Vector3;
    use crate::state::gravity_from_angles;

    #[test]
    fn huber_weights() {
        assert_eq!(huber_weight(0.5, 1.0), 1.0);
        assert_eq!(huber_weight(2.0, 1.0), 0.5);
        // dρ/ds equals the IRLS weight
        for &r in &[0.3, 1.0, 2.5] {
            let s = r * r;
            let h = 1e-7;
            let d = (huber_cost(s + h, 1.0) - huber_cost(s - h, 1.0)) / (2.0 * h);
            assert!((d - huber_weight(r, 1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn free_fall_has_zero_residual() {
        let theta = -std::f64::consts::FRAC_PI_2;
        let phi = std::f64::consts::FRAC_PI_2;
        let g = gravity_from_angles(9.81, theta, phi);
        let samples: Vec<_> = (0..=20).map(|k| ImuSample::new(k as f64 * 0.005, Vector3::zeros(), Vector3::zeros())).collect();
        let noise = ImuNoiseModel::new(1e-3, 1e-2).unwrap();
        let p = integrate(&samples, 0.0, 0.1, &Vector3::zeros(), &Vector3::zeros(), &noise, IntegrationScheme::Midpoint).unwrap();
        let r = Rotation::exp(&Vector3::new(0.3, -0.2, 0.1));
        let v0 = Vector3::new(0.5, 0.2, -0.1);
        let p0 = Vector3::new(1.0, 2.0, 3.0);
        let a = MotionState { rotation: r, velocity: v0, position: p0, t: 0.0 };
        let b = MotionState { rotation: r, velocity: v0 + g * 0.1, position: p0 + v0 * 0.1 + 0.5 * g * 0.01, t: 0.1 };
        let calib = CalibState { gravity_theta: theta, gravity_phi: phi, ..Default::default() };
        let res = imu_residual_raw(&a, &b, &calib, &p);
        assert!(res.residual.amax() < 1e-12, "{:?}", res.residual);
    }

    #[test]
    fn regularizes_singular_covariance() {
        let (l, flagged) = sqrt_information(&Matrix9::zeros());
        assert!(flagged);
        assert!(l.iter().all(|x| x.is_finite()));
        let (l, flagged) = sqrt_information(&(Matrix9::identity() * 4.0));
        assert!(!flagged);
        assert!((l - Matrix9::identity() * 0.5).amax() < 1e-15);
    }
}
