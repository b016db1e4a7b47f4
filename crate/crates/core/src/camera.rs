//! Pinhole camera with optional radial-tangential distortion, and the
//! reprojection factor that links a frame's IMU pose, the camera extrinsics
//! and the time offset to a detected board corner.

use nalgebra::{Matrix2, Matrix2x3, Matrix2x6, Matrix3, SMatrix, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::skew;
use crate::state::{CalibState, MotionState};

/// `k1, k2` radial and `p1, p2` tangential coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RadTan {
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
}

impl RadTan {
    pub fn is_zero(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0 && self.p1 == 0.0 && self.p2 == 0.0
    }

    /// Distorts normalized coordinates and returns the 2×2 Jacobian.
    pub fn distort(&self, x: f64, y: f64) -> (Vector2<f64>, Matrix2<f64>) {
        let RadTan { k1, k2, p1, p2 } = *self;
        let r2 = x * x + y * y;
        let radial = 1.0 + k1 * r2 + k2 * r2 * r2;
        let xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
        // d(radial)/dx = dr·x with dr = 2k1 + 4k2 r²
        let dr = 2.0 * k1 + 4.0 * k2 * r2;
        let j = Matrix2::new(
            radial + dr * x * x + 2.0 * p1 * y + 6.0 * p2 * x,
            dr * x * y + 2.0 * p1 * x + 2.0 * p2 * y,
            dr * x * y + 2.0 * p1 * x + 2.0 * p2 * y,
            radial + dr * y * y + 6.0 * p1 * y + 2.0 * p2 * x,
        );
        (Vector2::new(xd, yd), j)
    }

    /// Inverts [`RadTan::distort`] by Gauss-Newton.
    pub fn undistort(&self, xd: f64, yd: f64) -> Vector2<f64> {
        let target = Vector2::new(xd, yd);
        let mut p = target;
        for _ in 0..20 {
            let (d, j) = self.distort(p.x, p.y);
            let err = d - target;
            if err.norm() < 1e-15 {
                break;
            }
            match j.try_inverse() {
                Some(ji) => p -= ji * err,
                None => break,
            }
        }
        p
    }
}

/// Fixed, pre-calibrated intrinsics of one camera.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// 0 = left / mono, 1 = right.
    pub camera_index: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub distortion: Option<RadTan>,
    /// Pixel noise std used to whiten residuals.
    #[serde(default = "default_pixel_sigma")]
    pub pixel_sigma: f64,
    #[serde(default)]
    pub width: Option<u32>,
    #[serde(default)]
    pub height: Option<u32>,
    /// Minimum depth accepted by the projection, metres.
    #[serde(default = "default_z_min")]
    pub z_min: f64,
}

fn default_pixel_sigma() -> f64 {
    1.0
}

fn default_z_min() -> f64 {
    1e-3
}

impl CameraModel {
    pub fn pinhole(camera_index: usize, fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            camera_index,
            fx,
            fy,
            cx,
            cy,
            distortion: None,
            pixel_sigma: 1.0,
            width: None,
            height: None,
            z_min: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config(format!("camera {}: focal lengths must be positive", self.camera_index)));
        }
        if !(self.pixel_sigma > 0.0) {
            return Err(Error::Config(format!("camera {}: pixel_sigma must be positive", self.camera_index)));
        }
        if self.camera_index > 1 {
            return Err(Error::Config(format!("camera index {} (only 0 and 1 supported)", self.camera_index)));
        }
        Ok(())
    }

    /// Whether a pixel lies inside the configured image bounds.
    pub fn in_bounds(&self, uv: &Vector2<f64>) -> bool {
        let ok_u = self.width.is_none_or(|w| uv.x >= 0.0 && uv.x <= w as f64 - 1.0);
        let ok_v = self.height.is_none_or(|h| uv.y >= 0.0 && uv.y <= h as f64 - 1.0);
        ok_u && ok_v
    }

    /// Pixel → undistorted normalized image coordinates.
    pub fn normalize(&self, uv: &Vector2<f64>) -> Vector2<f64> {
        let xd = (uv.x - self.cx) / self.fx;
        let yd = (uv.y - self.cy) / self.fy;
        match &self.distortion {
            Some(d) if !d.is_zero() => d.undistort(xd, yd),
            _ => Vector2::new(xd, yd),
        }
    }
}

/// Projects a camera-frame point to pixels.
pub fn project(model: &CameraModel, p_cam: &Vector3<f64>) -> Result<Vector2<f64>> {
    project_with_jacobian(model, p_cam).map(|(uv, _)| uv)
}

/// Projection and its 2×3 Jacobian with respect to the camera-frame point.
pub fn project_with_jacobian(model: &CameraModel, p: &Vector3<f64>) -> Result<(Vector2<f64>, Matrix2x3<f64>)> {
    if !(p.z > model.z_min) {
        return Err(Error::Cheirality { depth: p.z });
    }
    let iz = 1.0 / p.z;
    let (x, y) = (p.x * iz, p.y * iz);
    let dn = Matrix2x3::new(iz, 0.0, -x * iz, 0.0, iz, -y * iz);
    let f = Matrix2::new(model.fx, 0.0, 0.0, model.fy);
    match &model.distortion {
        Some(d) if !d.is_zero() => {
            let (xy, jd) = d.distort(x, y);
            let uv = Vector2::new(model.fx * xy.x + model.cx, model.fy * xy.y + model.cy);
            Ok((uv, f * jd * dn))
        }
        _ => {
            let uv = Vector2::new(model.fx * x + model.cx, model.fy * y + model.cy);
            Ok((uv, f * dn))
        }
    }
}

/// A detected board corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerObservation {
    pub frame_index: usize,
    pub camera_index: usize,
    pub corner_id: usize,
    pub pixel: Vector2<f64>,
}

/// World-frame pose rate `[ᵂ_I R·ω, ᵂv]` of a frame, given its
/// bias-corrected body angular velocity.
pub fn time_offset_jacobian(motion: &MotionState, gyro: &Vector3<f64>) -> Vector6<f64> {
    let w = motion.rotation * *gyro;
    Vector6::new(w.x, w.y, w.z, motion.velocity.x, motion.velocity.y, motion.velocity.z)
}

/// Reprojection residual (pixels, not whitened) and its Jacobians.
#[derive(Clone, Copy, Debug)]
pub struct ReprojectionEval {
    pub residual: Vector2<f64>,
    /// w.r.t. the frame's motion state `[δθ, δv, δp]`
    pub d_motion: SMatrix<f64, 2, 9>,
    /// w.r.t. the camera extrinsic `[δθ, δp]`
    pub d_extrinsic: SMatrix<f64, 2, 6>,
    /// w.r.t. the pending time-offset increment
    pub d_time_offset: Vector2<f64>,
}

/// Per-(frame, camera) quantities shared by every corner of that view: the
/// frame pose is evaluated at `t_i + δt_d` by extrapolating with the frame's
/// angular and linear velocity.
#[derive(Clone, Copy, Debug)]
pub struct ViewProjector<'a> {
    model: &'a CameraModel,
    /// ᶜ_W R
    cam_from_world: Matrix3<f64>,
    /// ᴵR_Cᵀ
    rc_t: Matrix3<f64>,
    /// ᵂ_I R at the extrapolated time, transposed
    rf_t: Matrix3<f64>,
    pf: Vector3<f64>,
    ext_translation: Vector3<f64>,
    dt: f64,
    rate: Vector6<f64>,
}

impl<'a> ViewProjector<'a> {
    pub fn new(motion: &MotionState, calib: &CalibState, model: &'a CameraModel, gyro: &Vector3<f64>) -> Self {
        let dt = calib.time_offset_step;
        let rf = if dt == 0.0 {
            *motion.rotation.matrix()
        } else {
            *motion.rotation.matrix() * crate::lie::exp_matrix(&(gyro * dt))
        };
        let ext = calib.extrinsic(model.camera_index);
        let rc_t = ext.rotation.matrix().transpose();
        let rf_t = rf.transpose();
        Self {
            model,
            cam_from_world: rc_t * rf_t,
            rc_t,
            rf_t,
            pf: motion.position + motion.velocity * dt,
            ext_translation: ext.translation,
            dt,
            rate: time_offset_jacobian(motion, gyro),
        }
    }

    /// Residual and its Jacobian with respect to `[δθ, δp]` of the frame
    /// only. Every other column is a fixed combination of these two within
    /// a view; see [`ViewProjector::column_map`].
    pub fn evaluate_reduced(&self, point_world: &Vector3<f64>, pixel: &Vector2<f64>) -> Result<(Vector2<f64>, Matrix2x6<f64>)> {
        let d = point_world - self.pf;
        let c = self.cam_from_world * d - self.rc_t * self.ext_translation;
        let (uv, jp) = project_with_jacobian(self.model, &c)?;
        let b = jp * self.cam_from_world;
        let mut j = Matrix2x6::zeros();
        for r in 0..2 {
            let br = Vector3::new(b[(r, 0)], b[(r, 1)], b[(r, 2)]);
            // bᵀ·[d]ₓ = (b × d)ᵀ
            let t = br.cross(&d);
            j[(r, 0)] = t.x;
            j[(r, 1)] = t.y;
            j[(r, 2)] = t.z;
            j[(r, 3)] = -br.x;
            j[(r, 4)] = -br.y;
            j[(r, 5)] = -br.z;
        }
        Ok((uv - pixel, j))
    }

    /// `T` with `J = J_reduced·T` for the full column layout
    /// `[δθ, δv, δp, extrinsic δθ, extrinsic δp, δt_d]`.
    pub fn column_map(&self) -> SMatrix<f64, 6, 16> {
        let rf = self.rf_t.transpose();
        let mut t = SMatrix::<f64, 6, 16>::zeros();
        t.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
        t.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * self.dt));
        t.fixed_view_mut::<3, 3>(3, 6).fill_with_identity();
        t.fixed_view_mut::<3, 3>(0, 9).copy_from(&rf);
        t.fixed_view_mut::<3, 3>(3, 9).copy_from(&(skew(&(rf * self.ext_translation)) * rf));
        t.fixed_view_mut::<3, 3>(3, 12).copy_from(&rf);
        t.fixed_view_mut::<3, 1>(0, 15).copy_from(&self.rate.fixed_rows::<3>(0));
        t.fixed_view_mut::<3, 1>(3, 15).copy_from(&self.rate.fixed_rows::<3>(3));
        t
    }

    /// Corner in the camera frame.
    pub fn to_camera(&self, point_world: &Vector3<f64>) -> Vector3<f64> {
        self.cam_from_world * (point_world - self.pf) - self.rc_t * self.ext_translation
    }

    pub fn residual(&self, point_world: &Vector3<f64>, pixel: &Vector2<f64>) -> Result<Vector2<f64>> {
        Ok(project(self.model, &self.to_camera(point_world))? - pixel)
    }

    pub fn evaluate(&self, point_world: &Vector3<f64>, pixel: &Vector2<f64>) -> Result<ReprojectionEval> {
        let d = point_world - self.pf;
        let qc = self.rf_t * d - self.ext_translation;
        let c = self.rc_t * qc;
        let (uv, jp) = project_with_jacobian(self.model, &c)?;

        let a = jp * self.rc_t;
        let b = jp * self.cam_from_world;
        let d_theta = b * skew(&d);
        let d_p = -b;
        let mut d_motion = SMatrix::<f64, 2, 9>::zeros();
        d_motion.fixed_view_mut::<2, 3>(0, 0).copy_from(&d_theta);
        d_motion.fixed_view_mut::<2, 3>(0, 3).copy_from(&(d_p * self.dt));
        d_motion.fixed_view_mut::<2, 3>(0, 6).copy_from(&d_p);

        let mut d_extrinsic = SMatrix::<f64, 2, 6>::zeros();
        d_extrinsic.fixed_view_mut::<2, 3>(0, 0).copy_from(&(a * skew(&qc)));
        d_extrinsic.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-a));

        let d_time_offset = d_theta * self.rate.fixed_rows::<3>(0) + d_p * self.rate.fixed_rows::<3>(3);
        Ok(ReprojectionEval { residual: uv - pixel, d_motion, d_extrinsic, d_time_offset })
    }
}

/// Residual of one corner with its Jacobians; see [`ViewProjector`].
pub fn reprojection_residual(
    motion: &MotionState,
    calib: &CalibState,
    point_world: &Vector3<f64>,
    pixel: &Vector2<f64>,
    model: &CameraModel,
    gyro: &Vector3<f64>,
) -> Result<ReprojectionEval> {
    ViewProjector::new(motion, calib, model, gyro).evaluate(point_world, pixel)
}
