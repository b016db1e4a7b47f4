//! The full-batch problem: motion chain, calibration block and the factors
//! that tie them together.

use std::borrow::Cow;

use nalgebra::{SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{ViewProjector, CameraModel};
use crate::error::{Error, Result};
use crate::imu::{sample_at, window_nodes, integrate_nodes, ImuNoiseModel, ImuSample, Matrix9, PreintegratedImu};
use crate::solver::factors::{huber_cost, huber_weight, imu_residual, sqrt_information};
use crate::solver::linear::BorderedSystem;
use crate::solver::SolverOptions;
use crate::state::{calib_index, state_dimension, CalibState, MotionState};

/// One board corner seen in one frame, with its world position resolved.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub camera: usize,
    pub corner_id: usize,
    pub point: Vector3<f64>,
    pub pixel: Vector2<f64>,
}

/// Measurements attached to one frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameData {
    /// Timestamp on the camera clock, seconds.
    pub camera_time: f64,
    pub observations: Vec<Observation>,
}

/// IMU factor between frames `i` and `i + 1`.
#[derive(Clone, Debug)]
pub struct ImuFactor {
    pub preint: PreintegratedImu,
    /// `L⁻¹` with `Σ = LLᵀ`.
    pub sqrt_info: Matrix9,
    /// Set when `Σ` had to be regularized.
    pub regularized: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedFrame {
    pub camera_time: f64,
    pub reason: String,
}

/// Cost breakdown at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Robust camera cost plus IMU cost.
    pub cost: f64,
    pub camera_cost: f64,
    pub imu_cost: f64,
    /// Σ‖r‖² of raw pixel residuals.
    pub reprojection_sq: f64,
    pub observations: usize,
    pub imu_factors: usize,
}

impl Evaluation {
    pub fn reprojection_rmse(&self) -> f64 {
        if self.observations == 0 {
            0.0
        } else {
            (self.reprojection_sq / self.observations as f64).sqrt()
        }
    }

    /// Per-component RMSE of the whitened IMU residuals.
    pub fn imu_rmse(&self) -> f64 {
        if self.imu_factors == 0 {
            0.0
        } else {
            (self.imu_cost / (9 * self.imu_factors) as f64).sqrt()
        }
    }
}

/// Gauss-Newton normal equations at one point. The right-hand side holds
/// `−g`.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub eval: Evaluation,
    pub system: BorderedSystem,
}

impl Linearization {
    /// `max |g|`
    pub fn gradient_norm(&self) -> f64 {
        let m = self.system.rhs_motion.iter().map(|v| v.amax()).fold(0.0, f64::max);
        m.max(self.system.rhs_calib.amax())
    }
}

#[derive(Clone, Debug)]
pub struct Problem {
    pub frames: Vec<MotionState>,
    pub frame_data: Vec<FrameData>,
    pub calib: CalibState,
    pub imu_factors: Vec<ImuFactor>,
    pub cameras: Vec<CameraModel>,
    pub imu: Vec<ImuSample>,
    pub noise: ImuNoiseModel,
    pub options: SolverOptions,
    pub dropped_frames: Vec<DroppedFrame>,
    pub dropped_observations: usize,
    /// Raw gyro interpolated at each frame time.
    frame_gyro: Vec<Vector3<f64>>,
}

type Matrix16 = SMatrix<f64, 16, 16>;
type Vector16 = SMatrix<f64, 16, 1>;

/// Normal equations of one view in the reduced `[δθ, δp]` columns.
#[derive(Clone, Copy, Debug, Default)]
struct ReducedNormal {
    /// Upper triangle, row-major.
    h: [f64; 21],
    g: [f64; 6],
}

impl ReducedNormal {
    #[inline]
    fn add(&mut self, j: &nalgebra::Matrix2x6<f64>, r: &Vector2<f64>, w: f64) {
        let mut k = 0;
        for a in 0..6 {
            let (x0, x1) = (w * j[(0, a)], w * j[(1, a)]);
            self.g[a] += x0 * r.x + x1 * r.y;
            for b in a..6 {
                self.h[k] += x0 * j[(0, b)] + x1 * j[(1, b)];
                k += 1;
            }
        }
    }

    fn expand(&self, t: &SMatrix<f64, 6, 16>) -> (Matrix16, Vector16) {
        let mut h = SMatrix::<f64, 6, 6>::zeros();
        let mut k = 0;
        for a in 0..6 {
            for b in a..6 {
                h[(a, b)] = self.h[k];
                h[(b, a)] = self.h[k];
                k += 1;
            }
        }
        let g = SMatrix::<f64, 6, 1>::from_column_slice(&self.g);
        (t.transpose() * h * t, t.transpose() * g)
    }
}

impl Problem {
    /// Frames must be in time order with `frames[i].t = camera_time +
    /// calib.time_offset`. Boundary frames outside the IMU stream are
    /// trimmed; observations behind their camera at the initial guess are
    /// dropped.
    pub fn new(
        frames: Vec<MotionState>,
        frame_data: Vec<FrameData>,
        calib: CalibState,
        cameras: Vec<CameraModel>,
        imu: Vec<ImuSample>,
        noise: ImuNoiseModel,
        options: SolverOptions,
    ) -> Result<Self> {
        if frames.len() != frame_data.len() {
            return Err(Error::InvalidArgument(format!(
                "{} motion states for {} frames",
                frames.len(),
                frame_data.len()
            )));
        }
        if cameras.is_empty() || cameras.len() > 2 {
            return Err(Error::Config(format!("expected 1 or 2 cameras, got {}", cameras.len())));
        }
        for (k, c) in cameras.iter().enumerate() {
            c.validate()?;
            if c.camera_index != k {
                return Err(Error::Config(format!("camera {k} has index {}", c.camera_index)));
            }
        }
        if frames.windows(2).any(|w| !(w[0].t < w[1].t)) {
            return Err(Error::Format("frame times must be strictly increasing".into()));
        }
        let mut p = Self {
            frames,
            frame_data,
            calib,
            imu_factors: vec![],
            cameras,
            imu,
            noise,
            options,
            dropped_frames: vec![],
            dropped_observations: 0,
            frame_gyro: vec![],
        };
        p.calib.gravity_norm = p.options.gravity_norm;
        p.drop_invalid_observations();
        p.rebuild_factors()?;
        Ok(p)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// `9·(M+1) + 21`
    pub fn dimension(&self) -> usize {
        state_dimension(self.frames.len())
    }

    pub fn num_observations(&self) -> usize {
        self.frame_data.iter().map(|f| f.observations.len()).sum()
    }

    pub fn is_stereo(&self) -> bool {
        self.cameras.len() == 2
    }

    pub fn regularized_factors(&self) -> usize {
        self.imu_factors.iter().filter(|f| f.regularized).count()
    }

    fn drop_invalid_observations(&mut self) {
        let calib = self.calib;
        for (state, data) in self.frames.iter().zip(&mut self.frame_data) {
            let before = data.observations.len();
            data.observations.retain(|o| {
                o.camera < self.cameras.len() && {
                    let world_to_cam = calib.extrinsic(o.camera).inverse() * state.pose().inverse();
                    let c = world_to_cam.transform_point(&o.point);
                    c.z > self.cameras[o.camera].z_min
                }
            });
            self.dropped_observations += before - data.observations.len();
        }
    }

    fn trim_to_coverage(&mut self) -> Result<()> {
        let (lo, hi) = match (self.imu.first(), self.imu.last()) {
            (Some(a), Some(b)) => (a.t, b.t),
            _ => return Err(Error::InvalidArgument("empty IMU stream".into())),
        };
        let drop = |p: &mut Self, i: usize| {
            let d = p.frame_data.remove(i);
            p.frames.remove(i);
            log::warn!("frame at camera time {:.6} s left the IMU stream", d.camera_time);
            p.dropped_frames.push(DroppedFrame {
                camera_time: d.camera_time,
                reason: "outside IMU coverage".into(),
            });
        };
        while self.frames.first().is_some_and(|f| f.t < lo) {
            drop(self, 0);
        }
        while self.frames.last().is_some_and(|f| f.t > hi) {
            let i = self.frames.len() - 1;
            drop(self, i);
        }
        if self.frames.len() < 2 {
            return Err(Error::InvalidArgument("fewer than two frames inside the IMU stream".into()));
        }
        Ok(())
    }

    /// Reintegrates every factor over the current frame windows with the
    /// current biases, covariance included.
    pub fn rebuild_factors(&mut self) -> Result<()> {
        self.trim_to_coverage()?;
        let (bg, ba) = (self.calib.bias_gyro, self.calib.bias_accel);
        let mut factors = Vec::with_capacity(self.frames.len() - 1);
        for w in self.frames.windows(2) {
            let nodes = window_nodes(&self.imu, w[0].t, w[1].t)?;
            let preint = integrate_nodes(nodes, &bg, &ba, Some(&self.noise), self.options.scheme);
            let (sqrt_info, regularized) = sqrt_information(&preint.cov);
            if regularized {
                log::warn!("IMU covariance at t = {:.6} s regularized", preint.t_start);
            }
            factors.push(ImuFactor { preint, sqrt_info, regularized });
        }
        self.imu_factors = factors;
        self.frame_gyro = self
            .frames
            .iter()
            .map(|f| sample_at(&self.imu, f.t).map(|s| s.gyro))
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Refreshes the factor means and bias Jacobians at the current biases,
    /// keeping their covariances.
    pub fn relinearize_biases(&mut self) {
        let (bg, ba) = (self.calib.bias_gyro, self.calib.bias_accel);
        for f in &mut self.imu_factors {
            if f.preint.bias_gyro != bg || f.preint.bias_accel != ba {
                f.preint = f.preint.reintegrate(&bg, &ba, None);
            }
        }
    }

    fn preint_at<'a>(&self, f: &'a ImuFactor, calib: &CalibState) -> Cow<'a, PreintegratedImu> {
        if f.preint.bias_gyro == calib.bias_gyro && f.preint.bias_accel == calib.bias_accel {
            Cow::Borrowed(&f.preint)
        } else {
            Cow::Owned(f.preint.reintegrate(&calib.bias_gyro, &calib.bias_accel, None))
        }
    }

    /// Bias-corrected gyro at frame `i`.
    pub fn frame_rate(&self, i: usize, calib: &CalibState) -> Vector3<f64> {
        self.frame_gyro[i] - calib.bias_gyro
    }

    fn fixed_calib_coordinates(&self) -> std::ops::Range<usize> {
        if self.is_stereo() {
            0..0
        } else {
            calib_index::EXTRINSIC1..calib_index::EXTRINSIC1 + 6
        }
    }

    /// Cost at an arbitrary point; factor windows are the current ones.
    pub fn evaluate(&self, frames: &[MotionState], calib: &CalibState) -> Result<Evaluation> {
        self.evaluate_impl(frames, calib, None)
    }

    /// Cost, gradient and Gauss-Newton Hessian at the current point.
    pub fn build_normal_equations(&self) -> Result<Linearization> {
        let mut system = BorderedSystem::zeros(self.frames.len());
        let eval = self.evaluate_impl(&self.frames, &self.calib, Some(&mut system))?;
        for v in &mut system.rhs_motion {
            *v = -*v;
        }
        system.rhs_calib = -system.rhs_calib;
        for k in self.fixed_calib_coordinates() {
            system.fix_calib(k);
        }
        Ok(Linearization { eval, system })
    }

    fn evaluate_impl(
        &self,
        frames: &[MotionState],
        calib: &CalibState,
        mut system: Option<&mut BorderedSystem>,
    ) -> Result<Evaluation> {
        use calib_index::*;
        let delta = self.options.huber_delta_px;
        let mut eval = Evaluation::default();

        for (i, (state, data)) in frames.iter().zip(&self.frame_data).enumerate() {
            let gyro = self.frame_rate(i, calib);
            let views: Vec<_> = self.cameras.iter().map(|c| ViewProjector::new(state, calib, c, &gyro)).collect();
            let mut local = [(Matrix16::zeros(), Vector16::zeros()); 2];
            let mut reduced = [ReducedNormal::default(); 2];
            for o in &data.observations {
                let inv_sigma = 1.0 / self.cameras[o.camera].pixel_sigma;
                let view = &views[o.camera];
                if system.is_none() {
                    let r = view.residual(&o.point, &o.pixel)?;
                    let s = r.norm_squared() * inv_sigma * inv_sigma;
                    eval.reprojection_sq += r.norm_squared();
                    eval.camera_cost += huber_cost(s, delta);
                    eval.observations += 1;
                    continue;
                }
                let (r, j) = view.evaluate_reduced(&o.point, &o.pixel)?;
                let rw = r * inv_sigma;
                let s = rw.norm_squared();
                eval.reprojection_sq += r.norm_squared();
                eval.camera_cost += huber_cost(s, delta);
                eval.observations += 1;
                let w = huber_weight(s.sqrt(), delta) * inv_sigma * inv_sigma;
                reduced[o.camera].add(&j, &r, w);
            }
            for (cam, acc) in reduced.iter().enumerate().take(self.cameras.len()) {
                local[cam] = acc.expand(&views[cam].column_map());
            }
            if let Some(sys) = system.as_deref_mut() {
                for (cam, (m, v)) in local.iter().enumerate().take(self.cameras.len()) {
                    let e = extrinsic(cam);
                    let mut d = sys.diag[i].fixed_view_mut::<9, 9>(0, 0);
                    d += m.fixed_view::<9, 9>(0, 0);
                    let mut b = sys.border[i].fixed_view_mut::<9, 6>(0, e);
                    b += m.fixed_view::<9, 6>(0, 9);
                    let mut b = sys.border[i].column_mut(TIME_OFFSET);
                    b += m.fixed_view::<9, 1>(0, 15);
                    let mut c = sys.calib.fixed_view_mut::<6, 6>(e, e);
                    c += m.fixed_view::<6, 6>(9, 9);
                    let mut c = sys.calib.fixed_view_mut::<6, 1>(e, TIME_OFFSET);
                    c += m.fixed_view::<6, 1>(9, 15);
                    let mut c = sys.calib.fixed_view_mut::<1, 6>(TIME_OFFSET, e);
                    c += m.fixed_view::<1, 6>(15, 9);
                    sys.calib[(TIME_OFFSET, TIME_OFFSET)] += m[(15, 15)];
                    let mut g = sys.rhs_motion[i].fixed_rows_mut::<9>(0);
                    g += v.fixed_rows::<9>(0);
                    let mut g = sys.rhs_calib.fixed_rows_mut::<6>(e);
                    g += v.fixed_rows::<6>(9);
                    sys.rhs_calib[TIME_OFFSET] += v[15];
                }
            }
        }

        for (i, f) in self.imu_factors.iter().enumerate() {
            let preint = self.preint_at(f, calib);
            let r = imu_residual(&frames[i], &frames[i + 1], calib, &preint, &f.sqrt_info);
            eval.imu_cost += r.residual.norm_squared();
            eval.imu_factors += 1;
            if let Some(sys) = system.as_deref_mut() {
                let (a, b, c) = (&r.d_first, &r.d_second, &r.d_calib);
                sys.diag[i].gemm_tr(1.0, a, a, 1.0);
                sys.diag[i + 1].gemm_tr(1.0, b, b, 1.0);
                sys.lower[i].gemm_tr(1.0, b, a, 1.0);
                let mut bi = sys.border[i].fixed_view_mut::<9, 8>(0, BIAS_GYRO);
                bi.gemm_tr(1.0, a, c, 1.0);
                let mut bj = sys.border[i + 1].fixed_view_mut::<9, 8>(0, BIAS_GYRO);
                bj.gemm_tr(1.0, b, c, 1.0);
                let mut cc = sys.calib.fixed_view_mut::<8, 8>(BIAS_GYRO, BIAS_GYRO);
                cc.gemm_tr(1.0, c, c, 1.0);
                sys.rhs_motion[i].gemm_tr(1.0, a, &r.residual, 1.0);
                sys.rhs_motion[i + 1].gemm_tr(1.0, b, &r.residual, 1.0);
                let mut gc = sys.rhs_calib.fixed_rows_mut::<8>(BIAS_GYRO);
                gc.gemm_tr(1.0, c, &r.residual, 1.0);
            }
        }

        eval.cost = eval.camera_cost + eval.imu_cost;
        if !eval.cost.is_finite() {
            return Err(Error::Convergence("non-finite cost".into()));
        }
        Ok(eval)
    }

    /// Applies a step in the bordered layout to the current point.
    pub fn retracted(&self, step: &crate::solver::linear::BorderedSolution) -> (Vec<MotionState>, CalibState) {
        let frames = self
            .frames
            .iter()
            .zip(&step.motion)
            .map(|(s, d)| s.retract(d.as_slice()))
            .collect();
        (frames, self.calib.retract(step.calib.as_slice()))
    }

    /// Folds the pending time-offset increment into the frame times and
    /// reintegrates every factor over the shifted windows. Motion states are
    /// carried over unchanged. Returns the folded increment.
    pub fn outer_time_shift(&mut self) -> Result<f64> {
        let step = self.calib.time_offset_step;
        if step == 0.0 {
            return Ok(0.0);
        }
        self.calib.time_offset += step;
        self.calib.time_offset_step = 0.0;
        for (s, d) in self.frames.iter_mut().zip(&self.frame_data) {
            s.t = d.camera_time + self.calib.time_offset;
        }
        self.rebuild_factors()?;
        Ok(step)
    }
}
