//! Synthetic rig: an analytic trajectory in front of the board, IMU and
//! corner measurements generated from it, and the ground truth.
//!
//! The IMU pose is `R(t) = R₀·Exp(θ(t))`, `p(t) = p₀ + s(t)` with
//! per-axis sinusoids `θ` and `s`. The body rate is `J_r(θ)·θ̇` and the
//! specific force is `R(t)ᵀ(p̈(t) − ᵂg)`.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::board::{BoardConfig, BoardGeometry};
use crate::camera::{project, CameraModel, RadTan};
use crate::error::{Error, Result};
use crate::imu::{ImuNoiseModel, ImuSample};
use crate::lie::{right_jacobian, Pose, Rotation};
use crate::state::{angles_from_gravity, GRAVITY_NORM};

/// Per-axis sinusoids for rotation (axis-angle, rad) and translation (m).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryProfile {
    pub rotation_amplitude: [f64; 3],
    pub rotation_frequency_hz: [f64; 3],
    pub rotation_phase: [f64; 3],
    pub translation_amplitude: [f64; 3],
    pub translation_frequency_hz: [f64; 3],
    pub translation_phase: [f64; 3],
    /// Distance from the board centre to camera 0 at rest, m.
    pub standoff_m: f64,
}

impl Default for TrajectoryProfile {
    fn default() -> Self {
        Self {
            rotation_amplitude: [0.28, 0.28, 0.35],
            rotation_frequency_hz: [0.37, 0.29, 0.43],
            rotation_phase: [0.0, 1.1, 2.3],
            translation_amplitude: [0.12, 0.1, 0.15],
            translation_frequency_hz: [0.31, 0.41, 0.23],
            translation_phase: [0.5, 1.9, 0.0],
            standoff_m: 1.0,
        }
    }
}

impl TrajectoryProfile {
    pub fn stationary() -> Self {
        Self { rotation_amplitude: [0.0; 3], translation_amplitude: [0.0; 3], ..Self::default() }
    }
}

/// Ground-truth kinematics at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KinematicSample {
    /// ᵂ_I T
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    /// Body angular rate, rad/s.
    pub gyro: Vector3<f64>,
    /// Specific force in the body frame, m/s².
    pub accel: Vector3<f64>,
}

/// Rest pose and gravity of the trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryFrame {
    pub rotation: Rotation,
    pub position: Vector3<f64>,
    pub gravity: Vector3<f64>,
}

fn sinusoid(a: f64, f: f64, phase: f64, t: f64) -> (f64, f64, f64) {
    let w = 2.0 * std::f64::consts::PI * f;
    let (s, c) = (w * t + phase).sin_cos();
    (a * s, a * w * c, -a * w * w * s)
}

/// Closed-form pose, velocity, acceleration, body rate and specific force.
pub fn analytic_trajectory(t: f64, profile: &TrajectoryProfile, frame: &TrajectoryFrame) -> KinematicSample {
    let mut theta = Vector3::zeros();
    let mut theta_dot = Vector3::zeros();
    let mut s = Vector3::zeros();
    let mut s_dot = Vector3::zeros();
    let mut s_ddot = Vector3::zeros();
    for k in 0..3 {
        let (x, dx, _) = sinusoid(profile.rotation_amplitude[k], profile.rotation_frequency_hz[k], profile.rotation_phase[k], t);
        theta[k] = x;
        theta_dot[k] = dx;
        let (x, dx, ddx) =
            sinusoid(profile.translation_amplitude[k], profile.translation_frequency_hz[k], profile.translation_phase[k], t);
        s[k] = x;
        s_dot[k] = dx;
        s_ddot[k] = ddx;
    }
    let rotation = frame.rotation * Rotation::exp(&theta);
    let gyro = right_jacobian(&theta) * theta_dot;
    let accel = rotation.inverse() * (s_ddot - frame.gravity);
    KinematicSample {
        pose: Pose::new(rotation, frame.position + s),
        velocity: s_dot,
        acceleration: s_ddot,
        gyro,
        accel,
    }
}

/// Simulation setup. Extrinsics are ᴵ_C T; one camera entry means a
/// monocular rig.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub imu_rate_hz: f64,
    pub cam_rate_hz: f64,
    /// Phase of the IMU sampling grid relative to the camera grid, s.
    pub imu_phase_s: f64,
    /// Camera-clock epoch written to disk, ns.
    pub epoch_ns: i64,
    pub trajectory: TrajectoryProfile,
    pub cameras: Vec<CameraModel>,
    pub extrinsics: Vec<Pose>,
    /// `t_I = t_C + t_d`, s.
    pub time_offset_s: f64,
    pub bias_gyro: Vector3<f64>,
    pub bias_accel: Vector3<f64>,
    /// Per-sample standard deviations.
    pub gyro_noise: f64,
    pub accel_noise: f64,
    pub pixel_noise: f64,
    /// Gravity in the board frame, m/s².
    pub gravity: Vector3<f64>,
    pub board: BoardConfig,
    pub seed: u64,
}

/// A pinhole camera shaped like the EuRoC rig's, without distortion.
pub fn default_camera(index: usize) -> CameraModel {
    let mut c = CameraModel::pinhole(index, 458.654, 457.296, 367.215, 248.375);
    c.width = Some(752);
    c.height = Some(480);
    c
}

/// EuRoC-like stereo extrinsics.
pub fn default_extrinsics() -> Vec<Pose> {
    let half_pi = std::f64::consts::FRAC_PI_2;
    vec![
        Pose::new(Rotation::exp(&Vector3::new(0.012, -0.021, half_pi + 0.015)), Vector3::new(-0.0216, -0.0647, 0.0098)),
        Pose::new(Rotation::exp(&Vector3::new(0.009, -0.017, half_pi + 0.011)), Vector3::new(-0.0198, 0.0454, 0.0079)),
    ]
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration_s: 60.0,
            imu_rate_hz: 200.0,
            cam_rate_hz: 20.0,
            imu_phase_s: 1.7e-3,
            epoch_ns: 1_403_636_580_000_000_000,
            trajectory: TrajectoryProfile::default(),
            cameras: vec![default_camera(0), default_camera(1)],
            extrinsics: default_extrinsics(),
            time_offset_s: 0.0,
            bias_gyro: Vector3::new(2.1e-3, -1.4e-3, 0.9e-3),
            bias_accel: Vector3::new(0.04, -0.025, 0.06),
            gyro_noise: 2.4e-3,
            accel_noise: 2.8e-2,
            pixel_noise: 0.5,
            gravity: Vector3::new(0.0, -GRAVITY_NORM, 0.0),
            board: BoardConfig::default(),
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// Zero noise and zero biases.
    pub fn noiseless(mut self) -> Self {
        self.bias_gyro = Vector3::zeros();
        self.bias_accel = Vector3::zeros();
        self.gyro_noise = 0.0;
        self.accel_noise = 0.0;
        self.pixel_noise = 0.0;
        self
    }

    /// IMU noise handed to the solver. Zero levels fall back to the defaults
    /// so the information matrices stay finite.
    pub fn solver_noise(&self) -> ImuNoiseModel {
        let d = Self::default();
        let pick = |x: f64, fallback: f64| if x > 0.0 { x } else { fallback };
        ImuNoiseModel { sigma_gyro: pick(self.gyro_noise, d.gyro_noise), sigma_accel: pick(self.accel_noise, d.accel_noise) }
    }

    /// Pixel σ handed to the solver.
    pub fn solver_pixel_sigma(&self) -> f64 {
        if self.pixel_noise > 0.0 { self.pixel_noise } else { Self::default().pixel_noise }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.imu_rate_hz > 0.0 && self.cam_rate_hz > 0.0) {
            return Err(Error::Config("duration and rates must be positive".into()));
        }
        if self.imu_rate_hz < 2.0 * self.cam_rate_hz {
            return Err(Error::Config("imu_rate_hz must be at least twice cam_rate_hz".into()));
        }
        if self.cameras.is_empty() || self.cameras.len() > 2 || self.cameras.len() != self.extrinsics.len() {
            return Err(Error::Config("need one or two cameras, each with an extrinsic".into()));
        }
        for c in &self.cameras {
            c.validate()?;
        }
        if self.gyro_noise < 0.0 || self.accel_noise < 0.0 || self.pixel_noise < 0.0 {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        Ok(())
    }

    /// Rest pose: camera 0 looks at the board centre from `standoff_m`,
    /// image rows pointing down the board's y axis.
    pub fn trajectory_frame(&self, board: &BoardGeometry) -> TrajectoryFrame {
        let r_wc = Rotation::from_matrix_unchecked(nalgebra::Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)));
        let ext = &self.extrinsics[0];
        let rotation = r_wc * ext.rotation.inverse();
        let cam_pos = board.center() + Vector3::new(0.0, 0.0, self.trajectory.standoff_m);
        TrajectoryFrame { rotation, position: cam_pos - rotation * ext.translation, gravity: self.gravity }
    }
}

/// Corners seen by one camera at one camera timestamp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub t_ns: i64,
    pub cam: usize,
    pub corners: Vec<CornerRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerRecord {
    pub id: usize,
    pub u: f64,
    pub v: f64,
}

impl CornerRecord {
    pub fn pixel(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }
}

/// Values a calibration should recover.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// ᴵ_{C0}T, ᴵ_{C1}T as 4×4 row-major.
    pub extrinsics: Vec<Pose>,
    pub time_offset_s: f64,
    pub bias_gyro: Vector3<f64>,
    pub bias_accel: Vector3<f64>,
    /// Board frame, m/s².
    pub gravity: Vector3<f64>,
    pub gravity_theta: f64,
    pub gravity_phi: f64,
}

/// IMU stamps are in ns on the IMU clock, detections on the camera clock.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub imu_ns: Vec<i64>,
    pub imu: Vec<ImuSample>,
    pub detections: Vec<DetectionRecord>,
    pub truth: GroundTruth,
}

const NS: f64 = 1e9;

/// Generates IMU readings with biases and noise, and noisy corner detections
/// of every corner that projects inside the image in front of the camera.
pub fn simulate(cfg: &SynthConfig) -> Result<Simulation> {
    cfg.validate()?;
    let board = BoardGeometry::from_config(&cfg.board)?;
    let frame = cfg.trajectory_frame(&board);

    let mut rng_gyro = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_gyro.set_stream(1);
    let mut rng_accel = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_accel.set_stream(2);
    let mut rng_pixel = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_pixel.set_stream(3);
    let gauss = |rng: &mut ChaCha8Rng, sigma: f64| -> Vector3<f64> {
        if sigma == 0.0 {
            return Vector3::zeros();
        }
        let n = Normal::new(0.0, sigma).expect("finite sigma");
        Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng))
    };

    // The IMU grid overhangs the camera span so shifted frames stay covered.
    let margin = 0.25;
    let period_ns = (NS / cfg.imu_rate_hz).round() as i64;
    let td_ns = (cfg.time_offset_s * NS).round() as i64;
    let phase_ns = (cfg.imu_phase_s * NS).round() as i64;
    let first_ns = cfg.epoch_ns + td_ns - (margin * NS).round() as i64 + phase_ns;
    let last_ns = cfg.epoch_ns + td_ns + ((cfg.duration_s + margin) * NS).round() as i64;
    let mut imu_ns = Vec::new();
    let mut imu = Vec::new();
    let mut stamp = first_ns;
    while stamp <= last_ns {
        // True time on the camera clock, relative to the epoch.
        let tau = (stamp - cfg.epoch_ns - td_ns) as f64 / NS;
        let k = analytic_trajectory(tau, &cfg.trajectory, &frame);
        let gyro = k.gyro + cfg.bias_gyro + gauss(&mut rng_gyro, cfg.gyro_noise);
        let accel = k.accel + cfg.bias_accel + gauss(&mut rng_accel, cfg.accel_noise);
        imu.push(ImuSample::new((stamp - first_ns) as f64 / NS, gyro, accel));
        imu_ns.push(stamp);
        stamp += period_ns;
    }

    let cam_period_ns = (NS / cfg.cam_rate_hz).round() as i64;
    let frames = (cfg.duration_s * cfg.cam_rate_hz).floor() as i64;
    let pixel = (cfg.pixel_noise > 0.0).then(|| Normal::new(0.0, cfg.pixel_noise).expect("finite sigma"));
    let mut detections = Vec::new();
    for f in 0..frames {
        let offset_ns = f * cam_period_ns;
        let k = analytic_trajectory(offset_ns as f64 / NS, &cfg.trajectory, &frame);
        for (cam, model) in cfg.cameras.iter().enumerate() {
            let cam_from_world = (k.pose * cfg.extrinsics[cam]).inverse();
            let mut corners = Vec::new();
            for (id, p) in board.corners() {
                let pc = cam_from_world.transform_point(p);
                if pc.z <= model.z_min.max(0.05) {
                    continue;
                }
                let Ok(mut uv) = project(model, &pc) else { continue };
                if let Some(n) = &pixel {
                    uv += Vector2::new(n.sample(&mut rng_pixel), n.sample(&mut rng_pixel));
                }
                if model.in_bounds(&uv) {
                    corners.push(CornerRecord { id, u: uv.x, v: uv.y });
                }
            }
            if !corners.is_empty() {
                detections.push(DetectionRecord { t_ns: cfg.epoch_ns + offset_ns, cam, corners });
            }
        }
    }
    if detections.is_empty() {
        return Err(Error::Validation("the board is never visible".into()));
    }

    let angles = angles_from_gravity(&cfg.gravity);
    Ok(Simulation {
        imu_ns,
        imu,
        detections,
        truth: GroundTruth {
            extrinsics: cfg.extrinsics.clone(),
            time_offset_s: cfg.time_offset_s,
            bias_gyro: cfg.bias_gyro,
            bias_accel: cfg.bias_accel,
            gravity: cfg.gravity,
            gravity_theta: angles.x,
            gravity_phi: angles.y,
        },
    })
}

/// Draws a radial-tangential model with small coefficients, for tests that
/// want distortion in the loop.
pub fn random_distortion(rng: &mut impl Rng) -> RadTan {
    RadTan {
        k1: rng.random_range(-0.3..-0.1),
        k2: rng.random_range(0.0..0.1),
        p1: rng.random_range(-1e-3..1e-3),
        p2: rng.random_range(-1e-3..1e-3),
    }
}
