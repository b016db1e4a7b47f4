//! Initial guess for every optimization variable.
//!
//! 1. Camera-0 pose per frame from a planar homography, refined on the
//!    reprojection error.
//! 2. Time offset by cross-correlating camera and gyro rotation speeds.
//! 3. Extrinsic rotation by aligning camera and gyro angular velocities.
//! 4. Gyro bias, gravity and velocities from the IMU and the frame poses.

use nalgebra::{Matrix3, Matrix6, SMatrix, SymmetricEigen, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::board::BoardGeometry;
use crate::camera::{project_with_jacobian, CameraModel, CornerObservation};
use crate::error::{Error, Result};
use crate::imu::{integrate_nodes, window_nodes, ImuSample, IntegrationScheme};
use crate::lie::{skew, Pose, Rotation};
use crate::solver::DroppedFrame;
use crate::state::{angles_from_gravity, gravity_from_angles, CalibState, MotionState};

/// Corners required in camera 0 for a frame to be kept.
pub const MIN_CORNERS: usize = 6;
/// Rotation speed counted as excitation, rad/s.
pub const MIN_RATE: f64 = 0.2;
/// Cross-correlation search half-window, s.
pub const TIME_OFFSET_WINDOW: f64 = 0.1;
/// Distance of φ from a pole that triggers re-anchoring the world, rad.
pub const POLE_MARGIN: f64 = 0.1;

/// All detections with one camera timestamp.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameDetections {
    /// Camera clock, s.
    pub camera_time: f64,
    pub observations: Vec<CornerObservation>,
}

impl FrameDetections {
    pub fn camera(&self, cam: usize) -> impl Iterator<Item = &CornerObservation> {
        self.observations.iter().filter(move |o| o.camera_index == cam)
    }
}

/// Stages of the initializer that the run configuration may replace.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitOverrides {
    pub time_offset_s: Option<f64>,
    /// ᴵ_C T per camera.
    pub extrinsics: Option<Vec<Pose>>,
    pub bias_gyro: Option<Vector3<f64>>,
    pub bias_accel: Option<Vector3<f64>>,
    /// Board frame.
    pub gravity: Option<Vector3<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialGuess {
    /// One state per retained frame, in the world frame.
    pub frames: Vec<MotionState>,
    /// Index into the input frames for each retained frame.
    pub frame_indices: Vec<usize>,
    pub calib: CalibState,
    pub failed_frames: Vec<DroppedFrame>,
    /// Rotation applied to board coordinates to get world coordinates;
    /// identity unless gravity was near a pole of its parameterization.
    pub world_from_board: Rotation,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// Planar pose

/// Similarity that centres 2D points and scales their mean radius to √2.
fn normalizing_transform(pts: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let c = pts.iter().sum::<Vector2<f64>>() / n;
    let d = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if d > 0.0 { std::f64::consts::SQRT_2 / d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn apply(h: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    Vector2::new(q.x / q.z, q.y / q.z)
}

/// DLT homography mapping plane coordinates to normalized image points.
pub fn homography(plane: &[Vector2<f64>], image: &[Vector2<f64>]) -> Result<Matrix3<f64>> {
    if plane.len() != image.len() || plane.len() < 4 {
        return Err(Error::InvalidArgument("homography needs at least 4 correspondences".into()));
    }
    let tp = normalizing_transform(plane);
    let ti = normalizing_transform(image);
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (p, q) in plane.iter().zip(image) {
        let (p, q) = (apply(&tp, p), apply(&ti, q));
        let r0 = SMatrix::<f64, 1, 9>::from_row_slice(&[p.x, p.y, 1.0, 0.0, 0.0, 0.0, -q.x * p.x, -q.x * p.y, -q.x]);
        let r1 = SMatrix::<f64, 1, 9>::from_row_slice(&[0.0, 0.0, 0.0, p.x, p.y, 1.0, -q.y * p.x, -q.y * p.y, -q.y]);
        ata += r0.transpose() * r0 + r1.transpose() * r1;
    }
    let eig = SymmetricEigen::new(ata);
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let max = eig.eigenvalues[order[8]];
    if eig.eigenvalues[order[1]] <= 1e-10 * max {
        return Err(Error::DegenerateMotion("rank-deficient homography (collinear corners)".into()));
    }
    let h = eig.eigenvectors.column(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let ti_inv = ti.try_inverse().ok_or_else(|| Error::DegenerateMotion("singular normalization".into()))?;
    Ok(ti_inv * hn * tp)
}

/// Camera-from-board pose of a planar target from its homography.
pub fn pose_from_homography(h: &Matrix3<f64>) -> Pose {
    let (h1, h2, h3) = (h.column(0).into_owned(), h.column(1).into_owned(), h.column(2).into_owned());
    let mut lambda = 2.0 / (h1.norm() + h2.norm());
    if h3.z * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1 = h1 * lambda;
    let r2 = h2 * lambda;
    let r = Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]);
    Pose::new(Rotation::project(&r), h3 * lambda)
}

/// Gauss-Newton on the pixel reprojection error of a camera-from-world pose.
pub fn refine_pose(
    pose: &Pose,
    points: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    model: &CameraModel,
    iterations: usize,
) -> Result<Pose> {
    let mut pose = *pose;
    for _ in 0..iterations {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (p, uv) in points.iter().zip(pixels) {
            let rp = pose.rotation * *p;
            let (proj, jp) = project_with_jacobian(model, &(rp + pose.translation))?;
            let mut j = SMatrix::<f64, 2, 6>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(-jp * skew(&rp)));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&jp);
            h += j.transpose() * j;
            g += j.transpose() * (proj - uv);
        }
        let Some(step) = h.cholesky().map(|c| c.solve(&(-g))) else { break };
        pose = Pose::new(pose.rotation.retract(&step.fixed_rows::<3>(0).into_owned()), pose.translation + step.fixed_rows::<3>(3));
        if step.norm() < 1e-12 {
            break;
        }
    }
    Ok(pose)
}

/// Camera-from-board pose of one camera's corners in one frame.
pub fn planar_pose(
    observations: &[&CornerObservation],
    board: &BoardGeometry,
    model: &CameraModel,
) -> Result<Pose> {
    if observations.len() < MIN_CORNERS {
        return Err(Error::Validation(format!("{} corners, need {MIN_CORNERS}", observations.len())));
    }
    let mut points = Vec::with_capacity(observations.len());
    for o in observations {
        let p = board
            .corner(o.corner_id)
            .ok_or_else(|| Error::Validation(format!("unknown corner id {}", o.corner_id)))?;
        points.push(*p);
    }
    let plane: Vec<_> = points.iter().map(|p| Vector2::new(p.x, p.y)).collect();
    let pixels: Vec<_> = observations.iter().map(|o| o.pixel).collect();
    let image: Vec<_> = pixels.iter().map(|uv| model.normalize(uv)).collect();
    let pose = pose_from_homography(&homography(&plane, &image)?);
    refine_pose(&pose, &points, &pixels, model, 10)
}

/// ᵂ_{C0}T per frame, `None` where the frame could not be initialized.
pub fn init_frame_poses(
    frames: &[FrameDetections],
    board: &BoardGeometry,
    cameras: &[CameraModel],
) -> (Vec<Option<Pose>>, Vec<DroppedFrame>) {
    let mut dropped = Vec::new();
    let poses = frames
        .iter()
        .map(|f| {
            let obs: Vec<_> = f.camera(0).collect();
            match planar_pose(&obs, board, &cameras[0]) {
                Ok(p) => Some(p.inverse()),
                Err(e) => {
                    dropped.push(DroppedFrame { camera_time: f.camera_time, reason: e.to_string() });
                    None
                }
            }
        })
        .collect();
    (poses, dropped)
}

// ---------------------------------------------------------------------------
// Rotation rates

/// Mean camera angular velocity between two consecutive frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraRate {
    /// Camera clock, s.
    pub t_start: f64,
    pub t_end: f64,
    /// Camera frame, rad/s.
    pub omega: Vector3<f64>,
}

impl CameraRate {
    pub fn t_mid(&self) -> f64 {
        0.5 * (self.t_start + self.t_end)
    }
}

/// Finite-difference rates between consecutive initialized frames. Pairs
/// spanning a gap longer than 2.5 nominal periods are skipped.
pub fn camera_rates(times: &[f64], poses: &[Pose]) -> Vec<CameraRate> {
    let mut dts: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    dts.sort_by(f64::total_cmp);
    let nominal = dts.get(dts.len() / 2).copied().unwrap_or(f64::INFINITY);
    times
        .windows(2)
        .zip(poses.windows(2))
        .filter(|(t, _)| t[1] - t[0] <= 2.5 * nominal)
        .map(|(t, p)| CameraRate {
            t_start: t[0],
            t_end: t[1],
            omega: (p[0].rotation.inverse() * p[1].rotation).log() / (t[1] - t[0]),
        })
        .collect()
}

/// Mean gyro reading over `[t0, t1]` by trapezoidal integration of the
/// linearly interpolated stream.
pub fn mean_gyro(imu: &[ImuSample], t0: f64, t1: f64) -> Result<Vector3<f64>> {
    let nodes = window_nodes(imu, t0, t1)?;
    let mut acc = Vector3::zeros();
    for w in nodes.windows(2) {
        acc += 0.5 * (w[0].gyro + w[1].gyro) * (w[1].t - w[0].t);
    }
    Ok(acc / (t1 - t0))
}

/// Outcome of the cross-correlation search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeOffsetInit {
    pub time_offset: f64,
    /// Peak normalized correlation.
    pub correlation: f64,
    /// Excitation was insufficient and the offset defaulted to zero.
    pub fallback: bool,
}

fn interp(ts: &[f64], vs: &[f64], t: f64) -> Option<f64> {
    if ts.is_empty() || t < ts[0] || t > ts[ts.len() - 1] {
        return None;
    }
    let k = ts.partition_point(|&x| x <= t);
    if k == ts.len() {
        return Some(vs[ts.len() - 1]);
    }
    let (t0, t1) = (ts[k - 1], ts[k]);
    let a = (t - t0) / (t1 - t0);
    Some(vs[k - 1] * (1.0 - a) + vs[k] * a)
}

/// Lag `t_d` maximizing the normalized cross-correlation of camera and gyro
/// rotation speeds over `±TIME_OFFSET_WINDOW`, refined by a parabola through
/// the peak and its neighbours.
pub fn init_time_offset(imu: &[ImuSample], rates: &[CameraRate]) -> TimeOffsetInit {
    let fallback = TimeOffsetInit { time_offset: 0.0, correlation: 0.0, fallback: true };
    if rates.len() < 3 || imu.len() < 3 {
        return fallback;
    }
    let span = rates[rates.len() - 1].t_mid() - rates[0].t_mid();
    let peak = rates.iter().map(|r| r.omega.norm()).fold(0.0, f64::max);
    if span < 2.0 || peak < MIN_RATE {
        log::warn!("insufficient rotation for time-offset initialization; using 0");
        return fallback;
    }

    let h = (imu[imu.len() - 1].t - imu[0].t) / (imu.len() - 1) as f64;
    let cam_dt = rates.iter().map(|r| r.t_end - r.t_start).sum::<f64>() / rates.len() as f64;
    // Box-filter the gyro speed over one camera period so both signals see
    // the same smoothing.
    let width = ((cam_dt / h).round() as usize).max(1);
    let speed: Vec<f64> = imu.iter().map(|s| s.gyro.norm()).collect();
    let mut prefix = vec![0.0; speed.len() + 1];
    for (k, v) in speed.iter().enumerate() {
        prefix[k + 1] = prefix[k] + v;
    }
    let (mut imu_t, mut imu_v) = (Vec::new(), Vec::new());
    for k in 0..speed.len().saturating_sub(width) {
        imu_t.push(0.5 * (imu[k].t + imu[k + width].t));
        imu_v.push((prefix[k + width + 1] - prefix[k]) / (width + 1) as f64);
    }

    let cam_t: Vec<f64> = rates.iter().map(|r| r.t_mid()).collect();
    let cam_v: Vec<f64> = rates.iter().map(|r| r.omega.norm()).collect();
    let grid: Vec<f64> = {
        let n = (span / h).floor() as usize;
        (0..=n).map(|k| cam_t[0] + k as f64 * h).collect()
    };
    let cam_grid: Vec<f64> = grid.iter().map(|&t| interp(&cam_t, &cam_v, t).unwrap_or(0.0)).collect();

    let lags = (TIME_OFFSET_WINDOW / h).ceil() as i64;
    let ncc = |lag: i64| -> f64 {
        let (mut sa, mut sb, mut saa, mut sbb, mut sab, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for (t, a) in grid.iter().zip(&cam_grid) {
            if let Some(b) = interp(&imu_t, &imu_v, t + lag as f64 * h) {
                sa += a;
                sb += b;
                saa += a * a;
                sbb += b * b;
                sab += a * b;
                n += 1.0;
            }
        }
        if n < 2.0 {
            return f64::NEG_INFINITY;
        }
        let cov = sab - sa * sb / n;
        let va = saa - sa * sa / n;
        let vb = sbb - sb * sb / n;
        cov / (va * vb).sqrt().max(f64::MIN_POSITIVE)
    };
    let scores: Vec<f64> = (-lags..=lags).map(ncc).collect();
    let (best, &corr) = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty lag range");
    let mut offset = (best as i64 - lags) as f64 * h;
    if best > 0 && best + 1 < scores.len() {
        let (a, b, c) = (scores[best - 1], scores[best], scores[best + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            offset += 0.5 * (a - c) / denom * h;
        }
    }
    TimeOffsetInit { time_offset: offset, correlation: corr, fallback: false }
}

/// Rotation `ᴵ_C R` minimizing `Σ‖ω_I − R·ω_C‖²` over pairs with rotation
/// speed above [`MIN_RATE`].
pub fn init_extrinsic_rotation(imu: &[ImuSample], rates: &[CameraRate], time_offset: f64) -> Result<Rotation> {
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    let mut pairs = 0;
    for r in rates.iter().filter(|r| r.omega.norm() > MIN_RATE) {
        let Ok(w) = mean_gyro(imu, r.t_start + time_offset, r.t_end + time_offset) else { continue };
        h += w * r.omega.transpose();
        spread += r.omega * r.omega.transpose();
        pairs += 1;
    }
    if pairs < 50 {
        return Err(Error::DegenerateMotion(format!("{pairs} frame pairs rotate faster than {MIN_RATE} rad/s, need 50")));
    }
    let mut s = SymmetricEigen::new(spread).eigenvalues;
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if s[1] < 1e-3 * s[0] {
        return Err(Error::DegenerateMotion("rotation excites fewer than two axes".into()));
    }
    Ok(Rotation::project(&h))
}

// ---------------------------------------------------------------------------
// Gravity, biases and velocities

#[derive(Clone, Debug, PartialEq)]
pub struct GravityInit {
    pub gravity: Vector3<f64>,
    pub bias_gyro: Vector3<f64>,
    pub bias_accel: Vector3<f64>,
    pub velocities: Vec<Vector3<f64>>,
    pub warnings: Vec<String>,
}

/// `times` are on the IMU clock; `poses` are ᵂ_I T.
///
/// The gyro bias is the mean of `ω_I − ᴵ_C R·ω_C` over the slowest tenth of
/// the frame pairs. Gravity comes from frame triples: with `e_k = p_k − p_0
/// − R_0·Δp_{0k}` over spans `T_k`, eliminating the velocity gives
/// `g = 2(T₂e₁ − T₁e₂) / (T₁T₂(T₁ − T₂))`. Velocities are central differences.
pub fn init_gravity_biases_velocities(
    times: &[f64],
    poses: &[Pose],
    imu: &[ImuSample],
    r_ic: &Rotation,
    rates: &[CameraRate],
    time_offset: f64,
    gravity_norm: f64,
) -> GravityInit {
    let mut warnings = Vec::new();

    let mut residuals: Vec<(f64, Vector3<f64>)> = rates
        .iter()
        .filter_map(|r| {
            let w = mean_gyro(imu, r.t_start + time_offset, r.t_end + time_offset).ok()?;
            Some((w.norm(), w - *r_ic * r.omega))
        })
        .collect();
    residuals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let take = (residuals.len() / 10).max(1).min(residuals.len());
    let bias_gyro = if take == 0 {
        Vector3::zeros()
    } else {
        residuals[..take].iter().map(|r| r.1).sum::<Vector3<f64>>() / take as f64
    };

    let mut g_sum = Vector3::zeros();
    let mut count = 0usize;
    for k in 1..times.len().saturating_sub(1) {
        let (t0, t1, t2) = (times[k - 1], times[k], times[k + 1]);
        let delta = |t_end: f64| {
            window_nodes(imu, t0, t_end)
                .map(|n| integrate_nodes(n, &bias_gyro, &Vector3::zeros(), None, IntegrationScheme::Midpoint))
        };
        let (Ok(d1), Ok(d2)) = (delta(t1), delta(t2)) else { continue };
        let (s1, s2) = (t1 - t0, t2 - t0);
        let r0 = poses[k - 1].rotation;
        let e1 = poses[k].translation - poses[k - 1].translation - r0 * d1.delta_p;
        let e2 = poses[k + 1].translation - poses[k - 1].translation - r0 * d2.delta_p;
        g_sum += 2.0 * (s2 * e1 - s1 * e2) / (s1 * s2 * (s1 - s2));
        count += 1;
    }
    let gravity = if count == 0 || g_sum.norm() == 0.0 {
        warnings.push("no frame triple for gravity; assuming -z".into());
        Vector3::new(0.0, 0.0, -gravity_norm)
    } else {
        g_sum.normalize() * gravity_norm
    };

    let n = poses.len();
    let velocities = (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            if a == b {
                Vector3::zeros()
            } else {
                (poses[b].translation - poses[a].translation) / (times[b] - times[a])
            }
        })
        .collect();

    GravityInit { gravity, bias_gyro, bias_accel: Vector3::zeros(), velocities, warnings }
}

/// ᴵ_{C1}T from frames where both cameras see the board.
fn init_second_extrinsic(
    frames: &[FrameDetections],
    cam0_poses: &[Option<Pose>],
    board: &BoardGeometry,
    model: &CameraModel,
    ext0: &Pose,
) -> Result<Pose> {
    let mut rot = Matrix3::zeros();
    let mut trans = Vector3::zeros();
    let mut n = 0;
    for (f, p0) in frames.iter().zip(cam0_poses) {
        let Some(world_from_c0) = p0 else { continue };
        let obs: Vec<_> = f.camera(1).collect();
        let Ok(c1_from_world) = planar_pose(&obs, board, model) else { continue };
        let c0_to_c1 = world_from_c0.inverse() * c1_from_world.inverse();
        rot += c0_to_c1.rotation.matrix();
        trans += c0_to_c1.translation;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Validation("camera 1 never sees enough corners".into()));
    }
    let rel = Pose::new(Rotation::project(&rot), trans / n as f64);
    Ok(*ext0 * rel)
}

/// Full initializer. Frames whose camera-0 pose fails are dropped.
pub fn initialize(
    frames: &[FrameDetections],
    board: &BoardGeometry,
    cameras: &[CameraModel],
    imu: &[ImuSample],
    overrides: &InitOverrides,
    gravity_norm: f64,
) -> Result<InitialGuess> {
    let mut warnings = Vec::new();
    let (poses, failed_frames) = init_frame_poses(frames, board, cameras);
    let frame_indices: Vec<usize> = (0..frames.len()).filter(|&i| poses[i].is_some()).collect();
    if frame_indices.len() < 3 {
        return Err(Error::Validation(format!("only {} frames have a camera-0 pose", frame_indices.len())));
    }
    let times: Vec<f64> = frame_indices.iter().map(|&i| frames[i].camera_time).collect();
    let cam_poses: Vec<Pose> = frame_indices.iter().map(|&i| poses[i].expect("retained")).collect();
    let rates = camera_rates(&times, &cam_poses);

    let time_offset = match overrides.time_offset_s {
        Some(t) => t,
        None => {
            let t = init_time_offset(imu, &rates);
            if t.fallback {
                warnings.push("time offset initialized to 0: insufficient rotation".into());
            }
            t.time_offset
        }
    };

    let given = overrides.extrinsics.as_ref();
    if let Some(e) = given {
        if e.len() < cameras.len() {
            return Err(Error::Config(format!("{} extrinsic overrides for {} cameras", e.len(), cameras.len())));
        }
    }
    let ext0 = match given {
        Some(e) => e[0],
        None => Pose::new(init_extrinsic_rotation(imu, &rates, time_offset)?, Vector3::zeros()),
    };
    let ext1 = match (given, cameras.len()) {
        (Some(e), 2) => e[1],
        (None, 2) => init_second_extrinsic(frames, &poses, board, &cameras[1], &ext0)?,
        _ => Pose::identity(),
    };

    let imu_times: Vec<f64> = times.iter().map(|t| t + time_offset).collect();
    let mut imu_poses: Vec<Pose> = cam_poses.iter().map(|p| *p * ext0.inverse()).collect();
    let mut est = init_gravity_biases_velocities(
        &imu_times,
        &imu_poses,
        imu,
        &ext0.rotation,
        &rates,
        time_offset,
        gravity_norm,
    );
    warnings.append(&mut est.warnings);
    if let Some(b) = overrides.bias_gyro {
        est.bias_gyro = b;
    }
    if let Some(b) = overrides.bias_accel {
        est.bias_accel = b;
    }
    if let Some(g) = overrides.gravity {
        est.gravity = g.normalize() * gravity_norm;
    }

    // Keep φ away from the poles of the spherical parameterization.
    let mut world_from_board = Rotation::identity();
    let phi = angles_from_gravity(&est.gravity).y;
    if phi < POLE_MARGIN || phi > std::f64::consts::PI - POLE_MARGIN {
        world_from_board = Rotation::exp(&Vector3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0));
        warnings.push("gravity near a pole of (θ, φ); world frame re-anchored by 90° about x".into());
        let fix = Pose::new(world_from_board, Vector3::zeros());
        for p in &mut imu_poses {
            *p = fix * *p;
        }
        for v in &mut est.velocities {
            *v = world_from_board * *v;
        }
        est.gravity = world_from_board * est.gravity;
    }

    let mut calib = CalibState {
        extrinsic0: ext0,
        extrinsic1: ext1,
        time_offset,
        bias_gyro: est.bias_gyro,
        bias_accel: est.bias_accel,
        gravity_norm,
        ..CalibState::default()
    };
    calib.set_gravity_direction(&est.gravity);

    let states = imu_poses
        .iter()
        .zip(&est.velocities)
        .zip(&imu_times)
        .map(|((p, v), &t)| MotionState { rotation: p.rotation, velocity: *v, position: p.translation, t })
        .collect();

    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(InitialGuess { frames: states, frame_indices, calib, failed_frames, world_from_board, warnings })
}

/// Gravity in the board frame for a calibration expressed in a world frame
/// `world_from_board · board`.
pub fn gravity_in_board(calib: &CalibState, world_from_board: &Rotation) -> Vector3<f64> {
    world_from_board.inverse() * gravity_from_angles(calib.gravity_norm, calib.gravity_theta, calib.gravity_phi)
}
