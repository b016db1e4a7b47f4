//! Independent oracles shared by the integration suites and the acceptance
//! run: finite differences, a fine-step integrator, a dense least-squares
//! assembly and the synthetic benchmark driver.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use discal::board::BoardGeometry;
use discal::camera::{reprojection_residual, CameraModel, RadTan};
use discal::imu::{
    integrate_nodes, integration_step, propagate_covariance_step, Delta, ImuNoiseModel, ImuSample, IntegrationScheme,
    Matrix9,
};
use discal::io::formats::frames_from_records;
use discal::lie::{exp_matrix, log_matrix, Pose, Rotation};
use discal::pipeline::{calibrate, decimate, CalibrationInput};
use discal::solver::{
    huber_weight, imu_residual, imu_residual_raw, CalibrationReport, FrameData, Observation, Problem, SolverOptions,
};
use discal::state::{angles_from_gravity, calib_index, CalibState, MotionState};
use discal::synth::{analytic_trajectory, simulate, GroundTruth, SynthConfig, TrajectoryFrame, TrajectoryProfile};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

pub fn rand_rotation(rng: &mut ChaCha8Rng) -> Rotation {
    // Uniform axis, angle up to 3 rad.
    let axis = rand_vec(rng, 1.0).normalize();
    Rotation::exp(&(axis * rng.random_range(0.0..3.0)))
}

/// Relative Frobenius error of `analytic` against `numeric`, with a floor
/// so exactly-zero blocks compare as absolute.
pub fn rel_err<const R: usize, const C: usize>(analytic: &SMatrix<f64, R, C>, numeric: &SMatrix<f64, R, C>, floor: f64) -> f64 {
    (analytic - numeric).norm() / numeric.norm().max(floor)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FdStats {
    pub instances: usize,
    pub max_rel: f64,
}

impl FdStats {
    fn push(&mut self, e: f64) {
        self.max_rel = self.max_rel.max(e);
    }
}

/// Smooth body-frame readings: constants plus a few sinusoids.
#[derive(Clone, Debug)]
pub struct SmoothImu {
    gyro0: Vector3<f64>,
    accel0: Vector3<f64>,
    terms: Vec<(Vector3<f64>, Vector3<f64>, f64, f64)>,
}

/// Continuous body-frame gyro and specific-force signals.
pub trait ImuSignal {
    fn gyro(&self, t: f64) -> Vector3<f64>;
    fn accel(&self, t: f64) -> Vector3<f64>;

    fn sample(&self, t: f64) -> ImuSample {
        ImuSample::new(t, self.gyro(t), self.accel(t))
    }

    /// Samples on `[t0, t0 + n·h]`.
    fn samples(&self, t0: f64, h: f64, n: usize) -> Vec<ImuSample> {
        (0..=n).map(|k| self.sample(t0 + k as f64 * h)).collect()
    }
}

impl SmoothImu {
    pub fn random(rng: &mut ChaCha8Rng, gyro_scale: f64, accel_scale: f64, max_hz: f64) -> Self {
        let terms = (0..3)
            .map(|_| {
                (
                    rand_vec(rng, gyro_scale),
                    rand_vec(rng, accel_scale),
                    rng.random_range(0.1..max_hz),
                    rng.random_range(0.0..6.28),
                )
            })
            .collect();
        Self {
            gyro0: rand_vec(rng, gyro_scale),
            accel0: Vector3::new(0.0, 0.0, 9.81) + rand_vec(rng, accel_scale),
            terms,
        }
    }
}

impl ImuSignal for SmoothImu {
    fn gyro(&self, t: f64) -> Vector3<f64> {
        let mut w = self.gyro0;
        for (g, _, f, ph) in &self.terms {
            w += g * (2.0 * std::f64::consts::PI * f * t + ph).sin();
        }
        w
    }

    fn accel(&self, t: f64) -> Vector3<f64> {
        let mut a = self.accel0;
        for (_, acc, f, ph) in &self.terms {
            a += acc * (2.0 * std::f64::consts::PI * f * t + ph).cos();
        }
        a
    }
}

/// Exact readings of a synthetic trajectory.
pub struct TrajectoryImu {
    pub profile: TrajectoryProfile,
    pub frame: TrajectoryFrame,
}

impl TrajectoryImu {
    /// The default synthetic motion with random phases.
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let cfg = SynthConfig::default();
        let board = BoardGeometry::from_config(&cfg.board).unwrap();
        let mut profile = cfg.trajectory.clone();
        for k in 0..3 {
            profile.rotation_phase[k] = rng.random_range(0.0..6.28);
            profile.translation_phase[k] = rng.random_range(0.0..6.28);
        }
        Self { frame: cfg.trajectory_frame(&board), profile }
    }
}

impl ImuSignal for TrajectoryImu {
    fn gyro(&self, t: f64) -> Vector3<f64> {
        analytic_trajectory(t, &self.profile, &self.frame).gyro
    }

    fn accel(&self, t: f64) -> Vector3<f64> {
        analytic_trajectory(t, &self.profile, &self.frame).accel
    }
}

// ---------------------------------------------------------------------------
// Fine-step preintegration oracle

/// Classical RK4 on `Ṙ = R[ω]ₓ, v̇ = R·a, ṗ = v` from identity, with `R`
/// treated as nine independent numbers and projected back at the end.
pub fn rk4_preintegrate(imu: &impl ImuSignal, t0: f64, t1: f64, rate_hz: f64) -> (Matrix3<f64>, Vector3<f64>, Vector3<f64>) {
    let n = ((t1 - t0) * rate_hz).round() as usize;
    let h = (t1 - t0) / n as f64;
    let hat = |w: Vector3<f64>| Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0);
    let deriv = |t: f64, r: &Matrix3<f64>, v: &Vector3<f64>| (r * hat(imu.gyro(t)), r * imu.accel(t), *v);
    let (mut r, mut v, mut p) = (Matrix3::identity(), Vector3::zeros(), Vector3::zeros());
    for k in 0..n {
        let t = t0 + k as f64 * h;
        let (r1, v1, p1) = deriv(t, &r, &v);
        let (r2, v2, p2) = deriv(t + 0.5 * h, &(r + r1 * (0.5 * h)), &(v + v1 * (0.5 * h)));
        let (r3, v3, p3) = deriv(t + 0.5 * h, &(r + r2 * (0.5 * h)), &(v + v2 * (0.5 * h)));
        let (r4, v4, p4) = deriv(t + h, &(r + r3 * h), &(v + v3 * h));
        r += (r1 + 2.0 * r2 + 2.0 * r3 + r4) * (h / 6.0);
        v += (v1 + 2.0 * v2 + 2.0 * v3 + v4) * (h / 6.0);
        p += (p1 + 2.0 * p2 + 2.0 * p3 + p4) * (h / 6.0);
    }
    let svd = r.svd(true, true);
    (svd.u.unwrap() * svd.v_t.unwrap(), v, p)
}

#[derive(Clone, Copy, Debug)]
pub struct OracleStats {
    pub intervals: usize,
    pub midpoint_rot: f64,
    pub midpoint_pos: f64,
    /// RMS error at 200 Hz over RMS error at 400 Hz.
    pub midpoint_ratio_rot: f64,
    pub midpoint_ratio_pos: f64,
    pub euler_ratio_rot: f64,
    pub euler_ratio_pos: f64,
}

fn scheme_errors(imu: &impl ImuSignal, t0: f64, dur: f64, rate: f64, scheme: IntegrationScheme, oracle: &(Matrix3<f64>, Vector3<f64>, Vector3<f64>)) -> (f64, f64) {
    let n = (dur * rate).round() as usize;
    let nodes = imu.samples(t0, dur / n as f64, n);
    let p = integrate_nodes(nodes, &Vector3::zeros(), &Vector3::zeros(), None, scheme);
    let rot = log_matrix(&(oracle.0.transpose() * p.delta_r.matrix())).norm();
    (rot, (p.delta_p - oracle.2).norm())
}

/// 0.05 s intervals of the synthetic motion integrated from 200 Hz and
/// 400 Hz samples against a 10 kHz RK4 oracle.
pub fn preintegration_oracle(intervals: usize, seed: u64) -> OracleStats {
    let mut rng = rng(seed);
    let dur = 0.05;
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let mut e = vec![Vec::new(); 8];
    for _ in 0..intervals {
        let imu = TrajectoryImu::random(&mut rng);
        let t0 = rng.random_range(0.0..60.0);
        let oracle = rk4_preintegrate(&imu, t0, t0 + dur, 10_000.0);
        for (k, (scheme, rate)) in [
            (IntegrationScheme::Midpoint, 200.0),
            (IntegrationScheme::Midpoint, 400.0),
            (IntegrationScheme::Euler, 200.0),
            (IntegrationScheme::Euler, 400.0),
        ]
        .into_iter()
        .enumerate()
        {
            let (r, p) = scheme_errors(&imu, t0, dur, rate, scheme, &oracle);
            e[2 * k].push(r);
            e[2 * k + 1].push(p);
        }
    }
    let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    OracleStats {
        intervals,
        midpoint_rot: max(&e[0]),
        midpoint_pos: max(&e[1]),
        midpoint_ratio_rot: rms(&e[0]) / rms(&e[2]),
        midpoint_ratio_pos: rms(&e[1]) / rms(&e[3]),
        euler_ratio_rot: rms(&e[4]) / rms(&e[6]),
        euler_ratio_pos: rms(&e[5]) / rms(&e[7]),
    }
}

// ---------------------------------------------------------------------------
// Covariance propagation

#[derive(Clone, Copy, Debug, Default)]
pub struct CovStats {
    pub intervals: usize,
    pub steps: usize,
    pub max_asymmetry: f64,
    pub min_eigenvalue: f64,
    /// Largest relative trace decrease over one step; ≤ 0 when the trace
    /// never drops.
    pub max_trace_drop: f64,
}

pub fn covariance_properties(intervals: usize, seed: u64) -> CovStats {
    let mut rng = rng(seed);
    let mut s = CovStats { intervals, min_eigenvalue: f64::INFINITY, max_trace_drop: f64::NEG_INFINITY, ..Default::default() };
    for k in 0..intervals {
        let imu = SmoothImu::random(&mut rng, 1.5, 3.0, 3.0);
        let rate = [100.0, 200.0, 400.0][k % 3];
        let n = rng.random_range(1..40);
        let nodes = imu.samples(rng.random_range(0.0..10.0), 1.0 / rate, n);
        let noise = ImuNoiseModel::new(rng.random_range(1e-4..1e-2), rng.random_range(1e-3..1e-1)).unwrap();
        let scheme = if k % 2 == 0 { IntegrationScheme::Midpoint } else { IntegrationScheme::Euler };
        let bg = rand_vec(&mut rng, 0.01);
        let ba = rand_vec(&mut rng, 0.1);
        let mut delta = Delta::default();
        let mut cov = Matrix9::zeros();
        for w in nodes.windows(2) {
            let (next, step) = integration_step(&delta, &w[0], &w[1], &bg, &ba, scheme);
            let c = propagate_covariance_step(&cov, &step, &noise);
            s.max_asymmetry = s.max_asymmetry.max((c - c.transpose()).amax());
            s.min_eigenvalue = s.min_eigenvalue.min(c.symmetric_eigenvalues().min());
            let drop = (cov.trace() - c.trace()) / c.trace();
            s.max_trace_drop = s.max_trace_drop.max(drop);
            s.steps += 1;
            cov = c;
            delta = next;
        }
    }
    s
}

// ---------------------------------------------------------------------------
// Jacobian checks

/// Random consistent pair of motion states around a preintegrated interval.
fn imu_instance(rng: &mut ChaCha8Rng) -> (MotionState, MotionState, CalibState, discal::imu::PreintegratedImu) {
    let imu = SmoothImu::random(rng, 1.0, 2.0, 2.0);
    let rate = [100.0, 200.0, 400.0][rng.random_range(0..3)];
    let n = rng.random_range(2..25);
    let scheme = if rng.random_bool(0.5) { IntegrationScheme::Midpoint } else { IntegrationScheme::Euler };
    let mut calib = CalibState {
        bias_gyro: rand_vec(rng, 0.02),
        bias_accel: rand_vec(rng, 0.2),
        gravity_theta: rng.random_range(-3.0..3.0),
        gravity_phi: rng.random_range(0.3..2.8),
        ..CalibState::default()
    };
    calib.gravity_norm = 9.81;
    let noise = ImuNoiseModel::new(2e-3, 2e-2).unwrap();
    let nodes = imu.samples(rng.random_range(0.0..5.0), 1.0 / rate, n);
    let preint = integrate_nodes(nodes, &calib.bias_gyro, &calib.bias_accel, Some(&noise), scheme);
    let first = MotionState { rotation: rand_rotation(rng), velocity: rand_vec(rng, 2.0), position: rand_vec(rng, 3.0), t: 0.0 };
    let g = calib.gravity();
    let dt = preint.dt;
    let ri = *first.rotation.matrix();
    // Predicted second state, then perturbed.
    let rj = ri * preint.delta_r.matrix() * exp_matrix(&rand_vec(rng, 0.05));
    let second = MotionState {
        rotation: Rotation::project(&rj),
        velocity: first.velocity + g * dt + ri * preint.delta_v + rand_vec(rng, 0.05),
        position: first.position + first.velocity * dt + 0.5 * g * dt * dt + ri * preint.delta_p + rand_vec(rng, 0.05),
        t: dt,
    };
    (first, second, calib, preint)
}

/// Residual as a function of everything, reintegrating when the biases move.
fn imu_residual_true(
    first: &MotionState,
    second: &MotionState,
    calib: &CalibState,
    preint: &discal::imu::PreintegratedImu,
) -> SMatrix<f64, 9, 1> {
    let p = if calib.bias_gyro != preint.bias_gyro || calib.bias_accel != preint.bias_accel {
        preint.reintegrate(&calib.bias_gyro, &calib.bias_accel, None)
    } else {
        preint.clone()
    };
    imu_residual_raw(first, second, calib, &p).residual
}

pub fn fd_imu_residual(instances: usize, seed: u64) -> FdStats {
    let mut rng = rng(seed);
    let mut stats = FdStats { instances, ..Default::default() };
    let h = 1e-6;
    for _ in 0..instances {
        let (a, b, calib, preint) = imu_instance(&mut rng);
        let r = imu_residual_raw(&a, &b, &calib, &preint);
        let mut fa = SMatrix::<f64, 9, 9>::zeros();
        let mut fb = SMatrix::<f64, 9, 9>::zeros();
        for k in 0..9 {
            let mut d = [0.0; 9];
            d[k] = h;
            let plus = imu_residual_true(&a.retract(&d), &b, &calib, &preint);
            let plus_b = imu_residual_true(&a, &b.retract(&d), &calib, &preint);
            d[k] = -h;
            let minus = imu_residual_true(&a.retract(&d), &b, &calib, &preint);
            let minus_b = imu_residual_true(&a, &b.retract(&d), &calib, &preint);
            fa.set_column(k, &((plus - minus) / (2.0 * h)));
            fb.set_column(k, &((plus_b - minus_b) / (2.0 * h)));
        }
        let mut fc = SMatrix::<f64, 9, 8>::zeros();
        for k in 0..8 {
            let mut d = [0.0; 21];
            d[calib_index::BIAS_GYRO + k] = h;
            let plus = imu_residual_true(&a, &b, &calib.retract(&d), &preint);
            d[calib_index::BIAS_GYRO + k] = -h;
            let minus = imu_residual_true(&a, &b, &calib.retract(&d), &preint);
            fc.set_column(k, &((plus - minus) / (2.0 * h)));
        }
        stats.push(rel_err(&r.d_first, &fa, 1e-9));
        stats.push(rel_err(&r.d_second, &fb, 1e-9));
        stats.push(rel_err(&r.d_calib.fixed_columns::<3>(0).into_owned(), &fc.fixed_columns::<3>(0).into_owned(), 1e-9));
        stats.push(rel_err(&r.d_calib.fixed_columns::<3>(3).into_owned(), &fc.fixed_columns::<3>(3).into_owned(), 1e-9));
        stats.push(rel_err(&r.d_calib.fixed_columns::<2>(6).into_owned(), &fc.fixed_columns::<2>(6).into_owned(), 1e-9));
    }
    stats
}

pub fn random_camera(rng: &mut ChaCha8Rng, index: usize) -> CameraModel {
    let mut m = CameraModel::pinhole(index, rng.random_range(300.0..800.0), rng.random_range(300.0..800.0), 360.0, 240.0);
    if rng.random_bool(0.7) {
        m.distortion = Some(RadTan {
            k1: rng.random_range(-0.3..0.0),
            k2: rng.random_range(0.0..0.1),
            p1: rng.random_range(-1e-3..1e-3),
            p2: rng.random_range(-1e-3..1e-3),
        });
    }
    m
}

fn reprojection_instance(rng: &mut ChaCha8Rng) -> (MotionState, CalibState, Vector3<f64>, Vector2<f64>, CameraModel, Vector3<f64>) {
    let cam = rng.random_range(0..2);
    let model = random_camera(rng, cam);
    let mut calib = CalibState {
        time_offset_step: rng.random_range(-0.02..0.02),
        ..CalibState::default()
    };
    *calib.extrinsic_mut(cam) = Pose::new(rand_rotation(rng), rand_vec(rng, 0.1));
    let motion = MotionState { rotation: rand_rotation(rng), velocity: rand_vec(rng, 1.5), position: rand_vec(rng, 2.0), t: 0.0 };
    let gyro = rand_vec(rng, 1.5);
    // A point in front of the (extrapolated) camera.
    let rf = *motion.rotation.matrix() * exp_matrix(&(gyro * calib.time_offset_step));
    let pf = motion.position + motion.velocity * calib.time_offset_step;
    let world_from_cam = Pose::new(Rotation::from_matrix_unchecked(rf), pf) * *calib.extrinsic(cam);
    let pc = Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.3..0.3), rng.random_range(0.5..3.0));
    let point = world_from_cam.transform_point(&pc);
    let pixel = Vector2::new(rng.random_range(0.0..720.0), rng.random_range(0.0..480.0));
    (motion, calib, point, pixel, model, gyro)
}

pub fn fd_reprojection(instances: usize, seed: u64) -> FdStats {
    let mut rng = rng(seed);
    let mut stats = FdStats { instances, ..Default::default() };
    let h = 1e-6;
    for _ in 0..instances {
        let (motion, calib, point, pixel, model, gyro) = reprojection_instance(&mut rng);
        let res = |m: &MotionState, c: &CalibState| reprojection_residual(m, c, &point, &pixel, &model, &gyro).unwrap().residual;
        let ev = reprojection_residual(&motion, &calib, &point, &pixel, &model, &gyro).unwrap();
        let mut fm = SMatrix::<f64, 2, 9>::zeros();
        for k in 0..9 {
            let mut d = [0.0; 9];
            d[k] = h;
            let plus = res(&motion.retract(&d), &calib);
            d[k] = -h;
            let minus = res(&motion.retract(&d), &calib);
            fm.set_column(k, &((plus - minus) / (2.0 * h)));
        }
        let off = calib_index::extrinsic(model.camera_index);
        let mut fe = SMatrix::<f64, 2, 6>::zeros();
        for k in 0..6 {
            let mut d = [0.0; 21];
            d[off + k] = h;
            let plus = res(&motion, &calib.retract(&d));
            d[off + k] = -h;
            let minus = res(&motion, &calib.retract(&d));
            fe.set_column(k, &((plus - minus) / (2.0 * h)));
        }
        let mut d = [0.0; 21];
        d[calib_index::TIME_OFFSET] = h;
        let plus = res(&motion, &calib.retract(&d));
        d[calib_index::TIME_OFFSET] = -h;
        let minus = res(&motion, &calib.retract(&d));
        let ft: SMatrix<f64, 2, 1> = (plus - minus) / (2.0 * h);
        stats.push(rel_err(&ev.d_motion, &fm, 1e-9));
        stats.push(rel_err(&ev.d_extrinsic, &fe, 1e-9));
        stats.push(rel_err(&ev.d_time_offset, &ft, 1e-9));
    }
    stats
}

/// Time-offset column against actually moving the frame along a true
/// trajectory by `±h` and re-evaluating. Returns the largest relative gap.
pub fn td_against_true_shift(instances: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let cfg = SynthConfig::default();
    let board = BoardGeometry::from_config(&cfg.board).unwrap();
    let frame = cfg.trajectory_frame(&board);
    let calib = CalibState { extrinsic0: cfg.extrinsics[0], extrinsic1: cfg.extrinsics[1], ..CalibState::default() };
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let t = rng.random_range(1.0..59.0);
        let cam = rng.random_range(0..2);
        let model = cfg.cameras[cam];
        let state_at = |t: f64| {
            let k = analytic_trajectory(t, &cfg.trajectory, &frame);
            (MotionState { rotation: k.pose.rotation, velocity: k.velocity, position: k.pose.translation, t }, k.gyro)
        };
        let (m0, gyro) = state_at(t);
        let id = rng.random_range(0..board.num_corners());
        let point = *board.corner(id).unwrap();
        let pixel = Vector2::new(376.0, 240.0);
        let Ok(ev) = reprojection_residual(&m0, &calib, &point, &pixel, &model, &gyro) else { continue };
        let (mp, gp) = state_at(t + h);
        let (mm, gm) = state_at(t - h);
        let (Ok(rp), Ok(rm)) = (
            reprojection_residual(&mp, &calib, &point, &pixel, &model, &gp),
            reprojection_residual(&mm, &calib, &point, &pixel, &model, &gm),
        ) else {
            continue;
        };
        let fd = (rp.residual - rm.residual) / (2.0 * h);
        if fd.norm() < 1.0 {
            continue;
        }
        worst = worst.max((ev.d_time_offset - fd).norm() / fd.norm());
    }
    worst
}

pub fn fd_bias_recursion(instances: usize, seed: u64) -> FdStats {
    let mut rng = rng(seed);
    let mut stats = FdStats { instances, ..Default::default() };
    let h = 1e-6;
    for k in 0..instances {
        let imu = SmoothImu::random(&mut rng, 1.5, 3.0, 2.0);
        let rate = [100.0, 200.0, 400.0][k % 3];
        let n = rng.random_range(1..40);
        let nodes = imu.samples(rng.random_range(0.0..10.0), 1.0 / rate, n);
        let scheme = if k % 2 == 0 { IntegrationScheme::Midpoint } else { IntegrationScheme::Euler };
        let bg = rand_vec(&mut rng, 0.05);
        let ba = rand_vec(&mut rng, 0.3);
        let p0 = integrate_nodes(nodes.clone(), &bg, &ba, None, scheme);
        let mut fg = SMatrix::<f64, 9, 3>::zeros();
        let mut fa = SMatrix::<f64, 9, 3>::zeros();
        for j in 0..6 {
            let mut e = Vector3::zeros();
            e[j % 3] = h;
            let (pp, pm) = if j < 3 {
                (integrate_nodes(nodes.clone(), &(bg + e), &ba, None, scheme), integrate_nodes(nodes.clone(), &(bg - e), &ba, None, scheme))
            } else {
                (integrate_nodes(nodes.clone(), &bg, &(ba + e), None, scheme), integrate_nodes(nodes.clone(), &bg, &(ba - e), None, scheme))
            };
            // Left perturbation of the rotation.
            let dr = log_matrix(&(pp.delta_r.matrix() * pm.delta_r.matrix().transpose())) / (2.0 * h);
            let dv = (pp.delta_v - pm.delta_v) / (2.0 * h);
            let dp = (pp.delta_p - pm.delta_p) / (2.0 * h);
            let mut col = SMatrix::<f64, 9, 1>::zeros();
            col.fixed_rows_mut::<3>(0).copy_from(&dr);
            col.fixed_rows_mut::<3>(3).copy_from(&dv);
            col.fixed_rows_mut::<3>(6).copy_from(&dp);
            if j < 3 {
                fg.set_column(j, &col);
            } else {
                fa.set_column(j - 3, &col);
            }
        }
        stats.push(rel_err(&p0.jac_bias_gyro, &fg, 1e-9));
        stats.push(rel_err(&p0.jac_bias_accel, &fa, 1e-9));
    }
    stats
}

// ---------------------------------------------------------------------------
// Dense normal equations

/// A short synthetic problem around the true trajectory with perturbed
/// states and calibration, so residuals (some beyond the Huber threshold)
/// are non-zero.
pub fn small_problem(seed: u64, frames: usize, stereo: bool) -> Problem {
    let mut rng = rng(seed);
    let mut cfg = SynthConfig {
        duration_s: frames as f64 / 20.0 + 1e-3,
        pixel_noise: 1.5,
        time_offset_s: rng.random_range(-0.03..0.03),
        seed,
        ..SynthConfig::default()
    };
    if !stereo {
        cfg.cameras.truncate(1);
        cfg.extrinsics.truncate(1);
    }
    let sim = simulate(&cfg).unwrap();
    let board = BoardGeometry::from_config(&cfg.board).unwrap();
    let traj = cfg.trajectory_frame(&board);
    let origin = sim.imu_ns[0];
    let detections = frames_from_records(&sim.detections, &board, origin).unwrap();
    let mut calib = CalibState {
        extrinsic0: cfg.extrinsics[0].retract(&nalgebra::Vector6::from_fn(|_, _| rng.random_range(-0.01..0.01))),
        extrinsic1: if stereo { cfg.extrinsics[1] } else { Pose::identity() },
        time_offset: cfg.time_offset_s + rng.random_range(-0.002..0.002),
        time_offset_step: rng.random_range(-0.001..0.001),
        bias_gyro: cfg.bias_gyro + rand_vec(&mut rng, 1e-3),
        bias_accel: cfg.bias_accel + rand_vec(&mut rng, 1e-2),
        ..CalibState::default()
    };
    calib.set_gravity_direction(&(cfg.gravity + rand_vec(&mut rng, 0.05)));
    let mut states = Vec::new();
    let mut data = Vec::new();
    for det in &detections {
        let tau = det.camera_time - (cfg.epoch_ns - origin) as f64 * 1e-9;
        let k = analytic_trajectory(tau, &cfg.trajectory, &traj);
        states.push(MotionState {
            rotation: k.pose.rotation.retract(&rand_vec(&mut rng, 0.01)),
            velocity: k.velocity + rand_vec(&mut rng, 0.02),
            position: k.pose.translation + rand_vec(&mut rng, 0.01),
            t: det.camera_time + calib.time_offset,
        });
        let observations = det
            .observations
            .iter()
            .map(|o| Observation { camera: o.camera_index, corner_id: o.corner_id, point: *board.corner(o.corner_id).unwrap(), pixel: o.pixel })
            .collect();
        data.push(FrameData { camera_time: det.camera_time, observations });
    }
    let cameras = cfg.cameras.iter().map(|c| CameraModel { pixel_sigma: rng.random_range(0.5..2.0), ..*c }).collect();
    Problem::new(states, data, calib, cameras, sim.imu.clone(), cfg.solver_noise(), SolverOptions::default()).unwrap()
}

/// `(JᵀWJ, −JᵀWr)` assembled densely from the per-factor residual
/// functions, with IRLS weights on the reprojection rows and the unused
/// second extrinsic pinned for monocular problems.
pub fn dense_normal_equations(problem: &Problem) -> (DMatrix<f64>, DVector<f64>) {
    let n = problem.num_frames();
    let dim = problem.dimension();
    let off = 9 * n;
    let calib = &problem.calib;
    let delta = problem.options.huber_delta_px;
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for (i, (state, data)) in problem.frames.iter().zip(&problem.frame_data).enumerate() {
        let gyro = problem.frame_rate(i, calib);
        for o in &data.observations {
            let cam = &problem.cameras[o.camera];
            let ev = reprojection_residual(state, calib, &o.point, &o.pixel, cam, &gyro).unwrap();
            let rw = ev.residual / cam.pixel_sigma;
            let w = huber_weight(rw.norm(), delta);
            for r in 0..2 {
                let mut j = DVector::zeros(dim);
                for k in 0..9 {
                    j[9 * i + k] = ev.d_motion[(r, k)] / cam.pixel_sigma;
                }
                for k in 0..6 {
                    j[off + calib_index::extrinsic(o.camera) + k] = ev.d_extrinsic[(r, k)] / cam.pixel_sigma;
                }
                j[off + calib_index::TIME_OFFSET] = ev.d_time_offset[r] / cam.pixel_sigma;
                rows.push((j.insert_row(dim, rw[r]), w));
            }
        }
    }
    for (i, f) in problem.imu_factors.iter().enumerate() {
        let r = imu_residual(&problem.frames[i], &problem.frames[i + 1], calib, &f.preint, &f.sqrt_info);
        for row in 0..9 {
            let mut j = DVector::zeros(dim);
            for k in 0..9 {
                j[9 * i + k] = r.d_first[(row, k)];
                j[9 * (i + 1) + k] = r.d_second[(row, k)];
            }
            for k in 0..8 {
                j[off + calib_index::BIAS_GYRO + k] = r.d_calib[(row, k)];
            }
            rows.push((j.insert_row(dim, r.residual[row]), 1.0));
        }
    }
    let mut jac = DMatrix::zeros(rows.len(), dim);
    let mut res = DVector::zeros(rows.len());
    for (k, (row, w)) in rows.iter().enumerate() {
        let s = w.sqrt();
        for c in 0..dim {
            jac[(k, c)] = row[c] * s;
        }
        res[k] = row[dim] * s;
    }
    let mut h = jac.transpose() * &jac;
    let mut g = -(jac.transpose() * res);
    if !problem.is_stereo() {
        for k in calib_index::EXTRINSIC1..calib_index::EXTRINSIC1 + 6 {
            h.row_mut(off + k).fill(0.0);
            h.column_mut(off + k).fill(0.0);
            h[(off + k, off + k)] = 1.0;
            g[off + k] = 0.0;
        }
    }
    (h, g)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SolveComparison {
    pub problems: usize,
    pub max_rel: f64,
    pub max_matrix_rel: f64,
}

/// Bordered solve of the assembled system against a dense LU solve of the
/// independently assembled one, with LM damping on the diagonal.
pub fn sparse_vs_dense(problems: usize, seed: u64) -> SolveComparison {
    let mut rng = rng(seed);
    let mut out = SolveComparison { problems, ..Default::default() };
    for k in 0..problems {
        let frames = rng.random_range(2..=20);
        let stereo = k % 3 != 0;
        let problem = small_problem(seed * 1000 + k as u64, frames, stereo);
        let lambda = 10f64.powf(rng.random_range(-6.0..-1.0));
        let lin = problem.build_normal_equations().unwrap();
        let (mut h, g) = dense_normal_equations(&problem);
        let (hs, gs) = lin.system.to_dense();
        out.max_matrix_rel = out
            .max_matrix_rel
            .max((&hs - &h).amax() / h.amax())
            .max((&gs - &g).amax() / g.amax());
        let diag = h.diagonal();
        let mut sys = lin.system.clone();
        let damping = lin.system.diagonal().map(|d| d.max(1e-9) * lambda);
        sys.add_diagonal(&damping);
        for i in 0..h.nrows() {
            h[(i, i)] += diag[i].max(1e-9) * lambda;
        }
        let dense = h.lu().solve(&g).unwrap();
        let sol = sys.solve().unwrap();
        let mut flat = DVector::zeros(problem.dimension());
        for (i, m) in sol.motion.iter().enumerate() {
            flat.fixed_rows_mut::<9>(9 * i).copy_from(m);
        }
        flat.fixed_rows_mut::<21>(9 * problem.num_frames()).copy_from(&sol.calib);
        out.max_rel = out.max_rel.max((&flat - &dense).norm() / dense.norm());
    }
    out
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

pub const OFFSETS_MS: [f64; 11] = [-50.0, -40.0, -30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0, 40.0, 50.0];

/// One synthetic run of the benchmark suite: offset `k` gets its own noise
/// seed.
pub fn suite_config(k: usize) -> SynthConfig {
    SynthConfig { time_offset_s: OFFSETS_MS[k] * 1e-3, seed: 100 + k as u64, ..SynthConfig::default() }
}

pub struct RunOutcome {
    pub report: CalibrationReport,
    pub truth: GroundTruth,
    pub td_err_ms: f64,
    pub rot_err_deg: Vec<f64>,
    pub trans_err_cm: Vec<f64>,
    pub gravity_err_deg: f64,
    pub bias_gyro_err: f64,
    pub bias_accel_err: f64,
    /// Initialization plus batch solve, seconds.
    pub optimize_s: f64,
}

pub fn run_input(input: &CalibrationInput, truth: &GroundTruth) -> RunOutcome {
    let report = calibrate(input).unwrap();
    let c = &report.calib;
    let g_board = report.world_from_board.rotation.inverse() * c.gravity();
    let cams = if report.stereo { 2 } else { 1 };
    RunOutcome {
        td_err_ms: (c.total_time_offset() - truth.time_offset_s).abs() * 1e3,
        rot_err_deg: (0..cams).map(|k| c.extrinsic(k).rotation.angle_to(&truth.extrinsics[k].rotation).to_degrees()).collect(),
        trans_err_cm: (0..cams).map(|k| (c.extrinsic(k).translation - truth.extrinsics[k].translation).norm() * 100.0).collect(),
        gravity_err_deg: g_board.angle(&truth.gravity).to_degrees(),
        bias_gyro_err: (c.bias_gyro - truth.bias_gyro).norm(),
        bias_accel_err: (c.bias_accel - truth.bias_accel).norm(),
        optimize_s: report.timings.initialization_s + report.timings.total_solve_s,
        truth: truth.clone(),
        report,
    }
}

pub fn run_synthetic(cfg: &SynthConfig, scheme: IntegrationScheme, decimation: usize) -> RunOutcome {
    let sim = simulate(cfg).unwrap();
    let mut input = CalibrationInput::from_simulation(&sim, cfg, SolverOptions { scheme, ..SolverOptions::default() }).unwrap();
    input.frames = decimate(&input.frames, decimation);
    run_input(&input, &sim.truth)
}

pub fn rms(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Unused here; keeps the truth gravity helper reachable for suites that
/// compare spherical angles.
pub fn truth_angles(truth: &GroundTruth) -> Vector2<f64> {
    angles_from_gravity(&truth.gravity)
}
