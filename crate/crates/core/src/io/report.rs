//! Result file, human summary, ground-truth sidecar and scoring.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::config::{CameraConfig, NoiseConfig, PathsConfig, RunConfig};
use crate::io::formats::{write_detections, write_imu_csv};
use crate::lie::Pose;
use crate::solver::{
    CalibDelta, CalibrationReport, DroppedFrame, IterationRecord, OuterRecord, SolverOptions, Status, Timings,
};
use crate::state::gravity_from_angles;
use crate::synth::{GroundTruth, Simulation, SynthConfig};

pub const RESULT_FILE: &str = "result.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const TRUTH_FILE: &str = "truth.json";
pub const IMU_FILE: &str = "imu.csv";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const RUN_CONFIG_FILE: &str = "calibrate.toml";

/// Contents of `result.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub status: Status,
    pub message: String,
    /// ᴵ_C T per camera, 4×4 row-major.
    pub extrinsics: Vec<Pose>,
    /// `t_I = t_C + t_d`, s.
    pub time_offset_s: f64,
    pub bias_gyro: Vector3<f64>,
    pub bias_accel: Vector3<f64>,
    /// Board frame, m/s².
    pub gravity: Vector3<f64>,
    /// Spherical angles of gravity in the optimization world frame.
    pub gravity_theta: f64,
    pub gravity_phi: f64,
    pub gravity_norm: f64,
    pub world_from_board: Pose,
    pub reprojection_rmse_px: f64,
    pub imu_rmse_whitened: f64,
    pub final_cost: f64,
    pub observations: usize,
    pub num_frames: usize,
    pub state_dimension: usize,
    pub dropped_frames: Vec<DroppedFrame>,
    pub dropped_observations: usize,
    pub regularized_imu_factors: usize,
    pub delta_from_initial: CalibDelta,
    pub warnings: Vec<String>,
    pub timings: Timings,
    pub outer_iterations: Vec<OuterRecord>,
    pub iterations: Vec<IterationRecord>,
}

impl ResultFile {
    pub fn from_report(r: &CalibrationReport) -> Self {
        let c = &r.calib;
        let g_world = gravity_from_angles(c.gravity_norm, c.gravity_theta, c.gravity_phi);
        let cams = if r.stereo { 2 } else { 1 };
        Self {
            status: r.status,
            message: r.message.clone(),
            extrinsics: (0..cams).map(|k| *c.extrinsic(k)).collect(),
            time_offset_s: c.total_time_offset(),
            bias_gyro: c.bias_gyro,
            bias_accel: c.bias_accel,
            gravity: r.world_from_board.rotation.inverse() * g_world,
            gravity_theta: c.gravity_theta,
            gravity_phi: c.gravity_phi,
            gravity_norm: c.gravity_norm,
            world_from_board: r.world_from_board,
            reprojection_rmse_px: r.final_eval.reprojection_rmse(),
            imu_rmse_whitened: r.final_eval.imu_rmse(),
            final_cost: r.final_eval.cost,
            observations: r.final_eval.observations,
            num_frames: r.num_frames,
            state_dimension: r.state_dimension,
            dropped_frames: r.dropped_frames.clone(),
            dropped_observations: r.dropped_observations,
            regularized_imu_factors: r.regularized_imu_factors,
            delta_from_initial: r.delta,
            warnings: r.warnings.clone(),
            timings: r.timings,
            outer_iterations: r.outer_iterations.clone(),
            iterations: r.iterations.clone(),
        }
    }

    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Plain-text digest of a result.
pub fn summary(r: &ResultFile) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "status: {:?} ({})", r.status, r.message);
    for (k, e) in r.extrinsics.iter().enumerate() {
        let m = e.to_homogeneous();
        let _ = writeln!(s, "T_I_C{k}:");
        for i in 0..4 {
            let _ = writeln!(s, "  [{:>12.8} {:>12.8} {:>12.8} {:>12.8}]", m[(i, 0)], m[(i, 1)], m[(i, 2)], m[(i, 3)]);
        }
    }
    let _ = writeln!(s, "time offset t_d: {:.6} ms", r.time_offset_s * 1e3);
    let v = |x: &Vector3<f64>| format!("[{:.6e}, {:.6e}, {:.6e}]", x.x, x.y, x.z);
    let _ = writeln!(s, "gyro bias: {} rad/s", v(&r.bias_gyro));
    let _ = writeln!(s, "accel bias: {} m/s^2", v(&r.bias_accel));
    let _ = writeln!(
        s,
        "gravity (board frame): {} m/s^2, theta {:.6} rad, phi {:.6} rad",
        v(&r.gravity),
        r.gravity_theta,
        r.gravity_phi
    );
    let _ = writeln!(s, "reprojection RMSE: {:.4} px over {} corners", r.reprojection_rmse_px, r.observations);
    let _ = writeln!(s, "IMU RMSE (whitened): {:.4}", r.imu_rmse_whitened);
    let _ = writeln!(s, "frames: {}, state dimension: {}", r.num_frames, r.state_dimension);
    let _ = writeln!(
        s,
        "dropped: {} frames, {} observations; regularized IMU factors: {}",
        r.dropped_frames.len(),
        r.dropped_observations,
        r.regularized_imu_factors
    );
    let _ = writeln!(
        s,
        "iterations: {} LM steps in {} passes",
        r.iterations.len(),
        r.outer_iterations.len()
    );
    let t = &r.timings;
    let _ = writeln!(
        s,
        "time: init {:.3} s, solve {:.3} s (linearize {:.3}, linear solve {:.3}, evaluate {:.3}, reintegrate {:.3})",
        t.initialization_s, t.total_solve_s, t.linearize_s, t.linear_solve_s, t.evaluate_s, t.reintegration_s
    );
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

/// Writes `result.json` and `summary.txt` into `dir`.
pub fn emit_report(report: &CalibrationReport, dir: impl AsRef<Path>) -> Result<ResultFile> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    let result = ResultFile::from_report(report);
    write_text(&dir.join(RESULT_FILE), &result.to_json()?)?;
    write_text(&dir.join(SUMMARY_FILE), &summary(&result))?;
    Ok(result)
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    read_json(path.as_ref())
}

/// Writes `imu.csv`, `detections.jsonl`, `truth.json` and a `calibrate.toml`
/// that points at them. Returns the config path.
pub fn write_simulation(sim: &Simulation, cfg: &SynthConfig, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    write_imu_csv(dir.join(IMU_FILE), &sim.imu_ns, &sim.imu)?;
    write_detections(dir.join(DETECTIONS_FILE), &sim.detections)?;
    let truth = serde_json::to_string_pretty(&sim.truth).map_err(|e| Error::Format(e.to_string()))?;
    write_text(&dir.join(TRUTH_FILE), &truth)?;
    let noise = cfg.solver_noise();
    let run = RunConfig {
        paths: PathsConfig {
            imu: IMU_FILE.into(),
            detections: DETECTIONS_FILE.into(),
            output_dir: "calibration".into(),
        },
        board: cfg.board,
        cameras: cfg.cameras.iter().map(|m| CameraConfig { pixel_sigma: None, ..CameraConfig::from_model(m) }).collect(),
        noise: NoiseConfig {
            gyro_sigma: Some(noise.sigma_gyro),
            accel_sigma: Some(noise.sigma_accel),
            pixel_sigma: cfg.solver_pixel_sigma(),
            ..NoiseConfig::default()
        },
        solver: SolverOptions::default(),
        init: Default::default(),
        gravity_norm: None,
        cam_rate_decimate: 1,
    };
    let path = dir.join(RUN_CONFIG_FILE);
    write_text(&path, &run.to_toml()?)?;
    Ok(path)
}

/// Errors of a result against ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub rotation_deg: Vec<f64>,
    pub translation_cm: Vec<f64>,
    pub time_offset_ms: f64,
    pub gravity_deg: f64,
    pub bias_gyro_error: f64,
    pub bias_accel_error: f64,
}

pub fn score(result: &ResultFile, truth: &GroundTruth) -> Result<Score> {
    if result.extrinsics.len() > truth.extrinsics.len() {
        return Err(Error::Validation(format!(
            "result has {} cameras, truth {}",
            result.extrinsics.len(),
            truth.extrinsics.len()
        )));
    }
    let pairs = result.extrinsics.iter().zip(&truth.extrinsics);
    Ok(Score {
        rotation_deg: pairs.clone().map(|(a, b)| a.rotation.angle_to(&b.rotation).to_degrees()).collect(),
        translation_cm: pairs.map(|(a, b)| (a.translation - b.translation).norm() * 100.0).collect(),
        time_offset_ms: (result.time_offset_s - truth.time_offset_s).abs() * 1e3,
        gravity_deg: result.gravity.angle(&truth.gravity).to_degrees(),
        bias_gyro_error: (result.bias_gyro - truth.bias_gyro).norm(),
        bias_accel_error: (result.bias_accel - truth.bias_accel).norm(),
    })
}

impl std::fmt::Display for Score {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, (r, t)) in self.rotation_deg.iter().zip(&self.translation_cm).enumerate() {
            writeln!(f, "camera {k}: rotation {r:.6} deg, translation {t:.6} cm")?;
        }
        writeln!(f, "time offset: {:.6} ms", self.time_offset_ms)?;
        writeln!(f, "gravity direction: {:.6} deg", self.gravity_deg)?;
        writeln!(f, "gyro bias: {:.3e} rad/s", self.bias_gyro_error)?;
        write!(f, "accel bias: {:.3e} m/s^2", self.bias_accel_error)
    }
}
