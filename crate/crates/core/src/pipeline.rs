//! Initialization followed by the batch solve.

use std::time::Instant;

use crate::board::BoardGeometry;
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::imu::{ImuNoiseModel, ImuSample};
use crate::init::{initialize, FrameDetections, InitOverrides, InitialGuess};
use crate::io::formats::frames_from_records;
use crate::lie::Pose;
use crate::synth::{Simulation, SynthConfig};
use crate::solver::{solve, CalibrationReport, FrameData, Observation, Problem, SolverOptions};

/// Everything a calibration run consumes, already in memory.
#[derive(Clone, Debug)]
pub struct CalibrationInput {
    /// Seconds on the IMU clock.
    pub imu: Vec<ImuSample>,
    /// Seconds on the camera clock, sharing the IMU origin.
    pub frames: Vec<FrameDetections>,
    pub board: BoardGeometry,
    pub cameras: Vec<CameraModel>,
    pub noise: ImuNoiseModel,
    pub options: SolverOptions,
    pub overrides: InitOverrides,
}

impl CalibrationInput {
    /// In-memory equivalent of writing a simulation to disk and loading it.
    pub fn from_simulation(sim: &Simulation, cfg: &SynthConfig, options: SolverOptions) -> Result<Self> {
        let board = BoardGeometry::from_config(&cfg.board)?;
        let origin = *sim.imu_ns.first().ok_or_else(|| Error::Validation("empty IMU stream".into()))?;
        let frames = frames_from_records(&sim.detections, &board, origin)?;
        let sigma = cfg.solver_pixel_sigma();
        let cameras = cfg
            .cameras
            .iter()
            .map(|c| CameraModel { pixel_sigma: sigma, ..*c })
            .collect();
        Ok(Self {
            imu: sim.imu.clone(),
            frames,
            board,
            cameras,
            noise: cfg.solver_noise(),
            options,
            overrides: InitOverrides::default(),
        })
    }
}

/// Keeps every `k`-th frame, starting with the first.
pub fn decimate(frames: &[FrameDetections], k: usize) -> Vec<FrameDetections> {
    frames.iter().step_by(k.max(1)).cloned().collect()
}

/// Builds the optimization problem around an initial guess.
pub fn build_problem(input: &CalibrationInput, guess: &InitialGuess) -> Result<Problem> {
    let mut frame_data = Vec::with_capacity(guess.frame_indices.len());
    for &i in &guess.frame_indices {
        let f = &input.frames[i];
        let mut observations = Vec::with_capacity(f.observations.len());
        for o in &f.observations {
            if o.camera_index >= input.cameras.len() {
                continue;
            }
            let p = input
                .board
                .corner(o.corner_id)
                .ok_or_else(|| Error::Validation(format!("unknown corner id {}", o.corner_id)))?;
            observations.push(Observation {
                camera: o.camera_index,
                corner_id: o.corner_id,
                point: guess.world_from_board * *p,
                pixel: o.pixel,
            });
        }
        observations.sort_by_key(|o| o.camera);
        frame_data.push(FrameData { camera_time: f.camera_time, observations });
    }
    let mut problem = Problem::new(
        guess.frames.clone(),
        frame_data,
        guess.calib,
        input.cameras.clone(),
        input.imu.clone(),
        input.noise,
        input.options.clone(),
    )?;
    problem.dropped_frames.splice(0..0, guess.failed_frames.iter().cloned());
    Ok(problem)
}

/// Initializes, solves and returns the report.
pub fn calibrate(input: &CalibrationInput) -> Result<CalibrationReport> {
    let start = Instant::now();
    let guess = initialize(
        &input.frames,
        &input.board,
        &input.cameras,
        &input.imu,
        &input.overrides,
        input.options.gravity_norm,
    )?;
    let problem = build_problem(input, &guess)?;
    let init_s = start.elapsed().as_secs_f64();
    let mut report = solve(problem)?;
    report.timings.initialization_s = init_s;
    report.world_from_board = Pose::new(guess.world_from_board, nalgebra::Vector3::zeros());
    report.warnings = guess.warnings;
    Ok(report)
}
