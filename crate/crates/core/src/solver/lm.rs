//! Levenberg-Marquardt inner passes and the outer time-shift loop.

use std::time::Instant;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::Pose;
use crate::solver::problem::{DroppedFrame, Evaluation, Linearization, Problem};
use crate::state::{CalibState, MotionState};

const LAMBDA_FLOOR: f64 = 1e-12;
const LAMBDA_CEIL: f64 = 1e12;

/// Damping state carried between iterations.
#[derive(Clone, Debug)]
pub struct LmState {
    pub lambda: f64,
    nu: f64,
    pub lin: Linearization,
    /// The point moved since `lin` was built.
    stale: bool,
}

impl LmState {
    pub fn new(problem: &Problem) -> Result<Self> {
        Self::with_lambda(problem, problem.options.initial_lambda)
    }

    pub fn with_lambda(problem: &Problem, lambda: f64) -> Result<Self> {
        Ok(Self { lambda, nu: 2.0, lin: problem.build_normal_equations()?, stale: false })
    }

    /// Rebuilds the normal equations if an accepted step made them stale.
    pub fn refresh(&mut self, problem: &Problem, timings: &mut Timings) -> Result<()> {
        if self.stale {
            let t = Instant::now();
            self.lin = problem.build_normal_equations()?;
            self.stale = false;
            timings.linearize_s += t.elapsed().as_secs_f64();
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub outer: usize,
    pub inner: usize,
    pub cost: f64,
    pub lambda: f64,
    pub step_norm: f64,
    pub accepted: bool,
}

/// Result of one damped step attempt.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmStep {
    pub accepted: bool,
    pub cost_before: f64,
    /// Cost at the trial point, `inf` when it could not be evaluated.
    pub cost_after: f64,
    /// Decrease predicted by the quadratic model.
    pub predicted: f64,
    pub lambda: f64,
    pub step_norm: f64,
}

/// Solves `(H + λ·diag H)δ = −g`, evaluates the trial point and accepts or
/// rejects it. Accepted steps move the problem.
pub fn lm_iterate(problem: &mut Problem, lm: &mut LmState, timings: &mut Timings) -> Result<LmStep> {
    lm.refresh(problem, timings)?;
    let cost_before = lm.lin.eval.cost;
    let lambda = lm.lambda;
    let diag = lm.lin.system.diagonal().map(|d| d.max(1e-9));
    let mut damped = lm.lin.system.clone();
    damped.add_diagonal(&(&diag * lambda));

    let t = Instant::now();
    let solved = damped.solve();
    timings.linear_solve_s += t.elapsed().as_secs_f64();

    let mut trial = None;
    let mut step_norm = 0.0;
    let mut predicted = 0.0;
    if let Ok(step) = solved {
        step_norm = step.norm();
        // m(0) − m(δ) = −gᵀδ + λ·δᵀDδ, with the stored rhs being −g.
        let flat = flatten(&step.motion, &step.calib);
        let rhs = flatten(&lm.lin.system.rhs_motion, &lm.lin.system.rhs_calib);
        predicted = rhs.dot(&flat) + lambda * flat.component_mul(&flat).dot(&diag);
        let (frames, calib) = problem.retracted(&step);
        let t = Instant::now();
        if let Ok(eval) = problem.evaluate(&frames, &calib) {
            trial = Some((frames, calib, eval));
        }
        timings.evaluate_s += t.elapsed().as_secs_f64();
    }

    let cost_after = trial.as_ref().map_or(f64::INFINITY, |t| t.2.cost);
    let gain = (cost_before - cost_after) / predicted;
    if let (Some((frames, calib, eval)), true) = (trial, cost_after < cost_before && predicted > 0.0) {
        lm.lin.eval = eval;
        problem.frames = frames;
        problem.calib = calib;
        let t = Instant::now();
        problem.relinearize_biases();
        lm.stale = true;
        timings.linearize_s += t.elapsed().as_secs_f64();
        lm.lambda = (lambda * (1.0 / 3.0f64).max(1.0 - (2.0 * gain - 1.0).powi(3))).max(LAMBDA_FLOOR);
        lm.nu = 2.0;
        return Ok(LmStep { accepted: true, cost_before, cost_after, predicted, lambda, step_norm });
    }

    lm.lambda = lambda * lm.nu;
    lm.nu *= 2.0;
    if lm.lambda > LAMBDA_CEIL {
        return Err(Error::Convergence(format!(
            "damping exceeded {LAMBDA_CEIL:e} without an accepted step at cost {cost_before:.6e}"
        )));
    }
    Ok(LmStep { accepted: false, cost_before, cost_after, predicted, lambda, step_norm })
}

fn flatten(motion: &[crate::solver::factors::Vector9], calib: &crate::solver::linear::Vector21) -> DVector<f64> {
    DVector::from_iterator(
        9 * motion.len() + 21,
        motion.iter().flat_map(|m| m.iter().copied()).chain(calib.iter().copied()),
    )
}

/// Why an inner pass stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerStop {
    Gradient,
    RelativeCost,
    /// Model decrease below rounding of the cost.
    NoProgress,
    MaxIterations,
}

/// Runs LM steps until one of the inner criteria holds.
pub fn inner_pass(
    problem: &mut Problem,
    lm: &mut LmState,
    outer: usize,
    log: &mut Vec<IterationRecord>,
    timings: &mut Timings,
) -> Result<InnerStop> {
    let opts = problem.options.clone();
    for inner in 0..opts.max_inner {
        lm.refresh(problem, timings)?;
        if lm.lin.gradient_norm() < opts.gradient_tolerance {
            return Ok(InnerStop::Gradient);
        }
        let step = lm_iterate(problem, lm, timings)?;
        log.push(IterationRecord {
            outer,
            inner,
            cost: if step.accepted { step.cost_after } else { step.cost_before },
            lambda: step.lambda,
            step_norm: step.step_norm,
            accepted: step.accepted,
        });
        let floor = 1e-14 * step.cost_before.max(f64::MIN_POSITIVE);
        if step.accepted {
            if (step.cost_before - step.cost_after) <= opts.relative_cost_tolerance * step.cost_before {
                return Ok(InnerStop::RelativeCost);
            }
        } else if step.predicted.abs() <= floor && step.cost_after.is_finite() {
            return Ok(InnerStop::NoProgress);
        }
    }
    Ok(InnerStop::MaxIterations)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub outer: usize,
    pub inner_iterations: usize,
    pub stop: InnerStop,
    pub cost: f64,
    /// Increment folded into the frame times at the end of the pass, s.
    pub time_offset_shift: f64,
    /// Cumulative offset after the pass, s.
    pub time_offset: f64,
}

/// Wall-clock seconds per phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub initialization_s: f64,
    pub reintegration_s: f64,
    pub linearize_s: f64,
    pub linear_solve_s: f64,
    pub evaluate_s: f64,
    pub total_solve_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIterations,
    Failed,
}

/// Change of each calibration variable from the initial guess.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibDelta {
    pub extrinsic_rotation_deg: [f64; 2],
    pub extrinsic_translation_m: [f64; 2],
    pub time_offset_s: f64,
    pub bias_gyro: Vector3<f64>,
    pub bias_accel: Vector3<f64>,
    pub gravity_direction_deg: f64,
}

impl CalibDelta {
    pub fn between(from: &CalibState, to: &CalibState) -> Self {
        let rot = |c| from.extrinsic(c).rotation.angle_to(&to.extrinsic(c).rotation).to_degrees();
        let tr = |c| (from.extrinsic(c).translation - to.extrinsic(c).translation).norm();
        Self {
            extrinsic_rotation_deg: [rot(0), rot(1)],
            extrinsic_translation_m: [tr(0), tr(1)],
            time_offset_s: to.total_time_offset() - from.total_time_offset(),
            bias_gyro: to.bias_gyro - from.bias_gyro,
            bias_accel: to.bias_accel - from.bias_accel,
            gravity_direction_deg: from.gravity().angle(&to.gravity()).to_degrees(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub status: Status,
    pub message: String,
    pub calib: CalibState,
    pub initial_calib: CalibState,
    pub delta: CalibDelta,
    pub final_eval: Evaluation,
    pub num_frames: usize,
    pub state_dimension: usize,
    pub stereo: bool,
    pub iterations: Vec<IterationRecord>,
    pub outer_iterations: Vec<OuterRecord>,
    pub dropped_frames: Vec<DroppedFrame>,
    pub dropped_observations: usize,
    pub regularized_imu_factors: usize,
    /// Rotation from board to world coordinates; identity unless the world
    /// was re-anchored at initialization.
    pub world_from_board: Pose,
    pub warnings: Vec<String>,
    pub timings: Timings,
    #[serde(skip)]
    pub frames: Vec<MotionState>,
}

impl CalibrationReport {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }

    /// Estimated `t_d`, seconds.
    pub fn time_offset(&self) -> f64 {
        self.calib.total_time_offset()
    }

    pub fn reprojection_rmse(&self) -> f64 {
        self.final_eval.reprojection_rmse()
    }
}

/// Alternates LM passes with folding the time offset into the frame times
/// until the folded increment drops below tolerance.
pub fn solve(mut problem: Problem) -> Result<CalibrationReport> {
    let start = Instant::now();
    let initial_calib = problem.calib;
    let mut timings = Timings::default();
    let mut log = Vec::new();
    let mut outer_log = Vec::new();
    let mut status = Status::MaxIterations;
    let mut message = String::from("outer iteration limit reached");

    let t = Instant::now();
    let mut lm = LmState::new(&problem)?;
    timings.linearize_s += t.elapsed().as_secs_f64();

    for outer in 0..problem.options.max_outer {
        let before = log.len();
        let stop = match inner_pass(&mut problem, &mut lm, outer, &mut log, &mut timings) {
            Ok(s) => s,
            Err(e) => {
                status = Status::Failed;
                message = e.to_string();
                log::error!("{message}");
                break;
            }
        };
        let shift = problem.calib.time_offset_step;
        let cost = lm.lin.eval.cost;
        let converged = shift.abs() < problem.options.time_offset_tolerance && stop != InnerStop::MaxIterations;
        if !converged {
            let t = Instant::now();
            problem.outer_time_shift()?;
            timings.reintegration_s += t.elapsed().as_secs_f64();
            let t = Instant::now();
            lm = LmState::with_lambda(&problem, lm.lambda)?;
            timings.linearize_s += t.elapsed().as_secs_f64();
        }
        log::debug!(
            "outer {outer}: {} steps, cost {:.6e}, shift {:.3e} s",
            log.len() - before,
            cost,
            shift
        );
        outer_log.push(OuterRecord {
            outer,
            inner_iterations: log.len() - before,
            stop,
            cost,
            time_offset_shift: if converged { 0.0 } else { shift },
            time_offset: problem.calib.total_time_offset(),
        });
        if converged {
            status = Status::Converged;
            message = format!("converged ({stop:?}) after {} outer passes", outer + 1);
            break;
        }
    }

    let final_eval = problem.evaluate(&problem.frames, &problem.calib)?;
    timings.total_solve_s = start.elapsed().as_secs_f64();
    Ok(CalibrationReport {
        status,
        message,
        delta: CalibDelta::between(&initial_calib, &problem.calib),
        calib: problem.calib,
        initial_calib,
        final_eval,
        num_frames: problem.num_frames(),
        state_dimension: problem.dimension(),
        stereo: problem.is_stereo(),
        iterations: log,
        outer_iterations: outer_log,
        dropped_frames: problem.dropped_frames.clone(),
        dropped_observations: problem.dropped_observations,
        regularized_imu_factors: problem.regularized_factors(),
        world_from_board: Pose::identity(),
        warnings: vec![],
        timings,
        frames: problem.frames,
    })
}
