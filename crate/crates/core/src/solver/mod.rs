//! Full-batch robust least squares over the motion chain and the
//! calibration block.
//!
//! The cost is the Huber-robustified sum of whitened reprojection residuals
//! plus the sum of whitened IMU residuals. Each LM pass also solves for a
//! time-offset increment; after the pass the increment is folded into every
//! frame time and the IMU factors are reintegrated over the shifted windows.

pub mod factors;
pub mod linear;
pub mod lm;
pub mod problem;

use serde::{Deserialize, Serialize};

use crate::imu::IntegrationScheme;
use crate::state::GRAVITY_NORM;

pub use factors::{huber_cost, huber_weight, imu_residual, imu_residual_raw, sqrt_information, ImuResidual};
pub use linear::{BorderedSolution, BorderedSystem};
pub use lm::{lm_iterate, solve, CalibDelta, CalibrationReport, IterationRecord, LmState, OuterRecord, Status, Timings};
pub use problem::{DroppedFrame, Evaluation, FrameData, ImuFactor, Linearization, Observation, Problem};

/// Solver block of the run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub scheme: IntegrationScheme,
    /// Huber threshold on the whitened reprojection residual.
    pub huber_delta_px: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// On `max |g|`.
    pub gradient_tolerance: f64,
    pub relative_cost_tolerance: f64,
    /// On the folded time-offset increment, s.
    pub time_offset_tolerance: f64,
    pub initial_lambda: f64,
    pub gravity_norm: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            scheme: IntegrationScheme::Midpoint,
            huber_delta_px: 1.0,
            max_inner: 50,
            max_outer: 10,
            gradient_tolerance: 1e-8,
            relative_cost_tolerance: 1e-10,
            time_offset_tolerance: 1e-6,
            initial_lambda: 1e-8,
            gravity_norm: GRAVITY_NORM,
        }
    }
}
