//! Batch spatial-temporal calibration of a camera–IMU rig from IMU readings
//! and calibration-board corner detections.
//!
//! The estimate covers the camera extrinsics, the camera–IMU time offset,
//! constant IMU biases, the gravity direction and one IMU motion state per
//! frame. Frames are linked by preintegrated IMU factors and anchored by
//! reprojections of the known board corners.

pub mod board;
pub mod camera;
pub mod error;
pub mod imu;
pub mod init;
pub mod io;
pub mod lie;
pub mod pipeline;
pub mod solver;
pub mod state;
pub mod synth;

pub use error::{Error, Result};
