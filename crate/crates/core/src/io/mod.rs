//! On-disk formats, run configuration and reports.

pub mod config;
pub mod formats;
pub mod report;

pub use config::{CameraConfig, NoiseConfig, PathsConfig, RunConfig, SimulateConfig};
pub use formats::{
    frames_from_records, load_detections, load_imu_csv, ns_to_seconds, read_detection_records, read_imu_csv,
    write_detections, write_imu_csv, ImuStream,
};
pub use report::{emit_report, load_truth, score, summary, write_simulation, ResultFile, Score};
