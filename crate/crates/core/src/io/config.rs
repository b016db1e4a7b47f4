//! TOML run configurations for `calibrate` and `simulate`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::board::{BoardConfig, BoardGeometry};
use crate::camera::{CameraModel, RadTan};
use crate::error::{Error, Result};
use crate::imu::{ImuNoiseModel, ImuSample};
use crate::init::InitOverrides;
use crate::io::formats::{load_detections, load_imu_csv};
use crate::pipeline::{decimate, CalibrationInput};
use crate::solver::SolverOptions;
use crate::synth::SynthConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub imu: PathBuf,
    pub detections: PathBuf,
    pub output_dir: PathBuf,
}

/// Intrinsics of one camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distortion: Option<RadTan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    /// Falls back to `noise.pixel_sigma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_sigma: Option<f64>,
}

impl CameraConfig {
    pub fn from_model(m: &CameraModel) -> Self {
        Self {
            fx: m.fx,
            fy: m.fy,
            cx: m.cx,
            cy: m.cy,
            distortion: m.distortion,
            width: m.width,
            height: m.height,
            pixel_sigma: Some(m.pixel_sigma),
        }
    }

    pub fn model(&self, index: usize, default_sigma: f64) -> CameraModel {
        let mut m = CameraModel::pinhole(index, self.fx, self.fy, self.cx, self.cy);
        m.distortion = self.distortion;
        m.width = self.width;
        m.height = self.height;
        m.pixel_sigma = self.pixel_sigma.unwrap_or(default_sigma);
        m
    }
}

/// Per-sample standard deviations, or continuous densities converted with
/// the IMU rate (`σ = σ_c·√rate`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gyro_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accel_sigma: Option<f64>,
    /// rad/s/√Hz
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gyro_density: Option<f64>,
    /// m/s²/√Hz
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accel_density: Option<f64>,
    /// Rate used with densities; estimated from the stream when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub imu_rate_hz: Option<f64>,
    pub pixel_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            gyro_sigma: None,
            accel_sigma: None,
            gyro_density: None,
            accel_density: None,
            imu_rate_hz: None,
            pixel_sigma: 1.0,
        }
    }
}

impl NoiseConfig {
    pub fn resolve(&self, samples: &[ImuSample]) -> Result<ImuNoiseModel> {
        match (self.gyro_sigma, self.accel_sigma, self.gyro_density, self.accel_density) {
            (Some(g), Some(a), None, None) => ImuNoiseModel::new(g, a),
            (None, None, Some(g), Some(a)) => {
                let rate = match self.imu_rate_hz {
                    Some(r) => r,
                    None if samples.len() >= 2 => {
                        (samples.len() - 1) as f64 / (samples[samples.len() - 1].t - samples[0].t)
                    }
                    None => return Err(Error::Config("cannot infer the IMU rate".into())),
                };
                ImuNoiseModel::from_densities(g, a, rate)
            }
            _ => Err(Error::Config(
                "noise needs either gyro_sigma and accel_sigma or gyro_density and accel_density".into(),
            )),
        }
    }
}

/// Input of `calibrate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub board: BoardConfig,
    pub cameras: Vec<CameraConfig>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub init: InitOverrides,
    /// Overrides `solver.gravity_norm`, m/s².
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravity_norm: Option<f64>,
    /// Keep every k-th frame.
    #[serde(default = "one")]
    pub cam_rate_decimate: usize,
}

fn one() -> usize {
    1
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Parses a run config; relative paths are resolved against the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::parse(&read_text(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.imu = resolve(base, &cfg.paths.imu);
        cfg.paths.detections = resolve(base, &cfg.paths.detections);
        cfg.paths.output_dir = resolve(base, &cfg.paths.output_dir);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() || self.cameras.len() > 2 {
            return Err(Error::Config(format!("expected 1 or 2 cameras, got {}", self.cameras.len())));
        }
        for (k, c) in self.cameras.iter().enumerate() {
            c.model(k, self.noise.pixel_sigma).validate()?;
        }
        if self.cam_rate_decimate == 0 {
            return Err(Error::Config("cam_rate_decimate must be at least 1".into()));
        }
        if !(self.noise.pixel_sigma > 0.0) {
            return Err(Error::Config("pixel_sigma must be positive".into()));
        }
        BoardGeometry::from_config(&self.board)?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn camera_models(&self) -> Vec<CameraModel> {
        self.cameras.iter().enumerate().map(|(k, c)| c.model(k, self.noise.pixel_sigma)).collect()
    }

    /// Loads the referenced files into a ready-to-run input.
    pub fn load_input(&self) -> Result<CalibrationInput> {
        let board = BoardGeometry::from_config(&self.board)?;
        let imu = load_imu_csv(&self.paths.imu)?;
        let frames = load_detections(&self.paths.detections, &board, imu.origin_ns)?;
        let cameras = self.camera_models();
        for f in &frames {
            for o in &f.observations {
                let cam = cameras.get(o.camera_index).ok_or_else(|| {
                    Error::Validation(format!("detections use camera {} but only {} configured", o.camera_index, cameras.len()))
                })?;
                if !cam.in_bounds(&o.pixel) {
                    return Err(Error::Validation(format!(
                        "camera {} corner {} at ({}, {}) is outside the image",
                        o.camera_index, o.corner_id, o.pixel.x, o.pixel.y
                    )));
                }
            }
        }
        let noise = self.noise.resolve(&imu.samples)?;
        let mut options = self.solver.clone();
        if let Some(g) = self.gravity_norm {
            options.gravity_norm = g;
        }
        Ok(CalibrationInput {
            imu: imu.samples,
            frames: decimate(&frames, self.cam_rate_decimate),
            board,
            cameras,
            noise,
            options,
            overrides: self.init.clone(),
        })
    }
}

/// Input of `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub synth: SynthConfig,
}

impl SimulateConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: Self = toml::from_str(&read_text(path)?).map_err(|e| Error::Config(e.to_string()))?;
        cfg.output_dir = resolve(path.parent().unwrap_or(Path::new(".")), &cfg.output_dir);
        cfg.synth.validate()?;
        Ok(cfg)
    }
}
