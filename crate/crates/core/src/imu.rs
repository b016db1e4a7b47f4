//! On-manifold IMU preintegration.
//!
//! All samples between two camera frames are folded into one relative-motion
//! pseudo-measurement `(ΔR, Δv, Δp)`, starting from the identity and
//! advancing one sample pair at a time with either the Euler or the Midpoint
//! step. The same pass carries the 9×3 bias Jacobians and the 9×9
//! covariance, both ordered `[δR, δv, δp]` with `δR` a left perturbation
//! (`ΔR ← Exp(δR)·ΔR`).
//!
//! The samples that were integrated (including the interpolated endpoints)
//! are kept with the result, so a factor can be reintegrated bit-identically
//! for new biases.

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{exp_matrix, left_jacobian, skew, Rotation};

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Matrix93 = SMatrix<f64, 9, 3>;

/// One raw IMU reading.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    /// Seconds on the IMU clock.
    pub t: f64,
    /// rad/s
    pub gyro: Vector3<f64>,
    /// m/s²
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn new(t: f64, gyro: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self { t, gyro, accel }
    }
}

/// Discrete, per-sample white noise on the raw readings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuNoiseModel {
    /// rad/s, per sample
    pub sigma_gyro: f64,
    /// m/s², per sample
    pub sigma_accel: f64,
}

impl ImuNoiseModel {
    pub fn new(sigma_gyro: f64, sigma_accel: f64) -> Result<Self> {
        if !(sigma_gyro > 0.0 && sigma_accel > 0.0) || !sigma_gyro.is_finite() || !sigma_accel.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise stds must be positive, got gyro {sigma_gyro}, accel {sigma_accel}"
            )));
        }
        Ok(Self { sigma_gyro, sigma_accel })
    }

    /// Converts continuous-time noise densities (unit/√Hz) to per-sample
    /// stds at the given sample rate: `σ_d = σ_c·√rate`.
    pub fn from_densities(gyro_density: f64, accel_density: f64, rate_hz: f64) -> Result<Self> {
        let s = rate_hz.sqrt();
        Self::new(gyro_density * s, accel_density * s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IntegrationScheme {
    /// Holds the sample at the start of each sub-interval.
    Euler,
    /// Averages both ends of each sub-interval.
    #[default]
    Midpoint,
}

impl std::str::FromStr for IntegrationScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Self::Euler),
            "midpoint" => Ok(Self::Midpoint),
            other => Err(Error::Config(format!("unknown integration scheme `{other}`"))),
        }
    }
}

/// Running preintegrated quantities `Δ_{i,j}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Delta {
    pub rotation: Matrix3<f64>,
    pub velocity: Vector3<f64>,
    pub position: Vector3<f64>,
}

impl Default for Delta {
    fn default() -> Self {
        Self { rotation: Matrix3::identity(), velocity: Vector3::zeros(), position: Vector3::zeros() }
    }
}

/// Jacobians of one integration step with respect to its inputs.
#[derive(Clone, Copy, Debug)]
pub struct StepJacobians {
    /// ∂f/∂Δ_{i,j}
    pub wrt_delta: Matrix9,
    /// ∂f/∂ω̃_j
    pub wrt_gyro0: Matrix93,
    /// ∂f/∂ω̃_{j+1}
    pub wrt_gyro1: Matrix93,
    /// ∂f/∂ã_j
    pub wrt_accel0: Matrix93,
    /// ∂f/∂ã_{j+1}
    pub wrt_accel1: Matrix93,
}

impl StepJacobians {
    /// ∂f/∂b_ω. Biases enter only through the de-biased readings.
    pub fn wrt_bias_gyro(&self) -> Matrix93 {
        -(self.wrt_gyro0 + self.wrt_gyro1)
    }

    /// ∂f/∂b_a
    pub fn wrt_bias_accel(&self) -> Matrix93 {
        -(self.wrt_accel0 + self.wrt_accel1)
    }
}

fn stack(r: Matrix3<f64>, v: Matrix3<f64>, p: Matrix3<f64>) -> Matrix93 {
    let mut m = Matrix93::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&v);
    m.fixed_view_mut::<3, 3>(6, 0).copy_from(&p);
    m
}

/// One step of the preintegration recursion, `Δ_{i,j+1} = f(Δ_{i,j}, ω̃_j,
/// ω̃_{j+1}, ã_j, ã_{j+1}, b_ω, b_a)`, together with its Jacobians.
pub fn integration_step(
    delta: &Delta,
    s0: &ImuSample,
    s1: &ImuSample,
    bias_gyro: &Vector3<f64>,
    bias_accel: &Vector3<f64>,
    scheme: IntegrationScheme,
) -> (Delta, StepJacobians) {
    let h = s1.t - s0.t;
    let r = delta.rotation;
    let w0 = s0.gyro - bias_gyro;
    let a0 = s0.accel - bias_accel;
    let id = Matrix3::identity();
    let zero = Matrix3::zeros();

    let (next, da_dtheta, g_w0, g_w1, g_a0, g_a1) = match scheme {
        IntegrationScheme::Midpoint => {
            let w1 = s1.gyro - bias_gyro;
            let a1 = s1.accel - bias_accel;
            let phi = 0.5 * (w0 + w1) * h;
            let r1 = r * exp_matrix(&phi);
            let ra0 = r * a0;
            let ra1 = r1 * a1;
            let a_bar = 0.5 * (ra0 + ra1);
            let next = Delta {
                rotation: r1,
                velocity: delta.velocity + a_bar * h,
                position: delta.position + delta.velocity * h + 0.5 * a_bar * h * h,
            };
            // ∂θ'/∂ω̄ and ∂ā/∂ω̄; each reading contributes half of ω̄.
            let dtheta_dw = r * left_jacobian(&phi) * h;
            let da_dw = -0.5 * skew(&ra1) * dtheta_dw;
            let da_dtheta = -0.5 * (skew(&ra0) + skew(&ra1));
            let g_w = stack(0.5 * dtheta_dw, 0.5 * h * da_dw, 0.25 * h * h * da_dw);
            let g_a0 = stack(zero, 0.5 * h * r, 0.25 * h * h * r);
            let g_a1 = stack(zero, 0.5 * h * r1, 0.25 * h * h * r1);
            (next, da_dtheta, g_w, g_w, g_a0, g_a1)
        }
        IntegrationScheme::Euler => {
            let phi = w0 * h;
            let ra0 = r * a0;
            let next = Delta {
                rotation: r * exp_matrix(&phi),
                velocity: delta.velocity + ra0 * h,
                position: delta.position + delta.velocity * h + 0.5 * ra0 * h * h,
            };
            let dtheta_dw = r * left_jacobian(&phi) * h;
            let g_w0 = stack(dtheta_dw, zero, zero);
            let g_a0 = stack(zero, h * r, 0.5 * h * h * r);
            (next, -skew(&ra0), g_w0, Matrix93::zeros(), g_a0, Matrix93::zeros())
        }
    };

    let mut f = Matrix9::identity();
    f.fixed_view_mut::<3, 3>(3, 0).copy_from(&(h * da_dtheta));
    f.fixed_view_mut::<3, 3>(6, 0).copy_from(&(0.5 * h * h * da_dtheta));
    f.fixed_view_mut::<3, 3>(6, 3).copy_from(&(h * id));

    (
        next,
        StepJacobians { wrt_delta: f, wrt_gyro0: g_w0, wrt_gyro1: g_w1, wrt_accel0: g_a0, wrt_accel1: g_a1 },
    )
}

/// Bias-Jacobian recursion `J_{j+1} = (∂f/∂Δ)·J_j + ∂f/∂b`, for both biases.
pub fn bias_jacobian_step(
    jac_gyro: &Matrix93,
    jac_accel: &Matrix93,
    step: &StepJacobians,
) -> (Matrix93, Matrix93) {
    (
        step.wrt_delta * jac_gyro + step.wrt_bias_gyro(),
        step.wrt_delta * jac_accel + step.wrt_bias_accel(),
    )
}

/// Covariance recursion: the propagated previous covariance plus one
/// injection term per raw reading that fed the step.
pub fn propagate_covariance_step(cov: &Matrix9, step: &StepJacobians, noise: &ImuNoiseModel) -> Matrix9 {
    let vg = noise.sigma_gyro * noise.sigma_gyro;
    let va = noise.sigma_accel * noise.sigma_accel;
    let f = &step.wrt_delta;
    let next = f * cov * f.transpose()
        + vg * (step.wrt_gyro0 * step.wrt_gyro0.transpose() + step.wrt_gyro1 * step.wrt_gyro1.transpose())
        + va * (step.wrt_accel0 * step.wrt_accel0.transpose()
            + step.wrt_accel1 * step.wrt_accel1.transpose());
    0.5 * (next + next.transpose())
}

/// Linear interpolation of a reading at `t ∈ [s0.t, s1.t]`.
pub fn interpolate_sample(s0: &ImuSample, s1: &ImuSample, t: f64) -> Result<ImuSample> {
    if !(s0.t < s1.t) {
        return Err(Error::Format(format!("samples not increasing: {} then {}", s0.t, s1.t)));
    }
    if !(t >= s0.t && t <= s1.t) {
        return Err(Error::Range(format!("t = {t} outside [{}, {}]", s0.t, s1.t)));
    }
    if t == s0.t {
        return Ok(*s0);
    }
    if t == s1.t {
        return Ok(*s1);
    }
    let a = (t - s0.t) / (s1.t - s0.t);
    Ok(ImuSample {
        t,
        gyro: s0.gyro + (s1.gyro - s0.gyro) * a,
        accel: s0.accel + (s1.accel - s0.accel) * a,
    })
}

/// Index of the last sample with `samples[i].t <= t`, if any.
fn last_at_or_before(samples: &[ImuSample], t: f64) -> Option<usize> {
    let n = samples.partition_point(|s| s.t <= t);
    n.checked_sub(1)
}

/// Reading at an arbitrary time by linear interpolation in a sorted stream.
pub fn sample_at(samples: &[ImuSample], t: f64) -> Result<ImuSample> {
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::Coverage { start: t, end: t }),
    };
    if t < first.t || t > last.t {
        return Err(Error::Coverage { start: t, end: t });
    }
    let i = last_at_or_before(samples, t).unwrap();
    if samples[i].t == t || i + 1 == samples.len() {
        return Ok(samples[i]);
    }
    interpolate_sample(&samples[i], &samples[i + 1], t)
}

/// Integration nodes for `[t_start, t_end]`: the raw samples strictly inside
/// the window plus endpoint samples that are interpolated unless a raw
/// sample falls exactly on the boundary.
pub fn window_nodes(samples: &[ImuSample], t_start: f64, t_end: f64) -> Result<Vec<ImuSample>> {
    if !(t_end > t_start) {
        return Err(Error::InvalidArgument(format!("empty interval [{t_start}, {t_end}]")));
    }
    let covered = matches!((samples.first(), samples.last()), (Some(f), Some(l)) if f.t <= t_start && l.t >= t_end);
    if !covered {
        return Err(Error::Coverage { start: t_start, end: t_end });
    }
    let i0 = last_at_or_before(samples, t_start).unwrap();
    let i1 = samples.partition_point(|s| s.t < t_end);
    let raw = &samples[i0..=i1.min(samples.len() - 1)];
    if raw.windows(2).any(|w| !(w[0].t < w[1].t)) {
        return Err(Error::Format(format!("IMU timestamps not strictly increasing near t = {t_start}")));
    }

    let mut nodes = Vec::with_capacity(raw.len() + 2);
    nodes.push(sample_at(raw, t_start)?);
    nodes.extend(raw.iter().filter(|s| s.t > t_start && s.t < t_end).copied());
    nodes.push(sample_at(raw, t_end)?);
    Ok(nodes)
}

/// The pseudo-measurement for one inter-frame interval.
#[derive(Clone, Debug, PartialEq)]
pub struct PreintegratedImu {
    pub delta_r: Rotation,
    pub delta_v: Vector3<f64>,
    pub delta_p: Vector3<f64>,
    pub t_start: f64,
    /// `t_end - t_start`, seconds.
    pub dt: f64,
    /// Order `[δR, δv, δp]`.
    pub cov: Matrix9,
    /// ∂Δ/∂b_ω
    pub jac_bias_gyro: Matrix93,
    /// ∂Δ/∂b_a
    pub jac_bias_accel: Matrix93,
    pub bias_gyro: Vector3<f64>,
    pub bias_accel: Vector3<f64>,
    pub scheme: IntegrationScheme,
    /// Integration nodes, endpoints included.
    pub samples: Vec<ImuSample>,
}

/// Preintegrates the readings covering `[t_start, t_end]`.
pub fn integrate(
    samples: &[ImuSample],
    t_start: f64,
    t_end: f64,
    bias_gyro: &Vector3<f64>,
    bias_accel: &Vector3<f64>,
    noise: &ImuNoiseModel,
    scheme: IntegrationScheme,
) -> Result<PreintegratedImu> {
    let nodes = window_nodes(samples, t_start, t_end)?;
    Ok(integrate_nodes(nodes, bias_gyro, bias_accel, Some(noise), scheme))
}

/// Runs the recursion over prepared nodes. Without a noise model the
/// covariance is left at zero.
pub fn integrate_nodes(
    nodes: Vec<ImuSample>,
    bias_gyro: &Vector3<f64>,
    bias_accel: &Vector3<f64>,
    noise: Option<&ImuNoiseModel>,
    scheme: IntegrationScheme,
) -> PreintegratedImu {
    let mut delta = Delta::default();
    let mut cov = Matrix9::zeros();
    let mut jg = Matrix93::zeros();
    let mut ja = Matrix93::zeros();
    for w in nodes.windows(2) {
        let (next, step) = integration_step(&delta, &w[0], &w[1], bias_gyro, bias_accel, scheme);
        (jg, ja) = bias_jacobian_step(&jg, &ja, &step);
        if let Some(noise) = noise {
            cov = propagate_covariance_step(&cov, &step, noise);
        }
        delta = next;
    }
    let t_start = nodes.first().map_or(0.0, |s| s.t);
    let t_end = nodes.last().map_or(0.0, |s| s.t);
    PreintegratedImu {
        delta_r: Rotation::from_matrix_unchecked(delta.rotation),
        delta_v: delta.velocity,
        delta_p: delta.position,
        t_start,
        dt: t_end - t_start,
        cov,
        jac_bias_gyro: jg,
        jac_bias_accel: ja,
        bias_gyro: *bias_gyro,
        bias_accel: *bias_accel,
        scheme,
        samples: nodes,
    }
}

impl PreintegratedImu {
    /// Reintegrates the retained nodes with new biases. The covariance is
    /// recomputed only when a noise model is given, otherwise it is kept.
    pub fn reintegrate(&self, bias_gyro: &Vector3<f64>, bias_accel: &Vector3<f64>, noise: Option<&ImuNoiseModel>) -> Self {
        let mut out = integrate_nodes(self.samples.clone(), bias_gyro, bias_accel, noise, self.scheme);
        if noise.is_none() {
            out.cov = self.cov;
        }
        out
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.dt
    }
}
