//! SO(3) / SE(3) layer.
//!
//! Rotations are stored as plain 3×3 matrices and every manifold quantity in
//! the crate is perturbed on the left: `R ← Exp(δ)·R`. Poses use the
//! SO(3)×R³ retraction, i.e. the rotation is left-perturbed and the
//! translation is updated additively; the 6-vector tangent is ordered
//! `[δθ, δp]`.
//!
//! Below an angle of [`SMALL_ANGLE`] the trigonometric coefficients are
//! replaced by their two-term Taylor series, which at that threshold are
//! exact to well below machine precision.
//!
//! Composition does not re-orthonormalize. Retractions
//! ([`Rotation::retract`], [`Pose::retract`]) do, so optimizer iterates never
//! accumulate drift; long user-side product chains can call
//! [`Rotation::renormalized`].

use std::f64::consts::PI;
use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this rotation angle (rad) exp/log/Jacobians use series expansions.
pub const SMALL_ANGLE: f64 = 1e-4;

/// Orthonormality tolerance accepted by the checked constructors.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// `[v]×`, the cross-product matrix.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[inline]
fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

fn check_finite(v: &Vector3<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what}: non-finite component in {v:?}")))
    }
}

/// Raw exponential map, no input validation.
pub fn exp_matrix(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Raw logarithm map, no orthonormality check. Angle of the result lies in `[0, π]`.
pub fn log_matrix(r: &Matrix3<f64>) -> Vector3<f64> {
    let w = 0.5 * vee(&(r - r.transpose()));
    let s = w.norm();
    let c = (0.5 * (r.trace() - 1.0)).clamp(-1.0, 1.0);
    let theta = s.atan2(c);

    if theta < SMALL_ANGLE {
        // sinθ/θ ≈ 1 - θ²/6
        return w * (1.0 + theta * theta / 6.0);
    }
    if PI - theta > 1e-2 {
        return w * (theta / s);
    }

    // Near π the antisymmetric part vanishes; recover the axis from the
    // symmetric part, aaᵀ = (sym(R) - cI) / (1 - c), and its sign from w.
    let sym = 0.5 * (r + r.transpose());
    let aat = (sym - Matrix3::identity() * c) / (1.0 - c);
    let (mut best, mut best_val) = (0, aat[(0, 0)]);
    for i in 1..3 {
        if aat[(i, i)] > best_val {
            best = i;
            best_val = aat[(i, i)];
        }
    }
    let mut axis = aat.column(best).into_owned() / best_val.max(f64::MIN_POSITIVE).sqrt();
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Left Jacobian of SO(3): `Exp(φ + δ) ≈ Exp(J_l(φ)·δ)·Exp(φ)`.
pub fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let (a, b) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Inverse of [`left_jacobian`].
pub fn left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let b = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - k * 0.5 + k * k * b
}

/// Right Jacobian of SO(3), `J_r(φ) = J_l(-φ)`.
#[inline]
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    left_jacobian(&-phi)
}

/// Checked exponential map.
pub fn so3_exp(phi: &Vector3<f64>) -> Result<Rotation> {
    check_finite(phi, "so3_exp")?;
    Ok(Rotation(exp_matrix(phi)))
}

/// Checked logarithm map; rejects matrices that are not rotations.
pub fn so3_log(r: &Rotation) -> Result<Vector3<f64>> {
    Rotation::validate(&r.0)?;
    Ok(log_matrix(&r.0))
}

/// Checked left Jacobian.
pub fn left_jacobian_so3(phi: &Vector3<f64>) -> Result<Matrix3<f64>> {
    check_finite(phi, "left_jacobian_so3")?;
    Ok(left_jacobian(phi))
}

/// Element of SO(3) stored as a rotation matrix.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rotation({:?})", log_matrix(&self.0).as_slice())
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps a matrix after checking `RRᵀ = I` and `det R = 1` to [`ORTHONORMAL_TOL`].
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        Self::validate(&m)?;
        Ok(Self(m))
    }

    /// Wraps a matrix that the caller knows to be a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Nearest rotation (Frobenius) to an arbitrary matrix.
    pub fn project(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let mut d = Matrix3::identity();
        if (u * vt).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Self(u * d * vt)
    }

    fn validate(m: &Matrix3<f64>) -> Result<()> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument("rotation has non-finite entries".into()));
        }
        let ortho = (m * m.transpose() - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if ortho > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidArgument(format!(
                "not a rotation: |RR^T - I| = {ortho:e}, det = {det}"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn exp(phi: &Vector3<f64>) -> Self {
        Self(exp_matrix(phi))
    }

    #[inline]
    pub fn log(&self) -> Vector3<f64> {
        log_matrix(&self.0)
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    #[inline]
    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        self.log().norm()
    }

    /// Angle of `self · other⁻¹`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        Rotation(self.0 * other.0.transpose()).angle()
    }

    /// Left retraction `Exp(δ)·R`, re-orthonormalized.
    pub fn retract(&self, delta: &Vector3<f64>) -> Self {
        Self(exp_matrix(delta) * self.0).renormalized()
    }

    /// Re-orthonormalizes by Gram-Schmidt on the columns.
    pub fn renormalized(&self) -> Self {
        let x = self.0.column(0).normalize();
        let y = self.0.column(1) - x * x.dot(&self.0.column(1));
        let y = y.normalize();
        let z = x.cross(&y);
        Self(Matrix3::from_columns(&[x, y, z]))
    }

    /// `max |RRᵀ - I|` and `|det R - 1|`, the larger of the two.
    pub fn orthonormality_error(&self) -> f64 {
        let ortho = (self.0 * self.0.transpose() - Matrix3::identity()).abs().max();
        ortho.max((self.0.determinant() - 1.0).abs())
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

impl Mul<&Vector3<f64>> for &Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: &Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// Rigid transform `T = [R p; 0 1]`, mapping points from a source to a target frame.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.inverse();
        Self { rotation: rt, translation: -(rt.0 * self.translation) }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.0 * p + self.translation
    }

    /// Left-perturbed rotation, additive translation. Tangent order `[δθ, δp]`.
    pub fn retract(&self, delta: &nalgebra::Vector6<f64>) -> Self {
        let dr = Vector3::new(delta[0], delta[1], delta[2]);
        let dp = Vector3::new(delta[3], delta[4], delta[5]);
        Self { rotation: self.rotation.retract(&dr), translation: self.translation + dp }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.0);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// 4×4 matrix flattened row-major.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_homogeneous();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[4 * r + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(v: &[f64; 16]) -> Result<Self> {
        let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        if v[12] != 0.0 || v[13] != 0.0 || v[14] != 0.0 || v[15] != 1.0 {
            return Err(Error::InvalidArgument("last row of a pose must be [0 0 0 1]".into()));
        }
        Ok(Self { rotation: Rotation::from_matrix(r)?, translation: Vector3::new(v[3], v[7], v[11]) })
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        Pose {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation.0 * rhs.translation + self.translation,
        }
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = <[f64; 16]>::deserialize(d)?;
        Pose::from_row_major(&v).map_err(serde::de::Error::custom)
    }
}
