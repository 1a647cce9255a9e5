//! Rigid transforms on SE(3) and the SO(3)/SE(3) Jacobians used by the
//! factor residuals.
//!
//! Tangent vectors are ordered rotation-first: `[φ; ρ]`. Perturbations are
//! applied on the right, `T · exp(ξ)`, everywhere in the crate.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Angles closer than this to π are reported as a branch-cut condition by
/// [`se3_log`].
pub const BRANCH_CUT_EPS: f64 = 1e-6;

const SMALL_ANGLE: f64 = 1e-8;
const SERIES_ANGLE: f64 = 0.1;

/// Skew-symmetric matrix with `hat(a) * b == a.cross(&b)`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// SO(3) exponential.
pub fn so3_exp(phi: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta = phi.norm();
    if theta < SMALL_ANGLE {
        let q = Quaternion::new(1.0, 0.5 * phi.x, 0.5 * phi.y, 0.5 * phi.z);
        return UnitQuaternion::new_normalize(q);
    }
    let half = 0.5 * theta;
    let s = half.sin() / theta;
    UnitQuaternion::new_normalize(Quaternion::new(half.cos(), s * phi.x, s * phi.y, s * phi.z))
}

/// SO(3) logarithm on the principal branch (angle in `[0, π]`).
pub fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let mut w = q.w;
    let mut v = q.imag();
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let n = v.norm();
    if n < SMALL_ANGLE {
        // θ/n → 2/w as n → 0
        return v * (2.0 / w);
    }
    let theta = 2.0 * n.atan2(w);
    v * (theta / n)
}

/// Rotation angle of a unit quaternion, in radians, in `[0, π]`.
pub fn rotation_angle(q: &UnitQuaternion<f64>) -> f64 {
    let n = q.imag().norm();
    2.0 * n.atan2(q.w.abs())
}

/// Left Jacobian of SO(3).
pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    let (a, b) = if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        (
            0.5 - t2 / 24.0 + t2 * t2 / 720.0 - t2 * t2 * t2 / 40320.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2 * t2 * t2 / 362880.0,
        )
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Inverse of the SO(3) left Jacobian.
pub fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    let c = if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0 + t2 * t2 * t2 / 1209600.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

pub fn so3_right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    so3_left_jacobian(&-phi)
}

pub fn so3_right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    so3_left_jacobian_inv(&-phi)
}

/// Tangent vector of SE(3), rotation part first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Twist6(pub Vector6<f64>);

impl Twist6 {
    pub fn zero() -> Self {
        Self(Vector6::zeros())
    }

    pub fn new(rx: f64, ry: f64, rz: f64, tx: f64, ty: f64, tz: f64) -> Self {
        Self(Vector6::new(rx, ry, rz, tx, ty, tz))
    }

    pub fn from_parts(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self(Vector6::new(
            rotation.x,
            rotation.y,
            rotation.z,
            translation.x,
            translation.y,
            translation.z,
        ))
    }

    pub fn rotation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vector6<f64>> for Twist6 {
    fn from(v: Vector6<f64>) -> Self {
        Self(v)
    }
}

/// Rigid transform: unit quaternion rotation plus translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose3 {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: renormalize(rotation),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// Builds a pose from the TUM ordering `tx ty tz qx qy qz qw`.
    pub fn from_tum(values: [f64; 7]) -> Self {
        let q = Quaternion::new(values[6], values[3], values[4], values[5]);
        // Already-unit input is kept bit-exact so text round trips are lossless.
        let rotation = if (q.norm() - 1.0).abs() < 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        Self {
            rotation,
            translation: Vector3::new(values[0], values[1], values[2]),
        }
    }

    /// `tx ty tz qx qy qz qw`.
    pub fn to_tum(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        [
            self.translation.x,
            self.translation.y,
            self.translation.z,
            q.i,
            q.j,
            q.k,
            q.w,
        ]
    }

    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Pose3 {
            rotation: renormalize(self.rotation * other.rotation),
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn inverse(&self) -> Pose3 {
        let r_inv = self.rotation.inverse();
        Pose3 {
            rotation: r_inv,
            translation: -(r_inv * self.translation),
        }
    }

    /// `self⁻¹ ∘ other`, the pose of `other` expressed in this frame.
    pub fn between(&self, other: &Pose3) -> Pose3 {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn exp(xi: &Twist6) -> Pose3 {
        let phi = xi.rotation();
        let rho = xi.translation();
        Pose3 {
            rotation: so3_exp(&phi),
            translation: so3_left_jacobian(&phi) * rho,
        }
    }

    /// Principal-branch logarithm. Total; near π the branch is whichever the
    /// quaternion sign selects. Use [`se3_log`] to detect that case.
    pub fn log(&self) -> Twist6 {
        let phi = so3_log(&self.rotation);
        let rho = so3_left_jacobian_inv(&phi) * self.translation;
        Twist6::from_parts(phi, rho)
    }

    /// `self ∘ exp(xi)`.
    pub fn retract(&self, xi: &Twist6) -> Pose3 {
        self.compose(&Pose3::exp(xi))
    }

    /// `log(self⁻¹ ∘ other)`.
    pub fn local(&self, other: &Pose3) -> Twist6 {
        self.between(other).log()
    }

    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Adjoint for right perturbations: `T exp(ξ) = exp(Ad_T ξ) T`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation_matrix();
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(hat(&self.translation) * r));
        ad
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
    }
}

impl Mul for Pose3 {
    type Output = Pose3;

    fn mul(self, rhs: Pose3) -> Pose3 {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a Pose3> for &'a Pose3 {
    type Output = Pose3;

    fn mul(self, rhs: &Pose3) -> Pose3 {
        self.compose(rhs)
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

pub fn se3_exp(xi: &Twist6) -> Pose3 {
    Pose3::exp(xi)
}

/// Logarithm that refuses rotations within [`BRANCH_CUT_EPS`] of π.
pub fn se3_log(p: &Pose3) -> Result<Twist6, GeometryError> {
    let angle = p.rotation_angle();
    if std::f64::consts::PI - angle < BRANCH_CUT_EPS {
        return Err(GeometryError::NearBranchCut { angle });
    }
    Ok(p.log())
}

pub fn compose(a: &Pose3, b: &Pose3) -> Pose3 {
    a.compose(b)
}

pub fn inverse(a: &Pose3) -> Pose3 {
    a.inverse()
}

/// The coupling block `Q(φ, ρ)` of the SE(3) left Jacobian.
fn se3_q(phi: &Vector3<f64>, rho: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let p = hat(phi);
    let r = hat(rho);
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    let (a, b, c) = if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        (
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
            1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0,
            1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0,
        )
    } else {
        let (s, co) = theta.sin_cos();
        let t2 = theta * theta;
        let t3 = t2 * theta;
        (
            (theta - s) / t3,
            (t2 + 2.0 * co - 2.0) / (2.0 * t2 * t2),
            (2.0 * theta - 3.0 * s + theta * co) / (2.0 * t2 * t3),
        )
    };
    r * 0.5 + (pr + rp + prp) * a + (p * pr + rp * p - prp * 3.0) * b + (prp * p + p * prp) * c
}

/// Left Jacobian of SE(3) (rotation-first ordering).
pub fn se3_left_jacobian(xi: &Twist6) -> Matrix6<f64> {
    let phi = xi.rotation();
    let rho = xi.translation();
    let j = so3_left_jacobian(&phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&se3_q(&phi, &rho));
    out
}

pub fn se3_left_jacobian_inv(xi: &Twist6) -> Matrix6<f64> {
    let phi = xi.rotation();
    let rho = xi.translation();
    let j_inv = so3_left_jacobian_inv(&phi);
    let q = se3_q(&phi, &rho);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-j_inv * q * j_inv));
    out
}

pub fn se3_right_jacobian(xi: &Twist6) -> Matrix6<f64> {
    se3_left_jacobian(&Twist6(-xi.0))
}

pub fn se3_right_jacobian_inv(xi: &Twist6) -> Matrix6<f64> {
    se3_left_jacobian_inv(&Twist6(-xi.0))
}
