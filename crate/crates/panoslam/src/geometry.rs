//! Rigid-body poses and the small-motion parameterization used by ICP and
//! the pose graph.
//!
//! Rotations are stored as unit quaternions and renormalized after every
//! composition so that norm drift stays below 1e-9 even over millions of
//! chained operations. Matrices are derived on demand.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Angle below which exp/log switch to their Taylor branch.
const SMALL_ANGLE: f64 = 1e-6;

/// A rigid-body transform: rotation followed by translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

/// Small-motion parameterization: a body-frame rotation vector paired with a
/// translation. `Pose::exp` maps a twist onto the group, `Pose::log` inverts
/// it; rotation and translation parts are kept decoupled so that the ICP
/// linearization `x + rot x x + trans` is exactly the first-order expansion
/// of `exp`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Twist { rotation: Vector3::zeros(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Twist { rotation, translation }
    }

    /// Euclidean norm of the stacked 6-vector; the ICP convergence measure.
    pub fn norm(&self) -> f64 {
        (self.rotation.norm_squared() + self.translation.norm_squared()).sqrt()
    }

    pub fn as_vector6(&self) -> [f64; 6] {
        [
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn from_vector6(v: [f64; 6]) -> Self {
        Twist {
            rotation: Vector3::new(v[0], v[1], v[2]),
            translation: Vector3::new(v[3], v[4], v[5]),
        }
    }
}

/// Exponential map of a rotation vector onto a unit quaternion.
pub fn rotation_exp(omega: &Vector3<f64>) -> UnitQuaternion<f64> {
    let angle = omega.norm();
    let half = 0.5 * angle;
    let (w, k) = if angle < SMALL_ANGLE {
        // sin(t/2)/t = 1/2 - t^2/48 + O(t^4)
        (1.0 - half * half / 2.0, 0.5 - angle * angle / 48.0)
    } else {
        (half.cos(), half.sin() / angle)
    };
    let v = omega * k;
    UnitQuaternion::new_normalize(Quaternion::new(w, v.x, v.y, v.z))
}

/// Logarithm of a unit quaternion as a rotation vector. Total: at angle pi
/// the axis sign is chosen deterministically from the vector part.
pub fn rotation_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    // Canonical sign so the returned angle is in [0, pi].
    let (w, v) = {
        let c = q.coords; // (x, y, z, w)
        if c.w >= 0.0 {
            (c.w, Vector3::new(c.x, c.y, c.z))
        } else {
            (-c.w, Vector3::new(-c.x, -c.y, -c.z))
        }
    };
    let vnorm = v.norm();
    if vnorm < 0.5 * SMALL_ANGLE {
        // angle ~ 2*vnorm; omega = 2v/w * (1 + vnorm^2/(3 w^2)) ~ 2v
        v * 2.0
    } else {
        let angle = 2.0 * vnorm.atan2(w);
        v * (angle / vnorm)
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose { rotation: UnitQuaternion::new_normalize(*rotation.quaternion()), translation }
    }

    pub fn from_parts(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Pose { rotation: rotation_exp(&rotation), translation }
    }

    /// Pure yaw (rotation about +z).
    pub fn from_yaw(angle: f64) -> Self {
        Pose::from_parts(Vector3::new(0.0, 0.0, angle), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose { rotation: UnitQuaternion::identity(), translation: t }
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `self` applied after `other`: (self * other) x = self(other(x)).
    pub fn compose(&self, other: &Pose) -> Pose {
        let q = self.rotation.quaternion() * other.rotation.quaternion();
        Pose {
            rotation: UnitQuaternion::new_normalize(q),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose { rotation: inv, translation: -(inv * self.translation) }
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    pub fn rotate_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn exp(twist: &Twist) -> Pose {
        Pose { rotation: rotation_exp(&twist.rotation), translation: twist.translation }
    }

    /// Inverse of [`Pose::exp`]. Errors when the rotation angle is within
    /// numerical precision of pi, where the axis is ambiguous.
    pub fn log(&self) -> Result<Twist> {
        let w = self.rotation.coords.w.abs();
        if w < 1e-12 {
            return Err(Error::AmbiguousRotation);
        }
        Ok(Twist { rotation: rotation_log(&self.rotation), translation: self.translation })
    }

    /// Rotation angle in radians between the two poses.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    pub fn translation_distance_to(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

/// Skew-symmetric (cross-product) matrix of `v`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of the right Jacobian of SO(3) at rotation vector `phi`.
///
/// Used when differentiating `log(E exp(d))` with respect to `d` in the pose
/// graph residuals.
pub fn so3_right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let px = skew(phi);
    let coeff = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        // 1/theta^2 - (1 + cos)/(2 theta sin)
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() + 0.5 * px + coeff * (px * px)
}
