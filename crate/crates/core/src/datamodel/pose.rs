//! Unit quaternions and rigid transforms.

use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];

/// Rotation quaternion stored as (w, x, y, z).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis`. The axis need not be normalized.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = norm3(axis);
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle / 2.0).sin_cos();
        Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    /// Intrinsic Z-Y-X (yaw, pitch, roll): R = Rz(yaw) * Ry(pitch) * Rx(roll).
    pub fn from_euler_zyx(yaw: f64, pitch: f64, roll: f64) -> Self {
        let (sy, cy) = (yaw / 2.0).sin_cos();
        let (sp, cp) = (pitch / 2.0).sin_cos();
        let (sr, cr) = (roll / 2.0).sin_cos();
        Self::new(
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        )
        .normalized()
    }

    /// Inverse of [`Quaternion::from_euler_zyx`], returning (yaw, pitch, roll).
    /// Yaw and roll lie in (-pi, pi], pitch in [-pi/2, pi/2].
    pub fn to_euler_zyx(&self) -> (f64, f64, f64) {
        let Quaternion { w, x, y, z } = *self;
        let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
        let pitch = (2.0 * (w * y - z * x)).clamp(-1.0, 1.0).asin();
        let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
        (yaw, pitch, roll)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(&self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(&self, rhs: &Quaternion) -> Self {
        let (a, b) = (self, rhs);
        Self::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let u = [self.x, self.y, self.z];
        let uv = cross(u, v);
        let uuv = cross(u, uv);
        [
            v[0] + 2.0 * (self.w * uv[0] + uuv[0]),
            v[1] + 2.0 * (self.w * uv[1] + uuv[1]),
            v[2] + 2.0 * (self.w * uv[2] + uuv[2]),
        ]
    }

    /// Rotation angle in [0, pi], treating q and -q as the same rotation.
    pub fn angle(&self) -> f64 {
        let v = norm3([self.x, self.y, self.z]);
        2.0 * v.atan2(self.w.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// A rigid transform: rotate, then translate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose6D {
    pub rotation: Quaternion,
    pub translation: Vec3,
}

impl Default for Pose6D {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose6D {
    pub const IDENTITY: Pose6D = Pose6D {
        rotation: Quaternion::IDENTITY,
        translation: [0.0; 3],
    };

    /// Builds a pose, renormalizing the rotation.
    pub fn new(rotation: Quaternion, translation: Vec3) -> Self {
        Self {
            rotation: rotation.normalized(),
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Quaternion::IDENTITY,
            translation,
        }
    }

    /// `self ∘ other`: applying the result to a point applies `other` first.
    pub fn compose(&self, other: &Pose6D) -> Pose6D {
        let rotated = self.rotation.rotate(other.translation);
        Pose6D {
            rotation: self.rotation.mul(&other.rotation).normalized(),
            translation: add3(self.translation, rotated),
        }
    }

    pub fn inverse(&self) -> Pose6D {
        let inv = self.rotation.conjugate().normalized();
        let t = inv.rotate(self.translation);
        Pose6D {
            rotation: inv,
            translation: [-t[0], -t[1], -t[2]],
        }
    }

    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        add3(self.rotation.rotate(p), self.translation)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.is_finite() && self.translation.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn norm3(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn rotate_about_z() {
        let q = Quaternion::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2);
        assert!(close(q.rotate([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], 1e-15));
    }

    #[test]
    fn euler_round_trip() {
        for &(y, p, r) in &[(0.3, -0.2, 1.1), (-2.9, 1.2, -0.4), (0.0, 0.0, 0.0)] {
            let q = Quaternion::from_euler_zyx(y, p, r);
            let (y2, p2, r2) = q.to_euler_zyx();
            assert!((y - y2).abs() < 1e-12 && (p - p2).abs() < 1e-12 && (r - r2).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_matches_axis_composition() {
        let (yaw, pitch, roll) = (0.7, -0.3, 0.2);
        let composed = Quaternion::from_axis_angle([0.0, 0.0, 1.0], yaw)
            .mul(&Quaternion::from_axis_angle([0.0, 1.0, 0.0], pitch))
            .mul(&Quaternion::from_axis_angle([1.0, 0.0, 0.0], roll));
        let q = Quaternion::from_euler_zyx(yaw, pitch, roll);
        assert!((q.dot(&composed).abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn inverse_of_translation() {
        let inv = Pose6D::from_translation([1.0, 2.0, 3.0]).inverse();
        assert_eq!(inv.translation, [-1.0, -2.0, -3.0]);
        assert_eq!(inv.rotation, Quaternion::IDENTITY);
    }

    #[test]
    fn identity_angle_is_zero() {
        assert_eq!(Quaternion::IDENTITY.angle(), 0.0);
        assert!((Quaternion::IDENTITY.neg().angle()).abs() < 1e-15);
    }
}
