//! Rigid transforms, rotation parameterizations, pinhole cameras and seeded
//! sampling.
//!
//! Frames follow the usual computer-vision convention: a camera looks down its
//! `+z` axis with `+x` to the right and `+y` down in the image. A [`Pose`]
//! named `T_CO` maps points from the object frame `O` into the camera frame
//! `C`.

mod camera;
mod rng;

pub use camera::{CameraError, CameraModel};
pub use rng::{RngStream, StreamRng};

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation vectors are degenerate (zero length or parallel): angle {angle:.3e} rad")]
    SingularRotation6D { angle: f64 },
}

/// Rigid transform: `x -> rotation * x + translation`, translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(Mat3::identity(), translation)
    }

    pub fn from_rotation(rotation: Mat3) -> Self {
        Self::new(rotation, Vec3::zeros())
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Row-major `[R | t]`, 12 values.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Pose {
        Pose {
            rotation: Mat3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
            translation: Vec3::new(v[3], v[7], v[11]),
        }
    }

    /// Largest deviation of the rotation block from orthonormality with
    /// positive determinant. Zero for an exact rotation.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation - Mat3::identity();
        let det = (self.rotation.determinant() - 1.0).abs();
        gram.amax().max(det)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn inverse(p: &Pose) -> Pose {
    p.inverse()
}

pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation by `angle` radians about `axis` (need not be normalized).
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner()
}

/// Intrinsic X-Y-Z Euler angles: rotate about x, then about the new y, then
/// about the new z. Equals `Rx(a) * Ry(b) * Rz(c)`.
pub fn euler_xyz_intrinsic(a: f64, b: f64, c: f64) -> Mat3 {
    rot_x(a) * rot_y(b) * rot_z(c)
}

/// Inverse of [`euler_xyz_intrinsic`] for `|b| < 90°`.
pub fn euler_xyz_intrinsic_angles(r: &Mat3) -> (f64, f64, f64) {
    let b = r[(0, 2)].clamp(-1.0, 1.0).asin();
    let a = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let c = (-r[(0, 1)]).atan2(r[(0, 0)]);
    (a, b, c)
}

/// Geodesic distance on SO(3), in radians.
///
/// Same value as `acos((tr(AᵀB) - 1) / 2)`, evaluated with `atan2` so that
/// angles near zero keep full precision.
pub fn rotation_geodesic_angle(a: &Mat3, b: &Mat3) -> f64 {
    let m = a.transpose() * b;
    let cos2 = (m.trace() - 1.0).clamp(-2.0, 2.0);
    let sin2 = Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    )
    .norm();
    sin2.atan2(cos2)
}

/// Uniformly distributed rotation (normalized Gaussian quaternion).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-9 {
            let quat = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                q[0], q[1], q[2], q[3],
            ));
            return quat.to_rotation_matrix().into_inner();
        }
    }
}

/// Orthonormal camera orientation whose `+z` column is `forward`. The `+y`
/// column is `down_hint` made orthogonal to `forward`.
pub fn look_rotation(forward: &Vec3, down_hint: &Vec3) -> Mat3 {
    let z = forward.normalize();
    let y = (down_hint - z * z.dot(down_hint)).normalize();
    let x = y.cross(&z);
    Mat3::from_columns(&[x, y, z])
}

/// The two column vectors of the continuous 6D rotation representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation6D {
    pub e1: Vec3,
    pub e2: Vec3,
}

impl Rotation6D {
    pub fn identity() -> Self {
        Self {
            e1: Vec3::x(),
            e2: Vec3::y(),
        }
    }

    /// First two columns of `r`.
    pub fn from_matrix(r: &Mat3) -> Self {
        Self {
            e1: r.column(0).into_owned(),
            e2: r.column(1).into_owned(),
        }
    }

    pub fn to_matrix(&self) -> Result<Mat3, GeometryError> {
        rotation_from_6d(self)
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.e1.x, self.e1.y, self.e1.z, self.e2.x, self.e2.y, self.e2.z,
        ]
    }

    pub fn from_array(v: &[f64; 6]) -> Self {
        Self {
            e1: Vec3::new(v[0], v[1], v[2]),
            e2: Vec3::new(v[3], v[4], v[5]),
        }
    }
}

const MIN_6D_ANGLE: f64 = 1e-6;

/// Gram-Schmidt on `(e1, e2)`; the third column completes a right-handed
/// frame.
pub fn rotation_from_6d(r: &Rotation6D) -> Result<Mat3, GeometryError> {
    let n1 = r.e1.norm();
    let n2 = r.e2.norm();
    if !(n1 > 0.0 && n2 > 0.0) || !n1.is_finite() || !n2.is_finite() {
        return Err(GeometryError::SingularRotation6D { angle: 0.0 });
    }
    let angle = r.e1.cross(&r.e2).norm().atan2(r.e1.dot(&r.e2));
    if angle < MIN_6D_ANGLE || std::f64::consts::PI - angle < MIN_6D_ANGLE {
        return Err(GeometryError::SingularRotation6D { angle });
    }
    let b1 = r.e1 / n1;
    let u = r.e2 - b1 * b1.dot(&r.e2);
    let b2 = u / u.norm();
    let b3 = b1.cross(&b2);
    Ok(Mat3::from_columns(&[b1, b2, b3]))
}

/// Per-axis standard deviations of the pose perturbation used to train the
/// refiner and to build coarse training hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    /// Camera-frame translation noise, meters.
    pub translation_std: [f64; 3],
    /// Euler-angle noise per axis, degrees.
    pub rotation_std_deg: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            translation_std: [0.02, 0.02, 0.05],
            rotation_std_deg: 15.0,
        }
    }
}

impl PerturbationConfig {
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            translation_std: self.translation_std.map(|s| s * factor),
            rotation_std_deg: self.rotation_std_deg * factor,
        }
    }
}

/// Draws the Gaussian translation offset and the Euler-angle rotation of a
/// single perturbation.
pub fn sample_perturbation_parts<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &PerturbationConfig,
) -> (Vec3, [f64; 3]) {
    let mut dt = Vec3::zeros();
    for i in 0..3 {
        let n: f64 = rng.sample(StandardNormal);
        dt[i] = n * cfg.translation_std[i];
    }
    let sigma = cfg.rotation_std_deg.to_radians();
    let mut angles = [0.0; 3];
    for a in angles.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *a = n * sigma;
    }
    (dt, angles)
}

/// Perturbs `base`: translation offset added in the camera frame, Euler
/// rotation applied about the object frame.
pub fn sample_perturbation<R: Rng + ?Sized>(
    rng: &mut R,
    base: &Pose,
    cfg: &PerturbationConfig,
) -> Pose {
    let (dt, [a, b, c]) = sample_perturbation_parts(rng, cfg);
    if dt == Vec3::zeros() && a == 0.0 && b == 0.0 && c == 0.0 {
        return *base;
    }
    Pose {
        rotation: base.rotation * euler_xyz_intrinsic(a, b, c),
        translation: base.translation + dt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::*;
    use std::f64::consts::FRAC_PI_2;

    mod approx_eq {
        use super::Mat3;
        pub fn mat_close(a: &Mat3, b: &Mat3, tol: f64) -> bool {
            (a - b).amax() <= tol
        }
    }

    #[test]
    fn compose_hand_example() {
        let a = Pose::new(rot_z(FRAC_PI_2), Vec3::new(1.0, 0.0, 0.0));
        let b = Pose::from_rotation(rot_z(FRAC_PI_2));
        let c = compose(&a, &b);
        assert!(mat_close(&c.rotation, &rot_z(std::f64::consts::PI), 1e-12));
        assert!((c.translation - Vec3::new(1.0, 0.0, 0.0)).amax() < 1e-12);
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let p = Pose::new(euler_xyz_intrinsic(0.3, -0.2, 1.1), Vec3::new(0.1, -0.4, 2.0));
        assert_eq!(compose(&Pose::identity(), &p), p);
        let id = compose(&p, &inverse(&p));
        assert!(mat_close(&id.rotation, &Mat3::identity(), 1e-9));
        assert!(id.translation.amax() < 1e-9);
    }

    #[test]
    fn six_d_examples() {
        let r = rotation_from_6d(&Rotation6D::identity()).unwrap();
        assert!(mat_close(&r, &Mat3::identity(), 1e-15));

        let scaled = Rotation6D {
            e1: Vec3::new(2.0, 0.0, 0.0),
            e2: Vec3::new(0.0, 3.0, 0.0),
        };
        assert!(mat_close(&rotation_from_6d(&scaled).unwrap(), &Mat3::identity(), 1e-15));

        let skew = Rotation6D {
            e1: Vec3::new(1.0, 1.0, 0.0),
            e2: Vec3::new(0.0, 1.0, 0.0),
        };
        let s = 1.0 / 2f64.sqrt();
        let expected = Mat3::from_columns(&[
            Vec3::new(s, s, 0.0),
            Vec3::new(-s, s, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ]);
        assert!(mat_close(&rotation_from_6d(&skew).unwrap(), &expected, 1e-12));
    }

    #[test]
    fn six_d_rejects_degenerate_input() {
        let parallel = Rotation6D {
            e1: Vec3::new(1.0, 0.0, 0.0),
            e2: Vec3::new(-3.0, 0.0, 0.0),
        };
        assert!(rotation_from_6d(&parallel).is_err());
        let zero = Rotation6D {
            e1: Vec3::zeros(),
            e2: Vec3::y(),
        };
        assert!(rotation_from_6d(&zero).is_err());
    }

    #[test]
    fn geodesic_examples() {
        assert_eq!(rotation_geodesic_angle(&Mat3::identity(), &Mat3::identity()), 0.0);
        let a = rotation_geodesic_angle(&Mat3::identity(), &rot_z(15f64.to_radians()));
        assert!((a - 0.261_799_387_799_149_4).abs() < 1e-12);
    }

    #[test]
    fn geodesic_rx_ry_matches_quaternion_oracle() {
        // Quaternion oracle: angle = 2 acos(|<qa, qb>|).
        let h = (0.5f64).sqrt();
        let qa = [h, h, 0.0, 0.0];
        let qb = [h, 0.0, h, 0.0];
        let dot: f64 = qa.iter().zip(qb.iter()).map(|(a, b)| a * b).sum();
        let oracle = 2.0 * dot.abs().acos();
        assert!((oracle - 120f64.to_radians()).abs() < 1e-12);
        let got = rotation_geodesic_angle(&rot_x(FRAC_PI_2), &rot_y(FRAC_PI_2));
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn euler_round_trip() {
        let r = euler_xyz_intrinsic(0.2, -0.7, 1.3);
        let (a, b, c) = euler_xyz_intrinsic_angles(&r);
        assert!((a - 0.2).abs() < 1e-12 && (b + 0.7).abs() < 1e-12 && (c - 1.3).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_perturbation_is_exact() {
        let base = Pose::new(rot_y(0.4), Vec3::new(0.0, 0.1, 0.7));
        let cfg = PerturbationConfig {
            translation_std: [0.0; 3],
            rotation_std_deg: 0.0,
        };
        let mut rng = RngStream::new(3, 0).rng();
        assert_eq!(sample_perturbation(&mut rng, &base, &cfg), base);
    }

    #[test]
    fn perturbation_statistics() {
        let cfg = PerturbationConfig::default();
        let mut rng = RngStream::new(11, 5).rng();
        let n = 100_000;
        let base = Pose::new(rot_x(0.3), Vec3::new(0.0, 0.0, 1.0));
        let mut sq_t = [0.0f64; 3];
        let mut sq_e = [0.0f64; 3];
        for _ in 0..n {
            let p = sample_perturbation(&mut rng, &base, &cfg);
            let dt = p.translation - base.translation;
            let rel = base.rotation.transpose() * p.rotation;
            let (a, b, c) = euler_xyz_intrinsic_angles(&rel);
            for i in 0..3 {
                sq_t[i] += dt[i] * dt[i];
            }
            sq_e[0] += a * a;
            sq_e[1] += b * b;
            sq_e[2] += c * c;
        }
        for i in 0..3 {
            let std_t = (sq_t[i] / n as f64).sqrt();
            let want = cfg.translation_std[i];
            assert!((std_t / want - 1.0).abs() < 0.03, "axis {i}: {std_t} vs {want}");
            let std_e = (sq_e[i] / n as f64).sqrt().to_degrees();
            assert!((std_e / 15.0 - 1.0).abs() < 0.03, "euler {i}: {std_e}");
        }
    }

    #[test]
    fn look_rotation_is_right_handed() {
        let r = look_rotation(&Vec3::new(1.0, 2.0, 3.0), &Vec3::y());
        assert!(Pose::from_rotation(r).orthonormality_error() < 1e-12);
        assert!((r.column(2) - Vec3::new(1.0, 2.0, 3.0).normalize()).amax() < 1e-12);
    }
}
