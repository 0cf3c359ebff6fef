//! Anchor-point pose-update parameterization.
//!
//! A refiner predicts nine numbers: `(vx, vy)` move the anchor's image
//! projection in units of the crop camera's focal length, `vz` scales the
//! anchor depth, and the 6D rotation `(e1, e2)` left-multiplies the object
//! orientation in the camera frame:
//!
//! ```text
//! z' = vz * z
//! x' = (vx / fx + x / z) * z'
//! y' = (vy / fy + y / z) * z'
//! R' = R(e1, e2) * R
//! ```
//!
//! `(x, y, z)` is the anchor in the camera frame. The updated object pose is
//! the one that puts the anchor at `(x', y', z')` with orientation `R'`.

use crate::geometry::{
    rotation_from_6d, rotation_geodesic_angle, CameraModel, GeometryError, Mat3, Pose, Rotation6D,
    Vec3,
};
use crate::mesh::AnchorPoint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UpdateError {
    #[error("depth ratio vz must be positive, got {0}")]
    NonPositiveDepthRatio(f64),
    #[error("anchor depth must be positive, got {0}")]
    DegenerateDepth(f64),
    #[error(transparent)]
    Rotation(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseUpdate {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub rot: Rotation6D,
}

impl Default for PoseUpdate {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseUpdate {
    pub fn identity() -> Self {
        Self {
            vx: 0.0,
            vy: 0.0,
            vz: 1.0,
            rot: Rotation6D::identity(),
        }
    }

    /// `[vx, vy, vz, e1.x, e1.y, e1.z, e2.x, e2.y, e2.z]`
    pub fn to_array(&self) -> [f64; 9] {
        let r = self.rot.to_array();
        [self.vx, self.vy, self.vz, r[0], r[1], r[2], r[3], r[4], r[5]]
    }

    pub fn from_array(v: &[f64; 9]) -> Self {
        Self {
            vx: v[0],
            vy: v[1],
            vz: v[2],
            rot: Rotation6D::from_array(&[v[3], v[4], v[5], v[6], v[7], v[8]]),
        }
    }
}

/// Current estimate `T_CO`, the anchor (object frame) and the crop camera
/// whose focal lengths scale `vx`, `vy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchoredPose {
    pub pose: Pose,
    pub anchor: AnchorPoint,
    pub cam: CameraModel,
}

impl AnchoredPose {
    pub fn new(pose: Pose, anchor: AnchorPoint, cam: CameraModel) -> Self {
        Self { pose, anchor, cam }
    }

    pub fn anchor_in_camera(&self) -> Vec3 {
        self.anchor.in_camera(&self.pose)
    }

    pub fn with_pose(&self, pose: Pose) -> Self {
        Self { pose, ..*self }
    }
}

/// Object pose with orientation `rotation` whose anchor sits at camera-frame
/// point `anchor_cam`.
pub fn pose_from_anchor(anchor: &AnchorPoint, anchor_cam: &Vec3, rotation: Mat3) -> Pose {
    Pose::new(rotation, anchor_cam - rotation * anchor.position)
}

/// New anchor position from the translation part of an update.
pub fn update_anchor(
    cam: &CameraModel,
    anchor_cam: &Vec3,
    vx: f64,
    vy: f64,
    vz: f64,
) -> Result<Vec3, UpdateError> {
    if !(vz > 0.0) {
        return Err(UpdateError::NonPositiveDepthRatio(vz));
    }
    let z = anchor_cam.z;
    if !(z > 0.0) {
        return Err(UpdateError::DegenerateDepth(z));
    }
    let z_new = vz * z;
    Ok(Vec3::new(
        (vx / cam.fx + anchor_cam.x / z) * z_new,
        (vy / cam.fy + anchor_cam.y / z) * z_new,
        z_new,
    ))
}

/// Applies a full update.
pub fn apply_update(state: &AnchoredPose, u: &PoseUpdate) -> Result<Pose, UpdateError> {
    let rot = rotation_from_6d(&u.rot)?;
    apply_update_with_rotation(state, u.vx, u.vy, u.vz, &rot)
}

/// Same as [`apply_update`] with the rotation update given as a matrix.
pub fn apply_update_with_rotation(
    state: &AnchoredPose,
    vx: f64,
    vy: f64,
    vz: f64,
    rot_update: &Mat3,
) -> Result<Pose, UpdateError> {
    let anchor_new = update_anchor(&state.cam, &state.anchor_in_camera(), vx, vy, vz)?;
    let rotation = rot_update * state.pose.rotation;
    Ok(pose_from_anchor(&state.anchor, &anchor_new, rotation))
}

/// Target translation values and rotation matrix that take `state` to
/// `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetValues {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub rotation: Mat3,
}

pub fn target_values(state: &AnchoredPose, target: &Pose) -> Result<TargetValues, UpdateError> {
    let cur = state.anchor_in_camera();
    let tgt = state.anchor.in_camera(target);
    if !(cur.z > 0.0) {
        return Err(UpdateError::DegenerateDepth(cur.z));
    }
    if !(tgt.z > 0.0) {
        return Err(UpdateError::DegenerateDepth(tgt.z));
    }
    Ok(TargetValues {
        vx: state.cam.fx * (tgt.x / tgt.z - cur.x / cur.z),
        vy: state.cam.fy * (tgt.y / tgt.z - cur.y / cur.z),
        vz: tgt.z / cur.z,
        rotation: target.rotation * state.pose.rotation.transpose(),
    })
}

/// The update that maps `state.pose` onto `target`; the rotation part is the
/// first two columns of `R_target * R_current^T`.
pub fn target_update(state: &AnchoredPose, target: &Pose) -> Result<PoseUpdate, UpdateError> {
    let t = target_values(state, target)?;
    Ok(PoseUpdate {
        vx: t.vx,
        vy: t.vy,
        vz: t.vz,
        rot: Rotation6D::from_matrix(&t.rotation),
    })
}

/// Differences between the updates two anchorings require for the same
/// physical correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorGap {
    pub dvx: f64,
    pub dvy: f64,
    pub dvz: f64,
    /// Geodesic angle of `R1 * R2^T`, radians.
    pub rot_gap_angle: f64,
}

/// Compares target updates for the same object under two anchorings.
///
/// `state1` and `state2` describe the same physical object pose: they share
/// the camera, and `state2.pose` may use a different object frame
/// (`state2.pose = state1.pose * G`), with `state2.anchor` expressed in that
/// frame. `target` is given in `state1`'s object frame and is carried over to
/// the second frame through `G`.
pub fn anchor_dependency_gap(
    state1: &AnchoredPose,
    state2: &AnchoredPose,
    target: &Pose,
) -> Result<AnchorGap, UpdateError> {
    let frame_change = state1.pose.inverse().compose(&state2.pose);
    let target2 = target.compose(&frame_change);
    let u1 = target_values(state1, target)?;
    let u2 = target_values(state2, &target2)?;
    Ok(AnchorGap {
        dvx: u1.vx - u2.vx,
        dvy: u1.vy - u2.vy,
        dvz: u1.vz - u2.vz,
        rot_gap_angle: rotation_geodesic_angle(&u1.rotation, &u2.rotation),
    })
}

/// Depth-ratio gap for two anchors separated by `z12` in camera depth when
/// the correction does not rotate the object.
pub fn depth_gap_closed_form(z1_current: f64, z1_target: f64, z12: f64) -> f64 {
    z12 * (z1_target - z1_current) / (z1_current * (z1_current + z12))
}


#[cfg(test)]
mod proptests {
    use super::*;
    use crate::geometry::{random_rotation, RngStream};
    use proptest::prelude::*;

    fn rotation() -> impl Strategy<Value = Mat3> {
        any::<u64>().prop_map(|s| random_rotation(&mut RngStream::new(s, 0).rng()))
    }

    fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
        (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    fn state() -> impl Strategy<Value = AnchoredPose> {
        (rotation(), vec3(0.2), 0.4f64..1.5, vec3(0.05), 200.0f64..800.0).prop_map(|(r, t, z, a, f)| {
            AnchoredPose::new(
                Pose::new(r, Vec3::new(t.x, t.y, z)),
                AnchorPoint::new(a),
                CameraModel { fx: f, fy: f, cx: 80.0, cy: 80.0, width: 160, height: 160 },
            )
        })
    }

    proptest! {
        #[test]
        fn round_trip(s in state(), r in rotation(), dt in vec3(0.1)) {
            let target = Pose::new(r, s.pose.translation + dt);
            let back = apply_update(&s, &target_update(&s, &target).unwrap()).unwrap();
            let pts = [Vec3::zeros(), Vec3::x() * 0.05, Vec3::y() * 0.05, Vec3::z() * 0.05];
            prop_assert!(crate::loss::pose_distance(&pts, &back, &target).unwrap() <= 1e-9);
        }

        #[test]
        fn rotation_target_ignores_anchor_and_frame(
            s in state(), g in rotation(), gt in vec3(0.03), a2 in vec3(0.05), r in rotation(), dt in vec3(0.1),
        ) {
            let s2 = AnchoredPose::new(s.pose.compose(&Pose::new(g, gt)), AnchorPoint::new(a2), s.cam);
            let target = Pose::new(r, s.pose.translation + dt);
            prop_assert!(anchor_dependency_gap(&s, &s2, &target).unwrap().rot_gap_angle <= 1e-9);
        }

        #[test]
        fn depth_gap_nonzero_in_general(z1 in 0.4f64..1.5, z12 in 0.01f64..0.3, dz in 0.01f64..0.3) {
            prop_assert!(depth_gap_closed_form(z1, z1 + dz, z12).abs() > 0.0);
            prop_assert!(depth_gap_closed_form(z1, z1 - dz, z12).abs() > 0.0);
        }
    }
}
