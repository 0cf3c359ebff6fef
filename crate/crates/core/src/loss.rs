//! Point-set pose distance and the disentangled refiner loss.
//!
//! Each of the three loss terms rebuilds a pose from one predicted component
//! and the target values of the other two, then measures it against the
//! target with the L1 point distance. The analytic gradient below is what the
//! finite-difference checks compare against.

use crate::geometry::{
    rotation_from_6d, sample_perturbation, Mat3, PerturbationConfig, Pose, RngStream, Rotation6D,
    Vec3,
};
use crate::pose_update::{
    apply_update_with_rotation, target_values, update_anchor, AnchoredPose, PoseUpdate,
    TargetValues, UpdateError,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_K_ITERATIONS: usize = 3;

/// Residuals smaller than this are treated as sitting on an L1 kink.
pub const KINK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("point set is empty")]
    EmptyPointSet,
    #[error(transparent)]
    Update(#[from] UpdateError),
}

/// Mean over `points` of `|a x - b x|_1`.
pub fn pose_distance(points: &[Vec3], a: &Pose, b: &Pose) -> Result<f64, LossError> {
    if points.is_empty() {
        return Err(LossError::EmptyPointSet);
    }
    let sum: f64 = points
        .iter()
        .map(|p| (a.transform_point(p) - b.transform_point(p)).abs().sum())
        .sum();
    Ok(sum / points.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub term_xy: f64,
    pub term_z: f64,
    pub term_rot: f64,
    pub total: f64,
    pub k_iterations: usize,
}

impl LossBreakdown {
    fn single(term_xy: f64, term_z: f64, term_rot: f64) -> Self {
        Self {
            term_xy,
            term_z,
            term_rot,
            total: term_xy + term_z + term_rot,
            k_iterations: 1,
        }
    }

    fn zero() -> Self {
        Self {
            term_xy: 0.0,
            term_z: 0.0,
            term_rot: 0.0,
            total: 0.0,
            k_iterations: 0,
        }
    }

    fn accumulate(&mut self, other: &LossBreakdown) {
        self.term_xy += other.term_xy;
        self.term_z += other.term_z;
        self.term_rot += other.term_rot;
        self.total += other.total;
        self.k_iterations += other.k_iterations;
    }
}

/// The three mixed poses the loss terms evaluate.
fn mixed_poses(
    state: &AnchoredPose,
    u: &PoseUpdate,
    star: &TargetValues,
) -> Result<[Pose; 3], LossError> {
    let rot = rotation_from_6d(&u.rot).map_err(UpdateError::from)?;
    Ok([
        apply_update_with_rotation(state, u.vx, u.vy, star.vz, &star.rotation)?,
        apply_update_with_rotation(state, star.vx, star.vy, u.vz, &star.rotation)?,
        apply_update_with_rotation(state, star.vx, star.vy, star.vz, &rot)?,
    ])
}

pub fn disentangled_loss(
    points: &[Vec3],
    state: &AnchoredPose,
    u: &PoseUpdate,
    target: &Pose,
) -> Result<LossBreakdown, LossError> {
    if points.is_empty() {
        return Err(LossError::EmptyPointSet);
    }
    let star = target_values(state, target)?;
    let [p_xy, p_z, p_rot] = mixed_poses(state, u, &star)?;
    Ok(LossBreakdown::single(
        pose_distance(points, &p_xy, target)?,
        pose_distance(points, &p_z, target)?,
        pose_distance(points, &p_rot, target)?,
    ))
}

/// How the starting pose of iteration `k + 1` is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IterationSchedule {
    /// The pose predicted at iteration `k` becomes the next input, as at test
    /// time.
    Chain,
    /// Every iteration starts from a fresh perturbation of the target.
    Reperturb(PerturbationConfig),
}

/// Sums the loss over `k` iterations. `predict` maps the current state to an
/// update; no gradient flows between iterations.
pub fn k_iteration_loss<F>(
    points: &[Vec3],
    initial: &AnchoredPose,
    target: &Pose,
    k: usize,
    schedule: IterationSchedule,
    rng: RngStream,
    mut predict: F,
) -> Result<LossBreakdown, LossError>
where
    F: FnMut(&AnchoredPose) -> Result<PoseUpdate, LossError>,
{
    let mut total = LossBreakdown::zero();
    let mut state = *initial;
    for iter in 0..k {
        if iter > 0 {
            if let IterationSchedule::Reperturb(cfg) = schedule {
                let mut r = rng.split(iter as u64).rng();
                state = state.with_pose(sample_perturbation(&mut r, target, &cfg));
            }
        }
        let u = predict(&state)?;
        total.accumulate(&disentangled_loss(points, &state, &u, target)?);
        if schedule == IterationSchedule::Chain {
            let rot = rotation_from_6d(&u.rot).map_err(UpdateError::from)?;
            state = state.with_pose(apply_update_with_rotation(&state, u.vx, u.vy, u.vz, &rot)?);
        }
    }
    Ok(total)
}

/// Loss term a kink belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    Xy,
    Z,
    Rot,
}

/// A residual coordinate at (or within [`KINK_TOLERANCE`] of) zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kink {
    pub term: LossTerm,
    pub point: usize,
    pub axis: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    /// Order matches [`PoseUpdate::to_array`].
    pub gradient: [f64; 9],
    /// Non-smooth residuals; their sign is taken as zero.
    pub kinks: Vec<Kink>,
}

impl LossGradient {
    pub fn is_smooth(&self) -> bool {
        self.kinks.is_empty()
    }
}

fn sign(r: f64) -> f64 {
    if r.abs() < KINK_TOLERANCE {
        0.0
    } else {
        r.signum()
    }
}

/// Partial derivatives of the updated anchor w.r.t. `(vx, vy, vz)`.
fn anchor_jacobian(state: &AnchoredPose, vx: f64, vy: f64, vz: f64) -> [Vec3; 3] {
    let p = state.anchor_in_camera();
    let z = p.z;
    [
        Vec3::new(vz * z / state.cam.fx, 0.0, 0.0),
        Vec3::new(0.0, vz * z / state.cam.fy, 0.0),
        Vec3::new((vx / state.cam.fx + p.x / z) * z, (vy / state.cam.fy + p.y / z) * z, z),
    ]
}

/// Derivatives of the Gram-Schmidt rotation w.r.t. the six inputs.
pub fn rotation_6d_jacobian(r: &Rotation6D) -> [Mat3; 6] {
    let (e1, e2) = (r.e1, r.e2);
    let n1 = e1.norm();
    let b1 = e1 / n1;
    let d = b1.dot(&e2);
    let w = e2 - d * b1;
    let nw = w.norm();
    let b2 = w / nw;
    let mut out = [Mat3::zeros(); 6];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut de1 = Vec3::zeros();
        let mut de2 = Vec3::zeros();
        if k < 3 {
            de1[k] = 1.0;
        } else {
            de2[k - 3] = 1.0;
        }
        let db1 = (de1 - b1 * b1.dot(&de1)) / n1;
        let dd = db1.dot(&e2) + b1.dot(&de2);
        let dw = de2 - dd * b1 - d * db1;
        let db2 = (dw - b2 * b2.dot(&dw)) / nw;
        let db3 = db1.cross(&b2) + b1.cross(&db2);
        *slot = Mat3::from_columns(&[db1, db2, db3]);
    }
    out
}

/// Analytic gradient of the single-iteration loss w.r.t. the nine update
/// values. At kinks the zero subgradient is used and the kink is reported.
pub fn loss_gradient(
    points: &[Vec3],
    state: &AnchoredPose,
    u: &PoseUpdate,
    target: &Pose,
) -> Result<LossGradient, LossError> {
    if points.is_empty() {
        return Err(LossError::EmptyPointSet);
    }
    let star = target_values(state, target)?;
    let poses = mixed_poses(state, u, &star)?;
    let n = points.len() as f64;
    let mut grad = [0.0; 9];
    let mut kinks = Vec::new();

    let mut signs = |term: LossTerm, pose: &Pose| -> Vec<Vec3> {
        points
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let r = pose.transform_point(x) - target.transform_point(x);
                for axis in 0..3 {
                    if r[axis].abs() < KINK_TOLERANCE {
                        kinks.push(Kink { term, point: i, axis, residual: r[axis] });
                    }
                }
                r.map(sign)
            })
            .collect()
    };

    // term_xy: only (vx, vy) move the anchor; every point shifts with it.
    let s_xy = signs(LossTerm::Xy, &poses[0]);
    let j_xy = anchor_jacobian(state, u.vx, u.vy, star.vz);
    let sum_xy: Vec3 = s_xy.iter().sum();
    grad[0] = sum_xy.dot(&j_xy[0]) / n;
    grad[1] = sum_xy.dot(&j_xy[1]) / n;

    let s_z = signs(LossTerm::Z, &poses[1]);
    let j_z = anchor_jacobian(state, star.vx, star.vy, u.vz);
    let sum_z: Vec3 = s_z.iter().sum();
    grad[2] = sum_z.dot(&j_z[2]) / n;

    // term_rot: F x = R(e) R_k (x - a) + p*, so dF x / de_j = dR_j y.
    let s_rot = signs(LossTerm::Rot, &poses[2]);
    let mut g = Mat3::zeros();
    for (s, x) in s_rot.iter().zip(points) {
        let y = state.pose.rotation * (x - state.anchor.position);
        g += s * y.transpose();
    }
    g /= n;
    for (j, dr) in rotation_6d_jacobian(&u.rot).iter().enumerate() {
        grad[3 + j] = dr.component_mul(&g).sum();
    }

    Ok(LossGradient { gradient: grad, kinks })
}

/// Anchor position produced by the translation part of `u`; exposed for
/// diagnostics.
pub fn predicted_anchor(state: &AnchoredPose, u: &PoseUpdate) -> Result<Vec3, LossError> {
    Ok(update_anchor(&state.cam, &state.anchor_in_camera(), u.vx, u.vy, u.vz)?)
}
