//! Iterative render-and-compare refinement with pluggable update predictors.

use crate::geometry::{
    axis_angle, rotation_from_6d, sample_perturbation, Mat3, PerturbationConfig, Pose, RngStream,
    Rotation6D, Vec3,
};
use crate::hypotheses::{basin_label, BasinThresholds, Label};
use crate::loss::pose_distance;
use crate::mesh::ObjectModel;
use crate::pose_update::{apply_update, target_update, AnchoredPose, PoseUpdate, UpdateError};
use crate::render::{make_viewset, Channels, DepthMap, RenderError, RenderedView, ViewSetSpec};
use nalgebra::{Matrix6, Vector6};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

pub const DEFAULT_ITERATIONS: usize = 5;
pub const DEFAULT_EARLY_STOP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("anchor depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("predictor {0:?} needs the ground-truth pose")]
    MissingGroundTruth(PredictorKind),
    #[error("initial pose renders no pixels")]
    EmptyRender,
    #[error("only {found} ICP correspondences, need {needed}")]
    TooFewCorrespondences { found: usize, needed: usize },
    #[error("ICP normal equations are singular")]
    DegenerateIcp,
    #[error("rendered view has no normal channel")]
    MissingNormals,
    #[error("update produced a non-finite pose")]
    NonFinite,
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Update(#[from] UpdateError),
}

/// `clip(d, 0, z + 1) / z - 1` elementwise.
pub fn normalize_depth(d: &DepthMap, anchor_depth: f64) -> Result<DepthMap, RefineError> {
    if !(anchor_depth > 0.0) {
        return Err(RefineError::NonPositiveDepth(anchor_depth));
    }
    Ok(d.map(|v| v.clamp(0.0, anchor_depth + 1.0) / anchor_depth - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// Exact update from the ground truth.
    Oracle,
    /// Oracle plus bounded uniform noise.
    NoisyOracle,
    /// Point-to-plane ICP between rendered and observed depth.
    DepthIcp,
}

impl PredictorKind {
    pub fn needs_ground_truth(self) -> bool {
        matches!(self, PredictorKind::Oracle | PredictorKind::NoisyOracle)
    }

    pub fn name(self) -> &'static str {
        match self {
            PredictorKind::Oracle => "oracle",
            PredictorKind::NoisyOracle => "noisy_oracle",
            PredictorKind::DepthIcp => "depth_icp",
        }
    }
}

/// Half-widths of the uniform noise added by the noisy oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseBounds {
    /// Added to `vx` and `vy` (crop-camera pixels).
    pub vxy_px: f64,
    /// `vz` is multiplied by `1 + U(-vz_frac, vz_frac)`.
    pub vz_frac: f64,
    /// Rotation about a random axis by `U(0, rot_deg)`.
    pub rot_deg: f64,
}

impl Default for NoiseBounds {
    fn default() -> Self {
        Self {
            vxy_px: 1.0,
            vz_frac: 0.05,
            rot_deg: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpConfig {
    pub inner_iterations: usize,
    pub min_correspondences: usize,
    /// Correspondences farther apart than this (meters) are dropped.
    pub max_distance: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            inner_iterations: 2,
            min_correspondences: 50,
            max_distance: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub iterations: usize,
    /// Stop once an update moves the point set by less than this (meters).
    pub early_stop: f64,
    pub viewset: ViewSetSpec,
    pub icp: IcpConfig,
    pub noise: NoiseBounds,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            early_stop: DEFAULT_EARLY_STOP,
            viewset: ViewSetSpec {
                channels: Channels::DEPTH_NORMALS,
                ..ViewSetSpec::default()
            },
            icp: IcpConfig::default(),
            noise: NoiseBounds::default(),
        }
    }
}

/// What a predictor gets to see at one iteration.
#[derive(Debug, Clone, Copy)]
pub struct PredictorInput<'a> {
    pub state: AnchoredPose,
    pub views: &'a [RenderedView],
    pub normalized: &'a [DepthMap],
    pub observed: &'a RenderedView,
}

/// Runs one predictor. `gt` is only read by the oracle variants.
pub fn predict(
    kind: PredictorKind,
    input: &PredictorInput<'_>,
    gt: Option<&Pose>,
    cfg: &RefineConfig,
    rng: &RngStream,
) -> Result<PoseUpdate, RefineError> {
    match kind {
        PredictorKind::Oracle => {
            let gt = gt.ok_or(RefineError::MissingGroundTruth(kind))?;
            Ok(target_update(&input.state, gt)?)
        }
        PredictorKind::NoisyOracle => {
            let gt = gt.ok_or(RefineError::MissingGroundTruth(kind))?;
            let u = target_update(&input.state, gt)?;
            Ok(add_noise(&u, &cfg.noise, rng))
        }
        PredictorKind::DepthIcp => {
            let delta = icp_point_to_plane(&input.views[0], input.observed, &cfg.icp)?;
            let target = delta.compose(&input.state.pose);
            Ok(target_update(&input.state, &target)?)
        }
    }
}

fn add_noise(u: &PoseUpdate, b: &NoiseBounds, rng: &RngStream) -> PoseUpdate {
    let mut r = rng.rng();
    let mut sym = |h: f64| if h > 0.0 { r.random_range(-h..=h) } else { 0.0 };
    let vx = u.vx + sym(b.vxy_px);
    let vy = u.vy + sym(b.vxy_px);
    let vz = u.vz * (1.0 + sym(b.vz_frac));
    let axis = Vec3::new(sym(1.0), sym(1.0), sym(1.0));
    let angle = sym(b.rot_deg).abs().to_radians();
    let noise = if axis.norm() > 1e-9 { axis_angle(&axis, angle) } else { Mat3::identity() };
    let rot = match rotation_from_6d(&u.rot) {
        Ok(m) => Rotation6D::from_matrix(&(noise * m)),
        Err(_) => u.rot,
    };
    PoseUpdate { vx, vy, vz, rot }
}

/// Point-to-plane ICP. Source points are the rendered view's valid pixels
/// with their normals; each is projected into the observed camera and paired
/// with the observed surface point at that pixel. Returns the camera-frame
/// motion that carries the rendered surface onto the observation.
pub fn icp_point_to_plane(
    rendered: &RenderedView,
    observed: &RenderedView,
    cfg: &IcpConfig,
) -> Result<Pose, RefineError> {
    let normals = rendered.normals.as_ref().ok_or(RefineError::MissingNormals)?;
    let cam = &rendered.camera;
    let mut src = Vec::new();
    for row in 0..cam.height {
        for col in 0..cam.width {
            let d = rendered.depth.get(col, row);
            if d > 0.0 {
                src.push((cam.pixel_ray(col, row) * d, normals.get(col, row)));
            }
        }
    }
    if src.len() < cfg.min_correspondences {
        return Err(RefineError::TooFewCorrespondences { found: src.len(), needed: cfg.min_correspondences });
    }
    let centroid = src.iter().map(|(p, _)| p).sum::<Vec3>() / src.len() as f64;
    let ocam = &observed.camera;
    let mut delta = Pose::identity();
    for _ in 0..cfg.inner_iterations.max(1) {
        let c = delta.transform_point(&centroid);
        let mut a = Matrix6::<f64>::zeros();
        let mut b = Vector6::<f64>::zeros();
        let mut found = 0usize;
        for (m, n) in &src {
            let p = delta.transform_point(m);
            let nn = delta.rotation * n;
            let Ok(uv) = ocam.project(&p) else { continue };
            if !(uv.x >= 0.0 && uv.y >= 0.0 && uv.x < ocam.width as f64 && uv.y < ocam.height as f64) {
                continue;
            }
            let (col, row) = (uv.x as usize, uv.y as usize);
            let d = observed.depth.get(col, row);
            if !(d > 0.0) {
                continue;
            }
            let q = ocam.pixel_ray(col, row) * d;
            if (q - p).norm() > cfg.max_distance {
                continue;
            }
            let r = (p - q).dot(&nn);
            let arm = (p - c).cross(&nn);
            let j = Vector6::new(arm.x, arm.y, arm.z, nn.x, nn.y, nn.z);
            a += j * j.transpose();
            b += j * r;
            found += 1;
        }
        if found < cfg.min_correspondences {
            return Err(RefineError::TooFewCorrespondences { found, needed: cfg.min_correspondences });
        }
        let x = a.cholesky().ok_or(RefineError::DegenerateIcp)?.solve(&(-b));
        let omega = Vec3::new(x[0], x[1], x[2]);
        let tau = Vec3::new(x[3], x[4], x[5]);
        let angle = omega.norm();
        let rot = if angle > 0.0 { axis_angle(&omega, angle) } else { Mat3::identity() };
        let step = Pose::new(rot, c - rot * c + tau);
        delta = step.compose(&delta);
    }
    Ok(delta)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineStep {
    pub iteration: usize,
    /// Pose after this iteration (held on failure).
    pub pose: [f64; 12],
    pub update: Option<[f64; 9]>,
    pub distance_to_gt: Option<f64>,
    pub update_magnitude: f64,
    /// Distance of the anchor's projection from the first view's center.
    pub anchor_offset_px: f64,
    pub failure: Option<String>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineTrace {
    pub predictor: PredictorKind,
    pub steps: Vec<RefineStep>,
    pub final_pose: Pose,
}

impl RefineTrace {
    pub fn failures(&self) -> usize {
        self.steps.iter().filter(|s| s.failure.is_some()).count()
    }

    pub fn write_jsonl<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

struct Iteration {
    pose: Pose,
    update: PoseUpdate,
    anchor_offset_px: f64,
}

fn iterate(
    observed: &RenderedView,
    object: &ObjectModel,
    pose: &Pose,
    kind: PredictorKind,
    gt: Option<&Pose>,
    cfg: &RefineConfig,
    rng: &RngStream,
) -> Result<Iteration, RefineError> {
    let views = make_viewset(&object.mesh, pose, &object.anchor, &observed.camera, &cfg.viewset)?;
    let anchor_cam = object.anchor.in_camera(pose);
    let normalized = views
        .iter()
        .map(|v| normalize_depth(&v.depth, anchor_cam.z))
        .collect::<Result<Vec<_>, _>>()?;
    let crop = views[0].camera;
    let center = crop.image_center();
    let anchor_offset_px = (crop.project_unchecked(&anchor_cam) - center).norm();
    let input = PredictorInput {
        state: AnchoredPose::new(*pose, object.anchor, crop),
        views: &views,
        normalized: &normalized,
        observed,
    };
    let update = predict(kind, &input, gt, cfg, rng)?;
    let next = apply_update(&input.state, &update)?;
    if !next.is_finite() {
        return Err(RefineError::NonFinite);
    }
    Ok(Iteration { pose: next, update, anchor_offset_px })
}

/// Refines `init` against `observed` for `cfg.iterations` steps, stopping
/// early once an update moves the object's point sample by less than
/// `cfg.early_stop`. A failed iteration is recorded and the pose held.
pub fn refine(
    observed: &RenderedView,
    object: &ObjectModel,
    init: &Pose,
    kind: PredictorKind,
    gt: Option<&Pose>,
    cfg: &RefineConfig,
    rng: &RngStream,
) -> Result<RefineTrace, RefineError> {
    if kind.needs_ground_truth() && gt.is_none() {
        return Err(RefineError::MissingGroundTruth(kind));
    }
    let first = make_viewset(
        &object.mesh,
        init,
        &object.anchor,
        &observed.camera,
        &ViewSetSpec { n_views: 1, channels: Channels::DEPTH, ..cfg.viewset },
    )?;
    if first[0].empty {
        return Err(RefineError::EmptyRender);
    }
    let mut pose = *init;
    let mut steps = Vec::with_capacity(cfg.iterations);
    for k in 0..cfg.iterations {
        let start = Instant::now();
        let result = iterate(observed, object, &pose, kind, gt, cfg, &rng.split(k as u64));
        let (update, magnitude, offset, failure) = match result {
            Ok(it) => {
                let magnitude = pose_distance(&object.points, &it.pose, &pose).unwrap_or(f64::NAN);
                pose = it.pose;
                (Some(it.update.to_array()), magnitude, it.anchor_offset_px, None)
            }
            Err(e) => (None, 0.0, f64::NAN, Some(e.to_string())),
        };
        steps.push(RefineStep {
            iteration: k,
            pose: pose.to_row_major(),
            update,
            distance_to_gt: gt.and_then(|g| pose_distance(&object.points, &pose, g).ok()),
            update_magnitude: magnitude,
            anchor_offset_px: offset,
            failure,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        if steps.last().is_some_and(|s| s.failure.is_none()) && magnitude < cfg.early_stop {
            break;
        }
    }
    Ok(RefineTrace { predictor: kind, steps, final_pose: pose })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasinRow {
    pub magnitude: f64,
    pub trials: usize,
    pub converged: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BasinSetup {
    pub perturbation: PerturbationConfig,
    pub thresholds: BasinThresholds,
}


/// Outcome of one basin trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasinTrial {
    pub init: Pose,
    /// `None` when refinement failed outright.
    pub final_pose: Option<Pose>,
    pub converged: bool,
}

/// For each magnitude `m`, perturbs `gt` at `m` times the training noise and
/// refines. Trials are returned per magnitude, in trial order. Runs that fail
/// outright count as not converged.
#[allow(clippy::too_many_arguments)]
pub fn basin_trials(
    observed: &RenderedView,
    object: &ObjectModel,
    gt: &Pose,
    kind: PredictorKind,
    magnitudes: &[f64],
    trials: usize,
    rng: &RngStream,
    cfg: &RefineConfig,
    setup: &BasinSetup,
) -> Vec<Vec<BasinTrial>> {
    magnitudes
        .iter()
        .enumerate()
        .map(|(mi, &m)| {
            let stream = rng.split(mi as u64);
            let pert = setup.perturbation.scaled(m);
            (0..trials)
                .into_par_iter()
                .map(|t| {
                    let trial = stream.split(t as u64);
                    let init = sample_perturbation(&mut trial.named("init").rng(), gt, &pert);
                    let final_pose = refine(observed, object, &init, kind, Some(gt), cfg, &trial.named("refine"))
                        .ok()
                        .map(|trace| trace.final_pose);
                    let converged = final_pose.is_some_and(|p| {
                        basin_label(&p, gt, &object.anchor, &setup.thresholds) == Label::Positive
                    });
                    BasinTrial { init, final_pose, converged }
                })
                .collect()
        })
        .collect()
}

pub fn basin_rows(magnitudes: &[f64], trials: &[Vec<BasinTrial>]) -> Vec<BasinRow> {
    magnitudes
        .iter()
        .zip(trials)
        .map(|(&magnitude, ts)| {
            let converged = ts.iter().filter(|t| t.converged).count();
            BasinRow {
                magnitude,
                trials: ts.len(),
                converged,
                rate: if ts.is_empty() { 0.0 } else { converged as f64 / ts.len() as f64 },
            }
        })
        .collect()
}

/// Convergence rate per magnitude; see [`basin_trials`].
#[allow(clippy::too_many_arguments)]
pub fn basin_experiment(
    observed: &RenderedView,
    object: &ObjectModel,
    gt: &Pose,
    kind: PredictorKind,
    magnitudes: &[f64],
    trials: usize,
    rng: &RngStream,
    cfg: &RefineConfig,
    setup: &BasinSetup,
) -> Vec<BasinRow> {
    let outcomes = basin_trials(observed, object, gt, kind, magnitudes, trials, rng, cfg, setup);
    basin_rows(magnitudes, &outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{euler_xyz_intrinsic, CameraModel};
    use crate::render::Image;
    use crate::mesh::{procedural_shape, ShapeKind};
    use crate::render::{default_light, render_with};

    fn object() -> ObjectModel {
        let mesh = procedural_shape(&ShapeKind::default_lshape()).unwrap().scaled(0.05);
        ObjectModel::new("lshape", mesh, &mut RngStream::new(0, 0).rng())
    }

    fn cam() -> CameraModel {
        CameraModel::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn gt() -> Pose {
        let r = euler_xyz_intrinsic(0.5, -0.4, 0.3);
        Pose::new(r, Vec3::new(0.02, -0.01, 0.6))
    }

    fn observed(obj: &ObjectModel, pose: &Pose) -> RenderedView {
        render_with(&obj.mesh, pose, &cam(), &default_light(), Channels::DEPTH)
    }

    #[test]
    fn normalize_examples() {
        let d = Image { width: 3, height: 1, data: vec![2.0, 10.0, 0.0] };
        let n = normalize_depth(&d, 2.0).unwrap();
        assert_eq!(n.data, vec![0.0, 0.5, -1.0]);
        assert!(normalize_depth(&d, 0.0).is_err());
        assert!(normalize_depth(&d, -1.0).is_err());
    }

    #[test]
    fn normalize_range_and_two_step_equality() {
        let mut rng = RngStream::new(1, 0).rng();
        for _ in 0..20 {
            let z: f64 = rng.random_range(0.2..3.0);
            let data: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..6.0)).collect();
            let d = Image { width: 16, height: 16, data: data.clone() };
            let n = normalize_depth(&d, z).unwrap();
            for (a, b) in n.data.iter().zip(&data) {
                let clipped = b.max(0.0).min(z + 1.0);
                assert_eq!(*a, clipped / z - 1.0);
                assert!(*a >= -1.0 && *a <= 1.0 / z + 1e-15);
            }
        }
    }

    #[test]
    fn normalize_is_invariant_to_depth_scale_inside_clip_range() {
        let mut rng = RngStream::new(2, 0).rng();
        for _ in 0..20 {
            let z: f64 = rng.random_range(0.3..2.0);
            let lambda: f64 = rng.random_range(0.25..4.0);
            let reach = 1.0f64.min(1.0 / lambda);
            let data: Vec<f64> = (0..256).map(|_| rng.random_range(0.0..z + reach)).collect();
            let d = Image { width: 16, height: 16, data };
            let a = normalize_depth(&d, z).unwrap();
            let b = normalize_depth(&d.map(|v| v * lambda), z * lambda).unwrap();
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn oracle_converges_in_one_step() {
        let obj = object();
        let gt = gt();
        let obs = observed(&obj, &gt);
        let init = sample_perturbation(&mut RngStream::new(3, 0).rng(), &gt, &PerturbationConfig::default());
        let trace = refine(&obs, &obj, &init, PredictorKind::Oracle, Some(&gt), &RefineConfig::default(), &RngStream::new(0, 0)).unwrap();
        assert!(trace.steps[0].distance_to_gt.unwrap() <= 1e-9);
        assert!(pose_distance(&obj.points, &trace.final_pose, &gt).unwrap() <= 1e-9);
        assert_eq!(trace.steps.len(), 2, "early stop after the null update");
        for s in &trace.steps {
            assert!(s.anchor_offset_px <= 0.5);
        }
    }

    #[test]
    fn oracle_requires_ground_truth() {
        let obj = object();
        let obs = observed(&obj, &gt());
        let r = refine(&obs, &obj, &gt(), PredictorKind::Oracle, None, &RefineConfig::default(), &RngStream::new(0, 0));
        assert_eq!(r.unwrap_err(), RefineError::MissingGroundTruth(PredictorKind::Oracle));
    }

    #[test]
    fn noisy_oracle_stays_in_basin() {
        let obj = object();
        let gt = gt();
        let obs = observed(&obj, &gt);
        let cfg = RefineConfig::default();
        let trace = refine(&obs, &obj, &gt, PredictorKind::NoisyOracle, Some(&gt), &cfg, &RngStream::new(4, 0)).unwrap();
        assert_eq!(trace.steps.len(), 5);
        for s in &trace.steps {
            let pose = Pose::from_row_major(&s.pose);
            assert_eq!(basin_label(&pose, &gt, &obj.anchor, &BasinThresholds::default()), Label::Positive);
        }
    }

    #[test]
    fn icp_fixed_point_at_ground_truth() {
        let obj = object();
        let gt = gt();
        let obs = observed(&obj, &gt);
        let trace = refine(&obs, &obj, &gt, PredictorKind::DepthIcp, None, &RefineConfig::default(), &RngStream::new(0, 0)).unwrap();
        assert_eq!(trace.failures(), 0);
        assert!(pose_distance(&obj.points, &trace.final_pose, &gt).unwrap() <= 1e-4);
    }

    #[test]
    fn icp_reduces_small_errors() {
        let obj = object();
        let gt = gt();
        let obs = observed(&obj, &gt);
        let mut improved = 0;
        for t in 0..10 {
            let init = sample_perturbation(&mut RngStream::new(5, t).rng(), &gt, &PerturbationConfig::default().scaled(0.5));
            let before = pose_distance(&obj.points, &init, &gt).unwrap();
            let trace = refine(&obs, &obj, &init, PredictorKind::DepthIcp, None, &RefineConfig::default(), &RngStream::new(0, 0)).unwrap();
            let after = pose_distance(&obj.points, &trace.final_pose, &gt).unwrap();
            if after < before {
                improved += 1;
            }
        }
        assert!(improved >= 8, "{improved}");
    }

    #[test]
    fn icp_reports_too_few_correspondences() {
        let obj = object();
        let gt = gt();
        let mut obs = observed(&obj, &gt);
        obs.depth.data.iter_mut().for_each(|d| *d = 0.0);
        let trace = refine(&obs, &obj, &gt, PredictorKind::DepthIcp, None, &RefineConfig::default(), &RngStream::new(0, 0)).unwrap();
        assert_eq!(trace.failures(), trace.steps.len());
        assert_eq!(trace.final_pose, gt);
        assert!(trace.steps[0].failure.as_ref().unwrap().contains("correspondences"));
    }

    #[test]
    fn refine_is_deterministic() {
        let obj = object();
        let gt = gt();
        let obs = observed(&obj, &gt);
        let init = sample_perturbation(&mut RngStream::new(6, 0).rng(), &gt, &PerturbationConfig::default());
        let run = || {
            refine(&obs, &obj, &init, PredictorKind::DepthIcp, None, &RefineConfig::default(), &RngStream::new(0, 0))
                .unwrap()
                .final_pose
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn basin_rates_for_oracle_and_zero_magnitude() {
        let obj = object();
        let gt = gt();
        let obs = observed(&obj, &gt);
        let cfg = RefineConfig::default();
        let rows = basin_experiment(&obs, &obj, &gt, PredictorKind::Oracle, &[0.5, 1.0, 2.0, 4.0], 10, &RngStream::new(7, 0), &cfg, &BasinSetup::default());
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.rate == 1.0));
        let rows = basin_experiment(&obs, &obj, &gt, PredictorKind::DepthIcp, &[0.0], 5, &RngStream::new(7, 0), &cfg, &BasinSetup::default());
        assert_eq!(rows[0].rate, 1.0);
    }
}
