//! Hypothesis scoring, argmax selection, and the coarse-then-refine pipeline.

use crate::geometry::{rotation_geodesic_angle, CameraModel, Pose, RngStream};
use crate::hypotheses::{
    basin_label, test_hypotheses, BasinThresholds, Detection2D, HypothesisError, HypothesisSet,
    Label, DEFAULT_ORIENTATIONS,
};
use crate::mesh::ObjectModel;
use crate::refiner::{normalize_depth, refine, PredictorKind, RefineConfig, RefineError, RefineTrace};
use crate::render::{anchor_centered_camera, render_with, resample_depth, Channels, RenderedView, CROP_MARGIN};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoarseError {
    #[error("hypothesis set is empty")]
    EmptySet,
    #[error("scorer {0:?} needs the ground-truth pose")]
    MissingGroundTruth(ScorerKind),
    #[error(transparent)]
    Hypotheses(#[from] HypothesisError),
    #[error(transparent)]
    Refine(#[from] RefineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    /// 1 for in-basin hypotheses, 0 otherwise, minus a small error tie-breaker.
    OracleBasin,
    /// Negative mean squared normalized-depth residual.
    DepthL2,
    /// Silhouette IoU.
    MaskIou,
}

impl ScorerKind {
    pub fn name(self) -> &'static str {
        match self {
            ScorerKind::OracleBasin => "oracle_basin",
            ScorerKind::DepthL2 => "depth_l2",
            ScorerKind::MaskIou => "mask_iou",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoarseConfig {
    /// Side of the square crop each hypothesis is rendered into.
    pub resolution: usize,
    pub margin: f64,
    pub orientations: usize,
    pub thresholds: BasinThresholds,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            margin: CROP_MARGIN,
            orientations: DEFAULT_ORIENTATIONS,
            thresholds: BasinThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHypotheses {
    pub set: HypothesisSet,
    pub scores: Vec<f64>,
    pub selected: usize,
}

impl ScoredHypotheses {
    pub fn selected_pose(&self) -> Pose {
        self.set.poses[self.selected]
    }
}

/// Index of the largest score; NaN counts as `-inf` and ties go to the lowest
/// index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &s) in scores.iter().enumerate() {
        let s = if s.is_nan() { f64::NEG_INFINITY } else { s };
        if s > best_v {
            best = i;
            best_v = s;
        }
    }
    best
}

fn oracle_score(hyp: &Pose, gt: &Pose, object: &ObjectModel, th: &BasinThresholds) -> f64 {
    let dt = (object.anchor.in_camera(hyp) - object.anchor.in_camera(gt)).norm() / th.translation_m;
    let dr = rotation_geodesic_angle(&hyp.rotation, &gt.rotation).to_degrees() / th.rotation_deg;
    let base = if basin_label(hyp, gt, &object.anchor, th) == Label::Positive { 1.0 } else { 0.0 };
    base - 1e-3 * (dt + dr).min(500.0)
}

fn image_score(observed: &RenderedView, object: &ObjectModel, hyp: &Pose, kind: ScorerKind, cfg: &CoarseConfig) -> f64 {
    let Ok(crop) = anchor_centered_camera(&observed.camera, hyp, &object.anchor, object.radius(), cfg.resolution, cfg.margin) else {
        return f64::NEG_INFINITY;
    };
    let view = render_with(&object.mesh, hyp, &crop.camera, &crate::render::default_light(), Channels::DEPTH);
    if view.empty {
        return f64::NEG_INFINITY;
    }
    let obs = resample_depth(&observed.depth, &observed.camera, &crop.camera);
    match kind {
        ScorerKind::DepthL2 => {
            let z = object.anchor.in_camera(hyp).z;
            let (Ok(a), Ok(b)) = (normalize_depth(&view.depth, z), normalize_depth(&obs, z)) else {
                return f64::NEG_INFINITY;
            };
            let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
            -sum / a.data.len() as f64
        }
        ScorerKind::MaskIou => {
            let (mut inter, mut union) = (0usize, 0usize);
            for (r, o) in view.depth.data.iter().zip(&obs.data) {
                let (r, o) = (*r > 0.0, *o > 0.0);
                inter += (r && o) as usize;
                union += (r || o) as usize;
            }
            if union == 0 { 0.0 } else { inter as f64 / union as f64 }
        }
        ScorerKind::OracleBasin => unreachable!(),
    }
}

/// Scores every hypothesis. Image scorers render one anchor-centered view per
/// pose and compare it with the observed depth resampled into the same crop;
/// poses that cannot be rendered score `-inf`.
pub fn score_hypotheses(
    observed: &RenderedView,
    object: &ObjectModel,
    set: HypothesisSet,
    kind: ScorerKind,
    gt: Option<&Pose>,
    cfg: &CoarseConfig,
) -> Result<ScoredHypotheses, CoarseError> {
    if set.is_empty() {
        return Err(CoarseError::EmptySet);
    }
    let scores: Vec<f64> = match kind {
        ScorerKind::OracleBasin => {
            let gt = gt.ok_or(CoarseError::MissingGroundTruth(kind))?;
            set.poses.par_iter().map(|h| oracle_score(h, gt, object, &cfg.thresholds)).collect()
        }
        _ => set.poses.par_iter().map(|h| image_score(observed, object, h, kind, cfg)).collect(),
    };
    let selected = argmax(&scores);
    Ok(ScoredHypotheses { set, scores, selected })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub scored: ScoredHypotheses,
    pub trace: RefineTrace,
    pub final_pose: Pose,
    /// Whether the selected hypothesis lies in the basin (ground truth known).
    pub selected_in_basin: Option<bool>,
    /// Whether any hypothesis lies in the basin (ground truth known).
    pub any_in_basin: Option<bool>,
}

/// Detection-seeded hypotheses, scoring, argmax, then refinement from the
/// selected pose. `gt` feeds the oracle variants and the diagnostics only.
#[allow(clippy::too_many_arguments)]
pub fn coarse_then_refine(
    observed: &RenderedView,
    object: &ObjectModel,
    det: &Detection2D,
    cam: &CameraModel,
    scorer: ScorerKind,
    predictor: PredictorKind,
    gt: Option<&Pose>,
    coarse: &CoarseConfig,
    refine_cfg: &RefineConfig,
    rng: &RngStream,
) -> Result<PipelineOutcome, CoarseError> {
    let set = test_hypotheses(det, cam, &object.mesh, &object.anchor, coarse.orientations, &rng.named("hypotheses"))?;
    let scored = score_hypotheses(observed, object, set, scorer, gt, coarse)?;
    let start = scored.selected_pose();
    let trace = refine(observed, object, &start, predictor, gt, refine_cfg, &rng.named("refine"))?;
    let in_basin = |p: &Pose, g: &Pose| basin_label(p, g, &object.anchor, &coarse.thresholds) == Label::Positive;
    Ok(PipelineOutcome {
        final_pose: trace.final_pose,
        selected_in_basin: gt.map(|g| in_basin(&start, g)),
        any_in_basin: gt.map(|g| scored.set.poses.iter().any(|p| in_basin(p, g))),
        scored,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{euler_xyz_intrinsic, PerturbationConfig, Vec3};
    use crate::hypotheses::{projected_extent, training_hypotheses, Provenance};
    use crate::loss::pose_distance;
    use crate::mesh::{procedural_shape, ShapeKind};
    use crate::render::default_light;

    fn object() -> ObjectModel {
        let mesh = procedural_shape(&ShapeKind::default_lshape()).unwrap().scaled(0.05);
        ObjectModel::new("lshape", mesh, &mut RngStream::new(0, 0).rng())
    }

    fn cam() -> CameraModel {
        CameraModel::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn gt() -> Pose {
        Pose::new(euler_xyz_intrinsic(0.5, -0.4, 0.3), Vec3::new(0.02, -0.01, 0.6))
    }

    fn observed(obj: &ObjectModel, pose: &Pose) -> RenderedView {
        render_with(&obj.mesh, pose, &cam(), &default_light(), Channels::DEPTH)
    }

    #[test]
    fn argmax_ties_and_nan() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[f64::NEG_INFINITY; 4]), 0);
        assert_eq!(argmax(&[f64::NAN, 0.5]), 1);
    }

    #[test]
    fn argmax_invariant_under_monotone_transform() {
        let mut rng = RngStream::new(1, 0).rng();
        use rand::Rng;
        for _ in 0..50 {
            let s: Vec<f64> = (0..30).map(|_| rng.random_range(-3.0..3.0)).collect();
            let t: Vec<f64> = s.iter().map(|v| v.exp() * 2.0 + 1.0).collect();
            assert_eq!(argmax(&s), argmax(&t));
        }
    }

    #[test]
    fn oracle_picks_training_positive() {
        let obj = object();
        let gt = gt();
        let set = training_hypotheses(&gt, &obj.anchor, &RngStream::new(2, 0), &PerturbationConfig::default());
        let obs = observed(&obj, &gt);
        let scored = score_hypotheses(&obs, &obj, set, ScorerKind::OracleBasin, Some(&gt), &CoarseConfig::default()).unwrap();
        // The positive may fall outside the thresholds for an unlucky
        // perturbation; it still has the smallest error.
        assert_eq!(scored.selected, 0);
    }

    #[test]
    fn unrenderable_hypotheses_score_minus_infinity() {
        let obj = object();
        let obs = observed(&obj, &gt());
        let behind = Pose::from_translation(Vec3::new(0.0, 0.0, -1.0));
        let set = HypothesisSet { poses: vec![behind; 3], labels: None, provenance: Provenance::TestDetection };
        for kind in [ScorerKind::DepthL2, ScorerKind::MaskIou] {
            let s = score_hypotheses(&obs, &obj, set.clone(), kind, None, &CoarseConfig::default()).unwrap();
            assert!(s.scores.iter().all(|v| *v == f64::NEG_INFINITY));
            assert_eq!(s.selected, 0);
        }
    }

    #[test]
    fn image_scorers_prefer_ground_truth() {
        let obj = object();
        let gt = gt();
        let obs = observed(&obj, &gt);
        let mut set = training_hypotheses(&gt, &obj.anchor, &RngStream::new(3, 0), &PerturbationConfig::default().scaled(0.0));
        set.poses[0] = gt;
        for kind in [ScorerKind::DepthL2, ScorerKind::MaskIou] {
            let s = score_hypotheses(&obs, &obj, set.clone(), kind, None, &CoarseConfig::default()).unwrap();
            assert_eq!(s.selected, 0, "{kind:?}");
            let again = score_hypotheses(&obs, &obj, set.clone(), kind, None, &CoarseConfig::default()).unwrap();
            assert_eq!(s.scores, again.scores);
        }
    }

    #[test]
    fn oracle_pipeline_recovers_ground_truth() {
        let obj = object();
        let gt = gt();
        let obs = observed(&obj, &gt);
        let uv = cam().project(&obj.anchor.in_camera(&gt)).unwrap();
        let size = projected_extent(&cam(), obj.mesh.vertices.iter().map(|v| gt.transform_point(v))).unwrap();
        let det = Detection2D { center: [uv.x, uv.y], size };
        let out = coarse_then_refine(
            &obs,
            &obj,
            &det,
            &cam(),
            ScorerKind::OracleBasin,
            PredictorKind::Oracle,
            Some(&gt),
            &CoarseConfig::default(),
            &RefineConfig::default(),
            &RngStream::new(4, 0),
        )
        .unwrap();
        assert_eq!(out.scored.set.len(), 520);
        assert!(pose_distance(&obj.points, &out.final_pose, &gt).unwrap() <= 1e-9);
        if out.any_in_basin == Some(true) {
            assert_eq!(out.selected_in_basin, Some(true));
        }
    }
}
