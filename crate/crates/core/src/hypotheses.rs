//! Coarse pose hypotheses: the 26-camera cube around a seed pose, the
//! training set built from a perturbed ground truth, and the detection-seeded
//! test set.

use crate::geometry::{
    random_rotation, rot_z, rotation_geodesic_angle, sample_perturbation, CameraModel, Mat3,
    PerturbationConfig, Pose, RngStream, Vec3,
};
use crate::mesh::{AnchorPoint, TriMesh};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

pub const CUBE_CAMERAS: usize = 26;
pub const IN_PLANE_ROTATIONS: usize = 4;
pub const HYPOTHESES_PER_SEED: usize = CUBE_CAMERAS * IN_PLANE_ROTATIONS;
pub const DEFAULT_ORIENTATIONS: usize = 5;
pub const DEPTH_GUESS: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HypothesisError {
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
    #[error("at least one orientation is required")]
    NoOrientations,
    #[error("object crosses the camera plane at the guess depth")]
    GuessBehindCamera,
    #[error("projected guess has zero extent")]
    DegenerateGuess,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    TrainingCube,
    TestDetection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    pub poses: Vec<Pose>,
    pub labels: Option<Vec<Label>>,
    pub provenance: Provenance,
}

#[derive(Serialize)]
struct HypothesisRecord {
    pose: [f64; 12],
    label: Option<Label>,
    provenance: Provenance,
}

impl HypothesisSet {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels
            .as_ref()
            .map_or(0, |l| l.iter().filter(|&&x| x == Label::Positive).count())
    }

    /// One JSON object per line: `{pose, label, provenance}` with the pose as
    /// 12 row-major `[R|t]` values.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, pose) in self.poses.iter().enumerate() {
            let rec = HypothesisRecord {
                pose: pose.to_row_major(),
                label: self.labels.as_ref().map(|l| l[i]),
                provenance: self.provenance,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Approximate 2D box: center and size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub center: [f64; 2],
    pub size: [f64; 2],
}

impl Detection2D {
    pub fn validate(&self, cam: &CameraModel) -> Result<(), HypothesisError> {
        let [w, h] = self.size;
        if !(w > 0.0 && h > 0.0) {
            return Err(HypothesisError::InvalidDetection(format!("size {w}x{h}")));
        }
        let [u, v] = self.center;
        if !(u >= 0.0 && u <= cam.width as f64 && v >= 0.0 && v <= cam.height as f64) {
            return Err(HypothesisError::InvalidDetection(format!("center ({u}, {v}) outside image")));
        }
        Ok(())
    }
}

/// The 26 unit directions of `{-1, 0, 1}^3 \ {0}`, starting with `(0, 0, -1)`:
/// the camera that looks along `+z` at the cube center.
pub fn cube_directions() -> Vec<Vec3> {
    let mut dirs = vec![Vec3::new(0.0, 0.0, -1.0)];
    for x in -1..=1 {
        for y in -1..=1 {
            for z in -1..=1 {
                if (x, y, z) == (0, 0, 0) || (x, y, z) == (0, 0, -1) {
                    continue;
                }
                dirs.push(Vec3::new(x as f64, y as f64, z as f64).normalize());
            }
        }
    }
    dirs
}

/// Orientation of a cube camera sitting at `dir` from the cube center and
/// looking at it. Up is `+z` made orthogonal to the view axis, or `+x` at the
/// poles.
fn cube_camera_rotation(dir: &Vec3) -> Mat3 {
    let forward = -dir;
    let up = if forward.x.abs() < 1e-12 && forward.y.abs() < 1e-12 {
        Vec3::x()
    } else {
        Vec3::z()
    };
    crate::geometry::look_rotation(&forward, &-up)
}

/// Relative rotations applied to the seed orientation, in output order:
/// camera-major, then in-plane roll of 0, 90, 180 and 270 degrees. The first
/// entry is the identity.
pub fn cube_relative_rotations() -> Vec<Mat3> {
    let dirs = cube_directions();
    let l0 = cube_camera_rotation(&dirs[0]);
    let mut out = Vec::with_capacity(HYPOTHESES_PER_SEED);
    for d in &dirs {
        // Camera j relative to camera 0; the object seen from camera j is
        // rotated by its transpose.
        let m = cube_camera_rotation(d) * l0.transpose();
        for k in 0..IN_PLANE_ROTATIONS {
            let roll = rot_z(-(k as f64) * std::f64::consts::FRAC_PI_2);
            out.push(roll * m.transpose());
        }
    }
    out[0] = Mat3::identity();
    out
}

/// 104 poses around `seed`; the anchor keeps its camera-frame position and
/// only the viewing direction changes. Entry 0 is `seed` itself.
pub fn cube_hypotheses(seed: &Pose, anchor: &AnchorPoint) -> Vec<Pose> {
    let p = anchor.in_camera(seed);
    cube_relative_rotations()
        .iter()
        .enumerate()
        .map(|(i, rel)| {
            if i == 0 {
                *seed
            } else {
                let r = rel * seed.rotation;
                Pose::new(r, p - r * anchor.position)
            }
        })
        .collect()
}

/// Smallest rotation distance (radians) between the seed and any other
/// member of a cube set. Independent of the seed.
pub fn min_negative_angle() -> f64 {
    cube_relative_rotations()
        .iter()
        .skip(1)
        .map(|r| rotation_geodesic_angle(r, &Mat3::identity()))
        .fold(f64::INFINITY, f64::min)
}

/// Perturbs `gt` and builds the cube around the perturbed pose; only the
/// perturbed pose itself is labelled positive.
pub fn training_hypotheses(
    gt: &Pose,
    anchor: &AnchorPoint,
    rng: &RngStream,
    cfg: &PerturbationConfig,
) -> HypothesisSet {
    let perturbed = sample_perturbation(&mut rng.rng(), gt, cfg);
    let poses = cube_hypotheses(&perturbed, anchor);
    let mut labels = vec![Label::Negative; poses.len()];
    labels[0] = Label::Positive;
    HypothesisSet {
        poses,
        labels: Some(labels),
        provenance: Provenance::TrainingCube,
    }
}

/// Horizontal and vertical extent, in pixels, of `points` projected by `cam`.
/// Errors when any point is not in front of the camera.
pub fn projected_extent(cam: &CameraModel, points: impl IntoIterator<Item = Vec3>) -> Result<[f64; 2], HypothesisError> {
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        let uv = cam.project(&p).map_err(|_| HypothesisError::GuessBehindCamera)?;
        umin = umin.min(uv.x);
        umax = umax.max(uv.x);
        vmin = vmin.min(uv.y);
        vmax = vmax.max(uv.y);
    }
    Ok([umax - umin, vmax - vmin])
}

/// Anchor position on the ray through `det.center` at depth `z`.
pub fn anchor_on_detection_ray(det: &Detection2D, cam: &CameraModel, z: f64) -> Vec3 {
    cam.backproject(det.center[0], det.center[1], z)
}

/// Depth at which the object, seen with `rotation`, has roughly the
/// detection's size: the guess depth times the mean of the per-axis ratios
/// of guessed to detected extent.
pub fn rescale_depth(
    det: &Detection2D,
    cam: &CameraModel,
    points: &[Vec3],
    anchor: &AnchorPoint,
    rotation: &Mat3,
    z_guess: f64,
) -> Result<f64, HypothesisError> {
    let p = anchor_on_detection_ray(det, cam, z_guess);
    let pose = Pose::new(*rotation, p - rotation * anchor.position);
    let [gx, gy] = projected_extent(cam, points.iter().map(|x| pose.transform_point(x)))?;
    if !(gx > 0.0 && gy > 0.0) {
        return Err(HypothesisError::DegenerateGuess);
    }
    Ok(z_guess * 0.5 * (gx / det.size[0] + gy / det.size[1]))
}

/// Seed pose for one orientation: the anchor on the detection ray at the
/// rescaled depth.
pub fn detection_seed_pose(
    det: &Detection2D,
    cam: &CameraModel,
    points: &[Vec3],
    anchor: &AnchorPoint,
    rotation: &Mat3,
) -> Result<Pose, HypothesisError> {
    let z = rescale_depth(det, cam, points, anchor, rotation, DEPTH_GUESS)?;
    let p = anchor_on_detection_ray(det, cam, z);
    Ok(Pose::new(*rotation, p - rotation * anchor.position))
}

/// `n_orientations * 104` unlabelled poses seeded by a detection. Orientation
/// `p` comes from `rng.split(p)`, so sets for growing counts are nested.
pub fn test_hypotheses(
    det: &Detection2D,
    cam: &CameraModel,
    mesh: &TriMesh,
    anchor: &AnchorPoint,
    n_orientations: usize,
    rng: &RngStream,
) -> Result<HypothesisSet, HypothesisError> {
    det.validate(cam)?;
    if n_orientations == 0 {
        return Err(HypothesisError::NoOrientations);
    }
    let batches: Vec<Vec<Pose>> = (0..n_orientations)
        .into_par_iter()
        .map(|p| {
            let rotation = random_rotation(&mut rng.split(p as u64).rng());
            let seed = detection_seed_pose(det, cam, &mesh.vertices, anchor, &rotation)?;
            Ok(cube_hypotheses(&seed, anchor))
        })
        .collect::<Result<_, HypothesisError>>()?;
    Ok(HypothesisSet {
        poses: batches.into_iter().flatten().collect(),
        labels: None,
        provenance: Provenance::TestDetection,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasinThresholds {
    pub translation_m: f64,
    pub rotation_deg: f64,
}

impl Default for BasinThresholds {
    fn default() -> Self {
        Self {
            translation_m: 0.05,
            rotation_deg: 15.0,
        }
    }
}

/// Positive iff the anchor moved at most `translation_m` and the geodesic
/// rotation error is at most `rotation_deg`.
pub fn basin_label(hyp: &Pose, gt: &Pose, anchor: &AnchorPoint, th: &BasinThresholds) -> Label {
    let dt = (anchor.in_camera(hyp) - anchor.in_camera(gt)).norm();
    let dr = rotation_geodesic_angle(&hyp.rotation, &gt.rotation).to_degrees();
    if dt <= th.translation_m && dr <= th.rotation_deg {
        Label::Positive
    } else {
        Label::Negative
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle, euler_xyz_intrinsic};
    use crate::loss::pose_distance;
    use crate::mesh::{default_anchor, procedural_shape, ShapeKind};
    use rand::Rng;

    // Floor on the rotation distance between the positive and any negative,
    // computed once from the cube construction: the nearest cameras are the
    // edge midpoints adjacent to C0, 45 degrees off its view axis.
    const MIN_NEGATIVE_DEG: f64 = 45.0;

    fn anchor() -> AnchorPoint {
        AnchorPoint::new(Vec3::new(0.02, -0.01, 0.03))
    }

    #[test]
    fn directions_are_closed_under_symmetries() {
        let dirs = cube_directions();
        assert_eq!(dirs.len(), 26);
        let contains = |v: Vec3| dirs.iter().any(|d| (d - v).norm() < 1e-12);
        for d in &dirs {
            assert!((d.norm() - 1.0).abs() < 1e-12);
            assert!(contains(-d));
            assert!(contains(Vec3::new(d.y, d.x, d.z)));
            assert!(contains(Vec3::new(d.z, d.y, d.x)));
            assert!(contains(Vec3::new(d.x, d.z, d.y)));
        }
        let kinds = |n: usize| dirs.iter().filter(|d| d.iter().filter(|c| c.abs() > 1e-9).count() == n).count();
        assert_eq!((kinds(1), kinds(2), kinds(3)), (6, 12, 8));
    }

    #[test]
    fn relative_rotations_are_distinct_rotations() {
        let rots = cube_relative_rotations();
        assert_eq!(rots.len(), 104);
        for r in &rots {
            assert!((r * r.transpose() - Mat3::identity()).amax() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
        for i in 0..rots.len() {
            for j in 0..i {
                assert!(rotation_geodesic_angle(&rots[i], &rots[j]) > 0.1);
            }
        }
    }

    #[test]
    fn negatives_are_far_from_positive() {
        let min = min_negative_angle().to_degrees();
        assert!(min >= 30.0);
        assert!((min - MIN_NEGATIVE_DEG).abs() < 1e-9, "{min}");
    }

    #[test]
    fn training_set_counts_and_positive() {
        let gt = Pose::new(euler_xyz_intrinsic(0.3, -0.2, 0.9), Vec3::new(0.05, -0.02, 0.7));
        let rng = RngStream::new(7, 0);
        let cfg = PerturbationConfig::default();
        let set = training_hypotheses(&gt, &anchor(), &rng, &cfg);
        assert_eq!(set.len(), 104);
        assert_eq!(set.positives(), 1);
        let perturbed = sample_perturbation(&mut rng.rng(), &gt, &cfg);
        let pts: Vec<Vec3> = (0..8).map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64) * 0.1).collect();
        assert!(pose_distance(&pts, &set.poses[0], &perturbed).unwrap() <= 1e-9);
        for pose in &set.poses[1..] {
            let a = rotation_geodesic_angle(&pose.rotation, &perturbed.rotation).to_degrees();
            assert!(a >= 30.0);
            assert!((anchor().in_camera(pose) - anchor().in_camera(&perturbed)).norm() < 1e-12);
        }
        assert_eq!(set, training_hypotheses(&gt, &anchor(), &rng, &cfg));
    }

    #[test]
    fn unperturbed_cube_views_match_camera_placement() {
        // With the anchor at the origin, hypothesis rotations equal the
        // object orientation seen from each cube camera.
        let seed = Pose::new(euler_xyz_intrinsic(0.1, 0.2, 0.3), Vec3::new(0.0, 0.0, 1.0));
        let poses = cube_hypotheses(&seed, &AnchorPoint::new(Vec3::zeros()));
        let dirs = cube_directions();
        for (j, d) in dirs.iter().enumerate() {
            // Object center seen from camera j lies on its optical axis, so
            // the direction to the camera, rotated into camera j, is -z.
            let view = poses[4 * j].rotation * seed.rotation.transpose();
            let seen = view * d;
            assert!((seen - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12, "{j}");
        }
    }

    fn lshape() -> TriMesh {
        procedural_shape(&ShapeKind::default_lshape()).unwrap().scaled(0.05)
    }

    fn cam() -> CameraModel {
        CameraModel::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn exact_detection(cam: &CameraModel, pose: &Pose, mesh: &TriMesh, anchor: &AnchorPoint) -> Detection2D {
        let uv = cam.project(&anchor.in_camera(pose)).unwrap();
        let size = projected_extent(cam, mesh.vertices.iter().map(|v| pose.transform_point(v))).unwrap();
        Detection2D { center: [uv.x, uv.y], size }
    }

    #[test]
    fn test_set_count_and_nesting() {
        let mesh = lshape();
        let a = default_anchor(&mesh);
        let det = Detection2D { center: [300.0, 250.0], size: [60.0, 40.0] };
        let rng = RngStream::new(3, 1);
        let five = test_hypotheses(&det, &cam(), &mesh, &a, 5, &rng).unwrap();
        assert_eq!(five.len(), 520);
        assert!(five.labels.is_none());
        let ten = test_hypotheses(&det, &cam(), &mesh, &a, 10, &rng).unwrap();
        assert_eq!(ten.len(), 1040);
        assert_eq!(&ten.poses[..520], &five.poses[..]);
    }

    #[test]
    fn test_set_rejects_bad_input() {
        let mesh = lshape();
        let a = default_anchor(&mesh);
        let rng = RngStream::new(3, 1);
        let zero = Detection2D { center: [300.0, 250.0], size: [0.0, 40.0] };
        assert!(matches!(test_hypotheses(&zero, &cam(), &mesh, &a, 5, &rng), Err(HypothesisError::InvalidDetection(_))));
        let outside = Detection2D { center: [-3.0, 250.0], size: [10.0, 40.0] };
        assert!(test_hypotheses(&outside, &cam(), &mesh, &a, 5, &rng).is_err());
        let det = Detection2D { center: [300.0, 250.0], size: [10.0, 40.0] };
        assert_eq!(test_hypotheses(&det, &cam(), &mesh, &a, 0, &rng), Err(HypothesisError::NoOrientations));
    }

    #[test]
    fn rescale_fixed_point() {
        let mesh = lshape();
        let a = default_anchor(&mesh);
        let r = euler_xyz_intrinsic(0.4, 0.1, -0.3);
        let guess = Pose::new(r, cam().backproject(350.0, 200.0, 1.0) - r * a.position);
        let det = exact_detection(&cam(), &guess, &mesh, &a);
        let z = rescale_depth(&det, &cam(), &mesh.vertices, &a, &r, 1.0).unwrap();
        assert!((z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rescale_recovers_depth_from_exact_boxes() {
        let mesh = lshape();
        let a = default_anchor(&mesh);
        let mut rng = RngStream::new(5, 0).rng();
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let z = rng.random_range(0.4..2.0);
            let p = cam().backproject(rng.random_range(200.0..440.0), rng.random_range(150.0..330.0), z);
            let gt = Pose::new(r, p - r * a.position);
            let det = exact_detection(&cam(), &gt, &mesh, &a);
            let est = rescale_depth(&det, &cam(), &mesh.vertices, &a, &r, 1.0).unwrap();
            assert!((est - z).abs() / z < 0.15, "{est} vs {z}");
        }
    }

    #[test]
    fn rescale_is_scale_consistent() {
        let mesh = lshape();
        let a = default_anchor(&mesh);
        let mut rng = RngStream::new(6, 0).rng();
        for _ in 0..50 {
            let r = random_rotation(&mut rng);
            let ray = cam().backproject(rng.random_range(250.0..390.0), rng.random_range(180.0..300.0), 1.0);
            let z = rng.random_range(0.6..1.2);
            let est = |depth: f64| {
                let gt = Pose::new(r, ray * depth - r * a.position);
                let det = exact_detection(&cam(), &gt, &mesh, &a);
                (det, rescale_depth(&det, &cam(), &mesh.vertices, &a, &r, 1.0).unwrap())
            };
            let (d1, e1) = est(z);
            let (d2, e2) = est(2.0 * z);
            assert!(d2.size[0] < d1.size[0] && d2.size[1] < d1.size[1]);
            assert!((e2 / e1 - 2.0).abs() < 0.02 * 2.0, "{}", e2 / e1);
        }
    }

    #[test]
    fn basin_label_thresholds() {
        let a = anchor();
        let gt = Pose::new(euler_xyz_intrinsic(0.1, 0.2, 0.3), Vec3::new(0.0, 0.0, 0.8));
        let th = BasinThresholds::default();
        assert_eq!(basin_label(&gt, &gt, &a, &th), Label::Positive);
        let shifted = Pose::new(gt.rotation, gt.translation + Vec3::new(0.2, 0.0, 0.0));
        assert_eq!(basin_label(&shifted, &gt, &a, &th), Label::Negative);
        let axis = Vec3::new(0.3, -0.5, 0.8);
        for (deg, expect) in [(15.0 + 1e-6, Label::Negative), (15.0 - 1e-6, Label::Positive)] {
            // Rotate about the anchor so its position is unchanged.
            let r = axis_angle(&axis, f64::to_radians(deg)) * gt.rotation;
            let p = a.in_camera(&gt);
            let hyp = Pose::new(r, p - r * a.position);
            assert_eq!(basin_label(&hyp, &gt, &a, &th), expect);
        }
    }

    #[test]
    fn jsonl_dump_shape() {
        let gt = Pose::new(Mat3::identity(), Vec3::new(0.0, 0.0, 1.0));
        let set = training_hypotheses(&gt, &anchor(), &RngStream::new(1, 0), &PerturbationConfig::default());
        let mut buf = Vec::new();
        set.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 104);
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first["pose"].as_array().unwrap().len(), 12);
        assert_eq!(first["label"], "positive");
        assert_eq!(first["provenance"], "training_cube");
    }
}
