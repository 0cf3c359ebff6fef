//! Randomized invariant checks shared by `selftest` and the acceptance suite.
//! Each check draws from its own named stream, so results depend only on the
//! seed and the trial count.

use megarefine_core::geometry::{
    random_rotation, sample_perturbation, CameraModel, PerturbationConfig, Pose, RngStream, Vec3,
};
use megarefine_core::hypotheses::{
    rescale_depth, test_hypotheses, training_hypotheses, HYPOTHESES_PER_SEED,
};
use megarefine_core::loss::{disentangled_loss, loss_gradient, pose_distance, LossBreakdown};
use megarefine_core::mesh::{procedural_shape, sample_surface_points, AnchorPoint, ShapeKind, TriMesh};
use megarefine_core::pose_update::{
    anchor_dependency_gap, apply_update, depth_gap_closed_form, target_update, AnchoredPose, PoseUpdate,
};
use megarefine_core::refiner::normalize_depth;
use megarefine_core::render::{
    default_light, make_viewset, render_with, view_camera_pose, Channels, Image, ViewSetSpec, NO_INSTANCE,
};
use megarefine_core::scene::silhouette_box;
use megarefine_core::ObjectModel;
use rand::Rng;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {} ({:.2}s): {}", self.name, self.seconds, self.detail)
    }
}

fn timed(name: &'static str, body: impl FnOnce() -> (bool, String)) -> Check {
    let start = Instant::now();
    let (passed, detail) = body();
    Check { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

fn range<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn random_camera<R: Rng>(rng: &mut R) -> CameraModel {
    let f = range(rng, 200.0, 800.0);
    CameraModel { fx: f, fy: f * range(rng, 0.9, 1.1), cx: 80.0, cy: 80.0, width: 160, height: 160 }
}

fn random_pose<R: Rng>(rng: &mut R) -> Pose {
    Pose::new(
        random_rotation(rng),
        Vec3::new(range(rng, -0.2, 0.2), range(rng, -0.2, 0.2), range(rng, 0.4, 1.5)),
    )
}

fn small_vec<R: Rng>(rng: &mut R, r: f64) -> Vec3 {
    Vec3::new(range(rng, -r, r), range(rng, -r, r), range(rng, -r, r))
}

fn random_target<R: Rng>(rng: &mut R, base: &Pose) -> Pose {
    Pose::new(
        random_rotation(rng),
        base.translation + Vec3::new(range(rng, -0.1, 0.1), range(rng, -0.1, 0.1), range(rng, -0.2, 0.3)),
    )
}

fn lshape(scale: f64) -> TriMesh {
    procedural_shape(&ShapeKind::default_lshape()).expect("built-in shape").scaled(scale)
}

/// The rotation part of the update does not depend on the anchor, even when
/// the second anchoring uses a different object frame.
pub fn anchor_rotation_invariance(trials: usize, seed: u64) -> Check {
    timed("anchor rotation invariance", || {
        let mut rng = RngStream::new(seed, 0).named("anchor-rotation").rng();
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let cam = random_camera(&mut rng);
            let pose = random_pose(&mut rng);
            let state1 = AnchoredPose::new(pose, AnchorPoint::new(small_vec(&mut rng, 0.05)), cam);
            let frame = Pose::new(random_rotation(&mut rng), small_vec(&mut rng, 0.03));
            let state2 = AnchoredPose::new(pose.compose(&frame), AnchorPoint::new(small_vec(&mut rng, 0.05)), cam);
            let target = random_target(&mut rng, &pose);
            match anchor_dependency_gap(&state1, &state2, &target) {
                Ok(g) => worst = worst.max(g.rot_gap_angle),
                Err(e) => return (false, format!("update failed: {e}")),
            }
        }
        (worst <= 1e-9, format!("max rotation gap {worst:.3e} rad over {trials} trials"))
    })
}

/// With both anchors on one line along the camera `z` axis and a pure depth
/// move, the depth-ratio gap equals the closed form.
pub fn anchor_depth_closed_form(trials: usize, seed: u64) -> Check {
    timed("anchor depth gap closed form", || {
        let hand = depth_gap_closed_form(1.0, 1.2, 0.5);
        if (hand - 1.0 / 15.0).abs() > 1e-12 {
            return (false, format!("hand case gave {hand}"));
        }
        let mut rng = RngStream::new(seed, 0).named("anchor-depth").rng();
        let mut worst = 0.0f64;
        let mut run = |pose: Pose, p1: Vec3, z12: f64, dz: f64, cam: CameraModel| -> Result<(), String> {
            let p2 = p1 + Vec3::new(0.0, 0.0, z12);
            let to_object = |p: Vec3| AnchorPoint::new(pose.inverse().transform_point(&p));
            let s1 = AnchoredPose::new(pose, to_object(p1), cam);
            let s2 = AnchoredPose::new(pose, to_object(p2), cam);
            let target = Pose::new(pose.rotation, pose.translation + Vec3::new(0.0, 0.0, dz));
            let gap = anchor_dependency_gap(&s1, &s2, &target).map_err(|e| e.to_string())?;
            let expected = depth_gap_closed_form(p1.z, p1.z + dz, z12);
            worst = worst.max((gap.dvz - expected).abs());
            Ok(())
        };
        let hand_pose = Pose::from_translation(Vec3::new(0.0, 0.0, 1.0));
        if let Err(e) = run(hand_pose, Vec3::new(0.0, 0.0, 1.0), 0.5, 0.2, random_camera(&mut rng)) {
            return (false, e);
        }
        for _ in 0..trials {
            let pose = random_pose(&mut rng);
            let p1 = Vec3::new(range(&mut rng, -0.2, 0.2), range(&mut rng, -0.2, 0.2), range(&mut rng, 0.4, 1.5));
            // Both anchors stay in front of the camera before and after.
            let z12 = range(&mut rng, -0.5 * p1.z, 0.5);
            let dz = range(&mut rng, -0.5 * p1.z.min(p1.z + z12), 0.3);
            let cam = random_camera(&mut rng);
            if let Err(e) = run(pose, p1, z12, dz, cam) {
                return (false, e);
            }
        }
        (worst <= 1e-9, format!("hand case 1/15 exact; max |dvz - closed form| {worst:.3e}"))
    })
}

fn corners(half: f64) -> Vec<Vec3> {
    (0..8)
        .map(|i| {
            let s = |b: i32| if i & b == 0 { -half } else { half };
            Vec3::new(s(1), s(2), s(4))
        })
        .collect()
}

/// Applying the target update of a state lands on the target.
pub fn update_round_trip(trials: usize, seed: u64) -> Check {
    timed("pose update round trip", || {
        let mut rng = RngStream::new(seed, 0).named("round-trip").rng();
        let pts = corners(0.05);
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let state = AnchoredPose::new(
                random_pose(&mut rng),
                AnchorPoint::new(small_vec(&mut rng, 0.05)),
                random_camera(&mut rng),
            );
            let target = random_target(&mut rng, &state.pose);
            let back = target_update(&state, &target).and_then(|u| apply_update(&state, &u));
            match back {
                Ok(p) => worst = worst.max(pose_distance(&pts, &p, &target).unwrap_or(f64::INFINITY)),
                Err(e) => return (false, e.to_string()),
            }
        }
        (worst <= 1e-9, format!("max pose distance {worst:.3e} m over {trials} trials"))
    })
}

const FD_STEP: f64 = 1e-5;

fn loss_at(pts: &[Vec3], state: &AnchoredPose, a: &[f64; 9], target: &Pose) -> LossBreakdown {
    disentangled_loss(pts, state, &PoseUpdate::from_array(a), target).expect("valid loss inputs")
}

/// Central differences of every term w.r.t. every update value.
fn fd_terms(pts: &[Vec3], state: &AnchoredPose, u: &PoseUpdate, target: &Pose) -> [[f64; 9]; 4] {
    let base = u.to_array();
    let mut out = [[0.0; 9]; 4];
    for j in 0..9 {
        let (mut p, mut m) = (base, base);
        p[j] += FD_STEP;
        m[j] -= FD_STEP;
        let (lp, lm) = (loss_at(pts, state, &p, target), loss_at(pts, state, &m, target));
        let d = |a: f64, b: f64| (a - b) / (2.0 * FD_STEP);
        out[0][j] = d(lp.term_xy, lm.term_xy);
        out[1][j] = d(lp.term_z, lm.term_z);
        out[2][j] = d(lp.term_rot, lm.term_rot);
        out[3][j] = d(lp.total, lm.total);
    }
    out
}

/// A piecewise-linear term has a nonzero second difference only when a kink
/// lies inside the stencil, where finite differences are meaningless.
fn stencil_has_kink(pts: &[Vec3], state: &AnchoredPose, u: &PoseUpdate, target: &Pose) -> bool {
    let a = u.to_array();
    let base = loss_at(pts, state, &a, target).total;
    (0..9).any(|j| {
        let (mut p, mut m) = (a, a);
        p[j] += FD_STEP;
        m[j] -= FD_STEP;
        (loss_at(pts, state, &p, target).total + loss_at(pts, state, &m, target).total - 2.0 * base).abs() > 1e-9
    })
}

/// Analytic loss gradient against central differences, and zero partials of
/// each term w.r.t. the other terms' update values.
pub fn loss_gradient_check(configs: usize, seed: u64) -> Check {
    timed("disentangled loss gradient", || {
        let stream = RngStream::new(seed, 0).named("gradient");
        let pts: Vec<Vec3> =
            sample_surface_points(&lshape(0.1), 200, &mut stream.split(0).rng());
        let mut rng = stream.split(1).rng();
        let cam = CameraModel { fx: 400.0, fy: 420.0, cx: 80.0, cy: 80.0, width: 160, height: 160 };
        let own: [&[usize]; 3] = [&[0, 1], &[2], &[3, 4, 5, 6, 7, 8]];
        let (mut worst_rel, mut worst_cross, mut checked, mut skipped) = (0.0f64, 0.0f64, 0, 0);
        while checked < configs {
            if skipped > 10 * configs.max(1) {
                return (false, format!("too many kink draws ({skipped})"));
            }
            let state = AnchoredPose::new(
                Pose::new(random_rotation(&mut rng), Vec3::new(0.0, 0.0, range(&mut rng, 0.5, 1.2))),
                AnchorPoint::new(Vec3::new(0.1, 0.05, 0.05)),
                cam,
            );
            let target = sample_perturbation(&mut rng, &state.pose, &PerturbationConfig::default());
            let Ok(star) = target_update(&state, &target) else { continue };
            let mut a = star.to_array();
            for v in a.iter_mut() {
                *v += range(&mut rng, -0.05, 0.05);
            }
            let u = PoseUpdate::from_array(&a);
            if stencil_has_kink(&pts, &state, &u, &target) {
                skipped += 1;
                continue;
            }
            let Ok(g) = loss_gradient(&pts, &state, &u, &target) else {
                return (false, "gradient evaluation failed".into());
            };
            let fd = fd_terms(&pts, &state, &u, &target);
            for (an, num) in g.gradient.iter().zip(&fd[3]) {
                worst_rel = worst_rel.max((an - num).abs() / an.abs().max(num.abs()).max(1e-6));
            }
            for (term, mine) in own.iter().enumerate() {
                for j in (0..9).filter(|j| !mine.contains(j)) {
                    worst_cross = worst_cross.max(fd[term][j].abs());
                }
            }
            checked += 1;
        }
        (
            worst_rel <= 1e-4 && worst_cross <= 1e-6,
            format!(
                "max relative error {worst_rel:.2e}, max cross-term partial {worst_cross:.2e}; \
                 {checked} configurations, {skipped} kink draws skipped"
            ),
        )
    })
}

/// Exact hypothesis counts: 104 training poses with one positive, and 520
/// test poses for five orientations.
pub fn hypothesis_counts(seed: u64) -> Check {
    timed("hypothesis counts", || {
        let mesh = lshape(0.05);
        let object = ObjectModel::new("lshape", mesh, &mut RngStream::new(seed, 0).named("points").rng());
        let stream = RngStream::new(seed, 0).named("hypothesis-counts");
        let mut rng = stream.split(0).rng();
        let cam = CameraModel { fx: 600.0, fy: 600.0, cx: 320.0, cy: 240.0, width: 640, height: 480 };
        for trial in 0..10u64 {
            let gt = Pose::new(random_rotation(&mut rng), Vec3::new(0.0, 0.0, range(&mut rng, 0.5, 1.0)));
            let train = training_hypotheses(&gt, &object.anchor, &stream.split(trial + 1), &PerturbationConfig::default());
            if train.len() != HYPOTHESES_PER_SEED || train.positives() != 1 {
                return (false, format!("training set {} poses, {} positives", train.len(), train.positives()));
            }
            let det = megarefine_core::Detection2D {
                center: [range(&mut rng, 200.0, 440.0), range(&mut rng, 150.0, 330.0)],
                size: [range(&mut rng, 20.0, 80.0), range(&mut rng, 20.0, 80.0)],
            };
            match test_hypotheses(&det, &cam, &object.mesh, &object.anchor, 5, &stream.split(100 + trial)) {
                Ok(set) if set.len() == 5 * HYPOTHESES_PER_SEED => {}
                Ok(set) => return (false, format!("test set has {} poses", set.len())),
                Err(e) => return (false, e.to_string()),
            }
        }
        (true, "training 104 with 1 positive, test 520 at five orientations".into())
    })
}

fn depth_silhouette(depth: &Image<f64>) -> Image<u32> {
    depth.map(|d| if d > 0.0 { 0 } else { NO_INSTANCE })
}

/// Render an object, measure its silhouette box, and recover the anchor depth
/// from the box with the true orientation.
pub fn depth_rescale_recovery(trials: usize, seed: u64) -> Check {
    timed("depth rescale recovery", || {
        let mesh = lshape(0.05);
        let anchor = megarefine_core::mesh::default_anchor(&mesh);
        let cam = CameraModel { fx: 600.0, fy: 600.0, cx: 320.0, cy: 240.0, width: 640, height: 480 };
        let mut rng = RngStream::new(seed, 0).named("rescale").rng();
        let (mut worst, mut done) = (0.0f64, 0);
        while done < trials {
            let r = random_rotation(&mut rng);
            let z = range(&mut rng, 0.4, 1.5);
            let p = cam.backproject(range(&mut rng, 160.0, 480.0), range(&mut rng, 120.0, 360.0), z);
            let gt = Pose::new(r, p - r * anchor.position);
            let view = render_with(&mesh, &gt, &cam, &default_light(), Channels::DEPTH);
            let Some((det, _, false)) = silhouette_box(&depth_silhouette(&view.depth), 0) else { continue };
            match rescale_depth(&det, &cam, &mesh.vertices, &anchor, &r, 1.0) {
                Ok(est) => worst = worst.max((est - z).abs() / z),
                Err(e) => return (false, e.to_string()),
            }
            done += 1;
        }
        (worst <= 0.15, format!("max relative depth error {:.2}% over {trials} trials", worst * 100.0))
    })
}

/// Every view places the anchor at the image center and all center rays
/// pass through the anchor.
pub fn anchor_centered_views(trials: usize, seed: u64) -> Check {
    timed("anchor-centered rendering", || {
        let mesh = lshape(0.05);
        let base = CameraModel { fx: 600.0, fy: 600.0, cx: 320.0, cy: 240.0, width: 640, height: 480 };
        let spec = ViewSetSpec { channels: Channels::DEPTH, resolution: 64, ..ViewSetSpec::default() };
        let mut rng = RngStream::new(seed, 0).named("centering").rng();
        let (mut worst_px, mut worst_ray) = (0.0f64, 0.0f64);
        for _ in 0..trials {
            let anchor = AnchorPoint::new(small_vec(&mut rng, 0.05) + Vec3::new(0.05, 0.025, 0.025));
            let pose = Pose::new(
                random_rotation(&mut rng),
                Vec3::new(range(&mut rng, -0.3, 0.3), range(&mut rng, -0.2, 0.2), range(&mut rng, 0.4, 1.5)),
            );
            let views = match make_viewset(&mesh, &pose, &anchor, &base, &spec) {
                Ok(v) => v,
                Err(e) => return (false, e.to_string()),
            };
            let a = anchor.in_camera(&pose);
            for (i, v) in views.iter().enumerate() {
                let local = anchor.in_camera(&v.view_pose);
                let center = v.camera.image_center();
                worst_px = worst_px.max((v.camera.project_unchecked(&local) - center).norm());
                let to_first = view_camera_pose(&a, i);
                let dir = to_first.transform_vector(&v.camera.ray(center.x, center.y)).normalize();
                let origin = to_first.translation;
                worst_ray = worst_ray.max((a - origin).cross(&dir).norm());
            }
        }
        (
            worst_px <= 0.5 && worst_ray <= 1e-6,
            format!("max center offset {worst_px:.2e} px, max ray miss {worst_ray:.2e} m over {trials} configurations"),
        )
    })
}

/// Normalized depth equals clip-then-center elementwise, and scaling depth
/// and anchor depth together leaves it unchanged inside the clip range.
pub fn depth_normalization(trials: usize, seed: u64) -> Check {
    timed("depth normalization", || {
        let mut rng = RngStream::new(seed, 0).named("normalization").rng();
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let z = range(&mut rng, 0.2, 3.0);
            let lambda = range(&mut rng, 0.25, 4.0);
            let data: Vec<f64> = (0..256)
                .map(|_| if rng.random_bool(0.2) { 0.0 } else { range(&mut rng, 0.0, 2.0 * z + 2.0) })
                .collect();
            let d = Image { width: 16, height: 16, data };
            let Ok(n) = normalize_depth(&d, z) else { return (false, "rejected positive depth".into()) };
            for (&raw, &out) in d.data.iter().zip(&n.data) {
                let clipped = raw.clamp(0.0, z + 1.0);
                let centered = clipped / z - 1.0;
                if out.to_bits() != centered.to_bits() {
                    return (false, format!("{raw} normalized to {out}, expected {centered}"));
                }
            }
            // The +1 m clip is absolute, so invariance needs values inside
            // both clip ranges.
            let limit = z + 1.0f64.min(1.0 / lambda);
            let inside = d.map(|v| v.min(limit));
            let scaled = inside.map(|v| v * lambda);
            let (Ok(a), Ok(b)) = (normalize_depth(&inside, z), normalize_depth(&scaled, z * lambda)) else {
                return (false, "rejected positive depth".into());
            };
            for (x, y) in a.data.iter().zip(&b.data) {
                worst = worst.max((x - y).abs());
            }
        }
        (worst <= 1e-9, format!("exact two-step equality; max rescale deviation {worst:.2e}"))
    })
}

/// The invariant suite with `trials` draws per randomized check.
pub fn run_all(trials: usize, seed: u64) -> Vec<Check> {
    vec![
        anchor_rotation_invariance(trials, seed),
        anchor_depth_closed_form(trials, seed),
        update_round_trip(trials, seed),
        loss_gradient_check(trials.min(100), seed),
        hypothesis_counts(seed),
        depth_rescale_recovery(trials.min(100), seed),
        anchor_centered_views(trials, seed),
        depth_normalization(trials, seed),
    ]
}
