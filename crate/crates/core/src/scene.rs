//! Seeded synthetic scenes: objects floating above a ground plane, one camera
//! looking down at them, a z-buffered depth observation with optional noise,
//! and silhouette-derived detections.

use crate::geometry::{
    look_rotation, random_rotation, CameraModel, Pose, RngStream, Vec3,
};
use crate::hypotheses::Detection2D;
use crate::mesh::{load_mesh, procedural_shape, MeshError, ObjectModel, ShapeKind, TriMesh};
use crate::render::{render_instances, Channels, DepthMap, Image, Instance, RenderedView, NO_INSTANCE};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("no acceptable scene after {0} attempts")]
    RetriesExhausted(usize),
    #[error("object {index}: {source}")]
    Mesh { index: usize, source: MeshError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSource {
    Shape(ShapeKind),
    /// OBJ or PLY file; relative paths resolve against the spec's directory.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    pub mesh: MeshSource,
    #[serde(default = "one")]
    pub scale: f64,
    /// Anchor positions are drawn from `[-xy_extent, xy_extent]^2` on the
    /// ground plane.
    #[serde(default = "default_xy_extent")]
    pub xy_extent: f64,
    /// Clearance between the ground plane and the bounding sphere, meters.
    #[serde(default = "default_height")]
    pub height: [f64; 2],
}

fn one() -> f64 {
    1.0
}
fn default_xy_extent() -> f64 {
    0.05
}
fn default_height() -> [f64; 2] {
    [0.0, 0.05]
}

/// The camera looks at the world origin from a point at the given distance,
/// elevation above the ground plane, and a uniform azimuth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraPlacement {
    pub distance: [f64; 2],
    pub elevation_deg: [f64; 2],
}

impl Default for CameraPlacement {
    fn default() -> Self {
        Self {
            distance: [0.5, 0.9],
            elevation_deg: [20.0, 70.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DepthNoise {
    /// Standard deviation of additive noise on valid pixels, meters.
    pub gaussian_sigma: f64,
    /// Probability that a valid pixel is zeroed.
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub objects: Vec<ObjectSpec>,
    pub camera: CameraModel,
    pub placement: CameraPlacement,
    pub noise: DepthNoise,
    /// Relative detection error: centers move by up to this fraction of the
    /// box size and sizes scale by up to `1 ± bbox_jitter`.
    pub bbox_jitter: f64,
    /// Objects with fewer visible pixels cause the scene to be redrawn.
    pub min_visible_pixels: usize,
    pub max_retries: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            objects: vec![ObjectSpec {
                name: "lshape".into(),
                mesh: MeshSource::Shape(ShapeKind::default_lshape()),
                scale: 0.05,
                xy_extent: default_xy_extent(),
                height: default_height(),
            }],
            camera: CameraModel { fx: 600.0, fy: 600.0, cx: 320.0, cy: 240.0, width: 640, height: 480 },
            placement: CameraPlacement::default(),
            noise: DepthNoise::default(),
            bbox_jitter: 0.0,
            min_visible_pixels: 200,
            max_retries: 50,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], min: f64) -> Result<(), SceneError> {
    if !(r[0] >= min && r[1] >= r[0] && r[1].is_finite()) {
        return Err(SceneError::InvalidSpec(format!("{name} range {r:?}")));
    }
    Ok(())
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.objects.is_empty() {
            return Err(SceneError::InvalidSpec("at least one object is required".into()));
        }
        self.camera.validate().map_err(|e| SceneError::InvalidSpec(e.to_string()))?;
        for o in &self.objects {
            if !(o.scale > 0.0) || !(o.xy_extent >= 0.0) {
                return Err(SceneError::InvalidSpec(format!("object {}: bad scale or extent", o.name)));
            }
            check_range("height", o.height, 0.0)?;
        }
        check_range("distance", self.placement.distance, 1e-3)?;
        check_range("elevation", self.placement.elevation_deg, -90.0)?;
        if self.placement.elevation_deg[1] > 90.0 {
            return Err(SceneError::InvalidSpec("elevation above 90 degrees".into()));
        }
        if !(self.noise.gaussian_sigma >= 0.0) {
            return Err(SceneError::InvalidSpec("gaussian_sigma must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.noise.dropout) {
            return Err(SceneError::InvalidSpec("dropout must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.bbox_jitter) {
            return Err(SceneError::InvalidSpec("bbox_jitter must lie in [0, 1)".into()));
        }
        if self.max_retries == 0 {
            return Err(SceneError::InvalidSpec("max_retries must be positive".into()));
        }
        Ok(())
    }

    /// Loads every object. Point samples depend only on `rng` and the
    /// object's index.
    pub fn load_objects(&self, base_dir: &Path, rng: &RngStream) -> Result<Vec<ObjectModel>, SceneError> {
        let root = rng.named("object-points");
        self.objects
            .iter()
            .enumerate()
            .map(|(index, o)| {
                let mesh: TriMesh = match &o.mesh {
                    MeshSource::Shape(kind) => procedural_shape(kind).map(|m| m.scaled(o.scale)),
                    MeshSource::File(p) => load_mesh(&base_dir.join(p), None, o.scale),
                }
                .map_err(|source| SceneError::Mesh { index, source })?;
                Ok(ObjectModel::new(o.name.clone(), mesh, &mut root.split(index as u64).rng()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    /// Index into the spec's object list.
    pub object: usize,
    pub gt: Pose,
    pub detection: Detection2D,
    pub visible_pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub index: u64,
    /// Camera-to-world transform.
    pub camera_pose: Pose,
    /// Noisy depth of all objects together, in the spec's camera.
    pub observed: RenderedView,
    pub clean_depth: DepthMap,
    pub instance_ids: Image<u32>,
    pub objects: Vec<SceneObject>,
    pub attempts: usize,
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn sample_camera<R: Rng>(rng: &mut R, p: &CameraPlacement) -> Pose {
    let d = uniform(rng, p.distance);
    let el = uniform(rng, p.elevation_deg).to_radians();
    let az = rng.random_range(0.0..std::f64::consts::TAU);
    let center = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * d;
    let forward = -center;
    // Image "down" follows world -z except when looking straight down.
    let down = if el.cos().abs() < 1e-6 { Vec3::y() } else { -Vec3::z() };
    Pose::new(look_rotation(&forward, &down), center)
}

fn sample_world_poses<R: Rng>(rng: &mut R, spec: &SceneSpec, models: &[ObjectModel]) -> Vec<Pose> {
    let mut placed: Vec<(Vec3, f64)> = Vec::new();
    let mut poses = Vec::with_capacity(models.len());
    for (o, m) in spec.objects.iter().zip(models) {
        let r = m.radius();
        let mut best = None;
        for _ in 0..20 {
            let a = Vec3::new(
                uniform(rng, [-o.xy_extent, o.xy_extent]),
                uniform(rng, [-o.xy_extent, o.xy_extent]),
                r + uniform(rng, o.height),
            );
            let clear = placed.iter().all(|(c, rc)| (c - a).norm() >= rc + r);
            best = Some(a);
            if clear {
                break;
            }
        }
        let anchor_world = best.unwrap_or_default();
        let rot = random_rotation(rng);
        placed.push((anchor_world, r));
        poses.push(Pose::new(rot, anchor_world - rot * m.anchor.position));
    }
    poses
}

/// Visible-silhouette box: center `(min + max + 1) / 2`, size
/// `max - min + 1` in pixels.
/// Bounding box of instance `id`'s pixels, its pixel count, and whether it
/// touches the image border.
pub fn silhouette_box(ids: &Image<u32>, id: u32) -> Option<(Detection2D, usize, bool)> {
    let (mut cmin, mut cmax, mut rmin, mut rmax, mut n) = (usize::MAX, 0, usize::MAX, 0, 0usize);
    for row in 0..ids.height {
        for col in 0..ids.width {
            if ids.get(col, row) == id {
                cmin = cmin.min(col);
                cmax = cmax.max(col);
                rmin = rmin.min(row);
                rmax = rmax.max(row);
                n += 1;
            }
        }
    }
    if n == 0 {
        return None;
    }
    let touches = cmin == 0 || rmin == 0 || cmax + 1 == ids.width || rmax + 1 == ids.height;
    let det = Detection2D {
        center: [(cmin + cmax + 1) as f64 / 2.0, (rmin + rmax + 1) as f64 / 2.0],
        size: [(cmax - cmin + 1) as f64, (rmax - rmin + 1) as f64],
    };
    Some((det, n, touches))
}

fn jitter<R: Rng>(rng: &mut R, det: &Detection2D, j: f64, cam: &CameraModel) -> Detection2D {
    if j == 0.0 {
        return *det;
    }
    let mut out = *det;
    for a in 0..2 {
        out.center[a] += rng.random_range(-j..=j) * det.size[a];
        out.size[a] *= 1.0 + rng.random_range(-j..=j);
    }
    out.center[0] = out.center[0].clamp(0.0, cam.width as f64);
    out.center[1] = out.center[1].clamp(0.0, cam.height as f64);
    out
}

/// Applies dropout, then Gaussian noise, to valid pixels in row-major order.
pub fn apply_depth_noise<R: Rng>(depth: &DepthMap, noise: &DepthNoise, rng: &mut R) -> DepthMap {
    let mut out = depth.clone();
    if noise.dropout == 0.0 && noise.gaussian_sigma == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, noise.gaussian_sigma.max(0.0)).ok();
    for d in out.data.iter_mut().filter(|d| **d > 0.0) {
        if noise.dropout > 0.0 && rng.random::<f64>() < noise.dropout {
            *d = 0.0;
            continue;
        }
        if noise.gaussian_sigma > 0.0 {
            if let Some(n) = &normal {
                *d = (*d + n.sample(rng)).max(0.0);
            }
        }
    }
    out
}

/// Draws scene `index` from `spec`. Attempts whose objects are hidden, too
/// small, or cut by the image border are redrawn up to `max_retries` times.
pub fn generate_scene(
    spec: &SceneSpec,
    models: &[ObjectModel],
    rng: &RngStream,
    index: u64,
) -> Result<Scene, SceneError> {
    spec.validate()?;
    if models.len() != spec.objects.len() {
        return Err(SceneError::InvalidSpec(format!(
            "{} models for {} objects",
            models.len(),
            spec.objects.len()
        )));
    }
    let scene_stream = rng.named("scenes").split(index);
    for attempt in 0..spec.max_retries {
        let stream = scene_stream.split(attempt as u64);
        let mut rng = stream.named("placement").rng();
        let camera_pose = sample_camera(&mut rng, &spec.placement);
        let world = sample_world_poses(&mut rng, spec, models);
        let to_camera = camera_pose.inverse();
        let gts: Vec<Pose> = world.iter().map(|w| to_camera.compose(w)).collect();
        if gts.iter().zip(models).any(|(g, m)| m.anchor.in_camera(g).z <= m.radius()) {
            continue;
        }
        let instances: Vec<Instance<'_>> = models
            .iter()
            .zip(&gts)
            .map(|(m, g)| Instance { mesh: &m.mesh, pose: *g })
            .collect();
        let rendered = render_instances(&instances, &spec.camera, &crate::render::default_light(), Channels::DEPTH);
        let mut objects = Vec::with_capacity(models.len());
        let mut det_rng = stream.named("detections").rng();
        for (i, gt) in gts.iter().enumerate() {
            match silhouette_box(&rendered.instance_ids, i as u32) {
                Some((det, n, false)) if n >= spec.min_visible_pixels => objects.push(SceneObject {
                    object: i,
                    gt: *gt,
                    detection: jitter(&mut det_rng, &det, spec.bbox_jitter, &spec.camera),
                    visible_pixels: n,
                }),
                _ => break,
            }
        }
        if objects.len() != models.len() {
            continue;
        }
        let clean_depth = rendered.view.depth.clone();
        let mut observed = rendered.view;
        observed.depth = apply_depth_noise(&clean_depth, &spec.noise, &mut stream.named("noise").rng());
        return Ok(Scene {
            index,
            camera_pose,
            observed,
            clean_depth,
            instance_ids: rendered.instance_ids,
            objects,
            attempts: attempt + 1,
        });
    }
    Err(SceneError::RetriesExhausted(spec.max_retries))
}

/// Pixels of instance `id`, used to check occlusion bookkeeping.
pub fn instance_mask(ids: &Image<u32>, id: u32) -> Image<bool> {
    ids.map(|v| v == id && v != NO_INSTANCE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SceneSpec {
        SceneSpec::default()
    }

    fn rng() -> RngStream {
        RngStream::new(11, 0)
    }

    fn models(s: &SceneSpec) -> Vec<ObjectModel> {
        s.load_objects(Path::new("."), &rng()).unwrap()
    }

    #[test]
    fn default_spec_round_trips_through_json() {
        let s = spec();
        let text = serde_json::to_string(&s).unwrap();
        let back: SceneSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
        assert!(serde_json::from_str::<SceneSpec>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec();
        s.objects.clear();
        assert!(s.validate().is_err());
        let mut s = spec();
        s.noise.dropout = 1.5;
        assert!(s.validate().is_err());
        let mut s = spec();
        s.noise.gaussian_sigma = -0.1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn scenes_are_deterministic() {
        let s = SceneSpec { noise: DepthNoise { gaussian_sigma: 0.002, dropout: 0.1 }, ..spec() };
        let m = models(&s);
        let a = generate_scene(&s, &m, &rng(), 3).unwrap();
        let b = generate_scene(&s, &m, &rng(), 3).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&s, &m, &rng(), 4).unwrap();
        assert_ne!(a.objects[0].gt, c.objects[0].gt);
    }

    #[test]
    fn noiseless_detection_is_silhouette_box() {
        let s = spec();
        let m = models(&s);
        for idx in 0..5 {
            let scene = generate_scene(&s, &m, &rng(), idx).unwrap();
            assert!(!scene.observed.empty);
            let det = scene.objects[0].detection;
            let mask = scene.observed.mask();
            let (mut cmin, mut cmax, mut rmin, mut rmax) = (usize::MAX, 0, usize::MAX, 0);
            for r in 0..mask.height {
                for c in 0..mask.width {
                    if mask.get(c, r) {
                        cmin = cmin.min(c);
                        cmax = cmax.max(c);
                        rmin = rmin.min(r);
                        rmax = rmax.max(r);
                    }
                }
            }
            assert_eq!(det.size, [(cmax - cmin + 1) as f64, (rmax - rmin + 1) as f64]);
            assert_eq!(det.center, [(cmin + cmax + 1) as f64 / 2.0, (rmin + rmax + 1) as f64 / 2.0]);
            assert_eq!(scene.observed.depth, scene.clean_depth);
        }
    }

    #[test]
    fn dropout_fraction_matches_probability() {
        let mut rng = RngStream::new(1, 0).rng();
        let depth = Image::filled(400, 400, 1.0);
        let out = apply_depth_noise(&depth, &DepthNoise { gaussian_sigma: 0.0, dropout: 0.3 }, &mut rng);
        let zeroed = out.data.iter().filter(|&&d| d == 0.0).count() as f64 / out.data.len() as f64;
        assert!((zeroed - 0.3).abs() <= 0.02, "{zeroed}");
    }

    #[test]
    fn gaussian_noise_has_requested_spread() {
        let mut rng = RngStream::new(2, 0).rng();
        let depth = Image::filled(300, 300, 1.0);
        let out = apply_depth_noise(&depth, &DepthNoise { gaussian_sigma: 0.01, dropout: 0.0 }, &mut rng);
        let n = out.data.len() as f64;
        let mean = out.data.iter().sum::<f64>() / n;
        let var = out.data.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        assert!((mean - 1.0).abs() < 1e-3);
        assert!((var.sqrt() - 0.01).abs() < 0.0005);
    }

    #[test]
    fn overlapping_objects_keep_nearest_depth() {
        let s = SceneSpec {
            objects: vec![
                ObjectSpec { xy_extent: 0.0, height: [0.0, 0.0], ..SceneSpec::default().objects[0].clone() },
                ObjectSpec {
                    name: "ball".into(),
                    mesh: MeshSource::Shape(ShapeKind::Sphere { radius: 0.03, subdivisions: 2 }),
                    scale: 1.0,
                    xy_extent: 0.08,
                    height: [0.0, 0.05],
                },
            ],
            min_visible_pixels: 20,
            ..SceneSpec::default()
        };
        let m = models(&s);
        let scene = generate_scene(&s, &m, &rng(), 0).unwrap();
        for (i, obj) in scene.objects.iter().enumerate() {
            // The object's own unoccluded depth is never nearer than the
            // composite depth where both are present.
            let alone = crate::render::render_with(&m[i].mesh, &obj.gt, &s.camera, &crate::render::default_light(), Channels::DEPTH);
            for (k, &d) in alone.depth.data.iter().enumerate() {
                if d > 0.0 {
                    let composite = scene.clean_depth.data[k];
                    assert!(composite > 0.0 && composite <= d);
                    if scene.instance_ids.data[k] == i as u32 {
                        assert_eq!(composite, d);
                    }
                }
            }
        }
    }

    #[test]
    fn jitter_stays_within_bounds() {
        let s = SceneSpec { bbox_jitter: 0.1, ..spec() };
        let m = models(&s);
        let clean = generate_scene(&spec(), &m, &rng(), 0).unwrap().objects[0].detection;
        let noisy = generate_scene(&s, &m, &rng(), 0).unwrap().objects[0].detection;
        for a in 0..2 {
            assert!((noisy.size[a] / clean.size[a] - 1.0).abs() <= 0.1 + 1e-12);
            assert!((noisy.center[a] - clean.center[a]).abs() <= 0.1 * clean.size[a] + 1e-12);
        }
    }

    #[test]
    fn impossible_spec_exhausts_retries() {
        let s = SceneSpec { min_visible_pixels: 10_000_000, max_retries: 3, ..spec() };
        let m = models(&s);
        assert!(matches!(generate_scene(&s, &m, &rng(), 0), Err(SceneError::RetriesExhausted(3))));
    }
}
