use super::{render_with, Channels, DepthMap, Image, RenderError, RenderedView};
use crate::geometry::{axis_angle, look_rotation, CameraModel, Pose, Vec3};
use crate::mesh::{AnchorPoint, TriMesh};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

/// Margin applied around the object's projected extent when sizing crops.
pub const CROP_MARGIN: f64 = 1.4;
pub const DEFAULT_RESOLUTION: usize = 160;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewSetSpec {
    pub n_views: usize,
    /// Side length of the square renderings, pixels.
    pub resolution: usize,
    pub channels: Channels,
    pub margin: f64,
    pub light_dir: Vec3,
}

impl Default for ViewSetSpec {
    fn default() -> Self {
        Self {
            n_views: 4,
            resolution: DEFAULT_RESOLUTION,
            channels: Channels::ALL,
            margin: CROP_MARGIN,
            light_dir: super::default_light(),
        }
    }
}

impl ViewSetSpec {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(1..=4).contains(&self.n_views) {
            return Err(RenderError::InvalidSpec(format!(
                "n_views must be in 1..=4, got {}",
                self.n_views
            )));
        }
        if self.resolution < 16 {
            return Err(RenderError::InvalidSpec(format!(
                "resolution must be at least 16, got {}",
                self.resolution
            )));
        }
        if !(self.margin >= 1.0) {
            return Err(RenderError::InvalidSpec(format!("margin must be >= 1, got {}", self.margin)));
        }
        Ok(())
    }
}

/// Virtual camera cropped from a base camera around the anchor's projection.
/// Shares the base camera's optical center and orientation, so object poses
/// are unchanged; only the intrinsics differ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropCamera {
    pub camera: CameraModel,
    /// Anchor projection in the base image.
    pub anchor_pixel: Vector2<f64>,
    /// `anchor_pixel - (cx, cy)` of the base camera.
    pub principal_shift: Vector2<f64>,
    /// Crop side length in base-image pixels.
    pub crop_size: f64,
    /// Output pixels per base pixel.
    pub scale: f64,
}

/// Half side length (base pixels) of a crop centered on the anchor that
/// contains the projection of a sphere of `radius` around it, times
/// `margin`. Depends only on the anchor position, so every orientation of
/// the object gets the same crop.
pub fn crop_half_size(
    base: &CameraModel,
    anchor_cam: &Vec3,
    radius: f64,
    margin: f64,
) -> Result<f64, RenderError> {
    if !(anchor_cam.z > 0.0) {
        return Err(RenderError::AnchorBehindCamera { z: anchor_cam.z });
    }
    let d = anchor_cam.norm();
    if d <= radius {
        return Err(RenderError::CameraInsideBounds { distance: d, radius });
    }
    let tan_alpha = radius / (d * d - radius * radius).sqrt();
    let cos_theta = anchor_cam.z / d;
    Ok(margin * base.fx.max(base.fy) * tan_alpha / (cos_theta * cos_theta))
}

/// Virtual camera under which the anchor projects to the image center of a
/// `resolution x resolution` image.
///
/// The principal point of the result may lie outside the image when the
/// anchor is far from the base camera's optical axis.
pub fn anchor_centered_camera(
    base: &CameraModel,
    pose: &Pose,
    anchor: &AnchorPoint,
    radius: f64,
    resolution: usize,
    margin: f64,
) -> Result<CropCamera, RenderError> {
    let a = anchor.in_camera(pose);
    let anchor_pixel = base.project(&a)?;
    let half = crop_half_size(base, &a, radius, margin)?;
    let crop_size = 2.0 * half;
    let s = resolution as f64 / crop_size;
    let center = resolution as f64 / 2.0;
    let camera = CameraModel {
        fx: base.fx * s,
        fy: base.fy * s,
        cx: (base.cx - anchor_pixel.x) * s + center,
        cy: (base.cy - anchor_pixel.y) * s + center,
        width: resolution,
        height: resolution,
    };
    Ok(CropCamera {
        camera,
        anchor_pixel,
        principal_shift: anchor_pixel - Vector2::new(base.cx, base.cy),
        crop_size,
        scale: s,
    })
}

/// Pose of camera `index` (0-based) of a view set, expressed in the frame of
/// the first camera. Camera 0 is the identity; the others sit at the same
/// distance from the anchor, rotated by `index * 90°` about the axis through
/// the anchor along the first camera's `y` direction (made orthogonal to the
/// anchor ray), and look straight at the anchor.
pub fn view_camera_pose(anchor_cam: &Vec3, index: usize) -> Pose {
    if index == 0 {
        return Pose::identity();
    }
    let dir = anchor_cam.normalize();
    let mut up = Vec3::y() - dir * dir.y;
    if up.norm() < 1e-9 {
        up = Vec3::x() - dir * dir.x;
    }
    let up = up.normalize();
    let rot = axis_angle(&up, index as f64 * std::f64::consts::FRAC_PI_2);
    let look = look_rotation(&dir, &up);
    Pose::new(rot * look, anchor_cam - rot * anchor_cam)
}

/// Renders the object at `pose` from `spec.n_views` viewpoints. View 0 is the
/// input viewpoint seen through an anchor-centered crop of `base_cam`; the
/// others come from [`view_camera_pose`] with the anchor on their optical
/// axis. In every view the anchor projects to the image center.
pub fn make_viewset(
    mesh: &TriMesh,
    pose: &Pose,
    anchor: &AnchorPoint,
    base_cam: &CameraModel,
    spec: &ViewSetSpec,
) -> Result<Vec<RenderedView>, RenderError> {
    spec.validate()?;
    let radius = mesh.bounding_radius(&anchor.position);
    let crop = anchor_centered_camera(base_cam, pose, anchor, radius, spec.resolution, spec.margin)?;
    let a = anchor.in_camera(pose);
    let mut views = Vec::with_capacity(spec.n_views);
    views.push(render_with(mesh, pose, &crop.camera, &spec.light_dir, spec.channels));
    if spec.n_views > 1 {
        let d = a.norm();
        let tan_alpha = radius / (d * d - radius * radius).sqrt();
        let f = spec.resolution as f64 / (2.0 * spec.margin * tan_alpha);
        let c = spec.resolution as f64 / 2.0;
        let cam = CameraModel {
            fx: f,
            fy: f,
            cx: c,
            cy: c,
            width: spec.resolution,
            height: spec.resolution,
        };
        for i in 1..spec.n_views {
            let view_from_first = view_camera_pose(&a, i).inverse();
            let view_pose = view_from_first.compose(pose);
            views.push(render_with(mesh, &view_pose, &cam, &spec.light_dir, spec.channels));
        }
    }
    Ok(views)
}

/// Nearest-neighbour resampling of a depth map between two cameras that share
/// optical center and orientation (e.g. a base camera and a crop of it).
pub fn resample_depth(src: &DepthMap, src_cam: &CameraModel, dst_cam: &CameraModel) -> DepthMap {
    let mut out = Image::filled(dst_cam.width, dst_cam.height, 0.0);
    for row in 0..dst_cam.height {
        for col in 0..dst_cam.width {
            let ray = dst_cam.pixel_ray(col, row);
            let u = src_cam.fx * ray.x + src_cam.cx;
            let v = src_cam.fy * ray.y + src_cam.cy;
            if u >= 0.0 && v >= 0.0 && u < src.width as f64 && v < src.height as f64 {
                out.set(col, row, src.get(u as usize, v as usize));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_rotation, rotation_geodesic_angle, RngStream};
    use crate::mesh::{default_anchor, procedural_shape, ShapeKind};
    use rand::Rng;

    fn base_cam() -> CameraModel {
        CameraModel::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn lshape() -> TriMesh {
        procedural_shape(&ShapeKind::default_lshape()).unwrap().scaled(0.05)
    }

    #[test]
    fn on_axis_anchor_keeps_principal_point_centered() {
        let pose = Pose::from_translation(Vec3::new(0.0, 0.0, 0.8));
        let anchor = AnchorPoint::new(Vec3::zeros());
        let crop = anchor_centered_camera(&base_cam(), &pose, &anchor, 0.05, 160, CROP_MARGIN).unwrap();
        assert_eq!(crop.principal_shift, Vector2::zeros());
        assert_eq!(crop.camera.cx, 80.0);
        assert_eq!(crop.camera.cy, 80.0);
    }

    #[test]
    fn off_axis_anchor_shift() {
        let pose = Pose::from_translation(Vec3::new(0.1, 0.0, 1.0));
        let anchor = AnchorPoint::new(Vec3::zeros());
        let crop = anchor_centered_camera(&base_cam(), &pose, &anchor, 0.05, 160, CROP_MARGIN).unwrap();
        assert!((crop.principal_shift.x - 50.0).abs() < 1e-12);
        assert_eq!(crop.principal_shift.y, 0.0);
        let p = crop.camera.project(&Vec3::new(0.1, 0.0, 1.0)).unwrap();
        assert!((p - Vector2::new(80.0, 80.0)).norm() < 1e-9);
    }

    #[test]
    fn anchor_behind_camera_is_an_error() {
        let pose = Pose::from_translation(Vec3::new(0.0, 0.0, -1.0));
        let anchor = AnchorPoint::new(Vec3::zeros());
        assert!(anchor_centered_camera(&base_cam(), &pose, &anchor, 0.05, 160, CROP_MARGIN).is_err());
    }

    #[test]
    fn crop_contains_projected_bounding_box() {
        let mesh = lshape();
        let anchor = default_anchor(&mesh);
        let radius = mesh.bounding_radius(&anchor.position);
        let mut rng = RngStream::new(4, 0).rng();
        for _ in 0..200 {
            let pose = Pose::new(
                random_rotation(&mut rng),
                Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.15..0.15), rng.random_range(0.3..1.2)),
            );
            let crop = anchor_centered_camera(&base_cam(), &pose, &anchor, radius, 160, CROP_MARGIN).unwrap();
            for corner in mesh.aabb().corners() {
                let p = crop.camera.project(&pose.transform_point(&corner)).unwrap();
                assert!(p.x >= 0.0 && p.x <= 160.0 && p.y >= 0.0 && p.y <= 160.0, "{p:?}");
            }
        }
    }

    #[test]
    fn single_view_matches_input_pose() {
        let mesh = lshape();
        let pose = Pose::from_translation(Vec3::new(0.02, -0.01, 0.6));
        let spec = ViewSetSpec { n_views: 1, ..Default::default() };
        let views = make_viewset(&mesh, &pose, &default_anchor(&mesh), &base_cam(), &spec).unwrap();
        assert_eq!(views.len(), 1);
        assert_eq!(views[0].view_pose, pose);
        assert!(!views[0].empty);
    }

    #[test]
    fn four_views_geometry() {
        let mesh = lshape();
        let anchor = default_anchor(&mesh);
        let pose = Pose::new(random_rotation(&mut RngStream::new(1, 1).rng()), Vec3::new(0.05, 0.03, 0.7));
        let views = make_viewset(&mesh, &pose, &anchor, &base_cam(), &ViewSetSpec::default()).unwrap();
        assert_eq!(views.len(), 4);
        let a = anchor.in_camera(&pose);
        let centers: Vec<Vec3> = (0..4).map(|i| view_camera_pose(&a, i).translation).collect();
        for i in 0..4 {
            assert!(((centers[i] - a).norm() - a.norm()).abs() < 1e-12);
            for j in (i + 1)..4 {
                let angle = (centers[i] - a).angle(&(centers[j] - a)).to_degrees();
                let expected = if j - i == 2 { 180.0 } else { 90.0 };
                assert!((angle - expected).abs() < 1e-6, "{i},{j}: {angle}");
            }
        }
        for v in &views {
            assert!(!v.empty);
            let p = v.camera.project(&anchor.in_camera(&v.view_pose)).unwrap();
            assert!((p - v.camera.image_center()).norm() <= 0.5);
            // All views see the same rigid object.
            let rel = rotation_geodesic_angle(&v.view_pose.rotation, &pose.rotation);
            assert!(rel.is_finite());
        }
    }

    #[test]
    fn resample_identity_is_exact() {
        let mesh = lshape();
        let pose = Pose::from_translation(Vec3::new(0.0, 0.0, 0.6));
        let cam = base_cam();
        let view = super::super::render(&mesh, &pose, &cam, &super::super::default_light());
        assert_eq!(resample_depth(&view.depth, &cam, &cam), view.depth);
    }
}
