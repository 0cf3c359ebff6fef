//! Deterministic CPU rasterizer producing RGB, depth and normal maps.
//!
//! Depth is the camera-frame `z` of the surface hit through each pixel center,
//! computed by intersecting the pixel ray with the triangle's plane rather
//! than by interpolation. Triangles are clipped against the near plane.

mod image_io;
mod viewset;

pub use image_io::{read_pfm, write_pfm_gray, write_pfm_rgb, write_ppm};
pub use viewset::{
    anchor_centered_camera, crop_half_size, make_viewset, resample_depth, view_camera_pose,
    CropCamera, ViewSetSpec, CROP_MARGIN, DEFAULT_RESOLUTION,
};

use crate::geometry::{CameraError, CameraModel, Pose, Vec3};
use crate::mesh::TriMesh;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NEAR_PLANE: f64 = 0.01;
pub const AMBIENT: f32 = 0.3;
const DEFAULT_GRAY: [f32; 3] = [0.8, 0.8, 0.8];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("anchor is behind the camera (z = {z})")]
    AnchorBehindCamera { z: f64 },
    #[error("camera is inside the object's bounding sphere (distance {distance}, radius {radius})")]
    CameraInsideBounds { distance: f64, radius: f64 },
    #[error("invalid view set: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// Row-major image buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn map<U, F: Fn(T) -> U>(&self, f: F) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

pub type DepthMap = Image<f64>;
pub type NormalMap = Image<Vec3>;
pub type RgbImage = Image<[f32; 3]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channels {
    pub rgb: bool,
    pub depth: bool,
    pub normals: bool,
}

impl Channels {
    pub const ALL: Channels = Channels {
        rgb: true,
        depth: true,
        normals: true,
    };
    pub const DEPTH_NORMALS: Channels = Channels {
        rgb: false,
        depth: true,
        normals: true,
    };
    pub const DEPTH: Channels = Channels {
        rgb: false,
        depth: true,
        normals: false,
    };
}

impl Default for Channels {
    fn default() -> Self {
        Channels::ALL
    }
}

/// One rendering of an object. Depth is always produced since it drives the
/// z-buffer; `rgb` and `normals` are present when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub rgb: Option<RgbImage>,
    pub depth: DepthMap,
    pub normals: Option<NormalMap>,
    pub camera: CameraModel,
    /// Object pose in this view's camera frame.
    pub view_pose: Pose,
    /// No pixel was hit.
    pub empty: bool,
}

impl RenderedView {
    pub fn valid_pixels(&self) -> usize {
        self.depth.data.iter().filter(|&&d| d > 0.0).count()
    }

    pub fn mask(&self) -> Image<bool> {
        self.depth.map(|d| d > 0.0)
    }
}

/// One object placed in a scene.
#[derive(Debug, Clone, Copy)]
pub struct Instance<'a> {
    pub mesh: &'a TriMesh,
    pub pose: Pose,
}

/// Multi-object rendering with a per-pixel instance index (`u32::MAX` for
/// background).
#[derive(Debug, Clone)]
pub struct SceneRender {
    pub view: RenderedView,
    pub instance_ids: Image<u32>,
}

pub const NO_INSTANCE: u32 = u32::MAX;

/// Default light: traveling along the camera's `+z`, i.e. from the viewer.
pub fn default_light() -> Vec3 {
    Vec3::new(0.0, 0.0, 1.0)
}

pub fn render(mesh: &TriMesh, pose: &Pose, cam: &CameraModel, light_dir: &Vec3) -> RenderedView {
    render_with(mesh, pose, cam, light_dir, Channels::ALL)
}

pub fn render_with(
    mesh: &TriMesh,
    pose: &Pose,
    cam: &CameraModel,
    light_dir: &Vec3,
    channels: Channels,
) -> RenderedView {
    let mut fb = Framebuffer::new(cam, channels, false);
    fb.draw(mesh, pose, 0, light_dir);
    fb.finish(*pose).view
}

pub fn render_instances(
    instances: &[Instance<'_>],
    cam: &CameraModel,
    light_dir: &Vec3,
    channels: Channels,
) -> SceneRender {
    let mut fb = Framebuffer::new(cam, channels, true);
    for (i, inst) in instances.iter().enumerate() {
        fb.draw(inst.mesh, &inst.pose, i as u32, light_dir);
    }
    let pose = instances.first().map(|i| i.pose).unwrap_or_default();
    fb.finish(pose)
}

struct Framebuffer {
    cam: CameraModel,
    zbuf: Vec<f64>,
    normals: Option<Vec<Vec3>>,
    rgb: Option<Vec<[f32; 3]>>,
    ids: Option<Vec<u32>>,
}

impl Framebuffer {
    fn new(cam: &CameraModel, channels: Channels, ids: bool) -> Self {
        let n = cam.width * cam.height;
        Self {
            cam: *cam,
            zbuf: vec![f64::INFINITY; n],
            normals: channels.normals.then(|| vec![Vec3::zeros(); n]),
            rgb: channels.rgb.then(|| vec![[0.0; 3]; n]),
            ids: ids.then(|| vec![NO_INSTANCE; n]),
        }
    }

    fn finish(self, pose: Pose) -> SceneRender {
        let (w, h) = (self.cam.width, self.cam.height);
        let depth: Vec<f64> = self
            .zbuf
            .iter()
            .map(|&z| if z.is_finite() { z } else { 0.0 })
            .collect();
        let empty = depth.iter().all(|&d| d == 0.0);
        SceneRender {
            view: RenderedView {
                rgb: self.rgb.map(|data| Image { width: w, height: h, data }),
                depth: Image { width: w, height: h, data: depth },
                normals: self.normals.map(|data| Image { width: w, height: h, data }),
                camera: self.cam,
                view_pose: pose,
                empty,
            },
            instance_ids: Image {
                width: w,
                height: h,
                data: self.ids.unwrap_or_default(),
            },
        }
    }

    fn draw(&mut self, mesh: &TriMesh, pose: &Pose, id: u32, light_dir: &Vec3) {
        let verts: Vec<Vec3> = mesh.vertices.iter().map(|v| pose.transform_point(v)).collect();
        let toward_light = -light_dir.normalize();
        for tri in &mesh.triangles {
            let v = [verts[tri[0] as usize], verts[tri[1] as usize], verts[tri[2] as usize]];
            if v.iter().all(|p| p.z < NEAR_PLANE) {
                continue;
            }
            let n = (v[1] - v[0]).cross(&(v[2] - v[0]));
            let len = n.norm();
            if len == 0.0 {
                continue;
            }
            let mut normal = n / len;
            if normal.dot(&v[0]) > 0.0 {
                normal = -normal;
            }
            let plane_d = normal.dot(&v[0]);
            let color = match &mesh.colors {
                Some(c) => {
                    let (a, b, cc) = (c[tri[0] as usize], c[tri[1] as usize], c[tri[2] as usize]);
                    [0, 1, 2].map(|k| (a[k] + b[k] + cc[k]) / 3.0)
                }
                None => DEFAULT_GRAY,
            };
            let lambert = normal.dot(&toward_light).max(0.0) as f32;
            let intensity = (AMBIENT + (1.0 - AMBIENT) * lambert).min(1.0);
            let shade = color.map(|c| (c * intensity).clamp(0.0, 1.0));

            let mut poly = [Vec3::zeros(); 4];
            let count = clip_near(&v, &mut poly);
            if count < 3 {
                continue;
            }
            let screen: Vec<(f64, f64)> = poly[..count]
                .iter()
                .map(|p| {
                    let uv = self.cam.project_unchecked(p);
                    (uv.x, uv.y)
                })
                .collect();
            for k in 1..count - 1 {
                self.fill([screen[0], screen[k], screen[k + 1]], &normal, plane_d, &shade, id);
            }
        }
    }

    fn fill(&mut self, s: [(f64, f64); 3], normal: &Vec3, plane_d: f64, shade: &[f32; 3], id: u32) {
        let edge = |a: (f64, f64), b: (f64, f64), p: (f64, f64)| {
            (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
        };
        let area = edge(s[0], s[1], s[2]);
        if area == 0.0 || !area.is_finite() {
            return;
        }
        let sign = area.signum();
        let (w, h) = (self.cam.width as f64, self.cam.height as f64);
        let min_u = s.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_u = s.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let min_v = s.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_v = s.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        if max_u < 0.0 || max_v < 0.0 || min_u > w || min_v > h {
            return;
        }
        let c0 = (min_u - 0.5).ceil().max(0.0) as usize;
        let c1 = ((max_u - 0.5).floor().min(w - 1.0)).max(-1.0);
        let r0 = (min_v - 0.5).ceil().max(0.0) as usize;
        let r1 = ((max_v - 0.5).floor().min(h - 1.0)).max(-1.0);
        if c1 < 0.0 || r1 < 0.0 {
            return;
        }
        let (c1, r1) = (c1 as usize, r1 as usize);
        let stride = self.cam.width;
        for row in r0..=r1 {
            let pv = row as f64 + 0.5;
            for col in c0..=c1 {
                let p = (col as f64 + 0.5, pv);
                let e0 = edge(s[1], s[2], p) * sign;
                let e1 = edge(s[2], s[0], p) * sign;
                let e2 = edge(s[0], s[1], p) * sign;
                if e0 < 0.0 || e1 < 0.0 || e2 < 0.0 {
                    continue;
                }
                let ray = self.cam.pixel_ray(col, row);
                let denom = normal.dot(&ray);
                if denom == 0.0 {
                    continue;
                }
                let z = plane_d / denom;
                let idx = row * stride + col;
                if !(z >= NEAR_PLANE) || z >= self.zbuf[idx] {
                    continue;
                }
                self.zbuf[idx] = z;
                if let Some(n) = self.normals.as_mut() {
                    n[idx] = *normal;
                }
                if let Some(c) = self.rgb.as_mut() {
                    c[idx] = *shade;
                }
                if let Some(ids) = self.ids.as_mut() {
                    ids[idx] = id;
                }
            }
        }
    }
}

/// Sutherland-Hodgman clip of a triangle against `z >= NEAR_PLANE`.
fn clip_near(tri: &[Vec3; 3], out: &mut [Vec3; 4]) -> usize {
    let mut n = 0;
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let a_in = a.z >= NEAR_PLANE;
        let b_in = b.z >= NEAR_PLANE;
        if a_in {
            out[n] = a;
            n += 1;
        }
        if a_in != b_in {
            let t = (NEAR_PLANE - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * t;
            p.z = NEAR_PLANE;
            out[n] = p;
            n += 1;
        }
    }
    n
}
