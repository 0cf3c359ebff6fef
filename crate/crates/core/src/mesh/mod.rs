//! Triangle meshes: loading, procedural shapes, surface sampling and anchor
//! selection.

mod io;
mod shapes;

pub use io::{load_mesh, read_obj, read_ply, write_obj, write_ply_binary, MeshFormat};
pub use shapes::{procedural_shape, ShapeKind};

use crate::geometry::{Pose, Vec3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("mesh has no triangles")]
    Empty,
    #[error("triangle {triangle} references vertex {index} but mesh has {n_vertices} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: usize,
        n_vertices: usize,
    },
    #[error("vertex {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("invalid shape parameter: {0}")]
    InvalidShape(String),
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
}

/// Zero-area threshold, m².
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub colors: Option<Vec<[f32; 3]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vec3::new(a.x, a.y, a.z),
            Vec3::new(b.x, a.y, a.z),
            Vec3::new(a.x, b.y, a.z),
            Vec3::new(b.x, b.y, a.z),
            Vec3::new(a.x, a.y, b.z),
            Vec3::new(b.x, a.y, b.z),
            Vec3::new(a.x, b.y, b.z),
            Vec3::new(b.x, b.y, b.z),
        ]
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Point rigidly attached to the object, in object coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorPoint {
    pub position: Vec3,
}

impl AnchorPoint {
    pub fn new(position: Vec3) -> Self {
        Self { position }
    }

    /// Anchor expressed in the camera frame of `pose` (a `T_CO`).
    pub fn in_camera(&self, pose: &Pose) -> Vec3 {
        pose.transform_point(&self.position)
    }
}

impl TriMesh {
    /// Builds a mesh and checks indices and coordinates.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        let mesh = Self {
            vertices,
            triangles,
            colors: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if self.triangles.is_empty() || self.vertices.is_empty() {
            return Err(MeshError::Empty);
        }
        if let Some(i) = self.vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(MeshError::NonFinite(i));
        }
        let n = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i as usize >= n) {
                return Err(MeshError::IndexOutOfRange {
                    triangle: t,
                    index: bad as usize,
                    n_vertices: n,
                });
            }
        }
        if let Some(c) = &self.colors {
            if c.len() != n {
                return Err(MeshError::Parse {
                    line: 0,
                    msg: format!("{} colors for {} vertices", c.len(), n),
                });
            }
        }
        Ok(())
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Indices of triangles whose area is at or below [`DEGENERATE_AREA`].
    pub fn degenerate_triangles(&self) -> Vec<usize> {
        (0..self.triangles.len())
            .filter(|&t| self.triangle_area(t) <= DEGENERATE_AREA)
            .collect()
    }

    /// Unit normal following the triangle winding; zero for degenerate faces.
    pub fn face_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn aabb(&self) -> Aabb {
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            min = min.inf(v);
            max = max.sup(v);
        }
        Aabb { min, max }
    }

    /// Radius of the smallest sphere centered at `center` that contains the
    /// bounding box.
    pub fn bounding_radius(&self, center: &Vec3) -> f64 {
        self.aabb()
            .corners()
            .iter()
            .map(|c| (c - center).norm())
            .fold(0.0, f64::max)
    }

    pub fn transformed(&self, pose: &Pose) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| pose.transform_point(v)).collect(),
            triangles: self.triangles.clone(),
            colors: self.colors.clone(),
        }
    }

    pub fn scaled(&self, s: f64) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| v * s).collect(),
            triangles: self.triangles.clone(),
            colors: self.colors.clone(),
        }
    }

    pub fn with_color(mut self, rgb: [f32; 3]) -> TriMesh {
        self.colors = Some(vec![rgb; self.vertices.len()]);
        self
    }
}

/// Center of the axis-aligned bounding box.
pub fn default_anchor(mesh: &TriMesh) -> AnchorPoint {
    AnchorPoint::new(mesh.aabb().center())
}

/// Default number of surface points used for pose distances.
pub const DEFAULT_SURFACE_POINTS: usize = 2000;

/// `n` points uniformly distributed over the surface: triangles are picked
/// with probability proportional to area, then a uniform barycentric point is
/// drawn inside.
pub fn sample_surface_points<R: Rng + ?Sized>(mesh: &TriMesh, n: usize, rng: &mut R) -> Vec<Vec3> {
    sample_surface_points_with_faces(mesh, n, rng)
        .into_iter()
        .map(|(p, _)| p)
        .collect()
}

/// As [`sample_surface_points`], also returning the source triangle index.
pub fn sample_surface_points_with_faces<R: Rng + ?Sized>(
    mesh: &TriMesh,
    n: usize,
    rng: &mut R,
) -> Vec<(Vec3, usize)> {
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Vec::new();
    }
    (0..n)
        .map(|_| {
            let pick: f64 = rng.random::<f64>() * total;
            let t = cumulative
                .partition_point(|&c| c <= pick)
                .min(cumulative.len() - 1);
            let r1: f64 = rng.random();
            let r2: f64 = rng.random();
            let s = r1.sqrt();
            let [a, b, c] = mesh.corners(t);
            (a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2), t)
        })
        .collect()
}

/// A mesh with its anchor and the fixed point sample used for pose
/// distances.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    pub name: String,
    pub mesh: TriMesh,
    pub anchor: AnchorPoint,
    pub points: Vec<Vec3>,
}

impl ObjectModel {
    /// Anchor at the bounding-box center; `DEFAULT_SURFACE_POINTS` points
    /// drawn from `rng`.
    pub fn new<R: Rng + ?Sized>(name: impl Into<String>, mesh: TriMesh, rng: &mut R) -> Self {
        let anchor = default_anchor(&mesh);
        let points = sample_surface_points(&mesh, DEFAULT_SURFACE_POINTS, rng);
        Self {
            name: name.into(),
            mesh,
            anchor,
            points,
        }
    }

    pub fn with_anchor(mut self, anchor: AnchorPoint) -> Self {
        self.anchor = anchor;
        self
    }

    /// Bounding radius about the anchor.
    pub fn radius(&self) -> f64 {
        self.mesh.bounding_radius(&self.anchor.position)
    }
}
