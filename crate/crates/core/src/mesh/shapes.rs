use super::{MeshError, TriMesh};
use crate::geometry::Vec3;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Closed, outward-wound procedural test shapes. Dimensions in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeKind {
    /// Centered box with the given edge lengths.
    Box { size: Vec3 },
    /// Icosphere centered at the origin.
    Sphere { radius: f64, subdivisions: u32 },
    /// Cylinder along `z`, centered at the origin.
    Cylinder { radius: f64, height: f64, segments: u32 },
    /// L-shaped prism. The profile lies in the `xy` plane with its corner at
    /// the origin: a `long x thickness` arm along `x` and a
    /// `thickness x short` arm along `y`, extruded over `[0, depth]` in `z`.
    Lshape {
        long: f64,
        short: f64,
        thickness: f64,
        depth: f64,
    },
}

impl ShapeKind {
    /// L-shape spanning `[0,2] x [0,1] x [0,1]`.
    pub fn default_lshape() -> Self {
        ShapeKind::Lshape {
            long: 2.0,
            short: 1.0,
            thickness: 0.5,
            depth: 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Box { .. } => "box",
            ShapeKind::Sphere { .. } => "sphere",
            ShapeKind::Cylinder { .. } => "cylinder",
            ShapeKind::Lshape { .. } => "lshape",
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), MeshError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(MeshError::InvalidShape(format!("{name} must be positive, got {v}")))
    }
}

pub fn procedural_shape(kind: &ShapeKind) -> Result<TriMesh, MeshError> {
    match *kind {
        ShapeKind::Box { size } => {
            for i in 0..3 {
                positive("box size", size[i])?;
            }
            Ok(make_box(size))
        }
        ShapeKind::Sphere {
            radius,
            subdivisions,
        } => {
            positive("radius", radius)?;
            if subdivisions > 6 {
                return Err(MeshError::InvalidShape(format!(
                    "at most 6 sphere subdivisions, got {subdivisions}"
                )));
            }
            Ok(make_icosphere(radius, subdivisions))
        }
        ShapeKind::Cylinder {
            radius,
            height,
            segments,
        } => {
            positive("radius", radius)?;
            positive("height", height)?;
            if segments < 3 {
                return Err(MeshError::InvalidShape(format!(
                    "cylinder needs at least 3 segments, got {segments}"
                )));
            }
            Ok(make_cylinder(radius, height, segments))
        }
        ShapeKind::Lshape {
            long,
            short,
            thickness,
            depth,
        } => {
            positive("long", long)?;
            positive("short", short)?;
            positive("thickness", thickness)?;
            positive("depth", depth)?;
            if thickness >= long || thickness >= short {
                return Err(MeshError::InvalidShape(format!(
                    "thickness {thickness} must be below both arm lengths ({long}, {short})"
                )));
            }
            let profile = [
                (0.0, 0.0),
                (long, 0.0),
                (long, thickness),
                (thickness, thickness),
                (thickness, short),
                (0.0, short),
            ];
            // Fan from the outer corner; the reflex vertex 3 is visible from it.
            let fan = [[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 5]];
            Ok(extrude(&profile, &fan, depth))
        }
    }
}

fn make_box(size: Vec3) -> TriMesh {
    let h = size * 0.5;
    let mut vertices = Vec::with_capacity(8);
    for i in 0..8 {
        vertices.push(Vec3::new(
            if i & 1 == 0 { -h.x } else { h.x },
            if i & 2 == 0 { -h.y } else { h.y },
            if i & 4 == 0 { -h.z } else { h.z },
        ));
    }
    let triangles = vec![
        [0, 2, 1],
        [1, 2, 3], // -z
        [4, 5, 6],
        [5, 7, 6], // +z
        [0, 1, 4],
        [1, 5, 4], // -y
        [2, 6, 3],
        [3, 6, 7], // +y
        [0, 4, 2],
        [2, 4, 6], // -x
        [1, 3, 5],
        [3, 7, 5], // +x
    ];
    TriMesh {
        vertices,
        triangles,
        colors: None,
    }
}

fn extrude(profile: &[(f64, f64)], cap: &[[u32; 3]], depth: f64) -> TriMesh {
    let n = profile.len() as u32;
    let mut vertices: Vec<Vec3> = profile.iter().map(|&(x, y)| Vec3::new(x, y, 0.0)).collect();
    vertices.extend(profile.iter().map(|&(x, y)| Vec3::new(x, y, depth)));
    let mut triangles = Vec::new();
    for t in cap {
        triangles.push([t[0], t[2], t[1]]);
        triangles.push([t[0] + n, t[1] + n, t[2] + n]);
    }
    for i in 0..n {
        let j = (i + 1) % n;
        triangles.push([i, j, j + n]);
        triangles.push([i, j + n, i + n]);
    }
    TriMesh {
        vertices,
        triangles,
        colors: None,
    }
}

fn make_cylinder(radius: f64, height: f64, segments: u32) -> TriMesh {
    let h = height / 2.0;
    let mut vertices = Vec::with_capacity(2 * segments as usize + 2);
    for z in [-h, h] {
        for i in 0..segments {
            let a = std::f64::consts::TAU * i as f64 / segments as f64;
            vertices.push(Vec3::new(radius * a.cos(), radius * a.sin(), z));
        }
    }
    let bottom = vertices.len() as u32;
    vertices.push(Vec3::new(0.0, 0.0, -h));
    let top = bottom + 1;
    vertices.push(Vec3::new(0.0, 0.0, h));
    let mut triangles = Vec::new();
    for i in 0..segments {
        let j = (i + 1) % segments;
        triangles.push([i, j, j + segments]);
        triangles.push([i, j + segments, i + segments]);
        triangles.push([bottom, j, i]);
        triangles.push([top, i + segments, j + segments]);
    }
    TriMesh {
        vertices,
        triangles,
        colors: None,
    }
}

fn make_icosphere(radius: f64, subdivisions: u32) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut triangles: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                verts.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for [a, b, c] in triangles {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = next;
    }
    for v in vertices.iter_mut() {
        *v *= radius;
    }
    TriMesh {
        vertices,
        triangles,
        colors: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Mat3, Pose};
    use std::collections::HashMap;

    /// Every directed edge must appear exactly once and its reverse exactly
    /// once for a closed, consistently wound surface.
    fn is_watertight(mesh: &TriMesh) -> bool {
        let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &mesh.triangles {
            for k in 0..3 {
                *edges.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        edges
            .iter()
            .all(|(&(a, b), &count)| count == 1 && edges.get(&(b, a)) == Some(&1))
    }

    /// Signed volume is positive for outward winding.
    fn signed_volume(mesh: &TriMesh) -> f64 {
        (0..mesh.triangles.len())
            .map(|t| {
                let [a, b, c] = mesh.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    fn all_shapes() -> Vec<ShapeKind> {
        vec![
            ShapeKind::Box { size: Vec3::new(0.1, 0.2, 0.3) },
            ShapeKind::Sphere { radius: 0.05, subdivisions: 3 },
            ShapeKind::Cylinder { radius: 0.03, height: 0.1, segments: 24 },
            ShapeKind::default_lshape(),
        ]
    }

    #[test]
    fn shapes_are_closed_and_outward() {
        for kind in all_shapes() {
            let m = procedural_shape(&kind).unwrap();
            assert!(is_watertight(&m), "{kind:?}");
            assert!(signed_volume(&m) > 0.0, "{kind:?}");
            assert!(m.degenerate_triangles().is_empty(), "{kind:?}");
        }
    }

    #[test]
    fn box_extents() {
        let m = procedural_shape(&ShapeKind::Box { size: Vec3::new(0.1, 0.1, 0.1) }).unwrap();
        assert!((m.aabb().extents() - Vec3::new(0.1, 0.1, 0.1)).amax() < 1e-15);
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.triangles.len(), 12);
    }

    #[test]
    fn sphere_radius() {
        let m = procedural_shape(&ShapeKind::Sphere { radius: 0.05, subdivisions: 3 }).unwrap();
        let max = m.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!((max - 0.05).abs() < 1e-9);
        assert_eq!(m.triangles.len(), 20 * 64);
    }

    #[test]
    fn lshape_volume_and_bounds() {
        let m = procedural_shape(&ShapeKind::default_lshape()).unwrap();
        // 2 x 0.5 + 0.5 x 0.5 area, unit depth.
        assert!((signed_volume(&m) - 1.25).abs() < 1e-12);
        let b = m.aabb();
        assert_eq!(b.min, Vec3::zeros());
        assert_eq!(b.max, Vec3::new(2.0, 1.0, 1.0));
    }

    #[test]
    fn non_positive_dimensions_rejected() {
        assert!(procedural_shape(&ShapeKind::Box { size: Vec3::new(0.1, 0.0, 0.1) }).is_err());
        assert!(procedural_shape(&ShapeKind::Sphere { radius: -1.0, subdivisions: 1 }).is_err());
        assert!(procedural_shape(&ShapeKind::Cylinder { radius: 1.0, height: 1.0, segments: 2 }).is_err());
    }

    /// The 24 proper rotations of the cube: signed permutation matrices with
    /// determinant +1.
    fn cube_rotations() -> Vec<Mat3> {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut out = Vec::new();
        for p in perms {
            for signs in 0..8 {
                let mut m = Mat3::zeros();
                for (row, &col) in p.iter().enumerate() {
                    m[(row, col)] = if signs & (1 << row) == 0 { 1.0 } else { -1.0 };
                }
                if m.determinant() > 0.0 {
                    out.push(m);
                }
            }
        }
        out
    }

    /// Largest distance from a rotated vertex to its nearest original vertex,
    /// rotating about the vertex centroid.
    fn symmetry_residual(mesh: &TriMesh, r: &Mat3) -> f64 {
        let c = mesh.vertices.iter().sum::<Vec3>() / mesh.vertices.len() as f64;
        let pose = Pose::new(*r, c - r * c);
        mesh.vertices
            .iter()
            .map(|v| {
                let w = pose.transform_point(v);
                mesh.vertices.iter().map(|u| (u - w).norm()).fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn lshape_has_no_cube_rotation_symmetry() {
        let rots = cube_rotations();
        assert_eq!(rots.len(), 24);
        let l = procedural_shape(&ShapeKind::default_lshape()).unwrap();
        for r in rots.iter().filter(|r| (*r - Mat3::identity()).amax() > 0.0) {
            assert!(symmetry_residual(&l, r) > 1e-3);
        }
        // Control: the box is mapped onto itself by some of them.
        let b = procedural_shape(&ShapeKind::Box { size: Vec3::new(1.0, 1.0, 1.0) }).unwrap();
        let symmetric = rots.iter().filter(|r| symmetry_residual(&b, r) < 1e-12).count();
        assert_eq!(symmetric, 24);
    }
}
