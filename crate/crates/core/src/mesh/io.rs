//! OBJ (ASCII `v`/`f`, triangles only) and binary little-endian PLY.

use super::{MeshError, TriMesh};
use crate::geometry::Vec3;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self, MeshError> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(e) if e == "obj" => Ok(MeshFormat::Obj),
            Some(e) if e == "ply" => Ok(MeshFormat::Ply),
            other => Err(MeshError::UnsupportedFormat(format!("{other:?}"))),
        }
    }
}

/// Loads a mesh and multiplies every coordinate by `scale` (1.0 for files
/// already in meters).
pub fn load_mesh(path: &Path, format: Option<MeshFormat>, scale: f64) -> Result<TriMesh, MeshError> {
    let format = match format {
        Some(f) => f,
        None => MeshFormat::from_path(path)?,
    };
    let file = std::fs::File::open(path)?;
    let mesh = match format {
        MeshFormat::Obj => read_obj(BufReader::new(file))?,
        MeshFormat::Ply => read_ply(BufReader::new(file))?,
    };
    Ok(if scale == 1.0 { mesh } else { mesh.scaled(scale) })
}

fn parse_err(line: usize, msg: impl Into<String>) -> MeshError {
    MeshError::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn read_obj<R: BufRead>(reader: R) -> Result<TriMesh, MeshError> {
    let mut vertices = Vec::new();
    let mut faces: Vec<(usize, [i64; 3])> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut xyz = [0.0; 3];
                for c in xyz.iter_mut() {
                    let tok = tokens.next().ok_or_else(|| parse_err(lineno, "vertex needs 3 coordinates"))?;
                    *c = tok
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad coordinate {tok:?}")))?;
                }
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let idx: Vec<i64> = tokens
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        head.parse::<i64>()
                            .map_err(|_| parse_err(lineno, format!("bad face index {t:?}")))
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(parse_err(
                        lineno,
                        format!("only triangular faces are supported, got {} indices", idx.len()),
                    ));
                }
                faces.push((lineno, [idx[0], idx[1], idx[2]]));
            }
            _ => {}
        }
    }
    let n = vertices.len() as i64;
    let mut triangles = Vec::with_capacity(faces.len());
    for (t, (lineno, f)) in faces.iter().enumerate() {
        let mut tri = [0u32; 3];
        for k in 0..3 {
            // 1-based, negative values count back from the last vertex.
            let resolved = if f[k] > 0 { f[k] - 1 } else { n + f[k] };
            if f[k] == 0 || resolved < 0 || resolved >= n {
                return Err(MeshError::IndexOutOfRange {
                    triangle: t,
                    index: f[k].unsigned_abs() as usize,
                    n_vertices: n as usize,
                });
            }
            tri[k] = u32::try_from(resolved).map_err(|_| parse_err(*lineno, "index overflow"))?;
        }
        triangles.push(tri);
    }
    TriMesh::new(vertices, triangles)
}

pub fn write_obj<W: Write>(mesh: &TriMesh, mut w: W) -> std::io::Result<()> {
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn read<R: Read>(self, r: &mut R) -> std::io::Result<f64> {
        macro_rules! rd {
            ($t:ty) => {{
                let mut b = [0u8; std::mem::size_of::<$t>()];
                r.read_exact(&mut b)?;
                <$t>::from_le_bytes(b) as f64
            }};
        }
        Ok(match self {
            Scalar::I8 => rd!(i8),
            Scalar::U8 => rd!(u8),
            Scalar::I16 => rd!(i16),
            Scalar::U16 => rd!(u16),
            Scalar::I32 => rd!(i32),
            Scalar::U32 => rd!(u32),
            Scalar::F32 => rd!(f32),
            Scalar::F64 => rd!(f64),
        })
    }
}

enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Reads `binary_little_endian 1.0` PLY with a `vertex` element (`x y z`,
/// optional `red green blue` as uchar) and a `face` element whose vertex
/// index list is named `vertex_indices` or `vertex_index`.
pub fn read_ply<R: BufRead>(mut reader: R) -> Result<TriMesh, MeshError> {
    let mut elements: Vec<Element> = Vec::new();
    let mut lineno = 0;
    let mut magic = String::new();
    reader.read_line(&mut magic)?;
    lineno += 1;
    if magic.trim_end() != "ply" {
        return Err(parse_err(lineno, "missing 'ply' magic"));
    }
    let mut saw_format = false;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(parse_err(lineno, "unterminated header"));
        }
        lineno += 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "binary_little_endian", _] => saw_format = true,
            ["format", other, ..] => {
                return Err(parse_err(lineno, format!("unsupported PLY format {other}")));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad element count {count:?}")))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(lineno, "property before element"))?;
                el.props.push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(count).ok_or_else(|| parse_err(lineno, "bad list count type"))?,
                    item: Scalar::parse(item).ok_or_else(|| parse_err(lineno, "bad list item type"))?,
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(lineno, "property before element"))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty).ok_or_else(|| parse_err(lineno, format!("bad type {ty}")))?,
                });
            }
            ["end_header"] => break,
            _ => return Err(parse_err(lineno, format!("unexpected header line {:?}", line.trim_end()))),
        }
    }
    if !saw_format {
        return Err(parse_err(lineno, "missing format line"));
    }

    let mut vertices = Vec::new();
    let mut colors: Vec<[f32; 3]> = Vec::new();
    let mut has_color = false;
    let mut triangles = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [f64::NAN; 3];
            let mut rgb = [f64::NAN; 3];
            let mut face: Option<Vec<f64>> = None;
            for prop in &el.props {
                match prop {
                    Property::Scalar { name, ty } => {
                        let v = ty.read(&mut reader)?;
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            "red" => rgb[0] = v,
                            "green" => rgb[1] = v,
                            "blue" => rgb[2] = v,
                            _ => {}
                        }
                    }
                    Property::List { name, count, item } => {
                        let n = count.read(&mut reader)? as usize;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            items.push(item.read(&mut reader)?);
                        }
                        if name == "vertex_indices" || name == "vertex_index" {
                            face = Some(items);
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => {
                    vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
                    if rgb.iter().all(|c| c.is_finite()) {
                        has_color = true;
                        colors.push(rgb.map(|c| (c / 255.0) as f32));
                    }
                }
                "face" => {
                    let idx = face.ok_or_else(|| parse_err(lineno, "face without vertex_indices"))?;
                    if idx.len() != 3 {
                        return Err(parse_err(
                            lineno,
                            format!("only triangular faces are supported, got {}", idx.len()),
                        ));
                    }
                    let mut tri = [0u32; 3];
                    for k in 0..3 {
                        if idx[k] < 0.0 || idx[k] > u32::MAX as f64 {
                            return Err(MeshError::IndexOutOfRange {
                                triangle: triangles.len(),
                                index: idx[k].max(0.0) as usize,
                                n_vertices: vertices.len(),
                            });
                        }
                        tri[k] = idx[k] as u32;
                    }
                    triangles.push(tri);
                }
                _ => {}
            }
        }
    }
    let mut mesh = TriMesh {
        vertices,
        triangles,
        colors: None,
    };
    if has_color && colors.len() == mesh.vertices.len() {
        mesh.colors = Some(colors);
    }
    mesh.validate()?;
    Ok(mesh)
}

pub fn write_ply_binary<W: Write>(mesh: &TriMesh, mut w: W) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    if mesh.colors.is_some() {
        writeln!(w, "property uchar red")?;
        writeln!(w, "property uchar green")?;
        writeln!(w, "property uchar blue")?;
    }
    writeln!(w, "element face {}", mesh.triangles.len())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in v.iter() {
            w.write_all(&(*c as f32).to_le_bytes())?;
        }
        if let Some(colors) = &mesh.colors {
            for c in colors[i] {
                w.write_all(&[(c.clamp(0.0, 1.0) * 255.0).round() as u8])?;
            }
        }
    }
    for t in &mesh.triangles {
        w.write_all(&[3u8])?;
        for &i in t {
            w.write_all(&(i as i32).to_le_bytes())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{procedural_shape, ShapeKind};
    use std::io::Cursor;

    fn cube_obj() -> String {
        let mut s = String::from("# unit cube\n");
        let cube = procedural_shape(&ShapeKind::Box { size: Vec3::new(1.0, 1.0, 1.0) }).unwrap();
        let mut buf = Vec::new();
        write_obj(&cube, &mut buf).unwrap();
        s.push_str(std::str::from_utf8(&buf).unwrap());
        s
    }

    #[test]
    fn obj_cube() {
        let m = read_obj(Cursor::new(cube_obj())).unwrap();
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.triangles.len(), 12);
    }

    #[test]
    fn obj_slash_and_negative_indices() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2//2 -1\n";
        let m = read_obj(Cursor::new(src)).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
    }

    #[test]
    fn ply_matches_obj() {
        let obj = read_obj(Cursor::new(cube_obj())).unwrap();
        let mut bytes = Vec::new();
        write_ply_binary(&obj, &mut bytes).unwrap();
        let ply = read_ply(Cursor::new(bytes)).unwrap();
        assert_eq!(ply.vertices, obj.vertices);
        assert_eq!(ply.triangles, obj.triangles);
    }

    #[test]
    fn ply_colors_survive() {
        let m = procedural_shape(&ShapeKind::Box { size: Vec3::new(1.0, 1.0, 1.0) })
            .unwrap()
            .with_color([1.0, 0.0, 0.2]);
        let mut bytes = Vec::new();
        write_ply_binary(&m, &mut bytes).unwrap();
        let back = read_ply(Cursor::new(bytes)).unwrap();
        let c = back.colors.unwrap()[3];
        assert_eq!(c[0], 1.0);
        assert!((c[2] - 51.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn errors_are_distinct() {
        let bad_index = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n";
        assert!(matches!(
            read_obj(Cursor::new(bad_index)),
            Err(MeshError::IndexOutOfRange { index: 9, .. })
        ));
        assert!(matches!(read_obj(Cursor::new("v 0 0\n")), Err(MeshError::Parse { line: 1, .. })));
        assert!(matches!(read_obj(Cursor::new("# nothing\n")), Err(MeshError::Empty)));
        assert!(matches!(
            read_obj(Cursor::new("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n")),
            Err(MeshError::Parse { line: 5, .. })
        ));
        assert!(matches!(read_ply(Cursor::new("ply\nformat ascii 1.0\n")), Err(MeshError::Parse { .. })));
    }

    #[test]
    fn ply_out_of_range_index() {
        let mut m = procedural_shape(&ShapeKind::Box { size: Vec3::new(1.0, 1.0, 1.0) }).unwrap();
        m.triangles[0][1] = 40;
        let mut bytes = Vec::new();
        write_ply_binary(&m, &mut bytes).unwrap();
        assert!(matches!(
            read_ply(Cursor::new(bytes)),
            Err(MeshError::IndexOutOfRange { index: 40, .. })
        ));
    }

    #[test]
    fn load_from_disk_with_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.obj");
        std::fs::write(&path, cube_obj()).unwrap();
        let m = load_mesh(&path, None, 0.1).unwrap();
        assert!((m.aabb().extents() - Vec3::new(0.1, 0.1, 0.1)).amax() < 1e-12);
        assert!(matches!(
            load_mesh(&dir.path().join("cube.stl"), None, 1.0),
            Err(MeshError::UnsupportedFormat(_))
        ));
    }
}
