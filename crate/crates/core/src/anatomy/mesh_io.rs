//! Binary STL and a `v`/`f` subset of OBJ.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Point3;

use super::{AnatomyError, SurfaceMesh};

fn malformed(path: &Path, message: impl Into<String>) -> AnatomyError {
    AnatomyError::MalformedMesh { path: path.to_path_buf(), message: message.into() }
}

/// Load a mesh, dispatching on the file extension (`.stl` or `.obj`).
pub fn load_mesh(path: &Path) -> Result<SurfaceMesh, AnatomyError> {
    let bytes = fs::read(path).map_err(|source| AnatomyError::Io { path: path.to_path_buf(), source })?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh");
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("stl") => {
            let soup = parse_stl(path, &bytes)?;
            SurfaceMesh::from_soup(name, &soup)
        }
        Some("obj") => {
            let text = std::str::from_utf8(&bytes).map_err(|_| malformed(path, "not UTF-8"))?;
            let (v, t) = parse_obj(path, text)?;
            SurfaceMesh::from_indexed(name, v, t)
        }
        _ => Err(malformed(path, "unsupported extension (expected .stl or .obj)")),
    }
}

fn parse_stl(path: &Path, bytes: &[u8]) -> Result<Vec<[Point3<f64>; 3]>, AnatomyError> {
    if bytes.len() < 84 {
        return Err(malformed(path, "shorter than the 84-byte STL preamble"));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let expected = 84 + 50 * count;
    if bytes.len() != expected {
        return Err(malformed(path, format!("{count} records need {expected} bytes, file has {}", bytes.len())));
    }
    let f = |b: &[u8]| f32::from_le_bytes(b.try_into().unwrap()) as f64;
    let mut soup = Vec::with_capacity(count);
    for rec in bytes[84..].chunks_exact(50) {
        let mut tri = [Point3::origin(); 3];
        for (k, p) in tri.iter_mut().enumerate() {
            let o = 12 + 12 * k;
            *p = Point3::new(f(&rec[o..o + 4]), f(&rec[o + 4..o + 8]), f(&rec[o + 8..o + 12]));
        }
        if tri.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(malformed(path, "non-finite vertex"));
        }
        soup.push(tri);
    }
    Ok(soup)
}

type IndexedMesh = (Vec<Point3<f64>>, Vec<[u32; 3]>);

fn parse_obj(path: &Path, text: &str) -> Result<IndexedMesh, AnatomyError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            None => continue,
            Some(t) if t.starts_with('#') => continue,
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| malformed(path, format!("line {}: {e}", lineno + 1)))?;
                if coords.len() != 3 {
                    return Err(malformed(path, format!("line {}: vertex needs 3 coordinates", lineno + 1)));
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = tokens
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or("");
                        match first.parse::<u32>() {
                            Ok(i) if i >= 1 => Ok(i - 1),
                            _ => Err(malformed(path, format!("line {}: bad face index '{tok}'", lineno + 1))),
                        }
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(malformed(path, format!("line {}: only triangular faces are supported", lineno + 1)));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            // Attribute and grouping records carry nothing we use.
            Some("vn" | "vt" | "o" | "g" | "s" | "usemtl" | "mtllib") => continue,
            Some(other) => {
                return Err(malformed(path, format!("line {}: unsupported record '{other}'", lineno + 1)));
            }
        }
    }
    if let Some(bad) = faces.iter().flatten().find(|&&i| i as usize >= vertices.len()) {
        return Err(malformed(path, format!("face index {} out of range", bad + 1)));
    }
    Ok((vertices, faces))
}

pub fn write_stl(mesh: &SurfaceMesh, path: &Path) -> Result<(), AnatomyError> {
    let mut out = Vec::with_capacity(84 + 50 * mesh.triangles.len());
    let mut header = [0u8; 80];
    let tag = b"binary STL";
    header[..tag.len()].copy_from_slice(tag);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.triangles.len() as u32).to_le_bytes());
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
        let n = (b - a).cross(&(c - a)).try_normalize(0.0).unwrap_or_default();
        for x in n.iter().chain(a.coords.iter()).chain(b.coords.iter()).chain(c.coords.iter()) {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    fs::write(path, out).map_err(|source| AnatomyError::Io { path: path.to_path_buf(), source })
}

pub fn write_obj(mesh: &SurfaceMesh, path: &Path) -> Result<(), AnatomyError> {
    let mut s = String::new();
    for v in &mesh.vertices {
        writeln!(s, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for t in &mesh.triangles {
        writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
    }
    fs::write(path, s).map_err(|source| AnatomyError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::primitives;
    use nalgebra::Vector3;

    #[test]
    fn unit_cube_stl_dedups_to_eight_vertices() {
        let dir = tempfile::tempdir().unwrap();
        let cube = primitives::cuboid(Vector3::new(10.0, 10.0, 10.0));
        let p = dir.path().join("cube.stl");
        write_stl(&cube, &p).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 84 + 50 * 12);
        let m = load_mesh(&p).unwrap();
        assert_eq!(m.triangles.len(), 12);
        // Brute-force merge of the 36 soup corners at 1e-6 mm.
        let soup: Vec<Point3<f64>> =
            cube.triangles.iter().flatten().map(|&i| cube.vertices[i as usize].cast::<f32>().cast()).collect();
        let mut unique: Vec<Point3<f64>> = Vec::new();
        for p in soup {
            if !unique.iter().any(|q| (q - p).amax() <= 1e-6) {
                unique.push(p);
            }
        }
        assert_eq!(unique.len(), 8);
        assert_eq!(m.vertices.len(), unique.len());
        assert!((m.signed_volume() - 1000.0).abs() < 1e-6);
    }

    #[test]
    fn obj_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cube = primitives::cuboid(Vector3::new(1.0, 2.0, 3.0));
        let p = dir.path().join("c.obj");
        write_obj(&cube, &p).unwrap();
        let m = load_mesh(&p).unwrap();
        assert_eq!(m.vertices.len(), 8);

        let bad = dir.path().join("bad.obj");
        fs::write(&bad, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n").unwrap();
        assert!(matches!(load_mesh(&bad), Err(AnatomyError::MalformedMesh { .. })));
        fs::write(&bad, "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 3 4\n").unwrap();
        assert!(matches!(load_mesh(&bad), Err(AnatomyError::MalformedMesh { .. })));

        let open = dir.path().join("open.obj");
        fs::write(&open, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3\nf 1 3 4\n").unwrap();
        assert!(matches!(load_mesh(&open), Err(AnatomyError::NotWatertight { .. })));
    }

    #[test]
    fn truncated_stl_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.stl");
        let mut bytes = vec![0u8; 80];
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 50]);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_mesh(&p), Err(AnatomyError::MalformedMesh { .. })));
    }
}
