//! Closed primitive meshes centred at the origin, used for procedural tools
//! and test phantoms.
//!
//! Catalog entries can reference them with `primitive:<shape>:k=v,...`:
//!
//! * `primitive:box:x=10,y=4,z=2`
//! * `primitive:cylinder:radius=2,length=110[,segments=24]` (axis along z)
//! * `primitive:sphere:radius=5[,subdivisions=3]`

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use super::{AnatomyError, SurfaceMesh};

pub const PRIMITIVE_PREFIX: &str = "primitive:";

/// Axis-aligned box with the given edge lengths.
pub fn cuboid(size: Vector3<f64>) -> SurfaceMesh {
    let h = size * 0.5;
    let v: Vec<Point3<f64>> = (0..8)
        .map(|i| {
            Point3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            )
        })
        .collect();
    let t = vec![
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
    SurfaceMesh::from_indexed("box", v, t).expect("box is watertight")
}

/// Closed cylinder along z, centred at the origin.
pub fn cylinder(radius: f64, length: f64, segments: usize) -> SurfaceMesh {
    let n = segments.max(3);
    let h = length * 0.5;
    let mut v = Vec::with_capacity(2 * n + 2);
    for i in 0..n {
        let a = std::f64::consts::TAU * i as f64 / n as f64;
        v.push(Point3::new(radius * a.cos(), radius * a.sin(), -h));
        v.push(Point3::new(radius * a.cos(), radius * a.sin(), h));
    }
    let bottom = v.len() as u32;
    v.push(Point3::new(0.0, 0.0, -h));
    let top = v.len() as u32;
    v.push(Point3::new(0.0, 0.0, h));
    let mut t = Vec::with_capacity(4 * n);
    for i in 0..n as u32 {
        let j = (i + 1) % n as u32;
        let (b0, t0, b1, t1) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
        t.push([b0, b1, t1]);
        t.push([b0, t1, t0]);
        t.push([bottom, b1, b0]);
        t.push([top, t0, t1]);
    }
    SurfaceMesh::from_indexed("cylinder", v, t).expect("cylinder is watertight")
}

/// Subdivided icosahedron with vertices on the sphere of the given radius.
pub fn icosphere(radius: f64, subdivisions: usize) -> SurfaceMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vector3<f64>> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut t: Vec<[u32; 3]> = vec![
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
        let mut mid = |a: u32, b: u32, v: &mut Vec<Vector3<f64>>| -> u32 {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a as usize] + v[b as usize]) * 0.5).normalize());
                (v.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(t.len() * 4);
        for &[a, b, c] in &t {
            let ab = mid(a, b, &mut v);
            let bc = mid(b, c, &mut v);
            let ca = mid(c, a, &mut v);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        t = next;
    }
    let points = v.into_iter().map(|p| Point3::from(p * radius)).collect();
    SurfaceMesh::from_indexed("sphere", points, t).expect("icosphere is watertight")
}

/// Parse a `primitive:` mesh reference.
pub fn from_spec(spec: &str) -> Result<SurfaceMesh, AnatomyError> {
    let bad = || AnatomyError::Primitive(spec.to_string());
    let rest = spec.strip_prefix(PRIMITIVE_PREFIX).ok_or_else(bad)?;
    let (shape, params) = rest.split_once(':').unwrap_or((rest, ""));
    let mut kv = HashMap::new();
    for pair in params.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = pair.split_once('=').ok_or_else(bad)?;
        let v: f64 = v.trim().parse().map_err(|_| bad())?;
        if !(v.is_finite() && v > 0.0) {
            return Err(bad());
        }
        kv.insert(k.trim(), v);
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(bad);
    let mesh = match shape {
        "box" => cuboid(Vector3::new(get("x")?, get("y")?, get("z")?)),
        "cylinder" => cylinder(get("radius")?, get("length")?, kv.get("segments").map_or(24, |&s| s as usize)),
        "sphere" => icosphere(get("radius")?, kv.get("subdivisions").map_or(3, |&s| s as usize)),
        _ => return Err(bad()),
    };
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volumes() {
        assert!((cuboid(Vector3::new(2.0, 3.0, 4.0)).signed_volume() - 24.0).abs() < 1e-9);
        let c = cylinder(1.0, 2.0, 256);
        assert!((c.signed_volume() - std::f64::consts::PI * 2.0).abs() < 1e-3);
        let s = icosphere(1.0, 4);
        assert!((s.signed_volume() - 4.0 / 3.0 * std::f64::consts::PI).abs() < 0.02);
    }

    #[test]
    fn spec_parsing() {
        let m = from_spec("primitive:cylinder:radius=2,length=110").unwrap();
        assert!((m.bounds().extent().z - 110.0).abs() < 1e-9);
        assert!(from_spec("primitive:box:x=1,y=2").is_err());
        assert!(from_spec("primitive:cone:radius=1").is_err());
        assert!(from_spec("cylinder:radius=1").is_err());
        assert!(from_spec("primitive:sphere:radius=-1").is_err());
    }
}
