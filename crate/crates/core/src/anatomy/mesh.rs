use std::collections::{HashMap, VecDeque};
use std::sync::OnceLock;

use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::AnatomyError;
use crate::geometry::{ray_mesh_path_length, Aabb, GeometryError, Ray, TriangleBvh};

/// Vertices closer than this (per axis, mm) are merged on load.
pub const DEDUP_TOLERANCE_MM: f64 = 1e-6;

/// Triangles with area below this (mm²) are dropped as degenerate.
const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Organ,
    Tool,
    Group,
}

impl std::fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ObjectKind::Organ => "organ",
            ObjectKind::Tool => "tool",
            ObjectKind::Group => "group",
        })
    }
}

/// Watertight, outward-oriented triangle mesh of an organ or tool.
#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub kind: ObjectKind,
    pub class_id: u32,
    pub name: String,
    pub description: String,
    /// Material key into the catalog's attenuation table (tools only).
    pub material: Option<String>,
    bvh: OnceLock<TriangleBvh>,
}

impl SurfaceMesh {
    /// Clean up and validate an indexed mesh: merge vertices within
    /// [`DEDUP_TOLERANCE_MM`], drop degenerate faces, require every edge to
    /// be shared by exactly two faces, and orient each connected component
    /// outward.
    pub fn from_indexed(
        name: &str,
        vertices: Vec<Point3<f64>>,
        triangles: Vec<[u32; 3]>,
    ) -> Result<Self, AnatomyError> {
        let (vertices, triangles) = clean(vertices, triangles);
        let mut mesh = Self::unchecked(name, vertices, triangles);
        mesh.validate()?;
        mesh.orient_outward()?;
        Ok(mesh)
    }

    /// Build from an unindexed triangle soup (e.g. STL records).
    pub fn from_soup(name: &str, soup: &[[Point3<f64>; 3]]) -> Result<Self, AnatomyError> {
        let vertices = soup.iter().flatten().copied().collect();
        let triangles = (0..soup.len() as u32).map(|i| [3 * i, 3 * i + 1, 3 * i + 2]).collect();
        Self::from_indexed(name, vertices, triangles)
    }

    pub(crate) fn unchecked(name: &str, vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Self {
        Self {
            vertices,
            triangles,
            kind: ObjectKind::Organ,
            class_id: 0,
            name: name.to_string(),
            description: String::new(),
            material: None,
            bvh: OnceLock::new(),
        }
    }

    pub fn with_identity(mut self, kind: ObjectKind, class_id: u32, name: &str, description: &str) -> Self {
        self.kind = kind;
        self.class_id = class_id;
        self.name = name.to_string();
        self.description = description.to_string();
        self
    }

    pub fn with_material(mut self, material: Option<String>) -> Self {
        self.material = material;
        self
    }

    pub(crate) fn validate(&self) -> Result<(), AnatomyError> {
        if self.triangles.is_empty() {
            return Err(AnatomyError::EmptyMesh(self.name.clone()));
        }
        let mut counts: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let boundary = counts.values().filter(|&&c| c == 1).count();
        let overshared = counts.values().filter(|&&c| c > 2).count();
        if boundary + overshared > 0 {
            return Err(AnatomyError::NotWatertight { name: self.name.clone(), boundary, overshared });
        }
        Ok(())
    }

    /// Make winding consistent across each connected component, then flip
    /// components whose signed volume is negative.
    fn orient_outward(&mut self) -> Result<(), AnatomyError> {
        let n = self.triangles.len();
        let mut edge_faces: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
        for (fi, t) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                edge_faces.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        let directed = |t: &[u32; 3], a: u32, b: u32| (0..3).any(|e| t[e] == a && t[(e + 1) % 3] == b);

        let mut component = vec![usize::MAX; n];
        let mut n_components = 0;
        for seed in 0..n {
            if component[seed] != usize::MAX {
                continue;
            }
            component[seed] = n_components;
            let mut queue = VecDeque::from([seed]);
            while let Some(f) = queue.pop_front() {
                let t = self.triangles[f];
                for e in 0..3 {
                    let (a, b) = (t[e], t[(e + 1) % 3]);
                    for &g in &edge_faces[&(a.min(b), a.max(b))] {
                        if g == f {
                            continue;
                        }
                        // Consistent neighbours traverse the shared edge b -> a.
                        let consistent = directed(&self.triangles[g], b, a);
                        if component[g] == usize::MAX {
                            component[g] = n_components;
                            if !consistent {
                                self.triangles[g].swap(1, 2);
                            }
                            queue.push_back(g);
                        } else if !consistent {
                            return Err(AnatomyError::NonOrientable(self.name.clone()));
                        }
                    }
                }
            }
            n_components += 1;
        }

        let reference = self.vertices[0];
        let mut volumes = vec![0.0; n_components];
        for (f, t) in self.triangles.iter().enumerate() {
            volumes[component[f]] += tet_volume(&reference, self.tri(t));
        }
        for (f, t) in self.triangles.iter_mut().enumerate() {
            if volumes[component[f]] < 0.0 {
                t.swap(1, 2);
            }
        }
        Ok(())
    }

    #[inline]
    fn tri(&self, t: &[u32; 3]) -> [&Point3<f64>; 3] {
        [&self.vertices[t[0] as usize], &self.vertices[t[1] as usize], &self.vertices[t[2] as usize]]
    }

    /// Enclosed volume via the divergence theorem (positive when outward).
    pub fn signed_volume(&self) -> f64 {
        let reference = self.bounds().center();
        self.triangles.iter().map(|t| tet_volume(&reference, self.tri(t))).sum()
    }

    /// Centroid of the enclosed solid.
    pub fn centroid(&self) -> Point3<f64> {
        let reference = self.bounds().center();
        let mut acc = Vector3::zeros();
        let mut vol = 0.0;
        for t in &self.triangles {
            let [a, b, c] = self.tri(t);
            let v = tet_volume(&reference, [a, b, c]);
            acc += (reference.coords + a.coords + b.coords + c.coords) * (v / 4.0);
            vol += v;
        }
        if vol.abs() < f64::EPSILON {
            return reference;
        }
        Point3::from(acc / vol)
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.tri(t);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }

    /// Lazily built acceleration structure.
    pub fn bvh(&self) -> &TriangleBvh {
        self.bvh.get_or_init(|| TriangleBvh::build(&self.vertices, &self.triangles))
    }

    /// Length (mm) of the ray inside the mesh.
    pub fn path_length(&self, ray: &Ray) -> Result<f64, GeometryError> {
        ray_mesh_path_length(&self.name, &self.vertices, &self.triangles, self.bvh(), ray)
    }

    /// Rigidly transformed copy (metadata kept, acceleration rebuilt).
    pub fn transformed(&self, iso: &Isometry3<f64>) -> SurfaceMesh {
        let mut out = self.clone();
        out.vertices = self.vertices.iter().map(|p| iso * p).collect();
        out.bvh = OnceLock::new();
        out
    }

    /// Copy translated so that the solid centroid sits at the origin.
    pub fn centered(&self) -> SurfaceMesh {
        let c = self.centroid();
        self.transformed(&Isometry3::translation(-c.x, -c.y, -c.z))
    }
}

fn tet_volume(o: &Point3<f64>, [a, b, c]: [&Point3<f64>; 3]) -> f64 {
    (a - o).dot(&(b - o).cross(&(c - o))) / 6.0
}

/// Merge near-duplicate vertices, drop degenerate triangles and unused
/// vertices. Output vertex order follows first use.
fn clean(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> (Vec<Point3<f64>>, Vec<[u32; 3]>) {
    let cell = |p: &Point3<f64>| -> [i64; 3] {
        [
            (p.x / DEDUP_TOLERANCE_MM).floor() as i64,
            (p.y / DEDUP_TOLERANCE_MM).floor() as i64,
            (p.z / DEDUP_TOLERANCE_MM).floor() as i64,
        ]
    };
    let mut grid: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
    let mut merged: Vec<Point3<f64>> = Vec::new();
    let mut remap = vec![u32::MAX; vertices.len()];
    let mut used_in_input = vec![false; vertices.len()];
    for t in &triangles {
        for &i in t {
            if let Some(u) = used_in_input.get_mut(i as usize) {
                *u = true;
            }
        }
    }
    for (i, p) in vertices.iter().enumerate() {
        if !used_in_input[i] {
            continue;
        }
        let c = cell(p);
        let mut found = None;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &m in list {
                            let q = &merged[m as usize];
                            if (q - p).amax() <= DEDUP_TOLERANCE_MM {
                                found = Some(m);
                                break 'search;
                            }
                        }
                    }
                }
            }
        }
        remap[i] = match found {
            Some(m) => m,
            None => {
                let m = merged.len() as u32;
                merged.push(*p);
                grid.entry(c).or_default().push(m);
                m
            }
        };
    }

    let mut kept = Vec::with_capacity(triangles.len());
    for t in triangles {
        if t.iter().any(|&i| i as usize >= remap.len()) {
            continue;
        }
        let r = [remap[t[0] as usize], remap[t[1] as usize], remap[t[2] as usize]];
        if r[0] == r[1] || r[1] == r[2] || r[0] == r[2] {
            continue;
        }
        let (a, b, c) = (&merged[r[0] as usize], &merged[r[1] as usize], &merged[r[2] as usize]);
        if 0.5 * (b - a).cross(&(c - a)).norm() < MIN_TRIANGLE_AREA {
            continue;
        }
        kept.push(r);
    }

    // Compact to vertices referenced by surviving triangles.
    let mut order = vec![u32::MAX; merged.len()];
    let mut out_vertices = Vec::new();
    for t in kept.iter_mut() {
        for i in t.iter_mut() {
            if order[*i as usize] == u32::MAX {
                order[*i as usize] = out_vertices.len() as u32;
                out_vertices.push(merged[*i as usize]);
            }
            *i = order[*i as usize];
        }
    }
    (out_vertices, kept)
}
