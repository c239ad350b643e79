//! Iso-surface extraction from a binary label field.
//!
//! The `{0, 1}` indicator of one class is contoured at level 0.5. Each lattice
//! cube is split into the six Kuhn tetrahedra that share its main diagonal,
//! a decomposition that matches across neighbouring cubes, so the output is
//! a closed 2-manifold with no ambiguous cases. Every crossing sits at the
//! midpoint of a lattice edge; vertices are keyed by doubled lattice
//! coordinates, which makes sharing exact.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use super::{AnatomyError, CtVolume, ObjectKind, SurfaceMesh};

const MIN_REGION_VOXELS: usize = 8;

/// Cube corner offsets indexed by bit pattern `x | y << 1 | z << 2`.
fn corner(bits: usize) -> [i64; 3] {
    [(bits & 1) as i64, ((bits >> 1) & 1) as i64, ((bits >> 2) & 1) as i64]
}

/// The six Kuhn tetrahedra: monotone lattice paths from corner 0 to corner 7.
const KUHN: [[usize; 4]; 6] = [
    [0, 1, 3, 7], // x, y, z
    [0, 1, 5, 7], // x, z, y
    [0, 2, 3, 7], // y, x, z
    [0, 2, 6, 7], // y, z, x
    [0, 4, 5, 7], // z, x, y
    [0, 4, 6, 7], // z, y, x
];

/// Surface of all voxels labelled `class_id`, in world coordinates.
pub fn voxelize_labels_to_meshes(vol: &CtVolume, class_id: u32) -> Result<SurfaceMesh, AnatomyError> {
    let labels = vol.labels.as_ref().ok_or(AnatomyError::NoLabels)?;
    let [nx, ny, nz] = vol.dims;
    let mut count = 0usize;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if labels[vol.index(i, j, k)] as u32 == class_id {
                    count += 1;
                    for (a, c) in [i, j, k].into_iter().enumerate() {
                        lo[a] = lo[a].min(c);
                        hi[a] = hi[a].max(c);
                    }
                }
            }
        }
    }
    if count == 0 {
        return Err(AnatomyError::ClassAbsent(class_id));
    }
    if count < MIN_REGION_VOXELS {
        return Err(AnatomyError::RegionTooSmall { class: class_id, voxels: count });
    }

    let inside = |p: [i64; 3]| -> bool {
        if p.iter().zip(vol.dims.iter()).any(|(&c, &d)| c < 0 || c >= d as i64) {
            return false;
        }
        labels[vol.index(p[0] as usize, p[1] as usize, p[2] as usize)] as u32 == class_id
    };

    let mut vertex_of: HashMap<[i64; 3], u32> = HashMap::new();
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    // Edge midpoints in doubled lattice coordinates.
    let mid = |a: [i64; 3], b: [i64; 3]| -> [i64; 3] { [a[0] + b[0], a[1] + b[1], a[2] + b[2]] };
    let world = |key: [i64; 3]| -> Vector3<f64> {
        Vector3::new(
            key[0] as f64 * 0.5 * vol.spacing.x,
            key[1] as f64 * 0.5 * vol.spacing.y,
            key[2] as f64 * 0.5 * vol.spacing.z,
        )
    };

    // Cubes whose lower corner lies one cell outside the occupied box up to
    // its last index cover every sign change, including the implicit
    // zero padding beyond the volume.
    for cz in lo[2] as i64 - 1..=hi[2] as i64 {
        for cy in lo[1] as i64 - 1..=hi[1] as i64 {
            for cx in lo[0] as i64 - 1..=hi[0] as i64 {
                let base = [cx, cy, cz];
                let pts: [[i64; 3]; 8] = std::array::from_fn(|b| {
                    let o = corner(b);
                    [base[0] + o[0], base[1] + o[1], base[2] + o[2]]
                });
                let vals: [bool; 8] = std::array::from_fn(|b| inside(pts[b]));
                if vals.iter().all(|&v| v) || vals.iter().all(|&v| !v) {
                    continue;
                }
                for tet in KUHN {
                    let p = tet.map(|c| pts[c]);
                    let ins: Vec<usize> = (0..4).filter(|&i| vals[tet[i]]).collect();
                    let outs: Vec<usize> = (0..4).filter(|&i| !vals[tet[i]]).collect();
                    let new_tris: Vec<[[i64; 3]; 3]> = match ins.len() {
                        1 => {
                            let a = ins[0];
                            vec![[mid(p[a], p[outs[0]]), mid(p[a], p[outs[1]]), mid(p[a], p[outs[2]])]]
                        }
                        3 => {
                            let o = outs[0];
                            vec![[mid(p[o], p[ins[0]]), mid(p[o], p[ins[1]]), mid(p[o], p[ins[2]])]]
                        }
                        2 => {
                            let (a, b) = (ins[0], ins[1]);
                            let (c, d) = (outs[0], outs[1]);
                            let ac = mid(p[a], p[c]);
                            let ad = mid(p[a], p[d]);
                            let bd = mid(p[b], p[d]);
                            let bc = mid(p[b], p[c]);
                            // ac-ad-bd-bc is a planar cycle around the quad.
                            vec![[ac, ad, bd], [ac, bd, bc]]
                        }
                        _ => continue,
                    };
                    // Outward = from the inside corners toward the outside ones.
                    let centroid = |idx: &[usize]| -> Vector3<f64> {
                        idx.iter().fold(Vector3::zeros(), |acc, &i| {
                            acc + Vector3::new(p[i][0] as f64, p[i][1] as f64, p[i][2] as f64)
                        }) / idx.len() as f64
                    };
                    let outward = (centroid(&outs) - centroid(&ins)).component_mul(&vol.spacing);
                    for mut t in new_tris {
                        let [a, b, c] = t.map(world);
                        if (b - a).cross(&(c - a)).dot(&outward) < 0.0 {
                            t.swap(1, 2);
                        }
                        triangles.push(t.map(|key| {
                            *vertex_of.entry(key).or_insert_with(|| {
                                vertices.push(vol.origin + world(key));
                                (vertices.len() - 1) as u32
                            })
                        }));
                    }
                }
            }
        }
    }

    let mesh = SurfaceMesh::unchecked(&format!("class-{class_id}"), vertices, triangles);
    mesh.validate()?;
    Ok(mesh.with_identity(ObjectKind::Organ, class_id, &format!("class-{class_id}"), ""))
}
