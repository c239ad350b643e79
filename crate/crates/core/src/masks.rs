//! Per-object silhouette masks.
//!
//! A pixel belongs to an object when the ray through its centre has a
//! positive chord inside the mesh. This is the renderer's own geometry, so
//! masks and images line up exactly. Objects are projected independently
//! and masks overlap freely.

use rayon::prelude::*;

use crate::anatomy::{ObjectKind, SurfaceMesh};
use crate::camera::CArmCamera;
use crate::geometry::GeometryError;
use crate::raster::BinaryMask;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskEntry {
    pub id: u32,
    pub name: String,
    pub kind: ObjectKind,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskSet {
    pub entries: Vec<MaskEntry>,
    pub image_dims: (usize, usize),
}

impl MaskSet {
    pub fn get(&self, kind: ObjectKind, id: u32) -> Option<&MaskEntry> {
        self.entries.iter().find(|e| e.kind == kind && e.id == id)
    }
}

/// Inclusive pixel window that can contain the mesh silhouette, or `None`
/// when the whole image must be scanned (part of the mesh is behind the
/// source plane).
fn pixel_window(mesh: &SurfaceMesh, cam: &CArmCamera) -> Option<Option<[usize; 4]>> {
    let (w, h) = cam.image_dims;
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in mesh.bounds().corners() {
        let (u, v) = cam.project_point(&c).ok()?;
        lo = (lo.0.min(u), lo.1.min(v));
        hi = (hi.0.max(u), hi.1.max(v));
    }
    // The silhouette of a convex hull lies inside the hull of the projected
    // box corners; one pixel of slack covers rounding.
    let u0 = (lo.0 - 1.0).floor().max(0.0);
    let v0 = (lo.1 - 1.0).floor().max(0.0);
    let u1 = (hi.0 + 1.0).ceil().min(w as f64 - 1.0);
    let v1 = (hi.1 + 1.0).ceil().min(h as f64 - 1.0);
    if u0 > u1 || v0 > v1 {
        return Some(None);
    }
    Some(Some([u0 as usize, v0 as usize, u1 as usize, v1 as usize]))
}

/// Silhouette of one mesh.
pub fn project_mask(mesh: &SurfaceMesh, cam: &CArmCamera) -> Result<BinaryMask, GeometryError> {
    let (w, h) = cam.image_dims;
    let [u0, v0, u1, v1] = match pixel_window(mesh, cam) {
        Some(Some(win)) => win,
        Some(None) => return Ok(BinaryMask::new(w, h)),
        None => [0, 0, w - 1, h - 1],
    };
    let rows: Vec<Result<Vec<bool>, GeometryError>> = (v0..=v1)
        .into_par_iter()
        .map(|v| (u0..=u1).map(|u| mesh.path_length(&cam.ray_unchecked(u as f64, v as f64)).map(|l| l > 0.0)).collect())
        .collect();
    let mut mask = BinaryMask::new(w, h);
    for (dv, row) in rows.into_iter().enumerate() {
        for (du, inside) in row?.into_iter().enumerate() {
            if inside {
                mask.set(u0 + du, v0 + dv, true);
            }
        }
    }
    Ok(mask)
}

/// One mask per object, in order of first appearance, keeping those whose
/// area is at least `min_area_px`. Meshes sharing a kind and class id (two
/// instances of the same tool) are merged into a single mask.
pub fn project_all(meshes: &[SurfaceMesh], cam: &CArmCamera, min_area_px: usize) -> Result<MaskSet, GeometryError> {
    let mut entries: Vec<MaskEntry> = Vec::with_capacity(meshes.len());
    for m in meshes {
        let mask = project_mask(m, cam)?;
        match entries.iter_mut().find(|e| e.kind == m.kind && e.id == m.class_id) {
            Some(e) => e.mask.or_assign(&mask),
            None => entries.push(MaskEntry { id: m.class_id, name: m.name.clone(), kind: m.kind, mask }),
        }
    }
    entries.retain(|e| e.mask.area() >= min_area_px);
    Ok(MaskSet { entries, image_dims: cam.image_dims })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::primitives;
    use crate::camera::{anterior, Detector};
    use nalgebra::{Isometry3, Point3, Vector3};

    fn cam() -> CArmCamera {
        CArmCamera::look_at(Point3::origin(), anterior(), 700.0, 1000.0, &Detector::square(128, 128.0)).unwrap()
    }

    #[test]
    fn outside_frustum_is_empty() {
        let s = primitives::icosphere(10.0, 2).transformed(&Isometry3::translation(2000.0, 0.0, 0.0));
        assert!(project_mask(&s, &cam()).unwrap().is_empty());
    }

    #[test]
    fn window_matches_full_scan() {
        let c = cam();
        let s = primitives::cuboid(Vector3::new(30.0, 20.0, 10.0))
            .transformed(&Isometry3::new(Vector3::new(5.0, 3.0, -7.0), Vector3::new(0.3, 0.5, 0.1)));
        let fast = project_mask(&s, &c).unwrap();
        let full =
            BinaryMask::from_fn(128, 128, |u, v| s.path_length(&c.ray_unchecked(u as f64, v as f64)).unwrap() > 0.0);
        assert_eq!(fast, full);
    }

    #[test]
    fn project_all_keeps_empty_when_threshold_zero() {
        let c = cam();
        let a = primitives::icosphere(10.0, 2);
        let mut b = a.transformed(&Isometry3::translation(5000.0, 0.0, 0.0));
        b.class_id = a.class_id + 1;
        assert_eq!(project_all(&[a.clone(), b.clone()], &c, 0).unwrap().entries.len(), 2);
        assert_eq!(project_all(&[a, b], &c, 1).unwrap().entries.len(), 1);
        assert!(project_all(&[], &c, 0).unwrap().entries.is_empty());
    }

    #[test]
    fn instances_of_one_object_share_a_mask() {
        let c = cam();
        let a = primitives::icosphere(10.0, 2).transformed(&Isometry3::translation(-30.0, 0.0, 0.0));
        let b = primitives::icosphere(10.0, 2).transformed(&Isometry3::translation(30.0, 0.0, 0.0));
        let set = project_all(&[a.clone(), b.clone()], &c, 1).unwrap();
        assert_eq!(set.entries.len(), 1);
        let mut union = project_mask(&a, &c).unwrap();
        union.or_assign(&project_mask(&b, &c).unwrap());
        assert_eq!(set.entries[0].mask, union);
    }
}
