//! C-arm cone-beam geometry and view sampling.
//!
//! Patient frame: +x = left, −y = anterior, +z = superior. A camera's
//! principal ray points from the source to the detector centre; a supine
//! patient imaged with the source under the table has a principal ray close
//! to anterior. Detector rows run from superior to inferior where possible.

use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::anatomy::{ObjectCatalog, ObjectKind, SurfaceMesh};
use crate::geometry::{Aabb, Ray};
use crate::rng::{orthonormal_basis, uniform_in_cap};

const DEFAULT_VIEWS: &str = include_str!("../assets/views.json");

/// Unit vector pointing out of the patient's front.
pub fn anterior() -> Vector3<f64> {
    -Vector3::y()
}

pub fn superior() -> Vector3<f64> {
    Vector3::z()
}

#[derive(Debug, thiserror::Error)]
pub enum CameraError {
    #[error("invalid camera: {0}")]
    Invalid(String),
    #[error("point at depth {depth} mm is at or behind the source plane")]
    BehindSource { depth: f64 },
    #[error("pixel ({u}, {v}) outside a {width}x{height} detector")]
    PixelOutOfRange { u: f64, v: f64, width: usize, height: usize },
    #[error("view '{view}' unavailable: no mesh of group '{group}' present")]
    ViewUnavailable { view: String, group: String },
    #[error("view catalog: {0}")]
    ViewCatalog(String),
}

/// Pixel grid of the flat-panel detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub width: usize,
    pub height: usize,
    pub pixel_size_mm: f64,
}

impl Detector {
    pub fn square(resolution: usize, side_mm: f64) -> Self {
        Self { width: resolution, height: resolution, pixel_size_mm: side_mm / resolution as f64 }
    }
}

/// Pinhole cone-beam camera. The principal point is the image centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CArmCamera {
    pub source: Point3<f64>,
    pub detector_center: Point3<f64>,
    pub detector_u: Vector3<f64>,
    pub detector_v: Vector3<f64>,
    pub sid: f64,
    pub pixel_size: f64,
    pub image_dims: (usize, usize),
}

impl CArmCamera {
    /// Validating constructor.
    pub fn new(
        source: Point3<f64>,
        detector_center: Point3<f64>,
        detector_u: Vector3<f64>,
        detector_v: Vector3<f64>,
        pixel_size: f64,
        image_dims: (usize, usize),
    ) -> Result<Self, CameraError> {
        let sid = (detector_center - source).norm();
        let cam = Self { source, detector_center, detector_u, detector_v, sid, pixel_size, image_dims };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera whose principal ray passes through `isocenter` along
    /// `direction`, with the source `sad` mm before it and the detector
    /// `sid` mm from the source.
    pub fn look_at(
        isocenter: Point3<f64>,
        direction: Vector3<f64>,
        sad: f64,
        sid: f64,
        detector: &Detector,
    ) -> Result<Self, CameraError> {
        if !(sad > 0.0 && sid > sad) {
            return Err(CameraError::Invalid(format!("need 0 < sad < sid, got sad {sad}, sid {sid}")));
        }
        let d = direction.try_normalize(1e-12).ok_or_else(|| CameraError::Invalid("zero view direction".into()))?;
        // Image "down" is inferior unless the view looks along the body axis.
        let down = -superior();
        let v = match (down - d * down.dot(&d)).try_normalize(1e-6) {
            Some(v) => v,
            None => orthonormal_basis(&d).1,
        };
        let u = d.cross(&v);
        let source = isocenter - d * sad;
        let cam = Self {
            source,
            detector_center: source + d * sid,
            detector_u: u,
            detector_v: v,
            sid,
            pixel_size: detector.pixel_size_mm,
            image_dims: (detector.width, detector.height),
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let bad = |m: &str| Err(CameraError::Invalid(m.to_string()));
        let d = self.principal_ray();
        let (u, v) = (self.detector_u, self.detector_v);
        if (u.norm() - 1.0).abs() > 1e-9 || (v.norm() - 1.0).abs() > 1e-9 {
            return bad("detector axes must be unit length");
        }
        if u.dot(&v).abs() > 1e-9 || u.dot(&d).abs() > 1e-9 || v.dot(&d).abs() > 1e-9 {
            return bad("detector axes must be orthogonal to each other and to the principal ray");
        }
        if ((self.detector_center - self.source).norm() - self.sid).abs() > 1e-6 || self.sid <= 0.0 {
            return bad("sid must equal the source-to-detector distance");
        }
        if !(self.pixel_size > 0.0) || self.image_dims.0 == 0 || self.image_dims.1 == 0 {
            return bad("pixel size and image dims must be positive");
        }
        Ok(())
    }

    /// Unit vector from the source to the detector centre.
    pub fn principal_ray(&self) -> Vector3<f64> {
        (self.detector_center - self.source).normalize()
    }

    pub fn principal_point(&self) -> (f64, f64) {
        ((self.image_dims.0 as f64 - 1.0) * 0.5, (self.image_dims.1 as f64 - 1.0) * 0.5)
    }

    pub fn project_point(&self, p: &Point3<f64>) -> Result<(f64, f64), CameraError> {
        let r = p - self.source;
        let depth = r.dot(&self.principal_ray());
        if depth <= 0.0 {
            return Err(CameraError::BehindSource { depth });
        }
        let scale = self.sid / depth / self.pixel_size;
        let (cx, cy) = self.principal_point();
        Ok((cx + scale * r.dot(&self.detector_u), cy + scale * r.dot(&self.detector_v)))
    }

    /// World position of a (fractional) pixel on the detector plane.
    pub fn detector_point(&self, u: f64, v: f64) -> Point3<f64> {
        let (cx, cy) = self.principal_point();
        self.detector_center
            + self.detector_u * ((u - cx) * self.pixel_size)
            + self.detector_v * ((v - cy) * self.pixel_size)
    }

    pub fn ray_through_pixel(&self, u: f64, v: f64) -> Result<Ray, CameraError> {
        let (w, h) = self.image_dims;
        if !(0.0..w as f64).contains(&u) || !(0.0..h as f64).contains(&v) {
            return Err(CameraError::PixelOutOfRange { u, v, width: w, height: h });
        }
        Ok(self.ray_unchecked(u, v))
    }

    #[inline]
    pub(crate) fn ray_unchecked(&self, u: f64, v: f64) -> Ray {
        Ray::new(self.source, self.detector_point(u, v) - self.source)
    }

    /// Distance from the source to the point where the principal ray meets
    /// the plane through `p` parallel to the detector.
    pub fn depth_of(&self, p: &Point3<f64>) -> f64 {
        (p - self.source).dot(&self.principal_ray())
    }
}

/// Parameters for fully random views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomViewBounds {
    /// Maximum angle between the principal ray and anterior.
    pub cap_half_angle_deg: f64,
    /// Isocentre offset from the focus centroid, per axis.
    pub iso_jitter_mm: f64,
    pub sad_mm: f64,
    pub sid_mm: f64,
}

impl Default for RandomViewBounds {
    fn default() -> Self {
        Self { cap_half_angle_deg: 60.0, iso_jitter_mm: 25.0, sad_mm: 700.0, sid_mm: 1020.0 }
    }
}

/// Random view focused on `focus`: direction uniform over the cap around
/// anterior, isocentre at the focus centroid plus uniform per-axis jitter.
pub fn sample_random_view<R: Rng + ?Sized>(
    rng: &mut R,
    focus: &SurfaceMesh,
    bounds: &RandomViewBounds,
    detector: &Detector,
) -> Result<CArmCamera, CameraError> {
    let d = uniform_in_cap(rng, &anterior(), bounds.cap_half_angle_deg.to_radians());
    let j = bounds.iso_jitter_mm;
    let offset = Vector3::from_fn(|_, _| if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 });
    CArmCamera::look_at(focus.centroid() + offset, d, bounds.sad_mm, bounds.sid_mm, detector)
}

fn default_rot_jitter() -> f64 {
    10.0
}
fn default_iso_jitter() -> f64 {
    25.0
}
fn default_sid_jitter() -> f64 {
    0.05
}

/// One entry of the standard-view catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardViewSpec {
    pub name: String,
    pub target_group: String,
    /// Principal-ray direction in the patient frame.
    pub direction: Vector3<f64>,
    pub sid_mm: f64,
    pub sad_mm: f64,
    #[serde(default = "default_rot_jitter")]
    pub rot_jitter_deg: f64,
    #[serde(default = "default_iso_jitter")]
    pub iso_jitter_mm: f64,
    #[serde(default = "default_sid_jitter")]
    pub sid_jitter_frac: f64,
}

impl StandardViewSpec {
    pub fn validate(&self) -> Result<(), CameraError> {
        let bad = |m: String| Err(CameraError::ViewCatalog(format!("view '{}': {m}", self.name)));
        if (self.direction.norm() - 1.0).abs() > 1e-6 {
            return bad(format!("direction norm {} is not 1", self.direction.norm()));
        }
        if !(self.sad_mm > 0.0 && self.sad_mm < self.sid_mm) {
            return bad("need 0 < sad_mm < sid_mm".into());
        }
        let f = self.sid_jitter_frac;
        if !(0.0..1.0).contains(&f) || self.sad_mm * (1.0 + f) >= self.sid_mm * (1.0 - f) {
            return bad("sid_jitter_frac would let sad reach sid".into());
        }
        if self.rot_jitter_deg < 0.0 || self.iso_jitter_mm < 0.0 {
            return bad("jitter bounds must be non-negative".into());
        }
        Ok(())
    }
}

/// Shipped standard views.
pub fn default_views() -> Vec<StandardViewSpec> {
    parse_views(DEFAULT_VIEWS).expect("shipped view catalog is valid")
}

pub fn parse_views(text: &str) -> Result<Vec<StandardViewSpec>, CameraError> {
    let views: Vec<StandardViewSpec> =
        serde_json::from_str(text).map_err(|e| CameraError::ViewCatalog(e.to_string()))?;
    for v in &views {
        v.validate()?;
    }
    Ok(views)
}

pub fn load_views(path: &Path) -> Result<Vec<StandardViewSpec>, CameraError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CameraError::ViewCatalog(format!("{}: {e}", path.display())))?;
    parse_views(&text)
}

/// Organ meshes belonging to the view's target group.
pub fn target_meshes<'a>(
    spec: &StandardViewSpec,
    meshes: &'a [SurfaceMesh],
    catalog: &ObjectCatalog,
) -> Result<Vec<&'a SurfaceMesh>, CameraError> {
    let unavailable = || CameraError::ViewUnavailable { view: spec.name.clone(), group: spec.target_group.clone() };
    let group = catalog.group(&spec.target_group).ok_or_else(unavailable)?;
    let found: Vec<&SurfaceMesh> =
        meshes.iter().filter(|m| m.kind == ObjectKind::Organ && group.members.contains(&m.class_id)).collect();
    if found.is_empty() {
        return Err(unavailable());
    }
    Ok(found)
}

/// Standard view with random variation: isocentre at the centre of the
/// target meshes' joint bounding box plus jitter inside a ball, direction
/// rotated by at most the jitter angle, sid and sad scaled independently.
pub fn sample_standard_view<R: Rng + ?Sized>(
    spec: &StandardViewSpec,
    meshes: &[SurfaceMesh],
    catalog: &ObjectCatalog,
    rng: &mut R,
    detector: &Detector,
) -> Result<CArmCamera, CameraError> {
    let targets = target_meshes(spec, meshes, catalog)?;
    let bounds = targets.iter().fold(Aabb::empty(), |b, m| b.union(&m.bounds()));
    let d = uniform_in_cap(rng, &spec.direction, spec.rot_jitter_deg.to_radians());
    let offset = crate::rng::uniform_in_ball(rng, spec.iso_jitter_mm);
    let f = spec.sid_jitter_frac;
    let mut scale = || if f > 0.0 { 1.0 + rng.random_range(-f..=f) } else { 1.0 };
    let sid = spec.sid_mm * scale();
    let sad = spec.sad_mm * scale();
    CArmCamera::look_at(bounds.center() + offset, d, sad, sid, detector)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::primitives;
    use crate::rng::rng_from_seed;

    fn cam() -> CArmCamera {
        CArmCamera::look_at(Point3::origin(), anterior(), 700.0, 1000.0, &Detector::square(512, 512.0)).unwrap()
    }

    #[test]
    fn isocenter_projects_to_principal_point() {
        let c = cam();
        assert_eq!(c.project_point(&Point3::origin()).unwrap(), c.principal_point());
    }

    #[test]
    fn lateral_offset_is_magnified() {
        let c = cam();
        let (u, v) = c.project_point(&(Point3::origin() + c.detector_u * 10.0)).unwrap();
        let (cx, cy) = c.principal_point();
        assert!((u - (cx + 10.0 * 1000.0 / 700.0)).abs() < 1e-9);
        assert!((v - cy).abs() < 1e-9);
    }

    #[test]
    fn source_cannot_be_projected() {
        let c = cam();
        assert!(matches!(c.project_point(&c.source), Err(CameraError::BehindSource { .. })));
    }

    #[test]
    fn pixel_range_checked() {
        let c = cam();
        assert!(c.ray_through_pixel(-1.0, 3.0).is_err());
        assert!(c.ray_through_pixel(3.0, 512.0).is_err());
        let (cx, cy) = c.principal_point();
        let r = c.ray_through_pixel(cx, cy).unwrap();
        assert!((r.dir - c.principal_ray()).norm() < 1e-12);
    }

    #[test]
    fn image_orientation() {
        // Viewed from the front, patient left is image right and the head is up.
        let c = cam();
        let (cx, cy) = c.principal_point();
        let (u, _) = c.project_point(&Point3::new(10.0, 0.0, 0.0)).unwrap();
        let (_, v) = c.project_point(&Point3::new(0.0, 0.0, 10.0)).unwrap();
        assert!(u > cx && v < cy);
    }

    #[test]
    fn zero_cap_gives_anterior() {
        let mut rng = rng_from_seed(1);
        let mesh = primitives::icosphere(10.0, 1);
        let b = RandomViewBounds { cap_half_angle_deg: 0.0, ..Default::default() };
        let c = sample_random_view(&mut rng, &mesh, &b, &Detector::square(64, 300.0)).unwrap();
        assert_eq!(c.principal_ray(), anterior());
    }

    #[test]
    fn zero_jitter_standard_view_keeps_direction() {
        let cat = ObjectCatalog::default();
        let lung = primitives::icosphere(50.0, 1).with_identity(ObjectKind::Organ, 10, "upper lobe of left lung", "");
        let spec = StandardViewSpec {
            name: "chest PA".into(),
            target_group: "lungs".into(),
            direction: anterior(),
            sid_mm: 1000.0,
            sad_mm: 700.0,
            rot_jitter_deg: 0.0,
            iso_jitter_mm: 0.0,
            sid_jitter_frac: 0.0,
        };
        let mut rng = rng_from_seed(3);
        let c = sample_standard_view(&spec, std::slice::from_ref(&lung), &cat, &mut rng, &Detector::square(64, 300.0))
            .unwrap();
        assert_eq!(c.principal_ray(), anterior());
        let femur = StandardViewSpec { target_group: "femurs".into(), ..spec };
        assert!(matches!(
            sample_standard_view(&femur, &[lung], &cat, &mut rng, &Detector::square(64, 300.0)),
            Err(CameraError::ViewUnavailable { .. })
        ));
    }

    #[test]
    fn shipped_views_cover_every_series() {
        let views = default_views();
        let cat = ObjectCatalog::default();
        for series in [
            "chest",
            "abdomen",
            "shoulder",
            "clavicle",
            "humerus",
            "elbow",
            "forearm",
            "hand",
            "pelvis",
            "femur",
            "sacroiliac",
            "knee",
            "tibia/fibula",
            "ankle",
            "foot",
            "skull",
            "spine",
        ] {
            assert!(views.iter().any(|v| v.name.starts_with(series)), "missing {series}");
        }
        for v in &views {
            assert!(cat.group(&v.target_group).is_some(), "{} targets unknown group", v.name);
        }
    }
}
