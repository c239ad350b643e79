//! Digitally reconstructed radiographs.
//!
//! Monoenergetic Beer–Lambert: each pixel's ray accumulates the line
//! integral of CT attenuation (trilinear samples, trapezoid rule) plus
//! `μ_material × chord length` for every tool mesh it crosses.

use std::path::Path;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anatomy::{CtVolume, SurfaceMesh};
use crate::camera::CArmCamera;
use crate::geometry::{Aabb, GeometryError, Ray};
use crate::raster::{RasterError, ScalarImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub energy_kev: f64,
    pub mu_water_per_cm: f64,
}

impl Default for Spectrum {
    fn default() -> Self {
        Self { energy_kev: 60.0, mu_water_per_cm: 0.2 }
    }
}

/// Default sampling step along each ray (mm).
pub const DEFAULT_STEP_MM: f64 = 1.0;

/// Linear attenuation in 1/cm: `μ_water (1 + HU/1000)`, never negative.
#[inline]
pub fn hu_to_mu(hu: f64, spectrum: &Spectrum) -> f64 {
    (spectrum.mu_water_per_cm * (1.0 + hu / 1000.0)).max(0.0)
}

/// CT volume converted to attenuation per millimetre, ready for sampling.
#[derive(Debug, Clone)]
pub struct AttenuationGrid {
    dims: [usize; 3],
    origin: Point3<f64>,
    inv_spacing: Vector3<f64>,
    bounds: Aabb,
    mu_per_mm: Vec<f64>,
}

impl AttenuationGrid {
    pub fn new(vol: &CtVolume, spectrum: &Spectrum) -> Self {
        Self::with_scale(vol, spectrum, 1.0)
    }

    /// Grid with every attenuation value multiplied by `scale`.
    pub fn with_scale(vol: &CtVolume, spectrum: &Spectrum, scale: f64) -> Self {
        let mu_per_mm = vol.hu.iter().map(|&h| scale * hu_to_mu(h as f64, spectrum) / 10.0).collect();
        Self {
            dims: vol.dims,
            origin: vol.origin,
            inv_spacing: vol.spacing.map(|s| 1.0 / s),
            bounds: vol.bounds(),
            mu_per_mm,
        }
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    /// Trilinear interpolation between voxel centres; constant extension
    /// across the outer half voxel, zero outside the volume box.
    pub fn sample(&self, p: &Point3<f64>) -> f64 {
        let b = &self.bounds;
        if p.x < b.min.x || p.y < b.min.y || p.z < b.min.z || p.x > b.max.x || p.y > b.max.y || p.z > b.max.z {
            return 0.0;
        }
        let mut i0 = [0usize; 3];
        let mut w = [0f64; 3];
        for a in 0..3 {
            let n = self.dims[a];
            let f = ((p[a] - self.origin[a]) * self.inv_spacing[a]).clamp(0.0, (n - 1) as f64);
            let fl = f.floor();
            let mut i = fl as usize;
            let mut t = f - fl;
            if i + 1 >= n {
                i = n.saturating_sub(2);
                t = if n == 1 { 0.0 } else { f - i as f64 };
            }
            i0[a] = i;
            w[a] = t;
        }
        let (nx, ny) = (self.dims[0], self.dims[1]);
        let step = [
            usize::from(self.dims[0] > 1),
            nx * usize::from(self.dims[1] > 1),
            nx * ny * usize::from(self.dims[2] > 1),
        ];
        let base = i0[0] + nx * (i0[1] + ny * i0[2]);
        let v = |dx: usize, dy: usize, dz: usize| self.mu_per_mm[base + dx * step[0] + dy * step[1] + dz * step[2]];
        let c00 = v(0, 0, 0) * (1.0 - w[0]) + v(1, 0, 0) * w[0];
        let c10 = v(0, 1, 0) * (1.0 - w[0]) + v(1, 1, 0) * w[0];
        let c01 = v(0, 0, 1) * (1.0 - w[0]) + v(1, 0, 1) * w[0];
        let c11 = v(0, 1, 1) * (1.0 - w[0]) + v(1, 1, 1) * w[0];
        let c0 = c00 * (1.0 - w[1]) + c10 * w[1];
        let c1 = c01 * (1.0 - w[1]) + c11 * w[1];
        c0 * (1.0 - w[2]) + c1 * w[2]
    }

    /// Dimensionless `∫ μ dl` along the ray segment inside the volume box.
    ///
    /// The segment of length `L` is split into `ceil(L / step_mm)` equal
    /// intervals and integrated with the trapezoid rule.
    pub fn line_integral(&self, ray: &Ray, step_mm: f64) -> f64 {
        assert!(step_mm > 0.0, "step must be positive");
        let Some((t0, t1)) = self.bounds.ray_interval(ray) else { return 0.0 };
        let len = t1 - t0;
        if !(len > 0.0) {
            return 0.0;
        }
        let n = (len / step_mm).ceil().max(1.0) as usize;
        let h = len / n as f64;
        let mut sum = 0.5 * (self.sample(&ray.at(t0)) + self.sample(&ray.at(t1)));
        for i in 1..n {
            sum += self.sample(&ray.at(t0 + h * i as f64));
        }
        sum * h
    }
}

/// Convenience wrapper building a grid for a single query.
pub fn line_integral(vol: &CtVolume, ray: &Ray, spectrum: &Spectrum, step_mm: f64) -> f64 {
    AttenuationGrid::new(vol, spectrum).line_integral(ray, step_mm)
}

/// Length (mm) of the ray inside a closed mesh.
pub fn ray_mesh_path_length(mesh: &SurfaceMesh, ray: &Ray) -> Result<f64, GeometryError> {
    mesh.path_length(ray)
}

/// A tool mesh in world coordinates with its attenuation.
#[derive(Debug, Clone)]
pub struct ToolInstance {
    pub mesh: SurfaceMesh,
    pub mu_per_cm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Photometric {
    AttenuationLineIntegral,
    TransmittedFraction,
    NegativeLogNormalized,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub ct_id: String,
    pub view: String,
}

#[derive(Debug, Clone)]
pub struct Radiograph {
    pub pixels: ScalarImage,
    pub photometric: Photometric,
    pub camera: CArmCamera,
    pub provenance: Provenance,
}

/// Total attenuation `∫μ dl + Σ μ_tool ℓ_tool` for one ray.
pub fn ray_attenuation(
    grid: &AttenuationGrid,
    tools: &[ToolInstance],
    ray: &Ray,
    step_mm: f64,
) -> Result<f64, GeometryError> {
    let mut total = grid.line_integral(ray, step_mm);
    for tool in tools {
        let l = tool.mesh.path_length(ray)?;
        if l > 0.0 {
            total += tool.mu_per_cm * l / 10.0;
        }
    }
    Ok(total)
}

/// Render transmitted fractions through pixel centres. Rows are processed
/// in parallel on the current rayon pool; each pixel is summed serially in
/// a fixed order, so the output does not depend on the thread count.
pub fn render(
    grid: &AttenuationGrid,
    tools: &[ToolInstance],
    cam: &CArmCamera,
    step_mm: f64,
) -> Result<Radiograph, GeometryError> {
    let (w, h) = cam.image_dims;
    let rows: Vec<Result<Vec<f64>, GeometryError>> = (0..h)
        .into_par_iter()
        .map(|v| {
            (0..w)
                .map(|u| {
                    let ray = cam.ray_unchecked(u as f64, v as f64);
                    ray_attenuation(grid, tools, &ray, step_mm).map(|a| (-a).exp())
                })
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(w * h);
    for row in rows {
        data.extend(row?);
    }
    Ok(Radiograph {
        pixels: ScalarImage::from_vec(w, h, data),
        photometric: Photometric::TransmittedFraction,
        camera: *cam,
        provenance: Provenance::default(),
    })
}

/// `(−ln p − min) / (max − min)`; constant images map to zeros.
pub fn negative_log_normalize(r: &Radiograph) -> Radiograph {
    assert_eq!(r.photometric, Photometric::TransmittedFraction, "expects transmitted fractions");
    let neg = r.pixels.map(|p| -p.ln());
    let (lo, hi) = neg.min_max();
    let range = hi - lo;
    let pixels = if range > 0.0 { neg.map(|x| ((x - lo) / range).clamp(0.0, 1.0)) } else { neg.map(|_| 0.0) };
    Radiograph { pixels, photometric: Photometric::NegativeLogNormalized, ..r.clone() }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    photometric: Photometric,
    camera: &'a CArmCamera,
    spectrum: &'a Spectrum,
    seed: u64,
    ct_id: &'a str,
    view: &'a str,
}

/// 16-bit PNG plus a `.json` sidecar next to it.
pub fn write_radiograph(r: &Radiograph, spectrum: &Spectrum, png: &Path) -> Result<(), RasterError> {
    r.pixels.write_png16(png)?;
    let sidecar = Sidecar {
        photometric: r.photometric,
        camera: &r.camera,
        spectrum,
        seed: r.provenance.seed,
        ct_id: &r.provenance.ct_id,
        view: &r.provenance.view,
    };
    let path = png.with_extension("json");
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&path, text).map_err(|source| RasterError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::phantom;
    use crate::camera::{anterior, Detector};

    #[test]
    fn hu_definition() {
        let s = Spectrum::default();
        assert_eq!(hu_to_mu(0.0, &s), 0.2);
        assert_eq!(hu_to_mu(-1000.0, &s), 0.0);
        assert_eq!(hu_to_mu(-1024.0, &s), 0.0);
        assert!((hu_to_mu(1000.0, &s) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn water_cube_central_ray() {
        let vol = phantom::water_cube(100.0, 1.0, 5);
        let ray = Ray::new(Point3::new(-500.0, 0.0, 0.0), Vector3::x());
        let li = line_integral(&vol, &ray, &Spectrum::default(), DEFAULT_STEP_MM);
        assert!((li - 2.0).abs() < 1e-3, "{li}");
        let miss = Ray::new(Point3::new(-500.0, 500.0, 0.0), Vector3::x());
        assert_eq!(line_integral(&vol, &miss, &Spectrum::default(), 1.0), 0.0);
    }

    #[test]
    fn empty_scene_transmits_everything() {
        let vol = CtVolume::new([4, 4, 4], Vector3::repeat(10.0), Point3::origin(), vec![-1000; 64], None).unwrap();
        let grid = AttenuationGrid::new(&vol, &Spectrum::default());
        let cam =
            CArmCamera::look_at(Point3::new(15.0, 15.0, 15.0), anterior(), 700.0, 1000.0, &Detector::square(16, 200.0))
                .unwrap();
        let r = render(&grid, &[], &cam, 1.0).unwrap();
        assert!(r.pixels.data.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn two_pixel_normalization() {
        let cam = CArmCamera::look_at(Point3::origin(), anterior(), 700.0, 1000.0, &Detector::square(2, 2.0)).unwrap();
        let r = Radiograph {
            pixels: ScalarImage::from_vec(2, 1, vec![(-1f64).exp(), (-3f64).exp()]),
            photometric: Photometric::TransmittedFraction,
            camera: cam,
            provenance: Provenance::default(),
        };
        let n = negative_log_normalize(&r);
        assert!(n.pixels.data[0].abs() < 1e-12 && (n.pixels.data[1] - 1.0).abs() < 1e-12);
        let flat = Radiograph { pixels: ScalarImage::filled(2, 1, 0.3), ..r };
        assert_eq!(negative_log_normalize(&flat).pixels.data, vec![0.0, 0.0]);
    }
}
