//! Synthetic CT phantoms: a water cube for physics checks, smooth random
//! blob fields for convergence tests, and a labelled torso whose classes
//! come from the shipped catalog.
//!
//! Patient frame: +x = left, −y = anterior, +z = superior.

use nalgebra::{Point3, Vector3};
use rand::Rng;

use super::CtVolume;
use crate::rng::SampleRng;

fn centered_origin(dims: [usize; 3], spacing: f64) -> Point3<f64> {
    Point3::new(
        -(dims[0] as f64 - 1.0) * 0.5 * spacing,
        -(dims[1] as f64 - 1.0) * 0.5 * spacing,
        -(dims[2] as f64 - 1.0) * 0.5 * spacing,
    )
}

/// Water cube (HU 0) of side `edge_mm` centred at the origin, surrounded by
/// `padding` voxels of air on every side. `edge_mm / spacing` must be an
/// integer for the water region to have exactly that extent.
pub fn water_cube(edge_mm: f64, spacing: f64, padding: usize) -> CtVolume {
    let inner = (edge_mm / spacing).round() as usize;
    let n = inner + 2 * padding;
    let dims = [n, n, n];
    let mut hu = vec![-1000i16; n * n * n];
    for k in padding..padding + inner {
        for j in padding..padding + inner {
            for i in padding..padding + inner {
                hu[i + n * (j + n * k)] = 0;
            }
        }
    }
    CtVolume::new(dims, Vector3::repeat(spacing), centered_origin(dims, spacing), hu, None).expect("valid phantom")
}

/// Sum of random Gaussian blobs over air; smooth on the scale of a few
/// voxels. Used to exercise integration accuracy.
pub fn smooth_blobs(rng: &mut SampleRng, n: usize, spacing: f64, blobs: usize) -> CtVolume {
    let dims = [n, n, n];
    let origin = centered_origin(dims, spacing);
    let half = (n as f64 - 1.0) * 0.5 * spacing;
    let params: Vec<(Point3<f64>, f64, f64)> = (0..blobs)
        .map(|_| {
            let c = Point3::new(
                rng.random_range(-0.5..0.5) * half,
                rng.random_range(-0.5..0.5) * half,
                rng.random_range(-0.5..0.5) * half,
            );
            let sigma = rng.random_range(0.15..0.3) * half;
            let amp = rng.random_range(400.0..1600.0);
            (c, sigma, amp)
        })
        .collect();
    let mut hu = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let p = origin + Vector3::new(i as f64, j as f64, k as f64) * spacing;
                let v: f64 = params.iter().map(|(c, s, a)| a * (-(p - c).norm_squared() / (2.0 * s * s)).exp()).sum();
                hu.push((v - 1000.0).round() as i16);
            }
        }
    }
    CtVolume::new(dims, Vector3::repeat(spacing), origin, hu, None).expect("valid phantom")
}

struct Ellipsoid {
    class: u16,
    hu: i16,
    center: [f64; 3],
    radii: [f64; 3],
}

const fn e(class: u16, hu: i16, center: [f64; 3], radii: [f64; 3]) -> Ellipsoid {
    Ellipsoid { class, hu, center, radii }
}

/// Structures painted in order; later entries overwrite earlier ones.
const TORSO: &[Ellipsoid] = &[
    e(10, -800, [55.0, 0.0, 120.0], [42.0, 52.0, 48.0]),
    e(11, -800, [58.0, 12.0, 62.0], [44.0, 55.0, 38.0]),
    e(12, -800, [-55.0, 0.0, 125.0], [42.0, 52.0, 44.0]),
    e(13, -800, [-58.0, -18.0, 88.0], [34.0, 30.0, 20.0]),
    e(14, -800, [-58.0, 12.0, 58.0], [44.0, 55.0, 36.0]),
    e(51, 40, [12.0, -22.0, 62.0], [45.0, 38.0, 42.0]),
    e(52, 50, [12.0, 30.0, 40.0], [11.0, 11.0, 120.0]),
    e(116, 450, [0.0, -76.0, 100.0], [12.0, 6.0, 60.0]),
    e(5, 60, [-45.0, 0.0, 2.0], [62.0, 58.0, 44.0]),
    e(1, 45, [70.0, 25.0, 8.0], [24.0, 24.0, 34.0]),
    e(6, 10, [38.0, -25.0, 14.0], [34.0, 24.0, 28.0]),
    e(2, 35, [-50.0, 45.0, -32.0], [22.0, 19.0, 44.0]),
    e(3, 35, [50.0, 45.0, -26.0], [22.0, 19.0, 44.0]),
    e(21, 10, [0.0, -32.0, -140.0], [30.0, 24.0, 22.0]),
    e(25, 500, [0.0, 58.0, -122.0], [38.0, 18.0, 26.0]),
    e(26, 600, [0.0, 52.0, -96.0], [24.0, 15.0, 8.0]),
    e(77, 400, [82.0, 18.0, -128.0], [28.0, 40.0, 44.0]),
    e(78, 400, [-82.0, 18.0, -128.0], [28.0, 40.0, 44.0]),
    e(75, 650, [86.0, 2.0, -172.0], [18.0, 18.0, 16.0]),
    e(76, 650, [-86.0, 2.0, -172.0], [18.0, 18.0, 16.0]),
];

/// Vertebral bodies L5 (class 27) up to T1 (class 43).
fn vertebrae() -> Vec<Ellipsoid> {
    (0..17)
        .map(|k| {
            let z = -76.0 + 15.5 * k as f64;
            e(27 + k as u16, 700, [0.0, 50.0, z], [22.0, 16.0, 6.5])
        })
        .collect()
}

/// Labelled torso phantom, uniformly scaled by `scale`, sampled at `spacing`
/// mm. Soft tissue body HU 20 in an elliptic cylinder, air outside.
pub fn torso(scale: f64, spacing: f64) -> CtVolume {
    let extent = [260.0 * scale, 200.0 * scale, 380.0 * scale];
    let dims = extent.map(|x| (x / spacing).ceil() as usize);
    let origin = centered_origin(dims, spacing);
    let n = dims[0] * dims[1] * dims[2];
    let mut hu = vec![-1000i16; n];
    let mut labels = vec![0u16; n];
    let mut structures: Vec<Ellipsoid> = TORSO.iter().map(|s| e(s.class, s.hu, s.center, s.radii)).collect();
    structures.extend(vertebrae());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = origin + Vector3::new(i as f64, j as f64, k as f64) * spacing;
                let q = p / scale;
                let idx = i + dims[0] * (j + dims[1] * k);
                if (q.x / 118.0).powi(2) + (q.y / 92.0).powi(2) <= 1.0 && q.z.abs() <= 182.0 {
                    hu[idx] = 20;
                }
                for s in &structures {
                    let d: f64 = (0..3).map(|a| ((q[a] - s.center[a]) / s.radii[a]).powi(2)).sum();
                    if d <= 1.0 {
                        hu[idx] = s.hu;
                        labels[idx] = s.class;
                    }
                }
            }
        }
    }
    CtVolume::new(dims, Vector3::repeat(spacing), origin, hu, Some(labels)).expect("valid phantom")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::ObjectCatalog;

    #[test]
    fn water_cube_extent() {
        let v = water_cube(100.0, 2.0, 4);
        assert_eq!(v.dims, [58, 58, 58]);
        assert_eq!(v.hu.iter().filter(|&&h| h == 0).count(), 50 * 50 * 50);
    }

    #[test]
    fn torso_labels_are_catalogued() {
        let v = torso(1.0, 4.0);
        let cat = ObjectCatalog::default();
        v.check_labels(&cat).unwrap();
        let ids = v.label_ids();
        assert!(ids.contains(&10) && ids.contains(&43) && ids.contains(&75));
    }
}
