//! Ray primitives shared by the renderer and the mask projector.

mod bvh;
mod triangle;

pub use bvh::TriangleBvh;
pub use triangle::{intersect_triangle, ShearedRay};

use nalgebra::{Point3, Vector3};

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("mesh '{mesh}': ray crossed the surface an odd number of times ({crossings}); mesh is not watertight along this ray")]
    OddParity { mesh: String, crossings: usize },
}

/// Half-line `origin + t * dir`, `t >= 0`, with `dir` of unit length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub dir: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Point3<f64>, dir: Vector3<f64>) -> Self {
        Self { origin, dir: dir.normalize() }
    }

    #[inline]
    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.dir * t
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&other.min), max: self.max.sup(&other.max) }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn corners(&self) -> [Point3<f64>; 8] {
        let (a, b) = (self.min, self.max);
        [
            Point3::new(a.x, a.y, a.z),
            Point3::new(b.x, a.y, a.z),
            Point3::new(a.x, b.y, a.z),
            Point3::new(b.x, b.y, a.z),
            Point3::new(a.x, a.y, b.z),
            Point3::new(b.x, a.y, b.z),
            Point3::new(a.x, b.y, b.z),
            Point3::new(b.x, b.y, b.z),
        ]
    }

    /// Grow by `pad` on every side.
    pub fn padded(&self, pad: f64) -> Aabb {
        let v = Vector3::repeat(pad);
        Aabb { min: self.min - v, max: self.max + v }
    }

    /// Parameter interval `[t0, t1]` (clipped to `t >= 0`) where the ray is
    /// inside the box, or `None` on a miss.
    pub fn ray_interval(&self, ray: &Ray) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for axis in 0..3 {
            let o = ray.origin[axis];
            let d = ray.dir[axis];
            let (lo, hi) = (self.min[axis], self.max[axis]);
            if d == 0.0 {
                if o < lo || o > hi {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let mut ta = (lo - o) * inv;
            let mut tb = (hi - o) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Total length of the ray inside a closed triangle mesh.
///
/// Crossing parameters are sorted and paired entry/exit; an odd number of
/// crossings means the surface leaks along this ray.
pub fn ray_mesh_path_length(
    name: &str,
    vertices: &[Point3<f64>],
    triangles: &[[u32; 3]],
    bvh: &TriangleBvh,
    ray: &Ray,
) -> Result<f64, GeometryError> {
    let mut hits = Vec::new();
    bvh.crossings(vertices, triangles, ray, &mut hits);
    if hits.is_empty() {
        return Ok(0.0);
    }
    if hits.len() % 2 == 1 {
        return Err(GeometryError::OddParity { mesh: name.to_string(), crossings: hits.len() });
    }
    hits.sort_by(f64::total_cmp);
    Ok(hits.chunks_exact(2).map(|pair| pair[1] - pair[0]).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slab_interval() {
        let b = Aabb { min: Point3::new(-1.0, -1.0, -1.0), max: Point3::new(1.0, 1.0, 1.0) };
        let r = Ray::new(Point3::new(-5.0, 0.0, 0.0), Vector3::x());
        let (t0, t1) = b.ray_interval(&r).unwrap();
        assert!((t0 - 4.0).abs() < 1e-12 && (t1 - 6.0).abs() < 1e-12);
        let miss = Ray::new(Point3::new(-5.0, 2.0, 0.0), Vector3::x());
        assert!(b.ray_interval(&miss).is_none());
        let behind = Ray::new(Point3::new(5.0, 0.0, 0.0), Vector3::x());
        assert!(b.ray_interval(&behind).is_none());
    }
}
