//! Watertight ray/triangle intersection.
//!
//! Vertices are transformed into a sheared frame where the ray is the +z
//! axis through the origin (Woop, Benthin & Wald). The 2D edge functions of
//! a shared edge are then exact negations of each other, so a symbolic
//! perturbation rule on zero edge functions makes every ray that passes
//! through a shared edge or vertex hit exactly one of the triangles meeting
//! there (for a consistently oriented surface).

use nalgebra::Point3;

use super::Ray;

/// A ray prepared for repeated triangle tests.
#[derive(Debug, Clone, Copy)]
pub struct ShearedRay {
    origin: Point3<f64>,
    kx: usize,
    ky: usize,
    kz: usize,
    sx: f64,
    sy: f64,
    sz: f64,
}

impl ShearedRay {
    pub fn new(ray: &Ray) -> Self {
        let d = ray.dir;
        let kz = if d.x.abs() > d.y.abs() {
            if d.x.abs() > d.z.abs() {
                0
            } else {
                2
            }
        } else if d.y.abs() > d.z.abs() {
            1
        } else {
            2
        };
        let mut kx = (kz + 1) % 3;
        let mut ky = (kx + 1) % 3;
        if d[kz] < 0.0 {
            std::mem::swap(&mut kx, &mut ky);
        }
        Self { origin: ray.origin, kx, ky, kz, sx: d[kx] / d[kz], sy: d[ky] / d[kz], sz: 1.0 / d[kz] }
    }

    #[inline]
    fn transform(&self, p: &Point3<f64>) -> (f64, f64, f64) {
        let a = p - self.origin;
        (a[self.kx] - self.sx * a[self.kz], a[self.ky] - self.sy * a[self.kz], self.sz * a[self.kz])
    }
}

#[inline]
fn lex_less(p: (f64, f64), q: (f64, f64)) -> bool {
    p.0 < q.0 || (p.0 == q.0 && p.1 < q.1)
}

/// Edge function of the sheared origin relative to the directed edge `p -> q`.
#[inline]
fn edge(p: (f64, f64), q: (f64, f64)) -> f64 {
    q.0 * p.1 - q.1 * p.0
}

/// Inside test for one edge. With `det > 0` the interior lies where edge
/// functions are positive, with `det < 0` where they are negative. Exact
/// zeros are resolved by perturbing the query point by `(-eps^2, eps)`,
/// which reduces to a lexicographic comparison of the edge endpoints.
#[inline]
fn edge_accepts(e: f64, p: (f64, f64), q: (f64, f64), det: f64) -> bool {
    if e == 0.0 {
        if det > 0.0 {
            lex_less(q, p)
        } else {
            lex_less(p, q)
        }
    } else {
        (e > 0.0) == (det > 0.0)
    }
}

/// Ray parameter of the crossing with triangle `(p0, p1, p2)`, if any, for
/// `t > 0`. Triangles seen edge-on never report a crossing.
pub fn intersect_triangle(ray: &ShearedRay, p0: &Point3<f64>, p1: &Point3<f64>, p2: &Point3<f64>) -> Option<f64> {
    let (ax, ay, az) = ray.transform(p0);
    let (bx, by, bz) = ray.transform(p1);
    let (cx, cy, cz) = ray.transform(p2);
    let (a, b, c) = ((ax, ay), (bx, by), (cx, cy));

    let u = edge(b, c);
    let v = edge(c, a);
    let w = edge(a, b);
    if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
        return None;
    }
    let det = u + v + w;
    if det == 0.0 {
        return None;
    }
    if !(edge_accepts(u, b, c, det) && edge_accepts(v, c, a, det) && edge_accepts(w, a, b, det)) {
        return None;
    }
    let t = (u * az + v * bz + w * cz) / det;
    (t > 0.0).then_some(t)
}
