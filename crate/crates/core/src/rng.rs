//! Seeded random streams and stable seed derivation.
//!
//! Every stochastic operation in the crate takes an explicit `&mut SampleRng`.
//! ChaCha8 produces the same stream on every platform, and seeds for
//! individual samples are derived with SHA-256 so they do not depend on the
//! standard library's unstable hasher.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use sha2::{Digest, Sha256};

pub type SampleRng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SampleRng {
    SampleRng::seed_from_u64(seed)
}

/// Stable 64-bit seed for `(master, scope, index)`.
pub fn derive_seed(master: u64, scope: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((scope.len() as u64).to_le_bytes());
    hasher.update(scope.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Orthonormal pair `(a, b)` completing `n` to a right-handed frame.
pub fn orthonormal_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    // Frisvad / Duff et al. branchless construction.
    let sign = 1.0f64.copysign(n.z);
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    let t = Vector3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x);
    let s = Vector3::new(b, sign + n.y * n.y * a, -n.y);
    (t, s)
}

/// Direction uniformly distributed over the spherical cap of half-angle
/// `half_angle` (radians) around the unit vector `axis`.
///
/// Inverse-CDF on the cosine, so exactly two uniforms are consumed per draw.
pub fn uniform_in_cap<R: Rng + ?Sized>(rng: &mut R, axis: &Vector3<f64>, half_angle: f64) -> Vector3<f64> {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let cos_max = half_angle.cos();
    if half_angle <= 0.0 {
        return *axis;
    }
    let cos_theta = 1.0 - u1 * (1.0 - cos_max);
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let phi = std::f64::consts::TAU * u2;
    let (t, s) = orthonormal_basis(axis);
    (axis * cos_theta + t * (sin_theta * phi.cos()) + s * (sin_theta * phi.sin())).normalize()
}

/// Point uniformly distributed in the ball of the given radius.
pub fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Vector3<f64> {
    let dir = uniform_in_cap(rng, &Vector3::z(), std::f64::consts::PI);
    let r: f64 = rng.random();
    dir * (radius * r.cbrt())
}

/// Uniformly random rotation (Shoemake's subgroup algorithm).
pub fn uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let tau = std::f64::consts::TAU;
    let q = nalgebra::Quaternion::new(
        b * (tau * u3).cos(),
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
    );
    UnitQuaternion::from_quaternion(q)
}
