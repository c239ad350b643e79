//! Simulated click prompts: a depth-weighted first click inside the object,
//! then clicks on the remaining error region.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::raster::BinaryMask;

pub const MAX_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointPrompt {
    pub u: usize,
    pub v: usize,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PointPrompts {
    pub points: Vec<PointPrompt>,
}

/// Stand-in for "no background seen yet"; far above any squared distance.
const FAR: f64 = 1e18;

/// 1-D squared distance transform of `f` (lower envelope of parabolas,
/// Felzenszwalb and Huttenlocher).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let inter = |q: usize, p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
    for q in 1..n {
        let mut s = inter(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = inter(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        *o = (q as f64 - p as f64).powi(2) + f[p];
    }
}

/// Squared Euclidean distance from every pixel to the nearest background
/// pixel, treating everything beyond the image border as background.
pub fn squared_distance_transform(mask: &BinaryMask) -> Vec<f64> {
    let (w, h) = mask.dims();
    let (pw, ph) = (w + 2, h + 2);
    let mut g = vec![0f64; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                g[(y + 1) * pw + x + 1] = FAR;
            }
        }
    }
    let mut col = vec![0f64; ph];
    let mut out = vec![0f64; ph];
    for x in 0..pw {
        for y in 0..ph {
            col[y] = g[y * pw + x];
        }
        edt_1d(&col, &mut out);
        for y in 0..ph {
            g[y * pw + x] = out[y];
        }
    }
    let mut row_out = vec![0f64; pw];
    for y in 0..ph {
        edt_1d(&g[y * pw..(y + 1) * pw], &mut row_out);
        g[y * pw..(y + 1) * pw].copy_from_slice(&row_out);
    }
    let mut d = vec![0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            d[y * w + x] = g[(y + 1) * pw + x + 1];
        }
    }
    d
}

/// Index drawn with probability proportional to `weights`.
fn weighted_index<R: Rng + ?Sized>(rng: &mut R, weights: &[(usize, f64)]) -> usize {
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for &(i, w) in weights {
        acc += w;
        if target < acc {
            return i;
        }
    }
    weights.last().expect("non-empty weights").0
}

/// Up to `n` clicks. The first is positive, drawn inside `gt` with weight
/// equal to the squared distance to the background. Later clicks are drawn
/// uniformly (without repeats) from the symmetric difference of `gt` and
/// `pred` (an absent prediction counts as empty): positive inside `gt`,
/// negative otherwise. Sampling stops once the error region is used up.
pub fn sample_point_prompts<R: Rng + ?Sized>(
    gt: &BinaryMask,
    pred: Option<&BinaryMask>,
    n: usize,
    rng: &mut R,
) -> Result<PointPrompts, PromptError> {
    if n > MAX_POINTS {
        return Err(PromptError::TooManyPoints { got: n, max: MAX_POINTS });
    }
    if n == 0 {
        return Ok(PointPrompts::default());
    }
    if gt.is_empty() {
        return Err(PromptError::EmptyGroundTruth);
    }
    let (w, h) = gt.dims();
    let d2 = squared_distance_transform(gt);
    let weights: Vec<(usize, f64)> = (0..w * h).filter(|&i| gt.data[i]).map(|i| (i, d2[i])).collect();
    let first = weighted_index(rng, &weights);
    let mut points = vec![PointPrompt { u: first % w, v: first / w, positive: true }];

    let empty = BinaryMask::new(w, h);
    let pred = pred.unwrap_or(&empty);
    let mut region: Vec<usize> = (0..w * h).filter(|&i| gt.data[i] != pred.data[i] && i != first).collect();
    while points.len() < n && !region.is_empty() {
        let i = region.swap_remove(rng.random_range(0..region.len()));
        points.push(PointPrompt { u: i % w, v: i / w, positive: gt.data[i] });
    }
    Ok(PointPrompts { points })
}
