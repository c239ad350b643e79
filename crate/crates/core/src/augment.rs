//! Domain randomization ops and K-means 3-channel windowing.
//!
//! Every op maps `[0, 1]`-valued images to `[0, 1]`-valued images and is a
//! pure function of its input, parameters and random stream.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::raster::ScalarImage;
use crate::rng::{rng_from_seed, SampleRng};

const DEFAULT_PLAN: &str = include_str!("../assets/plans/domain_randomization.json");

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("unknown augmentation op '{0}'")]
    UnknownOp(String),
    #[error("invalid augmentation plan: {0}")]
    InvalidPlan(String),
}

/// Fill `n_holes` rectangles of side `hole_frac × image side` with the
/// image mean.
pub fn coarse_dropout(img: &ScalarImage, rng: &mut SampleRng, n_holes: usize, hole_frac: f64) -> ScalarImage {
    let mut out = img.clone();
    if n_holes == 0 {
        return out;
    }
    let mean = img.mean();
    let hw = ((hole_frac * img.width as f64).round() as usize).clamp(1, img.width);
    let hh = ((hole_frac * img.height as f64).round() as usize).clamp(1, img.height);
    for _ in 0..n_holes {
        let x0 = rng.random_range(0..=img.width - hw);
        let y0 = rng.random_range(0..=img.height - hh);
        for y in y0..y0 + hh {
            out.data[y * img.width + x0..y * img.width + x0 + hw].fill(mean);
        }
    }
    out
}

pub fn invert(img: &ScalarImage) -> ScalarImage {
    img.map(|p| 1.0 - p)
}

/// Half-sample symmetric reflection of index `i` into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - 1 - m) as usize
    } else {
        m as usize
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

/// Separable Gaussian blur with reflected borders; the mean is preserved.
pub fn gaussian_blur(img: &ScalarImage, sigma_px: f64) -> ScalarImage {
    if sigma_px <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma_px);
    let r = (k.len() / 2) as isize;
    let (w, h) = (img.width, img.height);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] =
                k.iter().enumerate().map(|(i, kw)| kw * row[reflect(x as isize + i as isize - r, w)]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] =
                k.iter().enumerate().map(|(i, kw)| kw * tmp[reflect(y as isize + i as isize - r, h) * w + x]).sum();
        }
    }
    ScalarImage::from_vec(w, h, out)
}

pub fn gamma_contrast(img: &ScalarImage, gamma: f64) -> ScalarImage {
    img.map(|p| p.clamp(0.0, 1.0).powf(gamma))
}

/// Linear ramp of the given width centred on `center`, clamped to `[0, 1]`.
#[inline]
pub fn window_value(p: f64, center: f64, width: f64) -> f64 {
    ((p - center) / width + 0.5).clamp(0.0, 1.0)
}

pub fn window(img: &ScalarImage, center: f64, width: f64) -> ScalarImage {
    img.map(|p| window_value(p, center, width))
}

const BINS: usize = 256;

#[inline]
fn bin(p: f64) -> usize {
    ((p * BINS as f64).floor().max(0.0) as usize).min(BINS - 1)
}

/// Exact when `a == b`.
#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Contrast-limited adaptive histogram equalization with bilinear
/// interpolation between tile mappings.
///
/// Each tile's 256-bin histogram is clipped at `clip_limit × mean bin
/// count`, the excess is spread evenly over all bins, and the tile maps a
/// bin to its normalized cumulative count. `clip_limit = ∞` disables
/// clipping.
pub fn clahe(img: &ScalarImage, tiles: usize, clip_limit: f64) -> ScalarImage {
    let (w, h) = (img.width, img.height);
    let tx = tiles.clamp(1, w.max(1));
    let ty = tiles.clamp(1, h.max(1));
    let xs: Vec<usize> = (0..=tx).map(|i| i * w / tx).collect();
    let ys: Vec<usize> = (0..=ty).map(|i| i * h / ty).collect();
    let mut luts = vec![[0f64; BINS]; tx * ty];
    for j in 0..ty {
        for i in 0..tx {
            let mut hist = [0f64; BINS];
            for y in ys[j]..ys[j + 1] {
                for x in xs[i]..xs[i + 1] {
                    hist[bin(img.data[y * w + x])] += 1.0;
                }
            }
            // Work in fractions of the tile so equal histograms give
            // bit-identical mappings whatever the tile size.
            let n = ((xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j])) as f64;
            hist.iter_mut().for_each(|c| *c /= n);
            if clip_limit.is_finite() {
                let limit = clip_limit / BINS as f64;
                let excess: f64 = hist.iter().map(|&c| (c - limit).max(0.0)).sum();
                for c in hist.iter_mut() {
                    *c = c.min(limit) + excess / BINS as f64;
                }
            }
            let lut = &mut luts[j * tx + i];
            let mut acc = 0.0;
            for b in 0..BINS {
                acc += hist[b];
                lut[b] = acc.clamp(0.0, 1.0);
            }
        }
    }
    let centers =
        |edges: &[usize]| -> Vec<f64> { edges.windows(2).map(|e| (e[0] + e[1]) as f64 * 0.5 - 0.5).collect() };
    let (cx, cy) = (centers(&xs), centers(&ys));
    // Neighbouring tile indices and weight toward the second one.
    let locate = |c: &[f64], p: f64| -> (usize, usize, f64) {
        if p <= c[0] {
            return (0, 0, 0.0);
        }
        let last = c.len() - 1;
        if p >= c[last] {
            return (last, last, 0.0);
        }
        let i = c.partition_point(|&v| v <= p) - 1;
        (i, i + 1, (p - c[i]) / (c[i + 1] - c[i]))
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let (j0, j1, fy) = locate(&cy, y as f64);
        for x in 0..w {
            let (i0, i1, fx) = locate(&cx, x as f64);
            let b = bin(img.data[y * w + x]);
            let top = lerp(luts[j0 * tx + i0][b], luts[j0 * tx + i1][b], fx);
            let bottom = lerp(luts[j1 * tx + i0][b], luts[j1 * tx + i1][b], fx);
            out[y * w + x] = lerp(top, bottom, fy).clamp(0.0, 1.0);
        }
    }
    ScalarImage::from_vec(w, h, out)
}

/// Result of 1-D Lloyd iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans1d {
    pub centers: Vec<f64>,
    pub counts: Vec<usize>,
    pub stds: Vec<f64>,
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
}

/// Nearest centre, ties to the lowest index.
fn nearest(centers: &[f64], v: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &c) in centers.iter().enumerate() {
        let d = (v - c).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// 1-D k-means with quantile initialization (`(i + ½)/k` of the sorted
/// values), at most 100 iterations, stopping once no centre moves more than
/// 1e-6. Empty clusters keep their centre.
pub fn kmeans_1d(values: &[f64], k: usize) -> KMeans1d {
    assert!(k >= 1 && !values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut centers: Vec<f64> = (0..k)
        .map(|i| sorted[(((i as f64 + 0.5) / k as f64) * n as f64).floor().min((n - 1) as f64) as usize])
        .collect();
    let mut objective = Vec::new();
    let mut assign = vec![0usize; n];
    for _ in 0..100 {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        let mut obj = 0.0;
        for (a, &v) in assign.iter_mut().zip(&sorted) {
            *a = nearest(&centers, v);
            sums[*a] += v - centers[*a];
            counts[*a] += 1;
            obj += (v - centers[*a]).powi(2);
        }
        objective.push(obj);
        let mut shift = 0f64;
        for i in 0..k {
            if counts[i] > 0 {
                // Mean as an offset from the old centre: exact for constant clusters.
                let delta = sums[i] / counts[i] as f64;
                shift = shift.max(delta.abs());
                centers[i] += delta;
            }
        }
        if shift <= 1e-6 {
            break;
        }
    }
    let mut counts = vec![0usize; k];
    let mut sq = vec![0.0; k];
    for &v in &sorted {
        let a = nearest(&centers, v);
        counts[a] += 1;
        sq[a] += (v - centers[a]).powi(2);
    }
    let stds = (0..k).map(|i| if counts[i] > 0 { (sq[i] / counts[i] as f64).sqrt() } else { 0.0 }).collect();
    KMeans1d { centers, counts, stds, objective }
}

/// Full-range window: identity on `[0, 1]`.
pub const FULL_RANGE: (f64, f64) = (0.5, 1.0);
pub const DEFAULT_K: usize = 4;
const MIN_WIDTH: f64 = 1e-3;

/// Three `(center, width)` windows: the full range, then the two largest
/// clusters that contain neither the darkest nor the brightest pixel.
/// Extreme clusters fill in when fewer than two interior ones exist.
pub fn kmeans_windows(img: &ScalarImage, k: usize) -> [(f64, f64); 3] {
    assert!(k >= 2, "k must be at least 2");
    let (lo, hi) = img.min_max();
    if img.is_empty() || lo == hi {
        return [FULL_RANGE; 3];
    }
    let km = kmeans_1d(&img.data, k);
    let lo_c = nearest(&km.centers, lo);
    let hi_c = nearest(&km.centers, hi);
    let by_size = |mut ids: Vec<usize>| {
        ids.sort_by(|&a, &b| km.counts[b].cmp(&km.counts[a]).then(km.centers[a].total_cmp(&km.centers[b])));
        ids
    };
    let nonempty: Vec<usize> = (0..k).filter(|&i| km.counts[i] > 0).collect();
    let interior = by_size(nonempty.iter().copied().filter(|&i| i != lo_c && i != hi_c).collect());
    let extreme = by_size(nonempty.iter().copied().filter(|&i| i == lo_c || i == hi_c).collect());
    let mut picked = interior.into_iter().chain(extreme).map(|i| (km.centers[i], (4.0 * km.stds[i]).max(MIN_WIDTH)));
    [FULL_RANGE, picked.next().unwrap_or(FULL_RANGE), picked.next().unwrap_or(FULL_RANGE)]
}

/// Model input: one windowed channel per K-means window.
pub fn to_three_channel(img: &ScalarImage) -> [ScalarImage; 3] {
    kmeans_windows(img, DEFAULT_K).map(|(c, w)| window(img, c, w))
}

/// One step of a plan: an op name, its parameter ranges and a firing
/// probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub op: String,
    pub p: f64,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub name: String,
    pub seed: u64,
    /// Augment the single-channel image before 3-channel conversion.
    #[serde(default = "yes")]
    pub before_channel_split: bool,
    pub steps: Vec<PlanStep>,
}

fn yes() -> bool {
    true
}

/// Record of one op that fired, with the parameters drawn for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedOp {
    pub op: String,
    pub params: Value,
}

pub const OPS: [&str; 7] =
    ["coarse_dropout", "gaussian_blur", "gamma_contrast", "window", "clahe", "invert", "identity"];

impl AugmentationPlan {
    /// The shipped plan (dropout, blur, gamma, window, CLAHE, inversion).
    pub fn default_plan(seed: u64) -> Self {
        let mut plan: Self = serde_json::from_str(DEFAULT_PLAN).expect("shipped plan is valid");
        plan.seed = seed;
        plan
    }

    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| AugmentError::InvalidPlan(format!("{}: {e}", path.display())))?;
        let plan: Self = serde_json::from_str(&text).map_err(|e| AugmentError::InvalidPlan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        for s in &self.steps {
            if !OPS.contains(&s.op.as_str()) {
                return Err(AugmentError::UnknownOp(s.op.clone()));
            }
            if !(0.0..=1.0).contains(&s.p) {
                return Err(AugmentError::InvalidPlan(format!("probability {} of '{}' outside [0, 1]", s.p, s.op)));
            }
        }
        Ok(())
    }
}

fn range(params: &Value, key: &str, default: [f64; 2]) -> Result<[f64; 2], AugmentError> {
    match params.get(key) {
        None => Ok(default),
        Some(Value::Number(n)) => {
            let v = n.as_f64().unwrap_or(f64::NAN);
            Ok([v, v])
        }
        Some(v) => {
            let r: [f64; 2] = serde_json::from_value(v.clone())
                .map_err(|_| AugmentError::InvalidPlan(format!("'{key}' must be a number or [lo, hi]")))?;
            if r[0] > r[1] || r.iter().any(|x| !x.is_finite()) {
                return Err(AugmentError::InvalidPlan(format!("bad range for '{key}'")));
            }
            Ok(r)
        }
    }
}

fn draw(rng: &mut SampleRng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

/// Apply one op with parameters drawn from the step's ranges.
fn apply_step(img: &ScalarImage, step: &PlanStep, rng: &mut SampleRng) -> Result<(ScalarImage, Value), AugmentError> {
    let p = &step.params;
    let bad = |m: &str| AugmentError::InvalidPlan(format!("{}: {m}", step.op));
    Ok(match step.op.as_str() {
        "coarse_dropout" => {
            let n = draw(rng, range(p, "n_holes", [1.0, 4.0])?).round() as usize;
            let frac = draw(rng, range(p, "hole_frac", [0.05, 0.15])?);
            if !(frac > 0.0 && frac <= 0.5) {
                return Err(bad("hole_frac must lie in (0, 0.5]"));
            }
            (coarse_dropout(img, rng, n, frac), serde_json::json!({"n_holes": n, "hole_frac": frac}))
        }
        "gaussian_blur" => {
            let sigma = draw(rng, range(p, "sigma_px", [0.5, 2.0])?);
            if sigma < 0.0 {
                return Err(bad("sigma_px must be non-negative"));
            }
            (gaussian_blur(img, sigma), serde_json::json!({"sigma_px": sigma}))
        }
        "gamma_contrast" => {
            let std = p.get("log_gamma_std").and_then(Value::as_f64).unwrap_or(0.3);
            let normal = Normal::new(0.0, std).map_err(|_| bad("log_gamma_std must be non-negative"))?;
            let gamma = normal.sample(rng).exp();
            (gamma_contrast(img, gamma), serde_json::json!({"gamma": gamma}))
        }
        "window" => {
            let c = draw(rng, range(p, "center", [0.4, 0.6])?);
            let w = draw(rng, range(p, "width", [0.6, 1.2])?);
            if w <= 0.0 {
                return Err(bad("width must be positive"));
            }
            (window(img, c, w), serde_json::json!({"center": c, "width": w}))
        }
        "clahe" => {
            let tiles = draw(rng, range(p, "tiles", [8.0, 8.0])?).round() as usize;
            let clip = draw(rng, range(p, "clip_limit", [2.0, 2.0])?);
            if tiles < 1 || clip < 1.0 {
                return Err(bad("need tiles >= 1 and clip_limit >= 1"));
            }
            (clahe(img, tiles, clip), serde_json::json!({"tiles": tiles, "clip_limit": clip}))
        }
        "invert" => (invert(img), Value::Null),
        "identity" => (img.clone(), Value::Null),
        other => return Err(AugmentError::UnknownOp(other.to_string())),
    })
}

/// Apply the plan's steps in order, each firing independently with its
/// probability. Returns the image and the ops that fired.
pub fn apply_plan_traced(
    img: &ScalarImage,
    plan: &AugmentationPlan,
) -> Result<(ScalarImage, Vec<AppliedOp>), AugmentError> {
    plan.validate()?;
    let mut rng = rng_from_seed(plan.seed);
    let mut out = img.clone();
    let mut fired = Vec::new();
    for step in &plan.steps {
        let u: f64 = rng.random();
        if u < step.p {
            let (next, params) = apply_step(&out, step, &mut rng)?;
            out = next;
            fired.push(AppliedOp { op: step.op.clone(), params });
        }
    }
    Ok((out, fired))
}

pub fn apply_plan(img: &ScalarImage, plan: &AugmentationPlan) -> Result<ScalarImage, AugmentError> {
    apply_plan_traced(img, plan).map(|(img, _)| img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(seed: u64, w: usize, h: usize) -> ScalarImage {
        let mut rng = rng_from_seed(seed);
        ScalarImage::from_vec(w, h, (0..w * h).map(|_| rng.random()).collect())
    }

    #[test]
    fn dropout_counts() {
        let img = random_image(1, 512, 512);
        let mut rng = rng_from_seed(2);
        assert_eq!(coarse_dropout(&img, &mut rng, 0, 0.25), img);
        let out = coarse_dropout(&img, &mut rng, 1, 0.25);
        let mean = img.mean();
        let changed = out.data.iter().zip(&img.data).filter(|(a, b)| a != b).count();
        let at_mean = out.data.iter().filter(|&&v| v == mean).count();
        assert!(changed <= 128 * 128 && at_mean >= 128 * 128);
        assert_eq!(out.data.iter().zip(&img.data).filter(|(a, b)| a != b || **a == mean).count(), 128 * 128);
    }

    #[test]
    fn inversion() {
        let img = random_image(3, 17, 9);
        assert_eq!(
            invert(&invert(&img)).data.iter().zip(&img.data).filter(|(a, b)| (*a - *b).abs() > 1e-15).count(),
            0
        );
        assert!((invert(&ScalarImage::filled(3, 3, 0.3)).data[4] - 0.7).abs() < 1e-15);
        assert!((invert(&img).mean() - (1.0 - img.mean())).abs() < 1e-12);
    }

    #[test]
    fn blur_preserves_mean_and_matches_dense_oracle() {
        let img = random_image(4, 40, 31);
        assert_eq!(gaussian_blur(&img, 0.0), img);
        assert!((gaussian_blur(&img, 3.0).mean() - img.mean()).abs() < 1e-6);
        // Also when the kernel is wider than the image.
        assert!((gaussian_blur(&img, 25.0).mean() - img.mean()).abs() < 1e-6);

        let mut delta = ScalarImage::new(33, 33);
        delta.set(16, 16, 1.0);
        let out = gaussian_blur(&delta, 2.0);
        let mut dense = 0.0;
        for dy in -16i32..=16 {
            for dx in -16i32..=16 {
                let r2 = (dx * dx + dy * dy) as f64;
                dense += (-r2 / 8.0).exp();
            }
        }
        let oracle = 1.0 / dense;
        assert!((out.get(16, 16) - oracle).abs() / oracle < 0.02);
        assert!((out.get(16, 16) - 1.0 / (8.0 * std::f64::consts::PI)).abs() / oracle < 0.02);
    }

    #[test]
    fn gamma_and_window() {
        let img = ScalarImage::from_vec(3, 1, vec![0.0, 0.5, 1.0]);
        assert_eq!(gamma_contrast(&img, 2.0).data, vec![0.0, 0.25, 1.0]);
        assert_eq!(gamma_contrast(&img, 1.0), img);
        assert_eq!(window(&img, 0.5, 1.0), img);
        assert_eq!(window_value(0.3, 0.3, 0.8), 0.5);
        assert!((window_value(0.3 + 0.2, 0.3, 0.8) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn clahe_global_equalization_matches_cdf() {
        let img = random_image(5, 64, 48).map(|p| p * p);
        let out = clahe(&img, 1, f64::INFINITY);
        let n = img.len() as f64;
        for (i, &p) in img.data.iter().enumerate() {
            let b = bin(p);
            let cdf = img.data.iter().filter(|&&q| bin(q) <= b).count() as f64 / n;
            assert!((out.data[i] - cdf).abs() <= 1.0 / 256.0);
        }
        let flat = clahe(&ScalarImage::filled(50, 50, 0.4), 8, 2.0);
        let (lo, hi) = flat.min_max();
        assert_eq!(lo, hi);
        let (lo, hi) = clahe(&img, 8, 2.0).min_max();
        assert!(lo >= 0.0 && hi <= 1.0);
    }

    #[test]
    fn kmeans_bimodal_and_constant() {
        let data: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.2 } else { 0.8 }).collect();
        let km = kmeans_1d(&data, 2);
        assert_eq!(km.centers, vec![0.2, 0.8]);
        let img = ScalarImage::from_vec(10, 10, data);
        let w = kmeans_windows(&img, 2);
        assert_eq!(w[0], FULL_RANGE);
        assert_eq!(w[1], (0.2, 1e-3));
        assert_eq!(w[2], (0.8, 1e-3));
        let ch = to_three_channel(&img);
        assert_eq!(ch[0], img);
        assert_eq!(ch[1].get(0, 0), 0.5);
        assert_eq!(kmeans_windows(&ScalarImage::filled(4, 4, 0.3), 4), [FULL_RANGE; 3]);
    }

    #[test]
    fn kmeans_objective_is_monotone() {
        for seed in 0..20 {
            let img = random_image(seed, 30, 30).map(|p| (p * 3.0).sin().abs());
            let km = kmeans_1d(&img.data, 4);
            assert!(km.objective.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    #[test]
    fn plans() {
        let img = random_image(6, 32, 32);
        let mut plan = AugmentationPlan::default_plan(9);
        plan.validate().unwrap();
        assert_eq!(apply_plan(&img, &plan).unwrap(), apply_plan(&img, &plan).unwrap());
        let empty = AugmentationPlan { steps: vec![], ..plan.clone() };
        assert_eq!(apply_plan(&img, &empty).unwrap(), img);
        for s in plan.steps.iter_mut() {
            s.p = 0.0;
        }
        assert_eq!(apply_plan(&img, &plan).unwrap(), img);
        plan.steps.push(PlanStep { op: "sharpen".into(), p: 1.0, params: Value::Null });
        assert!(matches!(apply_plan(&img, &plan), Err(AugmentError::UnknownOp(_))));
    }
}
