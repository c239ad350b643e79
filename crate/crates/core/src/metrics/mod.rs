//! Segmentation losses for training and overlap/distance metrics for
//! evaluation.

mod eval;

pub use eval::{
    evaluate_archives, evaluate_run, read_archive, write_archive, write_report, ArchiveMask, ArchiveSample, EvalConfig,
    MetricRow, MetricsReport, ARCHIVE_SCHEMA,
};

use serde::{Deserialize, Serialize};

use crate::masks::MaskSet;
use crate::raster::BinaryMask;

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
pub const TRAIN_DICE_EPS: f64 = 1.0;
/// Focal-to-dice weight of the mask loss.
pub const FOCAL_WEIGHT: f64 = 20.0;
/// Evaluation keeps masks covering at least this fraction of the image.
pub const MIN_MASK_FRAC: f64 = 0.025;
const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    Dims((usize, usize), (usize, usize)),
    #[error("soft mask value {0} outside [0, 1]")]
    Range(f64),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("distance undefined: {0} mask is empty")]
    EmptyMask(&'static str),
    #[error("predictions and ground truth are not aligned; missing predictions: [{}], unknown ids: [{}]", missing.join(", "), extra.join(", "))]
    Alignment { missing: Vec<String>, extra: Vec<String> },
    #[error("predictions and ground truth share no ids")]
    EmptyIntersection,
    #[error("archive {path}: {reason}")]
    Archive { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Per-pixel foreground probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl SoftMask {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, MetricsError> {
        if data.len() != width * height {
            return Err(MetricsError::Param(format!("{} values for a {width}×{height} mask", data.len())));
        }
        if let Some(&v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(MetricsError::Range(v));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_binary(m: &BinaryMask) -> Self {
        Self { width: m.width, height: m.height, data: m.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect() }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn threshold(&self, t: f64) -> BinaryMask {
        BinaryMask::from_vec(self.width, self.height, self.data.iter().map(|&p| p >= t).collect())
    }
}

fn same_dims(a: (usize, usize), b: (usize, usize)) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::Dims(a, b));
    }
    Ok(())
}

/// 1 − (2·Σ p·g + eps) / (Σ p + Σ g + eps). Both empty with eps = 0 gives 0.
pub fn dice_loss(pred: &SoftMask, gt: &BinaryMask, eps: f64) -> Result<f64, MetricsError> {
    same_dims(pred.dims(), gt.dims())?;
    if !(eps >= 0.0) {
        return Err(MetricsError::Param(format!("eps must be >= 0, got {eps}")));
    }
    let (mut inter, mut sp, mut sg) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        sp += p;
        if g {
            inter += p;
            sg += 1.0;
        }
    }
    let den = sp + sg + eps;
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 - (2.0 * inter + eps) / den)
}

/// Mean over pixels of −α_t (1 − p_t)^γ log p_t, predictions clamped to
/// [1e-7, 1 − 1e-7].
pub fn focal_loss(pred: &SoftMask, gt: &BinaryMask, alpha: f64, gamma: f64) -> Result<f64, MetricsError> {
    same_dims(pred.dims(), gt.dims())?;
    if !(0.0..=1.0).contains(&alpha) || !(gamma >= 0.0) {
        return Err(MetricsError::Param(format!("alpha {alpha} must be in [0, 1] and gamma {gamma} >= 0")));
    }
    if pred.data.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(&p, &g)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let (pt, at) = if g { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
            -at * (1.0 - pt).powf(gamma) * pt.ln()
        })
        .sum();
    Ok(sum / pred.data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub focal_weight: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub dice_eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { focal_weight: FOCAL_WEIGHT, alpha: FOCAL_ALPHA, gamma: FOCAL_GAMMA, dice_eps: TRAIN_DICE_EPS }
    }
}

/// Dice + weighted focal loss of one mask.
pub fn mask_loss(pred: &SoftMask, gt: &BinaryMask, w: &LossWeights) -> Result<f64, MetricsError> {
    Ok(dice_loss(pred, gt, w.dice_eps)? + w.focal_weight * focal_loss(pred, gt, w.alpha, w.gamma)?)
}

/// Three candidate masks with their predicted IoUs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiMaskOutput {
    pub masks: [SoftMask; 3],
    pub iou_pred: [f64; 3],
}

impl MultiMaskOutput {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if let Some(&v) = self.iou_pred.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(MetricsError::Range(v));
        }
        Ok(())
    }
}

/// Branch with the lowest mask loss (ties to the lowest index) and its loss.
pub fn select_min_loss(out: &MultiMaskOutput, gt: &BinaryMask, w: &LossWeights) -> Result<(usize, f64), MetricsError> {
    let mut best = (0, f64::INFINITY);
    for (i, m) in out.masks.iter().enumerate() {
        let l = mask_loss(m, gt, w)?;
        if l < best.1 {
            best = (i, l);
        }
    }
    Ok(best)
}

/// Training target for the IoU head: IoU of the thresholded prediction.
pub fn iou_head_target(pred: &SoftMask, gt: &BinaryMask, threshold: f64) -> Result<f64, MetricsError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MetricsError::Param(format!("threshold must be in (0, 1), got {threshold}")));
    }
    iou(&pred.threshold(threshold), gt)
}

/// Text-only loss weighted to count as much as all point-prompt losses.
pub fn reweight_prompt_losses(text_loss: f64, point_losses: &[f64]) -> f64 {
    if point_losses.is_empty() {
        return text_loss;
    }
    point_losses.len() as f64 * text_loss + point_losses.iter().sum::<f64>()
}

fn overlap(a: &BinaryMask, b: &BinaryMask) -> Result<(usize, usize, usize), MetricsError> {
    same_dims(a.dims(), b.dims())?;
    let mut inter = 0;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
    }
    Ok((inter, a.area(), b.area()))
}

/// Intersection over union; 1 when both are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricsError> {
    let (i, na, nb) = overlap(a, b)?;
    let u = na + nb - i;
    Ok(if u == 0 { 1.0 } else { i as f64 / u as f64 })
}

/// Dice coefficient; 1 when both are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricsError> {
    let (i, na, nb) = overlap(a, b)?;
    Ok(if na + nb == 0 { 1.0 } else { 2.0 * i as f64 / (na + nb) as f64 })
}

fn boundary_points(m: &BinaryMask) -> Vec<(i64, i64)> {
    m.boundary().coords().map(|(x, y)| (x as i64, y as i64)).collect()
}

/// Largest squared distance from a point of `from` to its nearest point of
/// `to`. The inner scan stops as soon as it cannot raise the maximum.
fn directed_sq(from: &[(i64, i64)], to: &[(i64, i64)]) -> i64 {
    let mut worst = 0i64;
    for &(x, y) in from {
        let mut best = i64::MAX;
        for &(u, v) in to {
            let d = (x - u).pow(2) + (y - v).pow(2);
            if d < best {
                best = d;
                if best <= worst {
                    break;
                }
            }
        }
        worst = worst.max(best);
    }
    worst
}

type Points = Vec<(i64, i64)>;

fn boundaries(a: &BinaryMask, b: &BinaryMask) -> Result<(Points, Points), MetricsError> {
    same_dims(a.dims(), b.dims())?;
    if a.is_empty() {
        return Err(MetricsError::EmptyMask("first"));
    }
    if b.is_empty() {
        return Err(MetricsError::EmptyMask("second"));
    }
    Ok((boundary_points(a), boundary_points(b)))
}

/// Symmetric Hausdorff distance between the 4-connected boundaries, in
/// units of `spacing`.
pub fn hausdorff(a: &BinaryMask, b: &BinaryMask, spacing: f64) -> Result<f64, MetricsError> {
    let (pa, pb) = boundaries(a, b)?;
    let d2 = directed_sq(&pa, &pb).max(directed_sq(&pb, &pa));
    Ok((d2 as f64).sqrt() * spacing)
}

fn nearest_sq(from: &[(i64, i64)], to: &[(i64, i64)]) -> Vec<i64> {
    from.iter().map(|&(x, y)| to.iter().map(|&(u, v)| (x - u).pow(2) + (y - v).pow(2)).min().unwrap_or(0)).collect()
}

fn percentile_sq(mut d: Vec<i64>, q: f64) -> i64 {
    d.sort_unstable();
    let rank = ((q / 100.0) * d.len() as f64).ceil().max(1.0) as usize;
    d[rank.min(d.len()) - 1]
}

/// Percentile Hausdorff: the larger of the two directed nearest-rank
/// `q`-th percentiles. `q = 100` equals [`hausdorff`].
pub fn hausdorff_percentile(a: &BinaryMask, b: &BinaryMask, spacing: f64, q: f64) -> Result<f64, MetricsError> {
    if !(q > 0.0 && q <= 100.0) {
        return Err(MetricsError::Param(format!("percentile must be in (0, 100], got {q}")));
    }
    let (pa, pb) = boundaries(a, b)?;
    let d2 = percentile_sq(nearest_sq(&pa, &pb), q).max(percentile_sq(nearest_sq(&pb, &pa), q));
    Ok((d2 as f64).sqrt() * spacing)
}

/// Pixel count at or above which a mask passes [`filter_small_masks`].
pub fn keeps_area(area: usize, dims: (usize, usize), min_frac: f64) -> bool {
    area as f64 >= min_frac * (dims.0 * dims.1) as f64
}

/// Masks covering at least `min_frac` of the image.
pub fn filter_small_masks(set: &MaskSet, min_frac: f64) -> Result<MaskSet, MetricsError> {
    if !(0.0..=1.0).contains(&min_frac) {
        return Err(MetricsError::Param(format!("min_frac must be in [0, 1], got {min_frac}")));
    }
    Ok(MaskSet {
        entries: set.entries.iter().filter(|e| keeps_area(e.mask.area(), set.image_dims, min_frac)).cloned().collect(),
        image_dims: set.image_dims,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::ObjectKind;
    use crate::masks::MaskEntry;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn m(w: usize, h: usize, on: &[(usize, usize)]) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| on.contains(&(x, y)))
    }

    #[test]
    fn counting_case() {
        let a = m(3, 1, &[(0, 0), (1, 0)]);
        let b = m(3, 1, &[(1, 0), (2, 0)]);
        assert_eq!(dice_loss(&SoftMask::from_binary(&a), &b, 0.0).unwrap(), 0.5);
        assert_eq!(iou(&a, &b).unwrap(), 1.0 / 3.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert_eq!(iou_head_target(&SoftMask::from_binary(&a), &b, 0.5).unwrap(), 1.0 / 3.0);
        let e = BinaryMask::new(3, 1);
        assert_eq!((iou(&e, &e).unwrap(), dice(&e, &e).unwrap()), (1.0, 1.0));
        assert_eq!(iou(&a, &m(3, 1, &[(2, 0)])).unwrap(), 0.0);
        assert!(iou(&a, &BinaryMask::new(2, 1)).is_err());
    }

    #[test]
    fn dice_loss_limits() {
        let a = m(4, 4, &[(0, 0), (1, 1)]);
        assert!(dice_loss(&SoftMask::from_binary(&a), &a, 1.0).unwrap().abs() < 1e-15);
        let b = m(4, 4, &[(3, 3)]);
        let l = dice_loss(&SoftMask::from_binary(&a), &b, 1e-9).unwrap();
        assert!((l - 1.0).abs() < 1e-9);
    }

    #[test]
    fn focal_cases() {
        let gt = m(1, 1, &[(0, 0)]);
        let half = SoftMask::new(1, 1, vec![0.5]).unwrap();
        let l = focal_loss(&half, &gt, 0.25, 2.0).unwrap();
        assert!((l - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!((l - 0.043322).abs() < 1e-6);
        let mut rng = rng_from_seed(1);
        let gt = BinaryMask::from_vec(8, 8, (0..64).map(|_| rng.random()).collect());
        let p = SoftMask::new(8, 8, (0..64).map(|_| rng.random()).collect()).unwrap();
        let bce: f64 = p
            .data
            .iter()
            .zip(&gt.data)
            .map(|(&q, &g)| {
                let q = q.clamp(1e-7, 1.0 - 1e-7);
                if g {
                    -q.ln()
                } else {
                    -(1.0 - q).ln()
                }
            })
            .sum::<f64>()
            / 64.0;
        assert!((focal_loss(&p, &gt, 0.5, 0.0).unwrap() - 0.5 * bce).abs() < 1e-9);
        assert!(focal_loss(&SoftMask::from_binary(&gt), &gt, 0.25, 2.0).unwrap() < 1e-6);
    }

    #[test]
    fn min_loss_selection() {
        let gt = m(4, 4, &[(1, 1), (2, 2)]);
        let other = SoftMask::from_binary(&m(4, 4, &[(0, 0)]));
        let exact = SoftMask::from_binary(&gt);
        let out = MultiMaskOutput { masks: [other.clone(), exact, other.clone()], iou_pred: [0.1, 0.9, 0.1] };
        let (i, l) = select_min_loss(&out, &gt, &LossWeights::default()).unwrap();
        assert_eq!(i, 1);
        assert!(l < 1e-5);
        let same = MultiMaskOutput { masks: [other.clone(), other.clone(), other], iou_pred: [0.5; 3] };
        assert_eq!(select_min_loss(&same, &gt, &LossWeights::default()).unwrap().0, 0);
    }

    #[test]
    fn reweighting() {
        assert_eq!(reweight_prompt_losses(0.3, &[0.3]), 0.6);
        assert_eq!(reweight_prompt_losses(0.7, &[]), 0.7);
        assert_eq!(reweight_prompt_losses(0.5, &[0.25; 8]), 6.0);
    }

    #[test]
    fn hausdorff_cases() {
        let a = m(10, 10, &[(1, 1)]);
        let b = m(10, 10, &[(4, 5)]);
        assert_eq!(hausdorff(&a, &b, 1.0).unwrap(), 5.0);
        assert_eq!(hausdorff(&a, &a, 1.0).unwrap(), 0.0);
        assert_eq!(hausdorff(&a, &b, 0.5).unwrap(), 2.5);
        assert!(matches!(hausdorff(&a, &BinaryMask::new(10, 10), 1.0), Err(MetricsError::EmptyMask(_))));
        assert_eq!(hausdorff_percentile(&a, &b, 1.0, 100.0).unwrap(), 5.0);
    }

    #[test]
    fn filter_boundary() {
        let dims = (512, 512);
        assert!(keeps_area(6554, dims, 0.025));
        assert!(!keeps_area(6553, dims, 0.025));
        let entry = |id, n: usize| MaskEntry {
            id,
            name: format!("m{id}"),
            kind: ObjectKind::Organ,
            mask: BinaryMask::from_vec(512, 512, (0..512 * 512).map(|i| i < n).collect()),
        };
        let set = MaskSet { entries: vec![entry(1, 6554), entry(2, 6553), entry(3, 512 * 512)], image_dims: dims };
        let ids = |s: &MaskSet| s.entries.iter().map(|e| e.id).collect::<Vec<_>>();
        assert_eq!(ids(&filter_small_masks(&set, 0.025).unwrap()), vec![1, 3]);
        assert_eq!(ids(&filter_small_masks(&set, 0.0).unwrap()), vec![1, 2, 3]);
        assert_eq!(ids(&filter_small_masks(&set, 1.0).unwrap()), vec![3]);
    }

    fn mask_strategy() -> impl Strategy<Value = (BinaryMask, BinaryMask, BinaryMask)> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            let v = proptest::collection::vec(any::<bool>(), w * h);
            (v.clone(), v.clone(), v).prop_map(move |(a, b, c)| {
                (BinaryMask::from_vec(w, h, a), BinaryMask::from_vec(w, h, b), BinaryMask::from_vec(w, h, c))
            })
        })
    }

    proptest! {
        #[test]
        fn dice_iou_identity((a, b, _) in mask_strategy()) {
            let (i, d) = (iou(&a, &b).unwrap(), dice(&a, &b).unwrap());
            prop_assert!((d - 2.0 * i / (1.0 + i)).abs() < 1e-12);
        }

        #[test]
        fn hausdorff_metric_axioms((a, b, c) in mask_strategy()) {
            prop_assume!(!a.is_empty() && !b.is_empty() && !c.is_empty());
            let ab = hausdorff(&a, &b, 1.0).unwrap();
            prop_assert_eq!(ab, hausdorff(&b, &a, 1.0).unwrap());
            let (ac, cb) = (hausdorff(&a, &c, 1.0).unwrap(), hausdorff(&c, &b, 1.0).unwrap());
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn min_loss_scale_invariant(seed in 0u64..1000, s in 0.1f64..10.0) {
            let mut rng = rng_from_seed(seed);
            let gt = BinaryMask::from_vec(5, 5, (0..25).map(|_| rng.random()).collect());
            let masks = [0, 1, 2].map(|_| SoftMask::new(5, 5, (0..25).map(|_| rng.random()).collect()).unwrap());
            let out = MultiMaskOutput { masks, iou_pred: [0.5; 3] };
            let w = LossWeights::default();
            let losses: Vec<f64> = out.masks.iter().map(|m| s * mask_loss(m, &gt, &w).unwrap()).collect();
            let scaled = losses.iter().enumerate().fold((0, f64::INFINITY), |b, (i, &l)| if l < b.1 { (i, l) } else { b });
            prop_assert_eq!(select_min_loss(&out, &gt, &w).unwrap().0, scaled.0);
        }
    }
}
