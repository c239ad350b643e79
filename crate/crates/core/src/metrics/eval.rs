//! Run evaluation over mask archives.
//!
//! An archive is a directory of `<sample_id>.json` files, each holding the
//! masks of one image as RLE records keyed by prompt id. Predictions also
//! carry the prompt condition (for example `text`, `2_points`, `8_points`).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dice, hausdorff, hausdorff_percentile, iou, keeps_area, MetricsError, MIN_MASK_FRAC};
use crate::pipeline::{rle_decode, rle_encode};
use crate::raster::BinaryMask;

pub const ARCHIVE_SCHEMA: u32 = 1;

fn default_spacing() -> f64 {
    1.0
}

fn default_unit() -> String {
    "px".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMask {
    pub prompt_id: String,
    pub class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    pub rle: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveSample {
    pub schema: u32,
    pub sample_id: String,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_spacing")]
    pub pixel_spacing: f64,
    #[serde(default = "default_unit")]
    pub hdd_unit: String,
    pub masks: Vec<ArchiveMask>,
}

impl ArchiveSample {
    pub fn new(sample_id: &str, dims: (usize, usize)) -> Self {
        Self {
            schema: ARCHIVE_SCHEMA,
            sample_id: sample_id.to_string(),
            width: dims.0,
            height: dims.1,
            pixel_spacing: 1.0,
            hdd_unit: default_unit(),
            masks: Vec::new(),
        }
    }

    pub fn push(&mut self, prompt_id: &str, class: &str, condition: Option<&str>, mask: &BinaryMask) {
        self.masks.push(ArchiveMask {
            prompt_id: prompt_id.to_string(),
            class: class.to_string(),
            condition: condition.map(str::to_string),
            rle: rle_encode(mask),
        });
    }
}

fn io_err(path: &Path, source: std::io::Error) -> MetricsError {
    MetricsError::Io { path: path.display().to_string(), source }
}

fn archive_err(path: &Path, reason: impl Into<String>) -> MetricsError {
    MetricsError::Archive { path: path.display().to_string(), reason: reason.into() }
}

pub fn write_archive(dir: &Path, samples: &[ArchiveSample]) -> Result<(), MetricsError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for s in samples {
        let p = dir.join(format!("{}.json", s.sample_id));
        let text = serde_json::to_string_pretty(s).map_err(|e| archive_err(&p, e.to_string()))?;
        std::fs::write(&p, text).map_err(|e| io_err(&p, e))?;
    }
    Ok(())
}

/// All `*.json` samples of an archive directory, sorted by sample id.
pub fn read_archive(dir: &Path) -> Result<Vec<ArchiveSample>, MetricsError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let p = entry.map_err(|e| io_err(dir, e))?.path();
        if p.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
        let s: ArchiveSample = serde_json::from_str(&text).map_err(|e| archive_err(&p, e.to_string()))?;
        if s.schema != ARCHIVE_SCHEMA {
            return Err(archive_err(&p, format!("unsupported schema {}", s.schema)));
        }
        out.push(s);
    }
    out.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub min_mask_frac: f64,
    /// Percentile Hausdorff instead of the exact maximum.
    pub hausdorff_percentile: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { min_mask_frac: MIN_MASK_FRAC, hausdorff_percentile: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub class: String,
    pub prompt_condition: String,
    pub n: usize,
    pub iou_mean: f64,
    pub dice_mean: f64,
    /// Mean over pairs where both masks are non-empty.
    pub hdd_mean: Option<f64>,
    pub hdd_unit: String,
    /// Pairs with an empty prediction, left out of the HDD mean.
    pub n_empty_pred: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Per condition: a `mean` row over all pairs, then one row per class.
    pub rows: Vec<MetricRow>,
    pub n_pairs: usize,
    pub n_filtered: usize,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    pub fn means(&self) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(|r| r.class == "mean")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,prompt_condition,n,iou_mean,dice_mean,hdd_mean,hdd_unit\n");
        for r in &self.rows {
            let hdd = r.hdd_mean.map(|h| format!("{h:.6}")).unwrap_or_default();
            s += &format!(
                "{},{},{},{:.6},{:.6},{},{}\n",
                csv_field(&r.class),
                csv_field(&r.prompt_condition),
                r.n,
                r.iou_mean,
                r.dice_mean,
                hdd,
                r.hdd_unit
            );
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `metrics.json` and `metrics.csv` into `dir`.
pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<(), MetricsError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let json = dir.join("metrics.json");
    let text = serde_json::to_string_pretty(report).map_err(|e| archive_err(&json, e.to_string()))?;
    std::fs::write(&json, text).map_err(|e| io_err(&json, e))?;
    let csv = dir.join("metrics.csv");
    std::fs::write(&csv, report.to_csv()).map_err(|e| io_err(&csv, e))
}

struct Pair<'a> {
    key: String,
    class: &'a str,
    condition: String,
    dims: (usize, usize),
    spacing: f64,
    unit: &'a str,
    gt: &'a [u32],
    pred: &'a [u32],
}

struct PairScore {
    iou: f64,
    dice: f64,
    hdd: Option<f64>,
    empty_pred: bool,
}

fn score(p: &Pair, cfg: &EvalConfig) -> Result<PairScore, MetricsError> {
    let decode = |runs: &[u32]| -> Result<BinaryMask, MetricsError> {
        rle_decode(runs, p.dims).map_err(|e| MetricsError::Archive { path: p.key.clone(), reason: e.to_string() })
    };
    let (g, q) = (decode(p.gt)?, decode(p.pred)?);
    let hdd = if g.is_empty() || q.is_empty() {
        None
    } else {
        Some(match cfg.hausdorff_percentile {
            Some(pct) => hausdorff_percentile(&g, &q, p.spacing, pct)?,
            None => hausdorff(&g, &q, p.spacing)?,
        })
    };
    Ok(PairScore { iou: iou(&g, &q)?, dice: dice(&g, &q)?, hdd, empty_pred: q.is_empty() })
}

#[derive(Default)]
struct Acc {
    n: usize,
    iou: f64,
    dice: f64,
    hdd: f64,
    n_hdd: usize,
    empty: usize,
    unit: String,
}

impl Acc {
    fn add(&mut self, s: &PairScore, unit: &str) {
        if self.n == 0 {
            self.unit = unit.to_string();
        }
        self.n += 1;
        self.iou += s.iou;
        self.dice += s.dice;
        if let Some(h) = s.hdd {
            self.hdd += h;
            self.n_hdd += 1;
        }
        self.empty += s.empty_pred as usize;
    }

    fn row(&self, class: &str, condition: &str) -> MetricRow {
        MetricRow {
            class: class.to_string(),
            prompt_condition: condition.to_string(),
            n: self.n,
            iou_mean: self.iou / self.n as f64,
            dice_mean: self.dice / self.n as f64,
            hdd_mean: (self.n_hdd > 0).then(|| self.hdd / self.n_hdd as f64),
            hdd_unit: self.unit.clone(),
            n_empty_pred: self.empty,
        }
    }
}

/// Aligns predictions with ground truth by (sample id, prompt id) and
/// reports IoU, Dice and HDD per class and prompt condition. Every ground
/// truth mask needs a prediction under every condition that appears in the
/// predictions. Ground truth masks below `min_mask_frac` of the image are
/// skipped together with their predictions.
pub fn evaluate_archives(
    pred: &[ArchiveSample],
    gt: &[ArchiveSample],
    cfg: &EvalConfig,
) -> Result<MetricsReport, MetricsError> {
    if !(0.0..=1.0).contains(&cfg.min_mask_frac) {
        return Err(MetricsError::Param(format!("min_mask_frac must be in [0, 1], got {}", cfg.min_mask_frac)));
    }
    let mut gt_index: BTreeMap<(String, String), (&ArchiveSample, &ArchiveMask)> = BTreeMap::new();
    for s in gt {
        for m in &s.masks {
            gt_index.insert((s.sample_id.clone(), m.prompt_id.clone()), (s, m));
        }
    }
    let mut pred_index: BTreeMap<(String, String, String), (&ArchiveSample, &ArchiveMask)> = BTreeMap::new();
    for s in pred {
        for m in &s.masks {
            let cond = m.condition.clone().unwrap_or_else(|| "text".into());
            pred_index.insert((cond, s.sample_id.clone(), m.prompt_id.clone()), (s, m));
        }
    }
    let conditions: BTreeSet<String> = pred_index.keys().map(|k| k.0.clone()).collect();
    let show = |c: &str, s: &str, p: &str| format!("{s}/{p} [{c}]");
    let mut missing = Vec::new();
    for c in &conditions {
        for (s, p) in gt_index.keys() {
            if !pred_index.contains_key(&(c.clone(), s.clone(), p.clone())) {
                missing.push(show(c, s, p));
            }
        }
    }
    let extra: Vec<String> = pred_index
        .keys()
        .filter(|(_, s, p)| !gt_index.contains_key(&(s.clone(), p.clone())))
        .map(|(c, s, p)| show(c, s, p))
        .collect();
    if pred_index.len() == extra.len() {
        return Err(MetricsError::EmptyIntersection);
    }
    if !missing.is_empty() || !extra.is_empty() {
        return Err(MetricsError::Alignment { missing, extra });
    }

    let mut pairs = Vec::new();
    let mut n_filtered = 0;
    for ((c, s, p), (ps, pm)) in &pred_index {
        let (gs, gm) = gt_index[&(s.clone(), p.clone())];
        let dims = (gs.width, gs.height);
        if (ps.width, ps.height) != dims {
            return Err(MetricsError::Dims((ps.width, ps.height), dims));
        }
        let area: u64 = gm.rle.iter().skip(1).step_by(2).map(|&r| r as u64).sum();
        if !keeps_area(area as usize, dims, cfg.min_mask_frac) {
            n_filtered += 1;
            continue;
        }
        pairs.push(Pair {
            key: show(c, s, p),
            class: &gm.class,
            condition: c.clone(),
            dims,
            spacing: gs.pixel_spacing,
            unit: &gs.hdd_unit,
            gt: &gm.rle,
            pred: &pm.rle,
        });
    }
    let scores: Vec<PairScore> = pairs.par_iter().map(|p| score(p, cfg)).collect::<Result<_, _>>()?;

    let mut by_cond: BTreeMap<&str, (Acc, BTreeMap<&str, Acc>)> = BTreeMap::new();
    for (p, s) in pairs.iter().zip(&scores) {
        let (all, classes) = by_cond.entry(p.condition.as_str()).or_default();
        all.add(s, p.unit);
        classes.entry(p.class).or_default().add(s, p.unit);
    }
    let mut report = MetricsReport { n_pairs: pairs.len(), n_filtered, ..Default::default() };
    for (c, (all, classes)) in &by_cond {
        report.rows.push(all.row("mean", c));
        for (class, acc) in classes {
            report.rows.push(acc.row(class, c));
        }
    }
    if pairs.is_empty() {
        report
            .warnings
            .push(format!("all {n_filtered} masks fall below the minimum mask fraction {}", cfg.min_mask_frac));
    }
    Ok(report)
}

/// [`evaluate_archives`] over two archive directories.
pub fn evaluate_run(pred_dir: &Path, gt_dir: &Path, cfg: &EvalConfig) -> Result<MetricsReport, MetricsError> {
    evaluate_archives(&read_archive(pred_dir)?, &read_archive(gt_dir)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: usize, h: usize, x0: usize, x1: usize, y0: usize, y1: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y))
    }

    /// Three 10×10 samples; all masks kept with min_mask_frac 0.
    fn toy() -> (Vec<ArchiveSample>, Vec<ArchiveSample>) {
        let mut gt = Vec::new();
        let mut pred = Vec::new();
        // s0: liver exact
        let mut g = ArchiveSample::new("s0", (10, 10));
        let mut p = ArchiveSample::new("s0", (10, 10));
        g.push("p0", "liver", None, &rect(10, 10, 0, 4, 0, 4));
        p.push("p0", "liver", Some("text"), &rect(10, 10, 0, 4, 0, 4));
        gt.push(g);
        pred.push(p);
        // s1: liver shifted by 2 columns: inter 8, union 24, hdd 2
        let mut g = ArchiveSample::new("s1", (10, 10));
        let mut p = ArchiveSample::new("s1", (10, 10));
        g.push("p0", "liver", None, &rect(10, 10, 0, 4, 0, 4));
        p.push("p0", "liver", Some("text"), &rect(10, 10, 2, 6, 0, 4));
        // s1: femur, empty prediction
        g.push("p1", "femur", None, &rect(10, 10, 5, 7, 5, 10));
        p.push("p1", "femur", Some("text"), &BinaryMask::new(10, 10));
        gt.push(g);
        pred.push(p);
        // s2: femur, half overlap (1 px wide columns): inter 5, union 10, hdd 1
        let mut g = ArchiveSample::new("s2", (10, 10));
        let mut p = ArchiveSample::new("s2", (10, 10));
        g.push("p0", "femur", None, &rect(10, 10, 5, 7, 5, 10));
        p.push("p0", "femur", Some("text"), &rect(10, 10, 6, 8, 5, 10));
        gt.push(g);
        pred.push(p);
        (pred, gt)
    }

    #[test]
    fn toy_archive_matches_hand_values() {
        let (pred, gt) = toy();
        let r = evaluate_archives(&pred, &gt, &EvalConfig { min_mask_frac: 0.0, ..Default::default() }).unwrap();
        // liver: iou (1 + 1/3)/2, dice (1 + 1/2)/2, hdd (0 + 2)/2
        // femur: iou (0 + 1/3)/2, dice (0 + 1/2)/2, hdd 1 (empty pred left out)
        // mean: iou (1 + 1/3 + 0 + 1/3)/4 = 5/12, dice (1 + .5 + 0 + .5)/4, hdd (0 + 2 + 1)/3
        let expected = "class,prompt_condition,n,iou_mean,dice_mean,hdd_mean,hdd_unit\n\
                        mean,text,4,0.416667,0.500000,1.000000,px\n\
                        femur,text,2,0.166667,0.250000,1.000000,px\n\
                        liver,text,2,0.666667,0.750000,1.000000,px\n";
        assert_eq!(r.to_csv(), expected);
        assert_eq!(r.rows[1].n_empty_pred, 1);
    }

    #[test]
    fn identical_archives_are_perfect() {
        let (_, gt) = toy();
        let pred: Vec<ArchiveSample> = gt
            .iter()
            .map(|s| {
                let mut s = s.clone();
                for m in &mut s.masks {
                    m.condition = Some("8_points".into());
                }
                s
            })
            .collect();
        let r = evaluate_archives(&pred, &gt, &EvalConfig::default()).unwrap();
        for row in &r.rows {
            assert_eq!((row.iou_mean, row.dice_mean, row.hdd_mean), (1.0, 1.0, Some(0.0)));
        }
    }

    #[test]
    fn alignment_errors() {
        let (mut pred, gt) = toy();
        pred[1].masks.pop();
        match evaluate_archives(&pred, &gt, &EvalConfig::default()) {
            Err(MetricsError::Alignment { missing, .. }) => assert_eq!(missing, vec!["s1/p1 [text]"]),
            other => panic!("{other:?}"),
        }
        let mut stray = ArchiveSample::new("zz", (10, 10));
        stray.push("p0", "liver", None, &BinaryMask::new(10, 10));
        assert!(matches!(
            evaluate_archives(&[stray], &gt, &EvalConfig::default()),
            Err(MetricsError::EmptyIntersection)
        ));
    }

    #[test]
    fn full_filter_gives_empty_report() {
        let (pred, gt) = toy();
        let r = evaluate_archives(&pred, &gt, &EvalConfig { min_mask_frac: 1.0, ..Default::default() }).unwrap();
        assert!(r.rows.is_empty() && r.n_filtered == 4 && r.warnings.len() == 1);
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (pred, gt) = toy();
        write_archive(&dir.path().join("pred"), &pred).unwrap();
        write_archive(&dir.path().join("gt"), &gt).unwrap();
        assert_eq!(read_archive(&dir.path().join("gt")).unwrap(), gt);
        let r = evaluate_run(&dir.path().join("pred"), &dir.path().join("gt"), &EvalConfig::default()).unwrap();
        write_report(&r, &dir.path().join("out")).unwrap();
        assert!(dir.path().join("out/metrics.csv").exists());
    }
}
