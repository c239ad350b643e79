use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;

/// One input CT: an id unique within the run and the path of its `.volhdr`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CtInput {
    pub id: String,
    pub path: PathBuf,
}

fn d_true() -> bool {
    true
}
fn d_random() -> usize {
    20
}
fn d_tools() -> [usize; 2] {
    [0, 3]
}
fn d_res() -> usize {
    512
}
fn d_side() -> f64 {
    384.0
}
fn d_step() -> f64 {
    crate::drr::DEFAULT_STEP_MM
}
fn d_out() -> PathBuf {
    PathBuf::from("out")
}
fn d_workers() -> usize {
    1
}
fn d_neg() -> f64 {
    crate::prompts::DEFAULT_NEGATIVE_RATE
}
fn d_min_area() -> usize {
    1
}
fn d_train() -> f64 {
    0.9
}
fn d_variants() -> usize {
    crate::prompts::MAX_VARIANTS
}

/// Generation settings. Relative paths are resolved against the directory
/// of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub cts: Vec<CtInput>,
    /// Object catalog; the shipped one when absent.
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    /// Standard-view catalog; the shipped one when absent.
    #[serde(default)]
    pub views: Option<PathBuf>,
    /// Augmentation plan; the shipped one when absent.
    #[serde(default)]
    pub plan: Option<PathBuf>,
    /// Prompt template bank; the shipped one when absent.
    #[serde(default)]
    pub templates: Option<PathBuf>,
    /// One image per applicable standard view.
    #[serde(default = "d_true")]
    pub standard_views: bool,
    #[serde(default = "d_random")]
    pub random_views_per_ct: usize,
    /// Inclusive range of tools per image.
    #[serde(default = "d_tools")]
    pub tool_count: [usize; 2],
    #[serde(default = "d_res")]
    pub resolution: usize,
    #[serde(default = "d_side")]
    pub detector_side_mm: f64,
    #[serde(default = "d_step")]
    pub step_mm: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_out")]
    pub output: PathBuf,
    #[serde(default = "d_workers")]
    pub workers: usize,
    #[serde(default)]
    pub offline: bool,
    #[serde(default = "d_neg")]
    pub negative_rate: f64,
    /// Masks smaller than this many pixels are not recorded.
    #[serde(default = "d_min_area")]
    pub min_mask_px: usize,
    #[serde(default = "d_variants")]
    pub max_variants: usize,
    /// Fraction of CTs in the training split.
    #[serde(default = "d_train")]
    pub train_frac: f64,
}

impl GenerationConfig {
    pub fn new(cts: Vec<CtInput>, output: PathBuf) -> Self {
        let mut cfg: Self = serde_json::from_value(serde_json::json!({ "cts": [] })).expect("defaults");
        cfg.cts = cts;
        cfg.output = output;
        cfg
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Make every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for ct in &mut self.cts {
            fix(&mut ct.path);
        }
        for p in [&mut self.catalog, &mut self.views, &mut self.plan, &mut self.templates].into_iter().flatten() {
            fix(p);
        }
        fix(&mut self.output);
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.resolution < 64 {
            return bad(format!("resolution must be >= 64, got {}", self.resolution));
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        if self.tool_count[0] > self.tool_count[1] {
            return bad(format!("tool_count range {:?} is empty", self.tool_count));
        }
        if !(self.detector_side_mm > 0.0) || !(self.step_mm > 0.0) {
            return bad("detector_side_mm and step_mm must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.negative_rate) {
            return bad(format!("negative_rate must be in [0, 1], got {}", self.negative_rate));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return bad(format!("train_frac must be in (0, 1), got {}", self.train_frac));
        }
        if self.max_variants == 0 || self.max_variants > crate::prompts::MAX_VARIANTS {
            return bad(format!("max_variants must be in 1..={}", crate::prompts::MAX_VARIANTS));
        }
        let mut ids: Vec<&str> = self.cts.iter().map(|c| c.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("duplicate CT id '{}'", w[0]));
        }
        if let Some(c) = self.cts.iter().find(|c| c.id.is_empty() || c.id.contains(['/', '\\'])) {
            return bad(format!("invalid CT id '{}'", c.id));
        }
        Ok(())
    }
}
