//! Whole-run orchestration: worker pool, resume, index, splits, report.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sample::{atomic_write, generate_sample, load_manifest, FaultHook, SampleManifest};
use super::scene::{plan_samples, CtInventory, SampleSpec, SceneAssets};
use super::{GenerationConfig, PipelineError};
use crate::anatomy::ObjectKind;
use crate::prompts::{LlmClient, LlmConfig, PromptKind};
use crate::rng::rng_from_seed;

/// Extra knobs that are not part of the dataset definition.
#[derive(Default, Clone)]
pub struct RunOptions {
    pub fault: Option<Arc<FaultHook>>,
    /// Replaces the client built from the environment.
    pub llm: Option<Arc<LlmClient>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub ct_id: String,
    pub view_kind: String,
    pub view: String,
    pub manifest: String,
    pub n_masks: usize,
    pub n_prompts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub schema: u32,
    pub samples: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train_frac: f64,
    pub seed: u64,
    pub train_cts: Vec<String>,
    pub val_cts: Vec<String>,
    pub train: Vec<String>,
    pub val: Vec<String>,
}

/// Throughput of one view kind over the samples generated in this run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// `"6.5 ± 15.7 images per second"`.
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub planned: usize,
    pub generated: usize,
    pub resumed: usize,
    pub failed: usize,
    pub failures: Vec<RunFailure>,
    pub full_resume: bool,
    pub workers: usize,
    pub wall_seconds: f64,
    pub per_view_kind: BTreeMap<String, usize>,
    pub throughput: BTreeMap<String, Throughput>,
    pub llm_calls: usize,
}

/// Mean and sample standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

pub fn throughput_summary(mean: f64, std: f64) -> String {
    format!("{mean:.1} ± {std:.1} images per second")
}

/// Splits at CT granularity: round((1 − train_frac) · #CTs) CTs (at least
/// one, at most all but one) go to validation.
pub fn split_dataset(
    samples: &[(String, String)],
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>), PipelineError> {
    Ok(split_with_cts(samples, train_frac, seed)?.0)
}

type SplitResult = ((Vec<String>, Vec<String>), (Vec<String>, Vec<String>));

fn split_with_cts(samples: &[(String, String)], train_frac: f64, seed: u64) -> Result<SplitResult, PipelineError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(PipelineError::Config(format!("train fraction must be in (0, 1), got {train_frac}")));
    }
    let cts: BTreeSet<&str> = samples.iter().map(|(_, c)| c.as_str()).collect();
    if cts.len() < 2 {
        return Err(PipelineError::Config(format!("need at least 2 CTs to split, got {}", cts.len())));
    }
    let mut order: Vec<&str> = cts.into_iter().collect();
    order.shuffle(&mut rng_from_seed(seed));
    let n_val = (((1.0 - train_frac) * order.len() as f64).round() as usize).clamp(1, order.len() - 1);
    let val_cts: BTreeSet<&str> = order[..n_val].iter().copied().collect();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (id, ct) in samples {
        if val_cts.contains(ct.as_str()) { &mut val } else { &mut train }.push(id.clone());
    }
    train.sort();
    val.sort();
    let mut train_cts: Vec<String> =
        order[n_val..].iter().map(|s| s.to_string()).collect::<BTreeSet<_>>().into_iter().collect();
    train_cts.sort();
    let val_cts: Vec<String> = val_cts.into_iter().map(str::to_string).collect();
    Ok(((train, val), (train_cts, val_cts)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

fn view_name(m: &SampleManifest) -> String {
    match &m.view {
        super::ViewKind::Standard { name } => name.clone(),
        super::ViewKind::Random => "random".into(),
    }
}

/// Plans all samples, generates the missing ones on a pool of
/// `cfg.workers` threads, then writes `index.json`, `splits.json` and
/// `report.json`. Output files other than the report depend only on the
/// configuration and the input files.
pub fn run_generation(cfg: &GenerationConfig, opts: &RunOptions) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let start = Instant::now();
    let root = &cfg.output;
    for d in ["images", "manifests"] {
        std::fs::create_dir_all(root.join(d))
            .map_err(|e| PipelineError::Io { path: root.join(d).display().to_string(), source: e })?;
    }
    let assets = SceneAssets::load(cfg)?;
    let inventory: Vec<CtInventory> = cfg
        .cts
        .iter()
        .map(|c| CtInventory {
            ct_id: c.id.clone(),
            views: assets.scenes[&c.id].applicable_views(&assets.views, &assets.catalog),
        })
        .collect();
    let specs = plan_samples(cfg, &inventory)?;
    let llm = match &opts.llm {
        Some(c) => c.clone(),
        None => Arc::new(LlmClient::from_config(&LlmConfig::from_env(), cfg.offline)),
    };

    let todo: Vec<&SampleSpec> = specs.iter().filter(|s| load_manifest(root, &s.id).is_err()).collect();
    let resumed = specs.len() - todo.len();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("cannot start worker pool: {e}")))?;
    let fault = opts.fault.as_deref();
    let results: Vec<(&SampleSpec, Result<SampleManifest, PipelineError>, f64)> = pool.install(|| {
        todo.par_iter()
            .map(|s| {
                let t = Instant::now();
                let r = generate_sample(s, &assets, cfg, &llm, fault);
                (*s, r, t.elapsed().as_secs_f64())
            })
            .collect()
    });

    let mut failures = Vec::new();
    let mut rates: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (s, r, secs) in &results {
        match r {
            Ok(_) => rates.entry(s.view.label().to_string()).or_default().push(1.0 / secs.max(1e-9)),
            Err(e) => {
                log::error!("sample {} failed: {e}", s.id);
                failures.push(RunFailure { id: s.id.clone(), error: e.to_string() });
            }
        }
    }
    if !specs.is_empty() && failures.len() == todo.len() && resumed == 0 {
        return Err(PipelineError::AllFailed(failures.len()));
    }

    // Index and splits cover every completed sample.
    let failed: BTreeSet<&str> = failures.iter().map(|f| f.id.as_str()).collect();
    let mut entries = Vec::new();
    for s in specs.iter().filter(|s| !failed.contains(s.id.as_str())) {
        let m = load_manifest(root, &s.id)?;
        entries.push(IndexEntry {
            id: m.id.clone(),
            ct_id: m.ct_id.clone(),
            view_kind: m.view.label().to_string(),
            view: view_name(&m),
            manifest: format!("manifests/{}.json", m.id),
            n_masks: m.masks.len(),
            n_prompts: m.prompts.len(),
        });
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    write_json(&root.join("index.json"), &DatasetIndex { schema: 1, samples: entries.clone() })?;
    let pairs: Vec<(String, String)> = entries.iter().map(|e| (e.id.clone(), e.ct_id.clone())).collect();
    let n_cts = pairs.iter().map(|p| &p.1).collect::<BTreeSet<_>>().len();
    if n_cts >= 2 {
        let ((train, val), (train_cts, val_cts)) = split_with_cts(&pairs, cfg.train_frac, cfg.seed)?;
        write_json(
            &root.join("splits.json"),
            &Splits { train_frac: cfg.train_frac, seed: cfg.seed, train_cts, val_cts, train, val },
        )?;
    } else {
        log::warn!("fewer than two CTs; writing all samples to the training split");
        let train_cts: Vec<String> = pairs.iter().map(|p| p.1.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let train = pairs.iter().map(|p| p.0.clone()).collect();
        write_json(
            &root.join("splits.json"),
            &Splits { train_frac: cfg.train_frac, seed: cfg.seed, train_cts, val_cts: vec![], train, val: vec![] },
        )?;
    }

    let mut per_view_kind = BTreeMap::new();
    for e in &entries {
        *per_view_kind.entry(e.view_kind.clone()).or_insert(0) += 1;
    }
    let throughput = rates
        .into_iter()
        .map(|(k, xs)| {
            let (mean, std) = mean_std(&xs);
            (k, Throughput { n: xs.len(), mean, std, summary: throughput_summary(mean, std) })
        })
        .collect();
    let report = RunReport {
        planned: specs.len(),
        generated: todo.len() - failures.len(),
        resumed,
        failed: failures.len(),
        failures,
        full_resume: todo.is_empty(),
        workers: cfg.workers,
        wall_seconds: start.elapsed().as_secs_f64(),
        per_view_kind,
        throughput,
        llm_calls: llm.calls(),
    };
    write_json(&root.join("report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub samples: usize,
    pub per_view_kind: BTreeMap<String, usize>,
    pub per_view: BTreeMap<String, usize>,
    pub masks_per_image: f64,
    pub prompts_per_mask: f64,
    pub negative_prompts: usize,
    pub prompt_kinds: BTreeMap<String, usize>,
    pub tool_frequency: BTreeMap<String, usize>,
    pub split_sizes: BTreeMap<String, usize>,
}

/// Statistics over `index.json` and the manifests it lists. An empty or
/// absent dataset gives zeros; an index that disagrees with the manifests
/// is an error naming the samples.
pub fn dataset_stats(root: &Path) -> Result<DatasetStats, PipelineError> {
    let mut stats = DatasetStats {
        samples: 0,
        per_view_kind: BTreeMap::new(),
        per_view: BTreeMap::new(),
        masks_per_image: 0.0,
        prompts_per_mask: 0.0,
        negative_prompts: 0,
        prompt_kinds: BTreeMap::new(),
        tool_frequency: BTreeMap::new(),
        split_sizes: BTreeMap::new(),
    };
    let index_path = root.join("index.json");
    if !index_path.exists() {
        return Ok(stats);
    }
    let text = std::fs::read_to_string(&index_path)
        .map_err(|e| PipelineError::Io { path: index_path.display().to_string(), source: e })?;
    let index: DatasetIndex =
        serde_json::from_str(&text).map_err(|e| PipelineError::Index(format!("{}: {e}", index_path.display())))?;
    let mut bad = Vec::new();
    let (mut masks, mut positive) = (0usize, 0usize);
    for e in &index.samples {
        let m = match load_manifest(root, &e.id) {
            Ok(m) if m.ct_id == e.ct_id && m.masks.len() == e.n_masks && m.prompts.len() == e.n_prompts => m,
            _ => {
                bad.push(e.id.clone());
                continue;
            }
        };
        stats.samples += 1;
        *stats.per_view_kind.entry(e.view_kind.clone()).or_insert(0) += 1;
        *stats.per_view.entry(e.view.clone()).or_insert(0) += 1;
        masks += m.masks.len();
        for p in &m.prompts {
            let k = match p.kind {
                PromptKind::Comprehensive => "comprehensive",
                PromptKind::Noncomprehensive => "noncomprehensive",
                PromptKind::Negative => "negative",
            };
            *stats.prompt_kinds.entry(k.into()).or_insert(0) += 1;
            if p.kind == PromptKind::Negative {
                stats.negative_prompts += 1;
            } else {
                positive += 1;
            }
        }
        for t in &m.tools {
            *stats.tool_frequency.entry(t.name.clone()).or_insert(0) += 1;
        }
        debug_assert!(m.masks.iter().all(|r| r.kind != ObjectKind::Group || !r.name.is_empty()));
    }
    if !bad.is_empty() {
        return Err(PipelineError::Index(format!("index disagrees with manifests for: {}", bad.join(", "))));
    }
    if stats.samples > 0 {
        stats.masks_per_image = masks as f64 / stats.samples as f64;
    }
    if masks > 0 {
        stats.prompts_per_mask = positive as f64 / masks as f64;
    }
    let splits = root.join("splits.json");
    if let Ok(text) = std::fs::read_to_string(&splits) {
        let s: Splits =
            serde_json::from_str(&text).map_err(|e| PipelineError::Index(format!("{}: {e}", splits.display())))?;
        stats.split_sizes.insert("train".into(), s.train.len());
        stats.split_sizes.insert("val".into(), s.val.len());
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(n_cts: usize) -> Vec<(String, String)> {
        (0..n_cts).flat_map(|c| (0..3).map(move |i| (format!("ct{c}_{i}"), format!("ct{c}")))).collect()
    }

    #[test]
    fn ten_ct_split() {
        let s = samples(10);
        let ((train, val), (tc, vc)) = split_with_cts(&s, 0.9, 3).unwrap();
        assert_eq!((tc.len(), vc.len()), (9, 1));
        assert_eq!((train.len(), val.len()), (27, 3));
        assert!(tc.iter().all(|c| !vc.contains(c)));
        assert_eq!(split_dataset(&s, 0.9, 3).unwrap(), (train, val));
        assert!(split_dataset(&samples(1), 0.9, 3).is_err());
        assert!(split_dataset(&s, 1.0, 3).is_err());
    }

    #[test]
    fn throughput_format() {
        assert_eq!(throughput_summary(6.5, 15.7), "6.5 ± 15.7 images per second");
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 2f64.sqrt()));
    }
}
