//! Generation of one sample and its manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra::Isometry3;
use serde::{Deserialize, Serialize};

use super::rle::{rle_decode, rle_encode};
use super::scene::{place_tools, SampleSpec, SceneAssets, ViewKind};
use super::{GenerationConfig, PipelineError};
use crate::anatomy::ObjectKind;
use crate::augment::{apply_plan_traced, to_three_channel, AppliedOp, AugmentationPlan};
use crate::camera::{sample_random_view, sample_standard_view, CArmCamera, Detector, RandomViewBounds};
use crate::drr::{negative_log_normalize, render, Radiograph};
use crate::masks::{project_all, MaskEntry};
use crate::prompts::{group_mask, prompt_records, sample_negative_prompt, LlmClient, PromptRecord, PromptTarget};
use crate::raster::{encode_rgb8, ScalarImage};
use crate::rng::{derive_seed, rng_from_seed};

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub kind: ObjectKind,
    pub id: u32,
    pub name: String,
    pub area: usize,
    /// Column-major runs, zeros first.
    pub rle: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRecord {
    pub tool_id: u32,
    pub name: String,
    pub pose: Isometry3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub plan: String,
    pub seeds: Vec<u64>,
    pub before_channel_split: bool,
    pub applied: Vec<Vec<AppliedOp>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub schema: u32,
    pub id: String,
    pub ct_id: String,
    pub view: ViewKind,
    pub camera: CArmCamera,
    /// Negative-log normalised radiograph, 16-bit grayscale.
    pub image: String,
    /// Augmented three-channel image, 8-bit RGB.
    pub augmented_image: String,
    pub image_dims: [usize; 2],
    pub masks: Vec<MaskRecord>,
    pub prompts: Vec<PromptRecord>,
    pub tools: Vec<ToolRecord>,
    pub augmentation: AugmentationRecord,
    pub seed: u64,
}

impl SampleManifest {
    pub fn mask_for(&self, target: &PromptTarget) -> Option<&MaskRecord> {
        self.masks.iter().find(|m| match target {
            PromptTarget::Organ { id } => m.kind == ObjectKind::Organ && m.id == *id,
            PromptTarget::Tool { id } => m.kind == ObjectKind::Tool && m.id == *id,
            PromptTarget::Group { name } => m.kind == ObjectKind::Group && &m.name == name,
            PromptTarget::None => false,
        })
    }

    /// Schema version, unique masks, RLE sizes, prompt targets and referenced
    /// files.
    pub fn validate(&self, root: &Path) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Manifest { id: self.id.clone(), reason: m });
        if self.schema != MANIFEST_SCHEMA {
            return bad(format!("schema {} is not {MANIFEST_SCHEMA}", self.schema));
        }
        let dims = (self.image_dims[0], self.image_dims[1]);
        if dims != self.camera.image_dims {
            return bad("image dims differ from camera".into());
        }
        for (i, m) in self.masks.iter().enumerate() {
            let key = |r: &MaskRecord| (r.kind, if r.kind == ObjectKind::Group { 0 } else { r.id }, r.name.clone());
            if self.masks[..i].iter().any(|o| key(o) == key(m)) {
                return bad(format!("mask '{}' appears twice", m.name));
            }
            match rle_decode(&m.rle, dims) {
                Ok(mask) if mask.area() == m.area => {}
                Ok(_) => return bad(format!("mask '{}' area does not match its runs", m.name)),
                Err(e) => return bad(format!("mask '{}': {e}", m.name)),
            }
        }
        for p in &self.prompts {
            if !p.is_valid() {
                return bad(format!("invalid prompt record '{}'", p.text));
            }
            if p.target != PromptTarget::None && self.mask_for(&p.target).is_none() {
                return bad(format!("prompt '{}' has no mask entry", p.text));
            }
        }
        for f in [&self.image, &self.augmented_image] {
            if !root.join(f).is_file() {
                return bad(format!("missing file {f}"));
            }
        }
        Ok(())
    }
}

/// Where generated files go.
pub fn image_path(root: &Path, id: &str) -> PathBuf {
    root.join("images").join(format!("{id}.png"))
}

pub fn augmented_path(root: &Path, id: &str) -> PathBuf {
    root.join("images").join(format!("{id}.aug.png"))
}

pub fn manifest_path(root: &Path, id: &str) -> PathBuf {
    root.join("manifests").join(format!("{id}.json"))
}

/// Write via a temporary file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let io = |e| PipelineError::Io { path: path.display().to_string(), source: e };
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

/// Called between the image writes and the manifest write with the sample
/// id; returning true simulates a crash at that point.
pub type FaultHook = dyn Fn(&str) -> bool + Send + Sync;

fn to_rgb8(channels: &[ScalarImage; 3]) -> Vec<u8> {
    let n = channels[0].len();
    let mut out = Vec::with_capacity(3 * n);
    for i in 0..n {
        for c in channels {
            out.push((c.data[i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// Rendered content of a sample before anything is written.
pub struct SampleContent {
    pub manifest: SampleManifest,
    pub image_png: Vec<u8>,
    pub augmented_png: Vec<u8>,
}

/// Everything about one sample: camera, tools, radiograph, masks, prompts
/// and augmentation. Pure function of the spec and the assets (plus
/// endpoint variants when the client is active).
pub fn build_sample(
    spec: &SampleSpec,
    assets: &SceneAssets,
    cfg: &GenerationConfig,
    llm: &LlmClient,
) -> Result<SampleContent, PipelineError> {
    let scene =
        assets.scenes.get(&spec.ct_id).ok_or_else(|| PipelineError::Config(format!("unknown CT '{}'", spec.ct_id)))?;
    let detector = Detector::square(cfg.resolution, cfg.detector_side_mm);
    let mut cam_rng = rng_from_seed(derive_seed(spec.seed, "camera", 0));
    let (cam, sad) = match &spec.view {
        ViewKind::Standard { name } => {
            let view = assets.view(name).ok_or_else(|| PipelineError::Config(format!("unknown view '{name}'")))?;
            (sample_standard_view(view, &scene.organs, &assets.catalog, &mut cam_rng, &detector)?, view.sad_mm)
        }
        ViewKind::Random => {
            if scene.organs.is_empty() {
                return Err(PipelineError::Config(format!("CT '{}' has no organ surfaces", spec.ct_id)));
            }
            let bounds = RandomViewBounds::default();
            let focus = &scene.organs[rand::Rng::random_range(&mut cam_rng, 0..scene.organs.len())];
            (sample_random_view(&mut cam_rng, focus, &bounds, &detector)?, bounds.sad_mm)
        }
    };

    let mut tool_rng = rng_from_seed(derive_seed(spec.seed, "tools", 0));
    let placed = place_tools(&mut tool_rng, &assets.tools, &cam, sad, cfg.tool_count);
    let instances: Vec<_> = placed.iter().map(|p| p.instance.clone()).collect();
    let transmitted = render(&scene.grid, &instances, &cam, cfg.step_mm)?;
    let Radiograph { pixels, .. } = negative_log_normalize(&transmitted);

    let meshes: Vec<_> = scene.organs.iter().cloned().chain(instances.into_iter().map(|t| t.mesh)).collect();
    let mut masks = project_all(&meshes, &cam, cfg.min_mask_px)?;
    let dims = masks.image_dims;
    let mut groups = Vec::new();
    for (gi, g) in assets.catalog.groups.iter().enumerate() {
        let m = group_mask(&masks, &g.name, &assets.catalog)?;
        if m.area() >= cfg.min_mask_px && !m.is_empty() {
            groups.push(MaskEntry { id: gi as u32, name: g.name.clone(), kind: ObjectKind::Group, mask: m });
        }
    }
    masks.entries.extend(groups);

    // Prompts: records for every mask, and a negative trial per mask.
    let mut prompt_rng = rng_from_seed(derive_seed(spec.seed, "prompts", 0));
    let present: BTreeSet<_> =
        masks.entries.iter().filter(|e| e.kind != ObjectKind::Group).map(|e| (e.kind, e.id)).collect();
    let mut prompts = Vec::new();
    for e in &masks.entries {
        let (target, canonical) = match e.kind {
            ObjectKind::Organ => (PromptTarget::Organ { id: e.id }, assets.catalog.organs[&e.id].description.clone()),
            ObjectKind::Tool => (PromptTarget::Tool { id: e.id }, assets.catalog.tools[&e.id].description.clone()),
            ObjectKind::Group => (PromptTarget::Group { name: e.name.clone() }, e.name.clone()),
        };
        let extra = if llm.is_active() { llm.fetch_llm_variants(&canonical, cfg.max_variants) } else { Vec::new() };
        prompts.extend(prompt_records(target, &canonical, &assets.bank, &mut prompt_rng, cfg.max_variants, &extra));
        if let Some(neg) = sample_negative_prompt(&present, &assets.catalog, &mut prompt_rng, cfg.negative_rate) {
            prompts.push(neg);
        }
    }

    let plan_seed = |c: u64| derive_seed(spec.seed, "augment", c);
    let (channels, seeds, applied) = if assets.plan.before_channel_split {
        let plan = AugmentationPlan { seed: plan_seed(0), ..assets.plan.clone() };
        let (aug, ops) = apply_plan_traced(&pixels, &plan)?;
        (to_three_channel(&aug), vec![plan.seed], vec![ops])
    } else {
        let split = to_three_channel(&pixels);
        let mut seeds = Vec::new();
        let mut applied = Vec::new();
        let mut out = Vec::new();
        for (c, ch) in split.iter().enumerate() {
            let plan = AugmentationPlan { seed: plan_seed(c as u64), ..assets.plan.clone() };
            let (aug, ops) = apply_plan_traced(ch, &plan)?;
            seeds.push(plan.seed);
            applied.push(ops);
            out.push(aug);
        }
        let [a, b, c]: [ScalarImage; 3] = out.try_into().expect("three channels");
        ([a, b, c], seeds, applied)
    };

    let manifest = SampleManifest {
        schema: MANIFEST_SCHEMA,
        id: spec.id.clone(),
        ct_id: spec.ct_id.clone(),
        view: spec.view.clone(),
        camera: cam,
        image: format!("images/{}.png", spec.id),
        augmented_image: format!("images/{}.aug.png", spec.id),
        image_dims: [dims.0, dims.1],
        masks: masks
            .entries
            .iter()
            .map(|e| MaskRecord {
                kind: e.kind,
                id: e.id,
                name: e.name.clone(),
                area: e.mask.area(),
                rle: rle_encode(&e.mask),
            })
            .collect(),
        prompts,
        tools: placed
            .iter()
            .map(|p| ToolRecord {
                tool_id: p.tool_id,
                name: assets.catalog.tools[&p.tool_id].name.clone(),
                pose: p.pose,
            })
            .collect(),
        augmentation: AugmentationRecord {
            plan: assets.plan.name.clone(),
            seeds,
            before_channel_split: assets.plan.before_channel_split,
            applied,
        },
        seed: spec.seed,
    };
    Ok(SampleContent {
        image_png: pixels.encode_png16(),
        augmented_png: encode_rgb8(dims.0, dims.1, &to_rgb8(&channels)),
        manifest,
    })
}

/// Builds the sample and writes image, augmented image and manifest, each
/// atomically; the manifest goes last and marks the sample complete.
pub fn generate_sample(
    spec: &SampleSpec,
    assets: &SceneAssets,
    cfg: &GenerationConfig,
    llm: &LlmClient,
    fault: Option<&FaultHook>,
) -> Result<SampleManifest, PipelineError> {
    let content = build_sample(spec, assets, cfg, llm)?;
    let root = &cfg.output;
    atomic_write(&image_path(root, &spec.id), &content.image_png)?;
    atomic_write(&augmented_path(root, &spec.id), &content.augmented_png)?;
    if fault.is_some_and(|f| f(&spec.id)) {
        return Err(PipelineError::Injected(spec.id.clone()));
    }
    let mut text = serde_json::to_string_pretty(&content.manifest).expect("manifest serializes");
    text.push('\n');
    atomic_write(&manifest_path(root, &spec.id), text.as_bytes())?;
    Ok(content.manifest)
}

/// Manifest of a completed sample, if present and valid.
pub fn load_manifest(root: &Path, id: &str) -> Result<SampleManifest, PipelineError> {
    let path = manifest_path(root, id);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| PipelineError::Io { path: path.display().to_string(), source: e })?;
    let m: SampleManifest = serde_json::from_str(&text)
        .map_err(|e| PipelineError::Manifest { id: id.to_string(), reason: e.to_string() })?;
    if m.id != id {
        return Err(PipelineError::Manifest {
            id: id.to_string(),
            reason: format!("manifest names sample '{}'", m.id),
        });
    }
    m.validate(root)?;
    Ok(m)
}
