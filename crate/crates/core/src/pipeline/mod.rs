//! End-to-end dataset generation.
//!
//! Output layout under the configured root:
//!
//! ```text
//! images/<id>.png        16-bit grayscale radiograph
//! images/<id>.aug.png    augmented 8-bit RGB image
//! manifests/<id>.json    masks (RLE), prompts, camera, tools, augmentation
//! index.json             every completed sample, sorted by id
//! splits.json            train/val split at CT level
//! report.json            counts, failures and throughput of the last run
//! ```

mod config;
pub mod rle;
mod run;
mod sample;
mod scene;

use std::path::{Path, PathBuf};

pub use config::{CtInput, GenerationConfig};
pub use rle::{rle_decode, rle_encode, RleError};
pub use run::{
    dataset_stats, run_generation, split_dataset, throughput_summary, DatasetIndex, DatasetStats, IndexEntry,
    RunFailure, RunOptions, RunReport, Splits, Throughput,
};
pub use sample::{
    atomic_write, augmented_path, build_sample, generate_sample, image_path, load_manifest, manifest_path,
    AugmentationRecord, FaultHook, MaskRecord, SampleContent, SampleManifest, ToolRecord, MANIFEST_SCHEMA,
};
pub use scene::{
    place_tools, plan_samples, sample_id, CtInventory, CtScene, PlacedTool, SampleSpec, SceneAssets, ToolTemplate,
    ViewKind,
};

use crate::anatomy::{phantom, write_volume, AnatomyError};
use crate::augment::AugmentError;
use crate::camera::CameraError;
use crate::geometry::GeometryError;
use crate::prompts::PromptError;
use crate::raster::RasterError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("manifest {id}: {reason}")]
    Manifest { id: String, reason: String },
    #[error("index error: {0}")]
    Index(String),
    #[error("injected fault: {0}")]
    Injected(String),
    #[error("all {0} samples failed")]
    AllFailed(usize),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Anatomy(#[from] AnatomyError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Rle(#[from] RleError),
}

/// Writes two labelled torso phantoms under `dir` and a matching
/// `phantom.json` generation config producing `samples_per_ct` images per
/// CT (standard views first, the rest random). Returns the config path.
pub fn write_phantom_config(
    dir: &Path,
    output: &Path,
    resolution: usize,
    samples_per_ct: usize,
) -> Result<PathBuf, PipelineError> {
    let cts = [("phantom_a", 1.0), ("phantom_b", 0.92)];
    let mut inputs = Vec::new();
    for (id, scale) in cts {
        let vol = phantom::torso(scale, 4.0);
        let header = write_volume(&vol, &dir.join("volumes"), id)?;
        let rel = header.strip_prefix(dir).map(Path::to_path_buf).unwrap_or(header);
        inputs.push(CtInput { id: id.to_string(), path: rel });
    }
    let mut cfg = GenerationConfig::new(inputs, output.to_path_buf());
    cfg.resolution = resolution;
    cfg.step_mm = 2.0;
    cfg.workers = 1;
    cfg.offline = true;
    // Standard views come first in the plan; the remainder are random.
    let probe = {
        let mut c = cfg.clone();
        c.resolve_paths(dir);
        let assets = SceneAssets::load(&c)?;
        assets.scenes.values().map(|s| s.applicable_views(&assets.views, &assets.catalog).len()).min().unwrap_or(0)
    };
    cfg.random_views_per_ct = samples_per_ct.saturating_sub(probe);
    let path = dir.join("phantom.json");
    let mut text = serde_json::to_string_pretty(&cfg).expect("serializable");
    text.push('\n');
    atomic_write(&path, text.as_bytes())?;
    Ok(path)
}
