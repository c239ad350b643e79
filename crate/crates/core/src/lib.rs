//! Deterministic, parallel generation of synthetic X-ray images with
//! overlapping per-object masks and text prompts, plus the model-side math
//! needed to consume them: a VQ-bottleneck prompt encoder, segmentation
//! losses, prompt simulation and evaluation metrics.
//!
//! The crate is organised by stage:
//!
//! | module | role |
//! |--------|------|
//! | [`anatomy`] | CT volumes, surface meshes, object catalog, phantoms |
//! | [`camera`] | C-arm projection geometry and view sampling |
//! | [`drr`] | attenuation line integrals and radiograph rendering |
//! | [`masks`] | per-object silhouette masks |
//! | [`augment`] | domain randomization and K-means windowing |
//! | [`prompts`] | text prompt variants, negatives, point prompts |
//! | [`vq`] | MLP + vector-quantization prompt encoder |
//! | [`metrics`] | losses, IoU/Dice/Hausdorff, evaluation reports |
//! | [`pipeline`] | end-to-end sample generation and dataset layout |

pub mod anatomy;
pub mod augment;
pub mod camera;
pub mod drr;
pub mod geometry;
pub mod masks;
pub mod metrics;
pub mod pipeline;
pub mod preview;
pub mod prompts;
pub mod raster;
pub mod rng;
pub mod vq;

pub use nalgebra::{Point3, Vector3};

/// Top-level error type aggregating the per-module errors.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Anatomy(#[from] anatomy::AnatomyError),
    #[error(transparent)]
    Camera(#[from] camera::CameraError),
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Augment(#[from] augment::AugmentError),
    #[error(transparent)]
    Prompt(#[from] prompts::PromptError),
    #[error(transparent)]
    Vq(#[from] vq::VqError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
    #[error(transparent)]
    Raster(#[from] raster::RasterError),
    #[error(transparent)]
    Preview(#[from] preview::PreviewError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
