//! Patient models: CT volumes with co-registered label volumes, watertight
//! surface meshes for organs and tools, and the object catalog describing
//! every class that can appear in a sample.

mod catalog;
mod mesh;
mod mesh_io;
pub mod phantom;
pub mod primitives;
mod surface;
mod volume;

pub use catalog::{GroupEntry, ObjectCatalog, OrganEntry, ToolEntry};
pub use mesh::{ObjectKind, SurfaceMesh, DEDUP_TOLERANCE_MM};
pub use mesh_io::{load_mesh, write_obj, write_stl};
pub use surface::voxelize_labels_to_meshes;
pub use volume::{load_volume, write_volume, CtVolume, VolumeHeader, HU_MAX, HU_MIN};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum AnatomyError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header {path}: {message}")]
    Header { path: PathBuf, message: String },
    #[error("{path}: expected {expected} bytes of voxel data, found {found}")]
    SizeMismatch { path: PathBuf, expected: usize, found: usize },
    #[error("non-positive spacing {0:?}")]
    NonPositiveSpacing([f64; 3]),
    #[error("non-positive dimensions {0:?}")]
    NonPositiveDims([usize; 3]),
    #[error("unknown element type '{0}' (supported: int16)")]
    UnknownDtype(String),
    #[error("label volume references class {0}, which is not in the organ table")]
    UnknownLabel(u32),
    #[error("malformed mesh file {path}: {message}")]
    MalformedMesh { path: PathBuf, message: String },
    #[error("mesh '{0}' has no triangles")]
    EmptyMesh(String),
    #[error(
        "mesh '{name}' is not watertight: {boundary} boundary edges, {overshared} edges shared by more than two faces"
    )]
    NotWatertight { name: String, boundary: usize, overshared: usize },
    #[error("mesh '{0}' is not orientable")]
    NonOrientable(String),
    #[error("class {0} does not occur in the label volume")]
    ClassAbsent(u32),
    #[error("class {class} covers {voxels} voxels; at least 8 are needed to build a surface")]
    RegionTooSmall { class: u32, voxels: usize },
    #[error("volume has no label volume")]
    NoLabels,
    #[error("catalog error: {0}")]
    Catalog(String),
    #[error("bad primitive spec '{0}'")]
    Primitive(String),
}
