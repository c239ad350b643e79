use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{AnatomyError, ObjectCatalog};
use crate::geometry::Aabb;

/// Lower HU clamp applied at load time (12-bit CT convention).
pub const HU_MIN: i16 = -1024;
/// Upper HU clamp applied at load time.
pub const HU_MAX: i16 = 3071;

/// On-disk header (`<name>.volhdr`). Raw files are little-endian and
/// x-fastest; `labels` are `uint16`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: String,
    pub data: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
}

/// CT volume in Hounsfield units with an optional co-registered label
/// volume (class ids, 0 = background).
///
/// Voxel `(i, j, k)` is centred at `origin + (i·sx, j·sy, k·sz)` and
/// covers half a spacing on either side, so the volume occupies
/// `[origin − s/2, origin + (dims − 1/2)·s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    pub dims: [usize; 3],
    pub spacing: Vector3<f64>,
    pub origin: Point3<f64>,
    pub hu: Vec<i16>,
    pub labels: Option<Vec<u16>>,
}

impl CtVolume {
    /// Build a volume, clamping HU into `[HU_MIN, HU_MAX]`.
    pub fn new(
        dims: [usize; 3],
        spacing: Vector3<f64>,
        origin: Point3<f64>,
        hu: Vec<i16>,
        labels: Option<Vec<u16>>,
    ) -> Result<Self, AnatomyError> {
        if dims.contains(&0) {
            return Err(AnatomyError::NonPositiveDims(dims));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(AnatomyError::NonPositiveSpacing([spacing.x, spacing.y, spacing.z]));
        }
        let n = dims[0] * dims[1] * dims[2];
        assert_eq!(hu.len(), n, "HU buffer does not match dims");
        if let Some(l) = &labels {
            assert_eq!(l.len(), n, "label buffer does not match dims");
        }
        let hu = hu.into_iter().map(|v| v.clamp(HU_MIN, HU_MAX)).collect();
        Ok(Self { dims, spacing, origin, hu, labels })
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        self.origin + Vector3::new(i as f64 * self.spacing.x, j as f64 * self.spacing.y, k as f64 * self.spacing.z)
    }

    pub fn bounds(&self) -> Aabb {
        let half = self.spacing * 0.5;
        let far = Vector3::new(
            (self.dims[0] as f64 - 0.5) * self.spacing.x,
            (self.dims[1] as f64 - 0.5) * self.spacing.y,
            (self.dims[2] as f64 - 0.5) * self.spacing.z,
        );
        Aabb { min: self.origin - half, max: self.origin + far }
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.x * self.spacing.y * self.spacing.z
    }

    /// Distinct nonzero label ids, ascending.
    pub fn label_ids(&self) -> Vec<u32> {
        let Some(labels) = &self.labels else { return Vec::new() };
        let mut seen = vec![false; u16::MAX as usize + 1];
        for &l in labels {
            seen[l as usize] = true;
        }
        (1..seen.len()).filter(|&i| seen[i]).map(|i| i as u32).collect()
    }

    /// Every nonzero label must name an organ in the catalog.
    pub fn check_labels(&self, catalog: &ObjectCatalog) -> Result<(), AnatomyError> {
        for id in self.label_ids() {
            if !catalog.organs.contains_key(&id) {
                return Err(AnatomyError::UnknownLabel(id));
            }
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnatomyError + '_ {
    move |source| AnatomyError::Io { path: path.to_path_buf(), source }
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_le_u16s(path: &Path, n: usize) -> Result<Vec<u16>, AnatomyError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != 2 * n {
        return Err(AnatomyError::SizeMismatch { path: path.to_path_buf(), expected: 2 * n, found: bytes.len() });
    }
    Ok(bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
}

/// Load a volume from its `.volhdr` header and raw companions.
pub fn load_volume(path: &Path) -> Result<CtVolume, AnatomyError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let header: VolumeHeader = serde_json::from_str(&text)
        .map_err(|e| AnatomyError::Header { path: path.to_path_buf(), message: e.to_string() })?;
    if header.dtype != "int16" {
        return Err(AnatomyError::UnknownDtype(header.dtype));
    }
    if header.dims.contains(&0) {
        return Err(AnatomyError::NonPositiveDims(header.dims));
    }
    if header.spacing_mm.iter().any(|&s| !(s > 0.0)) {
        return Err(AnatomyError::NonPositiveSpacing(header.spacing_mm));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let n = header.dims.iter().product();
    let hu = read_le_u16s(&resolve(base, &header.data), n)?.into_iter().map(|v| v as i16).collect();
    let labels = match &header.labels {
        Some(rel) => Some(read_le_u16s(&resolve(base, rel), n)?),
        None => None,
    };
    CtVolume::new(header.dims, Vector3::from(header.spacing_mm), Point3::from(header.origin_mm), hu, labels)
}

/// Write `<dir>/<name>.volhdr`, `<name>.raw` and (with labels)
/// `<name>.lbl.raw`. Returns the header path.
pub fn write_volume(vol: &CtVolume, dir: &Path, name: &str) -> Result<PathBuf, AnatomyError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let data = format!("{name}.raw");
    let labels = vol.labels.as_ref().map(|_| format!("{name}.lbl.raw"));
    let header = VolumeHeader {
        dims: vol.dims,
        spacing_mm: [vol.spacing.x, vol.spacing.y, vol.spacing.z],
        origin_mm: [vol.origin.x, vol.origin.y, vol.origin.z],
        dtype: "int16".to_string(),
        data: data.clone(),
        labels: labels.clone(),
    };
    let raw: Vec<u8> = vol.hu.iter().flat_map(|v| v.to_le_bytes()).collect();
    let raw_path = dir.join(&data);
    fs::write(&raw_path, raw).map_err(io_err(&raw_path))?;
    if let (Some(l), Some(rel)) = (&vol.labels, &labels) {
        let bytes: Vec<u8> = l.iter().flat_map(|v| v.to_le_bytes()).collect();
        let p = dir.join(rel);
        fs::write(&p, bytes).map_err(io_err(&p))?;
    }
    let hdr_path = dir.join(format!("{name}.volhdr"));
    let mut text = serde_json::to_string_pretty(&header).expect("header serializes");
    text.push('\n');
    fs::write(&hdr_path, text).map_err(io_err(&hdr_path))?;
    Ok(hdr_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(hu: Vec<i16>) -> CtVolume {
        CtVolume::new([2, 2, 2], Vector3::new(1.0, 1.0, 1.0), Point3::origin(), hu, None).unwrap()
    }

    #[test]
    fn zero_cube_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = small(vec![0; 8]);
        let p = write_volume(&v, dir.path(), "zero").unwrap();
        let back = load_volume(&p).unwrap();
        assert_eq!(back.hu, vec![0; 8]);
        assert_eq!(back, v);
    }

    #[test]
    fn hu_clamped_on_load() {
        let v = small(vec![-3000, -1024, 0, 100, 3071, 4000, i16::MIN, i16::MAX]);
        assert_eq!(v.hu, vec![-1024, -1024, 0, 100, 3071, 3071, -1024, 3071]);
    }

    #[test]
    fn short_raw_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = r#"{"dims":[10,10,10],"spacing_mm":[1,1,1],"origin_mm":[0,0,0],"dtype":"int16","data":"v.raw"}"#;
        fs::write(dir.path().join("v.volhdr"), hdr).unwrap();
        fs::write(dir.path().join("v.raw"), vec![0u8; 999 * 2]).unwrap();
        let err = load_volume(&dir.path().join("v.volhdr")).unwrap_err();
        assert!(matches!(err, AnatomyError::SizeMismatch { expected: 2000, found: 1998, .. }), "{err}");
    }

    #[test]
    fn header_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.volhdr");
        fs::write(dir.path().join("v.raw"), vec![0u8; 16]).unwrap();
        fs::write(&p, r#"{"dims":[2,2,2],"spacing_mm":[1,0,1],"origin_mm":[0,0,0],"dtype":"int16","data":"v.raw"}"#)
            .unwrap();
        assert!(matches!(load_volume(&p), Err(AnatomyError::NonPositiveSpacing(_))));
        fs::write(&p, r#"{"dims":[2,2,2],"spacing_mm":[1,1,1],"origin_mm":[0,0,0],"dtype":"float32","data":"v.raw"}"#)
            .unwrap();
        assert!(matches!(load_volume(&p), Err(AnatomyError::UnknownDtype(_))));
        assert!(matches!(load_volume(&dir.path().join("missing.volhdr")), Err(AnatomyError::Io { .. })));
    }

    #[test]
    fn bounds_cover_whole_voxels() {
        let v = CtVolume::new([100, 1, 1], Vector3::new(1.0, 2.0, 3.0), Point3::new(0.5, 0.0, 0.0), vec![0; 100], None)
            .unwrap();
        let b = v.bounds();
        assert_eq!(b.min.x, 0.0);
        assert_eq!(b.max.x, 100.0);
        assert_eq!(b.extent().y, 2.0);
    }
}
