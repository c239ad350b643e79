//! Read-only scene assets shared by all workers, sample planning and tool
//! placement.

use std::collections::BTreeMap;

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GenerationConfig, PipelineError};
use crate::anatomy::{load_volume, voxelize_labels_to_meshes, AnatomyError, CtVolume, ObjectCatalog, SurfaceMesh};
use crate::augment::AugmentationPlan;
use crate::camera::{default_views, load_views, target_meshes, CArmCamera, StandardViewSpec};
use crate::drr::{AttenuationGrid, Spectrum, ToolInstance};
use crate::prompts::TemplateBank;
use crate::rng::{derive_seed, uniform_rotation};

/// One CT with its attenuation grid and organ surfaces.
pub struct CtScene {
    pub id: String,
    pub grid: AttenuationGrid,
    pub organs: Vec<SurfaceMesh>,
}

impl CtScene {
    /// Builds organ meshes for every catalogued label present in `vol`.
    /// Labels too small to surface are skipped.
    pub fn build(
        id: &str,
        vol: &CtVolume,
        catalog: &ObjectCatalog,
        spectrum: &Spectrum,
    ) -> Result<Self, PipelineError> {
        vol.check_labels(catalog)?;
        let mut organs = Vec::new();
        for class in vol.label_ids() {
            let entry = &catalog.organs[&class];
            match voxelize_labels_to_meshes(vol, class) {
                Ok(m) => organs.push(m.with_identity(
                    crate::anatomy::ObjectKind::Organ,
                    class,
                    &entry.name,
                    &entry.description,
                )),
                Err(AnatomyError::RegionTooSmall { class, voxels }) => {
                    log::warn!("{id}: label {class} has only {voxels} voxels, no surface built");
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(Self { id: id.to_string(), grid: AttenuationGrid::new(vol, spectrum), organs })
    }

    /// Names of the standard views whose target group has a surface here.
    pub fn applicable_views(&self, views: &[StandardViewSpec], catalog: &ObjectCatalog) -> Vec<String> {
        views.iter().filter(|v| target_meshes(v, &self.organs, catalog).is_ok()).map(|v| v.name.clone()).collect()
    }
}

/// Catalog tool, centred at its solid centroid, with its attenuation.
#[derive(Debug, Clone)]
pub struct ToolTemplate {
    pub mesh: SurfaceMesh,
    pub mu_per_cm: f64,
}

/// Tool instance placed in the scene.
#[derive(Debug, Clone)]
pub struct PlacedTool {
    pub tool_id: u32,
    pub pose: Isometry3<f64>,
    pub instance: ToolInstance,
}

/// Everything a worker needs to generate samples, loaded once.
pub struct SceneAssets {
    pub catalog: ObjectCatalog,
    pub views: Vec<StandardViewSpec>,
    pub bank: TemplateBank,
    pub plan: AugmentationPlan,
    pub spectrum: Spectrum,
    pub tools: BTreeMap<u32, ToolTemplate>,
    pub scenes: BTreeMap<String, CtScene>,
}

impl SceneAssets {
    pub fn load(cfg: &GenerationConfig) -> Result<Self, PipelineError> {
        let catalog = match &cfg.catalog {
            Some(p) => ObjectCatalog::load(p)?,
            None => ObjectCatalog::default(),
        };
        let views = match &cfg.views {
            Some(p) => load_views(p)?,
            None => default_views(),
        };
        let bank = match &cfg.templates {
            Some(p) => TemplateBank::load(p)?,
            None => TemplateBank::shipped(),
        };
        let plan = match &cfg.plan {
            Some(p) => AugmentationPlan::load(p)?,
            None => AugmentationPlan::default_plan(0),
        };
        let spectrum = Spectrum::default();
        let mut tools = BTreeMap::new();
        for t in catalog.tools.values() {
            let mu_per_cm = catalog.material_mu(&t.material).expect("catalog validates materials");
            tools.insert(t.id, ToolTemplate { mesh: catalog.tool_mesh(t)?, mu_per_cm });
        }
        let mut scenes = BTreeMap::new();
        for ct in &cfg.cts {
            let vol = load_volume(&ct.path)?;
            scenes.insert(ct.id.clone(), CtScene::build(&ct.id, &vol, &catalog, &spectrum)?);
        }
        Ok(Self { catalog, views, bank, plan, spectrum, tools, scenes })
    }

    pub fn view(&self, name: &str) -> Option<&StandardViewSpec> {
        self.views.iter().find(|v| v.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ViewKind {
    Standard { name: String },
    Random,
}

impl ViewKind {
    pub fn label(&self) -> &'static str {
        match self {
            ViewKind::Standard { .. } => "standard",
            ViewKind::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub id: String,
    pub ct_id: String,
    pub index: u64,
    pub view: ViewKind,
    pub seed: u64,
}

/// CT id with the standard views it supports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CtInventory {
    pub ct_id: String,
    pub views: Vec<String>,
}

pub fn sample_id(ct_id: &str, index: u64) -> String {
    format!("{ct_id}_{index:05}")
}

/// Per CT: one spec per applicable standard view (when enabled), then the
/// configured number of random views. Seeds depend only on the master seed,
/// the CT id and the index.
pub fn plan_samples(cfg: &GenerationConfig, inventory: &[CtInventory]) -> Result<Vec<SampleSpec>, PipelineError> {
    if inventory.is_empty() {
        return Err(PipelineError::Config("no input CTs".into()));
    }
    let mut specs = Vec::new();
    for ct in inventory {
        let standard = if cfg.standard_views { ct.views.as_slice() } else { &[] };
        let kinds = standard
            .iter()
            .map(|n| ViewKind::Standard { name: n.clone() })
            .chain(std::iter::repeat_n(ViewKind::Random, cfg.random_views_per_ct));
        for (i, view) in kinds.enumerate() {
            let index = i as u64;
            specs.push(SampleSpec {
                id: sample_id(&ct.ct_id, index),
                ct_id: ct.ct_id.clone(),
                index,
                view,
                seed: derive_seed(cfg.seed, &ct.ct_id, index),
            });
        }
    }
    Ok(specs)
}

/// Between `count_range[0]` and `count_range[1]` tools (uniform), each a
/// uniformly chosen catalog tool with a uniform random rotation, centred on
/// the ray through a uniform point of the image at a depth (along the
/// principal ray) uniform in [0.5·sad, min(1.5·sad, sid)].
pub fn place_tools<R: Rng + ?Sized>(
    rng: &mut R,
    tools: &BTreeMap<u32, ToolTemplate>,
    cam: &CArmCamera,
    sad: f64,
    count_range: [usize; 2],
) -> Vec<PlacedTool> {
    if tools.is_empty() || count_range[1] == 0 {
        return Vec::new();
    }
    let n = rng.random_range(count_range[0]..=count_range[1]);
    let ids: Vec<u32> = tools.keys().copied().collect();
    let (w, h) = cam.image_dims;
    let (lo, hi) = (0.5 * sad, (1.5 * sad).min(cam.sid));
    (0..n)
        .map(|_| {
            let id = ids[rng.random_range(0..ids.len())];
            let rot: UnitQuaternion<f64> = uniform_rotation(rng);
            let u = rng.random_range(0.5..w as f64 - 0.5);
            let v = rng.random_range(0.5..h as f64 - 0.5);
            let depth = rng.random_range(lo..=hi);
            let ray = cam.ray_unchecked(u, v);
            let cos = ray.dir.dot(&cam.principal_ray());
            let c: Point3<f64> = cam.source + ray.dir * (depth / cos);
            let pose = Isometry3::from_parts(Translation3::new(c.x, c.y, c.z), rot);
            let t = &tools[&id];
            PlacedTool {
                tool_id: id,
                pose,
                instance: ToolInstance { mesh: t.mesh.transformed(&pose), mu_per_cm: t.mu_per_cm },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{anterior, Detector};
    use crate::rng::rng_from_seed;

    fn library() -> BTreeMap<u32, ToolTemplate> {
        let cat = ObjectCatalog::default();
        cat.tools.values().map(|t| (t.id, ToolTemplate { mesh: cat.tool_mesh(t).unwrap(), mu_per_cm: 1.0 })).collect()
    }

    #[test]
    fn planning() {
        let cfg = GenerationConfig { random_views_per_ct: 5, ..GenerationConfig::new(vec![], "o".into()) };
        let inv = vec![
            CtInventory { ct_id: "a".into(), views: vec![] },
            CtInventory { ct_id: "b".into(), views: vec!["chest PA".into()] },
        ];
        let specs = plan_samples(&cfg, &inv).unwrap();
        assert_eq!(specs.len(), 11);
        assert!(specs[..5].iter().all(|s| s.view == ViewKind::Random && s.ct_id == "a"));
        assert_eq!(specs[5].view, ViewKind::Standard { name: "chest PA".into() });
        assert_eq!(specs, plan_samples(&cfg, &inv).unwrap());
        // seeds do not depend on the order of CTs
        let rev: Vec<_> = inv.iter().rev().cloned().collect();
        let again = plan_samples(&cfg, &rev).unwrap();
        assert_eq!(again[0], specs[5]);
        assert!(plan_samples(&cfg, &[]).is_err());
    }

    #[test]
    fn tools_project_inside_image() {
        let lib = library();
        let cam =
            CArmCamera::look_at(Point3::origin(), anterior(), 700.0, 1020.0, &Detector::square(128, 300.0)).unwrap();
        let mut rng = rng_from_seed(4);
        assert!(place_tools(&mut rng, &lib, &cam, 700.0, [0, 0]).is_empty());
        for _ in 0..50 {
            let placed = place_tools(&mut rng, &lib, &cam, 700.0, [1, 4]);
            assert!((1..=4).contains(&placed.len()));
            for p in placed {
                let c = Point3::from(p.pose.translation.vector);
                let (u, v) = cam.project_point(&c).unwrap();
                assert!(u >= 0.0 && v >= 0.0 && u < 128.0 && v < 128.0);
                let depth = cam.depth_of(&c);
                assert!((350.0 - 1e-9..=1020.0 + 1e-9).contains(&depth));
                assert!((p.instance.mesh.centroid() - c).norm() < 1e-6);
            }
        }
        let a = place_tools(&mut rng_from_seed(9), &lib, &cam, 700.0, [2, 2]);
        let b = place_tools(&mut rng_from_seed(9), &lib, &cam, 700.0, [2, 2]);
        assert_eq!(a.iter().map(|p| p.pose).collect::<Vec<_>>(), b.iter().map(|p| p.pose).collect::<Vec<_>>());
    }
}
