use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::primitives::{self, PRIMITIVE_PREFIX};
use super::{load_mesh, AnatomyError, ObjectKind, SurfaceMesh};

const DEFAULT_CATALOG: &str = include_str!("../../assets/catalog.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrganEntry {
    pub id: u32,
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolEntry {
    pub id: u32,
    pub name: String,
    /// Mesh file (relative to the catalog file) or a `primitive:` spec.
    pub mesh: String,
    pub description: String,
    pub material: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub name: String,
    pub members: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct CatalogFile {
    organs: Vec<OrganEntry>,
    tools: Vec<ToolEntry>,
    groups: Vec<GroupEntry>,
    materials: BTreeMap<String, f64>,
}

/// Organ classes, tools, organ groups and tool material attenuation
/// (linear attenuation, 1/cm).
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectCatalog {
    pub organs: BTreeMap<u32, OrganEntry>,
    pub tools: BTreeMap<u32, ToolEntry>,
    pub groups: Vec<GroupEntry>,
    pub materials: BTreeMap<String, f64>,
    /// Directory that relative tool mesh paths resolve against.
    pub base_dir: PathBuf,
}

impl Default for ObjectCatalog {
    /// The shipped catalog: 128 organ classes, 38 organ groups, procedural tools.
    fn default() -> Self {
        Self::from_json(DEFAULT_CATALOG, PathBuf::from(".")).expect("shipped catalog is valid")
    }
}

impl ObjectCatalog {
    pub fn load(path: &Path) -> Result<Self, AnatomyError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| AnatomyError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")).to_path_buf())
    }

    pub fn from_json(text: &str, base_dir: PathBuf) -> Result<Self, AnatomyError> {
        let file: CatalogFile = serde_json::from_str(text).map_err(|e| AnatomyError::Catalog(e.to_string()))?;
        let mut organs = BTreeMap::new();
        for o in file.organs {
            if o.id == 0 {
                return Err(AnatomyError::Catalog("organ id 0 is reserved for background".into()));
            }
            if let Some(prev) = organs.insert(o.id, o) {
                return Err(AnatomyError::Catalog(format!("duplicate organ id {}", prev.id)));
            }
        }
        let mut tools = BTreeMap::new();
        for t in file.tools {
            if !file.materials.contains_key(&t.material) {
                return Err(AnatomyError::Catalog(format!("tool {} uses unknown material '{}'", t.id, t.material)));
            }
            if let Some(prev) = tools.insert(t.id, t) {
                return Err(AnatomyError::Catalog(format!("duplicate tool id {}", prev.id)));
            }
        }
        for g in &file.groups {
            if let Some(bad) = g.members.iter().find(|m| !organs.contains_key(m)) {
                return Err(AnatomyError::Catalog(format!("group '{}' references unknown organ {bad}", g.name)));
            }
        }
        let mut names: Vec<&str> = file.groups.iter().map(|g| g.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(AnatomyError::Catalog(format!("duplicate group '{}'", w[0])));
        }
        Ok(Self { organs, tools, groups: file.groups, materials: file.materials, base_dir })
    }

    pub fn to_json(&self) -> String {
        let file = CatalogFile {
            organs: self.organs.values().cloned().collect(),
            tools: self.tools.values().cloned().collect(),
            groups: self.groups.clone(),
            materials: self.materials.clone(),
        };
        serde_json::to_string_pretty(&file).expect("catalog serializes")
    }

    pub fn group(&self, name: &str) -> Option<&GroupEntry> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn organ_by_name(&self, name: &str) -> Option<&OrganEntry> {
        self.organs.values().find(|o| o.name == name)
    }

    /// Attenuation (1/cm) of a tool material.
    pub fn material_mu(&self, material: &str) -> Option<f64> {
        self.materials.get(material).copied()
    }

    /// Load (or synthesise) the mesh for a tool, centred on its solid centroid.
    pub fn tool_mesh(&self, tool: &ToolEntry) -> Result<SurfaceMesh, AnatomyError> {
        let mesh = if tool.mesh.starts_with(PRIMITIVE_PREFIX) {
            primitives::from_spec(&tool.mesh)?
        } else {
            let p = Path::new(&tool.mesh);
            load_mesh(&if p.is_absolute() { p.to_path_buf() } else { self.base_dir.join(p) })?
        };
        Ok(mesh
            .centered()
            .with_identity(ObjectKind::Tool, tool.id, &tool.name, &tool.description)
            .with_material(Some(tool.material.clone())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_catalog_shape() {
        let c = ObjectCatalog::default();
        assert_eq!(c.organs.len(), 128);
        assert_eq!(c.groups.len(), 38);
        assert!(c.group("left ribs").is_some());
        assert!(c.group("cervical vertebrae").is_some());
        assert_eq!(c.group("left ribs").unwrap().members.len(), 12);
        for t in c.tools.values() {
            let m = c.tool_mesh(t).unwrap();
            assert!(m.signed_volume() > 0.0);
            assert!(m.centroid().coords.norm() < 1e-6);
        }
    }

    #[test]
    fn round_trips_through_json() {
        let c = ObjectCatalog::default();
        let back = ObjectCatalog::from_json(&c.to_json(), c.base_dir.clone()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn dangling_group_member_rejected() {
        let text = r#"{"organs":[{"id":1,"name":"a","description":"a"}],"tools":[],
            "groups":[{"name":"g","members":[1,2]}],"materials":{}}"#;
        assert!(matches!(ObjectCatalog::from_json(text, ".".into()), Err(AnatomyError::Catalog(_))));
    }
}
