//! Text prompts (canonical, augmented, grouped, negative) and simulated
//! point prompts.

mod llm;
mod points;

pub use llm::{HttpVariantSource, LlmClient, LlmConfig, VariantSource, DEFAULT_CONCURRENCY, DEFAULT_TIMEOUT};
pub use points::{sample_point_prompts, squared_distance_transform, PointPrompt, PointPrompts, MAX_POINTS};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::anatomy::{ObjectCatalog, ObjectKind};
use crate::masks::MaskSet;
use crate::raster::BinaryMask;

const DEFAULT_TEMPLATES: &str = include_str!("../../assets/templates.json");

/// Upper bound on variants per mask.
pub const MAX_VARIANTS: usize = 30;
/// Default rate of prompts naming an absent object.
pub const DEFAULT_NEGATIVE_RATE: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("unknown organ group '{0}'")]
    UnknownGroup(String),
    #[error("point prompts requested for an empty ground-truth mask")]
    EmptyGroundTruth,
    #[error("at most {max} point prompts are supported, got {got}")]
    TooManyPoints { got: usize, max: usize },
    #[error("template bank: {0}")]
    Templates(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Comprehensive,
    Noncomprehensive,
    Negative,
}

/// What a prompt refers to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PromptTarget {
    Organ { id: u32 },
    Tool { id: u32 },
    Group { name: String },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub target: PromptTarget,
    pub text: String,
    pub variants: Vec<String>,
    pub kind: PromptKind,
}

impl PromptRecord {
    pub fn is_valid(&self) -> bool {
        let negative = self.kind == PromptKind::Negative;
        let none = self.target == PromptTarget::None;
        negative == none && (negative || !self.variants.is_empty()) && self.variants.len() <= MAX_VARIANTS
    }
}

/// One slot grammar: whole-word substitutions applied to the description,
/// and/or templates with `{name}` (a full description) and `{head}` (its
/// last word) placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateFamily {
    pub name: String,
    pub kind: PromptKind,
    #[serde(default)]
    pub substitutions: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub templates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TemplateBank {
    pub families: Vec<TemplateFamily>,
}

impl TemplateBank {
    /// The shipped bank: synonyms, laterality, ordinals, colloquial forms,
    /// instruction-style and terse templates.
    pub fn shipped() -> Self {
        serde_json::from_str(DEFAULT_TEMPLATES).expect("shipped template bank is valid")
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PromptError::Templates(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| PromptError::Templates(e.to_string()))
    }
}

/// Variants of `canonical` tagged with the kind of the family that made
/// them. The canonical string comes first; the rest are deduplicated,
/// shuffled with `rng` and truncated to `max_variants` in total.
pub fn augment_description_tagged<R: Rng + ?Sized>(
    canonical: &str,
    bank: &TemplateBank,
    rng: &mut R,
    max_variants: usize,
) -> Vec<(String, PromptKind)> {
    assert!(max_variants >= 1, "max_variants must be at least 1");
    let words: Vec<&str> = canonical.split_whitespace().collect();
    let head = words.last().copied().unwrap_or(canonical);

    // Rewritten descriptions from substitution families.
    let mut forms: Vec<(String, PromptKind)> = vec![(canonical.to_string(), PromptKind::Comprehensive)];
    for fam in &bank.families {
        for (i, w) in words.iter().enumerate() {
            let Some(alts) = fam.substitutions.get(&w.to_lowercase()) else { continue };
            for alt in alts {
                let mut rewritten: Vec<&str> = words.clone();
                rewritten[i] = alt;
                forms.push((rewritten.join(" "), fam.kind));
            }
        }
    }
    let mut candidates = forms.clone();
    for fam in bank.families.iter().filter(|f| !f.templates.is_empty()) {
        for t in &fam.templates {
            if t.contains("{name}") {
                for (form, kind) in &forms {
                    let kind = if fam.kind == PromptKind::Noncomprehensive { fam.kind } else { *kind };
                    candidates.push((t.replace("{name}", form).replace("{head}", head), kind));
                }
            } else {
                candidates.push((t.replace("{head}", head), fam.kind));
            }
        }
    }

    let mut seen = BTreeSet::new();
    let mut unique: Vec<(String, PromptKind)> =
        candidates.into_iter().filter(|(s, _)| !s.trim().is_empty() && seen.insert(s.clone())).collect();
    let rest = &mut unique[1..];
    rest.shuffle(rng);
    unique.truncate(max_variants);
    unique
}

/// Deduplicated variants of `canonical`, at most `max_variants`, always
/// starting with the canonical string.
pub fn augment_description<R: Rng + ?Sized>(
    canonical: &str,
    bank: &TemplateBank,
    rng: &mut R,
    max_variants: usize,
) -> Vec<String> {
    augment_description_tagged(canonical, bank, rng, max_variants).into_iter().map(|(s, _)| s).collect()
}

/// Template variants merged with extra ones (for instance from an external
/// endpoint). Extras are tagged comprehensive and take precedence: the
/// templates fill only the slots the extras leave, and the canonical string
/// always comes first.
pub fn merge_variants<R: Rng + ?Sized>(
    canonical: &str,
    bank: &TemplateBank,
    rng: &mut R,
    max_variants: usize,
    extra: &[String],
) -> Vec<(String, PromptKind)> {
    let mut seen = BTreeSet::from([canonical.to_string()]);
    let extra: Vec<&String> = extra.iter().filter(|e| seen.insert(e.to_string())).collect();
    let n_extra = extra.len().min(max_variants.saturating_sub(1));
    let mut tagged = augment_description_tagged(canonical, bank, rng, max_variants - n_extra);
    for e in extra {
        if tagged.len() >= max_variants {
            break;
        }
        if !tagged.iter().any(|(s, _)| s == e) {
            tagged.push((e.clone(), PromptKind::Comprehensive));
        }
    }
    tagged
}

/// Comprehensive and (when any) non-comprehensive records for one target,
/// sharing the variant budget; see [`merge_variants`] for `extra`.
pub fn prompt_records<R: Rng + ?Sized>(
    target: PromptTarget,
    canonical: &str,
    bank: &TemplateBank,
    rng: &mut R,
    max_variants: usize,
    extra: &[String],
) -> Vec<PromptRecord> {
    let tagged = merge_variants(canonical, bank, rng, max_variants, extra);
    [PromptKind::Comprehensive, PromptKind::Noncomprehensive]
        .into_iter()
        .filter_map(|kind| {
            let variants: Vec<String> = tagged.iter().filter(|(_, k)| *k == kind).map(|(s, _)| s.clone()).collect();
            (!variants.is_empty()).then(|| PromptRecord {
                target: target.clone(),
                text: variants[0].clone(),
                variants,
                kind,
            })
        })
        .collect()
}

/// Pixelwise OR of the masks of the group's members present in `masks`.
pub fn group_mask(masks: &MaskSet, group: &str, catalog: &ObjectCatalog) -> Result<BinaryMask, PromptError> {
    let g = catalog.group(group).ok_or_else(|| PromptError::UnknownGroup(group.to_string()))?;
    let (w, h) = masks.image_dims;
    let mut out = BinaryMask::new(w, h);
    for e in masks.entries.iter().filter(|e| e.kind == ObjectKind::Organ && g.members.contains(&e.id)) {
        out.or_assign(&e.mask);
    }
    Ok(out)
}

/// Catalog object identity.
pub type ObjectRef = (ObjectKind, u32);

/// With probability `p`, a prompt naming a catalog object that is not in
/// `present` (its ground truth is the empty mask). Exactly one uniform is
/// consumed to decide, plus one to pick when it fires.
pub fn sample_negative_prompt<R: Rng + ?Sized>(
    present: &BTreeSet<ObjectRef>,
    catalog: &ObjectCatalog,
    rng: &mut R,
    p: f64,
) -> Option<PromptRecord> {
    assert!((0.0..=1.0).contains(&p), "probability outside [0, 1]");
    let u: f64 = rng.random();
    if u >= p {
        return None;
    }
    let absent: Vec<&str> = catalog
        .organs
        .values()
        .filter(|o| !present.contains(&(ObjectKind::Organ, o.id)))
        .map(|o| o.name.as_str())
        .chain(catalog.tools.values().filter(|t| !present.contains(&(ObjectKind::Tool, t.id))).map(|t| t.name.as_str()))
        .collect();
    if absent.is_empty() {
        return None;
    }
    let name = absent[rng.random_range(0..absent.len())];
    Some(PromptRecord {
        target: PromptTarget::None,
        text: name.to_string(),
        variants: vec![name.to_string()],
        kind: PromptKind::Negative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::MaskEntry;
    use crate::rng::rng_from_seed;

    #[test]
    fn empty_bank_gives_canonical_only() {
        let mut rng = rng_from_seed(0);
        assert_eq!(augment_description("left femur", &TemplateBank::default(), &mut rng, 30), vec!["left femur"]);
    }

    #[test]
    fn variants_are_bounded_unique_and_replayable() {
        let bank = TemplateBank::shipped();
        for name in ["fifth left rib", "left hip", "cannulated 110mm screw", "liver", "L5 vertebra"] {
            let a = augment_description(name, &bank, &mut rng_from_seed(7), MAX_VARIANTS);
            let b = augment_description(name, &bank, &mut rng_from_seed(7), MAX_VARIANTS);
            assert_eq!(a, b);
            assert_eq!(a[0], name);
            assert!(!a.is_empty() && a.len() <= MAX_VARIANTS);
            assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), a.len());
            let small = augment_description(name, &bank, &mut rng_from_seed(7), 3);
            assert!(small.len() <= 3);
        }
    }

    #[test]
    fn records_split_by_kind() {
        let bank = TemplateBank::shipped();
        let recs =
            prompt_records(PromptTarget::Organ { id: 96 }, "fifth left rib", &bank, &mut rng_from_seed(1), 30, &[]);
        assert!(recs.iter().all(PromptRecord::is_valid));
        assert_eq!(recs[0].text, "fifth left rib");
        assert!(recs.iter().map(|r| r.variants.len()).sum::<usize>() <= 30);
    }

    #[test]
    fn extras_take_precedence_within_the_budget() {
        let bank = TemplateBank::shipped();
        let extra: Vec<String> =
            ["left femur", "the femur on the left", "left thighbone", "the femur on the left"].map(String::from).into();
        let v = merge_variants("left femur", &bank, &mut rng_from_seed(2), 30, &extra);
        assert_eq!(v.len(), 30);
        assert_eq!(v[0].0, "left femur");
        for e in ["the femur on the left", "left thighbone"] {
            assert_eq!(v.iter().filter(|(s, _)| s == e).count(), 1);
        }
        let tight = merge_variants("left femur", &bank, &mut rng_from_seed(2), 2, &extra);
        assert_eq!(tight.iter().map(|(s, _)| s.as_str()).collect::<Vec<_>>(), ["left femur", "the femur on the left"]);
        let none = merge_variants("left femur", &bank, &mut rng_from_seed(2), 30, &[]);
        assert_eq!(none, augment_description_tagged("left femur", &bank, &mut rng_from_seed(2), 30));
    }

    fn set(entries: Vec<(u32, BinaryMask)>) -> MaskSet {
        MaskSet {
            image_dims: (8, 8),
            entries: entries
                .into_iter()
                .map(|(id, mask)| MaskEntry { id, name: id.to_string(), kind: ObjectKind::Organ, mask })
                .collect(),
        }
    }

    #[test]
    fn group_masks() {
        let cat = ObjectCatalog::default();
        let a = BinaryMask::from_fn(8, 8, |x, _| x < 3);
        let b = BinaryMask::from_fn(8, 8, |x, _| x > 5);
        let single = set(vec![(10, a.clone())]);
        assert_eq!(group_mask(&single, "left lung", &cat).unwrap(), a);
        let two = set(vec![(10, a.clone()), (11, b.clone()), (51, BinaryMask::full(8, 8))]);
        assert_eq!(group_mask(&two, "left lung", &cat).unwrap().area(), a.area() + b.area());
        assert!(group_mask(&two, "kidneys", &cat).unwrap().is_empty());
        assert!(matches!(group_mask(&two, "tails", &cat), Err(PromptError::UnknownGroup(_))));
    }

    #[test]
    fn negatives() {
        let cat = ObjectCatalog::default();
        let mut rng = rng_from_seed(5);
        let present: BTreeSet<ObjectRef> = BTreeSet::new();
        assert!((0..1000).all(|_| sample_negative_prompt(&present, &cat, &mut rng, 0.0).is_none()));
        let mut all: BTreeSet<ObjectRef> = cat.organs.keys().map(|&id| (ObjectKind::Organ, id)).collect();
        all.extend(cat.tools.keys().map(|&id| (ObjectKind::Tool, id)));
        assert!(sample_negative_prompt(&all, &cat, &mut rng, 1.0).is_none());
        all.remove(&(ObjectKind::Organ, 5));
        let r = sample_negative_prompt(&all, &cat, &mut rng, 1.0).unwrap();
        assert_eq!(r.text, "liver");
        assert!(r.is_valid());
    }
}
