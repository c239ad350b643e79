use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fluoroforge::anatomy::{phantom, write_volume, CtVolume, ObjectKind};
use fluoroforge::pipeline::*;
use fluoroforge::prompts::PromptKind;

/// Every output file except the run report, keyed by relative path.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "report.json" {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Two water cubes labelled as spleen, with different air padding.
fn cube_config(dir: &Path) -> GenerationConfig {
    let mut cts = Vec::new();
    for (id, pad) in [("cube_a", 2usize), ("cube_b", 3)] {
        let v = phantom::water_cube(80.0, 4.0, pad);
        let labels = v.hu.iter().map(|&h| u16::from(h == 0)).collect();
        let v = CtVolume::new(v.dims, v.spacing, v.origin, v.hu, Some(labels)).unwrap();
        let path = write_volume(&v, &dir.join("vol"), id).unwrap();
        cts.push(CtInput { id: id.into(), path });
    }
    let mut cfg = GenerationConfig::new(cts, dir.join("out"));
    cfg.resolution = 64;
    cfg.detector_side_mm = 300.0;
    cfg.step_mm = 2.0;
    cfg.random_views_per_ct = 4;
    cfg.offline = true;
    cfg
}

#[test]
fn minimal_scene_outputs_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cube_config(dir.path());
    let report = run_generation(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(report.failed, 0);
    assert_eq!(report.planned, report.generated);
    // one standard view targets the spleen, plus four random views per CT
    assert_eq!(report.per_view_kind.get("random"), Some(&8));
    assert_eq!(report.per_view_kind.get("standard"), Some(&2));

    let stats = dataset_stats(&cfg.output).unwrap();
    assert_eq!(stats.samples, 10);
    assert_eq!(stats.split_sizes.values().sum::<usize>(), 10);
    for id in ["cube_a_00000", "cube_b_00003"] {
        let m = load_manifest(&cfg.output, id).unwrap();
        let spleen = m.masks.iter().find(|r| r.kind == ObjectKind::Organ && r.id == 1).unwrap();
        assert!(spleen.area > 0);
        let decoded = rle_decode(&spleen.rle, (m.image_dims[0], m.image_dims[1])).unwrap();
        assert_eq!(decoded.area(), spleen.area);
        assert!(m.prompts.iter().any(|p| p.kind == PromptKind::Comprehensive));
        assert!(m.tools.len() <= 3);
    }

    let splits: Splits = serde_json::from_slice(&std::fs::read(cfg.output.join("splits.json")).unwrap()).unwrap();
    assert_eq!((splits.train_cts.len(), splits.val_cts.len()), (1, 1));
}

#[test]
fn workers_and_resume_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let base = cube_config(dir.path());
    run_generation(&base, &RunOptions::default()).unwrap();
    let reference = snapshot(&base.output);
    assert!(reference.len() > 8);

    let parallel = GenerationConfig { workers: 4, output: dir.path().join("par"), ..base.clone() };
    run_generation(&parallel, &RunOptions::default()).unwrap();
    assert_eq!(snapshot(&parallel.output), reference);

    // Crash some samples after their images but before their manifests.
    let faulty = GenerationConfig { output: dir.path().join("faulty"), ..base.clone() };
    let hook: Arc<FaultHook> = Arc::new(|id: &str| id.ends_with('1') || id.ends_with('2'));
    let first = run_generation(&faulty, &RunOptions { fault: Some(hook), llm: None }).unwrap();
    assert_eq!(first.failed, 4);
    let second = run_generation(&faulty, &RunOptions::default()).unwrap();
    assert_eq!((second.resumed, second.generated, second.failed), (6, 4, 0));
    assert_eq!(snapshot(&faulty.output), reference);
    let third = run_generation(&faulty, &RunOptions::default()).unwrap();
    assert!(third.full_resume);
    assert_eq!(snapshot(&faulty.output), reference);
}

#[test]
fn all_failed_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cube_config(dir.path());
    let hook: Arc<FaultHook> = Arc::new(|_: &str| true);
    assert!(matches!(
        run_generation(&cfg, &RunOptions { fault: Some(hook), llm: None }),
        Err(PipelineError::AllFailed(10))
    ));
}

#[test]
fn stats_reject_a_stale_index() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cube_config(dir.path());
    run_generation(&cfg, &RunOptions::default()).unwrap();
    std::fs::remove_file(manifest_path(&cfg.output, "cube_a_00002")).unwrap();
    let err = dataset_stats(&cfg.output).unwrap_err().to_string();
    assert!(err.contains("cube_a_00002"), "{err}");
    let empty = tempfile::tempdir().unwrap();
    assert_eq!(dataset_stats(empty.path()).unwrap().samples, 0);
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    std::fs::write(&p, r#"{"cts": [{"id": "a", "path": "missing.volhdr"}], "workers": 0}"#).unwrap();
    assert!(matches!(GenerationConfig::load(&p), Err(PipelineError::Config(_))));
    std::fs::write(&p, r#"{"cts": [{"id": "a", "path": "missing.volhdr"}]}"#).unwrap();
    let cfg = GenerationConfig::load(&p).unwrap();
    assert_eq!(cfg.cts[0].path, dir.path().join("missing.volhdr"));
    assert!(run_generation(&cfg, &RunOptions::default()).is_err());
}
