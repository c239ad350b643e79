use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use clap::CommandFactory;
use fluoroforge::metrics::{write_archive, ArchiveSample};
use fluoroforge::pipeline::{load_manifest, manifest_path, rle_decode, RunReport};
use fluoroforge::raster::{BinaryMask, ScalarImage};
use fluoroforge_cli::Cli;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fluoroforge"));
    c.env_remove("FLUOROFORGE_OFFLINE").env_remove("FLUOROFORGE_LLM_URL").env_remove("FLUOROFORGE_LLM_KEY");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

/// Small phantom dataset shared by the tests that only read it.
fn dataset() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let ph = dir.join("ph");
        let ph_s = ph.to_str().unwrap();
        let o = run(&["phantom", "--out", ph_s, "--resolution", "64", "--samples-per-ct", "12"]);
        assert!(o.status.success(), "{}", text(&o.stderr));
        let cfg = ph.join("phantom.json");
        let o = run(&["generate", "--config", cfg.to_str().unwrap(), "--seed", "7", "--workers", "2"]);
        assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
        ph.join("out")
    })
}

#[test]
fn help_lists_every_flag() {
    let mut cmd = Cli::command();
    cmd.build();
    let mut checked = 0;
    for sub in cmd.get_subcommands_mut() {
        let help = sub.render_long_help().to_string();
        let name = sub.get_name().to_string();
        for arg in sub.get_arguments() {
            if let Some(long) = arg.get_long() {
                assert!(help.contains(&format!("--{long}")), "{name} help lacks --{long}:\n{help}");
                checked += 1;
            }
        }
    }
    assert!(checked > 20);
    let top = text(&run(&["--help"]).stdout);
    for flag in ["--seed", "--offline", "--json-errors"] {
        assert!(top.contains(flag));
    }
    let o = run(&["generate", "--config", "x.json", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_exits_2_naming_the_path() {
    let o = run(&["generate", "--config", "/definitely/not/here.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("/definitely/not/here.json"));
    let o = run(&["--json-errors", "generate", "--config", "/definitely/not/here.json"]);
    let v: serde_json::Value = serde_json::from_str(text(&o.stderr).trim()).unwrap();
    assert_eq!(v["exit_code"], 2);
    assert!(v["error"].as_str().unwrap().contains("here.json"));
}

#[test]
fn generate_stats_and_preview() {
    let root = dataset();
    let report: RunReport = serde_json::from_slice(&std::fs::read(root.join("report.json")).unwrap()).unwrap();
    assert_eq!((report.planned, report.failed), (24, 0));

    let o = run(&["stats", root.to_str().unwrap(), "--json"]);
    assert!(o.status.success());
    let stats: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stats["samples"], 24);
    for (k, n) in &report.per_view_kind {
        assert_eq!(stats["per_view_kind"][k], *n);
    }

    let dir = tempfile::tempdir().unwrap();
    let id = "phantom_a_00000";
    let out = dir.path().join("p.png");
    let o = run(&["preview", id, "--root", root.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let img = image::open(&out).unwrap();
    assert_eq!((img.width(), img.height()), (64, 64));

    // A single-mask preview differs from the plain image exactly on that
    // mask's contour (where the contour colour differs from the gray).
    let m = load_manifest(root, id).unwrap();
    let rec = m.masks.iter().find(|r| r.name == "left lung").expect("left lung mask");
    let edge = rle_decode(&rec.rle, (64, 64)).unwrap().boundary();
    let single = dir.path().join("s.png");
    let o = run(&[
        "preview",
        id,
        "--root",
        root.to_str().unwrap(),
        "--out",
        single.to_str().unwrap(),
        "--mask",
        "left lung",
        "--no-captions",
    ]);
    assert!(o.status.success());
    let single = image::open(&single).unwrap().into_rgb8();
    let base = ScalarImage::read_png16(&root.join(format!("images/{id}.png"))).unwrap();
    let mut diff = BinaryMask::new(64, 64);
    for (x, y, p) in single.enumerate_pixels() {
        let g = (base.to_u16()[y as usize * 64 + x as usize] >> 8) as u8;
        diff.set(x as usize, y as usize, p.0 != [g, g, g]);
    }
    assert!(diff.area() > 0);
    assert_eq!(diff, edge);

    let o = run(&["preview", id, "--root", root.to_str().unwrap(), "--out", "x.png", "--mask", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("left lung"));
    let o = run(&["preview", "nope_00000", "--root", root.to_str().unwrap(), "--out", "x.png"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stats_on_empty_and_corrupt_datasets() {
    let empty = tempfile::tempdir().unwrap();
    let o = run(&["stats", empty.path().to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["samples"], 0);

    let copy = tempfile::tempdir().unwrap();
    let src = dataset();
    std::fs::create_dir_all(copy.path().join("manifests")).unwrap();
    std::fs::create_dir_all(copy.path().join("images")).unwrap();
    for sub in ["manifests", "images"] {
        for e in std::fs::read_dir(src.join(sub)).unwrap() {
            let p = e.unwrap().path();
            std::fs::copy(&p, copy.path().join(sub).join(p.file_name().unwrap())).unwrap();
        }
    }
    std::fs::copy(src.join("index.json"), copy.path().join("index.json")).unwrap();
    std::fs::remove_file(manifest_path(copy.path(), "phantom_b_00004")).unwrap();
    let o = run(&["stats", copy.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("phantom_b_00004"));
}

fn square(n: usize, side: usize) -> BinaryMask {
    BinaryMask::from_fn(n, n, |x, y| x < side && y < side)
}

#[test]
fn eval_commands() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    let mut samples = Vec::new();
    for (i, side) in [10usize, 14, 20].into_iter().enumerate() {
        let mut s = ArchiveSample::new(&format!("s{i}"), (32, 32));
        s.push("p0", "liver", None, &square(32, side));
        samples.push(s);
    }
    write_archive(&gt, &samples).unwrap();
    let (g, out) = (gt.to_str().unwrap(), dir.path().join("eval"));
    let o = run(&["eval", g, g, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let printed = text(&o.stdout);
    assert!(printed.contains("1.0000") && printed.contains("0.0000 px"), "{printed}");
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.contains("mean,text,3,1.000000,1.000000,0.000000,px"), "{csv}");

    let o = run(&["eval", g, g, "--out", out.to_str().unwrap(), "--min-mask-frac", "1.0"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(text(&o.stderr).contains("warning"));

    let pred = dir.path().join("pred");
    write_archive(&pred, &samples[..2]).unwrap();
    let o = run(&["eval", pred.to_str().unwrap(), g, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("s2"));
}

#[test]
fn vq_demo_exit_codes_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, z) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("z"));
    for out in [&a, &b] {
        let o = run(&["vq-demo", "--seed", "5", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    }
    assert_eq!(std::fs::read(a.join("loss.csv")).unwrap(), std::fs::read(b.join("loss.csv")).unwrap());
    let stats: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["purity"], 1.0);
    let o = run(&["vq-demo", "--lr", "0", "--out", z.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["vq-demo", "/no/such.emb", "--out", z.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

/// HTTP endpoint that counts requests and answers with one variant.
fn mock_llm() -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/variants", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            h.fetch_add(1, Ordering::SeqCst);
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            let reply = r#"{"variants": ["mock variant from the endpoint"]}"#;
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    (url, hits)
}

#[test]
fn offline_flag_blocks_the_endpoint() {
    let (url, hits) = mock_llm();
    // positive control: the endpoint is reachable and used when online
    let o = bin().env("FLUOROFORGE_LLM_URL", &url).args(["prompts", "left femur"]).output().unwrap();
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("mock variant from the endpoint"));
    let online = hits.load(Ordering::SeqCst);
    assert!(online > 0);

    let o = bin().env("FLUOROFORGE_LLM_URL", &url).args(["--offline", "prompts", "left femur"]).output().unwrap();
    assert!(o.status.success());
    assert!(!text(&o.stdout).contains("mock variant"));
    let o = bin()
        .env("FLUOROFORGE_LLM_URL", &url)
        .env("FLUOROFORGE_OFFLINE", "1")
        .args(["prompts", "left femur"])
        .output()
        .unwrap();
    assert!(o.status.success());

    // generation with --offline, on a config that itself allows the network
    let dir = tempfile::tempdir().unwrap();
    let ph = dir.path().join("ph");
    assert!(run(&["phantom", "--out", ph.to_str().unwrap(), "--resolution", "64", "--samples-per-ct", "3"])
        .status
        .success());
    let cfg_path = ph.join("phantom.json");
    let mut cfg: serde_json::Value = serde_json::from_slice(&std::fs::read(&cfg_path).unwrap()).unwrap();
    cfg["offline"] = false.into();
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let o = bin()
        .env("FLUOROFORGE_LLM_URL", &url)
        .args(["--offline", "generate", "--config", cfg_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    assert_eq!(hits.load(Ordering::SeqCst), online);
}
