//! Command-line front end for `fluoroforge`.
//!
//! Exit codes: 0 success, 1 partial failure or a failed check (some samples
//! failed, the VQ demo did not improve), 2 fatal error (bad config, unknown
//! id, misaligned evaluation directories, corrupt index).

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use fluoroforge::metrics::{evaluate_run, write_report, EvalConfig, MIN_MASK_FRAC};
use fluoroforge::pipeline::{
    atomic_write, dataset_stats, run_generation, write_phantom_config, GenerationConfig, RunOptions,
};
use fluoroforge::preview::{render_preview, PreviewOptions};
use fluoroforge::prompts::{merge_variants, LlmClient, LlmConfig, TemplateBank, MAX_VARIANTS};
use fluoroforge::rng::rng_from_seed;
use fluoroforge::vq::{read_embeddings, run_toy_task, toy_embeddings, TrainConfig, VqError, TOY_DIM, TOY_SEED};

#[derive(Debug, Parser)]
#[command(name = "fluoroforge", version, about = "Synthetic X-ray segmentation data: generate, inspect, evaluate")]
pub struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Never contact the LLM endpoint (also FLUOROFORGE_OFFLINE=1).
    #[arg(long, global = true)]
    pub offline: bool,
    /// Print errors to stderr as one JSON object.
    #[arg(long, global = true)]
    pub json_errors: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset from a config file.
    Generate(GenerateArgs),
    /// Draw mask contours and prompt captions over one sample.
    Preview(PreviewArgs),
    /// Score predicted mask archives against ground truth.
    Eval(EvalArgs),
    /// Train the toy VQ prompt encoder and report codebook statistics.
    VqDemo(VqDemoArgs),
    /// Summarize a generated dataset.
    Stats(StatsArgs),
    /// Write labelled torso phantoms and a ready-to-run config.
    Phantom(PhantomArgs),
    /// Print prompt variants for an object description.
    Prompts(PromptsArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generation config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads; overrides the config file.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output root; overrides the config file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Image side in pixels; overrides the config file.
    #[arg(long)]
    pub resolution: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    /// Sample id, e.g. phantom_a_00003.
    pub id: String,
    /// Dataset root.
    #[arg(long, default_value = "out")]
    pub root: PathBuf,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Only draw the mask with this name.
    #[arg(long)]
    pub mask: Option<String>,
    /// Leave out the caption lines.
    #[arg(long)]
    pub no_captions: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted archives (<sample_id>.json).
    pub pred: PathBuf,
    /// Directory of ground-truth archives.
    pub gt: PathBuf,
    /// Report directory (metrics.json, metrics.csv).
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    /// Ground-truth masks smaller than this image fraction are skipped.
    #[arg(long, default_value_t = MIN_MASK_FRAC)]
    pub min_mask_frac: f64,
    /// Use this Hausdorff percentile instead of the maximum.
    #[arg(long)]
    pub hausdorff_percentile: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VqDemoArgs {
    /// Labelled embedding file; the built-in two-cluster set when absent.
    pub embeddings: Option<PathBuf>,
    /// Output directory for loss.csv and stats.json.
    #[arg(long, default_value = "vq-demo")]
    pub out: PathBuf,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Codebook size.
    #[arg(long)]
    pub codes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Dataset root.
    #[arg(default_value = "out")]
    pub root: PathBuf,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Directory for the volumes and phantom.json.
    #[arg(long, default_value = "phantom")]
    pub out: PathBuf,
    /// Image side in pixels.
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
    /// Images per CT (two CTs).
    #[arg(long, default_value_t = 50)]
    pub samples_per_ct: usize,
}

#[derive(Debug, Args)]
pub struct PromptsArgs {
    /// Canonical description, e.g. "left femur".
    pub text: String,
    /// Template bank; the shipped one when absent.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long, default_value_t = MAX_VARIANTS)]
    pub max_variants: usize,
}

/// Error carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    fn fatal(error: anyhow::Error) -> Self {
        Self { code: 2, error }
    }
    fn check(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Self::fatal(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn env_offline() -> bool {
    LlmConfig::from_env().offline
}

/// Runs a parsed command and returns the process exit code, reporting any
/// error on stderr.
pub fn run(cli: Cli) -> i32 {
    let offline = cli.offline || env_offline();
    let result = match &cli.command {
        Command::Generate(a) => generate(a, cli.seed, offline),
        Command::Preview(a) => preview(a),
        Command::Eval(a) => eval(a),
        Command::VqDemo(a) => vq_demo(a, cli.seed),
        Command::Stats(a) => stats(a),
        Command::Phantom(a) => phantom(a, cli.seed),
        Command::Prompts(a) => prompts(a, cli.seed, offline),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            if cli.json_errors {
                let v = serde_json::json!({ "error": format!("{:#}", f.error), "exit_code": f.code });
                eprintln!("{v}");
            } else {
                eprintln!("error: {:#}", f.error);
            }
            f.code
        }
    }
}

fn generate(a: &GenerateArgs, seed: Option<u64>, offline: bool) -> CmdResult {
    let mut cfg = GenerationConfig::load(&a.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if let Some(o) = &a.out {
        cfg.output = o.clone();
    }
    if let Some(r) = a.resolution {
        cfg.resolution = r;
    }
    cfg.offline |= offline;
    cfg.validate()?;
    let report = run_generation(&cfg, &RunOptions::default())?;
    println!(
        "planned {}, generated {}, resumed {}, failed {} in {:.1} s",
        report.planned, report.generated, report.resumed, report.failed, report.wall_seconds
    );
    for (kind, t) in &report.throughput {
        println!("{kind}: {}", t.summary);
    }
    if report.failed > 0 {
        let ids: Vec<&str> = report.failures.iter().map(|f| f.id.as_str()).collect();
        return Err(Failure::check(anyhow!("{} samples failed: {}", report.failed, ids.join(", "))));
    }
    Ok(())
}

fn preview(a: &PreviewArgs) -> CmdResult {
    let opts = PreviewOptions { mask: a.mask.clone(), captions: !a.no_captions };
    let overlay = render_preview(&a.root, &a.id, &opts)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    atomic_write(&a.out, &overlay.encode_png())?;
    println!("wrote {} ({}x{})", a.out.display(), overlay.width, overlay.height);
    Ok(())
}

fn eval(a: &EvalArgs) -> CmdResult {
    let cfg = EvalConfig { min_mask_frac: a.min_mask_frac, hausdorff_percentile: a.hausdorff_percentile };
    let report = evaluate_run(&a.pred, &a.gt, &cfg)?;
    write_report(&report, &a.out)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("{:<16} {:>6} {:>8} {:>8} {:>10}", "condition", "n", "IoU", "Dice", "HDD");
    for r in report.means() {
        let hdd = r.hdd_mean.map_or("-".to_string(), |h| format!("{h:.4} {}", r.hdd_unit));
        println!("{:<16} {:>6} {:>8.4} {:>8.4} {:>10}", r.prompt_condition, r.n, r.iou_mean, r.dice_mean, hdd);
    }
    Ok(())
}

fn vq_demo(a: &VqDemoArgs, seed: Option<u64>) -> CmdResult {
    let set = match &a.embeddings {
        Some(p) => read_embeddings(p)?,
        None => toy_embeddings(TOY_SEED, TOY_DIM),
    };
    let mut cfg = TrainConfig::toy();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(k) = a.codes {
        cfg.k = k;
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let report = match run_toy_task(&set, &cfg) {
        Ok(r) => r,
        Err(e @ VqError::Diverged { .. }) => return Err(Failure::check(e.into())),
        Err(e) => return Err(e.into()),
    };
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in report.loss_trace.iter().enumerate() {
        csv.push_str(&format!("{i},{l:.9e}\n"));
    }
    atomic_write(&a.out.join("loss.csv"), csv.as_bytes())?;
    let stats = serde_json::json!({
        "initial_loss": report.initial_loss,
        "final_loss": report.final_loss,
        "purity": report.purity,
        "codes_used": report.codes_used,
        "codebook_size": cfg.k,
        "seed": cfg.seed,
        "lr": cfg.lr,
        "epochs": cfg.epochs,
    });
    atomic_write(&a.out.join("stats.json"), format!("{stats:#}\n").as_bytes())?;
    println!(
        "loss {:.4} -> {:.4}, purity {:.1}%, {} of {} codes used",
        report.initial_loss,
        report.final_loss,
        100.0 * report.purity,
        report.codes_used,
        cfg.k
    );
    if !(report.final_loss < 0.5 * report.initial_loss) {
        return Err(Failure::check(anyhow!(
            "final loss {:.6} is not below half the initial loss {:.6}",
            report.final_loss,
            report.initial_loss
        )));
    }
    Ok(())
}

fn stats(a: &StatsArgs) -> CmdResult {
    let s = dataset_stats(&a.root)?;
    let out = std::io::stdout();
    let mut w = out.lock();
    if a.json {
        writeln!(w, "{}", serde_json::to_string_pretty(&s)?)?;
        return Ok(());
    }
    writeln!(w, "samples: {}", s.samples)?;
    for (k, n) in &s.per_view_kind {
        writeln!(w, "  {k}: {n}")?;
    }
    writeln!(w, "masks per image: {:.3}", s.masks_per_image)?;
    writeln!(w, "prompts per mask: {:.3}", s.prompts_per_mask)?;
    writeln!(w, "negative prompts: {}", s.negative_prompts)?;
    writeln!(w, "tool frequency:")?;
    for (k, n) in &s.tool_frequency {
        writeln!(w, "  {k}: {n}")?;
    }
    writeln!(w, "splits:")?;
    for (k, n) in &s.split_sizes {
        writeln!(w, "  {k}: {n}")?;
    }
    Ok(())
}

fn phantom(a: &PhantomArgs, seed: Option<u64>) -> CmdResult {
    let output = Path::new("out");
    let path = write_phantom_config(&a.out, output, a.resolution, a.samples_per_ct)?;
    if let Some(s) = seed {
        let mut cfg: serde_json::Value = serde_json::from_slice(&std::fs::read(&path)?)?;
        cfg["seed"] = s.into();
        atomic_write(&path, format!("{cfg:#}\n").as_bytes())?;
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn prompts(a: &PromptsArgs, seed: Option<u64>, offline: bool) -> CmdResult {
    if a.max_variants == 0 || a.max_variants > MAX_VARIANTS {
        return Err(Failure::fatal(anyhow!("--max-variants must be in 1..={MAX_VARIANTS}")));
    }
    let bank = match &a.templates {
        Some(p) => TemplateBank::load(p)?,
        None => TemplateBank::shipped(),
    };
    let llm = LlmClient::from_config(&LlmConfig::from_env(), offline);
    let extra = if llm.is_active() { llm.fetch_llm_variants(&a.text, a.max_variants) } else { Vec::new() };
    let variants = merge_variants(&a.text, &bank, &mut rng_from_seed(seed.unwrap_or(0)), a.max_variants, &extra);
    for (text, kind) in variants {
        println!("{}\t{text}", serde_json::to_value(kind)?.as_str().unwrap_or_default());
    }
    Ok(())
}
