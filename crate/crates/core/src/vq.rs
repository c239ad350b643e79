//! Text prompt encoder: frozen embedding → MLP with two GELU hidden layers →
//! vector-quantization bottleneck → prompt token.
//!
//! Gradients are analytic. The bottleneck uses the straight-through
//! estimator, a gradient-trained codebook and a commitment term.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use libm::erf;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{rng_from_seed, SampleRng};

pub const DEFAULT_D_IN: usize = 512;
pub const DEFAULT_HIDDEN: usize = 512;
pub const DEFAULT_D_OUT: usize = 256;
pub const DEFAULT_K: usize = 512;
pub const DEFAULT_BETA: f64 = 0.25;
/// Quantize calls without a hit before an entry counts as dead.
pub const DEAD_AFTER: u64 = 1000;

#[derive(Debug, thiserror::Error)]
pub enum VqError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("cache does not belong to these parameters: {0}")]
    CacheMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Diverged { iteration: usize, loss: f64 },
    #[error("embedding file {path}: {reason}")]
    Embeddings { path: String, reason: String },
    #[error("embedding file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), VqError> {
    if got != want {
        return Err(VqError::Shape(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, x·Φ(x).
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// d/dx of [`gelu`]: Φ(x) + x·φ(x).
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + erf(x * std::f64::consts::FRAC_1_SQRT_2));
    cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Layers D_in → H → H → D. Weight matrices are stored output × input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub w3: DMatrix<f64>,
    pub b3: DVector<f64>,
}

/// Gradients share the parameter layout.
pub type MlpGrads = MlpParams;

impl MlpParams {
    pub fn zeros(d_in: usize, hidden: usize, d_out: usize) -> Self {
        Self {
            w1: DMatrix::zeros(hidden, d_in),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(hidden, hidden),
            b2: DVector::zeros(hidden),
            w3: DMatrix::zeros(d_out, hidden),
            b3: DVector::zeros(d_out),
        }
    }

    /// Normal weights with variance 1/fan_in, zero biases.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d_in: usize, hidden: usize, d_out: usize) -> Self {
        let mut layer = |rows: usize, cols: usize| {
            let s = 1.0 / (cols as f64).sqrt();
            DMatrix::from_fn(rows, cols, |_, _| s * normal(&mut *rng))
        };
        let w1 = layer(hidden, d_in);
        let w2 = layer(hidden, hidden);
        let w3 = layer(d_out, hidden);
        Self { w1, b1: DVector::zeros(hidden), w2, b2: DVector::zeros(hidden), w3, b3: DVector::zeros(d_out) }
    }

    pub fn d_in(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.w3.nrows()
    }

    pub fn validate(&self) -> Result<(), VqError> {
        let (h, d) = (self.hidden(), self.d_out());
        check_len("b1", self.b1.len(), h)?;
        if self.w2.shape() != (h, h) {
            return Err(VqError::Shape(format!("w2 is {:?}, expected {:?}", self.w2.shape(), (h, h))));
        }
        check_len("b2", self.b2.len(), h)?;
        if self.w3.ncols() != h {
            return Err(VqError::Shape(format!("w3 has {} columns, expected {h}", self.w3.ncols())));
        }
        check_len("b3", self.b3.len(), d)?;
        if !self.flat_iter().all(|v| v.is_finite()) {
            return Err(VqError::Shape("non-finite parameter".into()));
        }
        Ok(())
    }

    fn parts(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
            self.w3.as_slice(),
            self.b3.as_slice(),
        ]
    }

    fn parts_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
            self.w3.as_mut_slice(),
            self.b3.as_mut_slice(),
        ]
    }

    fn flat_iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.parts().into_iter().flat_map(|p| p.iter().copied())
    }

    pub fn num_params(&self) -> usize {
        self.parts().iter().map(|p| p.len()).sum()
    }

    /// All parameters in a fixed order (w1, b1, w2, b2, w3, b3; column-major).
    pub fn to_flat(&self) -> Vec<f64> {
        self.flat_iter().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), VqError> {
        check_len("flat parameter vector", flat.len(), self.num_params())?;
        let mut off = 0;
        for p in self.parts_mut() {
            p.copy_from_slice(&flat[off..off + p.len()]);
            off += p.len();
        }
        Ok(())
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &MlpParams, scale: f64) {
        for (a, b) in self.parts_mut().into_iter().zip(other.parts()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCache {
    pub x: DVector<f64>,
    pub a1: DVector<f64>,
    pub h1: DVector<f64>,
    pub a2: DVector<f64>,
    pub h2: DVector<f64>,
}

pub fn mlp_forward(params: &MlpParams, x: &DVector<f64>) -> Result<(DVector<f64>, MlpCache), VqError> {
    check_len("input", x.len(), params.d_in())?;
    let a1 = &params.w1 * x + &params.b1;
    let h1 = a1.map(gelu);
    let a2 = &params.w2 * &h1 + &params.b2;
    let h2 = a2.map(gelu);
    let z = &params.w3 * &h2 + &params.b3;
    Ok((z, MlpCache { x: x.clone(), a1, h1, a2, h2 }))
}

pub fn mlp_backward(
    params: &MlpParams,
    cache: &MlpCache,
    grad_out: &DVector<f64>,
) -> Result<(MlpGrads, DVector<f64>), VqError> {
    let (h, d) = (params.hidden(), params.d_out());
    if cache.x.len() != params.d_in() || cache.a1.len() != h || cache.a2.len() != h {
        return Err(VqError::CacheMismatch(format!(
            "cache shapes ({}, {}, {}) vs params ({}, {h}, {h})",
            cache.x.len(),
            cache.a1.len(),
            cache.a2.len(),
            params.d_in()
        )));
    }
    check_len("output gradient", grad_out.len(), d)?;
    let gw3 = grad_out * cache.h2.transpose();
    let gb3 = grad_out.clone();
    let gh2 = params.w3.tr_mul(grad_out);
    let ga2 = gh2.zip_map(&cache.a2, |g, a| g * gelu_grad(a));
    let gw2 = &ga2 * cache.h1.transpose();
    let gh1 = params.w2.tr_mul(&ga2);
    let ga1 = gh1.zip_map(&cache.a1, |g, a| g * gelu_grad(a));
    let gw1 = &ga1 * cache.x.transpose();
    let gx = params.w1.tr_mul(&ga1);
    let grads = MlpParams { w1: gw1, b1: ga1, w2: gw2, b2: ga2, w3: gw3, b3: gb3 };
    Ok((grads, gx))
}

/// K × D table of code vectors with usage statistics. Counters are atomic so
/// inference may share a codebook across threads.
#[derive(Debug)]
pub struct Codebook {
    entries: Vec<DVector<f64>>,
    usage: Vec<AtomicU64>,
    last_hit: Vec<AtomicU64>,
    calls: AtomicU64,
    pub beta: f64,
}

impl Clone for Codebook {
    fn clone(&self) -> Self {
        let copy = |v: &[AtomicU64]| v.iter().map(|a| AtomicU64::new(a.load(Ordering::Relaxed))).collect();
        Self {
            entries: self.entries.clone(),
            usage: copy(&self.usage),
            last_hit: copy(&self.last_hit),
            calls: AtomicU64::new(self.calls.load(Ordering::Relaxed)),
            beta: self.beta,
        }
    }
}

impl Codebook {
    pub fn new(entries: Vec<DVector<f64>>, beta: f64) -> Result<Self, VqError> {
        let Some(d) = entries.first().map(|e| e.len()) else {
            return Err(VqError::Config("codebook needs at least one entry".into()));
        };
        for (i, e) in entries.iter().enumerate() {
            check_len(&format!("codebook entry {i}"), e.len(), d)?;
            if !e.iter().all(|v| v.is_finite()) {
                return Err(VqError::Config(format!("codebook entry {i} is not finite")));
            }
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(VqError::Config(format!("beta must be finite and >= 0, got {beta}")));
        }
        let k = entries.len();
        Ok(Self {
            entries,
            usage: (0..k).map(|_| AtomicU64::new(0)).collect(),
            last_hit: (0..k).map(|_| AtomicU64::new(0)).collect(),
            calls: AtomicU64::new(0),
            beta,
        })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, k: usize, d: usize, beta: f64) -> Result<Self, VqError> {
        let entries = (0..k).map(|_| DVector::from_fn(d, |_, _| normal(&mut *rng))).collect();
        Self::new(entries, beta)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.entries[0].len()
    }

    pub fn entries(&self) -> &[DVector<f64>] {
        &self.entries
    }

    pub fn entry(&self, k: usize) -> &DVector<f64> {
        &self.entries[k]
    }

    pub fn usage_counts(&self) -> Vec<u64> {
        self.usage.iter().map(|a| a.load(Ordering::Relaxed)).collect()
    }

    pub fn reset_usage(&self) {
        for a in self.usage.iter().chain(&self.last_hit) {
            a.store(0, Ordering::Relaxed);
        }
        self.calls.store(0, Ordering::Relaxed);
    }

    /// Nearest entry by Euclidean distance, ties to the lowest index, without
    /// touching the usage statistics.
    pub fn nearest(&self, z: &DVector<f64>) -> Result<usize, VqError> {
        check_len("query", z.len(), self.dim())?;
        let mut best = (0, f64::INFINITY);
        for (k, e) in self.entries.iter().enumerate() {
            let d = (z - e).norm_squared();
            if d < best.1 {
                best = (k, d);
            }
        }
        Ok(best.0)
    }

    /// [`nearest`](Self::nearest) plus usage counting.
    pub fn quantize(&self, z: &DVector<f64>) -> Result<(usize, DVector<f64>), VqError> {
        let k = self.nearest(z)?;
        let call = self.calls.fetch_add(1, Ordering::Relaxed) + 1;
        self.usage[k].fetch_add(1, Ordering::Relaxed);
        self.last_hit[k].store(call, Ordering::Relaxed);
        Ok((k, self.entries[k].clone()))
    }

    /// Entries not hit during the last `window` quantize calls.
    pub fn dead_entries(&self, window: u64) -> Vec<usize> {
        let calls = self.calls.load(Ordering::Relaxed);
        (0..self.len()).filter(|&k| calls.saturating_sub(self.last_hit[k].load(Ordering::Relaxed)) >= window).collect()
    }

    pub fn set_entry(&mut self, k: usize, value: DVector<f64>) -> Result<(), VqError> {
        check_len("codebook entry", value.len(), self.dim())?;
        self.entries[k] = value;
        self.last_hit[k].store(self.calls.load(Ordering::Relaxed), Ordering::Relaxed);
        Ok(())
    }

    fn entry_mut(&mut self, k: usize) -> &mut DVector<f64> {
        &mut self.entries[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VqLoss {
    pub total: f64,
    pub codebook: f64,
    pub commitment: f64,
}

/// Codebook term ‖sg(z) − e‖², commitment term β‖z − sg(e)‖².
pub fn vq_loss(z_e: &DVector<f64>, e: &DVector<f64>, beta: f64) -> Result<VqLoss, VqError> {
    check_len("code vector", e.len(), z_e.len())?;
    let d2 = (z_e - e).norm_squared();
    let commitment = beta * d2;
    Ok(VqLoss { total: d2 + commitment, codebook: d2, commitment })
}

/// Straight-through estimator: token = z + sg(e − z), so the gradient with
/// respect to z is the token gradient unchanged.
pub fn straight_through(
    z_e: &DVector<f64>,
    e: &DVector<f64>,
    grad_wrt_token: &DVector<f64>,
) -> Result<DVector<f64>, VqError> {
    check_len("code vector", e.len(), z_e.len())?;
    check_len("token gradient", grad_wrt_token.len(), z_e.len())?;
    Ok(grad_wrt_token.clone())
}

/// Precomputed text embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEmbedding {
    pub vector: DVector<f64>,
    pub source_text: String,
}

/// Loss and gradients of one sample with the code index supplied by the
/// caller. Downstream loss is ‖token − target‖².
#[derive(Debug, Clone)]
pub struct StepResult {
    pub index: usize,
    pub downstream: f64,
    pub vq: VqLoss,
    pub grads: MlpGrads,
    pub grad_code: DVector<f64>,
    pub z_e: DVector<f64>,
}

impl StepResult {
    pub fn loss(&self) -> f64 {
        self.downstream + self.vq.total
    }
}

/// Forward and backward through MLP, bottleneck and losses with the code
/// index fixed to `index`.
pub fn step_with_index(
    params: &MlpParams,
    codebook: &Codebook,
    x: &DVector<f64>,
    target: &DVector<f64>,
    index: usize,
) -> Result<StepResult, VqError> {
    let (z, cache) = mlp_forward(params, x)?;
    check_len("latent", z.len(), codebook.dim())?;
    check_len("target", target.len(), z.len())?;
    let e = codebook.entry(index);
    let token = e;
    let resid = token - target;
    let downstream = resid.norm_squared();
    let vq = vq_loss(&z, e, codebook.beta)?;
    let mut gz = straight_through(&z, e, &(2.0 * &resid))?;
    gz += 2.0 * codebook.beta * (&z - e);
    let (grads, _) = mlp_backward(params, &cache, &gz)?;
    let grad_code = 2.0 * (e - &z);
    Ok(StepResult { index, downstream, vq, grads, grad_code, z_e: z })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub d_out: usize,
    pub k: usize,
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub dead_after: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            d_out: DEFAULT_D_OUT,
            k: DEFAULT_K,
            beta: DEFAULT_BETA,
            lr: 1e-3,
            epochs: 50,
            seed: 0,
            dead_after: DEAD_AFTER,
        }
    }
}

impl TrainConfig {
    /// Small network used for the shipped toy task.
    pub fn toy() -> Self {
        Self { hidden: 32, d_out: 8, k: 2, lr: 0.01, epochs: 60, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: MlpParams,
    pub codebook: Codebook,
    /// Mean per-sample loss of each epoch.
    pub loss_trace: Vec<f64>,
}

/// Codebook seeded with encoder outputs: a random first sample, then
/// repeatedly the output farthest from every chosen entry.
fn seed_codebook(
    params: &MlpParams,
    samples: &[(FrozenEmbedding, DVector<f64>)],
    k: usize,
    beta: f64,
    rng: &mut SampleRng,
) -> Result<Codebook, VqError> {
    let zs: Vec<DVector<f64>> =
        samples.iter().map(|(x, _)| mlp_forward(params, &x.vector).map(|r| r.0)).collect::<Result<_, _>>()?;
    let mut entries = vec![zs[rng.random_range(0..zs.len())].clone()];
    while entries.len() < k {
        let far = zs
            .iter()
            .map(|z| entries.iter().map(|e| (z - e).norm_squared()).fold(f64::INFINITY, f64::min))
            .enumerate()
            .fold((0, -1.0), |best, (i, d)| if d > best.1 { (i, d) } else { best });
        let mut e = zs[far.0].clone();
        if far.1 <= 0.0 {
            e += DVector::from_fn(e.len(), |_, _| 1e-3 * normal(&mut *rng));
        }
        entries.push(e);
    }
    Codebook::new(entries, beta)
}

/// Per-sample SGD on downstream MSE plus the VQ loss. Dead entries are
/// re-seeded to a recent latent as part of the parameter update.
pub fn train_toy_encoder(
    samples: &[(FrozenEmbedding, DVector<f64>)],
    cfg: &TrainConfig,
) -> Result<TrainOutput, VqError> {
    let distinct: Vec<&DVector<f64>> = samples.iter().fold(Vec::new(), |mut acc, (_, t)| {
        if !acc.contains(&t) {
            acc.push(t);
        }
        acc
    });
    if distinct.len() < 2 {
        return Err(VqError::Config("need at least two distinct targets".into()));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) || cfg.k == 0 || cfg.hidden == 0 || cfg.d_out == 0 {
        return Err(VqError::Config(format!("invalid training configuration {cfg:?}")));
    }
    let d_in = samples[0].0.vector.len();
    for (x, t) in samples {
        check_len("embedding", x.vector.len(), d_in)?;
        check_len("target", t.len(), cfg.d_out)?;
    }
    let mut rng = rng_from_seed(cfg.seed);
    let mut params = MlpParams::init(&mut rng, d_in, cfg.hidden, cfg.d_out);
    let mut codebook = seed_codebook(&params, samples, cfg.k, cfg.beta, &mut rng)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut recent: VecDeque<DVector<f64>> = VecDeque::with_capacity(64);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut iteration = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut losses = vec![0.0; samples.len()];
        for &i in &order {
            let (x, t) = &samples[i];
            let (z, _) = mlp_forward(&params, &x.vector)?;
            let (k, _) = codebook.quantize(&z)?;
            let step = step_with_index(&params, &codebook, &x.vector, t, k)?;
            let loss = step.loss();
            if !loss.is_finite() {
                return Err(VqError::Diverged { iteration, loss });
            }
            losses[i] = loss;
            if cfg.lr > 0.0 {
                params.add_scaled(&step.grads, -cfg.lr);
                *codebook.entry_mut(k) -= cfg.lr * &step.grad_code;
                if recent.len() == recent.capacity() {
                    recent.pop_front();
                }
                recent.push_back(step.z_e);
                for dead in codebook.dead_entries(cfg.dead_after) {
                    let pick = recent[rng.random_range(0..recent.len())].clone();
                    codebook.set_entry(dead, pick)?;
                }
            }
            iteration += 1;
        }
        trace.push(losses.iter().sum::<f64>() / samples.len() as f64);
    }
    Ok(TrainOutput { params, codebook, loss_trace: trace })
}

/// Fraction of samples whose code is shared only with samples of the same
/// label (majority label per code).
pub fn codebook_purity(indices: &[usize], labels: &[usize]) -> f64 {
    if indices.is_empty() {
        return 1.0;
    }
    let mut counts: std::collections::BTreeMap<usize, std::collections::BTreeMap<usize, usize>> = Default::default();
    for (&k, &l) in indices.iter().zip(labels) {
        *counts.entry(k).or_default().entry(l).or_default() += 1;
    }
    let majority: usize = counts.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    majority as f64 / indices.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EmbHeader {
    dim: usize,
    count: usize,
    texts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<usize>>,
}

/// Embeddings with optional integer labels, as stored in a `.emb` file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub embeddings: Vec<FrozenEmbedding>,
    pub labels: Option<Vec<usize>>,
}

impl EmbeddingSet {
    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, |e| e.vector.len())
    }
}

fn emb_err(path: &Path, reason: impl Into<String>) -> VqError {
    VqError::Embeddings { path: path.display().to_string(), reason: reason.into() }
}

fn emb_io(path: &Path, source: std::io::Error) -> VqError {
    VqError::Io { path: path.display().to_string(), source }
}

/// One JSON header line `{"dim", "count", "texts", "labels"?}`, a newline,
/// then count × dim little-endian f32 values.
pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<(), VqError> {
    let dim = set.dim();
    let header = EmbHeader {
        dim,
        count: set.embeddings.len(),
        texts: set.embeddings.iter().map(|e| e.source_text.clone()).collect(),
        labels: set.labels.clone(),
    };
    let mut buf = serde_json::to_vec(&header).map_err(|e| emb_err(path, e.to_string()))?;
    buf.push(b'\n');
    for e in &set.embeddings {
        check_len("embedding", e.vector.len(), dim)?;
        for &v in e.vector.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| emb_io(path, e))?;
    f.write_all(&buf).map_err(|e| emb_io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet, VqError> {
    let f = std::fs::File::open(path).map_err(|e| emb_io(path, e))?;
    let mut r = BufReader::new(f);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| emb_io(path, e))?;
    let h: EmbHeader = serde_json::from_str(line.trim_end()).map_err(|e| emb_err(path, format!("header: {e}")))?;
    if h.texts.len() != h.count {
        return Err(emb_err(path, format!("{} texts for {} embeddings", h.texts.len(), h.count)));
    }
    if h.labels.as_ref().is_some_and(|l| l.len() != h.count) {
        return Err(emb_err(path, "label count does not match embedding count"));
    }
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| emb_io(path, e))?;
    if raw.len() != h.count * h.dim * 4 {
        return Err(emb_err(path, format!("expected {} data bytes, found {}", h.count * h.dim * 4, raw.len())));
    }
    let values: Vec<f64> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    if !values.iter().all(|v| v.is_finite()) {
        return Err(emb_err(path, "non-finite value"));
    }
    let embeddings = h
        .texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| FrozenEmbedding {
            vector: DVector::from_column_slice(&values[i * h.dim..(i + 1) * h.dim]),
            source_text: t,
        })
        .collect();
    Ok(EmbeddingSet { embeddings, labels: h.labels })
}

const TOY_TEXTS: [[&str; 8]; 2] = [
    [
        "left femur",
        "the left thigh bone",
        "femur on the left side",
        "segment the left femur",
        "left femoral shaft",
        "thigh bone, left",
        "the bone next to the left hip",
        "left upper leg bone",
    ],
    [
        "liver",
        "the liver",
        "hepatic tissue",
        "segment the liver",
        "liver region",
        "the large organ in the right upper abdomen",
        "hepar",
        "liver parenchyma",
    ],
];

/// Seed and width of the shipped `assets/toy_prompts.emb`.
pub const TOY_SEED: u64 = 0;
pub const TOY_DIM: usize = 64;

/// Two well-separated clusters of unit-scale embeddings with labels 0/1,
/// standing in for frozen text embeddings of two objects.
pub fn toy_embeddings(seed: u64, dim: usize) -> EmbeddingSet {
    let mut rng = rng_from_seed(seed);
    let centers: Vec<DVector<f64>> = (0..2)
        .map(|_| {
            let v = DVector::from_fn(dim, |_, _| normal(&mut rng));
            v.normalize()
        })
        .collect();
    let noise = 0.15 / (dim as f64).sqrt();
    let mut embeddings = Vec::new();
    let mut labels = Vec::new();
    for (label, texts) in TOY_TEXTS.iter().enumerate() {
        for t in texts {
            let v = centers[label].map(|c| c + noise * normal(&mut rng));
            // round through f32 so the in-memory set equals its file form
            let v = v.map(|x| x as f32 as f64);
            embeddings.push(FrozenEmbedding { vector: v, source_text: t.to_string() });
            labels.push(label);
        }
    }
    EmbeddingSet { embeddings, labels: Some(labels) }
}

/// Fixed per-label target tokens for the toy task.
pub fn toy_targets(n_labels: usize, d: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = rng_from_seed(seed);
    (0..n_labels).map(|_| DVector::from_fn(d, |_, _| normal(&mut rng))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub purity: f64,
    pub codes_used: usize,
    pub loss_trace: Vec<f64>,
}

/// Trains on a labelled embedding set with per-label targets and reports
/// the loss trace and the purity of the final code assignment.
pub fn run_toy_task(set: &EmbeddingSet, cfg: &TrainConfig) -> Result<ToyReport, VqError> {
    let labels = set.labels.clone().ok_or_else(|| VqError::Config("embedding set has no labels".into()))?;
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);
    let targets = toy_targets(n_labels, cfg.d_out, cfg.seed ^ 0x7a7a);
    let samples: Vec<(FrozenEmbedding, DVector<f64>)> =
        set.embeddings.iter().zip(&labels).map(|(e, &l)| (e.clone(), targets[l].clone())).collect();
    let out = train_toy_encoder(&samples, cfg)?;
    let indices: Vec<usize> = samples
        .iter()
        .map(|(x, _)| mlp_forward(&out.params, &x.vector).and_then(|(z, _)| out.codebook.nearest(&z)))
        .collect::<Result<_, _>>()?;
    let used: std::collections::BTreeSet<usize> = indices.iter().copied().collect();
    Ok(ToyReport {
        initial_loss: out.loss_trace[0],
        final_loss: *out.loss_trace.last().unwrap(),
        purity: codebook_purity(&indices, &labels),
        codes_used: used.len(),
        loss_trace: out.loss_trace,
    })
}
