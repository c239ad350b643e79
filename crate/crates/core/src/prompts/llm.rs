//! Optional external text-augmentation endpoint.
//!
//! Contract: `POST {"description": str, "count": int}` returns
//! `{"variants": [str]}`. Any failure yields no variants; templates remain
//! the baseline.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;

pub const DEFAULT_CONCURRENCY: usize = 4;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(20);

/// Something that can produce variants of a description.
pub trait VariantSource: Send + Sync {
    fn fetch(&self, description: &str, count: usize) -> Result<Vec<String>, String>;
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LlmConfig {
    pub url: Option<String>,
    pub key: Option<String>,
    pub offline: bool,
}

fn truthy(v: &str) -> bool {
    matches!(v.trim().to_ascii_lowercase().as_str(), "1" | "true" | "yes" | "on")
}

impl LlmConfig {
    /// `FLUOROFORGE_LLM_URL`, `FLUOROFORGE_LLM_KEY`, `FLUOROFORGE_OFFLINE`.
    pub fn from_env() -> Self {
        let get = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        Self {
            url: get("FLUOROFORGE_LLM_URL"),
            key: get("FLUOROFORGE_LLM_KEY"),
            offline: get("FLUOROFORGE_OFFLINE").is_some_and(|v| truthy(&v)),
        }
    }
}

/// Blocking HTTP implementation of the endpoint contract.
pub struct HttpVariantSource {
    url: String,
    key: Option<String>,
    agent: ureq::Agent,
}

impl HttpVariantSource {
    pub fn new(url: &str, key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { url: url.to_string(), key, agent }
    }
}

#[derive(Deserialize)]
struct VariantsResponse {
    variants: Vec<String>,
}

impl VariantSource for HttpVariantSource {
    fn fetch(&self, description: &str, count: usize) -> Result<Vec<String>, String> {
        let mut req = self.agent.post(&self.url);
        if let Some(k) = &self.key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req
            .send_json(serde_json::json!({ "description": description, "count": count }))
            .map_err(|e| e.to_string())?;
        let body: VariantsResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        Ok(body.variants)
    }
}

/// Counting semaphore bounding in-flight requests across all workers.
struct Budget {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Budget {
    fn acquire(&self) -> BudgetGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        BudgetGuard(self)
    }
}

struct BudgetGuard<'a>(&'a Budget);

impl Drop for BudgetGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Shared client: offline switch, pool-wide request budget, cleaning.
pub struct LlmClient {
    source: Option<Arc<dyn VariantSource>>,
    offline: bool,
    budget: Budget,
    calls: AtomicUsize,
}

impl LlmClient {
    pub fn new(source: Option<Arc<dyn VariantSource>>, offline: bool, concurrency: usize) -> Self {
        Self {
            source,
            offline,
            budget: Budget { free: Mutex::new(concurrency.max(1)), cv: Condvar::new() },
            calls: AtomicUsize::new(0),
        }
    }

    /// HTTP client from the environment; `offline` (or the environment's
    /// offline switch) disables it.
    pub fn from_config(cfg: &LlmConfig, offline: bool) -> Self {
        let source = cfg
            .url
            .as_deref()
            .map(|u| Arc::new(HttpVariantSource::new(u, cfg.key.clone(), DEFAULT_TIMEOUT)) as Arc<dyn VariantSource>);
        Self::new(source, offline || cfg.offline, DEFAULT_CONCURRENCY)
    }

    pub fn disabled() -> Self {
        Self::new(None, true, 1)
    }

    pub fn is_active(&self) -> bool {
        !self.offline && self.source.is_some()
    }

    /// Requests issued so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Up to `count` trimmed, non-empty, deduplicated variants; empty on
    /// any failure or when disabled.
    pub fn fetch_llm_variants(&self, canonical: &str, count: usize) -> Vec<String> {
        let Some(source) = self.source.as_ref().filter(|_| !self.offline) else { return Vec::new() };
        let _permit = self.budget.acquire();
        self.calls.fetch_add(1, Ordering::Relaxed);
        match source.fetch(canonical, count) {
            Ok(raw) => {
                let mut seen = BTreeSet::new();
                raw.into_iter()
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty() && seen.insert(s.clone()))
                    .take(count)
                    .collect()
            }
            Err(e) => {
                log::warn!("text augmentation endpoint failed for '{canonical}': {e}");
                Vec::new()
            }
        }
    }
}
