//! Postmortem store and exact nearest-neighbour retrieval.

mod embed;

use std::collections::HashSet;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use embed::{
    cosine_distance, djb2, embed_deterministic, DeterministicEmbedder, Embedder, EmbedderKind, EmbeddingError,
    EmbeddingVector, LexicalEmbedder, RecordedEmbedder, XorShift64Star, DEFAULT_DIMENSION, ZERO_SEED_REMAP,
};

use crate::scenario::FRAMEWORK_ERROR;
use crate::tools::{Tool, ToolCall};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Resolved,
    Regressed,
    Inconclusive,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Resolved => "resolved",
            Outcome::Regressed => "regressed",
            Outcome::Inconclusive => "inconclusive",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "resolved" => Ok(Outcome::Resolved),
            "regressed" => Ok(Outcome::Regressed),
            "inconclusive" => Ok(Outcome::Inconclusive),
            _ => Err(format!("unknown outcome `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub at_tick: u64,
    pub category: String,
    pub confidence: f64,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Postmortem {
    pub id: String,
    pub scenario_id: String,
    pub created_tick: u64,
    pub primary_category: String,
    #[serde(default)]
    pub secondary_categories: Vec<String>,
    pub narrative: String,
    pub actions_taken: Vec<Tool>,
    /// Mutating calls as issued, so a later agent can replay them.
    #[serde(default)]
    pub remediation: Vec<ToolCall>,
    pub outcome: Outcome,
    #[serde(default)]
    pub hypotheses: Vec<HypothesisRecord>,
    pub embedding: EmbeddingVector,
    pub arm: String,
    pub run_seed: u64,
}

impl Postmortem {
    pub fn is_framework_error(&self) -> bool {
        self.primary_category == FRAMEWORK_ERROR
    }
}

/// The text a postmortem is embedded from.
pub fn embedding_text(narrative: &str, category: &str, actions: &[Tool]) -> String {
    let names: Vec<&str> = actions.iter().map(|t| t.name()).collect();
    format!("{narrative}\n{category}\n{}", names.join(" "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PoolCap {
    Limited(usize),
    Unlimited,
}

impl PoolCap {
    pub fn limit(self) -> Option<usize> {
        match self {
            PoolCap::Limited(n) => Some(n),
            PoolCap::Unlimited => None,
        }
    }
}

impl fmt::Display for PoolCap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolCap::Limited(n) => write!(f, "{n}"),
            PoolCap::Unlimited => f.write_str("unlimited"),
        }
    }
}

impl FromStr for PoolCap {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unlimited" | "" => Ok(PoolCap::Unlimited),
            _ => match s.parse::<usize>() {
                Ok(n) if n > 0 => Ok(PoolCap::Limited(n)),
                _ => Err(format!("pool cap must be a positive integer or `unlimited`, got `{s}`")),
            },
        }
    }
}

impl Serialize for PoolCap {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            PoolCap::Limited(n) => serializer.serialize_u64(*n as u64),
            PoolCap::Unlimited => serializer.serialize_str("unlimited"),
        }
    }
}

impl<'de> Deserialize<'de> for PoolCap {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::N(n) => PoolCap::from_str(&n.to_string()),
            Raw::S(s) => PoolCap::from_str(&s),
        }
        .map_err(serde::de::Error::custom)
    }
}

pub const DEFAULT_MAX_DISTANCE: f64 = 0.40;
pub const DEFAULT_K: usize = 5;

pub const ENV_EMBEDDER: &str = "BREAKAGE_EMBEDDER";
pub const ENV_MAX_DISTANCE: &str = "BREAKAGE_RETRIEVAL_MAX_DISTANCE";
pub const ENV_POOL_CAP: &str = "BREAKAGE_RETRIEVAL_POOL_CAP";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    #[serde(default = "default_max_distance")]
    pub max_distance: f64,
    #[serde(default = "default_pool_cap")]
    pub pool_cap: PoolCap,
    #[serde(default = "default_k")]
    pub k: usize,
    pub embedder: EmbedderKind,
}

fn default_max_distance() -> f64 {
    DEFAULT_MAX_DISTANCE
}
fn default_pool_cap() -> PoolCap {
    PoolCap::Unlimited
}
fn default_k() -> usize {
    DEFAULT_K
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            max_distance: DEFAULT_MAX_DISTANCE,
            pool_cap: PoolCap::Unlimited,
            k: DEFAULT_K,
            embedder: EmbedderKind::External,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=2.0).contains(&self.max_distance) {
            return Err(format!("max_distance {} outside [0, 2]", self.max_distance));
        }
        if self.k == 0 {
            return Err("k must be positive".into());
        }
        if let PoolCap::Limited(cap) = self.pool_cap {
            if self.k > cap {
                return Err(format!("k={} exceeds pool_cap={cap}", self.k));
            }
        }
        Ok(())
    }

    /// Layers the environment over `self`. When a pool cap smaller than `k`
    /// comes in, `k` is lowered to it.
    pub fn with_env(mut self, get: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        if let Some(v) = get(ENV_EMBEDDER) {
            self.embedder = v.parse()?;
        }
        if let Some(v) = get(ENV_MAX_DISTANCE) {
            self.max_distance = v.parse().map_err(|_| format!("{ENV_MAX_DISTANCE}: not a number: `{v}`"))?;
        }
        if let Some(v) = get(ENV_POOL_CAP) {
            self.pool_cap = v.parse()?;
            if let PoolCap::Limited(cap) = self.pool_cap {
                self.k = self.k.min(cap);
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn from_env() -> Result<Self, String> {
        RetrievalConfig::default().with_env(|name| std::env::var(name).ok())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("duplicate postmortem id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("store file {path}: {reason}")]
    File { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub postmortem: Postmortem,
    pub distance: f64,
}

/// Append-only postmortem log. With a backing file every append is written
/// through as one JSON line before it becomes visible to retrieval.
#[derive(Debug)]
pub struct ExperienceStore {
    dimension: usize,
    rows: Vec<Postmortem>,
    ids: HashSet<String>,
    file: Option<(PathBuf, File)>,
}

impl ExperienceStore {
    pub fn in_memory(dimension: usize) -> Self {
        ExperienceStore { dimension, rows: Vec::new(), ids: HashSet::new(), file: None }
    }

    /// Opens (or creates) a newline-delimited store file.
    pub fn open(path: &Path, dimension: usize) -> Result<Self, StoreError> {
        let ferr = |reason: String| StoreError::File { path: path.to_path_buf(), reason };
        let mut store = ExperienceStore::in_memory(dimension);
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(|e| ferr(e.to_string()))?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| ferr(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let pm: Postmortem =
                    serde_json::from_str(&line).map_err(|e| ferr(format!("line {}: {e}", i + 1)))?;
                store.insert(pm)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| ferr(e.to_string()))?;
        store.file = Some((path.to_path_buf(), file));
        Ok(store)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn postmortems(&self) -> &[Postmortem] {
        &self.rows
    }

    fn insert(&mut self, pm: Postmortem) -> Result<(), StoreError> {
        if pm.embedding.dimension() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch(pm.embedding.dimension(), self.dimension).into());
        }
        if self.ids.contains(&pm.id) {
            return Err(StoreError::DuplicateId(pm.id));
        }
        self.ids.insert(pm.id.clone());
        self.rows.push(pm);
        Ok(())
    }

    pub fn store_postmortem(&mut self, pm: Postmortem) -> Result<(), StoreError> {
        if pm.embedding.dimension() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch(pm.embedding.dimension(), self.dimension).into());
        }
        if self.ids.contains(&pm.id) {
            return Err(StoreError::DuplicateId(pm.id));
        }
        if let Some((path, file)) = &mut self.file {
            let line = serde_json::to_string(&pm).expect("postmortems serialize");
            writeln!(file, "{line}")
                .and_then(|_| file.flush())
                .map_err(|e| StoreError::File { path: path.clone(), reason: e.to_string() })?;
        }
        self.insert(pm)
    }

    /// Embeds `query_text` with the configured embedder, then [`Self::retrieve_vector`].
    pub fn retrieve(&self, query_text: &str, cfg: &RetrievalConfig) -> Vec<Retrieved> {
        let query = cfg.embedder.instance(self.dimension).embed(query_text);
        self.retrieve_vector(&query, cfg)
    }

    /// Exact scan, then in this order: keep the `pool_cap` nearest, drop
    /// those beyond `max_distance`, keep the first `k`. Ties break on id.
    /// Framework-error rows are never candidates.
    pub fn retrieve_vector(&self, query: &EmbeddingVector, cfg: &RetrievalConfig) -> Vec<Retrieved> {
        if query.dimension() != self.dimension {
            return Vec::new();
        }
        let mut scored: Vec<(f64, &Postmortem)> = self
            .rows
            .iter()
            .filter(|pm| !pm.is_framework_error())
            .map(|pm| (cosine_distance(query, &pm.embedding).expect("dimensions checked on insert"), pm))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
        if let Some(cap) = cfg.pool_cap.limit() {
            scored.truncate(cap);
        }
        scored
            .into_iter()
            .filter(|(d, _)| *d <= cfg.max_distance)
            .take(cfg.k)
            .map(|(distance, pm)| Retrieved { postmortem: pm.clone(), distance })
            .collect()
    }
}

#[cfg(test)]
mod tests;
