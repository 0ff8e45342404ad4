use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

pub const DEFAULT_DIMENSION: usize = 1024;

/// Substituted for a zero seed, which would lock xorshift at zero forever.
pub const ZERO_SEED_REMAP: u64 = 0x9E37_79B9_7F4A_7C15;
const XORSHIFT_STAR_MULT: u64 = 0x2545_F491_4F6C_DD1D;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("bad embedding encoding: {0}")]
    Encoding(String),
    #[error("embedding contains non-finite values")]
    NonFinite,
}

impl EmbeddingVector {
    /// L2-normalizes `values`; an all-zero input stays zero and unnormalized.
    pub fn normalize(values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return EmbeddingVector { values: values.into_iter().map(|v| v as f32).collect(), normalized: false };
        }
        EmbeddingVector {
            values: values.into_iter().map(|v| (v / norm) as f32).collect(),
            normalized: true,
        }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    /// Base64 of the little-endian f32 bytes.
    pub fn to_base64(&self) -> String {
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        STANDARD.encode(bytes)
    }

    pub fn from_base64(s: &str) -> Result<Self, EmbeddingError> {
        let bytes = STANDARD.decode(s).map_err(|e| EmbeddingError::Encoding(e.to_string()))?;
        if bytes.len() % 4 != 0 {
            return Err(EmbeddingError::Encoding(format!("{} bytes is not a whole number of f32s", bytes.len())));
        }
        let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        let mut v = EmbeddingVector { values, normalized: false };
        v.normalized = (v.norm() - 1.0).abs() < 1e-4;
        Ok(v)
    }
}

impl Serialize for EmbeddingVector {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_base64())
    }
}

impl<'de> Deserialize<'de> for EmbeddingVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        EmbeddingVector::from_base64(&s).map_err(serde::de::Error::custom)
    }
}

/// 1 − a·b, clamped to [0, 2] against f32 rounding.
pub fn cosine_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dimension() != b.dimension() {
        return Err(EmbeddingError::DimensionMismatch(a.dimension(), b.dimension()));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    Ok((1.0 - dot).clamp(0.0, 2.0))
}

pub fn djb2(bytes: &[u8]) -> u64 {
    bytes.iter().fold(5381u64, |h, &b| h.wrapping_mul(33) ^ u64::from(b))
}

/// xorshift64* generator.
#[derive(Debug, Clone)]
pub struct XorShift64Star(u64);

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        XorShift64Star(if seed == 0 { ZERO_SEED_REMAP } else { seed })
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(XORSHIFT_STAR_MULT)
    }

    /// Uniform in [-1, 1) from the top 53 bits.
    pub fn next_signed_unit(&mut self) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        u * 2.0 - 1.0
    }
}

/// Hash-seeded, reproducible and semantically random.
pub fn embed_deterministic(text: &str, dimension: usize) -> EmbeddingVector {
    let mut rng = XorShift64Star::new(djb2(text.as_bytes()));
    EmbeddingVector::normalize((0..dimension).map(|_| rng.next_signed_unit()).collect())
}

pub trait Embedder {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> EmbeddingVector;
}

#[derive(Debug, Clone, Copy)]
pub struct DeterministicEmbedder {
    pub dimension: usize,
}

impl Embedder for DeterministicEmbedder {
    fn name(&self) -> &str {
        "deterministic"
    }
    fn dimension(&self) -> usize {
        self.dimension
    }
    fn embed(&self, text: &str) -> EmbeddingVector {
        embed_deterministic(text, self.dimension)
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "has", "in", "is", "it", "its", "of",
    "on", "or", "so", "the", "to", "too", "was", "were", "with",
];

/// Local stand-in for a semantic embedding service: signed feature hashing of
/// lower-cased word unigrams and bigrams, log-scaled term frequency.
#[derive(Debug, Clone, Copy)]
pub struct LexicalEmbedder {
    pub dimension: usize,
}

impl LexicalEmbedder {
    pub fn tokens(text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_ascii_lowercase)
            .filter(|t| !STOPWORDS.contains(&t.as_str()))
            .collect()
    }
}

impl Embedder for LexicalEmbedder {
    fn name(&self) -> &str {
        "external"
    }
    fn dimension(&self) -> usize {
        self.dimension
    }
    fn embed(&self, text: &str) -> EmbeddingVector {
        let tokens = Self::tokens(text);
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for t in &tokens {
            *counts.entry(t.clone()).or_default() += 1;
        }
        for pair in tokens.windows(2) {
            *counts.entry(format!("{} {}", pair[0], pair[1])).or_default() += 1;
        }
        let mut v = vec![0.0f64; self.dimension];
        for (feature, n) in counts {
            let h = djb2(feature.as_bytes());
            let bucket = (h % self.dimension as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign * (1.0 + f64::from(n).ln());
        }
        EmbeddingVector::normalize(v)
    }
}

/// Replays vectors recorded from a real embedding service; unknown text falls
/// back to an inner embedder.
pub struct RecordedEmbedder<E> {
    pub recorded: BTreeMap<String, EmbeddingVector>,
    pub fallback: E,
}

impl<E: Embedder> Embedder for RecordedEmbedder<E> {
    fn name(&self) -> &str {
        "external"
    }
    fn dimension(&self) -> usize {
        self.fallback.dimension()
    }
    fn embed(&self, text: &str) -> EmbeddingVector {
        self.recorded.get(text).cloned().unwrap_or_else(|| self.fallback.embed(text))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Deterministic,
    External,
}

impl EmbedderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbedderKind::Deterministic => "deterministic",
            EmbedderKind::External => "external",
        }
    }

    pub fn instance(self, dimension: usize) -> Box<dyn Embedder + Send + Sync> {
        match self {
            EmbedderKind::Deterministic => Box::new(DeterministicEmbedder { dimension }),
            EmbedderKind::External => Box::new(LexicalEmbedder { dimension }),
        }
    }
}

impl fmt::Display for EmbedderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmbedderKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deterministic" => Ok(EmbedderKind::Deterministic),
            "external" => Ok(EmbedderKind::External),
            _ => Err(format!("unknown embedder `{s}` (deterministic|external)")),
        }
    }
}
