//! Embedding providers and cosine similarity.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::http::TextEndpoint;
use crate::model::Embedding;

pub const DEFAULT_DIMENSION: usize = 256;

/// Produces unit-norm vectors of a fixed dimension. Identical text must
/// yield identical vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding>;
}

/// Cosine similarity of two equal-length, nonzero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::validation("cosine of a zero vector"));
    }
    let c = dot(a, b) / (na * nb);
    Ok(c.clamp(-1.0, 1.0))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// 64-bit FNV-1a. Stable across platforms, used for feature hashing.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Signed feature-hashing bag-of-tokens embedder.
#[derive(Clone, Debug)]
pub struct StubEmbedder {
    dimension: usize,
}

impl StubEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        StubEmbedder { dimension }
    }

    /// Vector used for text without tokens.
    pub fn canonical_empty(&self) -> Embedding {
        let mut v = vec![0.0; self.dimension];
        v[0] = 1.0;
        Embedding::normalized(v).expect("unit basis vector")
    }
}

impl Default for StubEmbedder {
    fn default() -> Self {
        StubEmbedder::new(DEFAULT_DIMENSION)
    }
}

impl EmbeddingProvider for StubEmbedder {
    fn id(&self) -> &str {
        "stub-hash"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let mut v = vec![0.0; self.dimension];
        for token in tokenize(text) {
            let h = fnv1a(token.as_bytes());
            let bucket = (h % self.dimension as u64) as usize;
            let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
            v[bucket] += sign;
        }
        if v.iter().all(|x| *x == 0.0) {
            return Ok(self.canonical_empty());
        }
        Embedding::normalized(v)
    }
}

/// Provider backed by an HTTP endpoint returning `D` comma-separated floats.
#[derive(Clone, Debug)]
pub struct HttpEmbedder {
    endpoint: TextEndpoint,
    dimension: usize,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, dimension: usize) -> Self {
        HttpEmbedder {
            endpoint: TextEndpoint::new(url),
            dimension,
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn id(&self) -> &str {
        "http"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let body = self.endpoint.post("embedder", text)?;
        let values = body
            .trim()
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::provider("embedder", format!("unparseable vector: {e}")))?;
        if values.len() != self.dimension {
            return Err(Error::provider(
                "embedder",
                format!("expected {} values, got {}", self.dimension, values.len()),
            ));
        }
        Embedding::normalized(values).map_err(|e| Error::provider("embedder", e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    vector: Vec<f64>,
}

/// Content-addressed embedding cache keyed by provider id and text hash.
pub struct CachedEmbedder<P> {
    inner: P,
    entries: Mutex<HashMap<String, Embedding>>,
    fresh: Mutex<Vec<String>>,
    path: Option<PathBuf>,
}

impl<P: EmbeddingProvider> CachedEmbedder<P> {
    pub fn new(inner: P) -> Self {
        CachedEmbedder {
            inner,
            entries: Mutex::new(HashMap::new()),
            fresh: Mutex::new(Vec::new()),
            path: None,
        }
    }

    /// Loads (or starts) a cache file. Missing files are fine.
    pub fn open(inner: P, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(fs::File::open(&path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheLine = serde_json::from_str(&line)?;
                entries.insert(rec.key, Embedding::from_unit(rec.vector)?);
            }
        }
        Ok(CachedEmbedder {
            inner,
            entries: Mutex::new(entries),
            fresh: Mutex::new(Vec::new()),
            path: Some(path),
        })
    }

    pub fn key(&self, text: &str) -> String {
        let digest = Sha256::digest(text.as_bytes());
        format!("{}:{}", self.inner.id(), hex::encode(digest))
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends entries computed since the last flush to the cache file.
    pub fn flush(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let keys = std::mem::take(&mut *self.fresh.lock().unwrap());
        if keys.is_empty() {
            return Ok(());
        }
        let entries = self.entries.lock().unwrap();
        let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        for key in keys {
            let vector = entries[&key].as_slice().to_vec();
            writeln!(file, "{}", serde_json::to_string(&CacheLine { key, vector })?)?;
        }
        Ok(())
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedEmbedder<P> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let key = self.key(text);
        if let Some(e) = self.entries.lock().unwrap().get(&key) {
            return Ok(e.clone());
        }
        let e = self.inner.embed(text)?;
        let mut entries = self.entries.lock().unwrap();
        if entries.insert(key.clone(), e.clone()).is_none() {
            self.fresh.lock().unwrap().push(key);
        }
        Ok(e)
    }
}

impl EmbeddingProvider for Box<dyn EmbeddingProvider> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        (**self).embed(text)
    }
}
