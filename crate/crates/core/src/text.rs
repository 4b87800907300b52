//! Frozen text embedders for fixture labels and action descriptions.

use std::collections::HashMap;
use std::path::Path;

use crate::config::EmbedderConfig;
use crate::error::{GmtError, Result};

/// String → fixed-length vector. Implementations must be deterministic.
pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Signed character-trigram feature hashing, L2-normalized.
///
/// Text is lowercased and padded with a leading and trailing space so word
/// boundaries contribute their own trigrams.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        Self { dim }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl TextEmbedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let normalized: Vec<char> = format!(" {} ", text.trim().to_lowercase())
            .chars()
            .collect();
        let mut v = vec![0.0; self.dim];
        let mut buf = [0u8; 16];
        for w in normalized.windows(3) {
            let mut len = 0;
            for c in w {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let h = fnv1a(&buf[..len]);
            let slot = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
            v[slot] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

/// Vectors produced offline by an external text encoder, looked up by exact
/// string.
#[derive(Debug, Clone)]
pub struct TableEmbedder {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl TableEmbedder {
    pub fn new(table: HashMap<String, Vec<f64>>) -> Result<Self> {
        let dim = table
            .values()
            .next()
            .map(Vec::len)
            .ok_or_else(|| GmtError::InvalidInput("embedding table is empty".into()))?;
        if dim == 0 || table.values().any(|v| v.len() != dim) {
            return Err(GmtError::InvalidInput(
                "embedding table vectors must share one non-zero length".into(),
            ));
        }
        Ok(Self { dim, table })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GmtError::io(path, e))?;
        let table: HashMap<String, Vec<f64>> =
            serde_json::from_str(&text).map_err(|e| GmtError::schema(path, e.to_string()))?;
        Self::new(table)
    }
}

impl TextEmbedder for TableEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| GmtError::InvalidInput(format!("no embedding for {text:?}")))
    }
}

pub fn build_embedder(config: &EmbedderConfig, dim: usize) -> Result<Box<dyn TextEmbedder>> {
    match config {
        EmbedderConfig::Fallback => Ok(Box::new(HashingEmbedder::new(dim))),
        EmbedderConfig::External { table } => {
            let e = TableEmbedder::load(table)?;
            if e.dim() != dim {
                return Err(GmtError::ConfigMismatch(format!(
                    "external embeddings have {} dims, model expects {dim}",
                    e.dim()
                )));
            }
            Ok(Box::new(e))
        }
    }
}
