use ndarray::Array2;

use crate::error::{Error, Result};
use crate::text::tokenize;

/// Maps a sentence to a fixed-size vector. Implementations must be
/// deterministic: equal text yields an equal vector.
pub trait SentenceEmbedder: Send + Sync {
    /// Model identifier recorded in index manifests.
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Vec<f32>>;
}

/// Embeds `texts` row by row into a `(len, dim)` matrix.
pub fn embed<S: AsRef<str>>(embedder: &dyn SentenceEmbedder, texts: &[S]) -> Result<Array2<f32>> {
    let dim = embedder.dim();
    let mut data = Vec::with_capacity(texts.len() * dim);
    for (i, text) in texts.iter().enumerate() {
        let text = text.as_ref();
        if text.trim().is_empty() {
            return Err(Error::Validation(format!("text {i} is empty")));
        }
        let row = embedder.embed_text(text)?;
        if row.len() != dim {
            return Err(Error::Validation(format!(
                "embedder returned {} values for dim {dim}",
                row.len()
            )));
        }
        data.extend(row);
    }
    Ok(Array2::from_shape_vec((texts.len(), dim), data).expect("row-major shape"))
}

/// Feature-hashing sentence embedder.
///
/// Each lowercased word contributes weight 1 and each of its character
/// trigrams (with boundary marks) weight 0.5 to a signed bucket chosen by
/// FNV-1a; the result is L2-normalized. Sentences sharing words land close
/// together, which is what nearest-neighbour label lookup needs.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    id: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        HashingEmbedder {
            dim,
            id: format!("hashing-{dim}"),
        }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder::new(384)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl SentenceEmbedder for HashingEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        let mut v = vec![0f64; self.dim];
        let mut add = |feature: &str, weight: f64| {
            let h = fnv1a(feature.as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % self.dim as u64) as usize] += sign * weight;
        };
        for word in tokenize(text) {
            add(&format!("w:{word}"), 1.0);
            let chars: Vec<char> = format!("<{word}>").chars().collect();
            for tri in chars.windows(3) {
                add(&format!("c:{}", tri.iter().collect::<String>()), 0.5);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v
            .into_iter()
            .map(|x| if norm > 0.0 { (x / norm) as f32 } else { 0.0 })
            .collect())
    }
}
