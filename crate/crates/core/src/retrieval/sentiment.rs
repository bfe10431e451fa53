use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{embed, SentenceEmbedder};
use crate::error::{Error, Result};
use crate::label::SentimentLabel;

/// One vector per label, initialized to the mean embedding of that label's
/// training examples and then trained with the classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentEmbeddingTable {
    pub table: BTreeMap<SentimentLabel, Vec<f32>>,
    pub dim: usize,
    pub trainable: bool,
}

impl SentimentEmbeddingTable {
    /// Per-label row means of `vectors`. A label without rows gets the global
    /// mean and a warning.
    pub fn from_embeddings(
        vectors: &Array2<f32>,
        labels: &[SentimentLabel],
        label_set: &[SentimentLabel],
    ) -> Result<Self> {
        if vectors.nrows() != labels.len() {
            return Err(Error::Validation(format!(
                "{} vectors for {} labels",
                vectors.nrows(),
                labels.len()
            )));
        }
        if vectors.nrows() == 0 {
            return Err(Error::Empty("no training embeddings".into()));
        }
        let dim = vectors.ncols();
        let mut sums: BTreeMap<SentimentLabel, (Vec<f64>, usize)> = label_set
            .iter()
            .map(|l| (*l, (vec![0.0; dim], 0)))
            .collect();
        let mut global = vec![0.0f64; dim];
        for (row, label) in vectors.outer_iter().zip(labels) {
            let (sum, count) = sums
                .get_mut(label)
                .ok_or_else(|| Error::LabelMismatch(format!("label `{label}` outside label set")))?;
            for ((s, g), v) in sum.iter_mut().zip(global.iter_mut()).zip(row.iter()) {
                *s += *v as f64;
                *g += *v as f64;
            }
            *count += 1;
        }
        let n = vectors.nrows() as f64;
        let table = sums
            .into_iter()
            .map(|(label, (sum, count))| {
                let mean = if count == 0 {
                    tracing::warn!(%label, "no training examples; sentiment embedding set to global mean");
                    global.iter().map(|g| (g / n) as f32).collect()
                } else {
                    sum.iter().map(|s| (s / count as f64) as f32).collect()
                };
                (label, mean)
            })
            .collect();
        Ok(SentimentEmbeddingTable {
            table,
            dim,
            trainable: true,
        })
    }

    pub fn get(&self, label: SentimentLabel) -> Option<&[f32]> {
        self.table.get(&label).map(Vec::as_slice)
    }
}

pub fn init_sentiment_embeddings<S: AsRef<str>>(
    embedder: &dyn SentenceEmbedder,
    train_examples: &[(S, SentimentLabel)],
    label_set: &[SentimentLabel],
) -> Result<SentimentEmbeddingTable> {
    let texts: Vec<&str> = train_examples.iter().map(|(t, _)| t.as_ref()).collect();
    let labels: Vec<SentimentLabel> = train_examples.iter().map(|(_, l)| *l).collect();
    SentimentEmbeddingTable::from_embeddings(&embed(embedder, &texts)?, &labels, label_set)
}
