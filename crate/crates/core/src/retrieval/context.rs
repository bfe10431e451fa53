use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{embed, build_index, Neighbor, NeighborIndex, SentenceEmbedder, SentimentEmbeddingTable};
use crate::encoding::{EncodedExample, Task};
use crate::error::{Error, Result};
use crate::label::SentimentLabel;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalOptions {
    /// Let a training example retrieve itself (leaks its gold label).
    #[serde(default)]
    pub allow_self_match: bool,
    /// Embed only the target segment of each window instead of the full
    /// window text.
    #[serde(default)]
    pub embed_target_only: bool,
}

/// Everything needed to attach a nearest-neighbour label to an example:
/// embedder, index over the training examples, and the initial Sentiment
/// Embedding table.
#[derive(Clone)]
pub struct RetrievalContext {
    embedder: Arc<dyn SentenceEmbedder>,
    index: NeighborIndex,
    sentiment_embeddings: SentimentEmbeddingTable,
    task: Task,
    labels: Vec<SentimentLabel>,
    sep: String,
    options: RetrievalOptions,
}

impl std::fmt::Debug for RetrievalContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RetrievalContext")
            .field("embedder", &self.embedder.id())
            .field("rows", &self.index.len())
            .field("task", &self.task)
            .field("options", &self.options)
            .finish()
    }
}

impl RetrievalContext {
    /// Indexes `train` (all of the same task) and initializes the Sentiment
    /// Embeddings from the same vectors.
    pub fn build(
        embedder: Arc<dyn SentenceEmbedder>,
        train: &[EncodedExample],
        labels: &[SentimentLabel],
        sep: &str,
        options: RetrievalOptions,
    ) -> Result<Self> {
        let task = train
            .first()
            .map(|e| e.task)
            .ok_or_else(|| Error::Empty("no training examples to index".into()))?;
        if train.iter().any(|e| e.task != task) {
            return Err(Error::Validation("training examples mix tasks".into()));
        }
        let texts: Vec<&str> = train
            .iter()
            .map(|e| query_text(e, sep, options))
            .collect();
        let vectors = embed(embedder.as_ref(), &texts)?;
        let gold: Vec<SentimentLabel> = train.iter().map(|e| e.label).collect();
        let sentiment_embeddings = SentimentEmbeddingTable::from_embeddings(&vectors, &gold, labels)?;
        let index = build_index(vectors, gold, train.iter().map(EncodedExample::id).collect())?;
        Ok(RetrievalContext {
            embedder,
            index,
            sentiment_embeddings,
            task,
            labels: labels.to_vec(),
            sep: sep.to_string(),
            options,
        })
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    pub fn embedder(&self) -> &dyn SentenceEmbedder {
        self.embedder.as_ref()
    }

    pub fn sentiment_embeddings(&self) -> &SentimentEmbeddingTable {
        &self.sentiment_embeddings
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn options(&self) -> RetrievalOptions {
        self.options
    }

    /// The string embedded for `example`.
    pub fn query_text<'a>(&self, example: &'a EncodedExample) -> &'a str {
        query_text(example, &self.sep, self.options)
    }

    /// Nearest training neighbour of `example`. An example that is itself in
    /// the index is excluded from its own search unless self matches are
    /// allowed.
    pub fn neighbor(&self, example: &EncodedExample) -> Result<Neighbor> {
        if example.task != self.task {
            return Err(Error::LabelMismatch(format!(
                "retrieval context built for {} examples, got {}",
                self.task, example.task
            )));
        }
        if !self.labels.contains(&example.label) {
            return Err(Error::LabelMismatch(format!(
                "example label `{}` not in the indexed corpus label set",
                example.label
            )));
        }
        let own_id = example.id();
        let exclude = (!self.options.allow_self_match && self.index.contains_id(&own_id))
            .then_some(own_id.as_str());
        let query = self.embedder.embed_text(self.query_text(example))?;
        self.index.nearest_label(&query, exclude)
    }

    pub fn attach(&self, example: &EncodedExample) -> Result<SentimentLabel> {
        Ok(self.neighbor(example)?.label)
    }

    /// Nearest neighbour of a raw window (chat time: no gold label, no
    /// exclusion).
    pub fn neighbor_for_text(&self, window: &str) -> Result<Neighbor> {
        let text = if self.options.embed_target_only {
            window.split(self.sep.as_str()).next().unwrap_or(window)
        } else {
            window
        };
        let query = self.embedder.embed_text(text)?;
        self.index.nearest_label(&query, None)
    }

    pub fn labels(&self) -> &[SentimentLabel] {
        &self.labels
    }
}

fn query_text<'a>(example: &'a EncodedExample, sep: &str, options: RetrievalOptions) -> &'a str {
    if options.embed_target_only {
        example.text.split(sep).next().unwrap_or(&example.text)
    } else {
        &example.text
    }
}
