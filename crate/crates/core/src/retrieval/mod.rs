//! Nearest-training-example label lookup and per-label Sentiment Embeddings.

mod context;
mod embedder;
mod index;
mod sentiment;

pub use context::{RetrievalContext, RetrievalOptions};
pub use embedder::{embed, HashingEmbedder, SentenceEmbedder};
pub use index::{build_index, Neighbor, NeighborIndex};
pub use sentiment::{init_sentiment_embeddings, SentimentEmbeddingTable};
