use crate::error::{Error, Result};
use crate::retrieval::SentenceEmbedder;

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Sentence Embedding Similarity: mean pairwise cosine between generated and
/// reference replies, scaled to [-100, 100].
pub fn ses<S: AsRef<str>, R: AsRef<str>>(
    generated: &[S],
    references: &[R],
    embedder: &dyn SentenceEmbedder,
) -> Result<f64> {
    if generated.len() != references.len() {
        return Err(Error::Validation(format!(
            "{} generated replies for {} references",
            generated.len(),
            references.len()
        )));
    }
    if generated.is_empty() {
        return Err(Error::Empty("no reply pairs for SES".into()));
    }
    let total: f64 = generated
        .iter()
        .zip(references)
        .map(|(g, r)| {
            Ok(cosine(
                &embedder.embed_text(g.as_ref())?,
                &embedder.embed_text(r.as_ref())?,
            ))
        })
        .sum::<Result<f64>>()?;
    Ok(100.0 * total / generated.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::HashingEmbedder;

    struct Fixed;

    impl SentenceEmbedder for Fixed {
        fn id(&self) -> &str {
            "fixed"
        }
        fn dim(&self) -> usize {
            2
        }
        fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
            Ok(if text == "x" { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
        }
    }

    #[test]
    fn self_similarity_is_100() {
        let e = HashingEmbedder::default();
        let texts = ["i am happy .", "that is so annoying !"];
        assert!((ses(&texts, &texts, &e).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn orthogonal_pair_is_zero() {
        assert_eq!(ses(&["x"], &["y"], &Fixed).unwrap(), 0.0);
    }

    #[test]
    fn duplication_leaves_mean_unchanged() {
        let e = HashingEmbedder::default();
        let g = ["i am happy", "wow so nice"];
        let r = ["i am glad", "the invoice is late"];
        let once = ses(&g, &r, &e).unwrap();
        let g2: Vec<_> = g.iter().chain(g.iter()).collect();
        let r2: Vec<_> = r.iter().chain(r.iter()).collect();
        let g2: Vec<&str> = g2.into_iter().copied().collect();
        let r2: Vec<&str> = r2.into_iter().copied().collect();
        assert!((ses(&g2, &r2, &e).unwrap() - once).abs() < 1e-9);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(ses(&["a"], &["a", "b"], &Fixed).is_err());
    }
}
