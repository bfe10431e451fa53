use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::label::SentimentLabel;

/// Lexicon tokenization: lowercase, split on whitespace, strip leading and
/// trailing punctuation (internal apostrophes survive), drop empty tokens.
pub fn ngram_tokens(sentence: &str) -> Vec<String> {
    sentence
        .split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Space-joined n-grams of `tokens` for every n in `n_range` (inclusive).
pub fn ngrams(tokens: &[String], n_range: (usize, usize)) -> Vec<String> {
    let mut out = Vec::new();
    for n in n_range.0.max(1)..=n_range.1 {
        for w in tokens.windows(n) {
            out.push(w.join(" "));
        }
    }
    out
}

/// Per-label n-gram frequencies over that label's training sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramCounts {
    pub n_range: (usize, usize),
    pub per_label: BTreeMap<SentimentLabel, BTreeMap<String, usize>>,
}

impl NgramCounts {
    pub fn label(&self, label: SentimentLabel) -> Option<&BTreeMap<String, usize>> {
        self.per_label.get(&label)
    }

    pub fn labels(&self) -> impl Iterator<Item = SentimentLabel> + '_ {
        self.per_label.keys().copied()
    }
}

pub fn count_ngrams<S: AsRef<str>>(
    sentences_by_label: &BTreeMap<SentimentLabel, Vec<S>>,
    n_range: (usize, usize),
) -> NgramCounts {
    let per_label = sentences_by_label
        .iter()
        .map(|(label, sentences)| {
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for s in sentences {
                for g in ngrams(&ngram_tokens(s.as_ref()), n_range) {
                    *counts.entry(g).or_default() += 1;
                }
            }
            (*label, counts)
        })
        .collect();
    NgramCounts { n_range, per_label }
}
