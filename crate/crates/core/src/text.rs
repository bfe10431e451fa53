//! Word-level tokenization and vocabularies for the neural models.

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static WORD_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[\p{L}\p{N}]+(?:'[\p{L}\p{N}]+)*|[^\s\p{L}\p{N}]").expect("valid regex")
});

/// Lowercased words and single punctuation marks, in order.
pub fn tokenize(text: &str) -> Vec<String> {
    WORD_RE
        .find_iter(text)
        .map(|m| m.as_str().to_lowercase())
        .collect()
}

/// Joins word tokens back into text, attaching closing punctuation to the
/// preceding word.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for tok in tokens {
        let tok = tok.as_ref();
        let attach = matches!(tok, "." | "," | "!" | "?" | ";" | ":" | ")" | "%");
        if !out.is_empty() && !attach && !out.ends_with(['(', '$']) {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    unk: u32,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Specials first, in the given order, then words of `texts` by
    /// descending frequency with lexicographic tie-break. `specials[unk_pos]`
    /// is the unknown-word token.
    pub fn build<'a>(
        specials: &[&str],
        unk_pos: usize,
        texts: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        if unk_pos >= specials.len() {
            return Err(Error::Config("unknown-token position outside specials".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !specials.contains(&w.as_str()))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = specials
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Ok(Self::from_tokens(tokens, unk_pos as u32))
    }

    pub fn from_tokens(tokens: Vec<String>, unk: u32) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, unk, index }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindexed(self) -> Self {
        Self::from_tokens(self.tokens, self.unk)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(self.unk)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn encode_text(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id_or_unk(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_words_and_punctuation() {
        assert_eq!(
            tokenize("Yeah 20$ per month."),
            vec!["yeah", "20", "$", "per", "month", "."]
        );
        assert_eq!(tokenize("I'm sick of it!"), vec!["i'm", "sick", "of", "it", "!"]);
    }

    #[test]
    fn detokenize_attaches_punctuation() {
        assert_eq!(detokenize(&["i'm", "sick", "of", "this", "city", "."]), "i'm sick of this city.");
    }

    #[test]
    fn vocab_orders_specials_then_frequency() {
        let v = Vocab::build(&["<pad>", "<unk>"], 1, ["b a a", "c b a"]).unwrap();
        assert_eq!(v.token(0), "<pad>");
        assert_eq!(v.token(2), "a");
        assert_eq!(v.token(3), "b");
        assert_eq!(v.token(4), "c");
        assert_eq!(v.id_or_unk("zzz"), 1);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str::<Vocab>(&json).unwrap().reindexed();
        assert_eq!(back, v);
    }
}
