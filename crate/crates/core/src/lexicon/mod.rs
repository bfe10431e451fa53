//! Sentiment lexicons that condition the generator.
//!
//! Each lexicon maps a label to an ordered list of strings; at generation
//! time the list for the desired label is joined with single spaces and
//! placed before the dialogue history.

mod ngrams;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split};
use crate::error::{Error, Result};
use crate::label::SentimentLabel;

pub use ngrams::{count_ngrams, ngram_tokens, ngrams, NgramCounts};

pub const DEFAULT_K: usize = 40;
pub const DEFAULT_N_RANGE: (usize, usize) = (1, 3);

/// Two fixed sentences per label, built on "I am ..." / "That is ...".
pub const SENTIMENT_SENTENCES: [(SentimentLabel, [&str; 2]); 8] = [
    (SentimentLabel::Anger, ["I am angry.", "That is so annoying!"]),
    (SentimentLabel::Disgust, ["I am disgusted.", "That is repulsive!"]),
    (SentimentLabel::Fear, ["I am frightened.", "That is scary!"]),
    (SentimentLabel::Joy, ["I am happy.", "That is delightful!"]),
    (SentimentLabel::Neutral, ["I am ok.", "That is ok."]),
    (SentimentLabel::NonNeutral, ["I am not ok.", "That is not ok."]),
    (SentimentLabel::Sadness, ["I am sad.", "That is so upsetting."]),
    (SentimentLabel::Surprise, ["I am surprised.", "That is so amazing!"]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LexiconKind {
    Tag,
    Tf,
    Tfu,
    Tfidf,
    RandomSample,
    SentimentSentences,
    None,
}

impl LexiconKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LexiconKind::Tag => "tag",
            LexiconKind::Tf => "tf",
            LexiconKind::Tfu => "tfu",
            LexiconKind::Tfidf => "tfidf",
            LexiconKind::RandomSample => "random_sample",
            LexiconKind::SentimentSentences => "sentiment_sentences",
            LexiconKind::None => "none",
        }
    }
}

impl fmt::Display for LexiconKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LexiconKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tag" => LexiconKind::Tag,
            "tf" => LexiconKind::Tf,
            "tfu" => LexiconKind::Tfu,
            "tfidf" | "tf-idf" | "tf_idf" => LexiconKind::Tfidf,
            "random_sample" | "random" => LexiconKind::RandomSample,
            "sentiment_sentences" => LexiconKind::SentimentSentences,
            "none" => LexiconKind::None,
            other => return Err(Error::Config(format!("unknown lexicon kind `{other}`"))),
        })
    }
}

/// A built lexicon. For `random_sample` the entries are the per-label pools
/// of training sentences that a conditioning string is drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub kind: LexiconKind,
    pub k: usize,
    #[serde(default = "default_n_range")]
    pub n_range: (usize, usize),
    pub entries: BTreeMap<SentimentLabel, Vec<String>>,
}

fn default_n_range() -> (usize, usize) {
    DEFAULT_N_RANGE
}

impl Lexicon {
    /// The empty lexicon used by unconditioned generation.
    pub fn none() -> Self {
        Lexicon {
            kind: LexiconKind::None,
            k: 0,
            n_range: DEFAULT_N_RANGE,
            entries: BTreeMap::new(),
        }
    }

    pub fn labels(&self) -> impl Iterator<Item = SentimentLabel> + '_ {
        self.entries.keys().copied()
    }

    pub fn entries(&self, label: SentimentLabel) -> Result<&[String]> {
        self.entries
            .get(&label)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownLabel(format!("{label} (not in {} lexicon)", self.kind)))
    }

    /// Conditioning text for `label`: entries joined by single spaces, a
    /// fresh random pool sentence for `random_sample`, empty for `none`.
    pub fn conditioning_text(
        &self,
        label: SentimentLabel,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<String> {
        match self.kind {
            LexiconKind::None => Ok(String::new()),
            LexiconKind::RandomSample => {
                let rng = rng.ok_or_else(|| {
                    Error::Config("random_sample lexicon needs a random number generator".into())
                })?;
                sample_from(self.entries(label)?, label, rng)
            }
            _ => Ok(self.entries(label)?.join(" ")),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

fn sample_from(pool: &[String], label: SentimentLabel, rng: &mut dyn RngCore) -> Result<String> {
    pool.choose(rng)
        .cloned()
        .ok_or_else(|| Error::Empty(format!("no training sentences labelled {label}")))
}

/// Training-split sentences grouped by label; every label of the corpus is
/// present, possibly with an empty list.
pub fn training_sentences_by_label(corpus: &Corpus) -> BTreeMap<SentimentLabel, Vec<String>> {
    let mut map: BTreeMap<SentimentLabel, Vec<String>> =
        corpus.labels().iter().map(|l| (*l, Vec::new())).collect();
    for turn in corpus.split(Split::Train).iter().flat_map(|d| &d.turns) {
        map.entry(turn.label).or_default().push(turn.text.clone());
    }
    map
}

pub fn build_tag(labels: &[SentimentLabel]) -> Lexicon {
    Lexicon {
        kind: LexiconKind::Tag,
        k: 1,
        n_range: DEFAULT_N_RANGE,
        entries: labels
            .iter()
            .map(|l| (*l, vec![l.surface_name().to_string()]))
            .collect(),
    }
}

/// Frequency descending, then lexicographic, then shorter n-gram first.
fn rank_order(a: &(&String, f64), b: &(&String, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(b.0))
        .then_with(|| a.0.split(' ').count().cmp(&b.0.split(' ').count()))
}

fn top_k<'a>(scored: impl Iterator<Item = (&'a String, f64)>, k: usize) -> Vec<String> {
    let mut scored: Vec<(&String, f64)> = scored.collect();
    scored.sort_by(rank_order);
    scored.into_iter().take(k).map(|(g, _)| g.clone()).collect()
}

fn ngram_lexicon(
    kind: LexiconKind,
    counts: &NgramCounts,
    k: usize,
    entries: BTreeMap<SentimentLabel, Vec<String>>,
) -> Lexicon {
    Lexicon {
        kind,
        k,
        n_range: counts.n_range,
        entries,
    }
}

/// Top-`k` most frequent n-grams per label.
pub fn build_tf(counts: &NgramCounts, k: usize) -> Lexicon {
    let entries = counts
        .per_label
        .iter()
        .map(|(label, grams)| (*label, top_k(grams.iter().map(|(g, c)| (g, *c as f64)), k)))
        .collect();
    ngram_lexicon(LexiconKind::Tf, counts, k, entries)
}

/// Like [`build_tf`], keeping only n-grams that no other label produced.
///
/// With `post_filter` the top-`k` list is taken first and filtered after,
/// which can leave fewer than `k` entries.
pub fn build_tfu(counts: &NgramCounts, k: usize, post_filter: bool) -> Lexicon {
    let unique_to = |label: SentimentLabel, gram: &str| {
        counts
            .per_label
            .iter()
            .all(|(other, grams)| *other == label || !grams.contains_key(gram))
    };
    let entries = counts
        .per_label
        .iter()
        .map(|(label, grams)| {
            let scored = grams.iter().map(|(g, c)| (g, *c as f64));
            let list = if post_filter {
                top_k(scored, k)
                    .into_iter()
                    .filter(|g| unique_to(*label, g))
                    .collect()
            } else {
                top_k(scored.filter(|(g, _)| unique_to(*label, g)), k)
            };
            (*label, list)
        })
        .collect();
    ngram_lexicon(LexiconKind::Tfu, counts, k, entries)
}

/// TF-IDF score of every n-gram, one document per label:
/// `tf = count / total n-grams of the label`, `idf = ln(labels / labels containing it)`.
pub fn tfidf_scores(counts: &NgramCounts) -> BTreeMap<SentimentLabel, BTreeMap<String, f64>> {
    let n_docs = counts.per_label.len() as f64;
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for grams in counts.per_label.values() {
        for g in grams.keys() {
            *df.entry(g.as_str()).or_default() += 1;
        }
    }
    counts
        .per_label
        .iter()
        .map(|(label, grams)| {
            let total: usize = grams.values().sum();
            let scores = grams
                .iter()
                .map(|(g, c)| {
                    let tf = *c as f64 / total as f64;
                    let idf = (n_docs / df[g.as_str()] as f64).ln();
                    (g.clone(), tf * idf)
                })
                .collect();
            (*label, scores)
        })
        .collect()
}

pub fn build_tfidf(counts: &NgramCounts, k: usize) -> Lexicon {
    let scores = tfidf_scores(counts);
    let entries = scores
        .iter()
        .map(|(label, grams)| (*label, top_k(grams.iter().map(|(g, s)| (g, *s)), k)))
        .collect();
    ngram_lexicon(LexiconKind::Tfidf, counts, k, entries)
}

/// One training sentence of `label`, drawn uniformly.
pub fn build_random_sample(
    corpus: &Corpus,
    label: SentimentLabel,
    rng: &mut dyn RngCore,
) -> Result<String> {
    let pools = training_sentences_by_label(corpus);
    let pool = pools.get(&label).map(Vec::as_slice).unwrap_or(&[]);
    sample_from(pool, label, rng)
}

/// The random-sample lexicon: per-label pools resolved at each request.
pub fn random_sample_lexicon(corpus: &Corpus) -> Lexicon {
    Lexicon {
        kind: LexiconKind::RandomSample,
        k: 1,
        n_range: DEFAULT_N_RANGE,
        entries: training_sentences_by_label(corpus),
    }
}

pub fn sentiment_sentences(label_set: &[SentimentLabel]) -> Result<Lexicon> {
    let entries = label_set
        .iter()
        .map(|label| {
            SENTIMENT_SENTENCES
                .iter()
                .find(|(l, _)| l == label)
                .map(|(l, s)| (*l, s.iter().map(|x| x.to_string()).collect()))
                .ok_or_else(|| Error::UnknownLabel(label.to_string()))
        })
        .collect::<Result<_>>()?;
    Ok(Lexicon {
        kind: LexiconKind::SentimentSentences,
        k: 2,
        n_range: DEFAULT_N_RANGE,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconOptions {
    pub k: usize,
    pub n_range: (usize, usize),
    /// Apply the TFU uniqueness filter after taking the top k.
    pub tfu_post_filter: bool,
}

impl Default for LexiconOptions {
    fn default() -> Self {
        LexiconOptions {
            k: DEFAULT_K,
            n_range: DEFAULT_N_RANGE,
            tfu_post_filter: false,
        }
    }
}

/// Builds a lexicon of any kind from a corpus's training split.
pub fn build_lexicon(kind: LexiconKind, corpus: &Corpus, options: LexiconOptions) -> Result<Lexicon> {
    let counts = || count_ngrams(&training_sentences_by_label(corpus), options.n_range);
    Ok(match kind {
        LexiconKind::Tag => build_tag(corpus.labels()),
        LexiconKind::Tf => build_tf(&counts(), options.k),
        LexiconKind::Tfu => build_tfu(&counts(), options.k, options.tfu_post_filter),
        LexiconKind::Tfidf => build_tfidf(&counts(), options.k),
        LexiconKind::RandomSample => random_sample_lexicon(corpus),
        LexiconKind::SentimentSentences => sentiment_sentences(corpus.labels())?,
        LexiconKind::None => Lexicon::none(),
    })
}

/// Every distinct n-gram across all labels (the entry-eligible set).
pub fn eligible_ngrams(counts: &NgramCounts, label: SentimentLabel) -> BTreeSet<&str> {
    counts
        .label(label)
        .map(|m| m.keys().map(String::as_str).collect())
        .unwrap_or_default()
}
