//! Seeded toy corpus for desk-scale training and tests.
//!
//! Every utterance carries one label-distinctive marker word surrounded by
//! filler drawn from a pool shared by all labels, so the label is recoverable
//! from the marker alone. Turn labels are balanced per turn position: the
//! label of turn `t` follows a fixed cyclic successor of turn `t - 1`, after
//! which a seeded fraction of dialogues exchange their labels. The exchange
//! preserves exact per-label counts while leaving the next label only
//! partially predictable from the context.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, CorpusName, Dialogue, Split, Utterance};
use crate::label::SentimentLabel;

const FILLER: [&str; 16] = [
    "i", "think", "you", "really", "so", "today", "that", "was", "we", "just", "it", "feel",
    "now", "well", "this", "again",
];

const ENDINGS: [&str; 3] = [".", "!", "?"];

/// The word that identifies `label` in synthetic utterances.
pub fn marker_token(label: SentimentLabel) -> &'static str {
    match label {
        SentimentLabel::Anger => "furious",
        SentimentLabel::Disgust => "gross",
        SentimentLabel::Fear => "scared",
        SentimentLabel::Joy => "delighted",
        SentimentLabel::Neutral => "okay",
        SentimentLabel::NonNeutral => "whatever",
        SentimentLabel::Sadness => "gloomy",
        SentimentLabel::Surprise => "wow",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub labels: Vec<SentimentLabel>,
    /// Train dialogues per label (the per-position balance unit).
    pub dialogues_per_label: usize,
    pub seed: u64,
    pub turns_per_dialogue: usize,
    /// Dev and test dialogues per label.
    pub eval_dialogues_per_label: usize,
    /// Fraction of dialogues whose turn label is exchanged instead of
    /// following the cyclic successor.
    pub exchange_fraction: f64,
}

impl SyntheticSpec {
    pub fn new(labels: Vec<SentimentLabel>, dialogues_per_label: usize, seed: u64) -> Self {
        SyntheticSpec {
            labels,
            dialogues_per_label,
            seed,
            turns_per_dialogue: 4,
            eval_dialogues_per_label: (dialogues_per_label / 4).max(1),
            exchange_fraction: 0.5,
        }
    }
}

pub fn make_synthetic_corpus(spec: &SyntheticSpec) -> Corpus {
    let mut labels = spec.labels.clone();
    labels.sort();
    labels.dedup();
    let mut splits = BTreeMap::new();
    for (k, split) in Split::ALL.into_iter().enumerate() {
        let per_label = match split {
            Split::Train => spec.dialogues_per_label,
            _ => spec.eval_dialogues_per_label,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(31).wrapping_add(k as u64));
        splits.insert(split, generate_split(spec, &labels, per_label, split, &mut rng));
    }
    Corpus::new(CorpusName::Synthetic, labels, splits)
        .expect("synthetic corpus is valid by construction")
}

fn generate_split(
    spec: &SyntheticSpec,
    labels: &[SentimentLabel],
    per_label: usize,
    split: Split,
    rng: &mut ChaCha8Rng,
) -> Vec<Dialogue> {
    let n = per_label * labels.len();
    if n == 0 || labels.is_empty() {
        return Vec::new();
    }
    // label index per dialogue, one row per turn position
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(spec.turns_per_dialogue);
    let mut first: Vec<usize> = (0..n).map(|d| d % labels.len()).collect();
    first.shuffle(rng);
    rows.push(first);
    for _ in 1..spec.turns_per_dialogue {
        let prev = rows.last().unwrap();
        let mut next: Vec<usize> = prev.iter().map(|&l| (l + 1) % labels.len()).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let m = ((n as f64) * spec.exchange_fraction).round() as usize;
        let chosen = &order[..m.min(n)];
        let mut values: Vec<usize> = chosen.iter().map(|&d| next[d]).collect();
        values.shuffle(rng);
        for (&d, v) in chosen.iter().zip(values) {
            next[d] = v;
        }
        rows.push(next);
    }
    (0..n)
        .map(|d| Dialogue {
            id: format!("syn-{split}-{d:05}"),
            turns: (0..spec.turns_per_dialogue)
                .map(|t| {
                    let label = labels[rows[t][d]];
                    let speaker = if t % 2 == 0 { "A" } else { "B" };
                    Utterance::new(speaker, &utterance_text(label, rng), label)
                })
                .collect(),
        })
        .collect()
}

fn utterance_text(label: SentimentLabel, rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<&str> = Vec::with_capacity(5);
    let before = rng.random_range(1..=2);
    let after = rng.random_range(0..=1);
    for _ in 0..before {
        words.push(FILLER.choose(rng).unwrap());
    }
    words.push(marker_token(label));
    for _ in 0..after {
        words.push(FILLER.choose(rng).unwrap());
    }
    let ending = ENDINGS.choose(rng).unwrap();
    format!("{} {ending}", words.join(" "))
}
