//! Labelled multi-turn dialogue corpora.
//!
//! Every source format is normalized into the same [`Corpus`] value: named
//! train/dev/test splits of [`Dialogue`]s plus the label inventory fixed at
//! load time.

mod dailydialog;
mod emotionpush;
mod normalized;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::SentimentLabel;

pub use dailydialog::{load_dailydialog, DAILYDIALOG_LABELS};
pub use emotionpush::{load_emotionpush, EMOTIONPUSH_SPLIT_SEED};
pub use normalized::{read_normalized, write_normalized};
pub use synthetic::{make_synthetic_corpus, marker_token, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusName {
    Emotionpush,
    Dailydialog,
    Synthetic,
}

impl CorpusName {
    pub fn as_str(self) -> &'static str {
        match self {
            CorpusName::Emotionpush => "emotionpush",
            CorpusName::Dailydialog => "dailydialog",
            CorpusName::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for CorpusName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorpusName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emotionpush" => Ok(CorpusName::Emotionpush),
            "dailydialog" => Ok(CorpusName::Dailydialog),
            "synthetic" => Ok(CorpusName::Synthetic),
            other => Err(Error::Config(format!("unknown dataset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "validation" | "valid" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::UnknownSplit(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
    pub label: SentimentLabel,
}

impl Utterance {
    /// Builds an utterance, stripping surrounding whitespace from `text`.
    pub fn new(speaker: impl Into<String>, text: &str, label: SentimentLabel) -> Self {
        Utterance {
            speaker: speaker.into(),
            text: text.trim().to_string(),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    #[serde(rename = "dialogue_id")]
    pub id: String,
    pub turns: Vec<Utterance>,
}

impl Dialogue {
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.turns.iter().map(|u| u.text.as_str())
    }
}

/// A labelled corpus with disjoint train/dev/test splits.
///
/// Values are immutable once constructed; [`Corpus::new`] checks split
/// disjointness and label membership.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    name: CorpusName,
    labels: Vec<SentimentLabel>,
    splits: BTreeMap<Split, Vec<Dialogue>>,
}

impl Corpus {
    pub fn new(
        name: CorpusName,
        labels: Vec<SentimentLabel>,
        mut splits: BTreeMap<Split, Vec<Dialogue>>,
    ) -> Result<Self> {
        let label_set: BTreeSet<_> = labels.iter().copied().collect();
        if label_set.len() != labels.len() {
            return Err(Error::Validation("duplicate labels in label set".into()));
        }
        for split in Split::ALL {
            splits.entry(split).or_default();
        }
        let mut seen = HashSet::new();
        for (split, dialogues) in &splits {
            for dialogue in dialogues {
                if !seen.insert(dialogue.id.as_str()) {
                    return Err(Error::Validation(format!(
                        "dialogue id `{}` appears in more than one place (split {split})",
                        dialogue.id
                    )));
                }
                if dialogue.turns.is_empty() {
                    return Err(Error::Validation(format!(
                        "dialogue `{}` has no turns",
                        dialogue.id
                    )));
                }
                for (i, turn) in dialogue.turns.iter().enumerate() {
                    if !label_set.contains(&turn.label) {
                        return Err(Error::Validation(format!(
                            "dialogue `{}` turn {i}: label `{}` outside corpus label set",
                            dialogue.id, turn.label
                        )));
                    }
                    if turn.text.is_empty() || turn.text.trim() != turn.text {
                        return Err(Error::Validation(format!(
                            "dialogue `{}` turn {i}: text must be non-empty and stripped",
                            dialogue.id
                        )));
                    }
                }
            }
        }
        Ok(Corpus {
            name,
            labels,
            splits,
        })
    }

    pub fn name(&self) -> CorpusName {
        self.name
    }

    pub fn labels(&self) -> &[SentimentLabel] {
        &self.labels
    }

    pub fn split(&self, split: Split) -> &[Dialogue] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn splits(&self) -> impl Iterator<Item = (Split, &[Dialogue])> {
        self.splits.iter().map(|(s, d)| (*s, d.as_slice()))
    }

    pub fn utterance_count(&self, split: Split) -> usize {
        self.split(split).iter().map(Dialogue::len).sum()
    }

    /// Per-label utterance counts for a split given by name.
    pub fn label_distribution(&self, split: &str) -> Result<BTreeMap<SentimentLabel, usize>> {
        let split: Split = split.parse()?;
        Ok(self.label_counts(split))
    }

    pub fn label_counts(&self, split: Split) -> BTreeMap<SentimentLabel, usize> {
        let mut counts = BTreeMap::new();
        for turn in self.split(split).iter().flat_map(|d| &d.turns) {
            *counts.entry(turn.label).or_insert(0) += 1;
        }
        counts
    }

    /// Most frequent label of a split; ties go to the label listed first in
    /// the corpus label set.
    pub fn majority_label(&self, split: Split) -> Option<SentimentLabel> {
        let counts = self.label_counts(split);
        let mut best: Option<(SentimentLabel, usize)> = None;
        for label in &self.labels {
            let c = counts.get(label).copied().unwrap_or(0);
            if c > 0 && best.is_none_or(|(_, b)| c > b) {
                best = Some((*label, c));
            }
        }
        best.map(|(l, _)| l)
    }

    /// Copy of the corpus with `non_neutral` utterances removed everywhere.
    /// Dialogues left without turns are dropped.
    pub fn without_non_neutral(&self) -> Result<Corpus> {
        let labels = self
            .labels
            .iter()
            .copied()
            .filter(|l| *l != SentimentLabel::NonNeutral)
            .collect();
        let splits = self
            .splits
            .iter()
            .map(|(split, dialogues)| {
                let kept = dialogues
                    .iter()
                    .filter_map(|d| {
                        let turns: Vec<_> = d
                            .turns
                            .iter()
                            .filter(|t| t.label != SentimentLabel::NonNeutral)
                            .cloned()
                            .collect();
                        (!turns.is_empty()).then(|| Dialogue {
                            id: d.id.clone(),
                            turns,
                        })
                    })
                    .collect();
                (*split, kept)
            })
            .collect();
        Corpus::new(self.name, labels, splits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dialogue(id: &str, labels: &[SentimentLabel]) -> Dialogue {
        Dialogue {
            id: id.to_string(),
            turns: labels
                .iter()
                .enumerate()
                .map(|(i, l)| Utterance::new(if i % 2 == 0 { "A" } else { "B" }, "hi there", *l))
                .collect(),
        }
    }

    #[test]
    fn label_distribution_counts_utterances() {
        use SentimentLabel::*;
        let mut splits = BTreeMap::new();
        splits.insert(
            Split::Train,
            vec![dialogue("d0", &[Joy, Joy, Anger]), dialogue("d1", &[Joy, Joy])],
        );
        let corpus = Corpus::new(CorpusName::Synthetic, vec![Anger, Joy], splits).unwrap();
        let dist = corpus.label_distribution("train").unwrap();
        assert_eq!(dist.get(&Joy), Some(&4));
        assert_eq!(dist.get(&Anger), Some(&1));
        assert_eq!(corpus.majority_label(Split::Train), Some(Joy));
        assert!(matches!(
            corpus.label_distribution("holdout"),
            Err(Error::UnknownSplit(_))
        ));
    }

    #[test]
    fn duplicate_ids_across_splits_are_rejected() {
        use SentimentLabel::*;
        let mut splits = BTreeMap::new();
        splits.insert(Split::Train, vec![dialogue("d0", &[Joy])]);
        splits.insert(Split::Test, vec![dialogue("d0", &[Joy])]);
        assert!(Corpus::new(CorpusName::Synthetic, vec![Joy], splits).is_err());
    }

    #[test]
    fn labels_outside_the_set_are_rejected() {
        use SentimentLabel::*;
        let mut splits = BTreeMap::new();
        splits.insert(Split::Train, vec![dialogue("d0", &[Fear])]);
        assert!(Corpus::new(CorpusName::Synthetic, vec![Joy], splits).is_err());
    }

    #[test]
    fn dropping_non_neutral_removes_turns_and_label() {
        use SentimentLabel::*;
        let mut splits = BTreeMap::new();
        splits.insert(
            Split::Train,
            vec![dialogue("d0", &[Joy, NonNeutral]), dialogue("d1", &[NonNeutral])],
        );
        let corpus = Corpus::new(CorpusName::Emotionpush, vec![Joy, NonNeutral], splits).unwrap();
        let dropped = corpus.without_non_neutral().unwrap();
        assert_eq!(dropped.labels(), &[Joy]);
        assert_eq!(dropped.split(Split::Train).len(), 1);
        assert_eq!(dropped.utterance_count(Split::Train), 1);
    }
}
