//! Text windows for contextual classification and reply-sentiment prediction.
//!
//! A window is the separator-joined list of sentences the classifier reads,
//! most recent first. For classification the window starts with the target
//! sentence followed by up to `x` preceding sentences; for reply prediction it
//! holds only the `x` sentences preceding the reply. Windows near the start of
//! a dialogue are clipped, never padded.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dialogue, Split};
use crate::error::{Error, Result};
use crate::label::SentimentLabel;

/// Placeholder that the classifier tokenizer maps to its native separator.
pub const SEP: &str = "[SEP]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classify,
    ReplyPredict,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Classify => "classify",
            Task::ReplyPredict => "reply_predict",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classify" => Ok(Task::Classify),
            "reply_predict" | "rsp" => Ok(Task::ReplyPredict),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub text: String,
    pub label: SentimentLabel,
    pub task: Task,
    pub dialogue_id: String,
    /// Index of the classified sentence, or of the reply whose sentiment is
    /// predicted.
    pub target_index: usize,
}

impl EncodedExample {
    /// Stable identifier used by the retrieval index.
    pub fn id(&self) -> String {
        format!("{}#{}", self.dialogue_id, self.target_index)
    }

    pub fn segments<'a>(&'a self, sep: &str) -> Vec<&'a str> {
        self.text.split(sep).collect()
    }
}

fn join_most_recent_first<'a>(sentences: impl Iterator<Item = &'a str>, sep: &str) -> String {
    sentences.collect::<Vec<_>>().join(sep)
}

pub fn build_classification_example(
    dialogue: &Dialogue,
    i: usize,
    x: usize,
    sep: &str,
) -> Result<EncodedExample> {
    let n = dialogue.len();
    if i >= n {
        return Err(Error::OutOfRange(format!(
            "turn {i} of dialogue `{}` with {n} turns",
            dialogue.id
        )));
    }
    let start = i.saturating_sub(x);
    let text = join_most_recent_first(
        dialogue.turns[start..=i].iter().rev().map(|u| u.text.as_str()),
        sep,
    );
    Ok(EncodedExample {
        text,
        label: dialogue.turns[i].label,
        task: Task::Classify,
        dialogue_id: dialogue.id.clone(),
        target_index: i,
    })
}

/// Builds the reply-prediction example for reply `j`. Returns `Ok(None)` for
/// `j == 0`, which has no context to predict from.
pub fn build_reply_prediction_example(
    dialogue: &Dialogue,
    j: usize,
    x: usize,
    sep: &str,
) -> Result<Option<EncodedExample>> {
    let n = dialogue.len();
    if x == 0 {
        return Err(Error::Config("reply prediction needs context size >= 1".into()));
    }
    if j >= n {
        return Err(Error::OutOfRange(format!(
            "reply {j} of dialogue `{}` with {n} turns",
            dialogue.id
        )));
    }
    if j == 0 {
        return Ok(None);
    }
    Ok(Some(EncodedExample {
        text: reply_window(dialogue.texts().take(j), x, sep),
        label: dialogue.turns[j].label,
        task: Task::ReplyPredict,
        dialogue_id: dialogue.id.clone(),
        target_index: j,
    }))
}

/// Reply-prediction window over a chronological history: its `x` most
/// recent sentences, most recent first.
pub fn reply_window<'a>(history: impl IntoIterator<Item = &'a str>, x: usize, sep: &str) -> String {
    let history: Vec<&str> = history.into_iter().collect();
    let start = history.len().saturating_sub(x);
    join_most_recent_first(history[start..].iter().rev().copied(), sep)
}

pub fn encode_dialogues(
    dialogues: &[Dialogue],
    task: Task,
    x: usize,
    sep: &str,
) -> Result<Vec<EncodedExample>> {
    let mut out = Vec::new();
    for dialogue in dialogues {
        for idx in 0..dialogue.len() {
            match task {
                Task::Classify => out.push(build_classification_example(dialogue, idx, x, sep)?),
                Task::ReplyPredict => {
                    if let Some(ex) = build_reply_prediction_example(dialogue, idx, x, sep)? {
                        out.push(ex);
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn encode_corpus(
    corpus: &Corpus,
    task: Task,
    x: usize,
    sep: &str,
) -> Result<BTreeMap<Split, Vec<EncodedExample>>> {
    corpus
        .splits()
        .map(|(split, dialogues)| Ok((split, encode_dialogues(dialogues, task, x, sep)?)))
        .collect()
}

/// Writes examples as JSONL `{text, label, task, dialogue_id, target_index}`.
pub fn dump_jsonl(examples: &[EncodedExample], mut out: impl Write) -> Result<()> {
    for example in examples {
        serde_json::to_writer(&mut out, example)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;
    use proptest::prelude::*;
    use SentimentLabel::*;

    fn table_dialogue() -> Dialogue {
        Dialogue {
            id: "ep".into(),
            turns: vec![
                Utterance::new("A", "Does it cost anything?", Neutral),
                Utterance::new("B", "Yeah 20$ per month.", Neutral),
                Utterance::new("A", "Ohh!", Surprise),
            ],
        }
    }

    #[test]
    fn classification_window_is_target_then_context() {
        let ex = build_classification_example(&table_dialogue(), 1, 1, SEP).unwrap();
        assert_eq!(ex.text, "Yeah 20$ per month.[SEP]Does it cost anything?");
        assert_eq!(ex.label, Neutral);
    }

    #[test]
    fn classification_window_clips_at_start() {
        let ex = build_classification_example(&table_dialogue(), 0, 2, SEP).unwrap();
        assert_eq!(ex.text, "Does it cost anything?");
        let ex = build_classification_example(&table_dialogue(), 2, 0, SEP).unwrap();
        assert_eq!(ex.text, "Ohh!");
        assert_eq!(ex.label, Surprise);
    }

    #[test]
    fn classification_index_out_of_range() {
        assert!(matches!(
            build_classification_example(&table_dialogue(), 3, 1, SEP),
            Err(Error::OutOfRange(_))
        ));
    }

    #[test]
    fn reply_prediction_rows_match_worked_example() {
        let d = table_dialogue();
        let ex = build_reply_prediction_example(&d, 2, 2, SEP).unwrap().unwrap();
        assert_eq!(ex.text, "Yeah 20$ per month.[SEP]Does it cost anything?");
        assert_eq!(ex.label, Surprise);
        let ex = build_reply_prediction_example(&d, 1, 2, SEP).unwrap().unwrap();
        assert_eq!(ex.text, "Does it cost anything?");
        assert_eq!(ex.label, Neutral);
        assert!(build_reply_prediction_example(&d, 0, 2, SEP).unwrap().is_none());
    }

    #[test]
    fn single_turn_dialogue_has_no_reply_examples() {
        let d = Dialogue {
            id: "one".into(),
            turns: vec![Utterance::new("A", "hello", Joy)],
        };
        assert!(encode_dialogues(&[d], Task::ReplyPredict, 2, SEP).unwrap().is_empty());
    }

    #[test]
    fn encode_counts_per_task() {
        let d = table_dialogue();
        assert_eq!(encode_dialogues(&[d.clone()], Task::Classify, 1, SEP).unwrap().len(), 3);
        assert_eq!(encode_dialogues(&[d], Task::ReplyPredict, 1, SEP).unwrap().len(), 2);
    }

    #[test]
    fn dump_writes_one_line_per_example() {
        let examples = encode_dialogues(&[table_dialogue()], Task::Classify, 1, SEP).unwrap();
        let mut buf = Vec::new();
        dump_jsonl(&examples, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().next().unwrap().contains(r#""task":"classify""#));
    }

    fn arb_dialogue() -> impl Strategy<Value = Dialogue> {
        prop::collection::vec("[a-z]{1,6}( [a-z]{1,6}){0,3}", 1..8).prop_map(|texts| Dialogue {
            id: "p".into(),
            turns: texts
                .iter()
                .enumerate()
                .map(|(i, t)| Utterance::new(if i % 2 == 0 { "A" } else { "B" }, t, Joy))
                .collect(),
        })
    }

    proptest! {
        #[test]
        fn classification_invariants(d in arb_dialogue(), x in 0usize..6, seed in 0usize..100) {
            let i = seed % d.len();
            let ex = build_classification_example(&d, i, x, SEP).unwrap();
            let segs = ex.segments(SEP);
            prop_assert_eq!(segs[0], d.turns[i].text.as_str());
            prop_assert_eq!(segs.len(), x.min(i) + 1);
        }

        #[test]
        fn reply_window_excludes_reply(d in arb_dialogue(), x in 1usize..6, seed in 0usize..100) {
            let j = seed % d.len();
            match build_reply_prediction_example(&d, j, x, SEP).unwrap() {
                None => prop_assert_eq!(j, 0),
                Some(ex) => {
                    let segs = ex.segments(SEP);
                    prop_assert_eq!(segs.len(), x.min(j));
                    let reply = d.turns[j].text.as_str();
                    let repeats_earlier = d.turns[..j].iter().any(|u| u.text == reply);
                    prop_assert!(repeats_earlier || !segs.contains(&reply));
                    let history: Vec<&str> = d.texts().take(j).collect();
                    prop_assert_eq!(reply_window(history, x, SEP), ex.text);
                }
            }
        }

        #[test]
        fn encoding_is_deterministic(d in arb_dialogue(), x in 0usize..4) {
            let a = encode_dialogues(std::slice::from_ref(&d), Task::Classify, x, SEP).unwrap();
            let b = encode_dialogues(std::slice::from_ref(&d), Task::Classify, x, SEP).unwrap();
            let mut ba = Vec::new();
            let mut bb = Vec::new();
            dump_jsonl(&a, &mut ba).unwrap();
            dump_jsonl(&b, &mut bb).unwrap();
            prop_assert_eq!(ba, bb);
        }
    }
}
