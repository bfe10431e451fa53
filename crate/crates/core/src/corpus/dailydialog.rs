use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Corpus, CorpusName, Dialogue, Split, Utterance};
use crate::error::{Error, Result};
use crate::label::SentimentLabel;

/// Emotion-id table of the DailyDialog release:
/// 0 no emotion, 1 anger, 2 disgust, 3 fear, 4 happiness, 5 sadness, 6 surprise.
pub const DAILYDIALOG_LABELS: [SentimentLabel; 7] = [
    SentimentLabel::Neutral,
    SentimentLabel::Anger,
    SentimentLabel::Disgust,
    SentimentLabel::Fear,
    SentimentLabel::Joy,
    SentimentLabel::Sadness,
    SentimentLabel::Surprise,
];

const EOU: &str = "__eou__";

/// Loads DailyDialog from its release layout.
///
/// Each split is a pair of parallel files, `dialogues_<split>.txt` (utterances
/// separated by `__eou__`) and `dialogues_emotion_<split>.txt` (space
/// separated emotion ids), looked up either in `<dir>/<split>/` or directly
/// in `<dir>`. The split names are `train`, `validation` and `test`. Ids map
/// to labels through [`DAILYDIALOG_LABELS`].
pub fn load_dailydialog(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let mut splits = BTreeMap::new();
    for (split, name) in [
        (Split::Train, "train"),
        (Split::Dev, "validation"),
        (Split::Test, "test"),
    ] {
        let text_path = locate(dir, name, &format!("dialogues_{name}.txt"));
        let emo_path = locate(dir, name, &format!("dialogues_emotion_{name}.txt"));
        let text = read(&text_path)?;
        let emotions = read(&emo_path)?;
        splits.insert(split, parse_pair(&text, &emotions, split)?);
    }
    Corpus::new(
        CorpusName::Dailydialog,
        SentimentLabel::WITHOUT_NON_NEUTRAL.to_vec(),
        splits,
    )
}

fn locate(dir: &Path, split: &str, file: &str) -> PathBuf {
    let nested = dir.join(split).join(file);
    if nested.exists() {
        nested
    } else {
        dir.join(file)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_pair(text: &str, emotions: &str, split: Split) -> Result<Vec<Dialogue>> {
    let text_lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let emo_lines: Vec<&str> = emotions.lines().filter(|l| !l.trim().is_empty()).collect();
    if text_lines.len() != emo_lines.len() {
        return Err(Error::Validation(format!(
            "{split}: {} dialogue lines but {} emotion lines",
            text_lines.len(),
            emo_lines.len()
        )));
    }
    text_lines
        .iter()
        .zip(&emo_lines)
        .enumerate()
        .map(|(i, (line, ids))| parse_line(line, ids, i + 1, split))
        .collect()
}

fn parse_line(line: &str, ids: &str, line_no: usize, split: Split) -> Result<Dialogue> {
    let utterances: Vec<&str> = line
        .split(EOU)
        .map(str::trim)
        .filter(|u| !u.is_empty())
        .collect();
    let labels = ids
        .split_whitespace()
        .map(|tok| {
            tok.parse::<usize>()
                .ok()
                .and_then(|id| DAILYDIALOG_LABELS.get(id).copied())
                .ok_or_else(|| {
                    Error::Validation(format!("{split} line {line_no}: bad emotion id `{tok}`"))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    if utterances.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{split} line {line_no}: {} utterances but {} emotion ids",
            utterances.len(),
            labels.len()
        )));
    }
    let turns = utterances
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(t, (text, label))| Utterance::new(if t % 2 == 0 { "A" } else { "B" }, text, label))
        .collect();
    Ok(Dialogue {
        id: format!("dd-{split}-{line_no:05}"),
        turns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_line_with_documented_mapping() {
        let d = parse_line("Hi ! __eou__ Hello . __eou__", "0 4", 1, Split::Train).unwrap();
        assert_eq!(d.turns.len(), 2);
        assert_eq!(d.turns[0].text, "Hi !");
        assert_eq!(d.turns[0].label, SentimentLabel::Neutral);
        assert_eq!(d.turns[1].label, SentimentLabel::Joy);
    }

    #[test]
    fn arity_mismatch_reports_line() {
        let err = parse_pair(
            "a __eou__\nb __eou__ c __eou__ d __eou__\n",
            "0\n0 1\n",
            Split::Train,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn loads_nested_layout() {
        let tmp = tempfile::tempdir().unwrap();
        for name in ["train", "validation", "test"] {
            let sub = tmp.path().join(name);
            fs::create_dir_all(&sub).unwrap();
            fs::write(
                sub.join(format!("dialogues_{name}.txt")),
                "Hi ! __eou__ Hello . __eou__\nBye . __eou__\n",
            )
            .unwrap();
            fs::write(sub.join(format!("dialogues_emotion_{name}.txt")), "0 4 \n5 \n").unwrap();
        }
        let corpus = load_dailydialog(tmp.path()).unwrap();
        assert_eq!(corpus.labels().len(), 7);
        assert!(!corpus.labels().contains(&SentimentLabel::NonNeutral));
        assert_eq!(corpus.split(Split::Dev).len(), 2);
        assert_eq!(corpus.utterance_count(Split::Test), 3);
    }

    #[test]
    fn missing_files_are_load_errors() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(load_dailydialog(tmp.path()), Err(Error::Load { .. })));
    }
}
