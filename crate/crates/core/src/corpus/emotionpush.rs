use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{Corpus, CorpusName, Dialogue, Split, Utterance};
use crate::error::{Error, Result};
use crate::label::SentimentLabel;

/// Seed of the 80/10/10 dialogue split used when the data ships unsplit.
pub const EMOTIONPUSH_SPLIT_SEED: u64 = 13;

#[derive(Debug, Deserialize)]
struct RawTurn {
    speaker: String,
    utterance: String,
    emotion: String,
}

/// Loads EmotionPush from a directory of JSON files.
///
/// Files whose name contains `train`, `dev` (or `valid`) and `test` are used
/// as the official splits. When the directory holds a single unsplit JSON
/// file instead, dialogues are split 80/10/10 with [`EMOTIONPUSH_SPLIT_SEED`].
pub fn load_emotionpush(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|source| Error::Load {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut json_files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    json_files.sort();

    let split_of = |p: &Path| -> Option<Split> {
        let name = p.file_name()?.to_string_lossy().to_lowercase();
        if name.contains("train") {
            Some(Split::Train)
        } else if name.contains("dev") || name.contains("valid") {
            Some(Split::Dev)
        } else if name.contains("test") {
            Some(Split::Test)
        } else {
            None
        }
    };

    let mut splits = BTreeMap::new();
    let pre_split: Vec<_> = json_files
        .iter()
        .filter_map(|p| split_of(p).map(|s| (s, p)))
        .collect();
    if !pre_split.is_empty() {
        for split in Split::ALL {
            let path = pre_split
                .iter()
                .find(|(s, _)| *s == split)
                .map(|(_, p)| (*p).clone())
                .ok_or_else(|| Error::Load {
                    path: dir.join(format!("emotionpush.{split}.json")),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "split file missing"),
                })?;
            let prefix = format!("ep-{split}");
            splits.insert(split, read_dialogues(&path, &prefix)?);
        }
    } else if json_files.len() == 1 {
        let all = read_dialogues(&json_files[0], "ep")?;
        splits = split_80_10_10(all, EMOTIONPUSH_SPLIT_SEED);
    } else {
        return Err(Error::Load {
            path: dir.to_path_buf(),
            source: std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "expected train/dev/test JSON files or a single unsplit JSON file",
            ),
        });
    }
    Corpus::new(CorpusName::Emotionpush, SentimentLabel::ALL.to_vec(), splits)
}

fn read_dialogues(path: &Path, id_prefix: &str) -> Result<Vec<Dialogue>> {
    let raw = fs::read_to_string(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })?;
    let parsed: Vec<Vec<RawTurn>> = serde_json::from_str(&raw).map_err(|e| Error::Parse {
        offset: byte_offset(&raw, e.line(), e.column()),
        message: format!("{}: {e}", path.display()),
    })?;
    parsed
        .into_iter()
        .enumerate()
        .map(|(d_idx, turns)| {
            let id = format!("{id_prefix}-{d_idx:05}");
            let turns = turns
                .into_iter()
                .enumerate()
                .map(|(t_idx, raw)| {
                    let label: SentimentLabel = raw.emotion.parse().map_err(|_| {
                        Error::Validation(format!(
                            "dialogue `{id}` turn {t_idx}: unknown emotion `{}`",
                            raw.emotion
                        ))
                    })?;
                    let utterance = Utterance::new(raw.speaker, &raw.utterance, label);
                    if utterance.text.is_empty() {
                        return Err(Error::Validation(format!(
                            "dialogue `{id}` turn {t_idx}: empty utterance"
                        )));
                    }
                    Ok(utterance)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Dialogue { id, turns })
        })
        .filter(|d| d.as_ref().map_or(true, |d| !d.turns.is_empty()))
        .collect()
}

fn split_80_10_10(mut dialogues: Vec<Dialogue>, seed: u64) -> BTreeMap<Split, Vec<Dialogue>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dialogues.shuffle(&mut rng);
    let n = dialogues.len();
    let n_train = n * 8 / 10;
    let n_dev = n / 10;
    let test = dialogues.split_off(n_train + n_dev);
    let dev = dialogues.split_off(n_train);
    BTreeMap::from([(Split::Train, dialogues), (Split::Dev, dev), (Split::Test, test)])
}

pub(super) fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)) as u64
}
