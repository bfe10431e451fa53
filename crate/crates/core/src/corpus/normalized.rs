//! Line-delimited JSON form of a [`Corpus`].
//!
//! A normalized corpus is a directory holding `manifest.json`
//! (`{"name", "labels"}`) and one `<split>.jsonl` per split with one record
//! per dialogue:
//!
//! ```text
//! {"dialogue_id":"d1","turns":[{"speaker":"A","text":"Hi","label":"neutral"}]}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusName, Dialogue, Split};
use crate::error::{Error, Result};
use crate::label::SentimentLabel;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    name: CorpusName,
    labels: Vec<SentimentLabel>,
}

pub fn write_normalized(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        name: corpus.name(),
        labels: corpus.labels().to_vec(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    for (split, dialogues) in corpus.splits() {
        let mut out = BufWriter::new(fs::File::create(dir.join(format!("{split}.jsonl")))?);
        for dialogue in dialogues {
            serde_json::to_writer(&mut out, dialogue)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    Ok(())
}

pub fn read_normalized(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let raw = fs::read_to_string(&manifest_path).map_err(|source| Error::Load {
        path: manifest_path.clone(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_str(&raw).map_err(|e| Error::Parse {
        offset: super::emotionpush::byte_offset(&raw, e.line(), e.column()),
        message: format!("{}: {e}", manifest_path.display()),
    })?;
    let mut splits = BTreeMap::new();
    for split in Split::ALL {
        let path = dir.join(format!("{split}.jsonl"));
        let body = fs::read_to_string(&path).map_err(|source| Error::Load {
            path: path.clone(),
            source,
        })?;
        splits.insert(split, parse_jsonl(&body)?);
    }
    Corpus::new(manifest.name, manifest.labels, splits)
}

fn parse_jsonl(body: &str) -> Result<Vec<Dialogue>> {
    let mut offset = 0u64;
    let mut dialogues = Vec::new();
    for line in body.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let dialogue: Dialogue = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
                offset: offset + e.column().saturating_sub(1) as u64,
                message: e.to_string(),
            })?;
            dialogues.push(dialogue);
        }
        offset += line.len() as u64;
    }
    Ok(dialogues)
}
