use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{Agent, AgentMode, ChatSession, TurnResult};
use crate::error::{Error, Result};
use crate::label::SentimentLabel;

/// One line of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Created {
        id: String,
        mode: AgentMode,
        created_at: DateTime<Utc>,
    },
    ModeChanged {
        mode: AgentMode,
    },
    Turn {
        user_text: String,
        label: Option<SentimentLabel>,
        result: TurnResult,
    },
}

/// Appends events to `<dir>/<session id>.jsonl`.
#[derive(Debug, Clone)]
pub struct SessionLogger {
    dir: PathBuf,
}

impl SessionLogger {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(SessionLogger { dir })
    }

    pub fn path(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("{session_id}.jsonl"))
    }

    pub fn append(&self, session_id: &str, event: &LogEvent) -> Result<()> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path(session_id))?;
        writeln!(file, "{}", serde_json::to_string(event)?)?;
        Ok(())
    }
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogEvent>> {
    let file = fs::File::open(path)?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Validation(format!("session log line {}: {e}", i + 1)))?,
        );
    }
    Ok(events)
}

/// Re-runs a logged session against `agent`. Returns the logged and the
/// replayed result of every turn, in order.
pub fn replay_log(agent: &Agent, path: impl AsRef<Path>) -> Result<Vec<(TurnResult, TurnResult)>> {
    let events = read_log(path)?;
    let mut session: Option<ChatSession> = None;
    let mut out = Vec::new();
    for event in events {
        match event {
            LogEvent::Created { id, mode, created_at } => {
                session = Some(ChatSession::with_id(id, mode, created_at));
            }
            LogEvent::ModeChanged { mode } => {
                session
                    .as_mut()
                    .ok_or_else(|| Error::Validation("mode change before session creation".into()))?
                    .set_mode(mode);
            }
            LogEvent::Turn { user_text, label, result } => {
                let s = session
                    .as_mut()
                    .ok_or_else(|| Error::Validation("turn before session creation".into()))?;
                let replayed = agent.reply(s, &user_text, label)?;
                out.push((result, replayed));
            }
        }
    }
    Ok(out)
}
