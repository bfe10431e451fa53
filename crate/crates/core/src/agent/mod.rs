//! Conversational agent: Baseline, Oracle and SACA modes over a reply
//! predictor, a dialogue generator and an optional judge.
//!
//! Chat sessions feed the agent's own replies back as context for later
//! predictions; batch evaluation always uses the gold history.

mod components;
mod eval;
mod log;
mod service;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::ReplyPredictor;
use crate::label::SentimentLabel;
use crate::lexicon::LexiconKind;
use crate::metrics::SentimentJudge;

pub use components::{ClassifierJudge, ClassifierPredictor, DialogueGenerator, LexiconGenerator};
pub use eval::{run_batch_eval, BatchEvalOutput};
pub use log::{replay_log, LogEvent, SessionLogger};
pub use service::{router, serve, serve_on, AppState, ServeConfig};

/// Number of most recent sentences the reply predictor sees at chat time.
pub const PREDICTOR_WINDOW: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    Baseline,
    Oracle,
    Saca,
}

impl ModeKind {
    pub const ALL: [ModeKind; 3] = [ModeKind::Baseline, ModeKind::Oracle, ModeKind::Saca];

    pub fn as_str(self) -> &'static str {
        match self {
            ModeKind::Baseline => "baseline",
            ModeKind::Oracle => "oracle",
            ModeKind::Saca => "saca",
        }
    }
}

impl fmt::Display for ModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(ModeKind::Baseline),
            "oracle" => Ok(ModeKind::Oracle),
            "saca" => Ok(ModeKind::Saca),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected baseline, oracle or saca)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentMode {
    pub kind: ModeKind,
    /// Always `none` for baseline.
    pub lexicon_kind: LexiconKind,
}

impl AgentMode {
    pub fn new(kind: ModeKind, lexicon_kind: LexiconKind) -> Result<Self> {
        match (kind, lexicon_kind) {
            (ModeKind::Baseline, LexiconKind::None) => {}
            (ModeKind::Baseline, other) => {
                return Err(Error::Config(format!("baseline mode takes no lexicon, got {other}")))
            }
            (_, LexiconKind::None) => {
                return Err(Error::Config(format!("{kind} mode needs a lexicon")))
            }
            _ => {}
        }
        Ok(AgentMode { kind, lexicon_kind })
    }

    pub fn baseline() -> Self {
        AgentMode {
            kind: ModeKind::Baseline,
            lexicon_kind: LexiconKind::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnResult {
    /// Reply predictor output; present in saca mode only.
    pub predicted_label: Option<SentimentLabel>,
    pub reply_text: String,
    pub judge_label: Option<SentimentLabel>,
    /// The label that conditioned the reply (predicted or oracle).
    pub shown_label: Option<SentimentLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub speaker: Role,
    pub text: String,
    pub shown_label: Option<SentimentLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSession {
    id: String,
    mode: AgentMode,
    history: Vec<HistoryEntry>,
    created_at: DateTime<Utc>,
}

impl ChatSession {
    pub fn new(mode: AgentMode) -> Self {
        Self::with_id(uuid::Uuid::new_v4().to_string(), mode, Utc::now())
    }

    pub fn with_id(id: String, mode: AgentMode, created_at: DateTime<Utc>) -> Self {
        ChatSession {
            id,
            mode,
            history: Vec::new(),
            created_at,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn mode(&self) -> AgentMode {
        self.mode
    }

    /// Later turns use `mode`; the history is kept.
    pub fn set_mode(&mut self, mode: AgentMode) {
        self.mode = mode;
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }

    pub fn texts(&self) -> Vec<&str> {
        self.history.iter().map(|e| e.text.as_str()).collect()
    }
}

/// Loaded models. Every component is immutable and shared.
#[derive(Clone)]
pub struct Agent {
    pub labels: Vec<SentimentLabel>,
    /// Unconditioned generator for baseline mode; falls back to
    /// `conditioned` with an empty prefix when absent.
    pub baseline: Option<Arc<dyn DialogueGenerator>>,
    pub conditioned: Option<Arc<dyn DialogueGenerator>>,
    pub predictor: Option<Arc<dyn ReplyPredictor>>,
    pub judge: Option<Arc<dyn SentimentJudge>>,
}

impl fmt::Debug for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Agent")
            .field("labels", &self.labels)
            .field("baseline", &self.baseline.is_some())
            .field("conditioned", &self.conditioned.as_ref().map(|g| g.lexicon_kind()))
            .field("predictor", &self.predictor.is_some())
            .field("judge", &self.judge.is_some())
            .finish()
    }
}

impl Agent {
    /// Modes this agent can serve.
    pub fn modes(&self) -> Vec<ModeKind> {
        ModeKind::ALL
            .into_iter()
            .filter(|kind| {
                let mode = AgentMode {
                    kind: *kind,
                    lexicon_kind: self.default_lexicon(*kind),
                };
                self.check_mode(&mode).is_ok()
            })
            .collect()
    }

    /// Lexicon kind a mode uses when the caller names none.
    pub fn default_lexicon(&self, kind: ModeKind) -> LexiconKind {
        match (kind, &self.conditioned) {
            (ModeKind::Baseline, _) | (_, None) => LexiconKind::None,
            (_, Some(g)) => g.lexicon_kind(),
        }
    }

    pub fn check_mode(&self, mode: &AgentMode) -> Result<()> {
        self.generator_for(mode).map(|_| ())?;
        if mode.kind == ModeKind::Saca && self.predictor.is_none() {
            return Err(Error::Config("saca mode needs a reply-sentiment predictor".into()));
        }
        Ok(())
    }

    fn generator_for(&self, mode: &AgentMode) -> Result<&dyn DialogueGenerator> {
        match mode.kind {
            ModeKind::Baseline => self
                .baseline
                .as_deref()
                .or(self.conditioned.as_deref())
                .ok_or_else(|| Error::Config("no generator loaded".into())),
            ModeKind::Oracle | ModeKind::Saca => {
                let g = self
                    .conditioned
                    .as_deref()
                    .ok_or_else(|| Error::Config(format!("{} mode needs a conditioned generator", mode.kind)))?;
                if g.lexicon_kind() != mode.lexicon_kind {
                    return Err(Error::Config(format!(
                        "loaded generator uses a {} lexicon, mode asks for {}",
                        g.lexicon_kind(),
                        mode.lexicon_kind
                    )));
                }
                Ok(g)
            }
        }
    }

    /// Label conditioning the next reply after `history`, and the
    /// predictor's output when one was consulted.
    pub fn conditioning_label(
        &self,
        mode: &AgentMode,
        history: &[&str],
        oracle_label: Option<SentimentLabel>,
    ) -> Result<(Option<SentimentLabel>, Option<SentimentLabel>)> {
        match mode.kind {
            ModeKind::Baseline => Ok((None, None)),
            ModeKind::Oracle => {
                let label = oracle_label
                    .ok_or_else(|| Error::Validation("label: required in oracle mode".into()))?;
                if !self.labels.contains(&label) {
                    return Err(Error::Validation(format!(
                        "label: `{label}` is not one of {:?}",
                        self.labels.iter().map(|l| l.as_str()).collect::<Vec<_>>()
                    )));
                }
                Ok((Some(label), None))
            }
            ModeKind::Saca => {
                let predictor = self
                    .predictor
                    .as_deref()
                    .ok_or_else(|| Error::Config("saca mode needs a reply-sentiment predictor".into()))?;
                let start = history.len().saturating_sub(PREDICTOR_WINDOW);
                let label = predictor.predict_reply(&history[start..])?;
                Ok((Some(label), Some(label)))
            }
        }
    }

    /// One agent turn after `history` (which already ends with the user's
    /// message). Pure: nothing is recorded.
    pub fn turn(
        &self,
        mode: &AgentMode,
        history: &[&str],
        oracle_label: Option<SentimentLabel>,
    ) -> Result<TurnResult> {
        let generator = self.generator_for(mode)?;
        let (label, predicted) = self.conditioning_label(mode, history, oracle_label)?;
        let reply_text = generator.generate_reply(label, history)?;
        let judge_label = match &self.judge {
            Some(judge) if !reply_text.trim().is_empty() => Some(judge.judge(&reply_text, history)?),
            _ => None,
        };
        Ok(TurnResult {
            predicted_label: predicted,
            reply_text,
            judge_label,
            shown_label: label,
        })
    }

    /// Appends `user_text` and the agent's reply to `session`.
    pub fn reply(
        &self,
        session: &mut ChatSession,
        user_text: &str,
        oracle_label: Option<SentimentLabel>,
    ) -> Result<TurnResult> {
        let user_text = user_text.trim();
        if user_text.is_empty() {
            return Err(Error::Validation("text: must not be empty".into()));
        }
        let mut history = session.texts();
        history.push(user_text);
        let result = self.turn(&session.mode, &history, oracle_label)?;
        session.history.push(HistoryEntry {
            speaker: Role::User,
            text: user_text.to_string(),
            shown_label: None,
        });
        session.history.push(HistoryEntry {
            speaker: Role::Agent,
            text: result.reply_text.clone(),
            shown_label: result.shown_label,
        });
        Ok(result)
    }
}


#[cfg(test)]
mod tests {
    use std::sync::atomic::Ordering;

    use super::testing::*;
    use super::*;
    use SentimentLabel::*;

    fn agent() -> (Agent, Arc<CountingPredictor>, Arc<EchoGenerator>, Arc<EchoGenerator>) {
        let predictor = Arc::new(CountingPredictor::new(Sadness));
        let conditioned = Arc::new(EchoGenerator::new(LexiconKind::SentimentSentences));
        let baseline = Arc::new(EchoGenerator::new(LexiconKind::None));
        let agent = Agent {
            labels: vec![Joy, Neutral, Sadness],
            baseline: Some(baseline.clone()),
            conditioned: Some(conditioned.clone()),
            predictor: Some(predictor.clone()),
            judge: Some(Arc::new(ParseJudge(vec![Joy, Neutral, Sadness]))),
        };
        (agent, predictor, conditioned, baseline)
    }

    fn saca() -> AgentMode {
        AgentMode::new(ModeKind::Saca, LexiconKind::SentimentSentences).unwrap()
    }

    #[test]
    fn baseline_never_touches_predictor_or_lexicon() {
        let (agent, predictor, conditioned, baseline) = agent();
        let mut session = ChatSession::new(AgentMode::baseline());
        for text in ["hello", "how are you?", "tell me more"] {
            let r = agent.reply(&mut session, text, Some(Joy)).unwrap();
            assert_eq!(r.predicted_label, None);
            assert_eq!(r.shown_label, None);
            assert_eq!(r.reply_text, "hello");
        }
        assert_eq!(predictor.calls.load(Ordering::SeqCst), 0);
        assert_eq!(conditioned.lexicon_calls.load(Ordering::SeqCst), 0);
        assert_eq!(baseline.lexicon_calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn saca_predicts_from_four_most_recent_sentences() {
        let (agent, predictor, _, _) = agent();
        let mut session = ChatSession::new(saca());
        for (i, text) in ["a", "b", "c"].iter().enumerate() {
            let r = agent.reply(&mut session, text, None).unwrap();
            assert_eq!(r.predicted_label, Some(Sadness));
            assert_eq!(r.shown_label, Some(Sadness));
            assert_eq!(r.judge_label, Some(Sadness));
            assert_eq!(predictor.last_len.load(Ordering::SeqCst), (2 * i + 1).min(PREDICTOR_WINDOW));
        }
        assert_eq!(session.history().len(), 6);
    }

    #[test]
    fn oracle_requires_a_known_label() {
        let (agent, predictor, _, _) = agent();
        let mode = AgentMode::new(ModeKind::Oracle, LexiconKind::SentimentSentences).unwrap();
        let mut session = ChatSession::new(mode);
        let err = agent.reply(&mut session, "hi", None).unwrap_err();
        assert!(err.to_string().contains("label"), "{err}");
        assert!(session.history().is_empty());
        assert!(agent.reply(&mut session, "hi", Some(Fear)).is_err());
        let r = agent.reply(&mut session, "hi", Some(Joy)).unwrap();
        assert_eq!((r.predicted_label, r.shown_label), (None, Some(Joy)));
        assert_eq!(predictor.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn history_is_append_only_across_mode_switches() {
        let (agent, _, _, _) = agent();
        let mut session = ChatSession::new(saca());
        agent.reply(&mut session, "one", None).unwrap();
        let before = session.history().to_vec();
        session.set_mode(AgentMode::baseline());
        agent.reply(&mut session, "two", None).unwrap();
        assert_eq!(&session.history()[..2], before.as_slice());
        assert_eq!(session.history()[3].shown_label, None);
    }

    #[test]
    fn mode_construction_rules() {
        assert!(AgentMode::new(ModeKind::Baseline, LexiconKind::Tag).is_err());
        assert!(AgentMode::new(ModeKind::Saca, LexiconKind::None).is_err());
        let (agent, _, _, _) = agent();
        let tag = AgentMode::new(ModeKind::Oracle, LexiconKind::Tag).unwrap();
        assert!(agent.check_mode(&tag).is_err());
        let bare = Agent {
            predictor: None,
            ..agent.clone()
        };
        assert_eq!(bare.modes(), vec![ModeKind::Baseline, ModeKind::Oracle]);
        assert_eq!("SACA".parse::<ModeKind>().unwrap(), ModeKind::Saca);
    }

    #[test]
    fn empty_user_text_is_rejected() {
        let (agent, _, _, _) = agent();
        let mut session = ChatSession::new(AgentMode::baseline());
        assert!(agent.reply(&mut session, "   ", None).is_err());
    }
}
