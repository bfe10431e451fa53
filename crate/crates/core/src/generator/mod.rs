//! Lexicon-conditioned dialogue decoder: input layout, training, decoding
//! and perplexity.

mod model;
mod perplexity;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::SentimentLabel;
use crate::lexicon::{Lexicon, LexiconKind};
use crate::nn::TransformerConfig;

pub use model::{EncodedInput, GenerationRecord, GeneratorManifest, GeneratorModel};
pub use perplexity::{
    eval_inputs, perplexity, perplexity_of_inputs, LabelSource, ReplyPredictor, ReplyScorer,
};
pub use train::{train_generator, GeneratorBatchLoss, TrainItem, TrainedGenerator};

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const SPEAKER1: &str = "<speaker1>";
pub const SPEAKER2: &str = "<speaker2>";
/// Registered once each, in this order, at the start of the vocabulary.
pub const GENERATOR_SPECIALS: [&str; 6] = [PAD, UNK, BOS, EOS, SPEAKER1, SPEAKER2];
pub const HISTORY_LEN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStrategy {
    Greedy,
    TopkSampling,
    Nucleus,
}

impl fmt::Display for DecodeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodeStrategy::Greedy => "greedy",
            DecodeStrategy::TopkSampling => "topk_sampling",
            DecodeStrategy::Nucleus => "nucleus",
        })
    }
}

impl FromStr for DecodeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(DecodeStrategy::Greedy),
            "topk_sampling" | "topk" | "top_k" => Ok(DecodeStrategy::TopkSampling),
            "nucleus" | "top_p" => Ok(DecodeStrategy::Nucleus),
            other => Err(Error::Config(format!("unknown decoding strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub strategy: DecodeStrategy,
    pub top_k: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub seed: u64,
    pub max_new_tokens: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            strategy: DecodeStrategy::TopkSampling,
            top_k: 50,
            top_p: 0.9,
            temperature: 1.0,
            seed: 42,
            max_new_tokens: 20,
        }
    }
}

impl DecodeParams {
    pub fn greedy(max_new_tokens: usize) -> Self {
        DecodeParams {
            strategy: DecodeStrategy::Greedy,
            max_new_tokens,
            ..Default::default()
        }
    }
}

/// Decoder architecture by preset name.
pub fn decoder_preset(name: &str, vocab_size: usize) -> Result<TransformerConfig> {
    let (hidden, layers, heads, ff, max_positions) = match name {
        "toy-dec" => (48, 2, 2, 96, 96),
        "small-dec" => (64, 4, 4, 128, 128),
        other => {
            return Err(Error::Config(format!(
                "unknown decoder `{other}` (available: toy-dec, small-dec)"
            )))
        }
    };
    Ok(TransformerConfig {
        vocab_size,
        hidden,
        layers,
        heads,
        ff,
        max_positions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub decoder_name: String,
    pub lexicon_kind: LexiconKind,
    pub history_len: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub val_steps_per_epoch: usize,
    pub patience_val_steps: usize,
    pub effective_batch: usize,
    pub physical_batch: usize,
    pub multitask: bool,
    pub alpha: f64,
    pub beta: f64,
    pub num_distractors: usize,
    pub decode: DecodeParams,
    pub seed: u64,
    pub max_train_seconds: Option<f64>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            decoder_name: "small-dec".into(),
            lexicon_kind: LexiconKind::SentimentSentences,
            history_len: HISTORY_LEN,
            lr: 5e-6,
            max_epochs: 40,
            val_steps_per_epoch: 4,
            patience_val_steps: 12,
            effective_batch: 16,
            physical_batch: 16,
            multitask: false,
            alpha: 1.0,
            beta: 1.0,
            num_distractors: 3,
            decode: DecodeParams::default(),
            seed: 13,
            max_train_seconds: None,
        }
    }
}

impl GeneratorConfig {
    /// Desk-scale settings for the toy decoder trained from scratch.
    pub fn toy(lexicon_kind: LexiconKind, seed: u64) -> Self {
        GeneratorConfig {
            decoder_name: "toy-dec".into(),
            lexicon_kind,
            lr: 3e-3,
            max_epochs: 12,
            seed,
            decode: DecodeParams {
                seed,
                max_new_tokens: 12,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.history_len != HISTORY_LEN {
            return Err(Error::Config(format!(
                "history_len is fixed at {HISTORY_LEN}, got {}",
                self.history_len
            )));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        if !(2..=6).contains(&self.num_distractors) {
            return Err(Error::Config(format!(
                "num_distractors {} outside 2..=6",
                self.num_distractors
            )));
        }
        if self.physical_batch == 0 || self.effective_batch < self.physical_batch {
            return Err(Error::Config(format!(
                "physical batch {} must be in 1..={}",
                self.physical_batch, self.effective_batch
            )));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.val_steps_per_epoch == 0 || self.patience_val_steps == 0 {
            return Err(Error::Config("validation steps and patience must be positive".into()));
        }
        Ok(())
    }
}

/// Which of the two speaker tokens a history turn carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Speaker1,
    Speaker2,
}

impl Speaker {
    pub fn token(self) -> &'static str {
        match self {
            Speaker::Speaker1 => SPEAKER1,
            Speaker::Speaker2 => SPEAKER2,
        }
    }
}

/// Model input before tokenization. The agent always speaks as
/// `<speaker2>`; history turns alternate backwards from `<speaker1>` on the
/// most recent one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationInput {
    pub lexicon_text: String,
    pub history: Vec<(Speaker, String)>,
    pub reply: Option<String>,
}

impl GenerationInput {
    /// Surface layout, e.g. `<bos> I am angry. <speaker1> Hi! <speaker2>`,
    /// followed by ` reply <eos>` when a reply is present.
    pub fn render(&self) -> String {
        let mut parts: Vec<&str> = vec![BOS];
        if !self.lexicon_text.is_empty() {
            parts.push(&self.lexicon_text);
        }
        for (speaker, text) in &self.history {
            parts.push(speaker.token());
            parts.push(text);
        }
        parts.push(SPEAKER2);
        if let Some(reply) = &self.reply {
            parts.push(reply);
            parts.push(EOS);
        }
        parts.join(" ")
    }
}

/// Lays out a generator input: conditioning text for `label` (empty when
/// `label` is `None` or the lexicon kind is `none`), then the
/// [`HISTORY_LEN`] most recent history sentences.
pub fn build_generation_input<S: AsRef<str>>(
    lexicon: &Lexicon,
    label: Option<SentimentLabel>,
    history: &[S],
    reply: Option<&str>,
    rng: Option<&mut dyn RngCore>,
) -> Result<GenerationInput> {
    let lexicon_text = match label {
        Some(label) => lexicon.conditioning_text(label, rng)?,
        None => String::new(),
    };
    let start = history.len().saturating_sub(HISTORY_LEN);
    let recent = &history[start..];
    let n = recent.len();
    let history = recent
        .iter()
        .enumerate()
        .map(|(i, text)| {
            let speaker = if (n - 1 - i) % 2 == 0 {
                Speaker::Speaker1
            } else {
                Speaker::Speaker2
            };
            (speaker, text.as_ref().to_string())
        })
        .collect();
    Ok(GenerationInput {
        lexicon_text,
        history,
        reply: reply.map(str::to_string),
    })
}
