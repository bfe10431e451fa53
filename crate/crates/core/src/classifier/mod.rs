//! Transformer classifier shared by contextual sentiment classification and
//! reply-sentiment prediction.

mod model;
mod train;

use std::fmt;
use std::str::FromStr;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::encoding::Task;
use crate::error::{Error, Result};
use crate::nn::TransformerConfig;

pub use model::{
    build_classifier_vocab, token_ids, ClassifierManifest, ClassifierModel, ParamGroup,
    CLASSIFIER_SPECIALS,
};
pub use train::{train_classifier, train_on_examples, TrainedClassifier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Concat4,
    Cls,
}

impl Pooling {
    pub fn dim(self, hidden: usize) -> usize {
        match self {
            Pooling::Concat4 => 4 * hidden,
            Pooling::Cls => hidden,
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Concat4 => "concat4",
            Pooling::Cls => "cls",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat4" => Ok(Pooling::Concat4),
            "cls" => Ok(Pooling::Cls),
            other => Err(Error::Config(format!("unknown pooling `{other}`"))),
        }
    }
}

/// Pools per-layer hidden states `(B, T, H)` into `(B, dim)` using the
/// first-position token. `concat4` concatenates the last four states,
/// deepest last.
pub fn pool(states: &[Tensor], mode: Pooling) -> Result<Tensor> {
    let first = |t: &Tensor| -> Result<Tensor> { Ok(t.narrow(1, 0, 1)?.squeeze(1)?) };
    match mode {
        Pooling::Cls => {
            let last = states
                .last()
                .ok_or_else(|| Error::Config("no hidden states to pool".into()))?;
            first(last)
        }
        Pooling::Concat4 => {
            if states.len() < 4 {
                return Err(Error::Config(format!(
                    "concat4 pooling needs at least 4 hidden layers, encoder exposes {}",
                    states.len()
                )));
            }
            let parts = states[states.len() - 4..]
                .iter()
                .map(first)
                .collect::<Result<Vec<_>>>()?;
            Ok(Tensor::cat(&parts, 1)?)
        }
    }
}

/// Architecture of a named encoder preset. `layers + 1` hidden states are
/// exposed (embedding output plus one per block).
pub fn encoder_preset(name: &str, vocab_size: usize, max_tokens: usize) -> Result<TransformerConfig> {
    let (hidden, layers, heads, ff) = match name {
        "toy-2l" => (32, 2, 2, 64),
        "tiny-4l" => (32, 4, 2, 64),
        "small-6l" => (64, 6, 4, 128),
        other => {
            return Err(Error::Config(format!(
                "unknown encoder `{other}` (available: toy-2l, tiny-4l, small-6l)"
            )))
        }
    };
    Ok(TransformerConfig {
        vocab_size,
        hidden,
        layers,
        heads,
        ff,
        max_positions: max_tokens,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub task: Task,
    pub encoder_name: String,
    pub pooling: Pooling,
    /// Context size: sentences before the target (classify) or before the
    /// reply (reply_predict).
    pub x: usize,
    pub use_retrieval: bool,
    pub head_lr: f64,
    pub encoder_lr: f64,
    pub layer_decay: f64,
    /// Decay every encoder rate by `layer_decay` after each optimizer step
    /// instead of per layer.
    pub decay_per_step: bool,
    pub dropout: f64,
    pub max_epochs: usize,
    pub val_steps_per_epoch: usize,
    pub patience_val_steps: usize,
    pub effective_batch: usize,
    pub physical_batch: usize,
    pub seed: u64,
    pub max_tokens: usize,
    /// Wall-clock budget; training stops at the first validation step past it.
    pub max_train_seconds: Option<f64>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            task: Task::Classify,
            encoder_name: "tiny-4l".into(),
            pooling: Pooling::Concat4,
            x: 1,
            use_retrieval: false,
            head_lr: 1e-3,
            encoder_lr: 5e-6,
            layer_decay: 0.95,
            decay_per_step: false,
            dropout: 0.4,
            max_epochs: 40,
            val_steps_per_epoch: 4,
            patience_val_steps: 10,
            effective_batch: 32,
            physical_batch: 32,
            seed: 13,
            max_tokens: 128,
            max_train_seconds: None,
        }
    }
}

impl ClassifierConfig {
    /// Defaults with the tuned context size for `task` (1 for classify,
    /// 4 for reply prediction).
    pub fn for_task(task: Task) -> Self {
        ClassifierConfig {
            task,
            x: match task {
                Task::Classify => 1,
                Task::ReplyPredict => 4,
            },
            ..Default::default()
        }
    }

    /// Desk-scale settings for the 2-layer toy encoder: cls pooling and
    /// higher learning rates, since the encoder starts untrained.
    pub fn toy(task: Task, seed: u64) -> Self {
        ClassifierConfig {
            encoder_name: "toy-2l".into(),
            pooling: Pooling::Cls,
            head_lr: 3e-3,
            encoder_lr: 1e-3,
            dropout: 0.1,
            max_epochs: 30,
            effective_batch: 16,
            physical_batch: 16,
            max_tokens: 64,
            seed,
            ..Self::for_task(task)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dropout > 0.0 && self.dropout < 1.0) {
            return Err(Error::Config(format!("dropout {} outside (0, 1)", self.dropout)));
        }
        if self.physical_batch == 0 || self.effective_batch < self.physical_batch {
            return Err(Error::Config(format!(
                "physical batch {} must be in 1..={}",
                self.physical_batch, self.effective_batch
            )));
        }
        if self.task == Task::ReplyPredict && self.x == 0 {
            return Err(Error::Config("reply prediction needs context size >= 1".into()));
        }
        if !(self.layer_decay > 0.0 && self.layer_decay <= 1.0) {
            return Err(Error::Config(format!("layer_decay {} outside (0, 1]", self.layer_decay)));
        }
        if self.head_lr <= 0.0 || self.encoder_lr < 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.max_tokens < 4 {
            return Err(Error::Config("max_tokens must be at least 4".into()));
        }
        if self.val_steps_per_epoch == 0 || self.patience_val_steps == 0 {
            return Err(Error::Config("validation steps and patience must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn states(n: usize, h: usize) -> Vec<Tensor> {
        (0..n)
            .map(|i| {
                Tensor::full(i as f32, (2, 3, h), &Device::Cpu)
                    .unwrap()
                    .to_dtype(DType::F32)
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn pooled_dims() {
        let s = states(6, 8);
        assert_eq!(pool(&s, Pooling::Concat4).unwrap().dims(), &[2, 32]);
        assert_eq!(pool(&s, Pooling::Cls).unwrap().dims(), &[2, 8]);
    }

    #[test]
    fn concat4_takes_last_four_deepest_last() {
        let v: Vec<Vec<f32>> = pool(&states(6, 2), Pooling::Concat4).unwrap().to_vec2().unwrap();
        assert_eq!(v[0], vec![2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 5.0, 5.0]);
    }

    #[test]
    fn zero_states_pool_to_zero() {
        let z = vec![Tensor::zeros((1, 4, 8), DType::F32, &Device::Cpu).unwrap(); 5];
        let v: Vec<Vec<f32>> = pool(&z, Pooling::Concat4).unwrap().to_vec2().unwrap();
        assert_eq!(v[0], vec![0.0; 32]);
    }

    #[test]
    fn concat4_needs_four_states() {
        assert!(matches!(pool(&states(3, 8), Pooling::Concat4), Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        assert!(ClassifierConfig::default().validate().is_ok());
        assert!(ClassifierConfig::toy(Task::ReplyPredict, 1).validate().is_ok());
        let bad = ClassifierConfig {
            dropout: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(ClassifierConfig::for_task(Task::ReplyPredict).x, 4);
    }

    #[test]
    fn presets() {
        assert_eq!(encoder_preset("toy-2l", 10, 64).unwrap().layers, 2);
        assert!(encoder_preset("bert-large", 10, 64).is_err());
    }
}
