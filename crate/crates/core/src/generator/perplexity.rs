use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{build_generation_input, GenerationInput};
use crate::corpus::Dialogue;
use crate::error::{Error, Result};
use crate::label::SentimentLabel;
use crate::lexicon::Lexicon;

/// Natural-log probabilities a model assigns to the reply tokens (and the
/// closing end token) of an input.
pub trait ReplyScorer {
    fn reply_token_logprobs(&self, input: &GenerationInput) -> Result<Vec<f64>>;
}

/// Predicts the sentiment the next reply should carry from a chronological
/// history.
pub trait ReplyPredictor: Send + Sync {
    fn predict_reply(&self, history: &[&str]) -> Result<SentimentLabel>;
}

/// Where the conditioning label of each evaluated reply comes from.
#[derive(Clone, Copy)]
pub enum LabelSource<'a> {
    Gold,
    Predicted(&'a dyn ReplyPredictor),
    None,
}

impl std::fmt::Debug for LabelSource<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LabelSource::Gold => "Gold",
            LabelSource::Predicted(_) => "Predicted",
            LabelSource::None => "None",
        })
    }
}

/// `exp(total reply-token NLL / reply-token count)` over `inputs`.
pub fn perplexity_of_inputs(scorer: &dyn ReplyScorer, inputs: &[GenerationInput]) -> Result<f64> {
    let mut nll = 0.0;
    let mut count = 0usize;
    for input in inputs {
        for lp in scorer.reply_token_logprobs(input)? {
            nll -= lp;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("no reply tokens to score".into()));
    }
    Ok((nll / count as f64).exp())
}

/// Teacher-forced inputs for every reply with at least one preceding turn,
/// conditioned per `source`. Returns the inputs with the label used.
pub fn eval_inputs(
    dialogues: &[Dialogue],
    lexicon: &Lexicon,
    source: LabelSource<'_>,
    seed: u64,
) -> Result<Vec<(GenerationInput, Option<SentimentLabel>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for dialogue in dialogues {
        let texts: Vec<&str> = dialogue.texts().collect();
        for j in 1..texts.len() {
            let history = &texts[..j];
            let label = match source {
                LabelSource::Gold => Some(dialogue.turns[j].label),
                LabelSource::Predicted(p) => Some(p.predict_reply(history)?),
                LabelSource::None => None,
            };
            let input = build_generation_input(lexicon, label, history, Some(texts[j]), Some(&mut rng))?;
            out.push((input, label));
        }
    }
    Ok(out)
}

pub fn perplexity(
    scorer: &dyn ReplyScorer,
    dialogues: &[Dialogue],
    lexicon: &Lexicon,
    source: LabelSource<'_>,
    seed: u64,
) -> Result<f64> {
    let inputs: Vec<GenerationInput> = eval_inputs(dialogues, lexicon, source, seed)?
        .into_iter()
        .map(|(i, _)| i)
        .collect();
    perplexity_of_inputs(scorer, &inputs)
}
