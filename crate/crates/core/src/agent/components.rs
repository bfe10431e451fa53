use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classifier::ClassifierModel;
use crate::encoding::{reply_window, Task, SEP};
use crate::error::{Error, Result};
use crate::generator::{
    build_generation_input, DecodeParams, GeneratorModel, ReplyPredictor, ReplyScorer,
};
use crate::label::SentimentLabel;
use crate::lexicon::{Lexicon, LexiconKind};
use crate::metrics::SentimentJudge;
use crate::retrieval::RetrievalContext;

/// Produces and scores replies given an optional conditioning label and a
/// chronological history.
pub trait DialogueGenerator: Send + Sync {
    fn lexicon_kind(&self) -> LexiconKind;
    fn generate_reply(&self, label: Option<SentimentLabel>, history: &[&str]) -> Result<String>;
    /// Log-probabilities of `reply`'s tokens and the end token.
    fn reply_logprobs(&self, label: Option<SentimentLabel>, history: &[&str], reply: &str) -> Result<Vec<f64>>;
}

/// A trained decoder with the lexicon it was trained against.
#[derive(Debug, Clone)]
pub struct LexiconGenerator {
    pub model: GeneratorModel,
    pub lexicon: Lexicon,
    pub decode: DecodeParams,
}

impl LexiconGenerator {
    pub fn new(model: GeneratorModel, lexicon: Lexicon, decode: DecodeParams) -> Result<Self> {
        if lexicon.kind != model.config().lexicon_kind {
            return Err(Error::Config(format!(
                "generator was trained with a {} lexicon, got {}",
                model.config().lexicon_kind,
                lexicon.kind
            )));
        }
        Ok(LexiconGenerator { model, lexicon, decode })
    }

    /// Writes the model and `lexicon.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.model.save(&dir)?;
        self.lexicon.save(dir.as_ref().join("lexicon.json"))
    }

    /// Loads a generator directory; decoding defaults to the manifest's.
    pub fn load(dir: impl AsRef<Path>, decode: Option<DecodeParams>) -> Result<Self> {
        let dir = dir.as_ref();
        let model = GeneratorModel::load(dir)?;
        let lexicon_path = dir.join("lexicon.json");
        let lexicon = if lexicon_path.exists() {
            Lexicon::load(lexicon_path)?
        } else if model.config().lexicon_kind == LexiconKind::None {
            Lexicon::none()
        } else {
            return Err(Error::Checkpoint(format!("no lexicon.json in {}", dir.display())));
        };
        let decode = decode.unwrap_or(model.config().decode);
        Self::new(model, lexicon, decode)
    }

    fn input(
        &self,
        label: Option<SentimentLabel>,
        history: &[&str],
        reply: Option<&str>,
    ) -> Result<crate::generator::GenerationInput> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.decode.seed);
        build_generation_input(&self.lexicon, label, history, reply, Some(&mut rng))
    }
}

impl DialogueGenerator for LexiconGenerator {
    fn lexicon_kind(&self) -> LexiconKind {
        self.lexicon.kind
    }

    fn generate_reply(&self, label: Option<SentimentLabel>, history: &[&str]) -> Result<String> {
        let input = self.input(label, history, None)?;
        self.model.generate(&input, &self.decode)
    }

    fn reply_logprobs(&self, label: Option<SentimentLabel>, history: &[&str], reply: &str) -> Result<Vec<f64>> {
        self.model.reply_token_logprobs(&self.input(label, history, Some(reply))?)
    }
}

fn check_retrieval(model: &ClassifierModel, retrieval: &Option<RetrievalContext>) -> Result<()> {
    if model.config().use_retrieval && retrieval.is_none() {
        return Err(Error::Config(
            "classifier was trained with retrieval; load its retrieval context".into(),
        ));
    }
    Ok(())
}

/// Reply-sentiment predictor over the same windows as at training time.
#[derive(Debug, Clone)]
pub struct ClassifierPredictor {
    pub model: ClassifierModel,
    pub retrieval: Option<RetrievalContext>,
}

impl ClassifierPredictor {
    pub fn new(model: ClassifierModel, retrieval: Option<RetrievalContext>) -> Result<Self> {
        if model.config().task != Task::ReplyPredict {
            return Err(Error::Config(format!(
                "predictor needs a reply_predict model, got {}",
                model.config().task
            )));
        }
        check_retrieval(&model, &retrieval)?;
        Ok(ClassifierPredictor { model, retrieval })
    }

    pub fn window(&self, history: &[&str]) -> String {
        reply_window(history.iter().copied(), self.model.config().x, SEP)
    }
}

impl ReplyPredictor for ClassifierPredictor {
    fn predict_reply(&self, history: &[&str]) -> Result<SentimentLabel> {
        if history.is_empty() {
            return Err(Error::Validation("reply prediction needs at least one sentence".into()));
        }
        let window = self.window(history);
        Ok(self.model.predict_windows(&[window], self.retrieval.as_ref())?[0])
    }
}

/// Sentiment classifier used to judge generated replies. The reply is the
/// target sentence, the history its context.
#[derive(Debug, Clone)]
pub struct ClassifierJudge {
    pub model: ClassifierModel,
    pub retrieval: Option<RetrievalContext>,
}

impl ClassifierJudge {
    pub fn new(model: ClassifierModel, retrieval: Option<RetrievalContext>) -> Result<Self> {
        if model.config().task != Task::Classify {
            return Err(Error::Config(format!(
                "judge needs a classify model, got {}",
                model.config().task
            )));
        }
        check_retrieval(&model, &retrieval)?;
        Ok(ClassifierJudge { model, retrieval })
    }

    pub fn window(&self, reply: &str, context: &[&str]) -> String {
        let x = self.model.config().x;
        reply_window(context.iter().copied().chain([reply]), x + 1, SEP)
    }
}

impl SentimentJudge for ClassifierJudge {
    fn labels(&self) -> &[SentimentLabel] {
        self.model.labels()
    }

    fn judge(&self, reply: &str, context: &[&str]) -> Result<SentimentLabel> {
        let window = self.window(reply, context);
        Ok(self.model.predict_windows(&[window], self.retrieval.as_ref())?[0])
    }
}
