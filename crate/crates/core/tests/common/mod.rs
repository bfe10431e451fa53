#![allow(dead_code)]

use std::sync::Arc;

use saca_core::agent::{
    run_batch_eval, Agent, AgentMode, BatchEvalOutput, ClassifierJudge, ClassifierPredictor,
    LexiconGenerator, ModeKind,
};
use saca_core::classifier::{train_classifier, ClassifierConfig};
use saca_core::corpus::{make_synthetic_corpus, Corpus, Split, SyntheticSpec};
use saca_core::encoding::Task;
use saca_core::generator::{train_generator, GeneratorConfig, TrainedGenerator};
use saca_core::lexicon::{sentiment_sentences, Lexicon, LexiconKind};
use saca_core::SentimentLabel::{self, *};

pub const PIPELINE_LABELS: [SentimentLabel; 4] = [Anger, Joy, Sadness, Surprise];

/// 50 train dialogues per label: 200 in total.
pub fn pipeline_corpus(seed: u64) -> Corpus {
    make_synthetic_corpus(&SyntheticSpec::new(PIPELINE_LABELS.to_vec(), 50, seed))
}

pub fn train_toy_generator(corpus: &Corpus, kind: LexiconKind, seed: u64) -> TrainedGenerator {
    let lexicon = match kind {
        LexiconKind::None => Lexicon::none(),
        LexiconKind::SentimentSentences => sentiment_sentences(corpus.labels()).unwrap(),
        other => panic!("no toy setup for {other}"),
    };
    train_generator(&GeneratorConfig::toy(kind, seed), corpus, &lexicon).unwrap()
}

pub fn judge(corpus: &Corpus, seed: u64) -> ClassifierJudge {
    let out = train_classifier(&ClassifierConfig::toy(Task::Classify, seed), corpus, None).unwrap();
    ClassifierJudge::new(out.model, None).unwrap()
}

pub fn predictor(corpus: &Corpus, seed: u64) -> ClassifierPredictor {
    let out = train_classifier(&ClassifierConfig::toy(Task::ReplyPredict, seed), corpus, None).unwrap();
    ClassifierPredictor::new(out.model, None).unwrap()
}

pub struct Pipeline {
    pub corpus: Corpus,
    pub agent: Agent,
    pub baseline_nll: (f64, f64),
    pub conditioned_nll: (f64, f64),
}

/// Judge, reply predictor, unconditioned and sentiment-sentence generators
/// trained on the pipeline corpus.
pub fn train_pipeline(seed: u64, with_predictor: bool) -> Pipeline {
    let corpus = pipeline_corpus(seed);
    let none = train_toy_generator(&corpus, LexiconKind::None, seed);
    let ss = train_toy_generator(&corpus, LexiconKind::SentimentSentences, seed);
    let decode = none.model.config().decode;
    let agent = Agent {
        labels: corpus.labels().to_vec(),
        baseline: Some(Arc::new(LexiconGenerator::new(none.model, none.lexicon, decode).unwrap())),
        conditioned: Some(Arc::new(LexiconGenerator::new(ss.model, ss.lexicon, decode).unwrap())),
        predictor: with_predictor.then(|| Arc::new(predictor(&corpus, seed)) as _),
        judge: Some(Arc::new(judge(&corpus, seed))),
    };
    Pipeline {
        baseline_nll: (none.initial_nll, none.best_nll),
        conditioned_nll: (ss.initial_nll, ss.best_nll),
        corpus,
        agent,
    }
}

impl Pipeline {
    pub fn eval(&self, kind: ModeKind) -> BatchEvalOutput {
        let mode = match kind {
            ModeKind::Baseline => AgentMode::baseline(),
            other => AgentMode::new(other, LexiconKind::SentimentSentences).unwrap(),
        };
        let majority = self.corpus.majority_label(Split::Train).unwrap();
        run_batch_eval(&self.agent, &mode, self.corpus.split(Split::Test), majority, None).unwrap()
    }
}
