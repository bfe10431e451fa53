use std::collections::BTreeMap;
use std::time::Instant;

use candle_core::{DType, Tensor, Var};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::build_generator_vocab;
use super::{build_generation_input, EncodedInput, GenerationInput, GeneratorConfig, GeneratorModel};
use crate::corpus::{Corpus, Dialogue, Split};
use crate::error::{Error, Result};
use crate::label::SentimentLabel;
use crate::lexicon::{Lexicon, LexiconKind};
use crate::training::{
    check_finite, validation_points, EarlyStopping, GradAccumulator, GroupedOptimizer,
    Observation, TrainingLog,
};

/// One reply to learn: turn `turn` of a dialogue with its history and gold
/// sentiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainItem {
    pub dialogue_id: String,
    pub turn: usize,
    pub history: Vec<String>,
    pub label: SentimentLabel,
    pub reply: String,
}

impl TrainItem {
    /// Every turn with at least one preceding turn.
    pub fn from_dialogues(dialogues: &[Dialogue]) -> Vec<TrainItem> {
        let mut items = Vec::new();
        for d in dialogues {
            for j in 1..d.turns.len() {
                items.push(TrainItem {
                    dialogue_id: d.id.clone(),
                    turn: j,
                    history: d.turns[..j].iter().map(|u| u.text.clone()).collect(),
                    label: d.turns[j].label,
                    reply: d.turns[j].text.clone(),
                });
            }
        }
        items
    }

    fn input(&self, lexicon: &Lexicon, reply: &str, rng: &mut ChaCha8Rng) -> Result<GenerationInput> {
        build_generation_input(lexicon, Some(self.label), &self.history, Some(reply), Some(rng))
    }
}

/// Candidate replies for one item; only `candidates[gold]` carries LM loss.
#[derive(Debug, Clone)]
struct Sample {
    candidates: Vec<EncodedInput>,
    gold: usize,
}

#[derive(Debug, Clone)]
pub struct GeneratorBatchLoss {
    /// Mean NLL of the gold replies' tokens.
    pub lm: Tensor,
    pub nsp: Option<Tensor>,
    /// `alpha * lm + beta * nsp`, or `lm` alone without the auxiliary task.
    pub total: Tensor,
    pub lm_tokens: usize,
}

impl GeneratorBatchLoss {
    fn compute(model: &GeneratorModel, samples: &[&Sample], alpha: f64, beta: f64) -> Result<Self> {
        let width = samples[0].candidates.len();
        if samples.iter().any(|s| s.candidates.len() != width) {
            return Err(Error::Validation("samples disagree on candidate count".into()));
        }
        let seqs: Vec<&EncodedInput> = samples.iter().flat_map(|s| &s.candidates).collect();
        let include: Vec<bool> = samples
            .iter()
            .flat_map(|s| (0..width).map(move |c| c == s.gold))
            .collect();
        let (hidden, t) = model.hidden(&seqs)?;
        let (sum, count) = model.lm_nll_sum(&seqs, &hidden, t, Some(&include))?;
        if count == 0 {
            return Err(Error::Empty("no reply tokens in batch".into()));
        }
        let lm = (sum / count as f64)?;
        if width == 1 {
            return Ok(GeneratorBatchLoss {
                total: lm.clone(),
                lm,
                nsp: None,
                lm_tokens: count,
            });
        }
        let scores = model.nsp_scores(&seqs, &hidden, t)?.reshape((samples.len(), width))?;
        let golds: Vec<u32> = samples.iter().map(|s| s.gold as u32).collect();
        let golds = Tensor::new(golds.as_slice(), scores.device())?;
        let nsp = candle_nn::loss::cross_entropy(&scores, &golds)?;
        let total = ((&lm * alpha)? + (&nsp * beta)?)?;
        Ok(GeneratorBatchLoss {
            lm,
            nsp: Some(nsp),
            total,
            lm_tokens: count,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainedGenerator {
    /// Restored to the lowest dev NLL checkpoint.
    pub model: GeneratorModel,
    pub lexicon: Lexicon,
    pub log: TrainingLog,
    pub initial_nll: f64,
    pub best_nll: f64,
    pub best_step: usize,
    pub optimizer_steps: usize,
    pub stopped_early: bool,
    pub elapsed_seconds: f64,
}

/// Training sentences grouped by label, the distractor source.
fn sentences_by_label(items: &[TrainItem]) -> BTreeMap<SentimentLabel, Vec<&str>> {
    let mut out: BTreeMap<SentimentLabel, Vec<&str>> = BTreeMap::new();
    for item in items {
        out.entry(item.label).or_default().push(&item.reply);
    }
    out
}

fn build_samples(
    model: &GeneratorModel,
    config: &GeneratorConfig,
    items: &[TrainItem],
    lexicon: &Lexicon,
    distractors: Option<&BTreeMap<SentimentLabel, Vec<&str>>>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let input = item.input(lexicon, &item.reply, rng)?;
        let Some(pools) = distractors else {
            out.push(Sample {
                candidates: vec![model.encode(&input, 0)],
                gold: 0,
            });
            continue;
        };
        let foreign: Vec<&str> = pools
            .iter()
            .filter(|(l, _)| **l != item.label)
            .flat_map(|(_, s)| s.iter().copied())
            .collect();
        if foreign.is_empty() {
            return Err(Error::Validation(format!(
                "no training sentences outside label {} to draw distractors from",
                item.label
            )));
        }
        let gold = rng.random_range(0..=config.num_distractors);
        let mut candidates = Vec::with_capacity(config.num_distractors + 1);
        for c in 0..=config.num_distractors {
            let reply = if c == gold {
                item.reply.as_str()
            } else {
                foreign.choose(rng).copied().expect("non-empty")
            };
            let candidate = GenerationInput {
                reply: Some(reply.to_string()),
                ..input.clone()
            };
            candidates.push(model.encode(&candidate, 0));
        }
        out.push(Sample { candidates, gold });
    }
    Ok(out)
}

/// Token-averaged NLL of the dev replies under gold conditioning.
fn dev_nll(model: &GeneratorModel, dev: &[EncodedInput]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for chunk in dev.chunks(32) {
        let refs: Vec<&EncodedInput> = chunk.iter().collect();
        let (hidden, t) = model.hidden(&refs)?;
        let (sum, n) = model.lm_nll_sum(&refs, &hidden, t, None)?;
        total += sum.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        count += n;
    }
    if count == 0 {
        return Err(Error::Empty("dev split has no reply tokens".into()));
    }
    Ok(total / count as f64)
}

/// Trains a decoder from scratch on the train split conditioned by
/// `lexicon`, keeping the checkpoint with the lowest token-averaged dev NLL.
pub fn train_generator(
    config: &GeneratorConfig,
    corpus: &Corpus,
    lexicon: &Lexicon,
) -> Result<TrainedGenerator> {
    config.validate()?;
    if lexicon.kind != config.lexicon_kind {
        return Err(Error::Config(format!(
            "config asks for a {} lexicon, got {}",
            config.lexicon_kind, lexicon.kind
        )));
    }
    let train = TrainItem::from_dialogues(corpus.split(Split::Train));
    let dev = TrainItem::from_dialogues(corpus.split(Split::Dev));
    if train.is_empty() {
        return Err(Error::Empty("train split has no replies".into()));
    }
    if dev.is_empty() {
        return Err(Error::Empty("dev split has no replies".into()));
    }
    let texts = corpus
        .split(Split::Train)
        .iter()
        .flat_map(|d| d.texts());
    let vocab = build_generator_vocab(texts, lexicon)?;
    let mut model = GeneratorModel::new(config.clone(), vocab, DType::F32)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e4e_7a70);
    let mut dev_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xde7);
    let dev_inputs: Vec<EncodedInput> = dev
        .iter()
        .map(|item| Ok(model.encode(&item.input(lexicon, &item.reply, &mut dev_rng)?, 0)))
        .collect::<Result<_>>()?;
    let pools = sentences_by_label(&train);
    let distractors = config.multitask.then_some(&pools);

    let mut opt = GroupedOptimizer::new();
    opt.add_group("decoder", model.store().all_vars(), config.lr, false)?;
    let vars: Vec<Var> = opt.vars().cloned().collect();
    let var_refs: Vec<&Var> = vars.iter().collect();

    let n = train.len();
    let batches_per_epoch = n.div_ceil(config.effective_batch);
    let points = validation_points(batches_per_epoch, config.val_steps_per_epoch);
    let mut stopper = EarlyStopping::new(config.patience_val_steps, false);
    let mut log = TrainingLog::default();

    let initial_nll = dev_nll(&model, &dev_inputs)?;
    check_finite(initial_nll, 0, "validation")?;
    log.push(0, "dev", initial_nll, None);
    stopper.observe(initial_nll);
    let mut best = model.store().snapshot()?;
    let mut best_step = 0;
    let mut steps = 0;
    let mut stopped_early = false;
    let (mut running_loss, mut running_batches) = (0.0, 0usize);
    let start = Instant::now();
    let mut samples = Vec::new();

    'epochs: for epoch in 0..config.max_epochs {
        // random_sample conditioning and distractors are redrawn each epoch
        if epoch == 0 || lexicon.kind == LexiconKind::RandomSample || config.multitask {
            samples = build_samples(&model, config, &train, lexicon, distractors, &mut rng)?;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(config.effective_batch).enumerate() {
            let mut acc = GradAccumulator::new();
            let mut batch_loss = 0.0;
            for micro in batch.chunks(config.physical_batch) {
                let picked: Vec<&Sample> = micro.iter().map(|i| &samples[*i]).collect();
                let loss = GeneratorBatchLoss::compute(&model, &picked, config.alpha, config.beta)?;
                let weight = micro.len() as f64 / batch.len() as f64;
                let value = loss.total.to_dtype(DType::F64)?.to_scalar::<f64>()?;
                check_finite(value, steps, "training")?;
                batch_loss += value * weight;
                acc.add(&(loss.total * weight)?, &var_refs)?;
            }
            if let Some(grads) = acc.take() {
                opt.step(&grads)?;
            }
            steps += 1;
            running_loss += batch_loss;
            running_batches += 1;

            if points.contains(&(b + 1)) {
                let nll = dev_nll(&model, &dev_inputs)?;
                check_finite(nll, steps, "validation")?;
                log.push(steps, "train", running_loss / running_batches as f64, None);
                log.push(steps, "dev", nll, None);
                running_loss = 0.0;
                running_batches = 0;
                tracing::debug!(steps, nll, "validation");
                match stopper.observe(nll) {
                    Observation::Improved => {
                        best = model.store().snapshot()?;
                        best_step = steps;
                    }
                    Observation::NotImproved => {}
                    Observation::Stop => {
                        stopped_early = true;
                        break 'epochs;
                    }
                }
                if config
                    .max_train_seconds
                    .is_some_and(|limit| start.elapsed().as_secs_f64() > limit)
                {
                    tracing::info!(steps, "training time budget reached");
                    break 'epochs;
                }
            }
        }
    }
    model.store().restore(&best)?;
    let best_nll = stopper.best().unwrap_or(initial_nll);
    model.set_dev_nll(Some(best_nll));
    Ok(TrainedGenerator {
        model,
        lexicon: lexicon.clone(),
        log,
        initial_nll,
        best_nll,
        best_step,
        optimizer_steps: steps,
        stopped_early,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{make_synthetic_corpus, SyntheticSpec};
    use crate::lexicon::build_tag;
    use SentimentLabel::*;

    fn setup(multitask: bool) -> (GeneratorModel, GeneratorConfig, Vec<TrainItem>, Lexicon) {
        let corpus = make_synthetic_corpus(&SyntheticSpec::new(vec![Joy, Anger], 3, 2));
        let lex = build_tag(&[Joy, Anger]);
        let config = GeneratorConfig {
            multitask,
            ..GeneratorConfig::toy(LexiconKind::Tag, 2)
        };
        let texts = corpus.split(Split::Train).iter().flat_map(|d| d.texts());
        let vocab = build_generator_vocab(texts, &lex).unwrap();
        let model = GeneratorModel::new(config.clone(), vocab, DType::F32).unwrap();
        (model, config, TrainItem::from_dialogues(corpus.split(Split::Train)), lex)
    }

    #[test]
    fn items_skip_opening_turns() {
        let (_, _, items, _) = setup(false);
        assert_eq!(items.len(), 6 * 3);
        assert!(items.iter().all(|i| i.turn >= 1 && i.history.len() == i.turn));
    }

    #[test]
    fn zero_beta_reduces_to_language_modelling() {
        let (model, config, items, lex) = setup(true);
        let pools = sentences_by_label(&items);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let samples = build_samples(&model, &config, &items[..4], &lex, Some(&pools), &mut rng).unwrap();
        assert!(samples.iter().all(|s| s.candidates.len() == 4));
        let refs: Vec<&Sample> = samples.iter().collect();
        let loss = GeneratorBatchLoss::compute(&model, &refs, 0.7, 0.0).unwrap();
        let total = loss.total.to_scalar::<f32>().unwrap();
        let lm = loss.lm.to_scalar::<f32>().unwrap();
        assert!((total - 0.7 * lm).abs() < 1e-6);
        assert!(loss.nsp.unwrap().to_scalar::<f32>().unwrap() > 0.0);
    }

    #[test]
    fn distractor_replies_carry_no_lm_loss() {
        let (model, config, items, lex) = setup(true);
        let pools = sentences_by_label(&items);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples = build_samples(&model, &config, &items[..3], &lex, Some(&pools), &mut rng).unwrap();
        let refs: Vec<&Sample> = samples.iter().collect();
        let loss = GeneratorBatchLoss::compute(&model, &refs, 1.0, 1.0).unwrap();
        let gold_tokens: usize = samples
            .iter()
            .map(|s| s.candidates[s.gold].loss_positions().len())
            .sum();
        assert_eq!(loss.lm_tokens, gold_tokens);
        for (s, item) in samples.iter().zip(&items) {
            let gold = &s.candidates[s.gold];
            let reply = model.vocab().encode_text(&item.reply);
            assert_eq!(&gold.ids[gold.reply_start..gold.ids.len() - 1], reply.as_slice());
        }
    }

    #[test]
    fn single_label_corpus_cannot_supply_distractors() {
        let (model, config, items, lex) = setup(true);
        let joy_only: Vec<TrainItem> = items.into_iter().filter(|i| i.label == Joy).collect();
        let pools = sentences_by_label(&joy_only);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = build_samples(&model, &config, &joy_only, &lex, Some(&pools), &mut rng).unwrap_err();
        assert!(err.to_string().contains("distractors"), "{err}");
    }

    #[test]
    fn lexicon_kind_must_match_config() {
        let corpus = make_synthetic_corpus(&SyntheticSpec::new(vec![Joy, Anger], 2, 2));
        let config = GeneratorConfig::toy(LexiconKind::Tfidf, 1);
        assert!(train_generator(&config, &corpus, &build_tag(&[Joy, Anger])).is_err());
    }

    #[test]
    fn short_run_logs_initial_nll_and_keeps_best() {
        let corpus = make_synthetic_corpus(&SyntheticSpec::new(vec![Joy, Anger], 4, 3));
        let config = GeneratorConfig {
            max_epochs: 2,
            ..GeneratorConfig::toy(LexiconKind::Tag, 3)
        };
        let out = train_generator(&config, &corpus, &build_tag(&[Joy, Anger])).unwrap();
        let dev: Vec<f64> = out.log.split_rows("dev").map(|r| r.loss).collect();
        assert_eq!(out.log.split_rows("dev").next().unwrap().step, 0);
        assert_eq!(dev[0], out.initial_nll);
        let min = dev.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_nll, min);
        assert_eq!(out.model.dev_nll(), Some(min));
    }
}
