use std::collections::BTreeMap;
use std::time::Instant;

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{build_classifier_vocab, ClassifierConfig, ClassifierModel};
use crate::corpus::{Corpus, Split};
use crate::encoding::{encode_corpus, EncodedExample, SEP};
use crate::error::{Error, Result};
use crate::label::SentimentLabel;
use crate::metrics::f1_report;
use crate::retrieval::RetrievalContext;
use crate::training::{
    check_finite, validation_points, EarlyStopping, GradAccumulator, GroupedOptimizer,
    Observation, TrainingLog,
};

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    /// Restored to the best validation checkpoint.
    pub model: ClassifierModel,
    pub log: TrainingLog,
    pub best_step: usize,
    pub best_macro_f1: f64,
    /// Optimizer updates performed in total.
    pub optimizer_steps: usize,
    pub stopped_early: bool,
    pub elapsed_seconds: f64,
}

/// Encodes `corpus` for `config.task` and trains on its train split,
/// selecting the checkpoint with the highest dev macro-F1.
pub fn train_classifier(
    config: &ClassifierConfig,
    corpus: &Corpus,
    retrieval: Option<&RetrievalContext>,
) -> Result<TrainedClassifier> {
    let encoded = encode_corpus(corpus, config.task, config.x, SEP)?;
    let train = encoded.get(&Split::Train).map(Vec::as_slice).unwrap_or(&[]);
    let dev = encoded.get(&Split::Dev).map(Vec::as_slice).unwrap_or(&[]);
    train_on_examples(config, corpus.labels(), train, dev, retrieval)
}

struct Prepared {
    seqs: Vec<Vec<u32>>,
    targets: Vec<u32>,
    nn: Option<Vec<usize>>,
}

fn prepare(
    model: &ClassifierModel,
    examples: &[EncodedExample],
    retrieval: Option<&RetrievalContext>,
) -> Result<Prepared> {
    let seqs = examples.iter().map(|e| model.token_ids(&e.text)).collect();
    let targets = examples
        .iter()
        .map(|e| model.label_index(e.label).map(|i| i as u32))
        .collect::<Result<_>>()?;
    let nn = match retrieval {
        Some(ctx) => Some(
            examples
                .iter()
                .map(|e| model.label_index(ctx.attach(e)?))
                .collect::<Result<_>>()?,
        ),
        None => None,
    };
    Ok(Prepared { seqs, targets, nn })
}

fn batch_loss(
    model: &ClassifierModel,
    data: &Prepared,
    idx: &[usize],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor> {
    let seqs: Vec<Vec<u32>> = idx.iter().map(|i| data.seqs[*i].clone()).collect();
    let nn: Option<Vec<usize>> = data.nn.as_ref().map(|n| idx.iter().map(|i| n[*i]).collect());
    let targets: Vec<u32> = idx.iter().map(|i| data.targets[*i]).collect();
    let logits = model.logits_tensor(&seqs, nn.as_deref(), rng)?;
    let targets = Tensor::new(targets.as_slice(), logits.device())?;
    Ok(candle_nn::loss::cross_entropy(&logits, &targets)?)
}

/// Mean loss and macro-F1 over the dev set in eval mode.
fn evaluate(
    model: &ClassifierModel,
    data: &Prepared,
    golds: &[SentimentLabel],
    majority: SentimentLabel,
) -> Result<(f64, f64)> {
    let n = data.seqs.len();
    let mut loss_sum = 0.0;
    let mut preds = Vec::with_capacity(n);
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(64) {
        let seqs: Vec<Vec<u32>> = chunk.iter().map(|i| data.seqs[*i].clone()).collect();
        let nn: Option<Vec<usize>> = data.nn.as_ref().map(|v| chunk.iter().map(|i| v[*i]).collect());
        let logits = model.logits_tensor(&seqs, nn.as_deref(), None)?;
        let targets: Vec<u32> = chunk.iter().map(|i| data.targets[*i]).collect();
        let targets = Tensor::new(targets.as_slice(), logits.device())?;
        let loss = candle_nn::loss::cross_entropy(&logits, &targets)?
            .to_dtype(DType::F64)?
            .to_scalar::<f64>()?;
        loss_sum += loss * chunk.len() as f64;
        preds.extend(model.labels_of(&logits.to_dtype(DType::F32)?.to_vec2::<f32>()?));
    }
    let report = f1_report(&preds, golds, model.labels(), majority)?;
    Ok((loss_sum / n as f64, report.macro_f1))
}

fn majority_of(examples: &[EncodedExample], labels: &[SentimentLabel]) -> SentimentLabel {
    let mut counts: BTreeMap<SentimentLabel, usize> = BTreeMap::new();
    for e in examples {
        *counts.entry(e.label).or_default() += 1;
    }
    let mut best = labels[0];
    for l in labels {
        if counts.get(l).copied().unwrap_or(0) > counts.get(&best).copied().unwrap_or(0) {
            best = *l;
        }
    }
    best
}

/// Trains on pre-encoded examples. Validation runs `val_steps_per_epoch`
/// times per epoch at evenly spaced optimizer steps; patience counts
/// validation steps; the returned model holds the best dev macro-F1
/// weights.
pub fn train_on_examples(
    config: &ClassifierConfig,
    labels: &[SentimentLabel],
    train: &[EncodedExample],
    dev: &[EncodedExample],
    retrieval: Option<&RetrievalContext>,
) -> Result<TrainedClassifier> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("train split has no examples".into()));
    }
    if dev.is_empty() {
        return Err(Error::Empty("dev split has no examples".into()));
    }
    for e in train.iter().chain(dev) {
        if e.task != config.task {
            return Err(Error::Validation(format!(
                "{} example `{}` given to a {} classifier",
                e.task,
                e.id(),
                config.task
            )));
        }
    }
    let retrieval = if config.use_retrieval {
        let ctx = retrieval
            .ok_or_else(|| Error::Config("use_retrieval needs a retrieval context".into()))?;
        if ctx.task() != config.task {
            return Err(Error::Config(format!(
                "retrieval context indexes {} examples, classifier task is {}",
                ctx.task(),
                config.task
            )));
        }
        Some(ctx)
    } else {
        None
    };
    let vocab = build_classifier_vocab(train)?;
    let mut model = ClassifierModel::new(
        config.clone(),
        labels.to_vec(),
        vocab,
        retrieval.map(|c| c.sentiment_embeddings()),
        DType::F32,
    )?;
    let train_data = prepare(&model, train, retrieval)?;
    let dev_data = prepare(&model, dev, retrieval)?;
    let dev_golds: Vec<SentimentLabel> = dev.iter().map(|e| e.label).collect();
    let majority = majority_of(train, labels);

    let mut opt = GroupedOptimizer::new();
    for g in model.param_groups() {
        opt.add_group(&g.name, g.vars, g.lr, g.decays)?;
    }
    let vars: Vec<candle_core::Var> = opt.vars().cloned().collect();
    let var_refs: Vec<&candle_core::Var> = vars.iter().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_c1a5);
    let n = train.len();
    let batches_per_epoch = n.div_ceil(config.effective_batch);
    let points = validation_points(batches_per_epoch, config.val_steps_per_epoch);
    let mut stopper = EarlyStopping::new(config.patience_val_steps, true);
    let mut log = TrainingLog::default();
    let mut best = model.store().snapshot()?;
    let mut best_step = 0;
    let mut steps = 0;
    let mut stopped_early = false;
    let (mut running_loss, mut running_batches) = (0.0, 0usize);
    let start = Instant::now();

    'epochs: for _epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(config.effective_batch).enumerate() {
            let mut acc = GradAccumulator::new();
            let mut batch_loss_sum = 0.0;
            for micro in batch.chunks(config.physical_batch) {
                let loss = batch_loss(&model, &train_data, micro, Some(&mut rng))?;
                let weight = micro.len() as f64 / batch.len() as f64;
                let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
                check_finite(value, steps, "training")?;
                batch_loss_sum += value * weight;
                acc.add(&(loss * weight)?, &var_refs)?;
            }
            if let Some(grads) = acc.take() {
                opt.step(&grads)?;
            }
            steps += 1;
            if config.decay_per_step {
                opt.decay_per_step(config.layer_decay, steps);
            }
            running_loss += batch_loss_sum;
            running_batches += 1;

            if points.contains(&(b + 1)) {
                let (dev_loss, dev_f1) = evaluate(&model, &dev_data, &dev_golds, majority)?;
                check_finite(dev_loss, steps, "validation")?;
                log.push(steps, "train", running_loss / running_batches as f64, None);
                log.push(steps, "dev", dev_loss, Some(dev_f1));
                running_loss = 0.0;
                running_batches = 0;
                tracing::debug!(steps, dev_loss, dev_f1, "validation");
                match stopper.observe(dev_f1) {
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
    let best_macro_f1 = stopper.best().unwrap_or(0.0);
    model.set_dev_macro_f1(Some(best_macro_f1));
    Ok(TrainedClassifier {
        model,
        log,
        best_step,
        best_macro_f1,
        optimizer_steps: steps,
        stopped_early,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{make_synthetic_corpus, SyntheticSpec};
    use crate::encoding::Task;
    use SentimentLabel::*;

    fn toy_corpus() -> Corpus {
        make_synthetic_corpus(&SyntheticSpec::new(vec![Joy, Sadness], 20, 11))
    }

    #[test]
    fn checkpoint_is_best_logged_macro_f1() {
        let cfg = ClassifierConfig {
            max_epochs: 3,
            ..ClassifierConfig::toy(Task::Classify, 2)
        };
        let out = train_classifier(&cfg, &toy_corpus(), None).unwrap();
        let logged: Vec<f64> = out.log.split_rows("dev").filter_map(|r| r.macro_f1).collect();
        assert!(!logged.is_empty());
        assert!(logged.iter().all(|f| out.best_macro_f1 >= *f));
        // the restored weights reproduce the selected score
        let enc = encode_corpus(&toy_corpus(), Task::Classify, cfg.x, SEP).unwrap();
        let dev = &enc[&Split::Dev];
        let preds = out.model.predict(dev, None).unwrap();
        let golds: Vec<_> = dev.iter().map(|e| e.label).collect();
        let f1 = f1_report(&preds, &golds, out.model.labels(), Joy).unwrap().macro_f1;
        assert!((f1 - out.best_macro_f1).abs() < 1e-9);
    }

    #[test]
    fn no_updates_after_patience_is_exhausted() {
        // a zero learning rate never improves after the first validation
        let cfg = ClassifierConfig {
            head_lr: 1e-12,
            encoder_lr: 0.0,
            patience_val_steps: 2,
            max_epochs: 10,
            ..ClassifierConfig::toy(Task::Classify, 4)
        };
        let out = train_classifier(&cfg, &toy_corpus(), None).unwrap();
        assert!(out.stopped_early);
        let last_logged = out.log.rows.last().unwrap().step;
        assert_eq!(out.optimizer_steps, last_logged);
        assert_eq!(out.log.split_rows("dev").count(), 3);
    }

    #[test]
    fn empty_train_split_is_rejected() {
        let cfg = ClassifierConfig::toy(Task::Classify, 1);
        let err = train_on_examples(&cfg, &[Joy], &[], &[], None).unwrap_err();
        assert!(matches!(err, Error::Empty(_)));
    }

    #[test]
    fn gradient_accumulation_matches_full_batch_step() {
        let corpus = toy_corpus();
        let base = ClassifierConfig {
            max_epochs: 1,
            dropout: 1e-9,
            ..ClassifierConfig::toy(Task::Classify, 3)
        };
        let full = train_classifier(&base, &corpus, None).unwrap();
        let accumulated = ClassifierConfig {
            physical_batch: 4,
            ..base
        };
        let acc = train_classifier(&accumulated, &corpus, None).unwrap();
        assert_eq!(full.optimizer_steps, acc.optimizer_steps);
        let a: Vec<f64> = full.log.rows.iter().map(|r| r.loss).collect();
        let b: Vec<f64> = acc.log.rows.iter().map(|r| r.loss).collect();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-3, "{a:?} vs {b:?}");
        }
    }
}
