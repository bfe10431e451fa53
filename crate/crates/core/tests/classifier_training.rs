use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use saca_core::classifier::{train_classifier, ClassifierConfig, ClassifierModel};
use saca_core::corpus::{make_synthetic_corpus, Split, SyntheticSpec};
use saca_core::encoding::{encode_corpus, EncodedExample, Task, SEP};
use saca_core::metrics::f1_report;
use saca_core::text::tokenize;
use saca_core::SentimentLabel::{self, *};

/// Multinomial naive Bayes over the target sentence's words with add-one
/// smoothing.
fn bag_of_words_oracle(train: &[EncodedExample], dev: &[EncodedExample]) -> Vec<SentimentLabel> {
    let target = |e: &EncodedExample| e.text.split(SEP).next().unwrap().to_string();
    let mut word_counts: BTreeMap<SentimentLabel, HashMap<String, f64>> = BTreeMap::new();
    let mut totals: BTreeMap<SentimentLabel, f64> = BTreeMap::new();
    let mut priors: BTreeMap<SentimentLabel, f64> = BTreeMap::new();
    let mut vocab = std::collections::HashSet::new();
    for e in train {
        *priors.entry(e.label).or_default() += 1.0;
        for w in tokenize(&target(e)) {
            vocab.insert(w.clone());
            *word_counts.entry(e.label).or_default().entry(w).or_default() += 1.0;
            *totals.entry(e.label).or_default() += 1.0;
        }
    }
    let v = vocab.len() as f64;
    dev.iter()
        .map(|e| {
            let words = tokenize(&target(e));
            *priors
                .keys()
                .max_by(|a, b| {
                    let score = |l: &SentimentLabel| {
                        priors[l].ln()
                            + words
                                .iter()
                                .map(|w| {
                                    let c = word_counts[l].get(w).copied().unwrap_or(0.0);
                                    ((c + 1.0) / (totals[l] + v)).ln()
                                })
                                .sum::<f64>()
                    };
                    score(a).partial_cmp(&score(b)).unwrap()
                })
                .unwrap()
        })
        .collect()
}

fn toy_corpus(seed: u64) -> saca_core::corpus::Corpus {
    make_synthetic_corpus(&SyntheticSpec::new(vec![Joy, Sadness], 20, seed))
}

#[test]
fn marker_task_is_separable_by_bag_of_words() {
    let corpus = toy_corpus(21);
    assert_eq!(corpus.split(Split::Train).len(), 40);
    let enc = encode_corpus(&corpus, Task::Classify, 1, SEP).unwrap();
    let dev = &enc[&Split::Dev];
    let preds = bag_of_words_oracle(&enc[&Split::Train], dev);
    let golds: Vec<_> = dev.iter().map(|e| e.label).collect();
    let f1 = f1_report(&preds, &golds, corpus.labels(), Joy).unwrap().macro_f1;
    assert!(f1 >= 0.99, "oracle macro-F1 {f1}");
}

#[test]
fn toy_encoder_learns_marker_corpus() {
    let corpus = toy_corpus(21);
    let start = Instant::now();
    let out = train_classifier(&ClassifierConfig::toy(Task::Classify, 21), &corpus, None).unwrap();
    assert!(start.elapsed().as_secs() < 300);
    assert!(out.best_macro_f1 >= 0.9, "dev macro-F1 {}", out.best_macro_f1);
    let logged: Vec<f64> = out.log.split_rows("dev").filter_map(|r| r.macro_f1).collect();
    assert!(logged.iter().all(|f| out.best_macro_f1 >= *f));

    let tmp = tempfile::tempdir().unwrap();
    out.model.save(tmp.path()).unwrap();
    out.log.save_csv(tmp.path().join("train_log.csv")).unwrap();
    let back = ClassifierModel::load(tmp.path()).unwrap();
    assert_eq!(back.dev_macro_f1(), Some(out.best_macro_f1));
    let enc = encode_corpus(&corpus, Task::Classify, 1, SEP).unwrap();
    assert_eq!(
        out.model.predict(&enc[&Split::Test], None).unwrap(),
        back.predict(&enc[&Split::Test], None).unwrap()
    );
}

#[test]
fn reply_predictor_trains_end_to_end() {
    let corpus = toy_corpus(5);
    let cfg = ClassifierConfig {
        max_epochs: 4,
        ..ClassifierConfig::toy(Task::ReplyPredict, 5)
    };
    let out = train_classifier(&cfg, &corpus, None).unwrap();
    assert_eq!(out.model.config().task, Task::ReplyPredict);
    let enc = encode_corpus(&corpus, Task::ReplyPredict, cfg.x, SEP).unwrap();
    assert_eq!(out.model.predict(&enc[&Split::Test], None).unwrap().len(), enc[&Split::Test].len());
}
