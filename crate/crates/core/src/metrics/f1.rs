use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{EvalReport, NMC_CONVENTION};
use crate::error::{Error, Result};
use crate::label::SentimentLabel;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl LabelCounts {
    /// `2tp / (2tp + fp + fn)`, 0 when the denominator is 0.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub per_label: BTreeMap<SentimentLabel, LabelCounts>,
}

impl ConfusionCounts {
    pub fn from_pairs(
        preds: &[SentimentLabel],
        golds: &[SentimentLabel],
        label_set: &[SentimentLabel],
    ) -> Result<Self> {
        if preds.len() != golds.len() {
            return Err(Error::Validation(format!(
                "{} predictions for {} gold labels",
                preds.len(),
                golds.len()
            )));
        }
        if preds.is_empty() {
            return Err(Error::Empty("no predictions to score".into()));
        }
        let mut per_label: BTreeMap<SentimentLabel, LabelCounts> =
            label_set.iter().map(|l| (*l, LabelCounts::default())).collect();
        for (p, g) in preds.iter().zip(golds) {
            for l in [p, g] {
                if !per_label.contains_key(l) {
                    return Err(Error::LabelMismatch(format!("label `{l}` outside label set")));
                }
            }
            if p == g {
                per_label.get_mut(p).unwrap().tp += 1;
            } else {
                per_label.get_mut(p).unwrap().fp += 1;
                per_label.get_mut(g).unwrap().fn_ += 1;
            }
        }
        Ok(ConfusionCounts { per_label })
    }

    fn micro(&self, included: &BTreeSet<SentimentLabel>) -> f64 {
        let mut sum = LabelCounts::default();
        for (l, c) in &self.per_label {
            if included.contains(l) {
                sum.tp += c.tp;
                sum.fp += c.fp;
                sum.fn_ += c.fn_;
            }
        }
        sum.f1()
    }

    fn macro_avg(&self, included: &BTreeSet<SentimentLabel>) -> f64 {
        if included.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .per_label
            .iter()
            .filter(|(l, _)| included.contains(l))
            .map(|(_, c)| c.f1())
            .sum();
        total / included.len() as f64
    }
}

/// Micro and macro F1 over `label_set`, with and without `majority_label`.
pub fn f1_report(
    preds: &[SentimentLabel],
    golds: &[SentimentLabel],
    label_set: &[SentimentLabel],
    majority_label: SentimentLabel,
) -> Result<EvalReport> {
    if !label_set.contains(&majority_label) {
        return Err(Error::LabelMismatch(format!(
            "majority label `{majority_label}` outside label set"
        )));
    }
    let counts = ConfusionCounts::from_pairs(preds, golds, label_set)?;
    let all: BTreeSet<_> = label_set.iter().copied().collect();
    let mut nmc = all.clone();
    nmc.remove(&majority_label);
    Ok(EvalReport {
        micro_f1: counts.micro(&all),
        macro_f1: counts.macro_avg(&all),
        micro_nmc_f1: counts.micro(&nmc),
        macro_nmc_f1: counts.macro_avg(&nmc),
        ppl: None,
        ses: None,
        n_examples: preds.len(),
        majority_label,
        per_label_f1: counts.per_label.iter().map(|(l, c)| (*l, c.f1())).collect(),
        conventions: vec![NMC_CONVENTION.to_string()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use SentimentLabel::*;

    const LABELS: [SentimentLabel; 3] = [Anger, Joy, Neutral];

    #[test]
    fn worked_example() {
        let golds = [Neutral, Joy, Joy, Anger];
        let preds = [Neutral, Joy, Anger, Anger];
        let r = f1_report(&preds, &golds, &LABELS, Neutral).unwrap();
        assert!((r.micro_f1 - 0.75).abs() < 1e-12);
        assert!((r.macro_f1 - 7.0 / 9.0).abs() < 1e-12);
        assert!((r.micro_nmc_f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.macro_nmc_f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_all_wrong() {
        let golds = [Neutral, Joy, Anger];
        let r = f1_report(&golds, &golds, &LABELS, Neutral).unwrap();
        for v in [r.micro_f1, r.macro_f1, r.micro_nmc_f1, r.macro_nmc_f1] {
            assert_eq!(v, 1.0);
        }
        let wrong = [Joy, Anger, Neutral];
        assert_eq!(f1_report(&wrong, &golds, &LABELS, Neutral).unwrap().micro_f1, 0.0);
    }

    #[test]
    fn errors() {
        assert!(f1_report(&[Joy], &[], &LABELS, Neutral).is_err());
        assert!(matches!(f1_report(&[], &[], &LABELS, Neutral), Err(Error::Empty(_))));
        assert!(f1_report(&[Fear], &[Joy], &LABELS, Neutral).is_err());
    }

    fn arb_pairs() -> impl Strategy<Value = Vec<(usize, usize)>> {
        prop::collection::vec((0usize..3, 0usize..3), 1..60)
    }

    proptest! {
        #[test]
        fn permutation_invariant(pairs in arb_pairs(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let (p, g): (Vec<_>, Vec<_>) = pairs.iter().map(|(a, b)| (LABELS[*a], LABELS[*b])).unzip();
            let r1 = f1_report(&p, &g, &LABELS, Neutral).unwrap();
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (p2, g2): (Vec<_>, Vec<_>) = shuffled.iter().map(|(a, b)| (LABELS[*a], LABELS[*b])).unzip();
            prop_assert_eq!(r1, f1_report(&p2, &g2, &LABELS, Neutral).unwrap());
        }

        #[test]
        fn micro_equals_accuracy(pairs in arb_pairs()) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.iter().map(|(a, b)| (LABELS[*a], LABELS[*b])).unzip();
            let r = f1_report(&p, &g, &LABELS, Neutral).unwrap();
            let acc = p.iter().zip(&g).filter(|(a, b)| a == b).count() as f64 / p.len() as f64;
            prop_assert!((r.micro_f1 - acc).abs() < 1e-12);
        }

        #[test]
        fn majority_choice_only_changes_aggregation(pairs in arb_pairs()) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.iter().map(|(a, b)| (LABELS[*a], LABELS[*b])).unzip();
            let a = f1_report(&p, &g, &LABELS, Neutral).unwrap();
            let b = f1_report(&p, &g, &LABELS, Joy).unwrap();
            prop_assert_eq!(a.per_label_f1, b.per_label_f1);
        }
    }
}
