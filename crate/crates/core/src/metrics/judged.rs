use std::collections::BTreeSet;

use super::{f1_report, EvalReport};
use crate::error::{Error, Result};
use crate::label::SentimentLabel;

/// Labels a reply given its preceding context (chronological).
pub trait SentimentJudge: Send + Sync {
    fn labels(&self) -> &[SentimentLabel];
    fn judge(&self, reply: &str, context: &[&str]) -> Result<SentimentLabel>;
}

/// F1 family of the judge's labels for `generated` against `targets`.
pub fn classifier_judged_report<S: AsRef<str>, C: AsRef<str>>(
    judge: &dyn SentimentJudge,
    generated: &[S],
    contexts: &[Vec<C>],
    targets: &[SentimentLabel],
    label_set: &[SentimentLabel],
    majority: SentimentLabel,
) -> Result<EvalReport> {
    let judged: BTreeSet<_> = judge.labels().iter().collect();
    let expected: BTreeSet<_> = label_set.iter().collect();
    if judged != expected {
        return Err(Error::LabelMismatch(format!(
            "judge labels {:?} differ from corpus labels {:?}",
            judge.labels(),
            label_set
        )));
    }
    if generated.len() != contexts.len() || generated.len() != targets.len() {
        return Err(Error::Validation(format!(
            "{} replies, {} contexts, {} targets",
            generated.len(),
            contexts.len(),
            targets.len()
        )));
    }
    let preds = generated
        .iter()
        .zip(contexts)
        .map(|(reply, context)| {
            let context: Vec<&str> = context.iter().map(AsRef::as_ref).collect();
            judge.judge(reply.as_ref(), &context)
        })
        .collect::<Result<Vec<_>>>()?;
    f1_report(&preds, targets, label_set, majority)
}
