use super::{Agent, AgentMode, ModeKind};
use crate::corpus::Dialogue;
use crate::error::{Error, Result};
use crate::generator::GenerationRecord;
use crate::label::SentimentLabel;
use crate::metrics::{classifier_judged_report, ses, EvalReport, SES_CONVENTION};
use crate::retrieval::SentenceEmbedder;

#[derive(Debug, Clone)]
pub struct BatchEvalOutput {
    pub report: EvalReport,
    pub records: Vec<GenerationRecord>,
}

/// Generates a reply for every turn with a preceding turn from the gold
/// history, conditioned per `mode` (gold label for oracle, predictor output
/// for saca, none for baseline), then reports perplexity of the gold reply
/// under the same conditioning, SES when an embedder is given, and the
/// judge's F1 family against the gold reply labels.
pub fn run_batch_eval(
    agent: &Agent,
    mode: &AgentMode,
    dialogues: &[Dialogue],
    majority: SentimentLabel,
    embedder: Option<&dyn SentenceEmbedder>,
) -> Result<BatchEvalOutput> {
    agent.check_mode(mode)?;
    let judge = agent
        .judge
        .as_deref()
        .ok_or_else(|| Error::Config("batch evaluation needs a judge classifier".into()))?;
    let generator = agent.generator_for(mode)?;
    let mut records = Vec::new();
    let mut contexts: Vec<Vec<String>> = Vec::new();
    let mut targets = Vec::new();
    let (mut nll, mut tokens) = (0.0, 0usize);
    for dialogue in dialogues {
        let texts: Vec<&str> = dialogue.texts().collect();
        for j in 1..texts.len() {
            let gold = dialogue.turns[j].label;
            if !agent.labels.contains(&gold) {
                return Err(Error::LabelMismatch(format!(
                    "dialogue `{}` uses {gold}, outside the agent's labels",
                    dialogue.id
                )));
            }
            let history = &texts[..j];
            let oracle = (mode.kind == ModeKind::Oracle).then_some(gold);
            let (label, _) = agent.conditioning_label(mode, history, oracle)?;
            let generated = generator.generate_reply(label, history)?;
            for lp in generator.reply_logprobs(label, history, texts[j])? {
                nll -= lp;
                tokens += 1;
            }
            records.push(GenerationRecord {
                dialogue_id: dialogue.id.clone(),
                turn: j,
                history: history.iter().map(|s| s.to_string()).collect(),
                target_label: label,
                generated,
                gold: texts[j].to_string(),
            });
            contexts.push(history.iter().map(|s| s.to_string()).collect());
            targets.push(gold);
        }
    }
    if records.is_empty() {
        return Err(Error::Empty("no turns with context to evaluate".into()));
    }
    let generated: Vec<&str> = records.iter().map(|r| r.generated.as_str()).collect();
    let mut report =
        classifier_judged_report(judge, &generated, &contexts, &targets, &agent.labels, majority)?;
    report.ppl = Some((nll / tokens as f64).exp());
    if let Some(embedder) = embedder {
        // empty generations embed as a placeholder so every pair counts
        let nonempty: Vec<&str> = generated
            .iter()
            .map(|g| if g.trim().is_empty() { "." } else { g })
            .collect();
        let golds: Vec<&str> = records.iter().map(|r| r.gold.as_str()).collect();
        report.ses = Some(ses(&nonempty, &golds, embedder)?);
        report.conventions.push(SES_CONVENTION.to_string());
    }
    Ok(BatchEvalOutput { report, records })
}
