//! Automatic evaluation measures.
//!
//! Two conventions are recorded in every [`EvalReport`] under `conventions`:
//! NMC ("no majority class") variants drop the majority label from the
//! aggregation only, keeping all items in the confusion counts; SES is the
//! mean pairwise cosine similarity (×100) between embeddings of generated and
//! reference replies.

mod correlation;
mod f1;
mod judged;
mod pearson;
mod ses;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::label::SentimentLabel;

pub use correlation::{
    correlation_table, read_human_scores, CorrelationCell, CorrelationTable, HumanScores,
    AUTOMATIC_METRICS, HUMAN_METRICS,
};
pub use f1::{f1_report, ConfusionCounts, LabelCounts};
pub use judged::{classifier_judged_report, SentimentJudge};
pub use pearson::pearson;
pub use ses::{cosine, ses};

pub const NMC_CONVENTION: &str =
    "nmc: majority label excluded from F1 aggregation; its items stay in the confusion counts";
pub const SES_CONVENTION: &str =
    "ses: mean cosine similarity x100 between sentence embeddings of generated and gold replies";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "m_f1")]
    pub micro_f1: f64,
    #[serde(rename = "M_f1")]
    pub macro_f1: f64,
    #[serde(rename = "m_nmc_f1")]
    pub micro_nmc_f1: f64,
    #[serde(rename = "M_nmc_f1")]
    pub macro_nmc_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ses: Option<f64>,
    pub n_examples: usize,
    pub majority_label: SentimentLabel,
    #[serde(default)]
    pub per_label_f1: BTreeMap<SentimentLabel, f64>,
    #[serde(default)]
    pub conventions: Vec<String>,
}

impl EvalReport {
    /// Value of an automatic metric by its report name (`m_f1`, `M_f1`,
    /// `m_nmc_f1`, `M_nmc_f1`, `ppl`, `ses`).
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "m_f1" => Some(self.micro_f1),
            "M_f1" => Some(self.macro_f1),
            "m_nmc_f1" => Some(self.micro_nmc_f1),
            "M_nmc_f1" => Some(self.macro_nmc_f1),
            "ppl" => self.ppl,
            "ses" => self.ses,
            _ => None,
        }
    }
}
