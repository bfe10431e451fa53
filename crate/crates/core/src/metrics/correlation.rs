use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{pearson, EvalReport};
use crate::error::{Error, Result};

pub const AUTOMATIC_METRICS: [&str; 6] = ["m_f1", "M_f1", "m_nmc_f1", "M_nmc_f1", "ppl", "ses"];
pub const HUMAN_METRICS: [&str; 2] = ["adequacy", "sentiment"];

/// Fraction of positive answers per question for one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanScores {
    pub adequacy: f64,
    pub sentiment: f64,
}

impl HumanScores {
    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "adequacy" => Some(self.adequacy),
            "sentiment" => Some(self.sentiment),
            _ => None,
        }
    }
}

#[derive(Debug, Deserialize)]
struct HumanRow {
    model: String,
    question: String,
    positive_count: u64,
    total: u64,
}

/// Reads `model,question,positive_count,total` rows; `question` is
/// `adequacy` or `sentiment`. Every model needs both questions.
pub fn read_human_scores(reader: impl Read) -> Result<BTreeMap<String, HumanScores>> {
    let mut partial: BTreeMap<String, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for row in csv::Reader::from_reader(reader).deserialize::<HumanRow>() {
        let row = row?;
        if row.total == 0 || row.positive_count > row.total {
            return Err(Error::Validation(format!(
                "model `{}` question `{}`: {} positives out of {}",
                row.model, row.question, row.positive_count, row.total
            )));
        }
        let ratio = row.positive_count as f64 / row.total as f64;
        let entry = partial.entry(row.model.clone()).or_default();
        match row.question.as_str() {
            "adequacy" => entry.0 = Some(ratio),
            "sentiment" => entry.1 = Some(ratio),
            other => {
                return Err(Error::Validation(format!("unknown question `{other}`")));
            }
        }
    }
    partial
        .into_iter()
        .map(|(model, (a, s))| match (a, s) {
            (Some(adequacy), Some(sentiment)) => Ok((model, HumanScores { adequacy, sentiment })),
            _ => Err(Error::Validation(format!("model `{model}` lacks a question"))),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CorrelationCell {
    Defined { r: f64 },
    Undefined { reason: String },
}

impl CorrelationCell {
    pub fn value(&self) -> Option<f64> {
        match self {
            CorrelationCell::Defined { r } => Some(*r),
            CorrelationCell::Undefined { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub models: Vec<String>,
    /// automatic metric -> human metric -> cell
    pub cells: BTreeMap<String, BTreeMap<String, CorrelationCell>>,
    pub caveat: Option<String>,
}

impl CorrelationTable {
    pub fn cell(&self, automatic: &str, human: &str) -> Option<&CorrelationCell> {
        self.cells.get(automatic)?.get(human)
    }

    /// CSV with columns `automatic_metric,human_metric,r,note`.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["automatic_metric", "human_metric", "r", "note"])?;
        for (auto, row) in &self.cells {
            for (human, cell) in row {
                match cell {
                    CorrelationCell::Defined { r } => {
                        out.write_record([auto, human, &r.to_string(), ""])?
                    }
                    CorrelationCell::Undefined { reason } => {
                        out.write_record([auto.as_str(), human, "", reason])?
                    }
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Pearson correlation of every automatic metric against every human metric
/// across models.
pub fn correlation_table(
    auto_reports: &BTreeMap<String, EvalReport>,
    human: &BTreeMap<String, HumanScores>,
) -> Result<CorrelationTable> {
    let auto_keys: Vec<&String> = auto_reports.keys().collect();
    let human_keys: Vec<&String> = human.keys().collect();
    if auto_keys != human_keys {
        return Err(Error::Validation(format!(
            "model keys differ: automatic {auto_keys:?} vs human {human_keys:?}"
        )));
    }
    if auto_keys.len() < 2 {
        return Err(Error::Validation("correlation needs at least two models".into()));
    }
    let models: Vec<String> = auto_keys.into_iter().cloned().collect();
    let mut cells = BTreeMap::new();
    for auto in AUTOMATIC_METRICS {
        let xs: Option<Vec<f64>> = models.iter().map(|m| auto_reports[m].metric(auto)).collect();
        let mut row = BTreeMap::new();
        for hm in HUMAN_METRICS {
            let cell = match &xs {
                None => CorrelationCell::Undefined {
                    reason: format!("`{auto}` missing for some model"),
                },
                Some(xs) => {
                    let ys: Vec<f64> = models.iter().map(|m| human[m].get(hm).unwrap()).collect();
                    match pearson(xs, &ys) {
                        Ok(r) => CorrelationCell::Defined { r },
                        Err(e) => CorrelationCell::Undefined {
                            reason: e.to_string(),
                        },
                    }
                }
            };
            row.insert(hm.to_string(), cell);
        }
        cells.insert(auto.to_string(), row);
    }
    let caveat = (models.len() <= 4).then(|| {
        format!(
            "only {} models: correlations over so few points are not statistically significant",
            models.len()
        )
    });
    Ok(CorrelationTable {
        models,
        cells,
        caveat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::SentimentLabel;
    use rand::{Rng, SeedableRng};

    fn report(m: f64, nmc: f64) -> EvalReport {
        EvalReport {
            micro_f1: m,
            macro_f1: m / 2.0,
            micro_nmc_f1: nmc,
            macro_nmc_f1: nmc / 3.0,
            ppl: Some(10.0 + m),
            ses: None,
            n_examples: 10,
            majority_label: SentimentLabel::Neutral,
            per_label_f1: BTreeMap::new(),
            conventions: vec![],
        }
    }

    #[test]
    fn proportional_scores_give_unit_correlation() {
        let auto = BTreeMap::from([
            ("a".to_string(), report(0.5, 0.2)),
            ("b".to_string(), report(0.6, 0.4)),
            ("c".to_string(), report(0.7, 0.5)),
        ]);
        let human = BTreeMap::from([
            ("a".to_string(), HumanScores { adequacy: 0.3, sentiment: 0.1 }),
            ("b".to_string(), HumanScores { adequacy: 0.2, sentiment: 0.2 }),
            ("c".to_string(), HumanScores { adequacy: 0.9, sentiment: 0.25 }),
        ]);
        let t = correlation_table(&auto, &human).unwrap();
        let r = t.cell("m_nmc_f1", "sentiment").unwrap().value().unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert!(matches!(t.cell("ses", "adequacy"), Some(CorrelationCell::Undefined { .. })));
        assert!(t.caveat.is_some());
    }

    #[test]
    fn identical_metric_values_are_flagged() {
        let auto = BTreeMap::from([
            ("a".to_string(), report(0.5, 0.2)),
            ("b".to_string(), report(0.5, 0.2)),
        ]);
        let human = BTreeMap::from([
            ("a".to_string(), HumanScores { adequacy: 0.3, sentiment: 0.1 }),
            ("b".to_string(), HumanScores { adequacy: 0.2, sentiment: 0.2 }),
        ]);
        let t = correlation_table(&auto, &human).unwrap();
        assert_eq!(t.cell("m_f1", "adequacy").unwrap().value(), None);
    }

    #[test]
    fn random_four_model_cells_stay_in_range() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut auto = BTreeMap::new();
        let mut human = BTreeMap::new();
        for name in ["a", "b", "c", "d"] {
            auto.insert(name.to_string(), report(rng.random(), rng.random()));
            human.insert(
                name.to_string(),
                HumanScores {
                    adequacy: rng.random(),
                    sentiment: rng.random(),
                },
            );
        }
        let t = correlation_table(&auto, &human).unwrap();
        for row in t.cells.values() {
            for cell in row.values() {
                if let Some(r) = cell.value() {
                    assert!((-1.0..=1.0).contains(&r));
                }
            }
        }
    }

    #[test]
    fn key_mismatch_is_an_error() {
        let auto = BTreeMap::from([("a".to_string(), report(0.5, 0.2)), ("b".to_string(), report(0.1, 0.2))]);
        let human = BTreeMap::from([
            ("a".to_string(), HumanScores { adequacy: 0.3, sentiment: 0.1 }),
            ("z".to_string(), HumanScores { adequacy: 0.2, sentiment: 0.2 }),
        ]);
        assert!(correlation_table(&auto, &human).is_err());
    }

    #[test]
    fn human_csv_is_aggregated_into_ratios() {
        let csv = "model,question,positive_count,total\nsaca,adequacy,30,50\nsaca,sentiment,20,50\n";
        let scores = read_human_scores(csv.as_bytes()).unwrap();
        assert_eq!(scores["saca"], HumanScores { adequacy: 0.6, sentiment: 0.4 });
        let bad = "model,question,positive_count,total\nsaca,adequacy,30,50\n";
        assert!(read_human_scores(bad.as_bytes()).is_err());
    }

    #[test]
    fn csv_output_has_one_row_per_cell() {
        let auto = BTreeMap::from([("a".to_string(), report(0.5, 0.2)), ("b".to_string(), report(0.1, 0.3))]);
        let human = BTreeMap::from([
            ("a".to_string(), HumanScores { adequacy: 0.3, sentiment: 0.1 }),
            ("b".to_string(), HumanScores { adequacy: 0.2, sentiment: 0.2 }),
        ]);
        let mut buf = Vec::new();
        correlation_table(&auto, &human).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + AUTOMATIC_METRICS.len() * HUMAN_METRICS.len());
    }
}
