//! Run configuration: built-in defaults, overlaid by an optional JSON file,
//! overlaid by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use saca_core::classifier::ClassifierConfig;
use saca_core::corpus::{
    load_dailydialog, load_emotionpush, make_synthetic_corpus, read_normalized, Corpus, SyntheticSpec,
};
use saca_core::encoding::Task;
use saca_core::generator::{DecodeParams, GeneratorConfig};
use saca_core::lexicon::{LexiconKind, LexiconOptions};
use saca_core::retrieval::RetrievalOptions;
use saca_core::SentimentLabel;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Published hyperparameters.
    Published,
    /// Small models and fast learning rates for the synthetic corpus.
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// dailydialog, emotionpush, synthetic or normalized.
    pub name: Option<String>,
    pub path: Option<PathBuf>,
    pub labels: Vec<SentimentLabel>,
    pub dialogues_per_label: usize,
    pub drop_non_neutral: bool,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            name: None,
            path: None,
            labels: vec![
                SentimentLabel::Anger,
                SentimentLabel::Joy,
                SentimentLabel::Sadness,
                SentimentLabel::Surprise,
            ],
            dialogues_per_label: 50,
            drop_non_neutral: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconSection {
    pub kind: LexiconKind,
    pub k: usize,
    pub n_range: (usize, usize),
    pub tfu_post_filter: bool,
}

impl Default for LexiconSection {
    fn default() -> Self {
        let o = LexiconOptions::default();
        LexiconSection {
            kind: LexiconKind::SentimentSentences,
            k: o.k,
            n_range: o.n_range,
            tfu_post_filter: o.tfu_post_filter,
        }
    }
}

impl LexiconSection {
    pub fn options(&self) -> LexiconOptions {
        LexiconOptions {
            k: self.k,
            n_range: self.n_range,
            tfu_post_filter: self.tfu_post_filter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub enabled: bool,
    pub dim: usize,
    pub options: RetrievalOptions,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection {
            enabled: false,
            dim: 384,
            options: RetrievalOptions::default(),
        }
    }
}

/// Everything a run needs. Component sections (`classifier`, `rsp`,
/// `generator`, `decode`) hold partial overrides on top of the preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: Preset,
    pub corpus: CorpusSection,
    pub classifier: Value,
    pub rsp: Value,
    pub generator: Value,
    pub decode: Value,
    pub lexicon: LexiconSection,
    pub retrieval: RetrievalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 13,
            preset: Preset::Published,
            corpus: CorpusSection::default(),
            classifier: Value::Object(Default::default()),
            rsp: Value::Object(Default::default()),
            generator: Value::Object(Default::default()),
            decode: Value::Object(Default::default()),
            lexicon: LexiconSection::default(),
            retrieval: RetrievalSection::default(),
        }
    }
}

/// Recursively overlays `patch` onto `base`; non-object values replace.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Parses `a.b.c=value`; the value is JSON when it parses as JSON, a plain
/// string otherwise.
pub fn parse_override(spec: &str) -> Result<(Vec<String>, Value)> {
    let (path, raw) = spec
        .split_once('=')
        .with_context(|| format!("override `{spec}` is not of the form key.path=value"))?;
    let path: Vec<String> = path.split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        bail!("override `{spec}` has an empty key");
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

fn nested(path: &[String], value: Value) -> Value {
    path.iter()
        .rev()
        .fold(value, |acc, key| Value::Object([(key.clone(), acc)].into_iter().collect()))
}

impl RunConfig {
    /// Defaults, then `file`, then each override in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(Vec<String>, Value)]) -> Result<RunConfig> {
        let mut value = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            let patch: Value = serde_json::from_str(&text)
                .with_context(|| format!("config {} is not valid JSON", path.display()))?;
            merge(&mut value, &patch);
        }
        for (path, v) in overrides {
            merge(&mut value, &nested(path, v.clone()));
        }
        serde_json::from_value(value).context("invalid configuration")
    }

    fn overlay<T: Serialize + for<'de> Deserialize<'de>>(&self, base: T, patch: &Value, what: &str) -> Result<T> {
        let mut value = serde_json::to_value(base)?;
        merge(&mut value, patch);
        serde_json::from_value(value).with_context(|| format!("invalid {what} section"))
    }

    pub fn classifier_config(&self, task: Task) -> Result<ClassifierConfig> {
        let base = match self.preset {
            Preset::Published => ClassifierConfig {
                seed: self.seed,
                ..ClassifierConfig::for_task(task)
            },
            Preset::Toy => ClassifierConfig::toy(task, self.seed),
        };
        let patch = match task {
            Task::Classify => &self.classifier,
            Task::ReplyPredict => &self.rsp,
        };
        let mut cfg: ClassifierConfig = self.overlay(base, patch, "classifier")?;
        cfg.task = task;
        if self.retrieval.enabled {
            cfg.use_retrieval = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn generator_config(&self, kind: LexiconKind) -> Result<GeneratorConfig> {
        let base = match self.preset {
            Preset::Published => GeneratorConfig {
                lexicon_kind: kind,
                seed: self.seed,
                ..GeneratorConfig::default()
            },
            Preset::Toy => GeneratorConfig::toy(kind, self.seed),
        };
        let mut cfg: GeneratorConfig = self.overlay(base, &self.generator, "generator")?;
        cfg.lexicon_kind = kind;
        cfg.decode = self.decode_params(Some(cfg.decode))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Decoding parameters: `base` (or the defaults), then the `decode`
    /// section.
    pub fn decode_params(&self, base: Option<DecodeParams>) -> Result<DecodeParams> {
        self.overlay(base.unwrap_or_default(), &self.decode, "decode")
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        let name = self
            .corpus
            .name
            .as_deref()
            .context("no corpus selected (use --corpus or corpus.name)")?;
        let path = || {
            self.corpus
                .path
                .clone()
                .with_context(|| format!("corpus `{name}` needs a path (use --data or corpus.path)"))
        };
        let corpus = match name {
            "dailydialog" => load_dailydialog(path()?)?,
            "emotionpush" => load_emotionpush(path()?)?,
            "normalized" => read_normalized(path()?)?,
            "synthetic" => make_synthetic_corpus(&SyntheticSpec::new(
                self.corpus.labels.clone(),
                self.corpus.dialogues_per_label,
                self.seed,
            )),
            other => bail!(saca_core::Error::Config(format!(
                "unknown corpus `{other}` (expected dailydialog, emotionpush, synthetic or normalized)"
            ))),
        };
        Ok(if self.corpus.drop_non_neutral {
            corpus.without_non_neutral()?
        } else {
            corpus
        })
    }
}

/// Writes `value` as pretty JSON, creating parent directories.
pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("cannot write {}", path.display()))
}
