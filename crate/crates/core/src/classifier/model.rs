use std::fs;
use std::path::Path;

use candle_core::{DType, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{encoder_preset, pool, ClassifierConfig, Pooling};
use crate::encoding::{EncodedExample, Task, SEP};
use crate::error::{Error, Result};
use crate::label::SentimentLabel;
use crate::nn::{argmax, dropout, Encoder, Linear, ParamStore};
use crate::retrieval::{RetrievalContext, SentimentEmbeddingTable};
use crate::text::Vocab;

pub const CLASSIFIER_SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];
const PAD: u32 = 0;
const CLS: u32 = 2;
const SEP_ID: u32 = 3;
const PREDICT_BATCH: usize = 64;

pub fn build_classifier_vocab(train: &[EncodedExample]) -> Result<Vocab> {
    Vocab::build(
        &CLASSIFIER_SPECIALS,
        1,
        train.iter().flat_map(|e| e.text.split(SEP)),
    )
}

/// `[CLS] s0 [SEP] s1 [SEP] ... [SEP]` over the window's segments (most
/// recent first), within `max_tokens`. Whole segments are dropped from the
/// oldest end; the first segment is clipped only if it cannot fit alone.
pub fn token_ids(vocab: &Vocab, window: &str, max_tokens: usize) -> Vec<u32> {
    let mut ids = vec![CLS];
    for (k, segment) in window.split(SEP).enumerate() {
        let seg = vocab.encode_text(segment);
        if ids.len() + seg.len() + 1 > max_tokens {
            if k == 0 {
                tracing::warn!(tokens = seg.len(), max_tokens, "first segment clipped to fit");
                ids.extend(&seg[..max_tokens.saturating_sub(2)]);
                ids.push(SEP_ID);
            }
            break;
        }
        ids.extend(seg);
        ids.push(SEP_ID);
    }
    ids
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierManifest {
    pub task: Task,
    pub encoder_name: String,
    pub pooling: Pooling,
    pub x: usize,
    pub use_retrieval: bool,
    pub label_vocab: Vec<SentimentLabel>,
    pub dev_macro_f1: Option<f64>,
    pub seed: u64,
    pub se_dim: usize,
    pub config: ClassifierConfig,
}

/// A named set of parameters trained at one learning rate.
#[derive(Debug, Clone)]
pub struct ParamGroup {
    pub name: String,
    pub vars: Vec<Var>,
    pub lr: f64,
    /// Subject to the per-step decay schedule.
    pub decays: bool,
}

#[derive(Debug, Clone)]
pub struct ClassifierModel {
    config: ClassifierConfig,
    labels: Vec<SentimentLabel>,
    vocab: Vocab,
    store: ParamStore,
    encoder: Encoder,
    head: Linear,
    se: Option<Tensor>,
    se_dim: usize,
    dev_macro_f1: Option<f64>,
}

impl ClassifierModel {
    /// Fresh model. With `use_retrieval` the Sentiment Embedding table is
    /// initialized from `se` (one row per label, in `labels` order).
    pub fn new(
        config: ClassifierConfig,
        labels: Vec<SentimentLabel>,
        vocab: Vocab,
        se: Option<&SentimentEmbeddingTable>,
        dtype: DType,
    ) -> Result<Self> {
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::Empty("classifier label vocabulary".into()));
        }
        let arch = encoder_preset(&config.encoder_name, vocab.len(), config.max_tokens)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new(dtype);
        let encoder = Encoder::new(&mut store, "encoder", arch, &mut rng)?;
        // fail early on an unusable pooling/encoder pair
        if config.pooling == Pooling::Concat4 && arch.layers + 1 < 4 {
            return Err(Error::Config(format!(
                "concat4 pooling needs at least 4 hidden layers, `{}` exposes {}",
                config.encoder_name,
                arch.layers + 1
            )));
        }
        let (se, se_dim) = if config.use_retrieval {
            let table = se.ok_or_else(|| {
                Error::Config("use_retrieval needs an initial sentiment embedding table".into())
            })?;
            let mut values = Vec::with_capacity(labels.len() * table.dim);
            for label in &labels {
                let row = table.get(*label).ok_or_else(|| {
                    Error::LabelMismatch(format!("no sentiment embedding for `{label}`"))
                })?;
                values.extend(row.iter().map(|v| *v as f64));
            }
            let t = store.from_values("se.table", &[labels.len(), table.dim], values)?;
            (Some(t), table.dim)
        } else {
            (None, 0)
        };
        let head = Linear::new(
            &mut store,
            "head",
            config.pooling.dim(arch.hidden) + se_dim,
            labels.len(),
            &mut rng,
        )?;
        Ok(ClassifierModel {
            config,
            labels,
            vocab,
            store,
            encoder,
            head,
            se,
            se_dim,
            dev_macro_f1: None,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn labels(&self) -> &[SentimentLabel] {
        &self.labels
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dev_macro_f1(&self) -> Option<f64> {
        self.dev_macro_f1
    }

    pub(super) fn set_dev_macro_f1(&mut self, value: Option<f64>) {
        self.dev_macro_f1 = value;
    }

    pub fn head_input_dim(&self) -> usize {
        self.config.pooling.dim(self.encoder.config().hidden) + self.se_dim
    }

    pub fn label_index(&self, label: SentimentLabel) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| *l == label)
            .ok_or_else(|| Error::LabelMismatch(format!("`{label}` not in the model's label vocabulary")))
    }

    /// Fails unless `labels` is exactly the model's label vocabulary.
    pub fn check_label_vocab(&self, labels: &[SentimentLabel]) -> Result<()> {
        if labels != self.labels.as_slice() {
            return Err(Error::LabelMismatch(format!(
                "model labels {:?}, corpus labels {:?}",
                self.labels, labels
            )));
        }
        Ok(())
    }

    pub fn token_ids(&self, window: &str) -> Vec<u32> {
        token_ids(&self.vocab, window, self.config.max_tokens)
    }

    /// Learning-rate groups: head and Sentiment Embeddings at `head_lr`;
    /// encoder block `i` of `N` at `encoder_lr * decay^(N-1-i)`; embeddings
    /// at `encoder_lr * decay^N`. With per-step decay every encoder group
    /// starts at `encoder_lr`.
    pub fn param_groups(&self) -> Vec<ParamGroup> {
        let cfg = &self.config;
        let n = self.encoder.config().layers;
        let encoder_lr = |depth_below_top: usize| {
            if cfg.decay_per_step {
                cfg.encoder_lr
            } else {
                cfg.encoder_lr * cfg.layer_decay.powi(depth_below_top as i32)
            }
        };
        let mut groups = vec![ParamGroup {
            name: "head".into(),
            vars: self
                .store
                .vars_where(|name| name.starts_with("head.") || name.starts_with("se.")),
            lr: cfg.head_lr,
            decays: false,
        }];
        for i in (0..n).rev() {
            let prefix = format!("encoder.layer.{i}.");
            groups.push(ParamGroup {
                name: format!("encoder.layer.{i}"),
                vars: self.store.vars_where(|name| name.starts_with(&prefix)),
                lr: encoder_lr(n - 1 - i),
                decays: cfg.decay_per_step,
            });
        }
        groups.push(ParamGroup {
            name: "encoder.embeddings".into(),
            vars: self.store.vars_where(|name| name.starts_with("encoder.embeddings.")),
            lr: encoder_lr(n),
            decays: cfg.decay_per_step,
        });
        groups
    }

    /// Logits `(B, labels)` for token sequences. `nn` holds label indices
    /// of the retrieved neighbours (required with retrieval); `train_rng`
    /// switches dropout on.
    pub fn logits_tensor(
        &self,
        seqs: &[Vec<u32>],
        nn: Option<&[usize]>,
        train_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let device = self.store.device();
        let b = seqs.len();
        let t = seqs.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let mut ids = Vec::with_capacity(b * t);
        let mut mask = Vec::with_capacity(b * t);
        for s in seqs {
            ids.extend(s.iter().copied());
            ids.extend(std::iter::repeat_n(PAD, t - s.len()));
            mask.extend(std::iter::repeat_n(1f32, s.len()));
            mask.extend(std::iter::repeat_n(0f32, t - s.len()));
        }
        let ids = Tensor::from_vec(ids, (b, t), device)?;
        let mask = Tensor::from_vec(mask, (b, t), device)?;
        let states = self.encoder.forward(&ids, &mask)?;
        let mut pooled = pool(&states, self.config.pooling)?;
        if let Some(rng) = train_rng {
            pooled = dropout(&pooled, self.config.dropout, rng)?;
        }
        let features = match &self.se {
            Some(table) => {
                let nn = nn.ok_or_else(|| {
                    Error::Validation("retrieval-augmented model needs neighbour labels".into())
                })?;
                if nn.len() != b {
                    return Err(Error::Validation(format!(
                        "{} neighbour labels for {b} examples",
                        nn.len()
                    )));
                }
                let idx = Tensor::from_vec(
                    nn.iter().map(|i| *i as u32).collect::<Vec<_>>(),
                    b,
                    device,
                )?;
                Tensor::cat(&[pooled, table.index_select(&idx, 0)?], 1)?
            }
            None => pooled,
        };
        self.head.forward(&features)
    }

    fn logits_rows(&self, seqs: &[Vec<u32>], nn: Option<&[usize]>) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(seqs.len());
        for (k, chunk) in seqs.chunks(PREDICT_BATCH).enumerate() {
            let nn_chunk = nn.map(|n| &n[k * PREDICT_BATCH..k * PREDICT_BATCH + chunk.len()]);
            let logits = self.logits_tensor(chunk, nn_chunk, None)?;
            out.extend(logits.to_dtype(DType::F32)?.to_vec2::<f32>()?);
        }
        Ok(out)
    }

    fn check_example(&self, example: &EncodedExample) -> Result<()> {
        if example.task != self.config.task {
            return Err(Error::Validation(format!(
                "model trained for {} refuses {} example `{}`",
                self.config.task,
                example.task,
                example.id()
            )));
        }
        self.label_index(example.label).map(|_| ())
    }

    /// Eval-mode logits of one example.
    pub fn forward(&self, example: &EncodedExample, nn_label: Option<SentimentLabel>) -> Result<Vec<f32>> {
        self.check_example(example)?;
        let nn = self.nn_indices(&[nn_label])?;
        Ok(self
            .logits_rows(&[self.token_ids(&example.text)], nn.as_deref())?
            .remove(0))
    }

    fn nn_indices(&self, labels: &[Option<SentimentLabel>]) -> Result<Option<Vec<usize>>> {
        if !self.config.use_retrieval {
            return Ok(None);
        }
        labels
            .iter()
            .map(|l| {
                let l = l.ok_or_else(|| {
                    Error::Validation("nearest-neighbour label missing for retrieval model".into())
                })?;
                self.label_index(l)
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn retrieved<'c>(&self, ctx: Option<&'c RetrievalContext>) -> Result<Option<&'c RetrievalContext>> {
        if !self.config.use_retrieval {
            return Ok(None);
        }
        ctx.map(Some)
            .ok_or_else(|| Error::Config("retrieval-augmented model needs a retrieval context".into()))
    }

    /// Eval-mode logits for examples, looking up neighbours when the model
    /// uses retrieval. Without retrieval `ctx` is never consulted.
    pub fn logits(&self, examples: &[EncodedExample], ctx: Option<&RetrievalContext>) -> Result<Vec<Vec<f32>>> {
        for e in examples {
            self.check_example(e)?;
        }
        let nn = match self.retrieved(ctx)? {
            Some(ctx) => Some(
                examples
                    .iter()
                    .map(|e| self.label_index(ctx.attach(e)?))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        let seqs: Vec<Vec<u32>> = examples.iter().map(|e| self.token_ids(&e.text)).collect();
        self.logits_rows(&seqs, nn.as_deref())
    }

    /// Argmax labels; ties go to the lowest label-vocabulary index.
    pub fn predict(&self, examples: &[EncodedExample], ctx: Option<&RetrievalContext>) -> Result<Vec<SentimentLabel>> {
        Ok(self.labels_of(&self.logits(examples, ctx)?))
    }

    /// Predictions for raw windows (no gold label), e.g. at chat time.
    pub fn predict_windows<S: AsRef<str>>(
        &self,
        windows: &[S],
        ctx: Option<&RetrievalContext>,
    ) -> Result<Vec<SentimentLabel>> {
        let nn = match self.retrieved(ctx)? {
            Some(ctx) => Some(
                windows
                    .iter()
                    .map(|w| self.label_index(ctx.neighbor_for_text(w.as_ref())?.label))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        let seqs: Vec<Vec<u32>> = windows.iter().map(|w| self.token_ids(w.as_ref())).collect();
        Ok(self.labels_of(&self.logits_rows(&seqs, nn.as_deref())?))
    }

    pub fn labels_of(&self, logits: &[Vec<f32>]) -> Vec<SentimentLabel> {
        logits.iter().map(|row| self.labels[argmax(row)]).collect()
    }

    pub fn manifest(&self) -> ClassifierManifest {
        ClassifierManifest {
            task: self.config.task,
            encoder_name: self.config.encoder_name.clone(),
            pooling: self.config.pooling,
            x: self.config.x,
            use_retrieval: self.config.use_retrieval,
            label_vocab: self.labels.clone(),
            dev_macro_f1: self.dev_macro_f1,
            seed: self.config.seed,
            se_dim: self.se_dim,
            config: self.config.clone(),
        }
    }

    /// Writes `weights.safetensors`, `vocab.json` and `manifest.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.store.save(dir.join("weights.safetensors"))?;
        fs::write(dir.join("vocab.json"), serde_json::to_string(&self.vocab)?)?;
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&self.manifest())? + "\n",
        )?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.exists() {
            return Err(Error::Checkpoint(format!(
                "no classifier manifest.json in {}",
                dir.display()
            )));
        }
        let manifest: ClassifierManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        let vocab: Vocab = serde_json::from_str(&fs::read_to_string(dir.join("vocab.json"))?)?;
        let se = (manifest.se_dim > 0).then(|| SentimentEmbeddingTable {
            table: manifest
                .label_vocab
                .iter()
                .map(|l| (*l, vec![0.0; manifest.se_dim]))
                .collect(),
            dim: manifest.se_dim,
            trainable: true,
        });
        let mut model = ClassifierModel::new(
            manifest.config.clone(),
            manifest.label_vocab.clone(),
            vocab.reindexed(),
            se.as_ref(),
            DType::F32,
        )?;
        model.store.load_weights(dir.join("weights.safetensors"))?;
        model.dev_macro_f1 = manifest.dev_macro_f1;
        Ok(model)
    }

    /// Loads a checkpoint and refuses it unless it was trained for `task`.
    pub fn load_for_task(dir: impl AsRef<Path>, task: Task) -> Result<Self> {
        let dir = dir.as_ref();
        let model = Self::load(dir)?;
        if model.config.task != task {
            return Err(Error::Config(format!(
                "checkpoint {} was trained for task `{}`; refusing to use it for `{task}`",
                dir.display(),
                model.config.task
            )));
        }
        Ok(model)
    }
}
