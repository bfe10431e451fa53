use std::fs;
use std::ops::Range;
use std::path::Path;

use candle_core::{DType, Tensor, D};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    decoder_preset, DecodeParams, DecodeStrategy, GenerationInput, GeneratorConfig, ReplyScorer,
    BOS, EOS, GENERATOR_SPECIALS, PAD, SPEAKER1, SPEAKER2, UNK,
};
use crate::error::{Error, Result};
use crate::label::SentimentLabel;
use crate::lexicon::{Lexicon, LexiconKind};
use crate::nn::{argmax, Decoder, Linear, ParamStore};
use crate::text::{detokenize, Vocab};

/// Token ids of one input; positions `reply_start..ids.len()` hold the
/// reply and its closing `<eos>` (empty when there is no reply).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInput {
    pub ids: Vec<u32>,
    pub reply_start: usize,
}

impl EncodedInput {
    /// Loss-bearing positions: exactly the reply tokens plus `<eos>`.
    pub fn loss_positions(&self) -> Range<usize> {
        self.reply_start..self.ids.len()
    }
}

/// One line of a generation dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub dialogue_id: String,
    pub turn: usize,
    pub history: Vec<String>,
    pub target_label: Option<SentimentLabel>,
    pub generated: String,
    pub gold: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorManifest {
    pub decoder_name: String,
    pub lexicon_kind: LexiconKind,
    pub decode: DecodeParams,
    pub dev_nll: Option<f64>,
    pub seed: u64,
    pub multitask: bool,
    pub config: GeneratorConfig,
}

#[derive(Debug, Clone)]
pub struct GeneratorModel {
    config: GeneratorConfig,
    vocab: Vocab,
    store: ParamStore,
    decoder: Decoder,
    nsp: Option<Linear>,
    dev_nll: Option<f64>,
    banned: Vec<u32>,
    eos: u32,
    pad: u32,
}

/// Vocabulary over the training texts and every lexicon entry, so that
/// conditioning words have their own ids.
pub(super) fn build_generator_vocab<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    lexicon: &'a Lexicon,
) -> Result<Vocab> {
    let lex_texts = lexicon.entries.values().flatten().map(String::as_str);
    Vocab::build(&GENERATOR_SPECIALS, 1, texts.into_iter().chain(lex_texts))
}

impl GeneratorModel {
    pub fn new(config: GeneratorConfig, vocab: Vocab, dtype: DType) -> Result<Self> {
        config.validate()?;
        for (i, special) in GENERATOR_SPECIALS.iter().enumerate() {
            if vocab.id(special) != Some(i as u32) {
                return Err(Error::Config(format!(
                    "vocabulary must register `{special}` once, at id {i}"
                )));
            }
        }
        let arch = decoder_preset(&config.decoder_name, vocab.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new(dtype);
        let decoder = Decoder::new(&mut store, "decoder", arch, &mut rng)?;
        let nsp = if config.multitask {
            Some(Linear::new(&mut store, "nsp", arch.hidden, 1, &mut rng)?)
        } else {
            None
        };
        let id = |t: &str| vocab.id(t).expect("special registered");
        let banned = vec![id(PAD), id(UNK), id(BOS), id(SPEAKER1), id(SPEAKER2)];
        let (eos, pad) = (id(EOS), id(PAD));
        Ok(GeneratorModel {
            config,
            vocab,
            store,
            decoder,
            nsp,
            dev_nll: None,
            banned,
            eos,
            pad,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dev_nll(&self) -> Option<f64> {
        self.dev_nll
    }

    pub(super) fn set_dev_nll(&mut self, value: Option<f64>) {
        self.dev_nll = value;
    }

    pub fn has_nsp_head(&self) -> bool {
        self.nsp.is_some()
    }

    fn max_positions(&self) -> usize {
        self.decoder.config().max_positions
    }

    fn special(&self, token: &str) -> u32 {
        self.vocab.id(token).expect("special registered")
    }

    /// Tokenizes `input`. `reserve` positions are kept free for generated
    /// tokens. Over-long contexts lose their oldest tokens after `<bos>`.
    pub fn encode(&self, input: &GenerationInput, reserve: usize) -> EncodedInput {
        let max = self.max_positions();
        let mut context = Vec::new();
        context.extend(self.vocab.encode_text(&input.lexicon_text));
        for (speaker, text) in &input.history {
            context.push(self.special(speaker.token()));
            context.extend(self.vocab.encode_text(text));
        }
        context.push(self.special(SPEAKER2));
        let reply: Vec<u32> = match &input.reply {
            Some(r) => {
                let mut ids = self.vocab.encode_text(r);
                ids.truncate(max / 2 - 1);
                ids.push(self.eos);
                ids
            }
            None => Vec::new(),
        };
        let budget = max.saturating_sub(1 + reply.len() + reserve).max(1);
        if context.len() > budget {
            context.drain(..context.len() - budget);
        }
        let mut ids = Vec::with_capacity(1 + context.len() + reply.len());
        ids.push(self.special(BOS));
        ids.extend(context);
        let reply_start = ids.len();
        ids.extend(reply);
        EncodedInput { ids, reply_start }
    }

    fn padded(&self, seqs: &[&EncodedInput]) -> Result<(Tensor, usize)> {
        let t = seqs.iter().map(|s| s.ids.len()).max().unwrap_or(1).max(2);
        let mut ids = Vec::with_capacity(seqs.len() * t);
        for s in seqs {
            ids.extend(&s.ids);
            ids.extend(std::iter::repeat_n(self.pad, t - s.ids.len()));
        }
        Ok((Tensor::from_vec(ids, (seqs.len(), t), self.store.device())?, t))
    }

    /// Hidden states `(B, T, H)` of right-padded sequences.
    pub(super) fn hidden(&self, seqs: &[&EncodedInput]) -> Result<(Tensor, usize)> {
        let (ids, t) = self.padded(seqs)?;
        Ok((self.decoder.hidden(&ids)?, t))
    }

    /// Summed reply-token NLL and the number of reply tokens. `include`
    /// selects which rows contribute (all when `None`).
    pub(super) fn lm_nll_sum(
        &self,
        seqs: &[&EncodedInput],
        hidden: &Tensor,
        t: usize,
        include: Option<&[bool]>,
    ) -> Result<(Tensor, usize)> {
        let b = seqs.len();
        let mut targets = vec![0u32; b * (t - 1)];
        let mut mask = vec![0f32; b * (t - 1)];
        let mut count = 0;
        for (row, s) in seqs.iter().enumerate() {
            if include.is_some_and(|inc| !inc[row]) {
                continue;
            }
            for p in s.loss_positions() {
                targets[row * (t - 1) + p - 1] = s.ids[p];
                mask[row * (t - 1) + p - 1] = 1.0;
                count += 1;
            }
        }
        let device = self.store.device();
        let logits = self.decoder.logits(&hidden.narrow(1, 0, t - 1)?)?;
        let log_probs = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
        let targets = Tensor::from_vec(targets, (b, t - 1, 1), device)?;
        let picked = log_probs.gather(&targets, 2)?.squeeze(2)?;
        let mask = Tensor::from_vec(mask, (b, t - 1), device)?.to_dtype(picked.dtype())?;
        let nll = (picked * mask)?.sum_all()?.neg()?;
        Ok((nll, count))
    }

    /// Next-sentence scores `(B)` read at each sequence's last real token.
    pub(super) fn nsp_scores(&self, seqs: &[&EncodedInput], hidden: &Tensor, t: usize) -> Result<Tensor> {
        let head = self
            .nsp
            .as_ref()
            .ok_or_else(|| Error::Config("model has no next-sentence-prediction head".into()))?;
        let (b, _, h) = hidden.dims3()?;
        let rows: Vec<u32> = seqs
            .iter()
            .enumerate()
            .map(|(i, s)| (i * t + s.ids.len() - 1) as u32)
            .collect();
        let rows = Tensor::from_vec(rows, b, self.store.device())?;
        let last = hidden.reshape((b * t, h))?.index_select(&rows, 0)?;
        Ok(head.forward(&last)?.squeeze(1)?)
    }

    /// Mean reply-token NLL of a batch.
    pub fn lm_loss(&self, inputs: &[GenerationInput]) -> Result<Tensor> {
        let enc: Vec<EncodedInput> = inputs.iter().map(|i| self.encode(i, 0)).collect();
        let refs: Vec<&EncodedInput> = enc.iter().collect();
        let (hidden, t) = self.hidden(&refs)?;
        let (sum, count) = self.lm_nll_sum(&refs, &hidden, t, None)?;
        if count == 0 {
            return Err(Error::Empty("no reply tokens in batch".into()));
        }
        Ok((sum / count as f64)?)
    }

    fn next_logits(&self, ids: &[u32]) -> Result<Vec<f32>> {
        let t = ids.len();
        let ids = Tensor::from_vec(ids.to_vec(), (1, t), self.store.device())?;
        let hidden = self.decoder.hidden(&ids)?;
        let logits = self.decoder.logits(&hidden.narrow(1, t - 1, 1)?)?;
        Ok(logits.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?)
    }

    /// Decodes a reply for `input` (its `reply` is ignored), seeding the
    /// sampler from `params.seed`.
    pub fn generate(&self, input: &GenerationInput, params: &DecodeParams) -> Result<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        self.generate_with_rng(input, params, &mut rng)
    }

    /// Decodes until `<eos>` or `max_new_tokens`. Special tokens are never
    /// emitted; `<eos>` is unavailable for the first token.
    pub fn generate_with_rng(
        &self,
        input: &GenerationInput,
        params: &DecodeParams,
        rng: &mut impl Rng,
    ) -> Result<String> {
        if params.max_new_tokens == 0 {
            return Ok(String::new());
        }
        let prompt = GenerationInput {
            reply: None,
            ..input.clone()
        };
        let reserve = params.max_new_tokens.min(self.max_positions() / 2);
        let mut ids = self.encode(&prompt, reserve).ids;
        let mut out: Vec<u32> = Vec::new();
        while out.len() < params.max_new_tokens && ids.len() < self.max_positions() {
            let mut logits = self.next_logits(&ids)?;
            for b in &self.banned {
                logits[*b as usize] = f32::NEG_INFINITY;
            }
            if out.is_empty() {
                logits[self.eos as usize] = f32::NEG_INFINITY;
            }
            let next = pick(&logits, params, rng)? as u32;
            if next == self.eos {
                break;
            }
            out.push(next);
            ids.push(next);
        }
        let tokens: Vec<&str> = out.iter().map(|i| self.vocab.token(*i)).collect();
        Ok(detokenize(&tokens))
    }

    pub fn manifest(&self) -> GeneratorManifest {
        GeneratorManifest {
            decoder_name: self.config.decoder_name.clone(),
            lexicon_kind: self.config.lexicon_kind,
            decode: self.config.decode,
            dev_nll: self.dev_nll,
            seed: self.config.seed,
            multitask: self.config.multitask,
            config: self.config.clone(),
        }
    }

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
                "no generator manifest.json in {}",
                dir.display()
            )));
        }
        let manifest: GeneratorManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        let vocab: Vocab = serde_json::from_str(&fs::read_to_string(dir.join("vocab.json"))?)?;
        let mut model = GeneratorModel::new(manifest.config, vocab.reindexed(), DType::F32)?;
        model.store.load_weights(dir.join("weights.safetensors"))?;
        model.dev_nll = manifest.dev_nll;
        Ok(model)
    }
}

impl ReplyScorer for GeneratorModel {
    fn reply_token_logprobs(&self, input: &GenerationInput) -> Result<Vec<f64>> {
        let enc = self.encode(input, 0);
        if enc.loss_positions().is_empty() {
            return Err(Error::Empty("input has no reply to score".into()));
        }
        let t = enc.ids.len();
        let ids = Tensor::from_vec(enc.ids.clone(), (1, t), self.store.device())?;
        let logits = self.decoder.logits(&self.decoder.hidden(&ids)?)?;
        let log_probs = candle_nn::ops::log_softmax(&logits, D::Minus1)?
            .squeeze(0)?
            .to_dtype(DType::F64)?
            .to_vec2::<f64>()?;
        Ok(enc
            .loss_positions()
            .map(|p| log_probs[p - 1][enc.ids[p] as usize])
            .collect())
    }
}

fn pick(logits: &[f32], params: &DecodeParams, rng: &mut impl Rng) -> Result<usize> {
    if params.strategy == DecodeStrategy::Greedy {
        return Ok(argmax(logits));
    }
    let temperature = params.temperature.max(1e-6);
    let mut ranked: Vec<(usize, f64)> = logits
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .map(|(i, v)| (i, *v as f64 / temperature))
        .collect();
    if ranked.is_empty() {
        return Err(Error::Validation("every token is masked".into()));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let max = ranked[0].1;
    let mut weights: Vec<f64> = ranked.iter().map(|(_, v)| (v - max).exp()).collect();
    let keep = match params.strategy {
        DecodeStrategy::TopkSampling => params.top_k.max(1).min(ranked.len()),
        DecodeStrategy::Nucleus => {
            let total: f64 = weights.iter().sum();
            let mut cumulative = 0.0;
            let mut keep = ranked.len();
            for (i, w) in weights.iter().enumerate() {
                cumulative += w / total;
                if cumulative >= params.top_p {
                    keep = i + 1;
                    break;
                }
            }
            keep
        }
        DecodeStrategy::Greedy => unreachable!(),
    };
    weights.truncate(keep);
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::Validation(e.to_string()))?;
    Ok(ranked[dist.sample(rng)].0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{build_generation_input, DecodeStrategy};
    use crate::lexicon::sentiment_sentences;
    use SentimentLabel::*;

    fn model(multitask: bool) -> (GeneratorModel, Lexicon) {
        let lex = sentiment_sentences(&[Joy, Anger]).unwrap();
        let texts = ["how do you feel ?", "i am fine .", "so furious today !"];
        let vocab = build_generator_vocab(texts, &lex).unwrap();
        let cfg = GeneratorConfig {
            multitask,
            ..GeneratorConfig::toy(LexiconKind::SentimentSentences, 3)
        };
        (GeneratorModel::new(cfg, vocab, DType::F32).unwrap(), lex)
    }

    #[test]
    fn specials_registered_once_at_the_front() {
        let (m, _) = model(false);
        for (i, s) in GENERATOR_SPECIALS.iter().enumerate() {
            assert_eq!(m.vocab().id(s), Some(i as u32));
        }
        let duplicates = m.vocab().len()
            - (0..m.vocab().len() as u32)
                .map(|i| m.vocab().token(i))
                .collect::<std::collections::HashSet<_>>()
                .len();
        assert_eq!(duplicates, 0);
    }

    #[test]
    fn loss_mask_covers_exactly_the_reply() {
        let (m, lex) = model(false);
        let input =
            build_generation_input(&lex, Some(Joy), &["How do you feel?"], Some("I am fine."), None).unwrap();
        let enc = m.encode(&input, 0);
        let reply_ids = m.vocab().encode_text("I am fine.");
        let positions: Vec<usize> = enc.loss_positions().collect();
        assert_eq!(positions.len(), reply_ids.len() + 1);
        assert_eq!(&enc.ids[enc.reply_start..enc.ids.len() - 1], reply_ids.as_slice());
        assert_eq!(*enc.ids.last().unwrap(), m.vocab().id(EOS).unwrap());
        assert_eq!(enc.ids[enc.reply_start - 1], m.vocab().id(SPEAKER2).unwrap());
        let no_reply = m.encode(&GenerationInput { reply: None, ..input }, 0);
        assert!(no_reply.loss_positions().is_empty());
    }

    #[test]
    fn loss_ignores_history_tokens() {
        // changing a history word leaves the per-row mask sum unchanged
        let (m, lex) = model(false);
        let a = build_generation_input(&lex, Some(Joy), &["how do you feel ?"], Some("i am fine ."), None).unwrap();
        let enc = m.encode(&a, 0);
        let (hidden, t) = m.hidden(&[&enc]).unwrap();
        let (_, count) = m.lm_nll_sum(&[&enc], &hidden, t, None).unwrap();
        assert_eq!(count, enc.loss_positions().len());
    }

    #[test]
    fn greedy_is_deterministic_and_budgeted() {
        let (m, lex) = model(false);
        let input = build_generation_input(&lex, Some(Anger), &["How do you feel?"], None, None).unwrap();
        let a = m.generate(&input, &DecodeParams::greedy(8)).unwrap();
        assert_eq!(a, m.generate(&input, &DecodeParams::greedy(8)).unwrap());
        let one = m.generate(&input, &DecodeParams::greedy(1)).unwrap();
        assert_eq!(crate::text::tokenize(&one).len(), 1, "{one:?}");
    }

    #[test]
    fn seeded_sampling_is_reproducible_and_clean() {
        let (m, lex) = model(false);
        let input = build_generation_input(&lex, Some(Joy), &["hi"], None, None).unwrap();
        for strategy in [DecodeStrategy::TopkSampling, DecodeStrategy::Nucleus] {
            let p = DecodeParams {
                strategy,
                max_new_tokens: 10,
                seed: 9,
                ..Default::default()
            };
            let a = m.generate(&input, &p).unwrap();
            assert_eq!(a, m.generate(&input, &p).unwrap());
            for special in GENERATOR_SPECIALS {
                assert!(!a.contains(special), "{a}");
            }
        }
    }

    #[test]
    fn logprobs_cover_reply_and_eos() {
        let (m, lex) = model(false);
        let input = build_generation_input(&lex, Some(Joy), &["hi"], Some("i am fine ."), None).unwrap();
        let lp = m.reply_token_logprobs(&input).unwrap();
        assert_eq!(lp.len(), 5);
        assert!(lp.iter().all(|v| *v < 0.0));
    }

    #[test]
    fn save_load_round_trip() {
        let (m, lex) = model(true);
        let tmp = tempfile::tempdir().unwrap();
        m.save(tmp.path()).unwrap();
        let back = GeneratorModel::load(tmp.path()).unwrap();
        assert!(back.has_nsp_head());
        let input = build_generation_input(&lex, Some(Joy), &["hi"], None, None).unwrap();
        assert_eq!(
            m.generate(&input, &DecodeParams::greedy(6)).unwrap(),
            back.generate(&input, &DecodeParams::greedy(6)).unwrap()
        );
        let empty = tempfile::tempdir().unwrap();
        assert!(GeneratorModel::load(empty.path()).is_err());
    }

    #[test]
    fn top_k_one_equals_greedy() {
        let logits = [0.1f32, 2.0, -1.0, 1.9];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = DecodeParams {
            top_k: 1,
            ..Default::default()
        };
        for _ in 0..20 {
            assert_eq!(pick(&logits, &p, &mut rng).unwrap(), 1);
        }
    }
}
