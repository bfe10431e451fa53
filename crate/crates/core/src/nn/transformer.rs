use candle_core::{DType, Tensor, D};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LayerNorm, Linear, ParamStore};
use crate::error::{Error, Result};

const MASKED: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub max_positions: usize,
}

impl TransformerConfig {
    fn check(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} not divisible into {} heads",
                self.hidden, self.heads
            )));
        }
        if self.vocab_size == 0 || self.max_positions == 0 {
            return Err(Error::Config("empty vocabulary or position table".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct SelfAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl SelfAttention {
    fn new(store: &mut ParamStore, name: &str, cfg: &TransformerConfig, rng: &mut impl Rng) -> Result<Self> {
        let h = cfg.hidden;
        Ok(SelfAttention {
            q: Linear::new(store, &format!("{name}.q"), h, h, rng)?,
            k: Linear::new(store, &format!("{name}.k"), h, h, rng)?,
            v: Linear::new(store, &format!("{name}.v"), h, h, rng)?,
            out: Linear::new(store, &format!("{name}.out"), h, h, rng)?,
            heads: cfg.heads,
        })
    }

    /// `x`: (B, T, H); `mask`: additive, broadcastable to (B, heads, T, T).
    fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, t, h) = x.dims3()?;
        let hd = h / self.heads;
        let split = |y: Tensor| -> Result<Tensor> {
            Ok(y.reshape((b, t, self.heads, hd))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (hd as f64).sqrt())?;
        let scores = scores.broadcast_add(mask)?;
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let ctx = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, t, h))?;
        self.out.forward(&ctx)
    }
}

#[derive(Debug, Clone)]
struct Block {
    attn: SelfAttention,
    ln_attn: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
    ln_ff: LayerNorm,
    pre_norm: bool,
}

impl Block {
    fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &TransformerConfig,
        pre_norm: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Block {
            attn: SelfAttention::new(store, &format!("{name}.attn"), cfg, rng)?,
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), cfg.hidden)?,
            ff_in: Linear::new(store, &format!("{name}.ff_in"), cfg.hidden, cfg.ff, rng)?,
            ff_out: Linear::new(store, &format!("{name}.ff_out"), cfg.ff, cfg.hidden, rng)?,
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), cfg.hidden)?,
            pre_norm,
        })
    }

    fn feed_forward(&self, x: &Tensor) -> Result<Tensor> {
        self.ff_out.forward(&self.ff_in.forward(x)?.gelu_erf()?)
    }

    fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        if self.pre_norm {
            let x = (x + self.attn.forward(&self.ln_attn.forward(x)?, mask)?)?;
            Ok((&x + self.feed_forward(&self.ln_ff.forward(&x)?)?)?)
        } else {
            let x = self.ln_attn.forward(&(x + self.attn.forward(x, mask)?)?)?;
            self.ln_ff.forward(&(&x + self.feed_forward(&x)?)?)
        }
    }
}

fn embed(table: &Tensor, ids: &Tensor) -> Result<Tensor> {
    let (b, t) = ids.dims2()?;
    let hidden = table.dim(1)?;
    Ok(table
        .index_select(&ids.flatten_all()?, 0)?
        .reshape((b, t, hidden))?)
}

fn positions(table: &Tensor, t: usize) -> Result<Tensor> {
    if t > table.dim(0)? {
        return Err(Error::Config(format!(
            "sequence of {t} tokens exceeds {} positions",
            table.dim(0)?
        )));
    }
    Ok(table.narrow(0, 0, t)?.unsqueeze(0)?)
}

/// Bidirectional encoder with post-norm blocks.
///
/// Parameter names: `{prefix}.embeddings.*` and `{prefix}.layer.{i}.*`.
#[derive(Debug, Clone)]
pub struct Encoder {
    tokens: Tensor,
    positions: Tensor,
    ln_emb: LayerNorm,
    blocks: Vec<Block>,
    config: TransformerConfig,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        config: TransformerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.check()?;
        let tokens = store.normal(
            &format!("{prefix}.embeddings.tokens"),
            &[config.vocab_size, config.hidden],
            0.1,
            rng,
        )?;
        let positions = store.normal(
            &format!("{prefix}.embeddings.positions"),
            &[config.max_positions, config.hidden],
            0.1,
            rng,
        )?;
        let ln_emb = LayerNorm::new(store, &format!("{prefix}.embeddings.ln"), config.hidden)?;
        let blocks = (0..config.layers)
            .map(|i| Block::new(store, &format!("{prefix}.layer.{i}"), &config, false, rng))
            .collect::<Result<_>>()?;
        Ok(Encoder {
            tokens,
            positions,
            ln_emb,
            blocks,
            config,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    /// Returns `layers + 1` hidden states of shape (B, T, H): the embedding
    /// output followed by each block's output, deepest last.
    ///
    /// `attention`: (B, T) with 1 for real tokens and 0 for padding.
    pub fn forward(&self, ids: &Tensor, attention: &Tensor) -> Result<Vec<Tensor>> {
        let (b, t) = ids.dims2()?;
        let x = embed(&self.tokens, ids)?.broadcast_add(&positions(&self.positions, t)?)?;
        let mut x = self.ln_emb.forward(&x)?;
        let mask = ((attention.to_dtype(x.dtype())?.ones_like()? - attention.to_dtype(x.dtype())?)?
            * MASKED)?
            .reshape((b, 1, 1, t))?;
        let mut states = Vec::with_capacity(self.blocks.len() + 1);
        states.push(x.clone());
        for block in &self.blocks {
            x = block.forward(&x, &mask)?;
            states.push(x.clone());
        }
        Ok(states)
    }
}

/// Causal decoder with pre-norm blocks and a final layer norm.
///
/// Parameter names: `{prefix}.embeddings.*`, `{prefix}.layer.{i}.*`,
/// `{prefix}.ln_final.*`, `{prefix}.lm_head.*`.
#[derive(Debug, Clone)]
pub struct Decoder {
    tokens: Tensor,
    positions: Tensor,
    blocks: Vec<Block>,
    ln_final: LayerNorm,
    lm_head: Linear,
    config: TransformerConfig,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        config: TransformerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.check()?;
        let tokens = store.normal(
            &format!("{prefix}.embeddings.tokens"),
            &[config.vocab_size, config.hidden],
            0.1,
            rng,
        )?;
        let positions = store.normal(
            &format!("{prefix}.embeddings.positions"),
            &[config.max_positions, config.hidden],
            0.1,
            rng,
        )?;
        let blocks = (0..config.layers)
            .map(|i| Block::new(store, &format!("{prefix}.layer.{i}"), &config, true, rng))
            .collect::<Result<_>>()?;
        let ln_final = LayerNorm::new(store, &format!("{prefix}.ln_final"), config.hidden)?;
        let lm_head = Linear::new(
            store,
            &format!("{prefix}.lm_head"),
            config.hidden,
            config.vocab_size,
            rng,
        )?;
        Ok(Decoder {
            tokens,
            positions,
            blocks,
            ln_final,
            lm_head,
            config,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    /// Final hidden states (B, T, H) under a causal mask. Right padding needs
    /// no extra mask: real positions never attend to later ones.
    pub fn hidden(&self, ids: &Tensor) -> Result<Tensor> {
        let (_, t) = ids.dims2()?;
        let mut x = embed(&self.tokens, ids)?.broadcast_add(&positions(&self.positions, t)?)?;
        let mask = causal_mask(t, x.dtype(), x.device())?;
        for block in &self.blocks {
            x = block.forward(&x, &mask)?;
        }
        self.ln_final.forward(&x)
    }

    pub fn logits(&self, hidden: &Tensor) -> Result<Tensor> {
        self.lm_head.forward(hidden)
    }
}

fn causal_mask(t: usize, dtype: DType, device: &candle_core::Device) -> Result<Tensor> {
    let values: Vec<f64> = (0..t)
        .flat_map(|i| (0..t).map(move |j| if j > i { MASKED } else { 0.0 }))
        .collect();
    Ok(Tensor::from_vec(values, (1, 1, t, t), device)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> TransformerConfig {
        TransformerConfig {
            vocab_size: 11,
            hidden: 8,
            layers: 2,
            heads: 2,
            ff: 16,
            max_positions: 16,
        }
    }

    #[test]
    fn encoder_returns_layers_plus_one_states() {
        let mut store = ParamStore::new(DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::new(&mut store, "encoder", cfg(), &mut rng).unwrap();
        let ids = Tensor::new(&[[1u32, 2, 3, 0]], store.device()).unwrap();
        let att = Tensor::new(&[[1f32, 1.0, 1.0, 0.0]], store.device()).unwrap();
        let states = enc.forward(&ids, &att).unwrap();
        assert_eq!(states.len(), 3);
        assert_eq!(states[2].dims(), &[1, 4, 8]);
    }

    #[test]
    fn padding_does_not_change_real_positions() {
        let mut store = ParamStore::new(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::new(&mut store, "encoder", cfg(), &mut rng).unwrap();
        let dev = store.device().clone();
        let short = enc
            .forward(&Tensor::new(&[[1u32, 2]], &dev).unwrap(), &Tensor::new(&[[1f64, 1.0]], &dev).unwrap())
            .unwrap();
        let padded = enc
            .forward(
                &Tensor::new(&[[1u32, 2, 0, 0]], &dev).unwrap(),
                &Tensor::new(&[[1f64, 1.0, 0.0, 0.0]], &dev).unwrap(),
            )
            .unwrap();
        let a = short[2].get(0).unwrap().get(0).unwrap().to_vec1::<f64>().unwrap();
        let b = padded[2].get(0).unwrap().get(0).unwrap().to_vec1::<f64>().unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn decoder_is_causal() {
        let mut store = ParamStore::new(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dec = Decoder::new(&mut store, "decoder", cfg(), &mut rng).unwrap();
        let dev = store.device().clone();
        let a = dec.hidden(&Tensor::new(&[[1u32, 2, 3]], &dev).unwrap()).unwrap();
        let b = dec.hidden(&Tensor::new(&[[1u32, 2, 9]], &dev).unwrap()).unwrap();
        let a1 = a.get(0).unwrap().get(1).unwrap().to_vec1::<f64>().unwrap();
        let b1 = b.get(0).unwrap().get(1).unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(a1, b1);
        let logits = dec.logits(&a).unwrap();
        assert_eq!(logits.dims(), &[1, 3, 11]);
    }

    #[test]
    fn too_long_sequences_are_rejected() {
        let mut store = ParamStore::new(DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dec = Decoder::new(&mut store, "decoder", cfg(), &mut rng).unwrap();
        let ids = Tensor::zeros((1, 17), DType::U32, store.device()).unwrap();
        assert!(dec.hidden(&ids).is_err());
    }
}
