//! Frozen decoder-only transformer and the learned output head.
//!
//! The decoder is a small pre-norm causal transformer initialized from its own
//! seed and never updated; it stands in for a pretrained language model. Any
//! other model can be plugged in through [`LanguageDecoder`]. Gradients still
//! flow through it to the upstream trainable modules.
//!
//! Forecasts are produced one step at a time: the last hidden state goes
//! through the head to give `N` values, which are embedded back into
//! `d_LM` and appended to the sequence. Because attention is causal, earlier
//! hidden states never change when a token is appended, so appended tokens
//! are processed incrementally against cached keys and values.

use crate::attention::AttentionParams;
use crate::error::{Result, SeedError};
use crate::numerics::{
    LinearParams, NormParams, ParamId, ParamStore, SeedRng, Tape, Tensor, Var, LN_EPS,
};
use crate::reprogramming::SemanticSequence;

pub const PARAM_PREFIX: &str = "decoder.";
pub const VOCAB_SIZE: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub init_seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            d_model: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 256,
            max_positions: 1024,
            init_seed: 0x5EED,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.d_model == 0 || self.heads == 0 || self.ffn_dim == 0 || self.max_positions == 0 {
            errs.push("decoder.d_model, heads, ffn_dim and max_positions must be >= 1".into());
        } else if !self.d_model.is_multiple_of(self.heads) {
            errs.push(format!(
                "decoder.d_model = {} is not divisible by decoder.heads = {}",
                self.d_model, self.heads
            ));
        }
        errs
    }
}

/// Keys and values of every layer for the positions processed so far.
#[derive(Debug, Default)]
pub struct DecoderCache {
    layers: Vec<(Var, Var)>,
    pub len: usize,
}

/// What the forecaster needs from a language model.
pub trait LanguageDecoder {
    fn d_model(&self) -> usize;

    /// Frozen `[vocab, d_model]` input embedding table.
    fn embedding_table<'a>(&self, store: &'a ParamStore) -> &'a Tensor;

    /// Runs `x: [B, S, d]` as the next `S` positions after those in `cache`
    /// and returns hidden states `[B, S, d]`.
    fn forward_chunk(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        cache: &mut DecoderCache,
    ) -> Result<Var>;
}

#[derive(Clone, Debug)]
struct Block {
    norm1: NormParams,
    attn: AttentionParams,
    norm2: NormParams,
    ffn1: LinearParams,
    ffn2: LinearParams,
}

#[derive(Clone, Debug)]
pub struct FrozenDecoder {
    pub config: DecoderConfig,
    embed: ParamId,
    positions: ParamId,
    blocks: Vec<Block>,
    final_norm: NormParams,
}

impl FrozenDecoder {
    /// All parameters are registered frozen under `decoder.` and drawn from
    /// `config.init_seed`, independent of any other seed.
    pub fn new(store: &mut ParamStore, config: DecoderConfig) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(SeedError::Config(errs));
        }
        let mut rng = SeedRng::new(config.init_seed);
        let d = config.d_model;
        let embed = store.add(
            "decoder.embed",
            rng.normal_tensor(&[VOCAB_SIZE, d], 0.02),
            true,
        )?;
        let positions = store.add(
            "decoder.pos",
            rng.normal_tensor(&[config.max_positions, d], 0.02),
            true,
        )?;
        let blocks = (0..config.layers)
            .map(|i| {
                let p = format!("decoder.block{i}");
                Ok(Block {
                    norm1: NormParams::new(store, &format!("{p}.norm1"), d, true)?,
                    attn: AttentionParams::new(
                        store,
                        &mut rng,
                        &format!("{p}.attn"),
                        d,
                        config.heads,
                        true,
                    )?,
                    norm2: NormParams::new(store, &format!("{p}.norm2"), d, true)?,
                    ffn1: LinearParams::new(
                        store,
                        &mut rng,
                        &format!("{p}.ffn1"),
                        d,
                        config.ffn_dim,
                        true,
                    )?,
                    ffn2: LinearParams::new(
                        store,
                        &mut rng,
                        &format!("{p}.ffn2"),
                        config.ffn_dim,
                        d,
                        true,
                    )?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let final_norm = NormParams::new(store, "decoder.final_norm", d, true)?;
        Ok(FrozenDecoder {
            config,
            embed,
            positions,
            blocks,
            final_norm,
        })
    }

    /// Causal forward pass over a whole sequence.
    pub fn decode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        seq: &SemanticSequence,
    ) -> Result<Var> {
        let mut cache = DecoderCache::default();
        self.forward_chunk(tape, store, seq.tokens, &mut cache)
    }
}

impl LanguageDecoder for FrozenDecoder {
    fn d_model(&self) -> usize {
        self.config.d_model
    }

    fn embedding_table<'a>(&self, store: &'a ParamStore) -> &'a Tensor {
        &store.get(self.embed).tensor
    }

    fn forward_chunk(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        cache: &mut DecoderCache,
    ) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.config.d_model {
            return Err(SeedError::shape("decode", &s, &[self.config.d_model]));
        }
        let n = s[1];
        let end = cache.len + n;
        if end > self.config.max_positions {
            return Err(SeedError::Capacity {
                index: end - 1,
                capacity: self.config.max_positions,
            });
        }
        let table = tape.param(store, self.positions);
        let pos = tape.narrow(table, 0, cache.len, n)?;
        let mut h = tape.add(x, pos)?;
        let fresh = cache.layers.is_empty();
        for (i, block) in self.blocks.iter().enumerate() {
            let a_in = block.norm1.apply(tape, store, h, LN_EPS)?;
            let prior = if fresh { None } else { Some(cache.layers[i]) };
            let a = block.attn.forward(tape, store, a_in, prior, true)?;
            if fresh {
                cache.layers.push((a.keys, a.values));
            } else {
                cache.layers[i] = (a.keys, a.values);
            }
            h = tape.add(h, a.output)?;
            let f_in = block.norm2.apply(tape, store, h, LN_EPS)?;
            let f = block.ffn1.apply(tape, store, f_in)?;
            let f = tape.relu(f);
            let f = block.ffn2.apply(tape, store, f)?;
            h = tape.add(h, f)?;
        }
        cache.len = end;
        self.final_norm.apply(tape, store, h, LN_EPS)
    }
}

/// Digest of the decoder parameters, for freeze checks.
pub fn decoder_digest(store: &ParamStore) -> String {
    store.digest(PARAM_PREFIX)
}

/// True iff the decoder parameters are bitwise unchanged since `digest_before`.
pub fn freeze_check(store: &ParamStore, digest_before: &str) -> bool {
    decoder_digest(store) == digest_before
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GenerationMode {
    /// One step per forward pass, feeding each prediction back in.
    #[default]
    Autoregressive,
    /// All `H * N` values from the final hidden state at once.
    SingleShot,
}

impl std::str::FromStr for GenerationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "autoregressive" => Ok(GenerationMode::Autoregressive),
            "single_shot" | "single-shot" => Ok(GenerationMode::SingleShot),
            o => Err(format!(
                "unknown decoder mode '{o}' (expected autoregressive|single_shot)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenerationConfig {
    pub horizon: usize,
    pub mode: GenerationMode,
}

/// Learned readout from decoder states to forecast values, plus the value
/// embedding used to feed predictions back in autoregressive mode.
#[derive(Clone, Debug)]
pub struct OutputHead {
    pub n_vars: usize,
    pub gen: GenerationConfig,
    proj: LinearParams,
    value_embed: Option<LinearParams>,
}

impl OutputHead {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        n_vars: usize,
        d_lm: usize,
        gen: GenerationConfig,
    ) -> Result<Self> {
        if gen.horizon == 0 {
            return Err(SeedError::Config(vec!["data.horizon must be >= 1".into()]));
        }
        let (proj, value_embed) = match gen.mode {
            GenerationMode::Autoregressive => (
                LinearParams::new(store, rng, "head.out", d_lm, n_vars, false)?,
                Some(LinearParams::new(
                    store,
                    rng,
                    "head.value_embed",
                    n_vars,
                    d_lm,
                    false,
                )?),
            ),
            GenerationMode::SingleShot => (
                LinearParams::new(store, rng, "head.out", d_lm, gen.horizon * n_vars, false)?,
                None,
            ),
        };
        Ok(OutputHead {
            n_vars,
            gen,
            proj,
            value_embed,
        })
    }

    pub fn proj_params(&self) -> LinearParams {
        self.proj
    }

    pub fn value_embed_params(&self) -> Option<LinearParams> {
        self.value_embed
    }

    /// `W_out h + b_out` on `h: [..., d_LM]`.
    pub fn project_output(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        self.proj.apply(tape, store, h)
    }

    /// Forecasts `[B, H, N]` in normalized space.
    pub fn generate<D: LanguageDecoder>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        decoder: &D,
        seq: &SemanticSequence,
    ) -> Result<Var> {
        let mut cache = DecoderCache::default();
        let hidden = decoder.forward_chunk(tape, store, seq.tokens, &mut cache)?;
        let s = tape.shape(hidden).to_vec();
        let (b, len) = (s[0], s[1]);
        let mut last = tape.narrow(hidden, 1, len - 1, 1)?;
        let h = self.gen.horizon;
        match (self.gen.mode, self.value_embed) {
            (GenerationMode::SingleShot, _) => {
                let y = self.project_output(tape, store, last)?;
                tape.reshape(y, &[b, h, self.n_vars])
            }
            (GenerationMode::Autoregressive, Some(embed)) => {
                let mut steps = Vec::with_capacity(h);
                for step in 0..h {
                    let y = self.project_output(tape, store, last)?;
                    steps.push(y);
                    if step + 1 < h {
                        let e = embed.apply(tape, store, y)?;
                        last = decoder.forward_chunk(tape, store, e, &mut cache)?;
                    }
                }
                tape.concat(&steps, 1)
            }
            (GenerationMode::Autoregressive, None) => Err(SeedError::Contract(
                "autoregressive head without value embedding".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_decoder_params_frozen_and_prefixed() {
        let mut store = ParamStore::new();
        FrozenDecoder::new(&mut store, DecoderConfig::default()).unwrap();
        assert!(store
            .iter()
            .all(|(_, p)| p.frozen && p.name.starts_with(PARAM_PREFIX)));
        assert_eq!(
            store.by_name("decoder.embed").unwrap().tensor.shape(),
            &[256, 64]
        );
    }

    #[test]
    fn position_capacity_enforced() {
        let mut store = ParamStore::new();
        let cfg = DecoderConfig {
            d_model: 4,
            heads: 2,
            ffn_dim: 4,
            max_positions: 3,
            ..DecoderConfig::default()
        };
        let dec = FrozenDecoder::new(&mut store, cfg).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 4, 4]));
        let mut cache = DecoderCache::default();
        assert!(matches!(
            dec.forward_chunk(&mut tape, &store, x, &mut cache),
            Err(SeedError::Capacity {
                index: 3,
                capacity: 3
            })
        ));
    }

    #[test]
    fn freeze_check_sensitivity() {
        let mut store = ParamStore::new();
        FrozenDecoder::new(&mut store, DecoderConfig::default()).unwrap();
        let before = decoder_digest(&store);
        assert!(freeze_check(&store, &before));
        let id = store.id_of("decoder.block0.ffn1.w").unwrap();
        store.get_mut(id).tensor.data_mut()[0] += 1e-12;
        assert!(!freeze_check(&store, &before));
    }
}
