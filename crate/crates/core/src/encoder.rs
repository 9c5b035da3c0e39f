//! Variable-token structural encoder.
//!
//! Each variable's full trajectory is one token. A shared linear map takes the
//! `L` time steps of a variable to a `d`-dimensional token, a stack of post-norm
//! attention layers mixes information across variables, and a second shared
//! linear map unfolds each token back to `D` feature channels over `L` steps.
//!
//! The unfold step reconciles a shape gap: the attention stack produces
//! `[N, d]`, while patching consumes a temporal feature map `[N, D, L]`.
//! There is no positional signal over variables, so the stack is
//! permutation-equivariant in the variable axis.

use crate::attention::AttentionParams;
use crate::error::{Result, SeedError};
use crate::numerics::{LinearParams, NormParams, ParamStore, SeedRng, Tape, Var, LN_EPS};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub n_vars: usize,
    pub seq_len: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Feature channels per variable after unfolding (`D`).
    pub channels: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("encoder.n_vars", self.n_vars),
            ("data.seq_len", self.seq_len),
            ("encoder.d", self.d_model),
            ("encoder.heads", self.heads),
            ("encoder.ffn_dim", self.ffn_dim),
            ("encoder.channels", self.channels),
        ] {
            if v == 0 {
                errs.push(format!("{name} must be >= 1"));
            }
        }
        if self.heads > 0 && !self.d_model.is_multiple_of(self.heads) {
            errs.push(format!(
                "encoder.d = {} is not divisible by encoder.heads = {}",
                self.d_model, self.heads
            ));
        }
        errs
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn: AttentionParams,
    norm1: NormParams,
    ffn1: LinearParams,
    ffn2: LinearParams,
    norm2: NormParams,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    phi: LinearParams,
    layers: Vec<EncoderLayer>,
    unfold: LinearParams,
}

/// Result of one attention layer, with its attention matrix exposed.
pub struct LayerTrace {
    pub output: Var,
    /// `[B, heads, N, N]`
    pub attention: Var,
}

impl Encoder {
    /// Registers parameters under `encoder.` with fan-in uniform init.
    pub fn new(store: &mut ParamStore, rng: &mut SeedRng, config: EncoderConfig) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(SeedError::Config(errs));
        }
        let EncoderConfig {
            seq_len: l,
            d_model: d,
            ffn_dim,
            channels,
            ..
        } = config;
        let phi = LinearParams::new(store, rng, "encoder.phi", l, d, false)?;
        let layers = (0..config.layers)
            .map(|i| {
                let p = format!("encoder.layer{i}");
                Ok(EncoderLayer {
                    attn: AttentionParams::new(
                        store,
                        rng,
                        &format!("{p}.attn"),
                        d,
                        config.heads,
                        false,
                    )?,
                    norm1: NormParams::new(store, &format!("{p}.norm1"), d, false)?,
                    ffn1: LinearParams::new(store, rng, &format!("{p}.ffn1"), d, ffn_dim, false)?,
                    ffn2: LinearParams::new(store, rng, &format!("{p}.ffn2"), ffn_dim, d, false)?,
                    norm2: NormParams::new(store, &format!("{p}.norm2"), d, false)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let unfold = LinearParams::new(store, rng, "encoder.unfold", d, channels * l, false)?;
        Ok(Encoder {
            config,
            phi,
            layers,
            unfold,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `[B, N, L] -> [B, N, d]`, the same map applied to every variable row.
    pub fn temporal_project(&self, tape: &mut Tape, store: &ParamStore, x_t: Var) -> Result<Var> {
        let s = tape.shape(x_t);
        if s.last() != Some(&self.config.seq_len) {
            return Err(SeedError::shape(
                "temporal_project",
                s,
                &[self.config.n_vars, self.config.seq_len],
            ));
        }
        self.phi.apply(tape, store, x_t)
    }

    /// `T <- LN(T + MHA(T))`, then `T <- LN(T + FFN(T))`, attending over variables.
    pub fn attention_layer(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        layer: usize,
        tokens: Var,
    ) -> Result<LayerTrace> {
        let p = &self.layers[layer];
        let a = p.attn.forward(tape, store, tokens, None, false)?;
        let h = tape.add(tokens, a.output)?;
        let h = p.norm1.apply(tape, store, h, LN_EPS)?;
        let f = p.ffn1.apply(tape, store, h)?;
        let f = tape.relu(f);
        let f = p.ffn2.apply(tape, store, f)?;
        let out = tape.add(h, f)?;
        let out = p.norm2.apply(tape, store, out, LN_EPS)?;
        Ok(LayerTrace {
            output: out,
            attention: a.weights,
        })
    }

    /// `[B, N, d] -> [B, N, D, L]`
    pub fn temporal_unfold(&self, tape: &mut Tape, store: &ParamStore, tokens: Var) -> Result<Var> {
        let s = tape.shape(tokens).to_vec();
        let u = self.unfold.apply(tape, store, tokens)?;
        tape.reshape(u, &[s[0], s[1], self.config.channels, self.config.seq_len])
    }

    /// Token matrix after the attention stack, plus each layer's attention.
    pub fn encode_tokens(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let s = tape.shape(x).to_vec();
        if s.len() != 3 || s[1] != self.config.seq_len || s[2] != self.config.n_vars {
            return Err(SeedError::shape(
                "encode",
                &s,
                &[self.config.seq_len, self.config.n_vars],
            ));
        }
        let xt = tape.permute(x, &[0, 2, 1])?;
        let mut t = self.temporal_project(tape, store, xt)?;
        let mut maps = Vec::with_capacity(self.layers.len());
        for l in 0..self.layers.len() {
            let trace = self.attention_layer(tape, store, l, t)?;
            t = trace.output;
            maps.push(trace.attention);
        }
        Ok((t, maps))
    }

    /// `[B, L, N] -> [B, N, D, L]`
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (t, _) = self.encode_tokens(tape, store, x)?;
        self.temporal_unfold(tape, store, t)
    }

    pub fn unfold_params(&self) -> LinearParams {
        self.unfold
    }

    pub fn phi_params(&self) -> LinearParams {
        self.phi
    }
}
