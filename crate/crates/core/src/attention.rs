//! Scaled dot-product multi-head attention shared by the encoder and decoder.

use crate::error::{Result, SeedError};
use crate::numerics::{LinearParams, ParamStore, SeedRng, Tape, Var};

/// Query/key/value/output projections of one attention block. The key
/// projection has no bias: it would shift every score of a query row equally.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub q: LinearParams,
    pub k: LinearParams,
    pub v: LinearParams,
    pub o: LinearParams,
    pub heads: usize,
}

/// Output of one attention call.
pub struct AttentionOutput {
    /// `[B, Sq, d]`
    pub output: Var,
    /// `[B, heads, Sq, Sk]`, rows sum to one.
    pub weights: Var,
    /// Projected keys/values, `[B, heads, Sk, d_head]`, for incremental decoding.
    pub keys: Var,
    pub values: Var,
}

impl AttentionParams {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        prefix: &str,
        d: usize,
        heads: usize,
        frozen: bool,
    ) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(SeedError::Config(vec![format!(
                "{prefix}: model width {d} not divisible by {heads} heads"
            )]));
        }
        Ok(AttentionParams {
            q: LinearParams::new(store, rng, &format!("{prefix}.wq"), d, d, frozen)?,
            k: LinearParams::new_unbiased(store, rng, &format!("{prefix}.wk"), d, d, frozen)?,
            v: LinearParams::new(store, rng, &format!("{prefix}.wv"), d, d, frozen)?,
            o: LinearParams::new(store, rng, &format!("{prefix}.wo"), d, d, frozen)?,
            heads,
        })
    }

    /// `[B, S, d] -> [B, heads, S, d/heads]`
    fn split_heads(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let (b, n, d) = (s[0], s[1], s[2]);
        let r = tape.reshape(x, &[b, n, self.heads, d / self.heads])?;
        tape.permute(r, &[0, 2, 1, 3])
    }

    /// Self-attention over axis 1 of `x: [B, S, d]`, optionally extending
    /// cached keys/values from earlier positions. With `causal`, query `i`
    /// only attends to keys at or before its own absolute position.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        cache: Option<(Var, Var)>,
        causal: bool,
    ) -> Result<AttentionOutput> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(SeedError::shape("attention input", &shape, &[3]));
        }
        let (b, sq, d) = (shape[0], shape[1], shape[2]);
        let q = self.q.apply(tape, store, x)?;
        let k = self.k.apply(tape, store, x)?;
        let v = self.v.apply(tape, store, x)?;
        let q = self.split_heads(tape, q)?;
        let mut k = self.split_heads(tape, k)?;
        let mut v = self.split_heads(tape, v)?;
        if let Some((kc, vc)) = cache {
            k = tape.concat(&[kc, k], 2)?;
            v = tape.concat(&[vc, v], 2)?;
        }
        let scores = tape.matmul_ex(q, k, true)?;
        let scores = tape.scale(scores, 1.0 / ((d / self.heads) as f64).sqrt());
        let weights = if causal {
            tape.causal_softmax(scores)?
        } else {
            tape.softmax(scores, 3)?
        };
        let ctx = tape.matmul(weights, v)?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[b, sq, d])?;
        let output = self.o.apply(tape, store, ctx)?;
        Ok(AttentionOutput {
            output,
            weights,
            keys: k,
            values: v,
        })
    }
}
