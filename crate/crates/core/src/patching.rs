//! Patch projection into the decoder embedding space.
//!
//! The encoder feature map `[N, D, L]` is laid out time-major as `[L, N*D]`
//! (variable-major, channel-minor within a row), cut into `floor(L / P)`
//! non-overlapping patches of `P` rows, and each patch is flattened in
//! time, variable, channel order before an affine map to `d_LM`. A learned
//! positional row is then added per patch index. Trailing `L mod P` rows are
//! dropped.

use crate::error::{Result, SeedError};
use crate::numerics::{LinearParams, ParamId, ParamStore, SeedRng, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct PatchConfig {
    pub patch_len: usize,
    pub d_lm: usize,
    pub max_patches: usize,
}

impl PatchConfig {
    pub fn validate(&self, seq_len: usize) -> Vec<String> {
        let mut errs = Vec::new();
        if self.patch_len == 0 {
            errs.push("patch.len must be >= 1".into());
        } else {
            if seq_len < self.patch_len {
                errs.push(format!(
                    "data.seq_len = {seq_len} is shorter than patch.len = {}",
                    self.patch_len
                ));
            }
            if self.max_patches < seq_len / self.patch_len {
                errs.push(format!(
                    "patch.max_patches = {} < floor(L/P) = {}",
                    self.max_patches,
                    seq_len / self.patch_len
                ));
            }
        }
        if self.d_lm == 0 {
            errs.push("decoder.d_model must be >= 1".into());
        }
        errs
    }
}

/// Number of patches cut from a window of `seq_len` steps.
pub fn patch_count(seq_len: usize, patch_len: usize) -> usize {
    seq_len / patch_len
}

#[derive(Clone, Debug)]
pub struct PatchProjector {
    pub config: PatchConfig,
    /// `N * D`, the width of one time row.
    pub row_width: usize,
    proj: LinearParams,
    positions: ParamId,
}

impl PatchProjector {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        config: PatchConfig,
        row_width: usize,
    ) -> Result<Self> {
        let proj = LinearParams::new(
            store,
            rng,
            "patching.proj",
            config.patch_len * row_width,
            config.d_lm,
            false,
        )?;
        let positions = store.add(
            "patching.pos",
            rng.normal_tensor(&[config.max_patches, config.d_lm], 0.02),
            false,
        )?;
        Ok(PatchProjector {
            config,
            row_width,
            proj,
            positions,
        })
    }

    pub fn proj_params(&self) -> LinearParams {
        self.proj
    }

    pub fn positions(&self) -> ParamId {
        self.positions
    }

    /// `[B, L, N*D] -> [B, M, P, N*D]`
    pub fn segment_patches(&self, tape: &mut Tape, e: Var) -> Result<Var> {
        segment_patches(tape, e, self.config.patch_len)
    }

    /// `[B, M, P, N*D] -> [B, M, d_LM]`
    pub fn project(&self, tape: &mut Tape, store: &ParamStore, patches: Var) -> Result<Var> {
        let s = tape.shape(patches).to_vec();
        if s.len() != 4 || s[2] * s[3] != self.config.patch_len * self.row_width {
            return Err(SeedError::shape(
                "project_patch",
                &s,
                &[self.config.patch_len, self.row_width],
            ));
        }
        let flat = tape.reshape(patches, &[s[0], s[1], s[2] * s[3]])?;
        self.proj.apply(tape, store, flat)
    }

    /// Adds positional rows `0..M` to `z: [B, M, d_LM]`.
    pub fn add_positional(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        let m = tape.shape(z)[1];
        if m > self.config.max_patches {
            return Err(SeedError::Capacity {
                index: m - 1,
                capacity: self.config.max_patches,
            });
        }
        let table = tape.param(store, self.positions);
        let rows = tape.narrow(table, 0, 0, m)?;
        tape.add(z, rows)
    }

    /// Full chain from encoder features `[B, N, D, L]` to tokens `[B, M, d_LM]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, features: Var) -> Result<Var> {
        let e = reshape_features(tape, features)?;
        let p = self.segment_patches(tape, e)?;
        let z = self.project(tape, store, p)?;
        self.add_positional(tape, store, z)
    }
}

/// `[B, N, D, L] -> [B, L, N*D]`; row `t` lists variable 0's channels, then
/// variable 1's, and so on.
pub fn reshape_features(tape: &mut Tape, features: Var) -> Result<Var> {
    let s = tape.shape(features).to_vec();
    if s.len() != 4 {
        return Err(SeedError::shape("reshape_features", &s, &[4]));
    }
    let p = tape.permute(features, &[0, 3, 1, 2])?;
    tape.reshape(p, &[s[0], s[3], s[1] * s[2]])
}

/// Inverse of [`reshape_features`] on a plain `[L, N*D]` tensor.
pub fn unreshape_features(e: &Tensor, n_vars: usize, channels: usize) -> Result<Tensor> {
    let l = e.shape()[0];
    e.reshape(&[l, n_vars, channels])?.permute(&[1, 2, 0])
}

/// `[B, L, C] -> [B, floor(L/P), P, C]`
pub fn segment_patches(tape: &mut Tape, e: Var, patch_len: usize) -> Result<Var> {
    let s = tape.shape(e).to_vec();
    if s.len() != 3 {
        return Err(SeedError::shape("segment_patches", &s, &[3]));
    }
    let (b, l, c) = (s[0], s[1], s[2]);
    if patch_len == 0 || l < patch_len {
        return Err(SeedError::EmptyWindow {
            len: l,
            patch: patch_len,
        });
    }
    let m = patch_count(l, patch_len);
    let kept = if m * patch_len == l {
        e
    } else {
        tape.narrow(e, 1, 0, m * patch_len)?
    };
    tape.reshape(kept, &[b, m, patch_len, c])
}
