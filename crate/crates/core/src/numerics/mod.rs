//! Dense tensors, reverse-mode differentiation, Adam, and gradient checking.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod param;
mod rng;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{
    central_difference, finite_difference_check, max_error, param_gradient_check, relative_error,
    ParamCheck,
};
pub use param::{ParamId, ParamStore, Parameter};
pub use rng::SeedRng;
pub use tape::{softmax_along, Tape, Var};
pub use tensor::{broadcast_shapes, strides, Tensor};

/// Fan-in scaled uniform init: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_uniform(rng: &mut SeedRng, shape: &[usize], fan_in: usize) -> Tensor {
    rng.uniform_tensor(shape, 1.0 / (fan_in as f64).sqrt())
}

/// Registers a `[out, in]` weight and `[out]` bias under `prefix.w` / `prefix.b`.
pub fn add_linear(
    store: &mut ParamStore,
    rng: &mut SeedRng,
    prefix: &str,
    n_in: usize,
    n_out: usize,
    frozen: bool,
) -> crate::error::Result<(ParamId, ParamId)> {
    let w = store.add(
        format!("{prefix}.w"),
        init_uniform(rng, &[n_out, n_in], n_in),
        frozen,
    )?;
    let b = store.add(
        format!("{prefix}.b"),
        init_uniform(rng, &[n_out], n_in),
        frozen,
    )?;
    Ok((w, b))
}

/// Handles of a LayerNorm's affine parameters.
#[derive(Clone, Copy, Debug)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl NormParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        n: usize,
        frozen: bool,
    ) -> crate::error::Result<Self> {
        Ok(NormParams {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::full(&[n], 1.0), frozen)?,
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[n]), frozen)?,
        })
    }

    /// LayerNorm over the last axis of `x`.
    pub fn apply(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        eps: f64,
    ) -> crate::error::Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        let axis = tape.shape(x).len() - 1;
        tape.layer_norm(x, g, b, axis, eps)
    }
}

/// Handles of an affine map.
#[derive(Clone, Copy, Debug)]
pub struct LinearParams {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl LinearParams {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        prefix: &str,
        n_in: usize,
        n_out: usize,
        frozen: bool,
    ) -> crate::error::Result<Self> {
        let (w, b) = add_linear(store, rng, prefix, n_in, n_out, frozen)?;
        Ok(LinearParams { w, b: Some(b) })
    }

    /// Weight only, registered as `prefix.w`.
    pub fn new_unbiased(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        prefix: &str,
        n_in: usize,
        n_out: usize,
        frozen: bool,
    ) -> crate::error::Result<Self> {
        let w = store.add(
            format!("{prefix}.w"),
            init_uniform(rng, &[n_out, n_in], n_in),
            frozen,
        )?;
        Ok(LinearParams { w, b: None })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> crate::error::Result<Var> {
        let w = tape.param(store, self.w);
        let b = self.b.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }
}

pub const LN_EPS: f64 = 1e-5;
