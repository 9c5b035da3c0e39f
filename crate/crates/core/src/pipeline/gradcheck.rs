//! Finite-difference gradient checks of each trainable module at toy size.

use crate::data::WindowSample;
use crate::decoder::{DecoderConfig, GenerationConfig, GenerationMode};
use crate::encoder::EncoderConfig;
use crate::error::{Result, SeedError};
use crate::model::{ModelConfig, ReprogConfig, SeedModel};
use crate::numerics::{
    finite_difference_check, max_error, param_gradient_check, ParamCheck, ParamId, SeedRng, Tape,
    Tensor, Var,
};
use crate::patching::PatchConfig;
use crate::reprogramming::{assemble_sequence, TaskId};

pub const GRADCHECK_MODULES: [&str; 6] = [
    "encoder",
    "patching",
    "reprogramming",
    "head",
    "value_embedding",
    "pipeline",
];

const STEP: f64 = 1e-3;
const MAX_COORDS: usize = 24;

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub module: String,
    pub params: Vec<ParamCheck>,
    /// Error with respect to the module input, where checked.
    pub input_error: Option<f64>,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        max_error(&self.params).max(self.input_error.unwrap_or(0.0))
    }
}

/// N=3, L=8, d=4, P=4, d_LM=8, K=3, H=3.
pub fn toy_model(seed: u64, mode: GenerationMode) -> Result<SeedModel> {
    SeedModel::new(ModelConfig {
        encoder: EncoderConfig {
            n_vars: 3,
            seq_len: 8,
            d_model: 4,
            layers: 1,
            heads: 2,
            ffn_dim: 8,
            channels: 2,
        },
        patch: PatchConfig {
            patch_len: 4,
            d_lm: 8,
            max_patches: 4,
        },
        reprog: ReprogConfig {
            prototypes: 3,
            task_len: 2,
            ..ReprogConfig::default()
        },
        decoder: DecoderConfig {
            d_model: 8,
            layers: 1,
            heads: 2,
            ffn_dim: 16,
            max_positions: 32,
            init_seed: seed.wrapping_add(1),
        },
        generation: GenerationConfig { horizon: 3, mode },
        seed,
    })
}

/// `sum(w * out)` with a fixed random `w`, so every output coordinate matters.
fn weighted_sum(tape: &mut Tape, out: Var, w: &Tensor) -> Result<Var> {
    let wv = tape.constant(w.clone());
    let p = tape.mul(out, wv)?;
    Ok(tape.sum(p))
}

fn ids_named(model: &SeedModel, prefixes: &[&str]) -> Vec<ParamId> {
    prefixes.iter().flat_map(|p| model.param_ids(p)).collect()
}

/// Redraws the small-scale embedding-space parameters at unit scale. At their
/// 0.02 init the prototype attention is nearly uniform and upstream gradients
/// shrink below what central differences can resolve.
fn spread_embeddings(model: &mut SeedModel, rng: &mut SeedRng) {
    let ids: Vec<ParamId> = ["reprog.", "patching.pos"]
        .iter()
        .flat_map(|p| model.param_ids(p))
        .collect();
    for id in ids {
        let shape = model.store.get(id).tensor.shape().to_vec();
        model.store.get_mut(id).tensor = rng.normal_tensor(&shape, 1.0);
    }
}

pub fn gradcheck_module(module: &str, seed: u64) -> Result<GradcheckReport> {
    gradcheck_module_with_step(module, seed, STEP)
}

/// As [`gradcheck_module`] with an explicit finite-difference step.
pub fn gradcheck_module_with_step(module: &str, seed: u64, step: f64) -> Result<GradcheckReport> {
    let mut model = toy_model(seed, GenerationMode::Autoregressive)?;
    spread_embeddings(&mut model, &mut SeedRng::new(seed ^ 0x5CA1E));
    let cfg = model.config.clone();
    let (n, l, d_lm) = (cfg.n_vars(), cfg.seq_len(), cfg.patch.d_lm);
    let (b, ch, m) = (2, cfg.encoder.channels, l / cfg.patch.patch_len);
    let mut rng = SeedRng::new(seed ^ 0xC4EC);
    let mut probe = SeedRng::new(seed ^ 0x9E0B);
    let store = &model.store;

    let (params, input_error) = match module {
        "encoder" => {
            let x = rng.normal_tensor(&[b, l, n], 1.0);
            let w = rng.normal_tensor(&[b, n, ch, l], 1.0);
            let f = |t: &mut Tape, xv: Var, s: &crate::numerics::ParamStore| -> Result<Var> {
                let out = model.encoder.encode(t, s, xv)?;
                weighted_sum(t, out, &w)
            };
            let ids = ids_named(&model, &["encoder."]);
            let p = param_gradient_check(
                store,
                &ids,
                |t, s| {
                    let xv = t.constant(x.clone());
                    f(t, xv, s)
                },
                step,
                MAX_COORDS,
                &mut probe,
            )?;
            let e = finite_difference_check(|t, xv| f(t, xv, store), &x, step)?;
            (p, Some(e))
        }
        "patching" => {
            let feats = rng.normal_tensor(&[b, n, ch, l], 1.0);
            let w = rng.normal_tensor(&[b, m, d_lm], 1.0);
            let f = |t: &mut Tape, fv: Var, s: &crate::numerics::ParamStore| -> Result<Var> {
                let out = model.patcher.forward(t, s, fv)?;
                weighted_sum(t, out, &w)
            };
            let ids = ids_named(&model, &["patching."]);
            let p = param_gradient_check(
                store,
                &ids,
                |t, s| {
                    let fv = t.constant(feats.clone());
                    f(t, fv, s)
                },
                step,
                MAX_COORDS,
                &mut probe,
            )?;
            let e = finite_difference_check(|t, fv| f(t, fv, store), &feats, step)?;
            (p, Some(e))
        }
        "reprogramming" => {
            let bank = model
                .prototypes
                .as_ref()
                .ok_or_else(|| SeedError::Contract("toy model has no prototype bank".into()))?;
            let z = rng.normal_tensor(&[b, m, d_lm], 1.0);
            let w = rng.normal_tensor(&[b, cfg.reprog.task_len + m, d_lm], 1.0);
            let f = |t: &mut Tape, zv: Var, s: &crate::numerics::ParamStore| -> Result<Var> {
                let (mixed, _) = bank.reprogram(t, s, zv)?;
                let seq = assemble_sequence(t, s, None, &model.prompts, TaskId::Forecast, mixed)?;
                weighted_sum(t, seq.tokens, &w)
            };
            let ids = vec![bank.id, model.prompts.id(TaskId::Forecast)];
            let p = param_gradient_check(
                store,
                &ids,
                |t, s| {
                    let zv = t.constant(z.clone());
                    f(t, zv, s)
                },
                step,
                MAX_COORDS,
                &mut probe,
            )?;
            let e = finite_difference_check(|t, zv| f(t, zv, store), &z, step)?;
            (p, Some(e))
        }
        "head" => {
            let h = rng.normal_tensor(&[b, 1, d_lm], 1.0);
            let w = rng.normal_tensor(&[b, 1, n], 1.0);
            let f = |t: &mut Tape, hv: Var, s: &crate::numerics::ParamStore| -> Result<Var> {
                let out = model.head.project_output(t, s, hv)?;
                weighted_sum(t, out, &w)
            };
            let ids = ids_named(&model, &["head.out."]);
            let p = param_gradient_check(
                store,
                &ids,
                |t, s| {
                    let hv = t.constant(h.clone());
                    f(t, hv, s)
                },
                step,
                MAX_COORDS,
                &mut probe,
            )?;
            let e = finite_difference_check(|t, hv| f(t, hv, store), &h, step)?;
            (p, Some(e))
        }
        "value_embedding" => {
            let embed = model
                .head
                .value_embed_params()
                .ok_or_else(|| SeedError::Contract("toy model has no value embedding".into()))?;
            let y = rng.normal_tensor(&[b, 1, n], 1.0);
            let w = rng.normal_tensor(&[b, 1, d_lm], 1.0);
            let f = |t: &mut Tape, yv: Var, s: &crate::numerics::ParamStore| -> Result<Var> {
                let out = embed.apply(t, s, yv)?;
                weighted_sum(t, out, &w)
            };
            let ids = ids_named(&model, &["head.value_embed."]);
            let p = param_gradient_check(
                store,
                &ids,
                |t, s| {
                    let yv = t.constant(y.clone());
                    f(t, yv, s)
                },
                step,
                MAX_COORDS,
                &mut probe,
            )?;
            let e = finite_difference_check(|t, yv| f(t, yv, store), &y, step)?;
            (p, Some(e))
        }
        "pipeline" => {
            let h = cfg.horizon();
            let batch: Vec<WindowSample> = (0..b)
                .map(|i| WindowSample {
                    x: rng.normal_tensor(&[l, n], 1.0),
                    y: rng.normal_tensor(&[h, n], 1.0),
                    origin_index: i,
                })
                .collect();
            let refs: Vec<&WindowSample> = batch.iter().collect();
            let ids = store.trainable_ids();
            let p = param_gradient_check(
                store,
                &ids,
                |t, s| model.loss_with(t, s, &refs),
                step,
                MAX_COORDS,
                &mut probe,
            )?;
            (p, None)
        }
        other => {
            return Err(SeedError::Config(vec![format!(
                "unknown gradcheck module '{other}' (expected one of {})",
                GRADCHECK_MODULES.join(", ")
            )]))
        }
    };
    Ok(GradcheckReport {
        module: module.to_string(),
        params,
        input_error,
    })
}
