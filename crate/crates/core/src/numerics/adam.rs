use super::param::{ParamId, ParamStore};
use crate::error::{Result, SeedError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every non-frozen parameter of one store.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub config: AdamConfig,
    slots: Vec<(ParamId, Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let slots = store
            .iter()
            .filter(|(_, p)| !p.frozen)
            .map(|(id, p)| (id, vec![0.0; p.tensor.numel()], vec![0.0; p.tensor.numel()]))
            .collect();
        AdamState {
            step: 0,
            config,
            slots,
        }
    }

    pub fn tracked(&self) -> usize {
        self.slots.len()
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&[f64]> {
        self.slots
            .iter()
            .find(|s| s.0 == id)
            .map(|s| s.1.as_slice())
    }
}

/// One bias-corrected Adam update of every non-frozen parameter.
///
/// Frozen parameters are never written, whatever their gradient holds.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    for (id, _, _) in &state.slots {
        let p = store.get(*id);
        if p.frozen {
            return Err(SeedError::Contract(format!(
                "parameter '{}' became frozen after optimizer setup",
                p.name
            )));
        }
        if p.tensor.grad.is_none() {
            return Err(SeedError::Contract(format!(
                "missing gradient for '{}'",
                p.name
            )));
        }
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (id, m, v) in &mut state.slots {
        let p = store.get_mut(*id);
        let grad = p.tensor.grad.take().expect("checked above");
        for (((w, g), mi), vi) in p
            .tensor
            .data_mut()
            .iter_mut()
            .zip(&grad)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * g;
            *vi = beta2 * *vi + (1.0 - beta2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p.tensor.grad = Some(grad);
    }
    Ok(())
}
