//! Named, optionally frozen model parameters.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::tape::Tape;
use super::tensor::Tensor;
use crate::error::{Result, SeedError};

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub frozen: bool,
}

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Owns every parameter of a model, keyed by unique dotted names.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor,
        frozen: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(SeedError::Contract(format!(
                "duplicate parameter name '{name}'"
            )));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            tensor: tensor.with_grad(),
            frozen,
        });
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id_of(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| !p.frozen)
            .map(|(id, _)| id)
            .collect()
    }

    /// Scalar counts of (trainable, frozen) parameters.
    pub fn counts(&self) -> (usize, usize) {
        self.params.iter().fold((0, 0), |(t, f), p| {
            if p.frozen {
                (t, f + p.tensor.numel())
            } else {
                (t + p.tensor.numel(), f)
            }
        })
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.grad = None;
        }
    }

    /// Adds the gradients recorded on `tape` for bound, non-frozen parameters.
    pub fn accumulate_grads(&mut self, tape: &Tape) {
        for (id, var) in tape.bound_params() {
            let param = &mut self.params[id.0];
            if param.frozen {
                continue;
            }
            if let Some(g) = tape.grad(var) {
                match &mut param.tensor.grad {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    None => param.tensor.grad = Some(g.to_vec()),
                }
            }
        }
    }

    /// Gives every trainable parameter without a gradient an explicit zero
    /// one, e.g. prompts of tasks the current loss does not use.
    pub fn fill_missing_grads(&mut self) {
        for p in self
            .params
            .iter_mut()
            .filter(|p| !p.frozen && p.tensor.grad.is_none())
        {
            p.tensor.grad = Some(vec![0.0; p.tensor.numel()]);
        }
    }

    /// Copies of all parameter data, in id order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params
            .iter()
            .map(|p| p.tensor.data().to_vec())
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        assert_eq!(snapshot.len(), self.params.len(), "snapshot arity");
        for (p, s) in self.params.iter_mut().zip(snapshot) {
            p.tensor.data_mut().copy_from_slice(s);
        }
    }

    /// SHA-256 over names, shapes, frozen flags and raw bits of every parameter
    /// whose name starts with `prefix`.
    pub fn digest(&self, prefix: &str) -> String {
        let mut hasher = Sha256::new();
        for p in self.params.iter().filter(|p| p.name.starts_with(prefix)) {
            hasher.update((p.name.len() as u64).to_le_bytes());
            hasher.update(p.name.as_bytes());
            for &e in p.tensor.shape() {
                hasher.update((e as u64).to_le_bytes());
            }
            hasher.update([p.frozen as u8]);
            for v in p.tensor.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}
