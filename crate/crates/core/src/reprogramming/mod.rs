//! Semantic reprogramming: patch tokens become convex mixtures of learned
//! prototypes, and the decoder input is assembled as
//! `[text prompt][task prompt][reprogrammed patches]`.

mod prompt;

use std::collections::BTreeMap;

pub use prompt::{
    autocorrelation, build_text_prompt, embed_text, window_stats, PromptStats, PromptTemplate,
    TextPromptSpec, DEFAULT_TEMPLATE, PLACEHOLDERS,
};

use crate::error::{Result, SeedError};
use crate::numerics::{ParamId, ParamStore, SeedRng, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PrototypeInit {
    #[default]
    Random,
    /// Rows sampled from the decoder's byte embedding table.
    Vocab,
}

impl std::str::FromStr for PrototypeInit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(PrototypeInit::Random),
            "vocab" => Ok(PrototypeInit::Vocab),
            o => Err(format!(
                "unknown prototype init '{o}' (expected random|vocab)"
            )),
        }
    }
}

/// `K` learnable anchors in the decoder embedding space.
#[derive(Clone, Debug)]
pub struct PrototypeBank {
    pub id: ParamId,
    pub k: usize,
    pub d_lm: usize,
}

impl PrototypeBank {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        k: usize,
        d_lm: usize,
        init: PrototypeInit,
        vocab: Option<&Tensor>,
    ) -> Result<Self> {
        if k == 0 {
            return Err(SeedError::Config(vec![
                "reprog.prototypes must be >= 1".into()
            ]));
        }
        let t = match (init, vocab) {
            (PrototypeInit::Vocab, Some(table)) => {
                let rows = table.shape()[0];
                let mut data = Vec::with_capacity(k * d_lm);
                for _ in 0..k {
                    data.extend_from_slice(table.row(rng.below(rows)));
                }
                Tensor::new(&[k, d_lm], data)?
            }
            (PrototypeInit::Vocab, None) => {
                return Err(SeedError::Contract(
                    "vocab prototype init needs an embedding table".into(),
                ))
            }
            (PrototypeInit::Random, _) => rng.normal_tensor(&[k, d_lm], 0.02),
        };
        let id = store.add("reprog.prototypes", t, false)?;
        Ok(PrototypeBank { id, k, d_lm })
    }

    /// `alpha[b, i, k] = softmax_k(z_i . p_k / sqrt(d_LM))` for `z: [B, M, d_LM]`.
    pub fn attention(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        let s = tape.shape(z);
        if s.last() != Some(&self.d_lm) {
            return Err(SeedError::shape(
                "prototype_attention",
                s,
                &[self.k, self.d_lm],
            ));
        }
        let axis = s.len() - 1;
        let protos = tape.param(store, self.id);
        let logits = tape.matmul_ex(z, protos, true)?;
        let logits = tape.scale(logits, 1.0 / (self.d_lm as f64).sqrt());
        tape.softmax(logits, axis)
    }

    /// `z_tilde_i = sum_k alpha_ik p_k`; returns `(z_tilde, alpha)`.
    pub fn reprogram(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<(Var, Var)> {
        let alpha = self.attention(tape, store, z)?;
        let protos = tape.param(store, self.id);
        let mixed = tape.matmul(alpha, protos)?;
        Ok((mixed, alpha))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskId {
    Forecast,
    Imputation,
    Anomaly,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::Forecast, TaskId::Imputation, TaskId::Anomaly];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Forecast => "forecast",
            TaskId::Imputation => "imputation",
            TaskId::Anomaly => "anomaly",
        }
    }
}

impl std::str::FromStr for TaskId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown task '{s}' (expected forecast|imputation|anomaly)"))
    }
}

/// One learned `[L_task, d_LM]` soft prompt per task.
#[derive(Clone, Debug)]
pub struct TaskPromptBank {
    prompts: BTreeMap<TaskId, ParamId>,
    pub len: usize,
}

impl TaskPromptBank {
    pub fn new(store: &mut ParamStore, rng: &mut SeedRng, len: usize, d_lm: usize) -> Result<Self> {
        if len == 0 {
            return Err(SeedError::Config(vec![
                "reprog.task_len must be >= 1".into()
            ]));
        }
        let mut prompts = BTreeMap::new();
        for task in TaskId::ALL {
            let id = store.add(
                format!("reprog.task.{}", task.name()),
                rng.normal_tensor(&[len, d_lm], 0.02),
                false,
            )?;
            prompts.insert(task, id);
        }
        Ok(TaskPromptBank { prompts, len })
    }

    pub fn id(&self, task: TaskId) -> ParamId {
        self.prompts[&task]
    }
}

/// Segment lengths of an assembled decoder input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegmentMarks {
    pub text: usize,
    pub task: usize,
    pub patches: usize,
}

impl SegmentMarks {
    pub fn total(&self) -> usize {
        self.text + self.task + self.patches
    }
}

/// `[B, text + task + M, d_LM]` decoder input.
#[derive(Clone, Copy, Debug)]
pub struct SemanticSequence {
    pub tokens: Var,
    pub marks: SegmentMarks,
}

/// Concatenates `[text][task prompt][patches]` along the sequence axis.
/// `text` is a constant, either `[L_text, d]` shared by the batch or
/// `[B, L_text, d]` per sample; `patches` is `[B, M, d]`.
pub fn assemble_sequence(
    tape: &mut Tape,
    store: &ParamStore,
    text: Option<&Tensor>,
    prompts: &TaskPromptBank,
    task: TaskId,
    patches: Var,
) -> Result<SemanticSequence> {
    let ps = tape.shape(patches).to_vec();
    if ps.len() != 3 {
        return Err(SeedError::shape("assemble_sequence", &ps, &[3]));
    }
    let (b, m, d) = (ps[0], ps[1], ps[2]);
    let mut parts = Vec::with_capacity(3);
    let mut text_len = 0;
    if let Some(t) = text {
        let ts = t.shape();
        let per_sample = ts.len() == 3 && ts[0] == b;
        if ts[ts.len() - 1] != d || !(ts.len() == 2 || per_sample) {
            return Err(SeedError::shape("assemble_sequence text", ts, &ps));
        }
        text_len = ts[ts.len() - 2];
        let tv = tape.constant(t.clone());
        parts.push(if per_sample {
            tv
        } else {
            tape.broadcast_to(tv, &[b, text_len, d])?
        });
    }
    let pv = tape.param(store, prompts.id(task));
    let pshape = tape.shape(pv).to_vec();
    if pshape[1] != d {
        return Err(SeedError::shape("assemble_sequence task", &pshape, &ps));
    }
    parts.push(tape.broadcast_to(pv, &[b, pshape[0], d])?);
    parts.push(patches);
    let tokens = tape.concat(&parts, 1)?;
    Ok(SemanticSequence {
        tokens,
        marks: SegmentMarks {
            text: text_len,
            task: pshape[0],
            patches: m,
        },
    })
}
