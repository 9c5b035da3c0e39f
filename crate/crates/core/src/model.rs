//! The assembled forecaster: encoder, patch projection, reprogramming,
//! frozen decoder, and output head over one parameter store.

use std::collections::BTreeMap;

use crate::data::{NormStats, WindowSample};
use crate::decoder::{
    DecoderConfig, FrozenDecoder, GenerationConfig, GenerationMode, LanguageDecoder, OutputHead,
};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Result, SeedError};
use crate::numerics::checkpoint::{Checkpoint, Entry};
use crate::numerics::{ParamId, ParamStore, SeedRng, Tape, Tensor, Var};
use crate::patching::{patch_count, PatchConfig, PatchProjector};
use crate::reprogramming::{
    assemble_sequence, build_text_prompt, embed_text, PromptTemplate, PrototypeBank, PrototypeInit,
    TaskId, TaskPromptBank,
};

/// Rendered-statistics text prompt prepended to every sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TextPromptConfig {
    pub template: PromptTemplate,
    pub domain: String,
    pub instruction: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReprogConfig {
    /// When false, patch tokens go to the decoder unchanged.
    pub enabled: bool,
    pub prototypes: usize,
    pub task_len: usize,
    pub init: PrototypeInit,
    pub task: TaskId,
    pub text: Option<TextPromptConfig>,
}

impl Default for ReprogConfig {
    fn default() -> Self {
        ReprogConfig {
            enabled: true,
            prototypes: 8,
            task_len: 4,
            init: PrototypeInit::Random,
            task: TaskId::Forecast,
            text: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub patch: PatchConfig,
    pub reprog: ReprogConfig,
    pub decoder: DecoderConfig,
    pub generation: GenerationConfig,
    pub seed: u64,
}

impl ModelConfig {
    pub fn n_vars(&self) -> usize {
        self.encoder.n_vars
    }

    pub fn seq_len(&self) -> usize {
        self.encoder.seq_len
    }

    pub fn horizon(&self) -> usize {
        self.generation.horizon
    }

    /// Every cross-module consistency violation, empty when valid.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.encoder.validate();
        errs.extend(self.patch.validate(self.encoder.seq_len));
        errs.extend(self.decoder.validate());
        if self.patch.d_lm != self.decoder.d_model {
            errs.push(format!(
                "patch d_LM = {} differs from decoder.d_model = {}",
                self.patch.d_lm, self.decoder.d_model
            ));
        }
        if self.reprog.prototypes == 0 {
            errs.push("reprog.prototypes must be >= 1".into());
        }
        if self.reprog.task_len == 0 {
            errs.push("reprog.task_len must be >= 1".into());
        }
        if self.generation.horizon == 0 {
            errs.push("data.horizon must be >= 1".into());
        }
        if self.patch.patch_len > 0 {
            let m = patch_count(self.encoder.seq_len, self.patch.patch_len);
            let prefix = self.reprog.task_len + m;
            let needed = match self.generation.mode {
                GenerationMode::Autoregressive => prefix + self.generation.horizon - 1,
                GenerationMode::SingleShot => prefix,
            };
            if self.reprog.text.is_none() && needed > self.decoder.max_positions {
                errs.push(format!(
                    "decoder.max_positions = {} is below the {needed} positions a forecast needs",
                    self.decoder.max_positions
                ));
            }
        }
        errs
    }
}

/// A forward pass over a group of samples sharing one text-prompt length.
pub struct GroupPrediction {
    /// Positions of the group's samples in the input batch.
    pub indices: Vec<usize>,
    /// `[B_group, H, N]`
    pub yhat: Var,
}

#[derive(Clone, Debug)]
pub struct SeedModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub patcher: PatchProjector,
    pub prototypes: Option<PrototypeBank>,
    pub prompts: TaskPromptBank,
    pub decoder: FrozenDecoder,
    pub head: OutputHead,
}

impl SeedModel {
    /// Builds and initializes every module. The decoder draws from its own
    /// `init_seed`; everything else from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(SeedError::Config(errs));
        }
        let mut store = ParamStore::new();
        let decoder = FrozenDecoder::new(&mut store, config.decoder.clone())?;
        let mut rng = SeedRng::new(config.seed);
        let encoder = Encoder::new(&mut store, &mut rng, config.encoder.clone())?;
        let row_width = config.encoder.n_vars * config.encoder.channels;
        let patcher = PatchProjector::new(&mut store, &mut rng, config.patch.clone(), row_width)?;
        let prototypes = if config.reprog.enabled {
            let vocab = decoder.embedding_table(&store).clone();
            Some(PrototypeBank::new(
                &mut store,
                &mut rng,
                config.reprog.prototypes,
                config.patch.d_lm,
                config.reprog.init,
                Some(&vocab),
            )?)
        } else {
            None
        };
        let prompts = TaskPromptBank::new(
            &mut store,
            &mut rng,
            config.reprog.task_len,
            config.patch.d_lm,
        )?;
        let head = OutputHead::new(
            &mut store,
            &mut rng,
            config.encoder.n_vars,
            config.patch.d_lm,
            config.generation,
        )?;
        Ok(SeedModel {
            config,
            store,
            encoder,
            patcher,
            prototypes,
            prompts,
            decoder,
            head,
        })
    }

    pub fn param_ids(&self, prefix: &str) -> Vec<ParamId> {
        self.store
            .iter()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .map(|(id, _)| id)
            .collect()
    }

    /// Forward pass for windows `xs` (each `[L, N]`), grouped by text-prompt
    /// length so each group runs as one batch.
    pub fn forward(&self, tape: &mut Tape, xs: &[&Tensor]) -> Result<Vec<GroupPrediction>> {
        self.forward_with(tape, &self.store, xs)
    }

    /// As [`forward`](Self::forward) but reading parameters from `store`,
    /// which must share this model's layout.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        xs: &[&Tensor],
    ) -> Result<Vec<GroupPrediction>> {
        let (l, n) = (self.config.seq_len(), self.config.n_vars());
        for x in xs {
            if x.shape() != [l, n] {
                return Err(SeedError::shape("forward window", x.shape(), &[l, n]));
            }
        }
        let Some(text_cfg) = &self.config.reprog.text else {
            let yhat = self.forward_group(tape, store, xs, None)?;
            return Ok(vec![GroupPrediction {
                indices: (0..xs.len()).collect(),
                yhat,
            }]);
        };
        let table = self.decoder.embedding_table(store);
        let mut groups: BTreeMap<usize, (Vec<usize>, Vec<Tensor>)> = BTreeMap::new();
        for (i, x) in xs.iter().enumerate() {
            let prompt = build_text_prompt(
                x,
                &text_cfg.domain,
                &text_cfg.instruction,
                &text_cfg.template,
            );
            let emb = embed_text(&prompt.rendered, table);
            let len = emb.as_ref().map_or(0, |e| e.shape()[0]);
            let g = groups.entry(len).or_default();
            g.0.push(i);
            if let Some(e) = emb {
                g.1.push(e);
            }
        }
        let d = self.config.patch.d_lm;
        let mut out = Vec::with_capacity(groups.len());
        for (len, (indices, embs)) in groups {
            let members: Vec<&Tensor> = indices.iter().map(|&i| xs[i]).collect();
            let text = if len == 0 {
                None
            } else {
                let data = embs.iter().flat_map(|e| e.data().iter().copied()).collect();
                Some(Tensor::new(&[indices.len(), len, d], data)?)
            };
            let yhat = self.forward_group(tape, store, &members, text.as_ref())?;
            out.push(GroupPrediction { indices, yhat });
        }
        Ok(out)
    }

    fn forward_group(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        xs: &[&Tensor],
        text: Option<&Tensor>,
    ) -> Result<Var> {
        let (l, n) = (self.config.seq_len(), self.config.n_vars());
        let data: Vec<f64> = xs.iter().flat_map(|x| x.data().iter().copied()).collect();
        let x = tape.constant(Tensor::new(&[xs.len(), l, n], data)?);
        let features = self.encoder.encode(tape, store, x)?;
        let z = self.patcher.forward(tape, store, features)?;
        let tokens = match &self.prototypes {
            Some(bank) => bank.reprogram(tape, store, z)?.0,
            None => z,
        };
        let seq = assemble_sequence(
            tape,
            store,
            text,
            &self.prompts,
            self.config.reprog.task,
            tokens,
        )?;
        self.head.generate(tape, store, &self.decoder, &seq)
    }

    /// Mean squared error over every forecast scalar of the batch.
    pub fn loss(&self, tape: &mut Tape, batch: &[&WindowSample]) -> Result<Var> {
        self.loss_with(tape, &self.store, batch)
    }

    pub fn loss_with(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &[&WindowSample],
    ) -> Result<Var> {
        let xs: Vec<&Tensor> = batch.iter().map(|w| &w.x).collect();
        let groups = self.forward_with(tape, store, &xs)?;
        let (h, n) = (self.config.horizon(), self.config.n_vars());
        let total = (batch.len() * h * n) as f64;
        let mut parts = Vec::with_capacity(groups.len());
        for g in groups {
            let ys: Vec<f64> = g
                .indices
                .iter()
                .flat_map(|&i| batch[i].y.data().iter().copied())
                .collect();
            let y = tape.constant(Tensor::new(&[g.indices.len(), h, n], ys)?);
            let d = tape.sub(g.yhat, y)?;
            let sq = tape.square(d);
            let s = tape.sum(sq);
            parts.push(tape.scale(s, 1.0 / total));
        }
        let mut loss = parts[0];
        for &p in &parts[1..] {
            loss = tape.add(loss, p)?;
        }
        Ok(loss)
    }

    /// Normalized-space forecasts `[H, N]`, one per input window.
    pub fn predict(&self, xs: &[&Tensor]) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let groups = self.forward(&mut tape, xs)?;
        let (h, n) = (self.config.horizon(), self.config.n_vars());
        let mut out = vec![None; xs.len()];
        for g in groups {
            let data = tape.data(g.yhat);
            for (k, &i) in g.indices.iter().enumerate() {
                out[i] = Some(Tensor::new(
                    &[h, n],
                    data[k * h * n..(k + 1) * h * n].to_vec(),
                )?);
            }
        }
        Ok(out
            .into_iter()
            .map(|t| t.expect("every sample predicted"))
            .collect())
    }

    /// Parameters in store order, then normalization statistics, with the
    /// experiment config text as trailer.
    pub fn to_checkpoint(&self, stats: &NormStats, config_text: &str) -> Checkpoint {
        let mut entries: Vec<Entry> = self
            .store
            .iter()
            .map(|(_, p)| Entry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                frozen: p.frozen,
                data: p.tensor.data().to_vec(),
            })
            .collect();
        for (name, v) in [
            ("data.norm.mean", &stats.mean),
            ("data.norm.std", &stats.std),
        ] {
            entries.push(Entry {
                name: name.into(),
                shape: vec![v.len()],
                frozen: true,
                data: v.clone(),
            });
        }
        Checkpoint {
            entries,
            trailer: config_text.to_string(),
        }
    }

    /// Overwrites parameter values from a checkpoint whose manifest matches
    /// this model exactly; returns the stored normalization statistics.
    pub fn load_params(&mut self, ckpt: &Checkpoint) -> Result<NormStats> {
        let expected = self.store.len() + 2;
        if ckpt.entries.len() != expected {
            return Err(SeedError::Checkpoint(format!(
                "checkpoint has {} entries, model expects {expected}",
                ckpt.entries.len()
            )));
        }
        for ((_, p), e) in self.store.iter().zip(&ckpt.entries) {
            if p.name != e.name || p.tensor.shape() != e.shape.as_slice() || p.frozen != e.frozen {
                return Err(SeedError::Checkpoint(format!(
                    "entry '{}' {:?} does not match parameter '{}' {:?}",
                    e.name,
                    e.shape,
                    p.name,
                    p.tensor.shape()
                )));
            }
        }
        let data: Vec<Vec<f64>> = ckpt.entries[..self.store.len()]
            .iter()
            .map(|e| e.data.clone())
            .collect();
        self.store.restore(&data);
        let get = |name: &str| {
            ckpt.entry(name)
                .map(|e| e.data.clone())
                .ok_or_else(|| SeedError::Checkpoint(format!("missing '{name}'")))
        };
        let (mean, std) = (get("data.norm.mean")?, get("data.norm.std")?);
        if mean.len() != self.config.n_vars() || std.len() != mean.len() {
            return Err(SeedError::Checkpoint(
                "normalization stats do not match variable count".into(),
            ));
        }
        Ok(NormStats {
            mean,
            std,
            clamped: Vec::new(),
        })
    }
}
