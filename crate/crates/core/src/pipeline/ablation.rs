//! Module ablations trained and scored under one dataset and seed.

use crate::data::{PreparedData, Split};
use crate::decoder::GenerationMode;
use crate::error::Result;

use super::config::ExperimentConfig;
use super::eval::evaluate_windows;
use super::report::ReportRow;
use super::train_on;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// Patch tokens bypass the prototype bank.
    NoReprogram,
    /// Zero encoder attention layers: unfold directly after the temporal projection.
    NoEncoder,
    /// One-shot head instead of autoregressive generation.
    SingleShot,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoReprogram,
        Variant::NoEncoder,
        Variant::SingleShot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoReprogram => "no_reprogram",
            Variant::NoEncoder => "no_encoder",
            Variant::SingleShot => "single_shot",
        }
    }

    pub fn apply(self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut c = cfg.clone();
        match self {
            Variant::Full => {}
            Variant::NoReprogram => c.reprog.enabled = false,
            Variant::NoEncoder => c.encoder_layers = 0,
            Variant::SingleShot => c.mode = GenerationMode::SingleShot,
        }
        c
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant '{s}'"))
    }
}

/// Trains `variant` and scores it on the test split.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    variant: Variant,
) -> Result<ReportRow> {
    let vcfg = variant.apply(cfg);
    let exp = train_on(&vcfg, data)?;
    let d = &vcfg.data;
    let test = data.windows(Split::Test, d.seq_len, d.horizon, d.stride)?;
    let metrics = evaluate_windows(
        exp.model(),
        &test,
        vcfg.denormalized_metrics.then_some(&data.stats),
    )?;
    let (params_trainable, params_frozen) = exp.model().store.counts();
    Ok(ReportRow {
        dataset: d.name.clone(),
        variant: variant.name().into(),
        mse: metrics.mse,
        mae: metrics.mae,
        train_time_s: exp.outcome.train_time_s,
        params_trainable,
        params_frozen,
    })
}

pub fn run_ablations(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    variants: &[Variant],
) -> Result<Vec<ReportRow>> {
    variants
        .iter()
        .map(|&v| run_ablation(cfg, data, v))
        .collect()
}
