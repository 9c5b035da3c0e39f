//! Experiment orchestration: training, evaluation, forecasting, ablations
//! and reports on top of [`SeedModel`].

mod ablation;
mod config;
mod eval;
mod gradcheck;
mod report;
mod train;

use std::path::Path;

pub use ablation::{run_ablation, run_ablations, Variant};
pub use config::{DataConfig, ExperimentConfig, OptimConfig, ReprogSettings};
pub use eval::{
    compute_metrics, evaluate_windows, naive_forecast, naive_metrics, predict_windows, Metrics,
};
pub use gradcheck::{
    gradcheck_module, gradcheck_module_with_step, toy_model, GradcheckReport, GRADCHECK_MODULES,
};
pub use report::{emit_report, Report, ReportRow, REPORT_COLUMNS};
pub use train::{log_csv, train_model, train_on_windows, EpochLog, TrainOutcome, TrainState};

use crate::data::{
    load_csv, zscore_apply, zscore_invert, NormStats, PreparedData, RawSeries, Split,
};
use crate::error::{Result, SeedError};
use crate::model::SeedModel;
use crate::numerics::checkpoint::Checkpoint;
use crate::numerics::Tensor;

/// Loads and splits the configured dataset, checking its columns against
/// `data.columns` when that is set.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let series = load_csv(&cfg.data.path, &cfg.schema())?;
    check_columns(cfg, &series)?;
    PreparedData::new(series, &cfg.data.split)
}

fn check_columns(cfg: &ExperimentConfig, series: &RawSeries) -> Result<()> {
    if !cfg.data.columns.is_empty() && cfg.data.columns != series.variable_names {
        return Err(SeedError::Schema(format!(
            "expected columns {:?}, found {:?}",
            cfg.data.columns, series.variable_names
        )));
    }
    Ok(())
}

/// A finished training run.
#[derive(Debug)]
pub struct Experiment {
    /// Canonical config with `data.columns` filled in from the dataset.
    pub config: ExperimentConfig,
    pub outcome: TrainOutcome,
    pub stats: NormStats,
}

impl Experiment {
    pub fn model(&self) -> &SeedModel {
        &self.outcome.model
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.outcome
            .model
            .to_checkpoint(&self.stats, &self.config.to_text())
    }
}

/// Builds a model from `cfg` and trains it on already-loaded data.
pub fn train_on(cfg: &ExperimentConfig, data: &PreparedData) -> Result<Experiment> {
    let mut config = cfg.clone();
    config.data.columns = data.series.variable_names.clone();
    let model = SeedModel::new(config.model_config(data.series.n_vars())?)?;
    let outcome = train_model(model, data, &config.optim, config.data.stride, config.seed)?;
    Ok(Experiment {
        config,
        outcome,
        stats: data.stats.clone(),
    })
}

/// Loads the dataset, trains, and writes the checkpoint if one is configured.
pub fn train(cfg: &ExperimentConfig) -> Result<Experiment> {
    let data = load_dataset(cfg)?;
    let exp = train_on(cfg, &data)?;
    if let Some(path) = &cfg.checkpoint {
        exp.checkpoint().save(path)?;
    }
    Ok(exp)
}

/// A model rebuilt from a checkpoint.
#[derive(Debug)]
pub struct LoadedModel {
    pub config: ExperimentConfig,
    pub model: SeedModel,
    pub stats: NormStats,
}

impl LoadedModel {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = ExperimentConfig::parse(&ckpt.trailer)?;
        let n_vars = ckpt
            .entry("data.norm.mean")
            .map(|e| e.data.len())
            .ok_or_else(|| SeedError::Checkpoint("missing 'data.norm.mean'".into()))?;
        let mut model = SeedModel::new(config.model_config(n_vars)?)?;
        let stats = model.load_params(ckpt)?;
        Ok(LoadedModel {
            config,
            model,
            stats,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Metrics of a checkpointed model on one split of its dataset. The dataset
/// must reproduce the checkpoint's normalization statistics exactly.
pub fn evaluate(loaded: &LoadedModel, split: Split, denormalized: bool) -> Result<Metrics> {
    let data = load_dataset(&loaded.config)?;
    if data.stats.mean != loaded.stats.mean || data.stats.std != loaded.stats.std {
        return Err(SeedError::Schema(
            "dataset training split does not reproduce the checkpoint's normalization statistics"
                .into(),
        ));
    }
    let d = &loaded.config.data;
    let windows = data.windows(split, d.seq_len, d.horizon, d.stride)?;
    evaluate_windows(&loaded.model, &windows, denormalized.then_some(&data.stats))
}

/// Forecast `[H, N]` in original units from the last `L` rows of `input`.
pub fn forecast(loaded: &LoadedModel, input: &RawSeries) -> Result<Tensor> {
    let cfg = &loaded.config;
    let n = loaded.model.config.n_vars();
    if input.n_vars() != n {
        return Err(SeedError::Schema(format!(
            "input has {} variable columns, model expects {n}",
            input.n_vars()
        )));
    }
    check_columns(cfg, input)?;
    let l = cfg.data.seq_len;
    if input.len() < l {
        return Err(SeedError::InsufficientData {
            needed: l,
            available: input.len(),
        });
    }
    let window = input.rows(input.len() - l..input.len());
    let x = Tensor::new(&[l, n], zscore_apply(window, &loaded.stats))?;
    let y = loaded.model.predict(&[&x])?.remove(0);
    Tensor::new(y.shape(), zscore_invert(y.data(), &loaded.stats))
}

/// Reads a forecast input CSV with the checkpoint's schema.
pub fn load_forecast_input(loaded: &LoadedModel, path: &Path) -> Result<RawSeries> {
    let mut schema = loaded.config.schema();
    schema.min_rows = loaded.config.data.seq_len;
    load_csv(path, &schema)
}

/// `step,<var...>` header followed by one row per horizon step, numbered from 1.
pub fn write_forecast_csv(
    forecast: &Tensor,
    names: &[String],
    out: impl std::io::Write,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| SeedError::Contract(format!("csv encoding: {e}"));
    let mut header = vec!["step".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(err)?;
    for step in 0..forecast.shape()[0] {
        let mut rec = vec![(step + 1).to_string()];
        rec.extend(forecast.row(step).iter().map(f64::to_string));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| SeedError::io("write forecast", e))
}
