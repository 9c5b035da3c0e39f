//! Experiment configuration: `key = value` lines with dotted keys.

use std::path::{Path, PathBuf};

use crate::data::{CsvSchema, NanPolicy, SplitSpec};
use crate::decoder::{DecoderConfig, GenerationConfig, GenerationMode};
use crate::encoder::EncoderConfig;
use crate::error::{Result, SeedError};
use crate::model::{ModelConfig, ReprogConfig, TextPromptConfig};
use crate::numerics::AdamConfig;
use crate::patching::PatchConfig;
use crate::reprogramming::{PromptTemplate, PrototypeInit, TaskId};

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub path: PathBuf,
    /// Label used in reports; defaults to the file stem.
    pub name: String,
    pub date_column: String,
    pub nan_policy: NanPolicy,
    pub split: SplitSpec,
    pub seq_len: usize,
    pub horizon: usize,
    pub stride: usize,
    /// Expected variable columns; empty accepts whatever the file holds.
    pub columns: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReprogSettings {
    pub enabled: bool,
    pub prototypes: usize,
    pub task_len: usize,
    pub init: PrototypeInit,
    pub task: TaskId,
    /// Prepend a rendered statistics prompt.
    pub text: bool,
    /// Template file; the built-in template when unset.
    pub template: Option<PathBuf>,
    pub domain: String,
    pub instruction: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub encoder_d: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub encoder_ffn: usize,
    pub encoder_channels: usize,
    pub patch_len: usize,
    pub max_patches: usize,
    pub reprog: ReprogSettings,
    pub decoder: DecoderConfig,
    pub mode: GenerationMode,
    pub optim: OptimConfig,
    pub seed: u64,
    /// Report metrics in original units instead of normalized space.
    pub denormalized_metrics: bool,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig {
                path: PathBuf::new(),
                name: String::new(),
                date_column: "date".into(),
                nan_policy: NanPolicy::Reject,
                split: SplitSpec::Ratio([0.7, 0.1, 0.2]),
                seq_len: 96,
                horizon: 24,
                stride: 1,
                columns: Vec::new(),
            },
            encoder_d: 32,
            encoder_layers: 1,
            encoder_heads: 4,
            encoder_ffn: 64,
            encoder_channels: 4,
            patch_len: 16,
            max_patches: 64,
            reprog: ReprogSettings {
                enabled: true,
                prototypes: 8,
                task_len: 4,
                init: PrototypeInit::Random,
                task: TaskId::Forecast,
                text: false,
                template: None,
                domain: "synthetic".into(),
                instruction: "forecast the next steps".into(),
            },
            decoder: DecoderConfig::default(),
            mode: GenerationMode::Autoregressive,
            optim: OptimConfig {
                adam: AdamConfig::default(),
                batch_size: 32,
                max_epochs: 50,
                patience: 5,
            },
            seed: 42,
            denormalized_metrics: false,
            checkpoint: None,
            report: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| format!("{key}: cannot parse '{value}': {e}"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        o => Err(format!("{key}: expected true|false, got '{o}'")),
    }
}

fn parse_split(value: &str) -> std::result::Result<Option<SplitSpec>, String> {
    match value {
        "ratio" => Ok(None),
        "ett_hourly" => Ok(Some(SplitSpec::EttHourly)),
        "ett_minutely" => Ok(Some(SplitSpec::EttMinutely)),
        o => Err(format!(
            "data.split: unknown split '{o}' (expected ratio|ett_hourly|ett_minutely)"
        )),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.as_os_str().is_empty() || p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    /// Parses config text. Every problem found is reported, not just the first.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut ratios: Option<[f64; 3]> = None;
        let mut split_kind: Option<Option<SplitSpec>> = None;
        let mut errs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errs.push(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    i + 1
                ));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if let Err(e) = cfg.set(key, value, &mut ratios, &mut split_kind) {
                errs.push(format!("line {}: {e}", i + 1));
            }
        }
        match split_kind {
            Some(Some(fixed)) => cfg.data.split = fixed,
            _ => {
                if let Some(r) = ratios {
                    cfg.data.split = SplitSpec::Ratio(r);
                }
            }
        }
        if let Err(SeedError::Config(e)) = cfg.data.split.validate() {
            errs.extend(e);
        }
        if cfg.data.name.is_empty() {
            cfg.data.name = cfg
                .data
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into());
        }
        if cfg.optim.batch_size == 0 {
            errs.push("optim.batch_size must be >= 1".into());
        }
        if cfg.data.stride == 0 {
            errs.push("data.stride must be >= 1".into());
        }
        if !(cfg.optim.adam.lr >= 0.0 && cfg.optim.adam.lr.is_finite()) {
            errs.push("optim.lr must be finite and >= 0".into());
        }
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(SeedError::Config(errs))
        }
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SeedError::io(format!("read {}", path.display()), e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.path = resolve(base, &cfg.data.path);
        cfg.reprog.template = cfg.reprog.template.map(|p| resolve(base, &p));
        cfg.checkpoint = cfg.checkpoint.map(|p| resolve(base, &p));
        cfg.report = cfg.report.map(|p| resolve(base, &p));
        Ok(cfg)
    }

    fn set(
        &mut self,
        key: &str,
        v: &str,
        ratios: &mut Option<[f64; 3]>,
        split_kind: &mut Option<Option<SplitSpec>>,
    ) -> std::result::Result<(), String> {
        match key {
            "data.path" => self.data.path = PathBuf::from(v),
            "data.name" => self.data.name = v.to_string(),
            "data.date_column" => self.data.date_column = v.to_string(),
            "data.nan_policy" => self.data.nan_policy = v.parse()?,
            "data.split" => *split_kind = Some(parse_split(v)?),
            "data.ratios" => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|s| parse_value::<f64>(key, s.trim()))
                    .collect::<std::result::Result<_, _>>()?;
                let arr: [f64; 3] = parts
                    .try_into()
                    .map_err(|_| format!("{key}: expected three comma-separated fractions"))?;
                *ratios = Some(arr);
            }
            "data.seq_len" => self.data.seq_len = parse_value(key, v)?,
            "data.horizon" => self.data.horizon = parse_value(key, v)?,
            "data.stride" => self.data.stride = parse_value(key, v)?,
            "data.columns" => {
                self.data.columns = v
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "encoder.d" => self.encoder_d = parse_value(key, v)?,
            "encoder.layers" => self.encoder_layers = parse_value(key, v)?,
            "encoder.heads" => self.encoder_heads = parse_value(key, v)?,
            "encoder.ffn_dim" => self.encoder_ffn = parse_value(key, v)?,
            "encoder.channels" => self.encoder_channels = parse_value(key, v)?,
            "patch.len" => self.patch_len = parse_value(key, v)?,
            "patch.max_patches" => self.max_patches = parse_value(key, v)?,
            "reprog.enabled" => self.reprog.enabled = parse_bool(key, v)?,
            "reprog.prototypes" => self.reprog.prototypes = parse_value(key, v)?,
            "reprog.task_len" => self.reprog.task_len = parse_value(key, v)?,
            "reprog.init" => self.reprog.init = v.parse()?,
            "reprog.task" => self.reprog.task = v.parse()?,
            "reprog.text" => self.reprog.text = parse_bool(key, v)?,
            "reprog.template" => self.reprog.template = opt_path(v),
            "reprog.domain" => self.reprog.domain = v.to_string(),
            "reprog.instruction" => self.reprog.instruction = v.to_string(),
            "decoder.d_model" => self.decoder.d_model = parse_value(key, v)?,
            "decoder.layers" => self.decoder.layers = parse_value(key, v)?,
            "decoder.heads" => self.decoder.heads = parse_value(key, v)?,
            "decoder.ffn_dim" => self.decoder.ffn_dim = parse_value(key, v)?,
            "decoder.max_positions" => self.decoder.max_positions = parse_value(key, v)?,
            "decoder.init_seed" => self.decoder.init_seed = parse_value(key, v)?,
            "decoder.mode" => self.mode = v.parse()?,
            "optim.lr" => self.optim.adam.lr = parse_value(key, v)?,
            "optim.beta1" => self.optim.adam.beta1 = parse_value(key, v)?,
            "optim.beta2" => self.optim.adam.beta2 = parse_value(key, v)?,
            "optim.eps" => self.optim.adam.eps = parse_value(key, v)?,
            "optim.batch_size" => self.optim.batch_size = parse_value(key, v)?,
            "optim.max_epochs" => self.optim.max_epochs = parse_value(key, v)?,
            "optim.patience" => self.optim.patience = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "eval.denormalized" => self.denormalized_metrics = parse_bool(key, v)?,
            "output.checkpoint" => self.checkpoint = opt_path(v),
            "output.report" => self.report = opt_path(v),
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Canonical text: every key, fixed order. `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let (split, ratios) = match &self.data.split {
            SplitSpec::Ratio(r) => ("ratio", *r),
            SplitSpec::EttHourly => ("ett_hourly", [0.7, 0.1, 0.2]),
            SplitSpec::EttMinutely => ("ett_minutely", [0.7, 0.1, 0.2]),
        };
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let nan = match self.data.nan_policy {
            NanPolicy::Reject => "reject",
            NanPolicy::DropRow => "drop-row",
        };
        let init = match self.reprog.init {
            PrototypeInit::Random => "random",
            PrototypeInit::Vocab => "vocab",
        };
        let mode = match self.mode {
            GenerationMode::Autoregressive => "autoregressive",
            GenerationMode::SingleShot => "single_shot",
        };
        let lines: Vec<(&str, String)> = vec![
            ("data.path", self.data.path.display().to_string()),
            ("data.name", self.data.name.clone()),
            ("data.date_column", self.data.date_column.clone()),
            ("data.nan_policy", nan.into()),
            ("data.split", split.into()),
            (
                "data.ratios",
                format!("{}, {}, {}", ratios[0], ratios[1], ratios[2]),
            ),
            ("data.seq_len", self.data.seq_len.to_string()),
            ("data.horizon", self.data.horizon.to_string()),
            ("data.stride", self.data.stride.to_string()),
            ("data.columns", self.data.columns.join(", ")),
            ("encoder.d", self.encoder_d.to_string()),
            ("encoder.layers", self.encoder_layers.to_string()),
            ("encoder.heads", self.encoder_heads.to_string()),
            ("encoder.ffn_dim", self.encoder_ffn.to_string()),
            ("encoder.channels", self.encoder_channels.to_string()),
            ("patch.len", self.patch_len.to_string()),
            ("patch.max_patches", self.max_patches.to_string()),
            ("reprog.enabled", self.reprog.enabled.to_string()),
            ("reprog.prototypes", self.reprog.prototypes.to_string()),
            ("reprog.task_len", self.reprog.task_len.to_string()),
            ("reprog.init", init.into()),
            ("reprog.task", self.reprog.task.name().into()),
            ("reprog.text", self.reprog.text.to_string()),
            ("reprog.template", path(&self.reprog.template)),
            ("reprog.domain", self.reprog.domain.clone()),
            ("reprog.instruction", self.reprog.instruction.clone()),
            ("decoder.d_model", self.decoder.d_model.to_string()),
            ("decoder.layers", self.decoder.layers.to_string()),
            ("decoder.heads", self.decoder.heads.to_string()),
            ("decoder.ffn_dim", self.decoder.ffn_dim.to_string()),
            (
                "decoder.max_positions",
                self.decoder.max_positions.to_string(),
            ),
            ("decoder.init_seed", self.decoder.init_seed.to_string()),
            ("decoder.mode", mode.into()),
            ("optim.lr", self.optim.adam.lr.to_string()),
            ("optim.beta1", self.optim.adam.beta1.to_string()),
            ("optim.beta2", self.optim.adam.beta2.to_string()),
            ("optim.eps", self.optim.adam.eps.to_string()),
            ("optim.batch_size", self.optim.batch_size.to_string()),
            ("optim.max_epochs", self.optim.max_epochs.to_string()),
            ("optim.patience", self.optim.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("eval.denormalized", self.denormalized_metrics.to_string()),
            ("output.checkpoint", path(&self.checkpoint)),
            ("output.report", path(&self.report)),
        ];
        lines
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            date_column: self.data.date_column.clone(),
            nan_policy: self.data.nan_policy,
            min_rows: self.data.seq_len + self.data.horizon,
        }
    }

    /// Model hyperparameters for a dataset with `n_vars` variables.
    pub fn model_config(&self, n_vars: usize) -> Result<ModelConfig> {
        let text = if self.reprog.text {
            let template = match &self.reprog.template {
                Some(p) => PromptTemplate::load(p)?,
                None => PromptTemplate::default(),
            };
            Some(TextPromptConfig {
                template,
                domain: self.reprog.domain.clone(),
                instruction: self.reprog.instruction.clone(),
            })
        } else {
            None
        };
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                n_vars,
                seq_len: self.data.seq_len,
                d_model: self.encoder_d,
                layers: self.encoder_layers,
                heads: self.encoder_heads,
                ffn_dim: self.encoder_ffn,
                channels: self.encoder_channels,
            },
            patch: PatchConfig {
                patch_len: self.patch_len,
                d_lm: self.decoder.d_model,
                max_patches: self.max_patches,
            },
            reprog: ReprogConfig {
                enabled: self.reprog.enabled,
                prototypes: self.reprog.prototypes,
                task_len: self.reprog.task_len,
                init: self.reprog.init,
                task: self.reprog.task,
                text,
            },
            decoder: self.decoder.clone(),
            generation: GenerationConfig {
                horizon: self.data.horizon,
                mode: self.mode,
            },
            seed: self.seed,
        };
        let errs = cfg.validate();
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(SeedError::Config(errs))
        }
    }
}
