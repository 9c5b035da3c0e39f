use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seed_core::data::synth::{generate, SynthConfig};
use seed_core::data::{write_csv, Split};
use seed_core::pipeline::{
    emit_report, evaluate, forecast, gradcheck_module, load_dataset, load_forecast_input, log_csv,
    naive_metrics, run_ablations, train, write_forecast_csv, ExperimentConfig, LoadedModel,
    ReportRow, Variant, GRADCHECK_MODULES,
};
use seed_core::{Result, SeedError};

/// Multivariate forecasting through a frozen decoder.
#[derive(Parser)]
#[command(name = "seed", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output.checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write the per-epoch loss log as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a checkpoint on one split of its dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Metrics in original units instead of normalized space.
        #[arg(long)]
        denormalized: bool,
    },
    /// Forecast the next H steps after the last L rows of a CSV.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every ablation variant and emit the comparison table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of full,no_reprogram,no_encoder,single_shot.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
        /// Append a naive last-value row for reference.
        #[arg(long)]
        baseline: bool,
    },
    /// Finite-difference gradient checks at toy size.
    Gradcheck {
        #[arg(long)]
        module: Option<String>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Write the synthetic sinusoid dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        rows: usize,
        #[arg(long, default_value_t = 3)]
        vars: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn write_file(path: &PathBuf, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| SeedError::Io {
        context: format!("write {}", path.display()),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            checkpoint,
            log,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            if cfg.checkpoint.is_none() {
                return Err(SeedError::Config(vec![
                    "no checkpoint path: set output.checkpoint or --checkpoint".into(),
                ]));
            }
            let exp = train(&cfg)?;
            let s = &exp.outcome.state;
            println!(
                "trained {} epochs in {:.2}s; best epoch {} val mse {:.6}",
                exp.outcome.log.len(),
                exp.outcome.train_time_s,
                s.best_epoch,
                s.best_val_loss
            );
            if let Some(path) = log {
                write_file(&path, &log_csv(&exp.outcome.log))?;
            }
            println!(
                "checkpoint written to {}",
                cfg.checkpoint.unwrap().display()
            );
        }
        Command::Evaluate {
            checkpoint,
            split,
            denormalized,
        } => {
            let loaded = LoadedModel::load(&checkpoint)?;
            let m = evaluate(&loaded, split, denormalized)?;
            println!(
                "split={split:?} samples={} mse={:.6} mae={:.6}",
                m.n_samples, m.mse, m.mae
            );
        }
        Command::Forecast {
            checkpoint,
            input,
            out,
        } => {
            let loaded = LoadedModel::load(&checkpoint)?;
            let series = load_forecast_input(&loaded, &input)?;
            let y = forecast(&loaded, &series)?;
            let file = std::fs::File::create(&out).map_err(|e| SeedError::Io {
                context: format!("create {}", out.display()),
                source: e,
            })?;
            write_forecast_csv(&y, &series.variable_names, file)?;
            println!("wrote {} steps to {}", y.shape()[0], out.display());
        }
        Command::Ablate {
            config,
            variants,
            baseline,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let data = load_dataset(&cfg)?;
            let variants = variants.unwrap_or_else(|| Variant::ALL.to_vec());
            let mut rows = run_ablations(&cfg, &data, &variants)?;
            if baseline {
                let d = &cfg.data;
                let test = data.windows(Split::Test, d.seq_len, d.horizon, d.stride)?;
                let naive = naive_metrics(&test, cfg.denormalized_metrics.then_some(&data.stats))?;
                rows.push(ReportRow {
                    dataset: d.name.clone(),
                    variant: "naive_last_value".into(),
                    mse: naive.mse,
                    mae: naive.mae,
                    train_time_s: 0.0,
                    params_trainable: 0,
                    params_frozen: 0,
                });
            }
            let report = emit_report(&rows)?;
            print!("{}", report.table);
            if let Some(path) = &cfg.report {
                write_file(path, &report.csv)?;
            }
        }
        Command::Gradcheck { module, seed } => {
            let modules: Vec<String> = match module {
                Some(m) => vec![m],
                None => GRADCHECK_MODULES.iter().map(|s| s.to_string()).collect(),
            };
            let mut worst: f64 = 0.0;
            for m in modules {
                let r = gradcheck_module(&m, seed)?;
                println!("{:<16} max relative error {:.3e}", r.module, r.max_error());
                worst = worst.max(r.max_error());
            }
            if worst >= 1e-4 {
                return Err(SeedError::NumericInput("gradient check above 1e-4"));
            }
        }
        Command::Synth {
            out,
            rows,
            vars,
            seed,
        } => {
            let series = generate(&SynthConfig::new(rows, vars, seed));
            let file = std::fs::File::create(&out).map_err(|e| SeedError::Io {
                context: format!("create {}", out.display()),
                source: e,
            })?;
            write_csv(&series, file, "date")?;
            println!("wrote {rows} rows x {vars} variables to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
