mod common;

use std::process::Command;

use seed_core::data::{parse_csv, CsvSchema, Split};
use seed_core::numerics::{SeedRng, Tensor};
use seed_core::pipeline::{
    compute_metrics, emit_report, evaluate, evaluate_windows, forecast, load_dataset, train,
    train_on, write_forecast_csv, ExperimentConfig, LoadedModel, ReportRow, Variant,
};
use seed_core::SeedError;

use common::{tiny_config, tiny_config_text, write_synthetic};

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(&write_synthetic(dir.path(), 300, 2, 1));
    cfg.optim.adam.lr = 0.0;
    cfg.optim.max_epochs = 2;
    let data = load_dataset(&cfg).unwrap();
    let fresh = seed_core::model::SeedModel::new(cfg.model_config(2).unwrap()).unwrap();
    let exp = train_on(&cfg, &data).unwrap();
    for ((_, a), (_, b)) in fresh.store.iter().zip(exp.model().store.iter()) {
        assert_eq!(a.name, b.name);
        assert!(
            a.tensor.max_abs_diff(&b.tensor) <= 1e-15,
            "{} moved",
            a.name
        );
    }
}

#[test]
fn metrics_match_direct_oracle() {
    let mut rng = SeedRng::new(17);
    for _ in 0..100 {
        let (count, h, n) = (1 + rng.below(5), 1 + rng.below(6), 1 + rng.below(4));
        let preds: Vec<Tensor> = (0..count)
            .map(|_| rng.normal_tensor(&[h, n], 3.0))
            .collect();
        let ys: Vec<Tensor> = (0..count)
            .map(|_| rng.normal_tensor(&[h, n], 3.0))
            .collect();
        let refs: Vec<&Tensor> = ys.iter().collect();
        let m = compute_metrics(&preds, &refs).unwrap();
        let diffs: Vec<f64> = preds
            .iter()
            .zip(&ys)
            .flat_map(|(p, y)| {
                p.data()
                    .iter()
                    .zip(y.data())
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>()
            })
            .collect();
        let mse = diffs.iter().map(|e| e * e).sum::<f64>() / diffs.len() as f64;
        let mae = diffs.iter().map(|e| e.abs()).sum::<f64>() / diffs.len() as f64;
        assert!((m.mse - mse).abs() <= 1e-12 * (1.0 + mse));
        assert!((m.mae - mae).abs() <= 1e-12 * (1.0 + mae));
        assert!(m.mae <= m.mse.sqrt() + 1e-12);
        assert_eq!(m.n_samples, count);
    }
}

#[test]
fn metrics_reject_mismatched_shapes() {
    let p = vec![Tensor::zeros(&[2, 2])];
    let y = Tensor::zeros(&[2, 3]);
    assert!(matches!(
        compute_metrics(&p, &[&y]),
        Err(SeedError::Shape { .. })
    ));
    assert!(matches!(
        compute_metrics(&[], &[]),
        Err(SeedError::EmptySplit(_))
    ));
}

#[test]
fn report_has_fixed_columns_and_three_decimals() {
    let rows: Vec<ReportRow> = Variant::ALL
        .iter()
        .map(|v| ReportRow {
            dataset: "synthetic".into(),
            variant: v.name().into(),
            mse: 0.123456,
            mae: 1.0,
            train_time_s: 2.345,
            params_trainable: 10,
            params_frozen: 20,
        })
        .collect();
    let r = emit_report(&rows).unwrap();
    let lines: Vec<&str> = r.csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(
        lines[0],
        "dataset,variant,mse,mae,train_time_s,params_trainable,params_frozen"
    );
    assert_eq!(lines[1], "synthetic,full,0.123,1.000,2.35,10,20");
    assert_eq!(r.table.lines().count(), 6);
}

#[test]
fn config_errors_are_collected() {
    let err = ExperimentConfig::parse(
        "bogus = 1\ndata.seq_len = x\nno equals sign\noptim.batch_size = 0\n",
    )
    .unwrap_err();
    let SeedError::Config(msgs) = err else {
        panic!("expected a config error");
    };
    assert_eq!(msgs.len(), 4, "{msgs:?}");
    assert!(msgs[0].contains("bogus"));
    assert_eq!(err_exit("bogus = 1"), 1);
}

fn err_exit(text: &str) -> i32 {
    ExperimentConfig::parse(text).unwrap_err().exit_code()
}

#[test]
fn model_config_checks_cross_module_sizes() {
    let mut cfg = tiny_config(std::path::Path::new("x.csv"));
    cfg.patch_len = 48;
    assert!(matches!(cfg.model_config(2), Err(SeedError::Config(_))));
    let mut cfg = tiny_config(std::path::Path::new("x.csv"));
    cfg.decoder.max_positions = 8;
    assert!(matches!(cfg.model_config(2), Err(SeedError::Config(_))));
}

#[test]
fn relative_paths_resolve_against_config_dir() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("cfg")).unwrap();
    let path = dir.path().join("cfg/run.conf");
    std::fs::write(
        &path,
        "data.path = ../d.csv\noutput.checkpoint = out.ckpt\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.data.path, dir.path().join("cfg/../d.csv"));
    assert_eq!(cfg.checkpoint.unwrap(), dir.path().join("cfg/out.ckpt"));
}

#[test]
fn early_stopping_restores_best_epoch_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(&write_synthetic(dir.path(), 300, 2, 2));
    cfg.optim.max_epochs = 6;
    cfg.optim.patience = 1;
    cfg.optim.adam.lr = 0.05;
    let data = load_dataset(&cfg).unwrap();
    let exp = train_on(&cfg, &data).unwrap();
    let s = &exp.outcome.state;
    let best = exp
        .outcome
        .log
        .iter()
        .map(|e| e.val_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(s.best_val_loss, best);
    assert_eq!(exp.outcome.log[s.best_epoch - 1].val_loss, best);
    let now = exp.model().store.snapshot();
    assert_eq!(now.len(), s.best_snapshot.len());
    for (a, b) in now.iter().zip(&s.best_snapshot) {
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let d = &cfg.data;
    let val = data
        .windows(Split::Val, d.seq_len, d.horizon, d.stride)
        .unwrap();
    let m = evaluate_windows(exp.model(), &val, None).unwrap();
    assert_eq!(m.mse.to_bits(), best.to_bits());
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(&write_synthetic(dir.path(), 300, 3, 3));
    cfg.checkpoint = Some(dir.path().join("m.ckpt"));
    let exp = train(&cfg).unwrap();
    let loaded = LoadedModel::load(cfg.checkpoint.as_ref().unwrap()).unwrap();
    assert_eq!(loaded.stats, exp.stats);
    assert_eq!(loaded.config.data.columns, vec!["var0", "var1", "var2"]);
    for ((_, a), (_, b)) in exp.model().store.iter().zip(loaded.model.store.iter()) {
        assert!(a.tensor.bitwise_eq(&b.tensor));
    }
    let data = load_dataset(&cfg).unwrap();
    let test = data.windows(Split::Test, 24, 6, 3).unwrap();
    let direct = evaluate_windows(exp.model(), &test, None).unwrap();
    let via = evaluate(&loaded, Split::Test, false).unwrap();
    assert_eq!(direct, via);
    let denorm = evaluate(&loaded, Split::Test, true).unwrap();
    assert_ne!(denorm.mse, via.mse);
}

#[test]
fn evaluate_refuses_a_different_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(&write_synthetic(dir.path(), 300, 2, 4));
    cfg.optim.max_epochs = 1;
    let exp = train(&cfg).unwrap();
    let loaded = LoadedModel::from_checkpoint(&exp.checkpoint()).unwrap();
    write_synthetic(dir.path(), 300, 2, 5);
    assert!(matches!(
        evaluate(&loaded, Split::Test, false),
        Err(SeedError::Schema(_))
    ));
}

#[test]
fn forecast_csv_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_synthetic(dir.path(), 300, 3, 6);
    let mut cfg = tiny_config(&path);
    cfg.optim.max_epochs = 1;
    let exp = train(&cfg).unwrap();
    let loaded = LoadedModel::from_checkpoint(&exp.checkpoint()).unwrap();
    let series = load_dataset(&cfg).unwrap().series;
    let a = forecast(&loaded, &series).unwrap();
    let b = forecast(&loaded, &series).unwrap();
    assert!(a.bitwise_eq(&b));
    assert_eq!(a.shape(), &[6, 3]);
    let mut out = Vec::new();
    write_forecast_csv(&a, &series.variable_names, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[0], "step,var0,var1,var2");
    for (i, l) in lines[1..].iter().enumerate() {
        let cells: Vec<&str> = l.split(',').collect();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0], (i + 1).to_string());
        for (j, c) in cells[1..].iter().enumerate() {
            assert_eq!(c.parse::<f64>().unwrap().to_bits(), a.at(&[i, j]).to_bits());
        }
    }
}

#[test]
fn forecast_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(&write_synthetic(dir.path(), 300, 2, 7));
    cfg.optim.max_epochs = 1;
    let exp = train(&cfg).unwrap();
    let loaded = LoadedModel::from_checkpoint(&exp.checkpoint()).unwrap();
    let schema = CsvSchema::default();
    let short = parse_csv(
        "date,var0,var1\n0,1,2\n1,3,4\n".as_bytes(),
        "s.csv".as_ref(),
        &schema,
    )
    .unwrap();
    assert!(matches!(
        forecast(&loaded, &short),
        Err(SeedError::InsufficientData {
            needed: 24,
            available: 2
        })
    ));
    let renamed = parse_csv("date,a,b\n0,1,2\n".as_bytes(), "r.csv".as_ref(), &schema).unwrap();
    assert!(matches!(
        forecast(&loaded, &renamed),
        Err(SeedError::Schema(_))
    ));
}

#[test]
fn ablation_variants_change_only_their_module() {
    let cfg = tiny_config(std::path::Path::new("x.csv"));
    assert!(!Variant::NoReprogram.apply(&cfg).reprog.enabled);
    assert_eq!(Variant::NoEncoder.apply(&cfg).encoder_layers, 0);
    assert_eq!(
        Variant::SingleShot.apply(&cfg).mode,
        seed_core::decoder::GenerationMode::SingleShot
    );
    assert_eq!(Variant::Full.apply(&cfg), cfg);
}

fn seed_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seed"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| {
        seed_bin()
            .args(args)
            .output()
            .unwrap()
            .status
            .code()
            .unwrap()
    };

    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["gradcheck", "--module", "nonsense"]), 1);

    let bad_cfg = dir.path().join("bad.conf");
    std::fs::write(&bad_cfg, "nonsense.key = 1\n").unwrap();
    assert_eq!(code(&["train", "--config", bad_cfg.to_str().unwrap()]), 1);

    let missing = dir.path().join("missing.conf");
    assert_eq!(code(&["train", "--config", missing.to_str().unwrap()]), 2);

    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "date,a\n0,1\n1,oops\n").unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(
        &cfg,
        tiny_config_text(&csv) + "output.checkpoint = m.ckpt\n",
    )
    .unwrap();
    assert_eq!(code(&["train", "--config", cfg.to_str().unwrap()]), 2);
}

#[test]
fn cli_train_evaluate_forecast() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_synthetic(dir.path(), 300, 2, 8);
    let cfg = dir.path().join("run.conf");
    std::fs::write(
        &cfg,
        tiny_config_text(&csv) + "output.checkpoint = m.ckpt\n",
    )
    .unwrap();
    let ok = |args: &[&str]| {
        let out = seed_bin().args(args).output().unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    };
    ok(&["train", "--config", cfg.to_str().unwrap()]);
    let ckpt = dir.path().join("m.ckpt");
    let eval = ok(&[
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--split",
        "val",
    ]);
    assert!(eval.contains("mse="));
    let out = dir.path().join("f.csv");
    ok(&[
        "forecast",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        csv.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 7);
}
