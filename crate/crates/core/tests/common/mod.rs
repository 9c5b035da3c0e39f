#![allow(dead_code)]

use std::path::{Path, PathBuf};

use seed_core::data::synth::{generate, SynthConfig};
use seed_core::data::write_csv;
use seed_core::pipeline::ExperimentConfig;

/// Writes the synthetic series to `dir/synthetic.csv`.
pub fn write_synthetic(dir: &Path, rows: usize, vars: usize, seed: u64) -> PathBuf {
    let path = dir.join("synthetic.csv");
    let file = std::fs::File::create(&path).unwrap();
    write_csv(&generate(&SynthConfig::new(rows, vars, seed)), file, "date").unwrap();
    path
}

/// A small experiment that trains in well under a second.
pub fn tiny_config_text(data: &Path) -> String {
    format!(
        "data.path = {}
data.ratios = 0.7, 0.1, 0.2
data.seq_len = 24
data.horizon = 6
data.stride = 3
encoder.d = 8
encoder.layers = 1
encoder.heads = 2
encoder.ffn_dim = 16
encoder.channels = 2
patch.len = 8
patch.max_patches = 4
reprog.prototypes = 4
reprog.task_len = 2
decoder.d_model = 16
decoder.layers = 1
decoder.heads = 2
decoder.ffn_dim = 32
decoder.max_positions = 64
optim.lr = 0.003
optim.batch_size = 16
optim.max_epochs = 3
optim.patience = 2
seed = 42
",
        data.display()
    )
}

pub fn tiny_config(data: &Path) -> ExperimentConfig {
    ExperimentConfig::parse(&tiny_config_text(data)).unwrap()
}
