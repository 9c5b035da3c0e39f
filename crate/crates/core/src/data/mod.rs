//! Dataset ingestion, splitting, z-score normalization and sliding windows.

mod csv_io;
mod norm;
mod split;
pub mod synth;

use std::ops::Range;

pub use csv_io::{load_csv, parse_csv, write_csv, CsvSchema, NanPolicy};
pub use norm::{zscore_apply, zscore_fit, zscore_invert, NormStats};
pub use split::{split, SplitRanges, SplitSpec};

use crate::error::{Result, SeedError};
use crate::numerics::Tensor;

/// A multivariate series as loaded from disk: `values` is row-major `[T, N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub timestamps: Vec<f64>,
    pub values: Vec<f64>,
    pub variable_names: Vec<String>,
    pub dropped_rows: usize,
}

impl RawSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.variable_names.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.n_vars();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn rows(&self, range: Range<usize>) -> &[f64] {
        let n = self.n_vars();
        &self.values[range.start * n..range.end * n]
    }
}

/// One supervised example: `x` is `[L, N]` history, `y` the next `[H, N]` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub x: Tensor,
    pub y: Tensor,
    /// Absolute row index of `x[0]` in the series.
    pub origin_index: usize,
}

/// Number of windows that fit in `t` rows.
pub fn window_count(t: usize, seq_len: usize, horizon: usize, stride: usize) -> usize {
    match t.checked_sub(seq_len + horizon) {
        Some(slack) => slack / stride + 1,
        None => 0,
    }
}

/// Sliding windows over `range` of row-major `rows` with `n` channels. Windows
/// never leave `range`.
pub fn make_windows(
    rows: &[f64],
    n: usize,
    range: Range<usize>,
    seq_len: usize,
    horizon: usize,
    stride: usize,
) -> Vec<WindowSample> {
    assert!(
        stride >= 1 && horizon >= 1 && seq_len >= 1,
        "window parameters must be positive"
    );
    let count = window_count(range.len(), seq_len, horizon, stride);
    (0..count)
        .map(|k| {
            let start = range.start + k * stride;
            let x = rows[start * n..(start + seq_len) * n].to_vec();
            let y = rows[(start + seq_len) * n..(start + seq_len + horizon) * n].to_vec();
            WindowSample {
                x: Tensor::new(&[seq_len, n], x).unwrap(),
                y: Tensor::new(&[horizon, n], y).unwrap(),
                origin_index: start,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}' (expected train|val|test)")),
        }
    }
}

/// A series split and normalized with training-split statistics.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub series: RawSeries,
    pub ranges: SplitRanges,
    pub stats: NormStats,
    pub normalized: Vec<f64>,
}

impl PreparedData {
    pub fn new(series: RawSeries, spec: &SplitSpec) -> Result<Self> {
        let ranges = split(series.len(), spec)?;
        let stats = zscore_fit(series.rows(ranges.train.clone()), series.n_vars())?;
        let normalized = zscore_apply(&series.values, &stats);
        Ok(PreparedData {
            series,
            ranges,
            stats,
            normalized,
        })
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.ranges.train.clone(),
            Split::Val => self.ranges.val.clone(),
            Split::Test => self.ranges.test.clone(),
        }
    }

    pub fn windows(
        &self,
        split: Split,
        seq_len: usize,
        horizon: usize,
        stride: usize,
    ) -> Result<Vec<WindowSample>> {
        let w = make_windows(
            &self.normalized,
            self.series.n_vars(),
            self.range(split),
            seq_len,
            horizon,
            stride,
        );
        if w.is_empty() {
            return Err(SeedError::EmptySplit(format!(
                "{split:?} split has {} rows, fewer than L + H = {}",
                self.range(split).len(),
                seq_len + horizon
            )));
        }
        Ok(w)
    }
}
