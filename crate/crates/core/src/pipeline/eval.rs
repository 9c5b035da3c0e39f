//! Forecast metrics and the naive last-value baseline.

use rayon::prelude::*;

use crate::data::{zscore_invert, NormStats, WindowSample};
use crate::error::{Result, SeedError};
use crate::model::SeedModel;
use crate::numerics::Tensor;

/// Windows per forward pass during evaluation.
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub n_samples: usize,
}

/// MSE and MAE pooled over every scalar of every `(prediction, target)` pair,
/// summed in order.
pub fn compute_metrics(preds: &[Tensor], targets: &[&Tensor]) -> Result<Metrics> {
    if preds.is_empty() {
        return Err(SeedError::EmptySplit("no samples to score".into()));
    }
    if preds.len() != targets.len() {
        return Err(SeedError::shape(
            "compute_metrics",
            &[preds.len()],
            &[targets.len()],
        ));
    }
    let (mut sq, mut abs, mut count) = (0.0, 0.0, 0usize);
    for (p, y) in preds.iter().zip(targets) {
        if p.shape() != y.shape() {
            return Err(SeedError::shape("compute_metrics", p.shape(), y.shape()));
        }
        for (a, b) in p.data().iter().zip(y.data()) {
            let e = a - b;
            sq += e * e;
            abs += e.abs();
        }
        count += p.numel();
    }
    Ok(Metrics {
        mse: sq / count as f64,
        mae: abs / count as f64,
        n_samples: preds.len(),
    })
}

/// Model forecasts for every window, computed in parallel chunks and
/// returned in window order.
pub fn predict_windows(model: &SeedModel, windows: &[WindowSample]) -> Result<Vec<Tensor>> {
    let chunks: Vec<Result<Vec<Tensor>>> = windows
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let xs: Vec<&Tensor> = chunk.iter().map(|w| &w.x).collect();
            model.predict(&xs)
        })
        .collect();
    let mut out = Vec::with_capacity(windows.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Metrics of `model` over `windows`. With `stats`, predictions and targets
/// are mapped back to original units first.
pub fn evaluate_windows(
    model: &SeedModel,
    windows: &[WindowSample],
    stats: Option<&NormStats>,
) -> Result<Metrics> {
    if windows.is_empty() {
        return Err(SeedError::EmptySplit("no windows to evaluate".into()));
    }
    let preds = predict_windows(model, windows)?;
    score(preds, windows, stats)
}

/// Repeats the last observed row of each window for all `horizon` steps.
pub fn naive_forecast(x: &Tensor, horizon: usize) -> Tensor {
    let l = x.shape()[0];
    let last = x.row(l - 1);
    let data = (0..horizon).flat_map(|_| last.iter().copied()).collect();
    Tensor::new(&[horizon, last.len()], data).expect("non-empty window")
}

pub fn naive_metrics(windows: &[WindowSample], stats: Option<&NormStats>) -> Result<Metrics> {
    let preds = windows
        .iter()
        .map(|w| naive_forecast(&w.x, w.y.shape()[0]))
        .collect();
    score(preds, windows, stats)
}

fn score(
    preds: Vec<Tensor>,
    windows: &[WindowSample],
    stats: Option<&NormStats>,
) -> Result<Metrics> {
    match stats {
        None => {
            let targets: Vec<&Tensor> = windows.iter().map(|w| &w.y).collect();
            compute_metrics(&preds, &targets)
        }
        Some(s) => {
            let invert = |t: &Tensor| Tensor::new(t.shape(), zscore_invert(t.data(), s));
            let p: Vec<Tensor> = preds.iter().map(invert).collect::<Result<_>>()?;
            let y: Vec<Tensor> = windows
                .iter()
                .map(|w| invert(&w.y))
                .collect::<Result<_>>()?;
            compute_metrics(&p, &y.iter().collect::<Vec<_>>())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_offset() {
        let y = Tensor::new(&[2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let m = compute_metrics(std::slice::from_ref(&y), &[&y]).unwrap();
        assert_eq!((m.mse, m.mae, m.n_samples), (0.0, 0.0, 1));
        let shifted = Tensor::new(&[2, 2], y.data().iter().map(|v| v + 1.0).collect()).unwrap();
        let m = compute_metrics(&[shifted], &[&y]).unwrap();
        assert_eq!((m.mse, m.mae), (1.0, 1.0));
    }

    #[test]
    fn empty_is_error() {
        assert!(matches!(
            compute_metrics(&[], &[]),
            Err(SeedError::EmptySplit(_))
        ));
    }

    #[test]
    fn naive_repeats_last_row() {
        let x = Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(naive_forecast(&x, 2).data(), &[5.0, 6.0, 5.0, 6.0]);
    }
}
