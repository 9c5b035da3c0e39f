use crate::error::{Result, SeedError};

/// Per-channel z-score statistics fit on training rows only.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose standard deviation was zero and got clamped to 1.
    pub clamped: Vec<usize>,
}

const MIN_STD: f64 = 1e-12;

/// Population mean/std per channel of row-major `rows` with `n` channels.
pub fn zscore_fit(rows: &[f64], n: usize) -> Result<NormStats> {
    let t = rows.len() / n.max(1);
    if n == 0 || t < 2 || rows.len() != t * n {
        return Err(SeedError::InsufficientData {
            needed: 2,
            available: t,
        });
    }
    let mut mean = vec![0.0; n];
    for row in rows.chunks(n) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let mut var = vec![0.0; n];
    for row in rows.chunks(n) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let mut clamped = Vec::new();
    let std = var
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let sd = (s / t as f64).sqrt();
            if sd < MIN_STD {
                log::warn!("channel {i} is constant on the training split; std clamped to 1");
                clamped.push(i);
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(NormStats { mean, std, clamped })
}

pub fn zscore_apply(rows: &[f64], stats: &NormStats) -> Vec<f64> {
    let n = stats.mean.len();
    rows.chunks(n)
        .flat_map(|row| {
            row.iter()
                .enumerate()
                .map(|(i, v)| (v - stats.mean[i]) / stats.std[i])
        })
        .collect()
}

pub fn zscore_invert(rows: &[f64], stats: &NormStats) -> Vec<f64> {
    let n = stats.mean.len();
    rows.chunks(n)
        .flat_map(|row| {
            row.iter()
                .enumerate()
                .map(|(i, v)| v * stats.std[i] + stats.mean[i])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_population_std() {
        let s = zscore_fit(&[1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert!((s.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((s.std[0] - 0.8165).abs() < 1e-4);
    }

    #[test]
    fn constant_channel_clamped() {
        let s = zscore_fit(&[5.0, 1.0, 5.0, 2.0, 5.0, 3.0], 2).unwrap();
        assert_eq!(s.std[0], 1.0);
        assert_eq!(s.clamped, vec![0]);
        let z = zscore_apply(&[5.0, 2.0], &s);
        assert_eq!(z[0], 0.0);
    }

    #[test]
    fn needs_two_rows() {
        assert!(zscore_fit(&[1.0, 2.0], 2).is_err());
    }
}
