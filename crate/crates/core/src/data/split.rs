use std::ops::Range;

use crate::error::{Result, SeedError};

#[derive(Clone, Debug, PartialEq)]
pub enum SplitSpec {
    /// Train/val/test fractions; rounding remainder goes to test.
    Ratio([f64; 3]),
    /// 12/4/4 months of hourly rows.
    EttHourly,
    /// 12/4/4 months of 15-minute rows.
    EttMinutely,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if let SplitSpec::Ratio(r) = self {
            let mut errs = Vec::new();
            if r.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
                errs.push(format!("split ratios {r:?} must each lie in (0, 1)"));
            }
            if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                errs.push(format!("split ratios {r:?} must sum to 1"));
            }
            if !errs.is_empty() {
                return Err(SeedError::Config(errs));
            }
        }
        Ok(())
    }

    fn fixed_counts(&self) -> Option<[usize; 3]> {
        match self {
            SplitSpec::Ratio(_) => None,
            SplitSpec::EttHourly => Some([12 * 30 * 24, 4 * 30 * 24, 4 * 30 * 24]),
            SplitSpec::EttMinutely => Some([12 * 30 * 24 * 4, 4 * 30 * 24 * 4, 4 * 30 * 24 * 4]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Contiguous, ordered train/val/test row ranges for a series of `total` rows.
pub fn split(total: usize, spec: &SplitSpec) -> Result<SplitRanges> {
    spec.validate()?;
    let [a, b, c] = match (spec, spec.fixed_counts()) {
        (_, Some(counts)) => {
            let needed: usize = counts.iter().sum();
            if total < needed {
                return Err(SeedError::InsufficientData {
                    needed,
                    available: total,
                });
            }
            counts
        }
        (SplitSpec::Ratio(r), None) => {
            // small slack keeps e.g. 0.29 * 100 from flooring to 28
            let train = (r[0] * total as f64 + 1e-9).floor() as usize;
            let val = (r[1] * total as f64 + 1e-9).floor() as usize;
            [train, val, total - train - val]
        }
        _ => unreachable!(),
    };
    Ok(SplitRanges {
        train: 0..a,
        val: a..a + b,
        test: a + b..a + b + c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_seventy_ten_twenty() {
        let s = split(100, &SplitSpec::Ratio([0.7, 0.1, 0.2])).unwrap();
        assert_eq!((s.train, s.val, s.test), (0..70, 70..80, 80..100));
    }

    #[test]
    fn remainder_goes_to_test() {
        let s = split(4, &SplitSpec::Ratio([0.5, 0.25, 0.25])).unwrap();
        assert_eq!((s.train, s.val, s.test), (0..2, 2..3, 3..4));
        let s = split(7, &SplitSpec::Ratio([0.5, 0.25, 0.25])).unwrap();
        assert_eq!((s.train, s.val, s.test), (0..3, 3..4, 4..7));
    }

    #[test]
    fn ett_hourly_boundaries() {
        let s = split(17420, &SplitSpec::EttHourly).unwrap();
        assert_eq!(
            (s.train, s.val, s.test),
            (0..8640, 8640..11520, 11520..14400)
        );
        let s = split(69680, &SplitSpec::EttMinutely).unwrap();
        assert_eq!(
            (s.train, s.val, s.test),
            (0..34560, 34560..46080, 46080..57600)
        );
    }

    #[test]
    fn ett_too_short() {
        assert!(matches!(
            split(10_000, &SplitSpec::EttHourly),
            Err(SeedError::InsufficientData { needed: 14400, .. })
        ));
    }

    #[test]
    fn invalid_ratios() {
        assert!(split(10, &SplitSpec::Ratio([0.5, 0.5, 0.0])).is_err());
        assert!(split(10, &SplitSpec::Ratio([0.5, 0.3, 0.3])).is_err());
    }
}
