use std::path::Path;

use proptest::prelude::*;
use seed_core::data::synth::{generate, SynthConfig};
use seed_core::data::{
    make_windows, parse_csv, split, window_count, write_csv, zscore_apply, zscore_fit,
    zscore_invert, CsvSchema, NanPolicy, PreparedData, Split, SplitSpec,
};
use seed_core::SeedError;

fn parse(text: &str, schema: &CsvSchema) -> seed_core::Result<seed_core::data::RawSeries> {
    parse_csv(text.as_bytes(), Path::new("mem.csv"), schema)
}

#[test]
fn parses_dates_and_columns() {
    let s = parse(
        "date,a,b\n2020-01-01 00:00:00,1,2\n2020-01-01 01:00:00,3,4\n",
        &CsvSchema::default(),
    )
    .unwrap();
    assert_eq!(s.variable_names, vec!["a", "b"]);
    assert_eq!(s.values, vec![1.0, 2.0, 3.0, 4.0]);
    assert_eq!(s.timestamps[1] - s.timestamps[0], 3600.0);
}

#[test]
fn date_column_need_not_be_first() {
    let s = parse("a,date,b\n1,0,2\n3,1,4\n", &CsvSchema::default()).unwrap();
    assert_eq!(s.variable_names, vec!["a", "b"]);
    assert_eq!(s.row(1), &[3.0, 4.0]);
}

#[test]
fn nan_cells_reject_or_drop() {
    let text = "date,a\n0,1\n1,NaN\n2,\n3,4\n";
    match parse(text, &CsvSchema::default()) {
        Err(SeedError::NonFiniteCell { line, column }) => {
            assert_eq!(line, 3);
            assert_eq!(column, "a");
        }
        other => panic!("expected NonFiniteCell, got {other:?}"),
    }
    let schema = CsvSchema {
        nan_policy: NanPolicy::DropRow,
        ..CsvSchema::default()
    };
    let s = parse(text, &schema).unwrap();
    assert_eq!(s.values, vec![1.0, 4.0]);
    assert_eq!(s.dropped_rows, 2);
}

#[test]
fn malformed_input_is_reported_with_line() {
    let err = parse("date,a\n0,1\n1,xyz\n", &CsvSchema::default()).unwrap_err();
    assert!(matches!(err, SeedError::Parse { line: 3, .. }), "{err}");
    assert!(matches!(
        parse("date,a\n1,1\n0,2\n", &CsvSchema::default()),
        Err(SeedError::Parse { .. })
    ));
    assert!(matches!(
        parse("time,a\n0,1\n", &CsvSchema::default()),
        Err(SeedError::Schema(_))
    ));
    let short = CsvSchema {
        min_rows: 5,
        ..CsvSchema::default()
    };
    assert!(matches!(
        parse("date,a\n0,1\n1,2\n", &short),
        Err(SeedError::InsufficientData {
            needed: 5,
            available: 2
        })
    ));
}

#[test]
fn stats_ignore_rows_outside_train() {
    let series = generate(&SynthConfig::new(200, 3, 4));
    let a = PreparedData::new(series.clone(), &SplitSpec::Ratio([0.7, 0.1, 0.2])).unwrap();
    let mut perturbed = series;
    let n = perturbed.n_vars();
    for v in &mut perturbed.values[140 * n..] {
        *v = *v * 100.0 + 7.0;
    }
    let b = PreparedData::new(perturbed, &SplitSpec::Ratio([0.7, 0.1, 0.2])).unwrap();
    assert_eq!(a.stats, b.stats);
}

#[test]
fn normalized_train_split_is_standard() {
    let data = PreparedData::new(
        generate(&SynthConfig::new(300, 2, 1)),
        &SplitSpec::Ratio([0.6, 0.2, 0.2]),
    )
    .unwrap();
    let n = 2;
    let train = &data.normalized[data.ranges.train.start * n..data.ranges.train.end * n];
    for c in 0..n {
        let col: Vec<f64> = train.iter().skip(c).step_by(n).copied().collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }
}

#[test]
fn window_oracle() {
    let rows: Vec<f64> = (0..40).map(f64::from).collect();
    let w = make_windows(&rows, 2, 2..18, 5, 3, 2);
    assert_eq!(w.len(), window_count(16, 5, 3, 2));
    for (k, s) in w.iter().enumerate() {
        let start = 2 + 2 * k;
        assert_eq!(s.origin_index, start);
        let expect_x: Vec<f64> = (start * 2..(start + 5) * 2).map(|v| v as f64).collect();
        let expect_y: Vec<f64> = ((start + 5) * 2..(start + 8) * 2)
            .map(|v| v as f64)
            .collect();
        assert_eq!(s.x.data(), expect_x.as_slice());
        assert_eq!(s.y.data(), expect_y.as_slice());
    }
}

#[test]
fn too_short_split_is_empty_split_error() {
    let data = PreparedData::new(
        generate(&SynthConfig::new(100, 1, 1)),
        &SplitSpec::Ratio([0.8, 0.1, 0.1]),
    )
    .unwrap();
    assert!(matches!(
        data.windows(Split::Val, 8, 4, 1),
        Err(SeedError::EmptySplit(_))
    ));
    assert!(data.windows(Split::Train, 8, 4, 1).is_ok());
}

#[test]
fn csv_write_read_round_trip() {
    let series = generate(&SynthConfig::new(30, 2, 3));
    let mut buf = Vec::new();
    write_csv(&series, &mut buf, "date").unwrap();
    let back = parse(std::str::from_utf8(&buf).unwrap(), &CsvSchema::default()).unwrap();
    assert_eq!(back.variable_names, series.variable_names);
    assert_eq!(back.timestamps, series.timestamps);
    for (a, b) in back.values.iter().zip(&series.values) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

proptest! {
    #[test]
    fn ratio_split_partitions_in_order(total in 3usize..5000, a in 1u32..98, b in 1u32..98) {
        prop_assume!(a + b < 100);
        let r = [a as f64 / 100.0, b as f64 / 100.0, (100 - a - b) as f64 / 100.0];
        let s = split(total, &SplitSpec::Ratio(r)).unwrap();
        prop_assert_eq!(s.train.start, 0);
        prop_assert_eq!(s.train.end, s.val.start);
        prop_assert_eq!(s.val.end, s.test.start);
        prop_assert_eq!(s.test.end, total);
        prop_assert_eq!(s.train.len(), (r[0] * total as f64 + 1e-9).floor() as usize);
    }

    #[test]
    fn zscore_round_trip(seed in any::<u64>(), rows in 2usize..40, n in 1usize..5) {
        let vals = seed_core::numerics::SeedRng::new(seed).normal_tensor(&[rows, n], 50.0).into_data();
        let stats = zscore_fit(&vals, n).unwrap();
        let back = zscore_invert(&zscore_apply(&vals, &stats), &stats);
        for (x, y) in vals.iter().zip(back) {
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn window_count_matches_enumeration(t in 0usize..200, l in 1usize..20, h in 1usize..10, stride in 1usize..6) {
        let rows = vec![0.0; t];
        prop_assert_eq!(make_windows(&rows, 1, 0..t, l, h, stride).len(), window_count(t, l, h, stride));
    }
}
