use std::io::Read;
use std::path::Path;

use chrono::NaiveDateTime;

use super::RawSeries;
use crate::error::{Result, SeedError};

/// What to do with a row holding a NaN, infinite or empty cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NanPolicy {
    #[default]
    Reject,
    DropRow,
}

impl std::str::FromStr for NanPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "reject" => Ok(NanPolicy::Reject),
            "drop" | "drop-row" | "drop_row" => Ok(NanPolicy::DropRow),
            other => Err(format!(
                "unknown nan policy '{other}' (expected reject|drop-row)"
            )),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CsvSchema {
    /// Name of the timestamp / index column.
    pub date_column: String,
    pub nan_policy: NanPolicy,
    /// Fewer surviving rows than this is an insufficient-data error.
    pub min_rows: usize,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            date_column: "date".into(),
            nan_policy: NanPolicy::Reject,
            min_rows: 1,
        }
    }
}

const DATE_FORMATS: &[&str] = &[
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M:%S",
    "%Y/%m/%d %H:%M",
];

/// Parses a timestamp cell: plain numbers are indices, otherwise a datetime
/// (seconds since the Unix epoch) or a bare date.
fn parse_instant(cell: &str) -> Option<f64> {
    let cell = cell.trim();
    if let Ok(v) = cell.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    for fmt in DATE_FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(cell, fmt) {
            return Some(dt.and_utc().timestamp() as f64);
        }
    }
    chrono::NaiveDate::parse_from_str(cell, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp() as f64)
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<RawSeries> {
    let file = std::fs::File::open(path)
        .map_err(|e| SeedError::io(format!("open {}", path.display()), e))?;
    parse_csv(file, path, schema)
}

/// Parses CSV text; `origin` only labels error messages.
pub fn parse_csv(reader: impl Read, origin: &Path, schema: &CsvSchema) -> Result<RawSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let parse_err = |line: usize, msg: String| SeedError::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let date_idx = headers
        .iter()
        .position(|h| *h == schema.date_column)
        .ok_or_else(|| {
            SeedError::Schema(format!(
                "no '{}' column in header {headers:?}",
                schema.date_column
            ))
        })?;
    let variable_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != date_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if variable_names.is_empty() {
        return Err(SeedError::Schema("no value columns".into()));
    }
    let n = variable_names.len();

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut dropped_rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != headers.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        let ts = parse_instant(&rec[date_idx]).ok_or_else(|| {
            parse_err(line, format!("unparseable timestamp '{}'", &rec[date_idx]))
        })?;
        let mut row = Vec::with_capacity(n);
        let mut bad_cell = None;
        for (i, cell) in rec.iter().enumerate() {
            if i == date_idx {
                continue;
            }
            let cell = cell.trim();
            let v = if cell.is_empty() {
                f64::NAN
            } else {
                cell.parse::<f64>().map_err(|_| {
                    parse_err(
                        line,
                        format!("column '{}': cannot parse '{cell}'", headers[i]),
                    )
                })?
            };
            if !v.is_finite() && bad_cell.is_none() {
                bad_cell = Some(headers[i].clone());
            }
            row.push(v);
        }
        if let Some(column) = bad_cell {
            match schema.nan_policy {
                NanPolicy::Reject => return Err(SeedError::NonFiniteCell { line, column }),
                NanPolicy::DropRow => {
                    dropped_rows += 1;
                    continue;
                }
            }
        }
        if let Some(&prev) = timestamps.last() {
            if ts <= prev {
                return Err(parse_err(
                    line,
                    "timestamps must be strictly increasing".into(),
                ));
            }
        }
        timestamps.push(ts);
        values.extend(row);
    }
    if dropped_rows > 0 {
        log::warn!(
            "{}: dropped {dropped_rows} rows with non-finite cells",
            origin.display()
        );
    }
    if timestamps.len() < schema.min_rows {
        return Err(SeedError::InsufficientData {
            needed: schema.min_rows,
            available: timestamps.len(),
        });
    }
    Ok(RawSeries {
        timestamps,
        values,
        variable_names,
        dropped_rows,
    })
}

/// Writes a series back out with an hourly `date` column when timestamps are
/// epoch seconds, or the raw index otherwise.
pub fn write_csv(series: &RawSeries, out: impl std::io::Write, date_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io_err = |e: csv::Error| SeedError::io("write csv", std::io::Error::other(e));
    let mut header = vec![date_column.to_string()];
    header.extend(series.variable_names.iter().cloned());
    w.write_record(&header).map_err(io_err)?;
    for t in 0..series.len() {
        let mut rec = vec![format_instant(series.timestamps[t])];
        rec.extend(series.row(t).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(|e| SeedError::io("flush csv", e))?;
    Ok(())
}

fn format_instant(ts: f64) -> String {
    if ts >= 1e8 {
        if let Some(dt) = chrono::DateTime::from_timestamp(ts as i64, 0) {
            return dt.naive_utc().format("%Y-%m-%d %H:%M:%S").to_string();
        }
    }
    ts.to_string()
}
