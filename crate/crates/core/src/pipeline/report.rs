//! Comparison tables: CSV plus an aligned plain-text rendering.

use crate::error::{Result, SeedError};

pub const REPORT_COLUMNS: [&str; 7] = [
    "dataset",
    "variant",
    "mse",
    "mae",
    "train_time_s",
    "params_trainable",
    "params_frozen",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub variant: String,
    pub mse: f64,
    pub mae: f64,
    pub train_time_s: f64,
    pub params_trainable: usize,
    pub params_frozen: usize,
}

impl ReportRow {
    fn cells(&self) -> [String; 7] {
        [
            self.dataset.clone(),
            self.variant.clone(),
            format!("{:.3}", self.mse),
            format!("{:.3}", self.mae),
            format!("{:.2}", self.train_time_s),
            self.params_trainable.to_string(),
            self.params_frozen.to_string(),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub csv: String,
    pub table: String,
}

pub fn emit_report(rows: &[ReportRow]) -> Result<Report> {
    if rows.is_empty() {
        return Err(SeedError::Contract(
            "a report needs at least one row".into(),
        ));
    }
    let cells: Vec<[String; 7]> = rows.iter().map(ReportRow::cells).collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| SeedError::Contract(format!("csv encoding: {e}"));
    w.write_record(REPORT_COLUMNS).map_err(csv_err)?;
    for c in &cells {
        w.write_record(c).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| SeedError::Contract(format!("csv encoding: {e}")))?;
    let csv = String::from_utf8(bytes).expect("csv output is utf-8");

    let mut widths: Vec<usize> = REPORT_COLUMNS.iter().map(|h| h.len()).collect();
    for c in &cells {
        for (w, cell) in widths.iter_mut().zip(c) {
            *w = (*w).max(cell.chars().count());
        }
    }
    // text columns left-aligned, numbers right-aligned
    let line = |row: Vec<&str>| -> String {
        let parts: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, &w))| {
                if i < 2 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut table = line(REPORT_COLUMNS.to_vec());
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    table.push_str(&(rule.join("  ") + "\n"));
    for c in &cells {
        table.push_str(&line(c.iter().map(String::as_str).collect()));
    }
    Ok(Report { csv, table })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variant: &str) -> ReportRow {
        ReportRow {
            dataset: "synthetic".into(),
            variant: variant.into(),
            mse: 0.33049,
            mae: 0.3786,
            train_time_s: 1.5,
            params_trainable: 100,
            params_frozen: 2000,
        }
    }

    #[test]
    fn single_row_csv() {
        let r = emit_report(&[row("full")]).unwrap();
        let lines: Vec<&str> = r.csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "dataset,variant,mse,mae,train_time_s,params_trainable,params_frozen"
        );
        assert_eq!(lines[1], "synthetic,full,0.330,0.379,1.50,100,2000");
    }

    #[test]
    fn table_widths_fit_longest_cell() {
        let r = emit_report(&[row("full"), row("a_much_longer_variant_name")]).unwrap();
        let lines: Vec<&str> = r.table.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
        assert!(lines[3].starts_with("synthetic  a_much_longer_variant_name"));
        assert!(lines[2].starts_with("synthetic  full                       "));
    }

    #[test]
    fn empty_is_error() {
        assert!(emit_report(&[]).is_err());
    }
}
