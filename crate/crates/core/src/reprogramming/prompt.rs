//! Rendered text prompts built from window statistics.

use crate::error::{Result, SeedError};
use crate::numerics::Tensor;

/// Placeholders a template may use.
pub const PLACEHOLDERS: &[&str] = &[
    "domain",
    "instruction",
    "min",
    "max",
    "mean",
    "median",
    "trend",
    "lags",
];

pub const DEFAULT_TEMPLATE: &str = "Dataset: {domain}. Task: {instruction}. \
Input statistics: min {min}, max {max}, median {median}, trend {trend}, top lags {lags}.";

/// Summary statistics of one input window.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    /// Sign of the least-squares slope of the channel-mean series.
    pub trend: i8,
    /// Up to three lags with the highest autocorrelation of the channel-mean series.
    pub top_lags: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextPromptSpec {
    pub domain_text: String,
    pub instruction_text: String,
    pub stats: PromptStats,
    pub rendered: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            text: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplate {
    /// Checks that every `{name}` is a known placeholder.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            let close = after.find('}').ok_or_else(|| {
                SeedError::Config(vec!["prompt template has an unclosed '{'".into()])
            })?;
            let name = &after[..close];
            if !PLACEHOLDERS.contains(&name) {
                return Err(SeedError::Config(vec![format!(
                    "unknown prompt placeholder '{{{name}}}'"
                )]));
            }
            rest = &after[close + 1..];
        }
        Ok(PromptTemplate {
            text: text.to_string(),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SeedError::io(format!("read {}", path.display()), e))?;
        Self::parse(text.trim_end_matches('\n'))
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn render(&self, domain: &str, instruction: &str, stats: &PromptStats) -> String {
        let trend = match stats.trend {
            1 => "upward",
            -1 => "downward",
            _ => "flat",
        };
        let lags = if stats.top_lags.is_empty() {
            "none".to_string()
        } else {
            stats
                .top_lags
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        };
        self.text
            .replace("{domain}", domain)
            .replace("{instruction}", instruction)
            .replace("{min}", &format!("{:.3}", stats.min))
            .replace("{max}", &format!("{:.3}", stats.max))
            .replace("{mean}", &format!("{:.3}", stats.mean))
            .replace("{median}", &format!("{:.3}", stats.median))
            .replace("{trend}", trend)
            .replace("{lags}", &lags)
    }
}

/// Statistics of a `[L, N]` window. Autocorrelation is scanned over lags
/// `1..=L/2`; ties favour the shorter lag.
pub fn window_stats(x: &Tensor) -> PromptStats {
    let (l, n) = (x.shape()[0], x.numel() / x.shape()[0]);
    let vals = x.data();
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let mut sorted = vals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len().is_multiple_of(2) {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };

    let series: Vec<f64> = vals
        .chunks(n)
        .map(|r| r.iter().sum::<f64>() / n as f64)
        .collect();
    let trend = slope_sign(&series);
    let top_lags = top_autocorr_lags(&series, 3);
    debug_assert_eq!(series.len(), l);
    PromptStats {
        min,
        max,
        mean,
        median,
        trend,
        top_lags,
    }
}

fn slope_sign(y: &[f64]) -> i8 {
    let n = y.len();
    if n < 2 {
        return 0;
    }
    let t_mean = (n - 1) as f64 / 2.0;
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, v) in y.iter().enumerate() {
        let dt = t as f64 - t_mean;
        num += dt * (v - y_mean);
        den += dt * dt;
    }
    let slope = num / den;
    let scale = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if slope.abs() <= 1e-12 * (1.0 + scale) {
        0
    } else if slope > 0.0 {
        1
    } else {
        -1
    }
}

/// Sample autocorrelation `r(k) = sum (y_t - m)(y_{t+k} - m) / sum (y_t - m)^2`.
pub fn autocorrelation(y: &[f64], lag: usize) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let den: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    let num: f64 = (0..y.len() - lag)
        .map(|t| (y[t] - m) * (y[t + lag] - m))
        .sum();
    num / den
}

fn top_autocorr_lags(y: &[f64], k: usize) -> Vec<usize> {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let den: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    let scale = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if y.len() < 2 || den <= 1e-24 * (1.0 + scale * scale) * y.len() as f64 {
        return Vec::new();
    }
    let mut scored: Vec<(usize, f64)> = (1..=y.len() / 2)
        .map(|lag| (lag, autocorrelation(y, lag)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(lag, _)| lag).collect()
}

/// Computes window statistics and renders them into `template`.
pub fn build_text_prompt(
    x: &Tensor,
    domain: &str,
    instruction: &str,
    template: &PromptTemplate,
) -> TextPromptSpec {
    let stats = window_stats(x);
    let rendered = template.render(domain, instruction, &stats);
    TextPromptSpec {
        domain_text: domain.to_string(),
        instruction_text: instruction.to_string(),
        stats,
        rendered,
    }
}

/// Byte-level lookup of `text` in a frozen `[256, d]` embedding table.
/// Returns `None` for the empty string.
pub fn embed_text(text: &str, table: &Tensor) -> Option<Tensor> {
    if text.is_empty() {
        return None;
    }
    let d = table.shape()[1];
    let mut data = Vec::with_capacity(text.len() * d);
    for b in text.bytes() {
        data.extend_from_slice(table.row(b as usize));
    }
    Some(Tensor::new(&[text.len(), d], data).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: Vec<f64>) -> Tensor {
        let l = values.len();
        Tensor::new(&[l, 1], values).unwrap()
    }

    #[test]
    fn constant_window() {
        let s = window_stats(&Tensor::full(&[10, 2], 0.1));
        assert_eq!(s.trend, 0);
        assert_eq!((s.min, s.max, s.median), (0.1, 0.1, 0.1));
        assert!((s.mean - 0.1).abs() < 1e-15);
        assert!(s.top_lags.is_empty());
    }

    #[test]
    fn ramp_trends_up() {
        let s = window_stats(&column((0..20).map(f64::from).collect()));
        assert_eq!(s.trend, 1);
        let s = window_stats(&column((0..20).map(|v| -f64::from(v)).collect()));
        assert_eq!(s.trend, -1);
    }

    #[test]
    fn even_median_averages() {
        let s = window_stats(&column(vec![4.0, 1.0, 3.0, 2.0]));
        assert_eq!(s.median, 2.5);
    }

    #[test]
    fn template_rejects_unknown_placeholder() {
        assert!(PromptTemplate::parse("hello {nope}").is_err());
        assert!(PromptTemplate::parse("hello {min").is_err());
        assert!(PromptTemplate::parse("{min} and {lags}").is_ok());
    }

    #[test]
    fn render_fills_placeholders() {
        let t = PromptTemplate::parse("{domain}|{trend}|{lags}|{min}").unwrap();
        let stats = PromptStats {
            min: -1.23456,
            max: 0.0,
            mean: 0.0,
            median: 0.0,
            trend: -1,
            top_lags: vec![12, 24],
        };
        assert_eq!(
            t.render("energy", "", &stats),
            "energy|downward|12, 24|-1.235"
        );
    }

    #[test]
    fn byte_lookup() {
        let table = Tensor::new(&[256, 2], (0..512).map(f64::from).collect()).unwrap();
        assert!(embed_text("", &table).is_none());
        let e = embed_text("A", &table).unwrap();
        assert_eq!(e.shape(), &[1, 2]);
        assert_eq!(e.data(), table.row(65));
        assert_eq!(embed_text("hi", &table), embed_text("hi", &table));
    }
}
