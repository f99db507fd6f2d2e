//! Long-format CSV for metric records.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sched::{MetricRecord, TrainReport};

pub const HEADER: &str = "step,epoch,stage,metric,value";

/// Shortest `%.9g`-style rendering: 9 significant digits, trailing zeros
/// trimmed, exponent form outside `1e-5 ..= 1e9`.
pub fn fmt_g9(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim(&format!("{v:.decimals$}")).to_string()
    } else {
        format!("{}e{}{:02}", trim(mant), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn format_records(records: &[MetricRecord]) -> String {
    let mut s = String::with_capacity(32 * (records.len() + 1));
    s.push_str(HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{},{},{},{},{}", r.step, r.epoch, r.stage, r.metric, fmt_g9(r.value));
    }
    s
}

pub fn write_records(records: &[MetricRecord], path: &Path) -> Result<()> {
    std::fs::write(path, format_records(records)).map_err(|e| Error::io(path, e))
}

pub fn write_metrics(report: &TrainReport, path: &Path) -> Result<()> {
    write_records(&report.records, path)
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(HEADER) => {}
        other => {
            return Err(Error::invalid(format!(
                "metrics header is {other:?}, expected `{HEADER}`"
            )))
        }
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::invalid(format!("metrics line {}: cannot parse `{line}`", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(MetricRecord {
                step: f[0].parse().map_err(|_| bad())?,
                epoch: f[1].parse().map_err(|_| bad())?,
                stage: f[2].parse().map_err(|_| bad())?,
                metric: f[3].to_string(),
                value: f[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics(&text)
}
