//! Human- and machine-readable renderings of evaluation reports.
//!
//! Both forms print every number through [`fmt_f64`], so the table and the
//! key-value file always agree digit for digit.

use std::fs;
use std::path::Path;

use affuse_core::objectives::EvalReport;
use affuse_core::train::AblationRow;

use crate::error::{Error, Result};
use crate::numfmt::fmt_f64;

pub const COLUMNS: [&str; 5] = ["Valence", "Arousal", "FER", "AU", "Score"];
pub const KEYS: [&str; 5] = ["ccc_v", "ccc_a", "f1_expr", "f1_au", "score"];

fn values(r: &EvalReport) -> [f64; 5] {
    [r.ccc_v, r.ccc_a, r.f1_expr, r.f1_au, r.score]
}

fn table(label_header: Option<&str>, rows: &[(Option<String>, EvalReport)]) -> String {
    let mut cells: Vec<Vec<String>> = Vec::new();
    let mut header: Vec<String> = label_header.map(str::to_string).into_iter().collect();
    header.extend(COLUMNS.iter().map(|c| c.to_string()));
    cells.push(header);
    for (label, r) in rows {
        let mut row: Vec<String> = label.iter().cloned().collect();
        row.extend(values(r).iter().map(|v| fmt_f64(*v)));
        cells.push(row);
    }
    let widths: Vec<usize> = (0..cells[0].len())
        .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| {
                if i == 0 && label_header.is_some() {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// A header line and one row with the five columns.
pub fn render_table(report: &EvalReport) -> String {
    table(None, &[(None, *report)])
}

/// One `key=value` line per column.
pub fn render_kv(report: &EvalReport) -> String {
    KEYS.iter()
        .zip(values(report))
        .map(|(k, v)| format!("{k}={}\n", fmt_f64(v)))
        .collect()
}

pub fn render_ablation(rows: &[AblationRow]) -> String {
    let rows: Vec<(Option<String>, EvalReport)> = rows.iter().map(|r| (Some(r.label()), r.report)).collect();
    table(Some("Features"), &rows)
}

pub fn render_ablation_kv(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    for (rank, row) in rows.iter().enumerate() {
        out.push_str(&format!("row{}.features={}\n", rank + 1, row.label()));
        for (k, v) in KEYS.iter().zip(values(&row.report)) {
            out.push_str(&format!("row{}.{k}={}\n", rank + 1, fmt_f64(v)));
        }
    }
    out
}

/// Parses a file written by [`render_kv`].
pub fn parse_kv(path: &Path, text: &str) -> Result<EvalReport> {
    let mut found = [None; 5];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, i + 1, "expected key=value"))?;
        let slot = KEYS
            .iter()
            .position(|key| *key == k.trim())
            .ok_or_else(|| Error::parse(path, i + 1, format!("unknown key `{}`", k.trim())))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("`{}` is not a number", v.trim())))?;
        found[slot] = Some(v);
    }
    let get = |i: usize| found[i].ok_or_else(|| Error::format(path, format!("missing key `{}`", KEYS[i])));
    Ok(EvalReport {
        ccc_v: get(0)?,
        ccc_a: get(1)?,
        f1_expr: get(2)?,
        f1_au: get(3)?,
        score: get(4)?,
    })
}

pub fn write_kv(path: &Path, report: &EvalReport) -> Result<()> {
    fs::write(path, render_kv(report)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_and_kv_carry_the_same_digits() {
        let r = EvalReport::new(0.414, 0.425, 0.249, 0.433);
        let table = render_table(&r);
        let kv = render_kv(&r);
        for line in kv.lines() {
            let value = line.split_once('=').unwrap().1;
            assert!(table.contains(value), "{value} missing from\n{table}");
        }
        assert!(kv.contains("score=1.10150"));
    }

    #[test]
    fn kv_round_trips() {
        let r = EvalReport::new(0.5, -0.25, 0.125, 0.75);
        assert_eq!(parse_kv(Path::new("r"), &render_kv(&r)).unwrap(), r);
    }
}
