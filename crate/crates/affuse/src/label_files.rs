//! Annotation files, one frame per line with an optional header line:
//!
//! - valence/arousal: `frame_id,valence,arousal`, `-5` marks an invalid value
//! - expression: `frame_id,class`, classes `0..=7`, `-1` marks an invalid frame
//! - action units: `frame_id` then twelve `0`/`1` flags in the order
//!   AU1, AU2, AU4, AU6, AU7, AU10, AU12, AU15, AU23, AU24, AU25, AU26;
//!   `-1` masks a single unit

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use affuse_core::data::{LabelSet, CLASS_SENTINEL, VA_SENTINEL};
use affuse_core::model::{AU_NAMES, AU_UNITS};

use crate::error::{Error, Result};
use crate::features::{parse_field, records};

fn check_width(path: &Path, line: usize, rec: &csv::StringRecord, want: usize) -> Result<()> {
    if rec.len() != want {
        return Err(Error::parse(path, line, format!("expected {want} fields, found {}", rec.len())));
    }
    Ok(())
}

pub fn read_va(path: &Path, labels: &mut LabelSet) -> Result<()> {
    for (line, rec) in records(path)? {
        check_width(path, line, &rec, 3)?;
        let frame = parse_field(path, line, &rec, 0, "frame id")?;
        let v = parse_field(path, line, &rec, 1, "valence")?;
        let a = parse_field(path, line, &rec, 2, "arousal")?;
        labels
            .record_va(frame, v, a)
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
    }
    Ok(())
}

pub fn read_expr(path: &Path, labels: &mut LabelSet) -> Result<()> {
    for (line, rec) in records(path)? {
        check_width(path, line, &rec, 2)?;
        let frame = parse_field(path, line, &rec, 0, "frame id")?;
        let class = parse_field(path, line, &rec, 1, "expression class")?;
        labels
            .record_expr(frame, class)
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
    }
    Ok(())
}

pub fn read_au(path: &Path, labels: &mut LabelSet) -> Result<()> {
    for (line, rec) in records(path)? {
        check_width(path, line, &rec, AU_UNITS + 1)?;
        let frame = parse_field(path, line, &rec, 0, "frame id")?;
        let units = (1..=AU_UNITS)
            .map(|i| parse_field::<i64>(path, line, &rec, i, "action unit flag"))
            .collect::<Result<Vec<_>>>()?;
        labels
            .record_au(frame, &units)
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
    }
    Ok(())
}

fn write_lines(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
    for row in rows {
        writeln!(w, "{row}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_va(path: &Path, labels: &LabelSet) -> Result<()> {
    let rows = labels.iter().map(|(f, l)| {
        format!(
            "{f},{},{}",
            l.valence.unwrap_or(VA_SENTINEL),
            l.arousal.unwrap_or(VA_SENTINEL)
        )
    });
    write_lines(path, "frame,valence,arousal", rows)
}

pub fn write_expr(path: &Path, labels: &LabelSet) -> Result<()> {
    let rows = labels
        .iter()
        .map(|(f, l)| format!("{f},{}", l.expr.map_or(CLASS_SENTINEL, i64::from)));
    write_lines(path, "frame,expression", rows)
}

pub fn write_au(path: &Path, labels: &LabelSet) -> Result<()> {
    let header = format!("frame,{}", AU_NAMES.join(","));
    let rows = labels.iter().map(|(f, l)| {
        let flags: Vec<String> = l
            .au
            .iter()
            .map(|u| match u {
                Some(true) => "1".to_string(),
                Some(false) => "0".to_string(),
                None => CLASS_SENTINEL.to_string(),
            })
            .collect();
        format!("{f},{}", flags.join(","))
    });
    write_lines(path, &header, rows)
}
