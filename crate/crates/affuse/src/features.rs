//! Per-stream feature files.
//!
//! Text: one frame per line, `frame_id,v0,...,v{d-1}`, decimal reals written
//! in shortest round-trip form. A first line whose leading field is not an
//! integer is treated as a header and skipped.
//!
//! Binary, all little-endian:
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 8    | magic `AFFFEAT\0`              |
//! | 8      | 4    | version `u32` = 1              |
//! | 12     | 4    | dimension `u32`                |
//! | 16     | 8    | frame count `u64`              |
//! | 24     | ...  | per frame: id `u64`, `dim × f64` |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use affuse_core::data::FeatureBank;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"AFFFEAT\0";
pub const FEATURE_VERSION: u32 = 1;

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file))
}

/// Records with their 1-based line numbers, skipping a leading header line.
pub(crate) fn records(path: &Path) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut out = Vec::new();
    for (i, rec) in csv_reader(path)?.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if i == 0 && rec.get(0).is_some_and(|f| f.parse::<u64>().is_err()) {
            continue;
        }
        out.push((line, rec));
    }
    Ok(out)
}

pub(crate) fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, rec: &csv::StringRecord, i: usize, what: &str) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| Error::parse(path, line, format!("missing {what}")))?;
    raw.parse()
        .map_err(|_| Error::parse(path, line, format!("{what} `{raw}` is not a valid number")))
}

pub fn read_text(path: &Path, stream: &str, bank: &mut FeatureBank) -> Result<()> {
    let dim = bank.spec(stream)?.dim;
    for (line, rec) in records(path)? {
        if rec.len() != dim + 1 {
            return Err(Error::parse(
                path,
                line,
                format!("expected frame id and {dim} values, found {} fields", rec.len()),
            ));
        }
        let frame: u64 = parse_field(path, line, &rec, 0, "frame id")?;
        let values = (1..=dim)
            .map(|i| parse_field::<f64>(path, line, &rec, i, "feature value"))
            .collect::<Result<Vec<_>>>()?;
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::parse(path, line, format!("non-finite feature value {v}")));
        }
        bank.insert(stream, frame, values)
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, stream: &str, bank: &FeatureBank) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = String::new();
    for (frame, values) in bank.frames(stream)? {
        line.clear();
        line.push_str(&frame.to_string());
        for v in values {
            line.push(',');
            line.push_str(&format!("{v}"));
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn take<const N: usize>(r: &mut impl Read, path: &Path, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(path, format!("truncated while reading {what}")))?;
    Ok(buf)
}

pub fn read_binary(path: &Path, stream: &str, bank: &mut FeatureBank) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    if &take::<8>(&mut r, path, "magic")? != FEATURE_MAGIC {
        return Err(Error::format(path, "not a binary feature file (bad magic)"));
    }
    let version = u32::from_le_bytes(take(&mut r, path, "version")?);
    if version != FEATURE_VERSION {
        return Err(Error::format(path, format!("unsupported feature file version {version}")));
    }
    let dim = u32::from_le_bytes(take(&mut r, path, "dimension")?) as usize;
    let expected = bank.spec(stream)?.dim;
    if dim != expected {
        return Err(Error::format(
            path,
            format!("file holds {dim}-dimensional vectors, stream `{stream}` declares {expected}"),
        ));
    }
    let count = u64::from_le_bytes(take(&mut r, path, "frame count")?);
    for k in 0..count {
        let frame = u64::from_le_bytes(take(&mut r, path, "frame id")?);
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            values.push(f64::from_le_bytes(take(&mut r, path, "feature value")?));
        }
        bank.insert(stream, frame, values)
            .map_err(|e| Error::format(path, format!("record {k}: {e}")))?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after the last frame"));
    }
    Ok(())
}

pub fn write_binary(path: &Path, stream: &str, bank: &FeatureBank) -> Result<()> {
    let dim = bank.spec(stream)?.dim;
    let count = bank.frames(stream)?.count();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(FEATURE_MAGIC)?;
    put(&FEATURE_VERSION.to_le_bytes())?;
    put(&(dim as u32).to_le_bytes())?;
    put(&(count as u64).to_le_bytes())?;
    for (frame, values) in bank.frames(stream)? {
        put(&frame.to_le_bytes())?;
        for v in values {
            put(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
