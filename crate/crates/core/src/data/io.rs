//! Feature and label files.
//!
//! Binary feature layout (little-endian):
//!
//! ```text
//! magic "SEGF" | version u32 = 1 | T u32 | D u32 | T*D f64, row-major
//! ```
//!
//! CSV features hold one frame per line with `D` numbers separated by
//! commas or whitespace. Label files hold one nonnegative integer per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sequence::FeatureSequence;

const MAGIC: &[u8; 4] = b"SEGF";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Binary,
    Csv,
}

impl FeatureFormat {
    /// `.csv` and `.txt` are CSV; anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") || e.eq_ignore_ascii_case("txt") => FeatureFormat::Csv,
            _ => FeatureFormat::Binary,
        }
    }
}

fn encode_binary(rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let t = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| Error::Parameter(format!("{v} does not fit in u32")));
    let mut out = Vec::with_capacity(HEADER_LEN + t * d * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(t)?.to_le_bytes());
    out.extend_from_slice(&to_u32(d)?.to_le_bytes());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(Error::dim(format!("feature row {i}"), d, row.len()));
        }
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn decode_binary(bytes: &[u8], location: &str) -> Result<Vec<Vec<f64>>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::format(format!("{location} offset 0"), "bad magic"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(format!("{location} offset {}", bytes.len()), "truncated header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let version = word(4);
    if version != VERSION as usize {
        return Err(Error::format(format!("{location} offset 4"), format!("unsupported version {version}")));
    }
    let (t, d) = (word(8), word(12));
    let expected = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format(format!("{location} offset 8"), "implausible dimensions"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            format!("{location} offset {}", bytes.len().min(expected)),
            format!("expected {expected} bytes for {t} x {d} features, file has {}", bytes.len()),
        ));
    }
    Ok((0..t)
        .map(|r| {
            (0..d)
                .map(|c| {
                    let at = HEADER_LEN + (r * d + c) * 8;
                    f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
                })
                .collect()
        })
        .collect())
}

fn encode_csv(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn decode_csv(text: &str, location: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    Error::format(format!("{location} line {}", i + 1), format!("not a number: {s:?}"))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::format(
                    format!("{location} line {}", i + 1),
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::format(location, "no feature rows"));
    }
    Ok(rows)
}

/// Reads a `T x D` feature matrix; the format follows the file extension.
pub fn read_feature_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let location = path.display().to_string();
    match FeatureFormat::from_path(path) {
        FeatureFormat::Binary => decode_binary(&fs::read(path).map_err(|e| Error::io(path, e))?, &location),
        FeatureFormat::Csv => decode_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?, &location),
    }
}

pub fn write_feature_rows(rows: &[Vec<f64>], path: &Path) -> Result<()> {
    let bytes = match FeatureFormat::from_path(path) {
        FeatureFormat::Binary => encode_binary(rows)?,
        FeatureFormat::Csv => encode_csv(rows).into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: &Path, video_id: &str, task_id: &str) -> Result<FeatureSequence> {
    FeatureSequence::new(video_id, task_id, read_feature_rows(path)?)
}

pub fn save_features(seq: &FeatureSequence, path: &Path) -> Result<()> {
    write_feature_rows(seq.features(), path)
}

/// Parses labels without a length check.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let location = || format!("{} line {}", path.display(), i + 1);
        if line.starts_with('-') && line[1..].parse::<u64>().is_ok() {
            return Err(Error::format(location(), format!("negative label {line}")));
        }
        let v = line
            .parse::<usize>()
            .map_err(|_| Error::format(location(), format!("not a label: {line:?}")))?;
        labels.push(v);
    }
    Ok(labels)
}

/// Reads exactly `t` labels.
pub fn load_labels(path: &Path, t: usize) -> Result<Vec<usize>> {
    let labels = read_labels(path)?;
    if labels.len() != t {
        return Err(Error::Length {
            expected: t,
            actual: labels.len(),
        });
    }
    Ok(labels)
}

pub fn save_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(labels.len() * 3);
    for l in labels {
        writeln!(out, "{l}").expect("writing to a vec cannot fail");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
