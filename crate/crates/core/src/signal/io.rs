//! On-disk recordings.
//!
//! Directory layout: `<root>/<condition>/<class_token>.<ext>`. Text files
//! (`.txt`, `.csv`) hold one decimal float per line. Binary files (`.sfd`,
//! `.bin`) start with a 16-byte header: magic `SFD1`, `u32` sample count,
//! `u32` sample rate in Hz, four reserved zero bytes; then the samples as
//! little-endian `f64`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{segment, zscore_normalize, Dataset, Domain, TimeSeries};
use crate::{Error, Result};

/// Class tokens in label order: healthy, then fault type and size in mils.
pub const CWRU_CLASS_TOKENS: [&str; 10] = [
    "NA", "IF-7", "BF-7", "OF-7", "IF-14", "BF-14", "OF-14", "IF-21", "BF-21", "OF-21",
];

const MAGIC: &[u8; 4] = b"SFD1";
const HEADER_LEN: usize = 16;

pub fn class_label(token: &str) -> Result<usize> {
    CWRU_CLASS_TOKENS
        .iter()
        .position(|t| *t == token)
        .ok_or_else(|| Error::Label(format!("unknown class token {token:?}")))
}

pub fn class_token(label: usize) -> Result<&'static str> {
    CWRU_CLASS_TOKENS
        .get(label)
        .copied()
        .ok_or_else(|| Error::Label(format!("no class token for label {label}")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub window_len: usize,
    /// Used for text files, which carry no header.
    pub default_sample_rate: f64,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            window_len: 2048,
            default_sample_rate: 12_000.0,
        }
    }
}

/// Windows grouped by operating condition (directory name).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub conditions: BTreeMap<String, Dataset>,
    pub sample_rate: f64,
}

impl Corpus {
    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    pub fn condition(&self, name: &str) -> Option<&Dataset> {
        self.conditions.get(name)
    }
}

fn is_text(ext: &str) -> bool {
    matches!(ext, "txt" | "csv")
}

fn is_binary(ext: &str) -> bool {
    matches!(ext, "sfd" | "bin")
}

pub fn load_recording(path: &Path, default_sample_rate: f64) -> Result<TimeSeries> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase();
    if is_binary(&ext) {
        read_binary(path)
    } else if is_text(&ext) {
        read_text(path, default_sample_rate)
    } else {
        Err(Error::format(path, format!("unsupported extension {ext:?}")))
    }
}

fn read_text(path: &Path, sample_rate: f64) -> Result<TimeSeries> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: not a number: {line:?}", i + 1)))?;
        if !v.is_finite() {
            return Err(Error::format(path, format!("line {}: non-finite value", i + 1)));
        }
        values.push(v);
    }
    TimeSeries::new(values, sample_rate).map_err(|e| Error::format(path, e.to_string()))
}

fn read_binary(path: &Path) -> Result<TimeSeries> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "missing SFD1 header"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let rate = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    if body.len() != count * 8 {
        return Err(Error::format(
            path,
            format!("header declares {count} samples but body holds {} bytes", body.len()),
        ));
    }
    if rate == 0 {
        return Err(Error::format(path, "sample rate is zero"));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    TimeSeries::new(values, rate as f64).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_recording_binary(path: &Path, series: &TimeSeries) -> Result<()> {
    let count = u32::try_from(series.len())
        .map_err(|_| Error::format(path, "recording too long for a u32 count"))?;
    let rate = series.sample_rate.round();
    if rate < 1.0 || rate > u32::MAX as f64 || rate != series.sample_rate {
        return Err(Error::format(path, "sample rate must be a whole number of Hz"));
    }
    let mut bytes = Vec::with_capacity(HEADER_LEN + series.len() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&count.to_le_bytes());
    bytes.extend_from_slice(&(rate as u32).to_le_bytes());
    bytes.extend_from_slice(&[0u8; 4]);
    for v in &series.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_recording_text(path: &Path, series: &TimeSeries) -> Result<()> {
    let mut out = String::with_capacity(series.len() * 24);
    for v in &series.values {
        // `{:?}` round-trips f64 exactly.
        out.push_str(&format!("{v:?}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    paths.sort();
    Ok(paths)
}

/// Loads every condition directory under `root`. Each recording is
/// normalized, then segmented into windows labelled by its class token.
/// Files with other extensions are ignored.
pub fn load_dataset(root: &Path, layout: &Layout) -> Result<Corpus> {
    let mut conditions = BTreeMap::new();
    let mut max_label = None;
    let mut sample_rate = None;
    for cond_dir in sorted_entries(root)? {
        if !cond_dir.is_dir() {
            continue;
        }
        let name = cond_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::format(&cond_dir, "condition name is not UTF-8"))?
            .to_string();
        let mut samples = Vec::new();
        for file in sorted_entries(&cond_dir)? {
            let ext = file
                .extension()
                .and_then(|e| e.to_str())
                .unwrap_or_default()
                .to_ascii_lowercase();
            if !file.is_file() || !(is_text(&ext) || is_binary(&ext)) {
                continue;
            }
            let token = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let label = class_label(token)?;
            let series = load_recording(&file, layout.default_sample_rate)?;
            match sample_rate {
                None => sample_rate = Some(series.sample_rate),
                Some(r) if r != series.sample_rate => {
                    return Err(Error::format(
                        &file,
                        format!("sample rate {} differs from {r}", series.sample_rate),
                    ))
                }
                _ => {}
            }
            let normalized = zscore_normalize(&series)?;
            samples.extend(segment(&normalized, layout.window_len, Some(label), Domain::Source)?);
            max_label = max_label.max(Some(label));
        }
        conditions.insert(name, samples);
    }
    let num_classes = max_label.map_or(0, |l| l + 1);
    let conditions = conditions
        .into_iter()
        .map(|(k, s)| Dataset::new(s, num_classes).map(|d| (k, d)))
        .collect::<Result<_>>()?;
    Ok(Corpus {
        conditions,
        sample_rate: sample_rate.unwrap_or(layout.default_sample_rate),
    })
}
