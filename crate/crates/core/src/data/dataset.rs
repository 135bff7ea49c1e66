//! Binary container for labelled window pairs.
//!
//! Layout (little-endian): magic `ATXW`, `u32` version, `u32` window
//! length, `u64` window count, then per window a `u16` subject-id length,
//! the UTF-8 id, a label byte (0 non-stress, 1 stress) and the ECG and EDA
//! blocks of `f64`.

use std::fs;
use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::signal::{BinaryLabel, WindowPair};

pub const DATASET_MAGIC: [u8; 4] = *b"ATXW";
pub const DATASET_VERSION: u32 = 1;

pub fn encode_dataset(windows: &[WindowPair]) -> Result<Vec<u8>> {
    let len = windows.first().map_or(0, |w| w.ecg.len());
    let mut out = Vec::with_capacity(20 + windows.len() * (16 * len + 16));
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(len as u32).to_le_bytes());
    out.extend_from_slice(&(windows.len() as u64).to_le_bytes());
    for w in windows {
        if w.ecg.len() != len || w.eda.len() != len {
            return Err(Error::shape("write_dataset", "windows differ in length"));
        }
        let id = w.subject_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| Error::shape("write_dataset", "subject id too long"))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        out.push(w.label.class_index() as u8);
        for v in w.ecg.iter().chain(&w.eda) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, windows: &[WindowPair]) -> Result<()> {
    write_atomic(path, &encode_dataset(windows)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N).map(|s| s.try_into().unwrap())
    }
}

pub fn decode_dataset(bytes: &[u8]) -> std::result::Result<Vec<WindowPair>, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let truncated = || "file is truncated".to_string();
    if r.array::<4>().ok_or_else(truncated)? != DATASET_MAGIC {
        return Err("not a window dataset (bad magic)".into());
    }
    let version = u32::from_le_bytes(r.array().ok_or_else(truncated)?);
    if version != DATASET_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let len = u32::from_le_bytes(r.array().ok_or_else(truncated)?) as usize;
    let count = u64::from_le_bytes(r.array().ok_or_else(truncated)?);
    let mut out = Vec::new();
    for _ in 0..count {
        let id_len = u16::from_le_bytes(r.array().ok_or_else(truncated)?) as usize;
        let id = std::str::from_utf8(r.take(id_len).ok_or_else(truncated)?)
            .map_err(|_| "subject id is not UTF-8".to_string())?
            .to_string();
        let label = r.take(1).ok_or_else(truncated)?[0];
        let label = BinaryLabel::from_class_index(label as usize).ok_or_else(|| format!("bad label byte {label}"))?;
        let mut block = || -> std::result::Result<Vec<f64>, String> {
            let raw = r.take(8 * len).ok_or_else(truncated)?;
            Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let ecg = block()?;
        let eda = block()?;
        out.push(WindowPair {
            subject_id: id,
            ecg,
            eda,
            label,
        });
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<WindowPair>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes).map_err(|d| Error::format(path, d))
}
