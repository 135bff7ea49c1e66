//! Loading recorded signals from per-subject CSV columns listed in a
//! JSON manifest.
//!
//! Each signal file holds one value per line; the labels file holds one
//! protocol condition code per line (0 other, 1 neutral, 2 stress,
//! 3 amusement). Relative paths are resolved against the manifest's
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::error::{Error, Result};
use crate::par;
use crate::signal::{Condition, Modality, SignalRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectFiles {
    pub subject_id: String,
    pub ecg_file: PathBuf,
    pub eda_file: PathBuf,
    pub labels_file: PathBuf,
    pub fs_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestManifest {
    pub dataset_name: String,
    pub subjects: Vec<SubjectFiles>,
}

impl IngestManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Parse a single-column numeric CSV. Blank lines are skipped.
pub fn read_column(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: `{t}` is not a number", i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

fn read_conditions(path: &Path, subject: &str) -> Result<Vec<Condition>> {
    let raw = read_column(path)?;
    let mut unknown = 0usize;
    let out = raw
        .iter()
        .map(|&v| {
            let code = if v.fract() == 0.0 { Condition::from_code(v as i64) } else { None };
            code.unwrap_or_else(|| {
                unknown += 1;
                Condition::Other
            })
        })
        .collect();
    if unknown > 0 {
        warn!("subject `{subject}`: {unknown} unknown condition codes treated as `other`");
    }
    Ok(out)
}

fn load_subject(base: &Path, s: &SubjectFiles) -> Result<[SignalRecord; 2]> {
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let ecg = read_column(&resolve(&s.ecg_file))?;
    let eda = read_column(&resolve(&s.eda_file))?;
    let labels = read_conditions(&resolve(&s.labels_file), &s.subject_id)?;
    for (name, n) in [("ECG", ecg.len()), ("EDA", eda.len())] {
        if n != labels.len() {
            return Err(Error::Subject {
                subject: s.subject_id.clone(),
                detail: format!("{name} has {n} samples but the labels file has {}", labels.len()),
            });
        }
    }
    Ok([
        SignalRecord::new(s.subject_id.clone(), Modality::Ecg, s.fs_hz, ecg, labels.clone())?,
        SignalRecord::new(s.subject_id.clone(), Modality::Eda, s.fs_hz, eda, labels)?,
    ])
}

/// Load every subject of `manifest`; `base` is the directory relative
/// paths are resolved against.
pub fn ingest(manifest: &IngestManifest, base: &Path) -> Result<Vec<SignalRecord>> {
    let loaded = par::map(&manifest.subjects, |s| load_subject(base, s));
    let mut out = Vec::with_capacity(2 * loaded.len());
    for r in loaded {
        out.extend(r?);
    }
    Ok(out)
}

fn column_text(vals: impl Iterator<Item = String>) -> String {
    let mut out = String::new();
    for v in vals {
        out.push_str(&v);
        out.push('\n');
    }
    out
}

/// Write `records` as per-subject CSV columns plus `manifest.json` in
/// `dir`; the inverse of [`ingest`]. Values are printed in shortest
/// round-trip form, so re-ingesting reproduces them exactly.
pub fn export_csv(records: &[SignalRecord], dir: &Path, dataset_name: &str) -> Result<IngestManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut subjects = Vec::new();
    for ecg in records.iter().filter(|r| r.modality == Modality::Ecg) {
        let sid = &ecg.subject_id;
        let eda = records
            .iter()
            .find(|r| r.modality == Modality::Eda && &r.subject_id == sid)
            .ok_or_else(|| Error::Subject {
                subject: sid.clone(),
                detail: "no EDA record".into(),
            })?;
        let files = SubjectFiles {
            subject_id: sid.clone(),
            ecg_file: format!("{sid}_ecg.csv").into(),
            eda_file: format!("{sid}_eda.csv").into(),
            labels_file: format!("{sid}_labels.csv").into(),
            fs_hz: ecg.fs_hz,
        };
        let write = |name: &Path, text: String| write_atomic(&dir.join(name), text.as_bytes());
        write(&files.ecg_file, column_text(ecg.samples.iter().map(f64::to_string)))?;
        write(&files.eda_file, column_text(eda.samples.iter().map(f64::to_string)))?;
        write(&files.labels_file, column_text(ecg.condition_labels.iter().map(|c| c.code().to_string())))?;
        subjects.push(files);
    }
    let manifest = IngestManifest {
        dataset_name: dataset_name.into(),
        subjects,
    };
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    write_atomic(&dir.join("manifest.json"), json.as_bytes())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(path: &Path, vals: impl Iterator<Item = String>) {
        let text: Vec<String> = vals.collect();
        fs::write(path, text.join("\n") + "\n").unwrap();
    }

    fn toy(dir: &Path, n_labels: usize) -> IngestManifest {
        let mut subjects = Vec::new();
        for s in ["S2", "S3"] {
            write_lines(&dir.join(format!("{s}_ecg.csv")), (0..7000).map(|i| format!("{}", (i as f64).sin())));
            write_lines(&dir.join(format!("{s}_eda.csv")), (0..7000).map(|i| format!("{}", i as f64 * 1e-3)));
            let n = if s == "S3" { n_labels } else { 7000 };
            write_lines(&dir.join(format!("{s}_labels.csv")), (0..n).map(|i| format!("{}", if i < 3500 { 2 } else { 7 })));
            subjects.push(SubjectFiles {
                subject_id: s.into(),
                ecg_file: format!("{s}_ecg.csv").into(),
                eda_file: format!("{s}_eda.csv").into(),
                labels_file: format!("{s}_labels.csv").into(),
                fs_hz: 700.0,
            });
        }
        IngestManifest {
            dataset_name: "toy".into(),
            subjects,
        }
    }

    #[test]
    fn two_subjects_give_four_records() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy(dir.path(), 7000);
        let recs = ingest(&m, dir.path()).unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[0].condition_labels[0], Condition::Stress);
        assert_eq!(recs[0].condition_labels[6999], Condition::Other);
        assert_eq!(recs[3].subject_id, "S3");
        assert_eq!(recs[3].modality, Modality::Eda);
    }

    #[test]
    fn short_labels_name_the_subject() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy(dir.path(), 6999);
        let err = ingest(&m, dir.path()).unwrap_err().to_string();
        assert!(err.contains("S3"), "{err}");
    }

    #[test]
    fn export_then_ingest_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![
            SignalRecord::new("a", Modality::Ecg, 700.0, vec![0.1, -1e-300, 3.0], vec![Condition::Stress; 3]).unwrap(),
            SignalRecord::new("a", Modality::Eda, 700.0, vec![1.0 / 3.0, 2.5, f64::MAX], vec![Condition::Stress; 3]).unwrap(),
        ];
        let m = export_csv(&recs, dir.path(), "t").unwrap();
        assert_eq!(ingest(&m, dir.path()).unwrap(), recs);
    }

    #[test]
    fn non_numeric_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "1\nabc\n").unwrap();
        assert!(read_column(&p).is_err());
    }
}
