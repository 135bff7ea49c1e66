use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use super::{loso_evaluate, LosoReport, TrainConfig};
use crate::attention::{AttXSpec, ConnType};
use crate::error::{Error, Result};
use crate::model::{Modalities, ModelSpec};
use crate::signal::WindowPair;

/// One experiment: which streams to use and where to link them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRow {
    pub name: String,
    #[serde(default)]
    pub modalities: Modalities,
    #[serde(default)]
    pub attx: Option<AttXSpec>,
}

impl AblationRow {
    pub fn feature_fusion() -> Self {
        AblationRow {
            name: "Feature-Level Fusion".into(),
            modalities: Modalities::Both,
            attx: None,
        }
    }

    pub fn attx(spec: AttXSpec) -> Self {
        let name = format!("AttX Type {} {}", spec.conn_type, spec.stage_label());
        AblationRow {
            name,
            modalities: Modalities::Both,
            attx: Some(spec),
        }
    }

    /// Value of the `type` column.
    pub fn type_label(&self) -> String {
        match (&self.attx, self.modalities) {
            (Some(a), _) if !a.attention => format!("{} w/o att.", a.conn_type),
            (Some(a), _) => a.conn_type.to_string(),
            (None, Modalities::Both) => "Feature-Level Fusion".into(),
            (None, Modalities::EcgOnly) => "Unimodal ECG".into(),
            (None, Modalities::EdaOnly) => "Unimodal EDA".into(),
        }
    }

    /// Value of the `stages` column.
    pub fn stages_label(&self) -> String {
        self.attx.as_ref().map_or_else(|| "-".into(), AttXSpec::stage_label)
    }

    pub fn model_spec(&self, base: &ModelSpec) -> ModelSpec {
        ModelSpec {
            modalities: self.modalities,
            attx: self.attx.clone(),
            ..base.clone()
        }
    }

    fn slug(&self) -> String {
        let mut s = String::new();
        for ch in self.name.chars() {
            if ch.is_ascii_alphanumeric() {
                s.push(ch.to_ascii_lowercase());
            } else if !s.ends_with('_') {
                s.push('_');
            }
        }
        s.trim_matches('_').to_string()
    }
}

/// An ordered list of experiment rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(rename = "row")]
    pub rows: Vec<AblationRow>,
}

/// Every non-empty subset of {1, 2, 3}, singletons first.
const STAGE_SETS: [&[usize]; 7] = [&[1], &[2], &[3], &[1, 2], &[1, 3], &[2, 3], &[1, 2, 3]];

impl Grid {
    /// Feature-level fusion plus every connection type at every stage
    /// subset (22 rows).
    pub fn type_stage() -> Self {
        let mut rows = vec![AblationRow::feature_fusion()];
        for t in ConnType::ALL {
            for stages in STAGE_SETS {
                rows.push(AblationRow::attx(AttXSpec::new(t, stages)));
            }
        }
        Grid { rows }
    }

    /// Unimodal baselines, feature fusion, links without attention, and
    /// attentive links, all Type III after stages 1 and 2.
    pub fn components() -> Self {
        let att = AttXSpec::new(ConnType::III, &[1, 2]);
        let no_att = AttXSpec {
            attention: false,
            ..att.clone()
        };
        Grid {
            rows: vec![
                AblationRow {
                    name: "Unimodal EDA".into(),
                    modalities: Modalities::EdaOnly,
                    attx: None,
                },
                AblationRow {
                    name: "Unimodal ECG".into(),
                    modalities: Modalities::EcgOnly,
                    attx: None,
                },
                AblationRow::feature_fusion(),
                AblationRow {
                    name: "Ours w/o att.".into(),
                    modalities: Modalities::Both,
                    attx: Some(no_att),
                },
                AblationRow {
                    name: "Ours AttX".into(),
                    modalities: Modalities::Both,
                    attx: Some(att),
                },
            ],
        }
    }

    /// Built-in grid by name (`type-stage` or `components`), otherwise a
    /// TOML file of `[[row]]` tables.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match name_or_path {
            "type-stage" => Ok(Self::type_stage()),
            "components" => Ok(Self::components()),
            path => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let g: Grid = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
                g.validate()?;
                Ok(g)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Config("ablation grid has no rows".into()));
        }
        for r in &self.rows {
            if let Some(a) = &r.attx {
                a.validate()?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: AblationRow,
    pub report: LosoReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationResult>,
}

/// Run leave-one-subject-out evaluation for every row of `grid`.
pub fn ablation_run(dataset: &[WindowPair], grid: &Grid, base: &ModelSpec, cfg: &TrainConfig) -> Result<AblationTable> {
    grid.validate()?;
    let mut rows = Vec::with_capacity(grid.rows.len());
    for (i, row) in grid.rows.iter().enumerate() {
        info!("ablation row {}/{}: {}", i + 1, grid.rows.len(), row.name);
        let report = loso_evaluate(dataset, &row.model_spec(base), cfg)?;
        rows.push(AblationResult {
            row: row.clone(),
            report,
        });
    }
    Ok(AblationTable { rows })
}

const CSV_HEADER: &str = "type,stages,accuracy,macro_f1,weighted_f1,n_folds";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl AblationTable {
    /// Fold-mean metrics, one line per row.
    pub fn to_csv(&self) -> String {
        self.csv_with(|r| (r.report.mean.accuracy, r.report.mean.macro_f1, r.report.mean.weighted_f1))
    }

    /// Metrics of predictions pooled over folds.
    pub fn to_pooled_csv(&self) -> String {
        self.csv_with(|r| (r.report.pooled.accuracy, r.report.pooled.macro_f1, r.report.pooled.weighted_f1))
    }

    fn csv_with(&self, f: impl Fn(&AblationResult) -> (f64, f64, f64)) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let (a, m, w) = f(r);
            let _ = writeln!(
                out,
                "{},{},{a:.6},{m:.6},{w:.6},{}",
                csv_field(&r.row.type_label()),
                csv_field(&r.row.stages_label()),
                r.report.folds.len()
            );
        }
        out
    }

    /// Human-readable table with aligned columns.
    pub fn to_text(&self) -> String {
        let header = ["Row", "Type", "Stages", "Accuracy", "Macro F1", "Weighted F1", "Folds"];
        let mut cells: Vec<[String; 7]> = vec![header.map(String::from)];
        for r in &self.rows {
            let m = &r.report.mean;
            cells.push([
                r.row.name.clone(),
                r.row.type_label(),
                r.row.stages_label(),
                format!("{:.4}", m.accuracy),
                format!("{:.4}", m.macro_f1),
                format!("{:.4}", m.weighted_f1),
                r.report.folds.len().to_string(),
            ]);
        }
        let mut widths = [0usize; 7];
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(j, (c, w))| if j < 3 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        out
    }

    /// Write `ablation.csv`, `ablation_pooled.csv`, `ablation.txt` and one
    /// directory per row holding `fold_<subject>.json`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("ablation.csv", self.to_csv())?;
        write("ablation_pooled.csv", self.to_pooled_csv())?;
        write("ablation.txt", self.to_text())?;
        for (i, r) in self.rows.iter().enumerate() {
            let sub = dir.join(format!("{:02}_{}", i + 1, r.row.slug()));
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for f in &r.report.folds {
                let p = sub.join(format!("fold_{}.json", f.held_out_subject));
                let json = serde_json::to_string_pretty(f)?;
                fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
            }
        }
        Ok(())
    }
}
