//! CSV persistence. Datasets live in a long-format file
//! (`pixel_id,label,composite_index,band_index,value`) with a JSON sidecar
//! carrying the class name table and windowing defaults, so the pair is
//! self-describing. Loading rejects malformed rows with their line number.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cropseries_core::analysis::{CohortCurve, CoverCropStatus, CoverCropTable};
use cropseries_core::data::{LabeledPixel, RawDataset, SpectralSequence};
use cropseries_core::metrics::EvalReport;

use crate::error::{io_at, CliError};
use crate::fsio::{read_to_string, write_atomic};

pub const DATASET_HEADER: &str = "pixel_id,label,composite_index,band_index,value";
pub const META_VERSION: &str = "dataset-meta-v1";

/// Sidecar stored next to a dataset CSV as `<stem>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub version: String,
    pub scenario: String,
    pub class_names: Vec<String>,
    pub composite_period_days: u32,
    pub window_composites: usize,
    pub stride_composites: usize,
}

pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

pub fn save_raw_dataset(
    path: &Path,
    raw: &RawDataset,
    window_composites: usize,
    stride_composites: usize,
) -> Result<(), CliError> {
    raw.validate()?;
    let scenario = raw.pixels[0].scenario_tag.clone();
    if let Some(p) = raw.pixels.iter().find(|p| p.scenario_tag != scenario) {
        return Err(CliError::validation(format!(
            "one file holds one scenario: found both '{scenario}' and '{}'",
            p.scenario_tag
        )));
    }
    let meta = DatasetMeta {
        version: String::from(META_VERSION),
        scenario,
        class_names: raw.class_names.clone(),
        composite_period_days: raw.pixels[0].sequence.composite_period_days(),
        window_composites,
        stride_composites,
    };

    let mut text = String::new();
    text.push_str(DATASET_HEADER);
    text.push('\n');
    for p in &raw.pixels {
        let seq = &p.sequence;
        for c in 0..seq.t_raw() {
            for (b, v) in seq.composite(c).iter().enumerate() {
                text.push_str(&format!(
                    "{},{},{c},{b},{v}\n",
                    p.pixel_id, p.class_label
                ));
            }
        }
    }
    write_atomic(path, text.as_bytes())?;

    let mut meta_text = serde_json::to_string_pretty(&meta)
        .map_err(|e| CliError::validation(format!("meta serialization: {e}")))?;
    meta_text.push('\n');
    write_atomic(&meta_path(path), meta_text.as_bytes())
}

struct PixelAccum {
    label: usize,
    cells: HashMap<(usize, usize), f64>,
    max_c: usize,
    max_b: usize,
}

fn field<'a>(
    rec: &'a csv::StringRecord,
    idx: usize,
    name: &str,
    line: u64,
) -> Result<&'a str, CliError> {
    rec.get(idx)
        .ok_or_else(|| CliError::validation(format!("line {line}: missing {name} field")))
}

fn parse_num<T: core::str::FromStr>(s: &str, name: &str, line: u64) -> Result<T, CliError> {
    s.parse()
        .map_err(|_| CliError::validation(format!("line {line}: bad {name} '{s}'")))
}

pub fn load_raw_dataset(path: &Path) -> Result<(RawDataset, DatasetMeta), CliError> {
    let meta_file = meta_path(path);
    let meta_text = read_to_string(&meta_file)?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text)
        .map_err(|e| CliError::validation(format!("{}: {e}", meta_file.display())))?;
    if meta.version != META_VERSION {
        return Err(CliError::validation(format!(
            "{}: unsupported version '{}', expected '{META_VERSION}'",
            meta_file.display(),
            meta.version
        )));
    }
    if meta.class_names.is_empty() {
        return Err(CliError::validation(format!(
            "{}: empty class name table",
            meta_file.display()
        )));
    }

    let text = read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    {
        let headers = reader
            .headers()
            .map_err(|e| io_at(path, e))?
            .iter()
            .collect::<Vec<_>>()
            .join(",");
        if headers != DATASET_HEADER {
            return Err(CliError::validation(format!(
                "{}: header '{headers}' does not match '{DATASET_HEADER}'",
                path.display()
            )));
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut pixels: HashMap<String, PixelAccum> = HashMap::new();
    for row in reader.records() {
        let rec = row.map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 5 {
            return Err(CliError::validation(format!(
                "line {line}: expected 5 fields, got {}",
                rec.len()
            )));
        }
        let id = field(&rec, 0, "pixel_id", line)?;
        if id.is_empty() {
            return Err(CliError::validation(format!("line {line}: empty pixel_id")));
        }
        let label: usize = parse_num(field(&rec, 1, "label", line)?, "label", line)?;
        let c: usize = parse_num(field(&rec, 2, "composite_index", line)?, "composite_index", line)?;
        let b: usize = parse_num(field(&rec, 3, "band_index", line)?, "band_index", line)?;
        let v: f64 = parse_num(field(&rec, 4, "value", line)?, "value", line)?;
        if label >= meta.class_names.len() {
            return Err(CliError::validation(format!(
                "line {line}: label {label} out of range for {} classes",
                meta.class_names.len()
            )));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(CliError::validation(format!(
                "line {line}: value {v} out of [0, 1]"
            )));
        }
        let acc = pixels.entry(id.to_string()).or_insert_with(|| {
            order.push(id.to_string());
            PixelAccum {
                label,
                cells: HashMap::new(),
                max_c: 0,
                max_b: 0,
            }
        });
        if acc.label != label {
            return Err(CliError::validation(format!(
                "line {line}: pixel '{id}' has labels {} and {label}",
                acc.label
            )));
        }
        if acc.cells.insert((c, b), v).is_some() {
            return Err(CliError::validation(format!(
                "line {line}: duplicate cell for pixel '{id}' composite {c} band {b}"
            )));
        }
        acc.max_c = acc.max_c.max(c);
        acc.max_b = acc.max_b.max(b);
    }
    if order.is_empty() {
        return Err(CliError::validation(format!(
            "{}: no data rows",
            path.display()
        )));
    }

    let first = &pixels[&order[0]];
    let (t_raw, bands) = (first.max_c + 1, first.max_b + 1);
    let mut out = Vec::with_capacity(order.len());
    for id in &order {
        let acc = &pixels[id];
        if acc.max_c + 1 != t_raw {
            return Err(CliError::validation(format!(
                "pixel '{id}' has {} composites but pixel '{}' has {t_raw}",
                acc.max_c + 1,
                order[0]
            )));
        }
        if acc.max_b + 1 != bands {
            return Err(CliError::validation(format!(
                "pixel '{id}' has {} bands but pixel '{}' has {bands}",
                acc.max_b + 1,
                order[0]
            )));
        }
        let mut values = Vec::with_capacity(t_raw * bands);
        for c in 0..t_raw {
            for b in 0..bands {
                match acc.cells.get(&(c, b)) {
                    Some(v) => values.push(*v),
                    None => {
                        return Err(CliError::validation(format!(
                            "pixel '{id}' missing composite {c} band {b}"
                        )))
                    }
                }
            }
        }
        let sequence = SpectralSequence::new(t_raw, bands, meta.composite_period_days, values)?;
        out.push(LabeledPixel {
            pixel_id: id.clone(),
            class_label: acc.label,
            sequence,
            scenario_tag: meta.scenario.clone(),
        });
    }
    let raw = RawDataset {
        pixels: out,
        class_names: meta.class_names.clone(),
    };
    raw.validate()?;
    Ok((raw, meta))
}

pub const REPORT_HEADER: &str = "method,scenario,auc,f1,train_digest,test_digest,seed";

pub fn report_csv(report: &EvalReport) -> String {
    let mut text = String::from(REPORT_HEADER);
    text.push('\n');
    for r in &report.rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method.name(),
            r.scenario,
            r.auc,
            r.f1,
            r.train_digest,
            r.test_digest,
            r.seed
        ));
    }
    text
}

pub const CURVE_HEADER: &str = "step,class,mean,std";

/// Cohort confidence curves, one row per `(step, class)`, class-major.
pub fn curves_csv(curves: &[(String, CohortCurve)]) -> String {
    let mut text = String::from(CURVE_HEADER);
    text.push('\n');
    for (name, curve) in curves {
        for (t, (m, s)) in curve.mean.iter().zip(&curve.std).enumerate() {
            text.push_str(&format!("{t},{name},{m},{s}\n"));
        }
    }
    text
}

pub const COVER_PIXEL_HEADER: &str = "pixel_id,label,status";

pub fn cover_pixels_csv(rows: &[(String, usize, CoverCropStatus)]) -> String {
    let mut text = String::from(COVER_PIXEL_HEADER);
    text.push('\n');
    for (id, label, status) in rows {
        text.push_str(&format!("{id},{label},{}\n", status.name()));
    }
    text
}

pub const COVER_TABLE_HEADER: &str =
    "class,total_area,cover_area,evergreen_area,cover_percent";

pub fn cover_table_csv(table: &CoverCropTable) -> String {
    let mut text = String::from(COVER_TABLE_HEADER);
    text.push('\n');
    for r in table.rows.iter().chain(core::iter::once(&table.total)) {
        text.push_str(&format!(
            "{},{},{},{},{:.2}\n",
            r.class_name, r.total_area, r.cover_area, r.evergreen_area, r.cover_percent
        ));
    }
    text
}
