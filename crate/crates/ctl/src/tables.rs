//! CSV tables: texture codes, histograms, prediction matrices, per-sample
//! predictions and ground truth.

use std::collections::HashMap;
use std::path::Path;

use ctl_core::classifier::ClassProbabilities;
use ctl_core::data::ClassLabel;
use ctl_core::lbp::{TextureHistogram, TextureMap};
use ctl_core::vote::PatchPredictionMatrix;

use crate::error::{format_err, io_err, CtlError, Result};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(CtlError::from)
}

fn reader(path: &Path, headers: bool) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().has_headers(headers).trim(csv::Trim::All).from_reader(file))
}

/// One row of integer codes per map row.
pub fn write_codes_csv(path: &Path, map: &TextureMap) -> Result<()> {
    let mut w = writer(path)?;
    for row in map.codes.chunks(map.cols) {
        w.write_record(row.iter().map(|c| c.to_string()))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_histograms_csv(path: &Path, rows: &[(String, TextureHistogram)]) -> Result<()> {
    let mut w = writer(path)?;
    if let Some((_, first)) = rows.first() {
        let mut header = vec!["patch".to_string()];
        header.extend((0..first.bins.len()).map(|i| format!("bin{i}")));
        w.write_record(&header)?;
    }
    for (id, h) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(h.bins.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(path))
}

/// Raw probabilities, one CSV row per frame.
pub fn write_matrix_csv(path: &Path, m: &PatchPredictionMatrix) -> Result<()> {
    let mut w = writer(path)?;
    for row in m.values().chunks(m.cols()) {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_matrix_csv(path: &Path) -> Result<PatchPredictionMatrix> {
    let mut r = reader(path, false)?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(format_err(path, format!("row {} has {} columns, expected {}", rows + 1, rec.len(), cols.unwrap_or(0))));
        }
        for f in rec.iter() {
            values.push(f.parse::<f64>().map_err(|_| format_err(path, format!("not a number: {f:?}")))?);
        }
        rows += 1;
    }
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    PatchPredictionMatrix::new(id, rows, cols.unwrap_or(0), values).map_err(|e| format_err(path, e.to_string()))
}

const PREDICTION_HEADER: [&str; 6] = ["sample_id", "p_mi", "p_ep", "p_cy", "p_hsil", "p_cc"];

pub fn write_predictions_csv(path: &Path, rows: &[(String, ClassProbabilities)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(PREDICTION_HEADER)?;
    for (id, p) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(p.p.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<(String, ClassProbabilities)>> {
    let mut r = reader(path, true)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != PREDICTION_HEADER.len() {
            return Err(format_err(path, format!("expected {} fields, got {}", PREDICTION_HEADER.len(), rec.len())));
        }
        let mut p = [0.0; ClassLabel::COUNT];
        for (i, v) in p.iter_mut().enumerate() {
            *v = rec[i + 1].parse().map_err(|_| format_err(path, format!("not a number: {:?}", &rec[i + 1])))?;
        }
        let probs = ClassProbabilities::new(p).map_err(|e| format_err(path, e.to_string()))?;
        out.push((rec[0].to_string(), probs));
    }
    Ok(out)
}

pub fn write_truth_csv(path: &Path, rows: &[(String, ClassLabel)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["sample_id", "label"])?;
    for (id, l) in rows {
        w.write_record([id.as_str(), l.name()])?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_truth_csv(path: &Path) -> Result<HashMap<String, ClassLabel>> {
    let mut r = reader(path, true)?;
    let mut out = HashMap::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(format_err(path, "expected sample_id,label rows"));
        }
        let label = ClassLabel::parse(&rec[1]).ok_or_else(|| format_err(path, format!("unknown label {:?}", &rec[1])))?;
        if out.insert(rec[0].to_string(), label).is_some() {
            return Err(format_err(path, format!("duplicate sample id {:?}", &rec[0])));
        }
    }
    Ok(out)
}

/// Header plus rows of display values.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(io_err(path))
}
