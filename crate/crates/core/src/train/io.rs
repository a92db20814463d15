use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HistoryRow, PredictionRecord, Result, TrainError};

#[derive(Serialize, Deserialize)]
struct PredictionRow {
    #[serde(rename = "ID")]
    id: String,
    #[serde(rename = "A")]
    a: f64,
    #[serde(rename = "B")]
    b: f64,
    #[serde(rename = "NEITHER")]
    neither: f64,
}

fn file_err(path: &Path, e: impl std::fmt::Display) -> TrainError {
    TrainError::File { path: path.display().to_string(), msg: e.to_string() }
}

/// Submission-shaped CSV: `ID,A,B,NEITHER`.
pub fn write_predictions_csv(path: &Path, preds: &[PredictionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| file_err(path, e))?;
    for p in preds {
        let [a, b, neither] = p.probs;
        w.serialize(PredictionRow { id: p.id.clone(), a, b, neither }).map_err(|e| file_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| file_err(path, e))?;
    r.deserialize::<PredictionRow>()
        .map(|row| {
            let row = row.map_err(|e| file_err(path, e))?;
            let probs = [row.a, row.b, row.neither];
            if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(file_err(path, format!("{}: invalid probabilities {probs:?}", row.id)));
            }
            Ok(PredictionRecord::new(row.id, probs))
        })
        .collect()
}

pub fn write_history_csv(path: &Path, history: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| file_err(path, e))?;
    for h in history {
        w.serialize(h).map_err(|e| file_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

pub fn read_history_csv(path: &Path) -> Result<Vec<HistoryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| file_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| file_err(path, e))).collect()
}
