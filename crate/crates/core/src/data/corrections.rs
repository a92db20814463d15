use std::collections::HashMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, GapSample, Label, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionRecord {
    pub sample_id: String,
    pub old_label: Label,
    pub new_label: Label,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub timestamp: String,
}

pub fn load_corrections(path: &Path) -> Result<Vec<CorrectionRecord>> {
    let raw = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| DataError::Json { line: i + 1, source: e }))
        .collect()
}

/// Append one record and fsync before returning.
pub fn append_correction(path: &Path, rec: &CorrectionRecord) -> Result<()> {
    let mut line = serde_json::to_string(rec).map_err(|e| DataError::Json { line: 0, source: e })?;
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| DataError::io(path, e))?;
    f.write_all(line.as_bytes()).map_err(|e| DataError::io(path, e))?;
    f.sync_all().map_err(|e| DataError::io(path, e))
}

/// Per-class label movement caused by a correction set. A sample counts as
/// moved only when its final label differs from its original one.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub before: [usize; 3],
    pub after: [usize; 3],
    pub moved_out: [usize; 3],
    pub moved_in: [usize; 3],
    pub total: usize,
}

impl DeltaReport {
    /// One after-sanitization cell, e.g. `857(-37)(+20)`.
    pub fn cell(&self, label: Label) -> String {
        let k = label.index();
        format!("{}(-{})(+{})", self.after[k], self.moved_out[k], self.moved_in[k])
    }

    /// Tab-separated row: before counts, after cells, total.
    pub fn row(&self, name: &str) -> String {
        let mut parts = vec![name.to_string()];
        parts.extend(self.before.iter().map(|c| c.to_string()));
        parts.extend(Label::ALL.iter().map(|&l| self.cell(l)));
        parts.push(self.total.to_string());
        parts.join("\t")
    }

    /// Net change per class; sums to zero.
    pub fn net(&self) -> [i64; 3] {
        std::array::from_fn(|k| self.moved_in[k] as i64 - self.moved_out[k] as i64)
    }
}

impl fmt::Display for DeltaReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "\tbefore\t\t\tafter")?;
        writeln!(f, "\tA\tB\tNEITHER\tA\tB\tNEITHER\tTotal")?;
        write!(f, "{}", self.row("corpus"))
    }
}

/// Fold the records over the corpus in order.
pub fn apply_corrections(
    samples: &[GapSample],
    records: &[CorrectionRecord],
) -> Result<(Vec<GapSample>, DeltaReport)> {
    let mut out = samples.to_vec();
    let index: HashMap<&str, usize> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    for r in records {
        let &i = index
            .get(r.sample_id.as_str())
            .ok_or_else(|| DataError::UnknownId(r.sample_id.clone()))?;
        if r.old_label == r.new_label {
            return Err(DataError::NoOpCorrection(r.sample_id.clone()));
        }
        let current = out[i].label();
        if current != r.old_label {
            return Err(DataError::StaleCorrection {
                id: r.sample_id.clone(),
                expected: r.old_label,
                found: current,
            });
        }
        out[i].set_label(r.new_label);
    }
    let mut report = DeltaReport {
        total: samples.len(),
        ..Default::default()
    };
    for (old, new) in samples.iter().zip(&out) {
        let (o, n) = (old.label().index(), new.label().index());
        report.before[o] += 1;
        report.after[n] += 1;
        if o != n {
            report.moved_out[o] += 1;
            report.moved_in[n] += 1;
        }
    }
    Ok((out, report))
}

/// Records undoing `records`, in reverse order.
pub fn revert_corrections(records: &[CorrectionRecord]) -> Vec<CorrectionRecord> {
    records
        .iter()
        .rev()
        .map(|r| CorrectionRecord {
            sample_id: r.sample_id.clone(),
            old_label: r.new_label,
            new_label: r.old_label,
            note: format!("revert: {}", r.note),
            timestamp: r.timestamp.clone(),
        })
        .collect()
}
