use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::data::{Gender, GapSample, Label, TokenizedExample};

const CLIP: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    /// Over (A, B, NEITHER).
    pub probs: [f64; 3],
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, probs: [f64; 3]) -> Self {
        Self { id: id.into(), probs }
    }

    /// Argmax; ties go to the earlier class in A, B, NEITHER order.
    pub fn predicted(&self) -> Label {
        let mut best = 0;
        for i in 1..3 {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        Label::from_index(best).expect("three classes")
    }
}

/// Gold annotation of one evaluated sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gold {
    pub id: String,
    pub label: Label,
    pub gender: Gender,
}

impl From<&GapSample> for Gold {
    fn from(s: &GapSample) -> Self {
        Self { id: s.id.clone(), label: s.label(), gender: s.gender }
    }
}

impl From<&TokenizedExample> for Gold {
    fn from(t: &TokenizedExample) -> Self {
        Self { id: t.id.clone(), label: t.label, gender: t.gender }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    fn add(&mut self, predicted: bool, gold: bool) {
        match (predicted, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    /// Micro F1; an undefined precision or recall counts as 0.
    pub fn f1(&self) -> f64 {
        let p = if self.tp + self.fp == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fp) as f64 };
        let r = if self.tp + self.fn_ == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fn_) as f64 };
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn merged(a: Counts, b: Counts) -> Counts {
        Counts { tp: a.tp + b.tp, fp: a.fp + b.fp, fn_: a.fn_ + b.fn_ }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub f1_m: f64,
    pub f1_f: f64,
    /// `f1_f / f1_m`.
    pub bias: f64,
    pub f1_overall: f64,
    pub logloss: f64,
    pub counts_m: Counts,
    pub counts_f: Counts,
    /// Gold samples per class, A, B, NEITHER.
    pub class_counts: [usize; 3],
    pub missing: usize,
    pub accuracy: f64,
}

impl ScoreReport {
    pub const HEADER: &'static str = "M\tF\tB\tO\tlogloss";

    /// One tab-separated row: M, F, B, O as percentages, then log loss.
    pub fn row(&self) -> String {
        format!(
            "{:.1}\t{:.1}\t{:.2}\t{:.1}\t{}",
            100.0 * self.f1_m,
            100.0 * self.f1_f,
            self.bias,
            100.0 * self.f1_overall,
            format_logloss(self.logloss)
        )
    }
}

/// Three decimals without the leading zero, e.g. `.317`.
pub fn format_logloss(v: f64) -> String {
    let s = format!("{v:.3}");
    s.strip_prefix("0.").map(|r| format!(".{r}")).unwrap_or(s)
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", Self::HEADER)?;
        write!(f, "{}", self.row())
    }
}

fn index<'a>(preds: &'a [PredictionRecord]) -> HashMap<&'a str, &'a PredictionRecord> {
    preds.iter().map(|p| (p.id.as_str(), p)).collect()
}

/// GAP scoring: every prediction becomes two binary coreference decisions,
/// scored by micro F1 per pronoun gender and overall. Missing predictions
/// count as no coreference.
pub fn gap_f1(preds: &[PredictionRecord], gold: &[Gold]) -> ScoreReport {
    let by_id = index(preds);
    let (mut m, mut f) = (Counts::default(), Counts::default());
    let mut class_counts = [0; 3];
    let mut missing = 0;
    let mut correct = 0;
    let mut ll = 0.0;
    for g in gold {
        class_counts[g.label.index()] += 1;
        let (pa, pb, probs) = match by_id.get(g.id.as_str()) {
            Some(p) => {
                let (a, b) = p.predicted().flags();
                correct += (p.predicted() == g.label) as usize;
                (a, b, p.probs)
            }
            None => {
                log::warn!("no prediction for {}, scored as no coreference", g.id);
                missing += 1;
                (false, false, [0.0, 0.0, 1.0])
            }
        };
        ll += -probs[g.label.index()].clamp(CLIP, 1.0 - CLIP).ln();
        let (ga, gb) = g.label.flags();
        let c = match g.gender {
            Gender::M => &mut m,
            Gender::F => &mut f,
        };
        c.add(pa, ga);
        c.add(pb, gb);
    }
    let (f1_m, f1_f) = (m.f1(), f.f1());
    let n = gold.len().max(1) as f64;
    ScoreReport {
        f1_m,
        f1_f,
        bias: f1_f / f1_m,
        f1_overall: Counts::merged(m, f).f1(),
        logloss: ll / n,
        counts_m: m,
        counts_f: f,
        class_counts,
        missing,
        accuracy: correct as f64 / n,
    }
}

/// Mean of `-ln p[gold]` with probabilities clipped to `[1e-15, 1 - 1e-15]`.
pub fn logloss(preds: &[PredictionRecord], gold: &[Gold]) -> Result<f64> {
    let by_id = index(preds);
    let mut total = 0.0;
    for g in gold {
        let p = by_id.get(g.id.as_str()).ok_or_else(|| TrainError::Coverage(g.id.clone()))?;
        total += -p.probs[g.label.index()].clamp(CLIP, 1.0 - CLIP).ln();
    }
    Ok(total / gold.len().max(1) as f64)
}

/// Equal-weight mean of several prediction sets over the same ids,
/// renormalized per row. Output follows the first set's order.
pub fn ensemble_mean(sets: &[Vec<PredictionRecord>]) -> Result<Vec<PredictionRecord>> {
    let Some(first) = sets.first() else {
        return Ok(Vec::new());
    };
    let maps: Vec<HashMap<&str, &PredictionRecord>> = sets.iter().map(|s| index(s)).collect();
    for (k, s) in sets.iter().enumerate() {
        if s.len() != first.len() {
            return Err(TrainError::Coverage(format!("prediction set {k} has {} rows, expected {}", s.len(), first.len())));
        }
    }
    first
        .iter()
        .map(|r| {
            let mut acc = [0.0; 3];
            for m in &maps {
                let p = m.get(r.id.as_str()).ok_or_else(|| TrainError::Coverage(r.id.clone()))?;
                for i in 0..3 {
                    acc[i] += p.probs[i];
                }
            }
            let z: f64 = acc.iter().sum();
            Ok(PredictionRecord::new(r.id.clone(), acc.map(|v| v / z)))
        })
        .collect()
}

/// 2×2 agreement counts, `cells[a_correct][b_correct]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agreement {
    pub cells: [[usize; 2]; 2],
}

impl Agreement {
    pub fn total(&self) -> usize {
        self.cells.iter().flatten().sum()
    }
}

/// Per gold class (A, B, NEITHER) and overall.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionComparison {
    pub names: [String; 2],
    pub classes: [Agreement; 3],
    pub overall: Agreement,
}

pub fn confusion_compare(
    a: &[PredictionRecord],
    b: &[PredictionRecord],
    gold: &[Gold],
    names: [&str; 2],
) -> Result<ConfusionComparison> {
    let (ma, mb) = (index(a), index(b));
    let mut out = ConfusionComparison {
        names: names.map(String::from),
        classes: [Agreement::default(); 3],
        overall: Agreement::default(),
    };
    for g in gold {
        let pa = ma.get(g.id.as_str()).ok_or_else(|| TrainError::Coverage(g.id.clone()))?;
        let pb = mb.get(g.id.as_str()).ok_or_else(|| TrainError::Coverage(g.id.clone()))?;
        let ca = (pa.predicted() == g.label) as usize;
        let cb = (pb.predicted() == g.label) as usize;
        out.classes[g.label.index()].cells[ca][cb] += 1;
        out.overall.cells[ca][cb] += 1;
    }
    Ok(out)
}

impl fmt::Display for ConfusionComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b] = &self.names;
        writeln!(f, "rows: {a}, columns: {b}")?;
        writeln!(f, "class\t{a}\t{b} correct\t{b} incorrect")?;
        let rows = Label::ALL.iter().map(|l| (l.as_str(), &self.classes[l.index()])).chain([("Overall", &self.overall)]);
        for (name, t) in rows {
            writeln!(f, "{name}\tcorrect\t{}\t{}", t.cells[1][1], t.cells[1][0])?;
            writeln!(f, "\tincorrect\t{}\t{}", t.cells[0][1], t.cells[0][0])?;
        }
        Ok(())
    }
}

/// Per gold class, counts of the probability given to that class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histograms {
    pub bins: usize,
    /// Indexed by class A, B, NEITHER.
    pub counts: [Vec<usize>; 3],
}

pub fn prob_histograms(preds: &[PredictionRecord], gold: &[Gold], bins: usize) -> Result<Histograms> {
    let bins = bins.max(1);
    let by_id = index(preds);
    let mut counts = [vec![0; bins], vec![0; bins], vec![0; bins]];
    for g in gold {
        let p = by_id.get(g.id.as_str()).ok_or_else(|| TrainError::Coverage(g.id.clone()))?;
        let v = p.probs[g.label.index()].clamp(0.0, 1.0);
        let bin = ((v * bins as f64) as usize).min(bins - 1);
        counts[g.label.index()][bin] += 1;
    }
    Ok(Histograms { bins, counts })
}
