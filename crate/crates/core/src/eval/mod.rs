//! Scoring: confusion matrices, macro-F1 per slice, and the improvement
//! arithmetic used when comparing against baselines.
//!
//! "F1" everywhere means macro-F1 over the three polarity classes. The ISA
//! score is macro-F1 restricted to implicit instances, ESA the same over
//! explicit ones. Precision, recall and F1 are 0 whenever their
//! denominator is 0.

mod report;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::PolarityLabel;
use crate::extraction::Fallback;
use crate::percent::Percent;

pub use report::{
    render_report, Baseline, BaselineTable, DeltaRow, RenderedReport, ReportEntry, ReportTable, TableRow,
    BASELINE_SECTION, COT_SECTION, PROMPT_SECTION,
};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("duplicate prediction for instance {0:?}")]
    DuplicateInstance(String),
    #[error("cannot average an empty list of improvements")]
    EmptyDeltas,
    #[error("baseline table: {0}")]
    Baselines(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub instance_id: String,
    pub gold: PolarityLabel,
    /// `None` when the completion could not be mapped to a label.
    pub predicted: Option<PolarityLabel>,
    pub is_implicit: bool,
    /// Raw completion named no label (before any fallback was applied).
    #[serde(default)]
    pub unparseable: bool,
}

/// Gold rows (Negative, Neutral, Positive) by predicted columns
/// (Negative, Neutral, Positive, None).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub cells: [[u64; 4]; 3],
}

pub const NONE_COLUMN: usize = 3;

impl ConfusionMatrix {
    pub fn column(predicted: Option<PolarityLabel>) -> usize {
        predicted.map_or(NONE_COLUMN, PolarityLabel::index)
    }

    pub fn get(&self, gold: PolarityLabel, predicted: Option<PolarityLabel>) -> u64 {
        self.cells[gold.index()][Self::column(predicted)]
    }

    pub fn add(&mut self, gold: PolarityLabel, predicted: Option<PolarityLabel>) {
        self.cells[gold.index()][Self::column(predicted)] += 1;
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn row_sum(&self, gold: PolarityLabel) -> u64 {
        self.cells[gold.index()].iter().sum()
    }

    pub fn column_sum(&self, predicted: Option<PolarityLabel>) -> u64 {
        let c = Self::column(predicted);
        self.cells.iter().map(|row| row[c]).sum()
    }

    pub fn correct(&self) -> u64 {
        (0..3).map(|i| self.cells[i][i]).sum()
    }
}

pub fn confusion(records: &[PredictionRecord]) -> Result<ConfusionMatrix, EvalError> {
    let mut seen = HashSet::with_capacity(records.len());
    let mut cm = ConfusionMatrix::default();
    for r in records {
        if !seen.insert(r.instance_id.as_str()) {
            return Err(EvalError::DuplicateInstance(r.instance_id.clone()));
        }
        cm.add(r.gold, r.predicted);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub accuracy: f64,
    /// Indexed by [`PolarityLabel::index`].
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub per_class_f1: [f64; 3],
    /// Classes that occur as gold or prediction in the slice; only these
    /// enter the macro average.
    pub averaged: [bool; 3],
    pub macro_f1: f64,
    pub support: u64,
}

impl SliceMetrics {
    pub fn macro_f1_percent(&self) -> Percent {
        Percent::from_fraction(self.macro_f1)
    }

    pub fn accuracy_percent(&self) -> Percent {
        Percent::from_fraction(self.accuracy)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn slice_metrics(cm: &ConfusionMatrix) -> SliceMetrics {
    let mut precision = [0.0; 3];
    let mut recall = [0.0; 3];
    let mut f1 = [0.0; 3];
    let mut averaged = [false; 3];
    for label in PolarityLabel::ALL {
        let i = label.index();
        let tp = cm.cells[i][i];
        let p = ratio(tp, cm.column_sum(Some(label)));
        let r = ratio(tp, cm.row_sum(label));
        precision[i] = p;
        recall[i] = r;
        f1[i] = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        averaged[i] = cm.row_sum(label) > 0 || cm.column_sum(Some(label)) > 0;
    }
    let n = averaged.iter().filter(|&&a| a).count();
    let macro_f1 = if n == 0 {
        0.0
    } else {
        (0..3).filter(|&i| averaged[i]).map(|i| f1[i]).sum::<f64>() / n as f64
    };
    let support = cm.total();
    SliceMetrics {
        accuracy: ratio(cm.correct(), support),
        precision,
        recall,
        per_class_f1: f1,
        averaged,
        macro_f1,
        support,
    }
}

/// Partitions records into (implicit, explicit).
pub fn split_slices(records: &[PredictionRecord]) -> (Vec<PredictionRecord>, Vec<PredictionRecord>) {
    records.iter().cloned().partition(|r| r.is_implicit)
}

/// `score_a - score_b` in percentage points.
pub fn improvement_delta(score_a: Percent, score_b: Percent) -> Percent {
    score_a - score_b
}

/// Mean of `deltas`, rounded half away from zero to two decimals.
pub fn average_improvement(deltas: &[Percent]) -> Result<Percent, EvalError> {
    Percent::mean(deltas).ok_or(EvalError::EmptyDeltas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub confusion: ConfusionMatrix,
    pub metrics: SliceMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub all: SliceReport,
    pub isa: SliceReport,
    pub esa: SliceReport,
    pub unparseable: u64,
    pub unparseable_rate: f64,
    pub fallback: Fallback,
    pub fingerprint: String,
}

fn slice(records: &[PredictionRecord]) -> Result<SliceReport, EvalError> {
    let confusion = confusion(records)?;
    Ok(SliceReport {
        metrics: slice_metrics(&confusion),
        confusion,
    })
}

/// Scores `records` on the All / ISA / ESA slices.
pub fn evaluate(records: &[PredictionRecord], fallback: Fallback, fingerprint: &str) -> Result<EvalReport, EvalError> {
    let all = slice(records)?;
    let (isa, esa) = split_slices(records);
    let unparseable = records.iter().filter(|r| r.unparseable).count() as u64;
    Ok(EvalReport {
        all,
        isa: slice(&isa)?,
        esa: slice(&esa)?,
        unparseable,
        unparseable_rate: ratio(unparseable, records.len() as u64),
        fallback,
        fingerprint: fingerprint.to_string(),
    })
}

/// One record per line.
pub fn records_to_jsonl(records: &[PredictionRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<PredictionRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
