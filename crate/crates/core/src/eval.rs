//! Mask-free inference and scoring: greedy prediction, confusion
//! accounting with explicit malformed handling, accuracy, macro F1, and
//! per-object reports.
//!
//! Malformed emissions are counted as incorrect for accuracy and as
//! predictions for no class in F1: they lower the recall of the true
//! class without creating false positives elsewhere. The positive class
//! of the confusion matrix is `Defect`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, Sample};
use crate::policy::{greedy_action, PolicyError, PolicyParams};
use crate::protocol::{parse_response, Label};

/// Outcome of a single prediction: a parsed answer or a malformed
/// emission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Answer(Label),
    Invalid,
}

/// Binary confusion counts with malformed predictions tracked by true
/// class. Positive class = `Defect`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_pos: usize,
    pub true_neg: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub invalid_defect: usize,
    pub invalid_normal: usize,
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: Label, prediction: Prediction) {
        match (prediction, truth) {
            (Prediction::Answer(Label::Defect), Label::Defect) => self.true_pos += 1,
            (Prediction::Answer(Label::Defect), Label::Normal) => self.false_pos += 1,
            (Prediction::Answer(Label::Normal), Label::Normal) => self.true_neg += 1,
            (Prediction::Answer(Label::Normal), Label::Defect) => self.false_neg += 1,
            (Prediction::Invalid, Label::Defect) => self.invalid_defect += 1,
            (Prediction::Invalid, Label::Normal) => self.invalid_normal += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_pos
            + self.true_neg
            + self.false_pos
            + self.false_neg
            + self.invalid_defect
            + self.invalid_normal
    }

    pub fn invalid_total(&self) -> usize {
        self.invalid_defect + self.invalid_normal
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.true_pos += other.true_pos;
        self.true_neg += other.true_neg;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
        self.invalid_defect += other.invalid_defect;
        self.invalid_normal += other.invalid_normal;
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("sample {0} has no features; predictions need the feature pipeline")]
    MissingFeatures(String),
    #[error("response references unknown sample id {0}")]
    UnknownSampleId(String),
    #[error("duplicate response for sample id {0}")]
    DuplicateResponse(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Greedy prediction for one sample: argmax action, realized and parsed;
/// a malformed argmax yields `Invalid`. Ties break toward the lower
/// action index.
pub fn predict(policy: &PolicyParams, sample: &Sample) -> Result<Prediction, EvalError> {
    if sample.features.is_empty() {
        return Err(EvalError::MissingFeatures(sample.id.clone()));
    }
    let action = greedy_action(policy, &sample.features)?;
    let response = crate::policy::realize_response(action, sample);
    Ok(match parse_response(&response).answer() {
        Some(label) => Prediction::Answer(label),
        None => Prediction::Invalid,
    })
}

/// Score raw response texts against ground truth, pooled over all
/// responses. Each `(sample_id, text)` pair is parsed with the strict
/// grammar; well-formed answers update tp/tn/fp/fn, malformed ones update
/// the invalid count of the true class.
pub fn score_responses(
    responses: &[(String, String)],
    truths: &Dataset,
) -> Result<ConfusionMatrix, EvalError> {
    let grouped = score_responses_by_object(responses, truths)?;
    let mut pooled = ConfusionMatrix::default();
    for cm in grouped.values() {
        pooled.merge(cm);
    }
    Ok(pooled)
}

/// As [`score_responses`], but keyed by object name for per-class reports.
pub fn score_responses_by_object(
    responses: &[(String, String)],
    truths: &Dataset,
) -> Result<BTreeMap<String, ConfusionMatrix>, EvalError> {
    let by_id = truths.by_id();
    let mut seen = std::collections::HashSet::new();
    let mut grouped: BTreeMap<String, ConfusionMatrix> = BTreeMap::new();
    for (sample_id, text) in responses {
        let sample = by_id
            .get(sample_id.as_str())
            .ok_or_else(|| EvalError::UnknownSampleId(sample_id.clone()))?;
        if !seen.insert(sample_id.as_str()) {
            return Err(EvalError::DuplicateResponse(sample_id.clone()));
        }
        let prediction = match parse_response(text).answer() {
            Some(label) => Prediction::Answer(label),
            None => Prediction::Invalid,
        };
        grouped
            .entry(sample.object_name.clone())
            .or_default()
            .record(sample.label, prediction);
    }
    Ok(grouped)
}

/// Predict over a dataset with a policy, grouping the confusion counts by
/// object name.
pub fn predict_by_object(
    policy: &PolicyParams,
    dataset: &Dataset,
) -> Result<BTreeMap<String, ConfusionMatrix>, EvalError> {
    let mut grouped: BTreeMap<String, ConfusionMatrix> = BTreeMap::new();
    for sample in dataset.iter() {
        let prediction = predict(policy, sample)?;
        grouped
            .entry(sample.object_name.clone())
            .or_default()
            .record(sample.label, prediction);
    }
    Ok(grouped)
}

/// Proportion of correct classifications; malformed predictions count in
/// the denominator as incorrect.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    Ok((cm.true_pos + cm.true_neg) as f64 / total as f64)
}

fn f1_from_counts(tp: usize, predicted_pos: usize, actual_pos: usize) -> f64 {
    let precision = if predicted_pos > 0 {
        tp as f64 / predicted_pos as f64
    } else {
        0.0
    };
    let recall = if actual_pos > 0 {
        tp as f64 / actual_pos as f64
    } else {
        0.0
    };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Per-class F1 scores `(defect, normal)`. Malformed predictions count in
/// the recall denominator of their true class but are positives for no
/// class; a class with zero precision and recall scores 0.
pub fn f1_per_class(cm: &ConfusionMatrix) -> Result<(f64, f64), EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    let defect = f1_from_counts(
        cm.true_pos,
        cm.true_pos + cm.false_pos,
        cm.true_pos + cm.false_neg + cm.invalid_defect,
    );
    let normal = f1_from_counts(
        cm.true_neg,
        cm.true_neg + cm.false_neg,
        cm.true_neg + cm.false_pos + cm.invalid_normal,
    );
    Ok((defect, normal))
}

/// Unweighted mean of the two per-class F1 scores.
pub fn f1_macro(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    let (defect, normal) = f1_per_class(cm)?;
    Ok((defect + normal) / 2.0)
}

/// Pooled and per-object metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub f1_macro: f64,
    /// object name -> (accuracy, f1_macro)
    pub per_class: BTreeMap<String, (f64, f64)>,
    pub malformed_rate: f64,
}

/// Build the report from per-object confusion matrices. Overall metrics
/// are pooled over summed counts, not averaged over objects.
pub fn per_class_report(
    grouped: &BTreeMap<String, ConfusionMatrix>,
) -> Result<EvalReport, EvalError> {
    if grouped.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let mut pooled = ConfusionMatrix::default();
    let mut per_class = BTreeMap::new();
    for (object, cm) in grouped {
        pooled.merge(cm);
        per_class.insert(object.clone(), (accuracy(cm)?, f1_macro(cm)?));
    }
    Ok(EvalReport {
        accuracy: accuracy(&pooled)?,
        f1_macro: f1_macro(&pooled)?,
        per_class,
        malformed_rate: pooled.invalid_total() as f64 / pooled.total() as f64,
    })
}

/// Render an `accuracy\f1` cell as percentages with two decimals.
pub fn metric_cell(accuracy: f64, f1: f64) -> String {
    format!("{:.2}\\{:.2}", accuracy * 100.0, f1 * 100.0)
}

/// Render the report as a per-object table with `accuracy\f1` cells.
pub fn render_report_table(report: &EvalReport) -> String {
    let width = report
        .per_class
        .keys()
        .map(|k| k.len())
        .chain(["object".len(), "overall".len()])
        .max()
        .unwrap_or(7)
        + 2;
    let mut out = String::new();
    out.push_str(&format!("{:<width$}{}\n", "object", "acc\\f1"));
    for (object, (acc, f1)) in &report.per_class {
        out.push_str(&format!("{:<width$}{}\n", object, metric_cell(*acc, *f1)));
    }
    out.push_str(&format!(
        "{:<width$}{}\n",
        "overall",
        metric_cell(report.accuracy, report.f1_macro)
    ));
    out.push_str(&format!(
        "malformed rate: {:.2}%\n",
        report.malformed_rate * 100.0
    ));
    out
}

/// Machine-readable report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "row", rename_all = "snake_case")]
pub enum ReportRecord {
    Object {
        object: String,
        accuracy: f64,
        f1_macro: f64,
        counts: ConfusionMatrix,
    },
    Overall {
        accuracy: f64,
        f1_macro: f64,
        malformed_rate: f64,
        counts: ConfusionMatrix,
    },
}

/// Per-object rows plus a pooled overall row.
pub fn report_records(
    grouped: &BTreeMap<String, ConfusionMatrix>,
) -> Result<Vec<ReportRecord>, EvalError> {
    if grouped.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let mut records = Vec::with_capacity(grouped.len() + 1);
    let mut pooled = ConfusionMatrix::default();
    for (object, cm) in grouped {
        pooled.merge(cm);
        records.push(ReportRecord::Object {
            object: object.clone(),
            accuracy: accuracy(cm)?,
            f1_macro: f1_macro(cm)?,
            counts: *cm,
        });
    }
    records.push(ReportRecord::Overall {
        accuracy: accuracy(&pooled)?,
        f1_macro: f1_macro(&pooled)?,
        malformed_rate: pooled.invalid_total() as f64 / pooled.total() as f64,
        counts: pooled,
    });
    Ok(records)
}
