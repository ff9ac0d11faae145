//! Scoring: exact-match accuracy, a confusion matrix over the terminal
//! paths, per-class precision/recall/F1, and report files.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::path::DtmfPath;
use crate::prompt::RoutingCondition;
use crate::router::{DatasetFilter, Prediction, RoutingResult, INVALID_LABEL};

pub const UNKNOWN_PATH_LABEL: &str = "UNKNOWN_PATH";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no results to score")]
    Empty,
    #[error("result {intent_id} has ground truth {ground_truth}, which is not a class")]
    UnknownClass { intent_id: String, ground_truth: DtmfPath },
    #[error("class {0} is listed twice")]
    DuplicateClass(DtmfPath),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub fn accuracy(results: &[RoutingResult]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(results.iter().filter(|r| r.correct).count() as f64 / results.len() as f64)
}

/// Rows are true classes. Columns are the same classes followed by
/// `INVALID` and `UNKNOWN_PATH` (a well-formed path outside the menu).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_labels: Vec<DtmfPath>,
    pub predicted_labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn class_count(&self) -> usize {
        self.true_labels.len()
    }

    pub fn invalid_column(&self) -> usize {
        self.class_count()
    }

    pub fn unknown_column(&self) -> usize {
        self.class_count() + 1
    }

    pub fn get(&self, truth: &DtmfPath, predicted: &str) -> u64 {
        let row = self.true_labels.iter().position(|t| t == truth);
        let col = self.predicted_labels.iter().position(|p| p == predicted);
        match (row, col) {
            (Some(r), Some(c)) => self.counts[r][c],
            _ => 0,
        }
    }

    pub fn row_sum(&self, row: usize) -> u64 {
        self.counts[row].iter().sum()
    }

    pub fn column_sum(&self, col: usize) -> u64 {
        self.counts.iter().map(|row| row[col]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.class_count()).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion_matrix(results: &[RoutingResult], classes: &[DtmfPath]) -> Result<ConfusionMatrix, EvalError> {
    let mut index = HashMap::with_capacity(classes.len());
    for (i, c) in classes.iter().enumerate() {
        if index.insert(c, i).is_some() {
            return Err(EvalError::DuplicateClass(c.clone()));
        }
    }
    let n = classes.len();
    let mut counts = vec![vec![0u64; n + 2]; n];
    for r in results {
        let row = *index.get(&r.ground_truth).ok_or_else(|| EvalError::UnknownClass {
            intent_id: r.intent_id.clone(),
            ground_truth: r.ground_truth.clone(),
        })?;
        let col = match &r.predicted {
            Prediction::Invalid => n,
            Prediction::Path(p) => index.get(p).copied().unwrap_or(n + 1),
        };
        counts[row][col] += 1;
    }
    let mut predicted_labels: Vec<String> = classes.iter().map(ToString::to_string).collect();
    predicted_labels.push(INVALID_LABEL.to_string());
    predicted_labels.push(UNKNOWN_PATH_LABEL.to_string());
    Ok(ConfusionMatrix { true_labels: classes.to_vec(), predicted_labels, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: DtmfPath,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Nothing was predicted as this class; precision is reported as 0.
    pub precision_undefined: bool,
    /// The class has no results; recall is reported as 0.
    pub recall_undefined: bool,
}

pub fn per_class_metrics(matrix: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..matrix.class_count())
        .map(|i| {
            let tp = matrix.counts[i][i] as f64;
            let support = matrix.row_sum(i);
            let predicted = matrix.column_sum(i);
            let recall = if support == 0 { 0.0 } else { tp / support as f64 };
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            ClassMetrics {
                class: matrix.true_labels[i].clone(),
                precision,
                recall,
                f1,
                support,
                precision_undefined: predicted == 0,
                recall_undefined: support == 0,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub n: usize,
    pub matrix: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub condition: RoutingCondition,
    pub dataset_filter: DatasetFilter,
    pub model_name: String,
}

impl EvalReport {
    /// Scores one run. `classes` are the menu's terminal paths in menu order.
    pub fn build(
        results: &[RoutingResult],
        classes: &[DtmfPath],
        condition: RoutingCondition,
        dataset_filter: DatasetFilter,
        model_name: impl Into<String>,
    ) -> Result<Self, EvalError> {
        let accuracy = accuracy(results)?;
        let matrix = confusion_matrix(results, classes)?;
        Ok(Self {
            accuracy,
            n: results.len(),
            per_class: per_class_metrics(&matrix),
            matrix,
            condition,
            dataset_filter,
            model_name: model_name.into(),
        })
    }

    pub fn accuracy_percent(&self) -> String {
        format!("{:.2}", self.accuracy * 100.0)
    }

    /// One markdown table row: condition, dataset, accuracy (%), n.
    pub fn table_row(&self) -> String {
        format!(
            "| {} | {} | {} | {} |",
            self.condition.table_label(),
            self.dataset_filter.table_label(),
            self.accuracy_percent(),
            self.n
        )
    }
}

pub const TABLE_HEADER: &str = "| IVR Context | Dataset | Accuracy (%) | N |\n|---|---|---|---|";

/// A markdown accuracy table with one row per report.
pub fn summary_table(reports: &[EvalReport]) -> String {
    let mut out = String::from(TABLE_HEADER);
    for r in reports {
        out.push('\n');
        out.push_str(&r.table_row());
    }
    out.push('\n');
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReportFormat {
    /// `report.json`
    Json,
    /// `matrix.csv` and `matrix_long.csv`
    Csv,
    /// `summary.md`
    Markdown,
}

impl ReportFormat {
    pub const ALL: [Self; 3] = [Self::Json, Self::Csv, Self::Markdown];
}

pub fn matrix_csv(matrix: &ConfusionMatrix) -> String {
    let mut out = String::from("true\\predicted");
    for label in &matrix.predicted_labels {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for (label, row) in matrix.true_labels.iter().zip(&matrix.counts) {
        out.push_str(&label.to_string());
        for c in row {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

/// `true,predicted,count` for every cell, zeros included, for plotting.
pub fn matrix_long_csv(matrix: &ConfusionMatrix) -> String {
    let mut out = String::from("true,predicted,count\n");
    for (label, row) in matrix.true_labels.iter().zip(&matrix.counts) {
        for (predicted, c) in matrix.predicted_labels.iter().zip(row) {
            let _ = writeln!(out, "{label},{predicted},{c}");
        }
    }
    out
}

pub fn summary_markdown(report: &EvalReport) -> String {
    let mut out = format!("# Routing accuracy\n\nModel: `{}`\n\n", report.model_name);
    out.push_str(&summary_table(std::slice::from_ref(report)));
    out.push_str("\n## Per-class metrics\n\n| Path | Precision | Recall | F1 | Support |\n|---|---|---|---|---|\n");
    for m in &report.per_class {
        let mark = |v: f64, undefined: bool| if undefined { "n/a".to_string() } else { format!("{v:.2}") };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.2} | {} |",
            m.class,
            mark(m.precision, m.precision_undefined),
            mark(m.recall, m.recall_undefined),
            m.f1,
            m.support
        );
    }
    let invalid = report.matrix.column_sum(report.matrix.invalid_column());
    let unknown = report.matrix.column_sum(report.matrix.unknown_column());
    let _ = write!(out, "\nInvalid replies: {invalid}. Paths outside the menu: {unknown}.\n");
    out
}

/// Writes the requested formats into `dir`, creating it if needed, and
/// returns the written paths.
pub fn emit_report(report: &EvalReport, formats: &BTreeSet<ReportFormat>, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(dir).map_err(|source| EvalError::Io { path: dir.to_path_buf(), source })?;
    let mut files = Vec::new();
    for format in formats {
        let outputs = match format {
            ReportFormat::Json => vec![("report.json", serde_json::to_string_pretty(report)? + "\n")],
            ReportFormat::Csv => vec![
                ("matrix.csv", matrix_csv(&report.matrix)),
                ("matrix_long.csv", matrix_long_csv(&report.matrix)),
            ],
            ReportFormat::Markdown => vec![("summary.md", summary_markdown(report))],
        };
        for (name, body) in outputs {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|source| EvalError::Io { path: path.clone(), source })?;
            files.push(path);
        }
    }
    Ok(files)
}

pub fn read_report(path: &Path) -> Result<EvalReport, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> DtmfPath {
        s.parse().unwrap()
    }

    fn result(truth: &str, predicted: Prediction) -> RoutingResult {
        RoutingResult {
            intent_id: format!("{truth}/{predicted}"),
            condition: RoutingCondition::FlattenedPaths,
            raw_response: predicted.to_string(),
            correct: predicted.path() == Some(&p(truth)),
            known_path: true,
            predicted,
            normalization_applied: vec![],
            ground_truth: p(truth),
            latency_ms: 0,
            model_name: "m".into(),
            attempt_count: 1,
            error: None,
        }
    }

    fn path_pred(s: &str) -> Prediction {
        Prediction::Path(p(s))
    }

    #[test]
    fn accuracy_examples() {
        let mut rs: Vec<_> = (0..3).map(|_| result("1-1", path_pred("1-1"))).collect();
        rs.push(result("1-1", path_pred("1-2")));
        assert_eq!(accuracy(&rs).unwrap(), 0.75);
        assert_eq!(accuracy(&[result("1-1", Prediction::Invalid)]).unwrap(), 0.0);
        assert!(matches!(accuracy(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn matrix_columns() {
        let classes = [p("1-1"), p("1-2")];
        let rs = [
            result("1-1", Prediction::Invalid),
            result("1-2", path_pred("7-7")),
            result("1-2", path_pred("1-1")),
        ];
        let m = confusion_matrix(&rs, &classes).unwrap();
        assert_eq!(m.get(&p("1-1"), INVALID_LABEL), 1);
        assert_eq!(m.get(&p("1-2"), UNKNOWN_PATH_LABEL), 1);
        assert_eq!(m.get(&p("1-2"), "1-1"), 1);
        assert_eq!(m.total(), 3);
        assert!(matches!(
            confusion_matrix(&[result("9", path_pred("9"))], &classes),
            Err(EvalError::UnknownClass { .. })
        ));
    }

    #[test]
    fn recall_and_undefined_flags() {
        let classes = [p("2-2-1"), p("2-2-3"), p("3-1")];
        let mut rs: Vec<_> = (0..8).map(|_| result("2-2-3", path_pred("2-2-1"))).collect();
        rs.extend((0..2).map(|_| result("2-2-3", path_pred("2-2-3"))));
        let metrics = per_class_metrics(&confusion_matrix(&rs, &classes).unwrap());
        assert_eq!(metrics[1].recall, 0.2);
        assert_eq!(metrics[1].precision, 1.0);
        assert!(metrics[0].recall_undefined && !metrics[0].precision_undefined);
        assert_eq!(metrics[0].precision, 0.0);
        assert!(metrics[2].recall_undefined && metrics[2].precision_undefined);
        assert_eq!(metrics[2].f1, 0.0);
    }

    #[test]
    fn table_row_format() {
        let classes = [p("1-1")];
        let rs: Vec<_> = (0..230).map(|_| result("1-1", path_pred("1-1"))).collect();
        let report =
            EvalReport::build(&rs, &classes, RoutingCondition::FlattenedPaths, DatasetFilter::BaseOnly, "m").unwrap();
        assert_eq!(report.table_row(), "| Flattened Paths | Base Only | 100.00 | 230 |");
    }

    #[test]
    fn csv_shapes() {
        let classes = [p("1"), p("2")];
        let m = confusion_matrix(&[result("1", path_pred("2"))], &classes).unwrap();
        assert_eq!(matrix_csv(&m), "true\\predicted,1,2,INVALID,UNKNOWN_PATH\n1,0,1,0,0\n2,0,0,0,0\n");
        assert_eq!(matrix_long_csv(&m).lines().count(), 1 + 2 * 4);
    }
}
