//! Confusion matrix, per-class precision/recall/F1, macro and weighted
//! aggregates, and file rendering of evaluation reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::TrainHistory;

/// K x K counts; cell `[i][j]` = samples of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    class_names: Vec<String>,
}

/// Count true/predicted label pairs into a K x K matrix.
pub fn confusion(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Usage(format!(
            "label vectors differ in length: {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k || p >= k {
            return Err(Error::Domain(format!(
                "label {} out of range for {k} classes",
                t.max(p)
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names: (0..k).map(|c| format!("class_{c}")).collect(),
    })
}

impl ConfusionMatrix {
    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.k() {
            return Err(Error::Usage(format!(
                "{} names for a {}-class matrix",
                names.len(),
                self.k()
            )));
        }
        self.class_names = names;
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    /// One-vs-rest reduction for `class`: (TP, FP, FN, TN).
    pub fn one_vs_rest(&self, class: usize) -> (u64, u64, u64, u64) {
        let k = self.k();
        let tp = self.counts[class][class];
        let fp: u64 = (0..k)
            .filter(|&i| i != class)
            .map(|i| self.counts[i][class])
            .sum();
        let fn_: u64 = (0..k)
            .filter(|&j| j != class)
            .map(|j| self.counts[class][j])
            .sum();
        let tn = self.total() - tp - fp - fn_;
        (tp, fp, fn_, tn)
    }

    /// Row sum: number of samples whose true class is `class`.
    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }
}

/// Fraction of correctly predicted samples: trace / total.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Usage("accuracy of an empty confusion matrix".into()));
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// TP / (TP + FP) under one-vs-rest; 0 when the denominator is 0.
pub fn precision(cm: &ConfusionMatrix, class: usize) -> f64 {
    let (tp, fp, _, _) = cm.one_vs_rest(class);
    if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    }
}

/// TP / (TP + FN) under one-vs-rest; 0 when the denominator is 0.
pub fn recall(cm: &ConfusionMatrix, class: usize) -> f64 {
    let (tp, _, fn_, _) = cm.one_vs_rest(class);
    if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Precision/recall/F1 plus the class's sample count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Per-class metrics for every class, plus warnings for zero-denominator
/// degeneracies.
pub fn per_class_metrics(cm: &ConfusionMatrix) -> (Vec<ClassMetrics>, Vec<String>) {
    let mut warnings = Vec::new();
    let metrics = (0..cm.k())
        .map(|c| {
            let p = precision(cm, c);
            let r = recall(cm, c);
            let (tp, fp, fn_, _) = cm.one_vs_rest(c);
            if tp + fp == 0 || tp + fn_ == 0 {
                warnings.push(format!(
                    "class {} ({}): zero-denominator metric reported as 0",
                    c, cm.class_names[c]
                ));
            }
            ClassMetrics {
                precision: p,
                recall: r,
                f1: f1(p, r),
                support: cm.support(c),
            }
        })
        .collect();
    (metrics, warnings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateMode {
    Macro,
    Weighted,
}

/// Unweighted (macro) or support-weighted mean of per-class metrics.
pub fn aggregate(per_class: &[ClassMetrics], mode: AggregateMode) -> Result<ClassMetrics> {
    if per_class.is_empty() {
        return Err(Error::Usage("aggregate of an empty metric list".into()));
    }
    let total_support: u64 = per_class.iter().map(|m| m.support).sum();
    let weight = |m: &ClassMetrics| match mode {
        AggregateMode::Macro => 1.0 / per_class.len() as f64,
        AggregateMode::Weighted => {
            if total_support == 0 {
                0.0
            } else {
                m.support as f64 / total_support as f64
            }
        }
    };
    let mut agg = ClassMetrics {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        support: total_support,
    };
    for m in per_class {
        let w = weight(m);
        agg.precision += w * m.precision;
        agg.recall += w * m.recall;
        agg.f1 += w * m.f1;
    }
    Ok(agg)
}

/// Real vs synthetic row counts of the training set behind a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ProvenanceCounts {
    pub real: usize,
    pub synthetic: usize,
}

/// Everything a finished run reports: confusion matrix, per-class and
/// aggregate metrics, training history, config digest, and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Which run this is, e.g. "baseline" or "augmented".
    pub label: String,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: ClassMetrics,
    pub weighted_avg: ClassMetrics,
    pub history: TrainHistory,
    pub config_digest: String,
    pub provenance: ProvenanceCounts,
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    /// Assemble a report from predictions; class names come from the caller.
    pub fn from_predictions(
        label: &str,
        y_true: &[usize],
        y_pred: &[usize],
        class_names: &[String],
        history: TrainHistory,
        config_digest: &str,
        provenance: ProvenanceCounts,
    ) -> Result<Self> {
        let cm = confusion(y_true, y_pred, class_names.len())?
            .with_names(class_names.to_vec())?;
        let acc = accuracy(&cm)?;
        let (per_class, warnings) = per_class_metrics(&cm);
        let macro_avg = aggregate(&per_class, AggregateMode::Macro)?;
        let weighted_avg = aggregate(&per_class, AggregateMode::Weighted)?;
        Ok(EvaluationReport {
            label: label.to_string(),
            confusion: cm,
            per_class,
            accuracy: acc,
            macro_avg,
            weighted_avg,
            history,
            config_digest: config_digest.to_string(),
            provenance,
            warnings,
        })
    }
}

/// Metrics are written to files at 4 decimal places (full precision stays
/// in memory).
pub fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

#[derive(Serialize, Deserialize)]
struct MetricsFileClass {
    name: String,
    precision: f64,
    recall: f64,
    f1: f64,
    support: u64,
}

#[derive(Serialize, Deserialize)]
struct MetricsFile {
    label: String,
    accuracy: f64,
    classes: Vec<MetricsFileClass>,
    macro_avg: MetricsFileClass,
    weighted_avg: MetricsFileClass,
    provenance: ProvenanceCounts,
    config_digest: String,
    warnings: Vec<String>,
}

fn file_class(name: &str, m: &ClassMetrics) -> MetricsFileClass {
    MetricsFileClass {
        name: name.to_string(),
        precision: round4(m.precision),
        recall: round4(m.recall),
        f1: round4(m.f1),
        support: m.support,
    }
}

/// Render a report into `out_dir`:
/// - `confusion.csv` — the count matrix (rows true, columns predicted)
/// - `metrics.json`  — per-class and aggregate metrics at 4 decimals
/// - `curves.csv`    — one row per epoch of the training history
pub fn render_report(report: &EvaluationReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let mut cm_text = String::from("true\\pred");
    for name in report.confusion.class_names() {
        write!(cm_text, ",{name}").unwrap();
    }
    cm_text.push('\n');
    for (i, row) in report.confusion.counts().iter().enumerate() {
        write!(cm_text, "{}", report.confusion.class_names()[i]).unwrap();
        for v in row {
            write!(cm_text, ",{v}").unwrap();
        }
        cm_text.push('\n');
    }
    let cm_path = out_dir.join("confusion.csv");
    std::fs::write(&cm_path, cm_text)?;
    written.push(cm_path);

    let file = MetricsFile {
        label: report.label.clone(),
        accuracy: round4(report.accuracy),
        classes: report
            .per_class
            .iter()
            .enumerate()
            .map(|(c, m)| file_class(&report.confusion.class_names()[c], m))
            .collect(),
        macro_avg: file_class("macro_avg", &report.macro_avg),
        weighted_avg: file_class("weighted_avg", &report.weighted_avg),
        provenance: report.provenance,
        config_digest: report.config_digest.clone(),
        warnings: report.warnings.clone(),
    };
    let metrics_path = out_dir.join("metrics.json");
    let mut json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Checkpoint(format!("serializing metrics: {e}")))?;
    json.push('\n');
    std::fs::write(&metrics_path, json)?;
    written.push(metrics_path);

    let mut curves = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
    for (e, rec) in report.history.epochs.iter().enumerate() {
        writeln!(
            curves,
            "{},{},{},{},{}",
            e + 1,
            rec.train_loss,
            rec.train_accuracy,
            rec.val_loss,
            rec.val_accuracy
        )
        .unwrap();
    }
    let curves_path = out_dir.join("curves.csv");
    std::fs::write(&curves_path, curves)?;
    written.push(curves_path);

    Ok(written)
}

/// Before/after comparison table: one row per metric with a delta column
/// (`after - before` on the rounded values).
pub fn render_comparison(
    before: &EvaluationReport,
    after: &EvaluationReport,
    path: &Path,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut rows: Vec<(String, f64, f64)> = vec![(
        "accuracy".into(),
        before.accuracy,
        after.accuracy,
    )];
    for (c, name) in before.confusion.class_names().iter().enumerate() {
        let (b, a) = (&before.per_class[c], &after.per_class[c]);
        rows.push((format!("precision[{name}]"), b.precision, a.precision));
        rows.push((format!("recall[{name}]"), b.recall, a.recall));
        rows.push((format!("f1[{name}]"), b.f1, a.f1));
    }
    for (tag, b, a) in [
        ("macro", &before.macro_avg, &after.macro_avg),
        ("weighted", &before.weighted_avg, &after.weighted_avg),
    ] {
        rows.push((format!("{tag}_precision"), b.precision, a.precision));
        rows.push((format!("{tag}_recall"), b.recall, a.recall));
        rows.push((format!("{tag}_f1"), b.f1, a.f1));
    }
    let mut text = String::from("metric,before,after,delta\n");
    for (name, b, a) in rows {
        let (rb, ra) = (round4(b), round4(a));
        let delta = ra - rb + 0.0; // normalize -0.0
        writeln!(text, "{name},{rb:.4},{ra:.4},{delta:.4}").unwrap();
    }
    std::fs::write(path, text)?;
    Ok(())
}
