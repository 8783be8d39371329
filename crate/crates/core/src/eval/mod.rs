//! Confusion matrix, per-class precision / recall / F1 and report output.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::ClassLabel;
use crate::error::{Error, Result};
use crate::model::{Model, NUM_CLASSES};
use crate::train::{argmax_rows, Dataset};

/// Counts indexed `[true][predicted]` in class order Normal, Covid, Pneumonia.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_labels(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Domain(format!(
                "{} true labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = ConfusionMatrix::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= NUM_CLASSES || p >= NUM_CLASSES {
                return Err(Error::Domain(format!("label pair ({t}, {p}) out of range")));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    /// Samples whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    /// Samples predicted as `c`.
    pub fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }
}

/// Metrics for one class; `None` marks an undefined value (zero denominator).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: ClassLabel,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub total: u64,
    pub classes: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean; undefined when either input is or when both are zero.
pub fn f1_score(precision: Option<f64>, recall: Option<f64>) -> Option<f64> {
    let (p, r) = (precision?, recall?);
    (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
}

/// Half-up rounding to two decimals, robust to binary representation
/// (0.945 rounds to 0.95).
pub fn round2(x: f64) -> f64 {
    let scaled = (x * 100.0 * 1e6).round() / 1e6;
    (scaled + 0.5).floor() / 100.0
}

pub fn class_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Domain("no samples were evaluated".into()));
    }
    let classes = ClassLabel::ALL
        .iter()
        .map(|&class| {
            let c = class.index();
            let tp = cm.counts[c][c];
            let precision = ratio(tp, cm.predicted(c));
            let recall = ratio(tp, cm.support(c));
            ClassMetrics {
                class,
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: cm.support(c),
            }
        })
        .collect();
    Ok(MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        total,
        classes,
        confusion: *cm,
    })
}

fn display_name(c: ClassLabel) -> &'static str {
    match c {
        ClassLabel::Covid => "Covid-19",
        other => other.dir_name(),
    }
}

fn fmt2(v: Option<f64>) -> String {
    v.map_or_else(|| "undef".to_string(), |x| format!("{:.2}", round2(x)))
}

fn fmt_full(v: Option<f64>) -> String {
    v.map_or_else(|| "undef".to_string(), |x| format!("{x:.6}"))
}

#[derive(Serialize)]
struct RoundedClass {
    class: ClassLabel,
    precision: Option<f64>,
    recall: Option<f64>,
    f1: Option<f64>,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    #[serde(flatten)]
    report: &'a MetricsReport,
    rounded: Vec<RoundedClass>,
    accuracy_rounded: f64,
}

impl MetricsReport {
    pub fn class(&self, c: ClassLabel) -> &ClassMetrics {
        &self.classes[c.index()]
    }

    /// Aligned table: rounded values, then full precision, then the matrix.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>9} {:>6} {:>8} {:>7}", "Class", "Precision", "Recall", "F1-Score", "Support");
        for m in &self.classes {
            let _ = writeln!(
                s,
                "{:<10} {:>9} {:>6} {:>8} {:>7}",
                display_name(m.class),
                fmt2(m.precision),
                fmt2(m.recall),
                fmt2(m.f1),
                m.support
            );
        }
        let _ = writeln!(s, "\nAccuracy {:.2} ({} samples)\n", round2(self.accuracy), self.total);
        let _ = writeln!(s, "Full precision:");
        for m in &self.classes {
            let _ = writeln!(
                s,
                "{:<10} {:>9} {:>9} {:>9}",
                display_name(m.class),
                fmt_full(m.precision),
                fmt_full(m.recall),
                fmt_full(m.f1)
            );
        }
        let _ = writeln!(s, "Accuracy   {:.6}\n", self.accuracy);
        let _ = writeln!(s, "Confusion (rows true, columns predicted):");
        let _ = writeln!(s, "{:<10} {:>9} {:>9} {:>9}", "", "Normal", "Covid-19", "Pneumonia");
        for c in ClassLabel::ALL {
            let row = self.confusion.counts[c.index()];
            let _ = writeln!(s, "{:<10} {:>9} {:>9} {:>9}", display_name(c), row[0], row[1], row[2]);
        }
        s
    }

    /// JSON with full-precision and rounded values; undefined metrics are null.
    pub fn to_json(&self) -> String {
        let doc = ReportJson {
            report: self,
            rounded: self
                .classes
                .iter()
                .map(|m| RoundedClass {
                    class: m.class,
                    precision: m.precision.map(round2),
                    recall: m.recall.map(round2),
                    f1: m.f1.map(round2),
                })
                .collect(),
            accuracy_rounded: round2(self.accuracy),
        };
        serde_json::to_string_pretty(&doc).expect("report serializes") + "\n"
    }
}

/// Inference-mode predictions (argmax, ties to the lower class index).
pub fn predict(model: &Model, data: &dyn Dataset, batch_size: usize) -> Result<Vec<usize>> {
    let order: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in order.chunks(batch_size.max(1)) {
        let probs = model.predict_proba(&data.batch(chunk)?)?;
        out.extend(argmax_rows(&probs)?);
    }
    Ok(out)
}

pub fn evaluate(model: &Model, data: &dyn Dataset, batch_size: usize) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::Domain("evaluation split is empty".into()));
    }
    let predicted = predict(model, data, batch_size)?;
    class_metrics(&ConfusionMatrix::from_labels(&data.labels(), &predicted)?)
}
