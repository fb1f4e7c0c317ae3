//! Label-based multi-label metrics.
//!
//! Per binary attribute, predictions are thresholded and counted into a
//! confusion matrix, giving accuracy `(TP+TN)/(TP+TN+FP+FN)`, precision
//! `TP/(TP+FP)`, recall `TP/(TP+FN)` and F1 `2PR/(P+R)`. A zero denominator
//! yields 0 and is flagged. Group values average the group's attributes;
//! reported values average the groups. Attributes with no scored instance
//! are left out of the averages.

use std::fmt::Write as _;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{AttributeSchema, LabelVector};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn metrics(&self) -> Metrics {
        let ratio = |num: u64, den: u64| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
        let (accuracy, _) = ratio(self.tp + self.tn, self.total());
        let (precision, p0) = ratio(self.tp, self.tp + self.fp);
        let (recall, r0) = ratio(self.tp, self.tp + self.fn_);
        let (f1, f0) = if precision + recall == 0.0 {
            (0.0, true)
        } else {
            (2.0 * precision * recall / (precision + recall), false)
        };
        Metrics {
            accuracy,
            precision,
            recall,
            f1,
            zero_division: p0 || r0 || f0,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.tn += o.tn;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Some value above came from a zero denominator.
    #[serde(default)]
    pub zero_division: bool,
}

impl Metrics {
    fn mean(items: &[Metrics]) -> Metrics {
        if items.is_empty() {
            return Metrics::default();
        }
        let n = items.len() as f64;
        let sum = |f: fn(&Metrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Metrics {
            accuracy: sum(|m| m.accuracy),
            precision: sum(|m| m.precision),
            recall: sum(|m| m.recall),
            f1: sum(|m| m.f1),
            zero_division: items.iter().any(|m| m.zero_division),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeRow {
    pub name: String,
    pub group: String,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub name: String,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub instances: usize,
    pub attributes: Vec<AttributeRow>,
    pub groups: Vec<GroupRow>,
    #[serde(rename = "macro")]
    pub macro_avg: Metrics,
    /// Mean over attributes, ignoring groups.
    pub attribute_mean: Metrics,
}

/// Per-attribute confusion counts. `probabilities` is row-major `(N, M)`.
pub fn confusion_counts(
    probabilities: &[f64],
    labels: &[LabelVector],
    m: usize,
    threshold: f64,
) -> Result<Vec<ConfusionCounts>> {
    if probabilities.len() != labels.len() * m {
        return Err(Error::Shape(format!(
            "{} probabilities for {} instances of {m} attributes",
            probabilities.len(),
            labels.len()
        )));
    }
    let mut counts = vec![ConfusionCounts::default(); m];
    for (row, label) in probabilities.chunks(m.max(1)).zip(labels) {
        if label.len() != m {
            return Err(Error::Shape(format!("label of length {} for {m} attributes", label.len())));
        }
        for j in 0..m {
            if label.known[j] {
                counts[j].record(row[j] >= threshold, label.values[j] == 1);
            }
        }
    }
    Ok(counts)
}

/// Roll per-attribute counts up through the schema's groups.
pub fn report_from_counts(counts: &[ConfusionCounts], schema: &AttributeSchema, threshold: f64, instances: usize) -> MetricsReport {
    let attrs = schema.binary_attributes();
    let attributes: Vec<AttributeRow> = attrs
        .iter()
        .zip(counts)
        .map(|(a, c)| AttributeRow {
            name: a.name.clone(),
            group: schema.groups[a.group].name.clone(),
            counts: *c,
            metrics: c.metrics(),
        })
        .collect();
    let groups: Vec<GroupRow> = schema
        .groups
        .iter()
        .zip(schema.group_ranges())
        .filter_map(|(g, r)| {
            let scored: Vec<Metrics> = attributes[r.clone()]
                .iter()
                .filter(|a| a.counts.total() > 0)
                .map(|a| a.metrics)
                .collect();
            (!scored.is_empty()).then(|| GroupRow {
                name: g.name.clone(),
                metrics: Metrics::mean(&scored),
            })
        })
        .collect();
    let macro_avg = Metrics::mean(&groups.iter().map(|g| g.metrics).collect::<Vec<_>>());
    let attribute_mean = Metrics::mean(
        &attributes
            .iter()
            .filter(|a| a.counts.total() > 0)
            .map(|a| a.metrics)
            .collect::<Vec<_>>(),
    );
    MetricsReport {
        threshold,
        instances,
        attributes,
        groups,
        macro_avg,
        attribute_mean,
    }
}

pub fn compute_metrics(
    probabilities: &[f64],
    labels: &[LabelVector],
    schema: &AttributeSchema,
    threshold: f64,
) -> Result<MetricsReport> {
    let counts = confusion_counts(probabilities, labels, schema.len(), threshold)?;
    Ok(report_from_counts(&counts, schema, threshold, labels.len()))
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-attribute table: `Attribute | Acc | F1`, then the group average.
    pub fn attribute_table(&self) -> String {
        let width = self.attributes.iter().map(|a| a.name.len()).max().unwrap_or(9).max(9);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$} | {:>6} | {:>6}", "Attribute", "Acc", "F1");
        let _ = writeln!(s, "{}", "-".repeat(width + 18));
        for a in &self.attributes {
            let _ = writeln!(s, "{:<width$} | {:>6} | {:>6}", a.name, pct(a.metrics.accuracy), pct(a.metrics.f1));
        }
        let _ = writeln!(s, "{}", "-".repeat(width + 18));
        let _ = writeln!(
            s,
            "{:<width$} | {:>6} | {:>6}",
            "Average",
            pct(self.macro_avg.accuracy),
            pct(self.macro_avg.f1)
        );
        s
    }

    /// Per-group table with all four metrics and the macro row.
    pub fn group_table(&self) -> String {
        let width = self.groups.iter().map(|g| g.name.len()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$} | {:>8} | {:>9} | {:>8} | {:>8}",
            "Group", "Accuracy", "Precision", "Recall", "F1"
        );
        let _ = writeln!(s, "{}", "-".repeat(width + 47));
        let row = |s: &mut String, name: &str, m: &Metrics| {
            let _ = writeln!(
                s,
                "{:<width$} | {:>8} | {:>9} | {:>8} | {:>8}",
                name,
                pct(m.accuracy),
                pct(m.precision),
                pct(m.recall),
                pct(m.f1)
            );
        };
        for g in &self.groups {
            row(&mut s, &g.name, &g.metrics);
        }
        let _ = writeln!(s, "{}", "-".repeat(width + 47));
        row(&mut s, "Average", &self.macro_avg);
        s
    }
}

/// One method's macro metrics on each dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub method: String,
    pub backbone: String,
    pub cells: Vec<(String, Metrics)>,
}

/// `Methods | Backbone | Accuracy Precision Recall F1` with one column
/// block per dataset, datasets side by side.
pub fn results_table(rows: &[ResultsRow]) -> String {
    let datasets: Vec<String> = rows
        .first()
        .map(|r| r.cells.iter().map(|(d, _)| d.clone()).collect())
        .unwrap_or_default();
    let mw = rows.iter().map(|r| r.method.len()).max().unwrap_or(7).max(7);
    let bw = rows.iter().map(|r| r.backbone.len()).max().unwrap_or(8).max(8);
    let block = |a: &str, p: &str, r: &str, f: &str| format!(" | {a:>8} {p:>9} {r:>7} {f:>8}");
    let bl = block("", "", "", "").len() - 3;
    let mut head = format!("{:<mw$} | {:<bw$}", "", "");
    let mut sub = format!("{:<mw$} | {:<bw$}", "Methods", "Backbone");
    for d in &datasets {
        head.push_str(&format!(" | {d:^bl$}"));
        sub.push_str(&block("Accuracy", "Precision", "Recall", "F1 score"));
    }
    let mut s = String::new();
    let _ = writeln!(s, "{}", head.trim_end());
    let _ = writeln!(s, "{sub}");
    let _ = writeln!(s, "{}", "-".repeat(sub.len()));
    for r in rows {
        let mut line = format!("{:<mw$} | {:<bw$}", r.method, r.backbone);
        for (_, m) in &r.cells {
            line.push_str(&block(&pct(m.accuracy), &pct(m.precision), &pct(m.recall), &pct(m.f1)));
        }
        let _ = writeln!(s, "{line}");
    }
    s
}
