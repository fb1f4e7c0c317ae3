//! Training objective and evaluation metrics.

pub mod loss;
pub mod metrics;

pub use loss::{attribute_weights, weighted_bce_loss, LossConfig, Reduction};
pub use metrics::{
    compute_metrics, confusion_counts, report_from_counts, results_table, AttributeRow, ResultsRow, ConfusionCounts, GroupRow,
    Metrics, MetricsReport, DEFAULT_THRESHOLD,
};
