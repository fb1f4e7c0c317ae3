//! Side tuning against the parameter-efficient baselines on one dataset.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::TrackletDataset;
use crate::error::Result;
use crate::model::{Model, ModelConfig, Tuning};
use crate::objective::{LossConfig, Metrics};
use crate::peft::{PeftKind, PeftVariant};
use crate::schema::AttributeSchema;
use crate::train::config::TrainConfig;
use crate::train::trainer::{evaluate, train};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub trainable_params: u64,
    pub total_params: u64,
    pub ms_per_step: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub metrics: Metrics,
}

/// Side tuning followed by LoRA, adapters and prompt tokens (sized by
/// `peft`).
pub fn default_methods(peft: &PeftVariant) -> Vec<Tuning> {
    let mut out = vec![Tuning::Side];
    for kind in [PeftKind::Lora, PeftKind::Adapter, PeftKind::PromptTokens] {
        out.push(Tuning::Peft(PeftVariant { kind, ..peft.clone() }));
    }
    out
}

/// Train every method from the same initial weights and data order.
/// Metrics come from `eval_idx`, or from the training tracklets when it is
/// empty.
#[allow(clippy::too_many_arguments)]
pub fn compare_peft(
    model_cfg: &ModelConfig,
    schema: &AttributeSchema,
    data: &TrackletDataset,
    train_idx: &[usize],
    eval_idx: &[usize],
    cfg: &TrainConfig,
    loss: &LossConfig,
    methods: &[Tuning],
) -> Result<Vec<CompareRow>> {
    let scored = if eval_idx.is_empty() { train_idx } else { eval_idx };
    let mut rows = Vec::with_capacity(methods.len());
    for tuning in methods {
        let model = Model::new(model_cfg, schema, tuning.clone())?;
        let counts = model.count_parameters();
        let outcome = train(&model, data, train_idx, &[], cfg, loss, None)?;
        let ev = evaluate(&model, data, scored, &cfg.eval_sampler(), cfg.batch_size, cfg.threshold)?;
        log::info!("{}: final loss {:.4}, F1 {:.4}", tuning.label(), outcome.final_loss(), ev.report.macro_avg.f1);
        rows.push(CompareRow {
            method: tuning.label(),
            trainable_params: counts.trainable,
            total_params: counts.total,
            ms_per_step: outcome.mean_step_ms,
            initial_loss: outcome.initial_loss(),
            final_loss: outcome.final_loss(),
            metrics: ev.report.macro_avg,
        });
    }
    Ok(rows)
}

/// `Method | Precision | Recall | F1 | Trainable Params | ms/step`.
pub fn compare_table(rows: &[CompareRow]) -> String {
    let mw = rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut s = String::new();
    let header = format!(
        "{:<mw$} | {:>9} | {:>7} | {:>7} | {:>16} | {:>9}",
        "Method", "Precision", "Recall", "F1", "Trainable Params", "ms/step"
    );
    let _ = writeln!(s, "{header}");
    let _ = writeln!(s, "{}", "-".repeat(header.len()));
    for r in rows {
        let _ = writeln!(
            s,
            "{:<mw$} | {:>9.2} | {:>7.2} | {:>7.2} | {:>16} | {:>9.1}",
            r.method,
            100.0 * r.metrics.precision,
            100.0 * r.metrics.recall,
            100.0 * r.metrics.f1,
            r.trainable_params,
            r.ms_per_step
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_has_one_line_per_method() {
        let row = CompareRow {
            method: "LoRA".into(),
            trainable_params: 1234,
            total_params: 5678,
            ms_per_step: 3.5,
            initial_loss: 1.0,
            final_loss: 0.5,
            metrics: Metrics::default(),
        };
        let t = compare_table(&[row.clone(), CompareRow { method: "Side-Tuning".into(), ..row }]);
        assert_eq!(t.lines().count(), 4);
        assert!(t.contains("Side-Tuning |"));
    }

    #[test]
    fn default_methods_cover_every_variant() {
        let m = default_methods(&PeftVariant::default());
        assert_eq!(m.len(), 4);
        assert_eq!(m[0], Tuning::Side);
    }
}
