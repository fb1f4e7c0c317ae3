//! Parameter ablation: fine-tuned parameter counts of full fine-tuning and
//! of each side-branch combination, in the layout
//! `NO. | FFN | Transformer | SSN | TSN | Acc | F1 | Params(M)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Model, ModelConfig, Tuning};
use crate::schema::AttributeSchema;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// Linear fusion instead of the fusion transformer.
    pub ffn: bool,
    pub transformer: bool,
    pub ssn: bool,
    pub tsn: bool,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub trainable_params: u64,
}

/// Trainable counts for full fine-tuning, spatial only, temporal only and
/// both branches. Counted on a shapes-only model, so full scale is cheap.
pub fn parameter_ablation(cfg: &ModelConfig, schema: &AttributeSchema) -> Result<Vec<AblationRow>> {
    let row = |tuning: Tuning, ssn: bool, tsn: bool| -> Result<AblationRow> {
        let mut c = cfg.clone();
        c.side_net.spatial = ssn || !tsn;
        c.side_net.temporal = tsn || !ssn;
        let model = Model::shapes_only(&c, schema, tuning)?;
        Ok(AblationRow {
            ffn: false,
            transformer: true,
            ssn,
            tsn,
            accuracy: None,
            f1: None,
            trainable_params: model.count_parameters().trainable,
        })
    };
    Ok(vec![
        row(Tuning::Full, false, false)?,
        row(Tuning::Side, true, false)?,
        row(Tuning::Side, false, true)?,
        row(Tuning::Side, true, true)?,
    ])
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mark = |b: bool| if b { "x" } else { "" };
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
    let mut s = String::new();
    let header = format!(
        "{:>3} | {:^3} | {:^11} | {:^3} | {:^3} | {:>6} | {:>6} | {:>9}",
        "NO.", "FFN", "Transformer", "SSN", "TSN", "Acc", "F1", "Params(M)"
    );
    let _ = writeln!(s, "{header}");
    let _ = writeln!(s, "{}", "-".repeat(header.len()));
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            s,
            "{:>3} | {:^3} | {:^11} | {:^3} | {:^3} | {:>6} | {:>6} | {:>9.2}",
            i + 1,
            mark(r.ffn),
            mark(r.transformer),
            mark(r.ssn),
            mark(r.tsn),
            opt(r.accuracy),
            opt(r.f1),
            r.trainable_params as f64 / 1e6
        );
    }
    s
}
