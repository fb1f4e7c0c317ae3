//! Training loop and evaluation.

use std::io::Write;
use std::time::Instant;

use candle_core::backprop::GradStore;
use candle_core::{DType, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::freeze::{assert_frozen, FreezeReport, FrozenSnapshot};
use crate::data::{Batch, SamplerConfig, TrackletDataset};
use crate::error::{Error, Result};
use crate::fusion::Mode;
use crate::model::{label_tensors, Model, Tuning};
use crate::objective::{compute_metrics, weighted_bce_loss, LossConfig, Metrics, MetricsReport};
use crate::schema::compute_positive_ratios;
use crate::train::config::TrainConfig;

const EPOCH_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogKind {
    Step,
    Eval,
    Epoch,
}

/// One line of the JSONL training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub kind: LogKind,
    pub step: usize,
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freeze_passed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

impl LogRecord {
    fn new(kind: LogKind, step: usize, epoch: usize) -> Self {
        Self {
            kind,
            step,
            epoch,
            loss: None,
            lr: None,
            grad_norm: None,
            metrics: None,
            freeze_passed: None,
            elapsed_ms: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub steps: usize,
    pub epochs: usize,
    pub losses: Vec<f64>,
    pub records: Vec<LogRecord>,
    pub freeze: Vec<FreezeReport>,
    /// Final evaluation on the held-out indices, when there are any.
    pub eval: Option<MetricsReport>,
    pub mean_step_ms: f64,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.losses.first().copied().unwrap_or(f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub ids: Vec<String>,
    /// Row-major `(N, M)`.
    pub probabilities: Vec<f64>,
    pub report: MetricsReport,
}

/// Per-attribute positive ratios: the schema's if it carries them, else
/// computed from the training labels.
pub fn loss_ratios(model: &Model, data: &TrackletDataset, train_idx: &[usize]) -> Result<Vec<f64>> {
    match &model.schema.positive_ratios {
        Some(r) => Ok(r.clone()),
        None => compute_positive_ratios(&data.labels(train_idx)),
    }
}

fn grad_norm(vars: &[Var], grads: &GradStore) -> Result<(f64, usize)> {
    let mut sq = 0.0;
    let mut bad = 0;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            let s = g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !s.is_finite() {
                bad += 1;
            }
            sq += s;
        }
    }
    Ok((sq.sqrt(), bad))
}

pub struct Trainer<'m> {
    model: &'m Model,
    cfg: TrainConfig,
    loss_cfg: LossConfig,
    ratios: Vec<f64>,
    vars: Vec<Var>,
    opt: AdamW,
    snapshot: Option<FrozenSnapshot>,
    step: usize,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m Model, cfg: &TrainConfig, loss_cfg: &LossConfig, ratios: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        if ratios.len() != model.schema.len() {
            return Err(Error::Config(format!(
                "{} positive ratios for {} attributes",
                ratios.len(),
                model.schema.len()
            )));
        }
        let vars = model.params.trainable_vars();
        if vars.is_empty() {
            return Err(Error::Config("model has no trainable parameters".into()));
        }
        let opt = AdamW::new(
            vars.clone(),
            ParamsAdamW {
                lr: cfg.lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: 0.0,
            },
        )?;
        let snapshot = match model.tuning {
            Tuning::Full => None,
            _ => Some(FrozenSnapshot::capture(&model.params)?),
        };
        Ok(Self {
            model,
            cfg: cfg.clone(),
            loss_cfg: loss_cfg.clone(),
            ratios,
            vars,
            opt,
            snapshot,
            step: 0,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Training-mode forward and backward on one batch. Updates the
    /// batch-norm running statistics but not the weights.
    pub fn loss_and_gradients(&self, batch: &Batch) -> Result<(f64, GradStore)> {
        let out = self.model.forward(&batch.videos, Mode::Train)?;
        let (y, mask) = label_tensors(&batch.labels, self.model.dtype())?;
        let loss = weighted_bce_loss(&out.prediction.probabilities, &y, mask.as_ref(), &self.ratios, &self.loss_cfg)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        let grads = loss.backward()?;
        Ok((value, grads))
    }

    pub fn apply(&mut self, grads: &GradStore) -> Result<()> {
        self.opt.step(grads)?;
        self.step += 1;
        if self.model.backbone_trainable() {
            self.model.invalidate_text_cache();
        }
        Ok(())
    }

    /// One optimizer step; fails without updating if the loss or any
    /// gradient is not finite.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepStats> {
        let (loss, grads) = self.loss_and_gradients(batch)?;
        let (norm, bad) = grad_norm(&self.vars, &grads)?;
        if !loss.is_finite() || !norm.is_finite() {
            return Err(Error::NonFinite {
                step: self.step,
                diagnostic: format!(
                    "loss {loss}, gradient norm {norm} ({bad} non-finite parameter gradients), batch [{}]",
                    batch.ids.join(", ")
                ),
            });
        }
        self.apply(&grads)?;
        Ok(StepStats { loss, grad_norm: norm })
    }

    /// Check the freeze contract. Passes trivially under full fine-tuning.
    pub fn check_frozen(&self, grads: Option<&GradStore>) -> Result<FreezeReport> {
        match &self.snapshot {
            Some(s) => assert_frozen(&self.model.params, s, grads),
            None => Ok(FreezeReport {
                passed: true,
                ..FreezeReport::default()
            }),
        }
    }

    fn epoch_order(&self, train_idx: &[usize], epoch: usize) -> Vec<usize> {
        let mut order = train_idx.to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ (epoch as u64 + 1).wrapping_mul(EPOCH_MIX));
        order.shuffle(&mut rng);
        order
    }

    /// Train on `train_idx`; evaluate on `eval_idx` every `eval_every` steps
    /// and at the end. Log records are also written as JSON lines to `log`.
    pub fn run(
        &mut self,
        data: &TrackletDataset,
        train_idx: &[usize],
        eval_idx: &[usize],
        mut log: Option<&mut dyn Write>,
    ) -> Result<TrainOutcome> {
        if train_idx.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let per_epoch = train_idx.len().div_ceil(self.cfg.batch_size);
        let total = self.cfg.steps.unwrap_or(self.cfg.epochs * per_epoch);
        let sampler = self.cfg.train_sampler();
        let start = Instant::now();
        let mut records = Vec::new();
        let mut losses = Vec::with_capacity(total);
        let mut freeze = Vec::new();
        let mut epoch = 0;
        let mut emit = |r: LogRecord, records: &mut Vec<LogRecord>| -> Result<()> {
            if let Some(w) = log.as_deref_mut() {
                let line = serde_json::to_string(&r)?;
                writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
            }
            records.push(r);
            Ok(())
        };
        let elapsed = |deterministic: bool| (!deterministic).then(|| start.elapsed().as_secs_f64() * 1e3);

        'outer: loop {
            let order = self.epoch_order(train_idx, epoch);
            let sample_epoch = if self.cfg.resample_each_epoch { epoch as u64 } else { 0 };
            for chunk in order.chunks(self.cfg.batch_size) {
                let batch = data.batch(chunk, &sampler, sample_epoch)?;
                let stats = self.train_step(&batch)?;
                losses.push(stats.loss);
                let mut r = LogRecord::new(LogKind::Step, self.step, epoch);
                r.loss = Some(stats.loss);
                r.lr = Some(self.cfg.lr);
                r.grad_norm = Some(stats.grad_norm);
                r.elapsed_ms = elapsed(self.cfg.deterministic);
                emit(r, &mut records)?;
                if self.cfg.eval_every > 0 && self.step.is_multiple_of(self.cfg.eval_every) && !eval_idx.is_empty() && self.step < total {
                    let ev = evaluate(self.model, data, eval_idx, &self.cfg.eval_sampler(), self.cfg.batch_size, self.cfg.threshold)?;
                    let mut r = LogRecord::new(LogKind::Eval, self.step, epoch);
                    r.metrics = Some(ev.report.macro_avg);
                    emit(r, &mut records)?;
                }
                if self.step >= total {
                    break 'outer;
                }
            }
            let report = self.end_of_epoch(epoch, &mut freeze)?;
            let mut r = LogRecord::new(LogKind::Epoch, self.step, epoch);
            r.freeze_passed = Some(report);
            r.elapsed_ms = elapsed(self.cfg.deterministic);
            emit(r, &mut records)?;
            epoch += 1;
        }
        // The run stopped mid-epoch (or exactly at its end): check once more.
        let passed = self.end_of_epoch(epoch, &mut freeze)?;
        let mut r = LogRecord::new(LogKind::Epoch, self.step, epoch);
        r.freeze_passed = Some(passed);
        r.elapsed_ms = elapsed(self.cfg.deterministic);
        emit(r, &mut records)?;

        let mean_step_ms = start.elapsed().as_secs_f64() * 1e3 / self.step.max(1) as f64;
        let eval = if eval_idx.is_empty() {
            None
        } else {
            let ev = evaluate(self.model, data, eval_idx, &self.cfg.eval_sampler(), self.cfg.batch_size, self.cfg.threshold)?;
            let mut r = LogRecord::new(LogKind::Eval, self.step, epoch);
            r.metrics = Some(ev.report.macro_avg);
            emit(r, &mut records)?;
            Some(ev.report)
        };
        Ok(TrainOutcome {
            steps: self.step,
            epochs: epoch + 1,
            losses,
            records,
            freeze,
            eval,
            mean_step_ms,
        })
    }

    fn end_of_epoch(&self, epoch: usize, reports: &mut Vec<FreezeReport>) -> Result<bool> {
        let report = self.check_frozen(None)?;
        let passed = report.passed;
        if !passed {
            return Err(Error::Frozen(format!(
                "after epoch {epoch} (step {}): {}",
                self.step,
                report.offenders().join(", ")
            )));
        }
        reports.push(report);
        Ok(passed)
    }
}

/// Train `model` with ratios from the schema or the training labels.
pub fn train(
    model: &Model,
    data: &TrackletDataset,
    train_idx: &[usize],
    eval_idx: &[usize],
    cfg: &TrainConfig,
    loss: &LossConfig,
    log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    let ratios = loss_ratios(model, data, train_idx)?;
    Trainer::new(model, cfg, loss, ratios)?.run(data, train_idx, eval_idx, log)
}

/// Eval-mode predictions and metrics over `indices`.
pub fn evaluate(
    model: &Model,
    data: &TrackletDataset,
    indices: &[usize],
    sampler: &SamplerConfig,
    batch_size: usize,
    threshold: f64,
) -> Result<Evaluation> {
    let mut probabilities = Vec::with_capacity(indices.len() * model.schema.len());
    let mut ids = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk, sampler, 0)?;
        let out = model.forward(&batch.videos, Mode::Eval)?;
        let p = out.prediction.probabilities.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        probabilities.extend(p);
        ids.extend(batch.ids);
    }
    let labels = data.labels(indices);
    let report = compute_metrics(&probabilities, &labels, &model.schema, threshold)?;
    Ok(Evaluation {
        ids,
        probabilities,
        report,
    })
}
