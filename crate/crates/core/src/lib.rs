//! Attribute recognition for pedestrian video tracklets by side tuning a
//! frozen vision-language dual encoder.
//!
//! The backbone (a ViT vision tower and a causal text tower) stays frozen.
//! Two lightweight side networks read its per-layer token features: a
//! spatial one that runs over each frame and a temporal one that runs over
//! the frame sequence. Their aggregated output is fused with text
//! embeddings of every attribute sentence and classified by a small head.
//!
//! Modules, bottom up:
//!
//! - [`schema`]: attribute groups, binary attributes, label vectors
//! - [`data`]: manifests, frame sampling, preprocessing, synthetic tracklets
//! - [`backbone`]: the frozen encoders and the freeze contract
//! - [`side`]: spatial and temporal side networks and aggregation
//! - [`fusion`]: fusion transformer, prediction head, attention rollout
//! - [`objective`]: weighted binary cross-entropy and metrics
//! - [`peft`]: LoRA, adapter and prompt baselines
//! - [`model`]: the assembled model for each tuning mode
//! - [`train`]: configuration, training loop, checkpoints

pub mod backbone;
pub mod data;
pub mod error;
pub mod fusion;
pub mod model;
pub mod nn;
pub mod objective;
pub mod peft;
pub mod schema;
pub mod side;
pub mod train;

pub use error::{Error, Result};
pub use fusion::{FusionConfig, HeadKind, Mode, Prediction};
pub use model::{label_tensors, Model, ModelConfig, ModelOutput, Precision, Tuning};
pub use nn::{ParamReport, ParamStore};
pub use objective::{compute_metrics, weighted_bce_loss, LossConfig, Metrics, MetricsReport, Reduction};
pub use peft::{PeftKind, PeftVariant};
pub use schema::{AttributeGroup, AttributeSchema, LabelVector};
pub use side::{AggMethod, SideNetConfig};
pub use train::{RunConfig, TrainConfig};
