//! The frozen dual encoder: a ViT-style vision tower that exposes per-layer
//! token features, and a causal text tower that embeds attribute sentences.

pub mod freeze;
pub mod import;
pub mod text;
pub mod tokenizer;
pub mod vision;

pub use freeze::{assert_frozen, FreezeReport, FrozenSnapshot};
pub use text::{TextEncoder, TextEncoderConfig, TextFeatureSet};
pub use tokenizer::{ClipBpeTokenizer, HashTokenizer, TokenizedText, Tokenizer, TokenizerConfig};
pub use vision::{LayerFeatureSet, VisionEncoder, VisionEncoderConfig, VisionOutput};
