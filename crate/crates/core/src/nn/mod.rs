pub mod layers;
pub mod params;

pub use layers::{quick_gelu, sigmoid, softmax_last, Block, BlockHooks, LayerNorm, Linear};
pub use params::{Init, ParamReport, ParamStore, PrefixCount};
