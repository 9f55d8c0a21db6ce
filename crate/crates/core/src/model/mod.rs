//! A small pre-norm transformer with switchable causal/bidirectional masking.
//!
//! Positions enter only through rotary phases keyed to explicit position ids,
//! so rows can be physically reordered without changing what they encode.
//! The per-layer step is shared by the plain [`forward`] and by the
//! row-subset [`forward_rows`] used by caching engines.

mod attention;
mod config;
mod forward;
mod rotary;
mod snapshot;
mod weights;

pub use attention::{
    attention, build_causal_mask, count_visible_entries, keysets_from_mask, mask_from_keysets,
    KeySet,
};
pub use config::{MaskMode, ModelConfig};
pub use forward::{
    forward, forward_rows, forward_traced, AttentionMaps, LayerActivations, LayerKv, LayerPlan,
    RowCache, RowForward,
};
pub use rotary::apply_rotary;
pub use snapshot::{load_snapshot, read_snapshot, save_snapshot, write_snapshot};
pub use weights::{init_weights, LayerWeights, Weights};
