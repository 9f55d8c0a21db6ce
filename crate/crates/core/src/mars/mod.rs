//! Multi-modal asynchronous cache refreshing and its two baselines.
//!
//! - [`schedule`]: refresh intervals per layer group and modality
//! - [`chunk`]: frame-wise neighbourhoods and the key sets derived from them
//! - [`anchors`]: proxy scoring, per-frame anchor selection, relocation
//! - [`engine`]: vanilla, dual-cache and MARS denoising engines
//! - [`presets`]: named schedule/budget presets and engine config files

pub mod anchors;
pub mod chunk;
pub mod engine;
pub mod presets;
pub mod schedule;

pub use anchors::{
    equidistant_sample, proxy_scores, relocate_anchors, select_anchors, select_frame_anchors,
    AnchorPlan,
};
pub use chunk::{anchor_augmented_attention, anchor_keysets, chunk_attention, chunk_keysets, neighborhood};
pub use engine::{engine_step, mars_plan, step_plan, visual_keysets, Engine, EngineKind, MarsParams, StepPlan};
pub use presets::{builtin_preset_names, load_preset, Budget, EngineSpec};
pub use schedule::{refresh_due, validate_schedule, Modality, RefreshSchedule};
