//! Masked-diffusion corruption, the evaluation loss, and the reverse
//! block-wise decoding loop shared by every engine.

mod decode;
mod layout;
mod masking;
mod trace;
mod unmask;

pub use decode::{
    decode, decode_observed, DecodeConfig, DecodeResult, DenoiseEngine, StepContext, StepOutput,
    StepReport,
};
pub use layout::{Segment, SequenceLayout};
pub use masking::{dlm_loss, dlm_loss_terms, forward_mask, DiffusionState, LossTerms};
pub use trace::{DecodeTrace, GroupCounts, GroupRefresh, StepRecord, TRACE_SCHEMA};
pub use unmask::{select_unmask, Commit, UnmaskRule};
