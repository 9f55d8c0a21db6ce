//! Read-only instrumentation over engine outputs: hidden-state drift,
//! attention entropy, attention cost accounting, visibility frequency and
//! high-norm token relocation, plus a CSV report writer.

mod cost;
mod drift;
mod entropy;
mod relocation;
mod report;
mod visibility;

pub use cost::{attention_cost, cost_from_trace, planned_steps, CostReport, StepCost};
pub use drift::{drift, drift_layers, DriftRecord, ModalityDrift};
pub use entropy::{attention_entropy, row_entropy};
pub use relocation::{inject_high_norm, relocate_high_norm, relocation_logits, Relocation};
pub use report::{read_report_kind, write_report, REPORT_VERSION};
pub use visibility::{visibility_frequency, visibility_from_mask};
