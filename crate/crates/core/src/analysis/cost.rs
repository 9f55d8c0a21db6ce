use serde::{Deserialize, Serialize};

use crate::diffusion::{DecodeConfig, DecodeTrace, SequenceLayout, UnmaskRule};
use crate::error::{Error, Result};
use crate::mars::{step_plan, AnchorPlan, EngineKind, MarsParams};
use crate::model::ModelConfig;

/// Attention cost of one step. Recorded fields are set when the report was
/// built from a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCost {
    pub step: usize,
    pub block: usize,
    pub block_step: usize,
    pub analytic_entries: u64,
    pub analytic_row_layers: u64,
    pub recorded_entries: Option<u64>,
    pub recorded_row_layers: Option<u64>,
    /// What a full recompute would have cost at this step.
    pub vanilla_entries: u64,
    pub vanilla_row_layers: u64,
}

/// Score-entry and row-layer accounting for one engine on one workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub engine: String,
    pub steps: Vec<StepCost>,
}

impl CostReport {
    pub fn total_entries(&self) -> u64 {
        self.steps.iter().map(|s| s.analytic_entries).sum()
    }

    pub fn total_row_layers(&self) -> u64 {
        self.steps.iter().map(|s| s.analytic_row_layers).sum()
    }

    pub fn vanilla_entries(&self) -> u64 {
        self.steps.iter().map(|s| s.vanilla_entries).sum()
    }

    pub fn vanilla_row_layers(&self) -> u64 {
        self.steps.iter().map(|s| s.vanilla_row_layers).sum()
    }

    pub fn entry_ratio(&self) -> f64 {
        self.total_entries() as f64 / self.vanilla_entries() as f64
    }

    pub fn row_layer_ratio(&self) -> f64 {
        self.total_row_layers() as f64 / self.vanilla_row_layers() as f64
    }
}

/// `(step, block, block_step)` for every step of a count-rule decode. The
/// step count of a threshold-rule decode depends on model confidences and
/// cannot be planned.
pub fn planned_steps(decode: &DecodeConfig, layout: &SequenceLayout) -> Result<Vec<(usize, usize, usize)>> {
    decode.validate()?;
    let per_step = match decode.rule()? {
        UnmaskRule::Count(n) => n,
        UnmaskRule::Threshold(_) => {
            return Err(Error::Config(
                "a confidence-threshold decode has no fixed step plan; use a trace".into(),
            ))
        }
    };
    let mut out = Vec::new();
    for (block, (allotted, span)) in decode
        .steps_per_block()
        .into_iter()
        .zip(layout.response_blocks())
        .enumerate()
    {
        let mut masked = span.len();
        let mut block_step = 0;
        while masked > 0 {
            block_step += 1;
            let remaining = allotted.saturating_sub(block_step) + 1;
            masked -= per_step.max(masked.div_ceil(remaining)).min(masked);
            out.push((out.len() + 1, block, block_step));
        }
    }
    Ok(out)
}

fn step_cost(
    kind: EngineKind,
    params: Option<&MarsParams>,
    config: &ModelConfig,
    layout: &SequenceLayout,
    anchors: Option<&AnchorPlan>,
    (step, block, block_step): (usize, usize, usize),
) -> Result<StepCost> {
    let n = layout.seq_len();
    let plan = step_plan(kind, params, config, layout, anchors, step, block, block_step)?;
    let full = step_plan(EngineKind::Vanilla, None, config, layout, None, step, block, block_step)?;
    Ok(StepCost {
        step,
        block,
        block_step,
        analytic_entries: plan.entries(n),
        analytic_row_layers: plan.row_layers(),
        recorded_entries: None,
        recorded_row_layers: None,
        vanilla_entries: full.entries(n),
        vanilla_row_layers: full.row_layers(),
    })
}

fn placeholder_anchors(params: Option<&MarsParams>, layout: &SequenceLayout) -> Result<Option<AnchorPlan>> {
    match params {
        Some(p) if p.chunk_enabled => AnchorPlan::lowest(layout, &p.budgets).map(Some),
        _ => Ok(None),
    }
}

/// Closed-form cost of a count-rule decode, from the attention plan alone.
pub fn attention_cost(
    kind: EngineKind,
    params: Option<&MarsParams>,
    config: &ModelConfig,
    layout: &SequenceLayout,
    decode: &DecodeConfig,
) -> Result<CostReport> {
    let anchors = placeholder_anchors(params, layout)?;
    let steps = planned_steps(decode, layout)?
        .into_iter()
        .map(|s| step_cost(kind, params, config, layout, anchors.as_ref(), s))
        .collect::<Result<_>>()?;
    Ok(CostReport {
        engine: kind.as_str().into(),
        steps,
    })
}

/// Analytic cost at the steps a trace actually took, cross-checked against
/// the counts it recorded.
pub fn cost_from_trace(
    trace: &DecodeTrace,
    kind: EngineKind,
    params: Option<&MarsParams>,
    config: &ModelConfig,
    layout: &SequenceLayout,
) -> Result<CostReport> {
    if trace.engine != kind.as_str() {
        return Err(Error::CostMismatch(format!(
            "trace was recorded by `{}`, plan is for `{}`",
            trace.engine,
            kind.as_str()
        )));
    }
    let anchors = placeholder_anchors(params, layout)?;
    let mut steps = Vec::with_capacity(trace.records.len());
    for r in &trace.records {
        let mut c = step_cost(kind, params, config, layout, anchors.as_ref(), (r.step, r.block, r.block_step))?;
        if c.analytic_entries != r.entries || c.analytic_row_layers != r.row_layers {
            return Err(Error::CostMismatch(format!(
                "step {}: recorded {} entries / {} row-layers, plan gives {} / {}",
                r.step, r.entries, r.row_layers, c.analytic_entries, c.analytic_row_layers
            )));
        }
        c.recorded_entries = Some(r.entries);
        c.recorded_row_layers = Some(r.row_layers);
        steps.push(c);
    }
    Ok(CostReport {
        engine: kind.as_str().into(),
        steps,
    })
}
