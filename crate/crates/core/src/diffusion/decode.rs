use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerActivations, Weights};
use crate::numeric::{softmax_rows, Matrix};

use super::trace::{DecodeTrace, GroupRefresh, StepRecord};
use super::unmask::{select_unmask, UnmaskRule};
use super::SequenceLayout;

/// Block-wise decoding parameters. Exactly one of `tokens_per_step` and
/// `confidence_threshold` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    pub generation_length: usize,
    /// Upper bound on denoising steps, split evenly across blocks.
    pub num_steps: usize,
    pub block_length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens_per_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_threshold: Option<f64>,
}

impl Default for DecodeConfig {
    /// 64 tokens in two blocks of 32, four tokens per step.
    fn default() -> Self {
        Self {
            generation_length: 64,
            num_steps: 16,
            block_length: 32,
            tokens_per_step: Some(4),
            confidence_threshold: None,
        }
    }
}

impl DecodeConfig {
    /// Generation length 128, 128 steps, block length 32, one token per step.
    pub fn ablation_protocol() -> Self {
        Self {
            generation_length: 128,
            num_steps: 128,
            block_length: 32,
            tokens_per_step: Some(1),
            confidence_threshold: None,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.generation_length.div_ceil(self.block_length)
    }

    pub fn rule(&self) -> Result<UnmaskRule> {
        match (self.tokens_per_step, self.confidence_threshold) {
            (Some(0), None) => Err(Error::Config("decode.tokens_per_step must be >= 1".into())),
            (Some(n), None) => Ok(UnmaskRule::Count(n)),
            (None, Some(c)) if c > 0.0 && c <= 1.0 => Ok(UnmaskRule::Threshold(c)),
            (None, Some(c)) => Err(Error::Config(format!(
                "decode.confidence_threshold {c} outside (0, 1]"
            ))),
            _ => Err(Error::Config(
                "decode: set exactly one of tokens_per_step and confidence_threshold".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.generation_length == 0 || self.block_length == 0 {
            return Err(Error::Config(
                "decode.generation_length and decode.block_length must be positive".into(),
            ));
        }
        if self.num_steps < self.num_blocks() {
            return Err(Error::Config(format!(
                "decode.num_steps {} is fewer than the {} blocks",
                self.num_steps,
                self.num_blocks()
            )));
        }
        self.rule().map(|_| ())
    }

    /// Steps allotted to each block; the remainder goes to the earliest blocks.
    pub fn steps_per_block(&self) -> Vec<usize> {
        let nb = self.num_blocks();
        (0..nb)
            .map(|b| self.num_steps / nb + usize::from(b < self.num_steps % nb))
            .collect()
    }
}

/// Inputs an engine sees at one denoising step.
pub struct StepContext<'a> {
    pub weights: &'a Weights,
    pub layout: &'a SequenceLayout,
    /// Current embeddings of the whole sequence (visual, prompt, response).
    pub embeddings: &'a Matrix,
    /// Global 1-based step: the refresh clock.
    pub step: usize,
    pub block: usize,
    /// 1-based step within the block.
    pub block_step: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub full_recompute: bool,
    pub refresh: Vec<GroupRefresh>,
    pub entries: u64,
    pub row_layers: u64,
    pub proxy_entries: u64,
    pub anchor_digest: Option<String>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Logits for the active block's rows, in order.
    pub logits: Matrix,
    pub report: StepReport,
    /// Full activations, for engines that computed them.
    pub activations: Option<LayerActivations>,
}

/// One denoising step of some caching strategy.
pub trait DenoiseEngine {
    fn name(&self) -> &str;
    fn step(&mut self, ctx: &StepContext<'_>) -> Result<StepOutput>;
}

#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub tokens: Vec<usize>,
    pub trace: DecodeTrace,
}

pub fn decode(
    engine: &mut dyn DenoiseEngine,
    weights: &Weights,
    layout: &SequenceLayout,
    visual_embeddings: &Matrix,
    prompt: &[usize],
    config: &DecodeConfig,
) -> Result<DecodeResult> {
    decode_observed(
        engine,
        weights,
        layout,
        visual_embeddings,
        prompt,
        config,
        &mut |_, _| {},
    )
}

/// [`decode`] that hands every step's record and engine output to `observer`.
///
/// The response starts fully masked and blocks are decoded left to right.
/// Each step commits at least as many tokens as needed to finish the block
/// within its step allotment, so decoding never exceeds `num_steps`.
pub fn decode_observed(
    engine: &mut dyn DenoiseEngine,
    weights: &Weights,
    layout: &SequenceLayout,
    visual_embeddings: &Matrix,
    prompt: &[usize],
    config: &DecodeConfig,
    observer: &mut dyn FnMut(&StepRecord, &StepOutput),
) -> Result<DecodeResult> {
    config.validate()?;
    let rule = config.rule()?;
    if config.generation_length != layout.response_len()
        || config.num_blocks() != layout.num_blocks()
        || layout.response_blocks()[0].len() != config.block_length.min(config.generation_length)
    {
        return Err(Error::Config(
            "decode config does not match the sequence layout".into(),
        ));
    }
    if visual_embeddings.rows() != layout.visual_len() || prompt.len() != layout.prompt_span().len()
    {
        return Err(Error::Shape("inputs do not match the layout".into()));
    }
    let mask = layout.mask_token_id();
    let vocab = weights.config.vocab_size;
    let mut no_mask_token = Matrix::zeros(1, vocab);
    no_mask_token.set(0, mask, f64::NEG_INFINITY);

    let response_start = layout.response_span().start;
    let mut tokens = vec![mask; layout.response_len()];
    let mut embeddings = visual_embeddings
        .vstack(&weights.embed_tokens(prompt)?)?
        .vstack(&weights.embed_tokens(&tokens)?)?;
    let mut trace = DecodeTrace::new(engine.name(), weights.config.num_groups());
    let mut step = 0;

    for (block, allotted) in config.steps_per_block().into_iter().enumerate() {
        let span = layout.response_blocks()[block].clone();
        let mut block_step = 0;
        loop {
            let masked: Vec<usize> = span
                .clone()
                .map(|i| i - response_start)
                .filter(|&i| tokens[i] == mask)
                .collect();
            if masked.is_empty() {
                break;
            }
            step += 1;
            block_step += 1;
            let started = Instant::now();
            let out = engine.step(&StepContext {
                weights,
                layout,
                embeddings: &embeddings,
                step,
                block,
                block_step,
            })?;
            if out.logits.shape() != (span.len(), vocab) {
                return Err(Error::Shape(format!(
                    "engine returned {:?} logits for a block of {}",
                    out.logits.shape(),
                    span.len()
                )));
            }
            let local: Vec<usize> = masked.iter().map(|&i| i + response_start - span.start).collect();
            let rows = out.logits.select_rows(&local);
            let bias = Matrix::from_fn(rows.rows(), vocab, |_, j| no_mask_token.get(0, j));
            let probs = softmax_rows(&rows, Some(&bias))?;

            let remaining_steps = allotted.saturating_sub(block_step) + 1;
            let forced = masked.len().div_ceil(remaining_steps);
            let mut commits = select_unmask(&probs, &masked, rule);
            if commits.len() < forced {
                commits = select_unmask(&probs, &masked, UnmaskRule::Count(forced));
            }
            let mut committed = Vec::with_capacity(commits.len());
            for c in &commits {
                tokens[c.position] = c.token;
                embeddings
                    .row_mut(response_start + c.position)
                    .copy_from_slice(weights.embedding.row(c.token));
                committed.push((c.position, c.token));
            }
            let report = &out.report;
            let record = StepRecord {
                step,
                block,
                block_step,
                committed,
                full_recompute: report.full_recompute,
                refresh: report.refresh.clone(),
                entries: report.entries,
                row_layers: report.row_layers,
                proxy_entries: report.proxy_entries,
                anchor_digest: report.anchor_digest.clone(),
                elapsed_ns: started.elapsed().as_nanos() as u64,
            };
            observer(&record, &out);
            trace.records.push(record);
        }
    }
    Ok(DecodeResult { tokens, trace })
}
