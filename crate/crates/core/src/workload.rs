//! Synthetic frame-structured inputs.
//!
//! Each frame has a shared base vector that drifts as a random walk from
//! frame to frame; its patches add independent noise on top. The prompt is
//! uniform over the vocabulary minus the mask token.

use serde::{Deserialize, Serialize};

use crate::diffusion::{DecodeConfig, SequenceLayout};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numeric::{seeded_stream, Matrix};

/// Visual and prompt shape of a workload. Missing fields take the
/// [`Default`] values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    pub frames: usize,
    pub patches_per_frame: usize,
    pub prompt_length: usize,
    /// Std of the first frame's base vector.
    pub frame_std: f64,
    /// Std of each frame-to-frame step of the base vector.
    pub frame_drift_std: f64,
    /// Std of per-patch noise around the frame base.
    pub patch_std: f64,
}

impl Default for LayoutConfig {
    /// 8 frames of 16 patches and a 16-token prompt.
    fn default() -> Self {
        Self {
            frames: 8,
            patches_per_frame: 16,
            prompt_length: 16,
            frame_std: 0.02,
            frame_drift_std: 0.005,
            patch_std: 0.02,
        }
    }
}

impl LayoutConfig {
    pub fn layout(&self, model: &ModelConfig, decode: &DecodeConfig) -> Result<SequenceLayout> {
        if model.vocab_size < 2 {
            return Err(Error::Config("vocab_size must leave room for a mask token".into()));
        }
        SequenceLayout::new(
            self.frames,
            self.patches_per_frame,
            self.prompt_length,
            decode.generation_length,
            decode.block_length,
            model.vocab_size - 1,
        )
    }
}

/// Everything a decode needs besides weights and engine.
#[derive(Debug, Clone)]
pub struct Workload {
    pub layout: SequenceLayout,
    pub visual: Matrix,
    pub prompt: Vec<usize>,
}

/// Builds the synthetic workload for `seed`.
pub fn synthetic_workload(
    model: &ModelConfig,
    layout: &LayoutConfig,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<Workload> {
    let seq = layout.layout(model, decode)?;
    let d = model.model_dim;
    let mut frames = seeded_stream(seed, "workload/frames");
    let mut patches = seeded_stream(seed, "workload/patches");
    let mut base: Vec<f64> = (0..d).map(|_| frames.normal(layout.frame_std)).collect();
    let mut visual = Matrix::zeros(seq.visual_len(), d);
    for (n, span) in seq.frame_spans().iter().enumerate() {
        if n > 0 {
            base.iter_mut().for_each(|b| *b += frames.normal(layout.frame_drift_std));
        }
        for i in span.clone() {
            for (x, b) in visual.row_mut(i).iter_mut().zip(&base) {
                *x = b + patches.normal(layout.patch_std);
            }
        }
    }
    let mut text = seeded_stream(seed, "workload/prompt");
    let mask = seq.mask_token_id();
    let prompt = (0..layout.prompt_length).map(|_| text.below(mask)).collect();
    Ok(Workload {
        layout: seq,
        visual,
        prompt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_workload_shapes() {
        let w = synthetic_workload(&ModelConfig::default(), &LayoutConfig::default(), &DecodeConfig::default(), 42)
            .unwrap();
        assert_eq!(w.layout.seq_len(), 208);
        assert_eq!(w.visual.shape(), (128, 128));
        assert_eq!(w.prompt.len(), 16);
        assert!(w.prompt.iter().all(|&t| t < 255));
    }

    #[test]
    fn deterministic_per_seed() {
        let c = ModelConfig::default();
        let (l, d) = (LayoutConfig::default(), DecodeConfig::default());
        let a = synthetic_workload(&c, &l, &d, 1).unwrap();
        let b = synthetic_workload(&c, &l, &d, 1).unwrap();
        let other = synthetic_workload(&c, &l, &d, 2).unwrap();
        assert_eq!(a.visual, b.visual);
        assert_eq!(a.prompt, b.prompt);
        assert_ne!(a.visual, other.visual);
    }

    #[test]
    fn patches_cluster_by_frame() {
        let w = synthetic_workload(&ModelConfig::default(), &LayoutConfig::default(), &DecodeConfig::default(), 3)
            .unwrap();
        let dist = |i: usize, j: usize| -> f64 {
            w.visual.row(i).iter().zip(w.visual.row(j)).map(|(a, b)| (a - b).powi(2)).sum()
        };
        let mean = |pairs: &[(usize, usize)]| pairs.iter().map(|&(i, j)| dist(i, j)).sum::<f64>() / pairs.len() as f64;
        let same: Vec<_> = (0..16).flat_map(|i| (i + 1..16).map(move |j| (i, j))).collect();
        let far: Vec<_> = (0..16).flat_map(|i| (112..128).map(move |j| (i, j))).collect();
        assert!(mean(&same) < mean(&far));
    }
}
