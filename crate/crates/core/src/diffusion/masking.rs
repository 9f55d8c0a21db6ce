use crate::error::{Error, Result};
use crate::model::{forward, Weights};
use crate::numeric::{Matrix, RandomStream};

use super::SequenceLayout;

/// Response tokens at one point of the diffusion process.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    /// Global 1-based denoising step (0 before decoding starts).
    pub step: usize,
    /// Masking level in `[0, 1]`.
    pub t: f64,
    pub tokens: Vec<usize>,
    pub masked: Vec<bool>,
    pub active_block: usize,
}

/// Independently replaces each token by `mask_token` with probability `t`.
pub fn forward_mask(
    clean_tokens: &[usize],
    t: f64,
    mask_token: usize,
    rng: &mut RandomStream,
) -> Result<DiffusionState> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange(format!("masking level t = {t} outside [0, 1]")));
    }
    let masked: Vec<bool> = clean_tokens.iter().map(|_| rng.uniform() < t).collect();
    let tokens = clean_tokens
        .iter()
        .zip(&masked)
        .map(|(&tok, &m)| if m { mask_token } else { tok })
        .collect();
    Ok(DiffusionState {
        step: 0,
        t,
        tokens,
        masked,
        active_block: 0,
    })
}

/// Components of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub loss: f64,
    pub masked: usize,
    /// Σ over masked positions of −log p(clean token).
    pub masked_nll: f64,
}

/// `−(1/t) Σ_i m_i log p(R⁰_i | visual, prompt, Rᵗ)`, averaged over the
/// response length. Visual and prompt tokens are never masked.
pub fn dlm_loss(
    weights: &Weights,
    layout: &SequenceLayout,
    visual_embeddings: &Matrix,
    prompt: &[usize],
    clean_response: &[usize],
    t: f64,
    rng: &mut RandomStream,
) -> Result<f64> {
    dlm_loss_terms(weights, layout, visual_embeddings, prompt, clean_response, t, rng)
        .map(|terms| terms.loss)
}

pub fn dlm_loss_terms(
    weights: &Weights,
    layout: &SequenceLayout,
    visual_embeddings: &Matrix,
    prompt: &[usize],
    clean_response: &[usize],
    t: f64,
    rng: &mut RandomStream,
) -> Result<LossTerms> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::OutOfRange(format!("loss needs t in (0, 1], got {t}")));
    }
    if visual_embeddings.rows() != layout.visual_len()
        || prompt.len() != layout.prompt_span().len()
        || clean_response.len() != layout.response_len()
    {
        return Err(Error::Shape("inputs do not match the layout".into()));
    }
    let noised = forward_mask(clean_response, t, layout.mask_token_id(), rng)?;
    let embeddings = visual_embeddings
        .vstack(&weights.embed_tokens(prompt)?)?
        .vstack(&weights.embed_tokens(&noised.tokens)?)?;
    let (logits, _) = forward(weights, &embeddings, layout.position_ids(), None)?;
    let start = layout.response_span().start;
    let mut masked_nll = 0.0;
    let mut masked = 0;
    for (i, (&clean, &m)) in clean_response.iter().zip(&noised.masked).enumerate() {
        if !m {
            continue;
        }
        let row = logits.row(start + i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        masked_nll += log_z - row[clean];
        masked += 1;
    }
    Ok(LossTerms {
        loss: masked_nll / (t * clean_response.len() as f64),
        masked,
        masked_nll,
    })
}
