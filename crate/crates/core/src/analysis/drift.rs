use serde::{Deserialize, Serialize};

use crate::diffusion::{Segment, SequenceLayout};
use crate::error::{Error, Result};
use crate::model::{LayerActivations, ModelConfig};
use crate::numeric::cosine_similarity;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ModalityDrift {
    pub mean: f64,
    pub median: f64,
}

impl ModalityDrift {
    fn of(mut values: Vec<f64>) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let median = if n % 2 == 1 {
            values[n / 2]
        } else {
            0.5 * (values[n / 2 - 1] + values[n / 2])
        };
        Self {
            mean: values.iter().sum::<f64>() / n as f64,
            median,
        }
    }
}

/// `1 − cos` between two snapshots of the group-boundary hidden states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRecord {
    pub from_step: usize,
    pub to_step: usize,
    pub visual: ModalityDrift,
    /// The user prompt.
    pub prompt: ModalityDrift,
    /// Response positions (decoded and still masked).
    pub response: ModalityDrift,
    /// Hidden-state layer indices the drift was measured at.
    pub layers: Vec<usize>,
    /// Mean drift over all positions at each of `layers`.
    pub per_layer: Vec<f64>,
}

/// Outputs of each layer group: the hidden states a group boundary caches.
pub fn drift_layers(config: &ModelConfig) -> Vec<usize> {
    config
        .group_boundaries
        .iter()
        .skip(1)
        .copied()
        .chain(std::iter::once(config.num_layers))
        .collect()
}

/// Token-wise `1 − cosine similarity` between two activations of the same
/// sequence, pooled per modality over every group-boundary layer.
pub fn drift(
    a: &LayerActivations,
    b: &LayerActivations,
    config: &ModelConfig,
    layout: &SequenceLayout,
    steps: (usize, usize),
) -> Result<DriftRecord> {
    if a.hidden.len() != b.hidden.len() || a.hidden.len() != config.num_layers + 1 {
        return Err(Error::Shape(format!(
            "activations with {} and {} hidden states for {} layers",
            a.hidden.len(),
            b.hidden.len(),
            config.num_layers
        )));
    }
    let layers = drift_layers(config);
    let (mut visual, mut prompt, mut response) = (Vec::new(), Vec::new(), Vec::new());
    let mut per_layer = Vec::with_capacity(layers.len());
    for &l in &layers {
        let (ha, hb) = (&a.hidden[l], &b.hidden[l]);
        if ha.shape() != hb.shape() || ha.rows() != layout.seq_len() {
            return Err(Error::Shape(format!(
                "hidden states {:?} vs {:?} for a sequence of {}",
                ha.shape(),
                hb.shape(),
                layout.seq_len()
            )));
        }
        let mut sum = 0.0;
        for i in 0..ha.rows() {
            let d = 1.0 - cosine_similarity(ha.row(i), hb.row(i))?;
            sum += d;
            match layout.segment(i) {
                Segment::Visual(_) => visual.push(d),
                Segment::Prompt => prompt.push(d),
                Segment::Response(_) => response.push(d),
            }
        }
        per_layer.push(sum / ha.rows() as f64);
    }
    Ok(DriftRecord {
        from_step: steps.0,
        to_step: steps.1,
        visual: ModalityDrift::of(visual),
        prompt: ModalityDrift::of(prompt),
        response: ModalityDrift::of(response),
        layers,
        per_layer,
    })
}
