use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numeric::{seeded_stream, Matrix};

const INIT_STD: f64 = 0.02;
pub(crate) const RMS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Vec<f64>,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    /// Attention output projection (residual path).
    pub wo: Matrix,
    pub ffn_norm: Vec<f64>,
    pub w_up: Matrix,
    /// Feed-forward down projection (residual path).
    pub w_down: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub config: ModelConfig,
    /// `vocab_size × model_dim` token embedding table.
    pub embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vec<f64>,
    /// `model_dim × vocab_size` output head.
    pub head: Matrix,
}

/// Gaussian init: std 0.02, scaled by `1/√num_layers` on residual-path output
/// projections. Each tensor draws from its own labelled stream.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<Weights> {
    config.validate()?;
    let d = config.model_dim;
    let f = config.ffn_dim();
    let residual_std = INIT_STD / (config.num_layers as f64).sqrt();
    let root = seeded_stream(seed, "weights");
    let gauss = |name: &str, rows: usize, cols: usize, std: f64| {
        root.child(name).gaussian_matrix(rows, cols, std)
    };
    let layers = (0..config.num_layers)
        .map(|l| LayerWeights {
            attn_norm: vec![1.0; d],
            wq: gauss(&format!("layers.{l}.wq"), d, d, INIT_STD),
            wk: gauss(&format!("layers.{l}.wk"), d, d, INIT_STD),
            wv: gauss(&format!("layers.{l}.wv"), d, d, INIT_STD),
            wo: gauss(&format!("layers.{l}.wo"), d, d, residual_std),
            ffn_norm: vec![1.0; d],
            w_up: gauss(&format!("layers.{l}.w_up"), d, f, INIT_STD),
            w_down: gauss(&format!("layers.{l}.w_down"), f, d, residual_std),
        })
        .collect();
    Ok(Weights {
        config: config.clone(),
        embedding: gauss("embedding", config.vocab_size, d, INIT_STD),
        layers,
        final_norm: vec![1.0; d],
        head: gauss("head", d, config.vocab_size, INIT_STD),
    })
}

impl Weights {
    /// Embedding rows for text tokens.
    pub fn embed_tokens(&self, tokens: &[usize]) -> Result<Matrix> {
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::OutOfRange(format!(
                "token {bad} outside vocab of {}",
                self.config.vocab_size
            )));
        }
        Ok(self.embedding.select_rows(tokens))
    }

    /// Final norm followed by the output head.
    pub fn logits(&self, hidden: &Matrix) -> Result<Matrix> {
        rms_norm(hidden, &self.final_norm).matmul(&self.head)
    }

    /// Named tensors in a fixed order, used by snapshots.
    pub(crate) fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let d = self.config.model_dim;
        let mut out: Vec<(String, Vec<usize>, &[f64])> = vec![(
            "embedding".into(),
            vec![self.embedding.rows(), self.embedding.cols()],
            self.embedding.data(),
        )];
        fn mat(name: String, m: &Matrix) -> (String, Vec<usize>, &[f64]) {
            (name, vec![m.rows(), m.cols()], m.data())
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("layers.{l}.{n}");
            out.push((p("attn_norm"), vec![d], &layer.attn_norm));
            out.push(mat(p("wq"), &layer.wq));
            out.push(mat(p("wk"), &layer.wk));
            out.push(mat(p("wv"), &layer.wv));
            out.push(mat(p("wo"), &layer.wo));
            out.push((p("ffn_norm"), vec![d], &layer.ffn_norm));
            out.push(mat(p("w_up"), &layer.w_up));
            out.push(mat(p("w_down"), &layer.w_down));
        }
        out.push(("final_norm".into(), vec![d], &self.final_norm));
        out.push(mat("head".into(), &self.head));
        out
    }
}

pub(crate) fn rms_norm(x: &Matrix, gain: &[f64]) -> Matrix {
    let mut out = x.clone();
    let d = x.cols() as f64;
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let ms = row.iter().map(|v| v * v).sum::<f64>() / d;
        let inv = 1.0 / (ms + RMS_EPS).sqrt();
        for (v, g) in row.iter_mut().zip(gain) {
            *v *= inv * g;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seed_deterministic() {
        let c = ModelConfig::default();
        let a = init_weights(&c, 7).unwrap();
        assert_eq!(a, init_weights(&c, 7).unwrap());
        assert_ne!(a.layers[0].wq, init_weights(&c, 8).unwrap().layers[0].wq);
    }

    #[test]
    fn residual_projections_are_scaled_down() {
        let c = ModelConfig::default();
        let w = init_weights(&c, 1).unwrap();
        let std = |m: &Matrix| {
            let n = m.data().len() as f64;
            (m.data().iter().map(|x| x * x).sum::<f64>() / n).sqrt()
        };
        let expected = 0.02 / (8f64).sqrt();
        assert!((std(&w.layers[3].wo) / expected - 1.0).abs() < 0.05);
        assert!((std(&w.layers[3].wq) / 0.02 - 1.0).abs() < 0.05);
    }
}
