use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    Causal,
    Bidirectional,
}

/// Transformer shape plus the partition of layers into refresh groups.
/// Missing fields in a config file take the [`Default`] values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub head_dim: usize,
    pub vocab_size: usize,
    /// First layer of each group, ascending and starting at 0.
    pub group_boundaries: Vec<usize>,
    pub mask_mode: MaskMode,
}

impl Default for ModelConfig {
    /// 8 layers in 4 groups of 2, 4 heads of width 32, vocab 256.
    fn default() -> Self {
        Self {
            num_layers: 8,
            num_heads: 4,
            model_dim: 128,
            head_dim: 32,
            vocab_size: 256,
            group_boundaries: vec![0, 2, 4, 6],
            mask_mode: MaskMode::Bidirectional,
        }
    }
}

impl ModelConfig {
    /// Splits `num_layers` into `groups` contiguous groups, spreading the
    /// remainder over the shallowest groups.
    pub fn even_groups(num_layers: usize, groups: usize) -> Vec<usize> {
        let base = num_layers / groups;
        let extra = num_layers % groups;
        let mut starts = Vec::with_capacity(groups);
        let mut at = 0;
        for g in 0..groups {
            starts.push(at);
            at += base + usize::from(g < extra);
        }
        starts
    }

    pub fn with_mask_mode(mut self, mode: MaskMode) -> Self {
        self.mask_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_layers == 0 || self.num_heads == 0 || self.head_dim == 0 {
            return bad("num_layers, num_heads and head_dim must be positive".into());
        }
        if self.model_dim != self.num_heads * self.head_dim {
            return bad(format!(
                "model_dim {} != num_heads {} x head_dim {}",
                self.model_dim, self.num_heads, self.head_dim
            ));
        }
        if !self.head_dim.is_multiple_of(2) {
            return bad(format!("head_dim {} must be even for rotary", self.head_dim));
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must leave room for the mask token".into());
        }
        if self.group_boundaries.first() != Some(&0) {
            return bad("group_boundaries must start at layer 0".into());
        }
        for w in self.group_boundaries.windows(2) {
            if w[0] >= w[1] {
                return bad(format!(
                    "group_boundaries must be strictly increasing, got {:?}",
                    self.group_boundaries
                ));
            }
        }
        if *self.group_boundaries.last().unwrap() >= self.num_layers {
            return bad(format!(
                "group boundary {} beyond {} layers",
                self.group_boundaries.last().unwrap(),
                self.num_layers
            ));
        }
        Ok(())
    }

    pub fn num_groups(&self) -> usize {
        self.group_boundaries.len()
    }

    pub fn group_layers(&self, group: usize) -> Range<usize> {
        let start = self.group_boundaries[group];
        let end = self
            .group_boundaries
            .get(group + 1)
            .copied()
            .unwrap_or(self.num_layers);
        start..end
    }

    pub fn group_of_layer(&self, layer: usize) -> usize {
        self.group_boundaries
            .iter()
            .rposition(|&start| start <= layer)
            .expect("validated boundaries start at 0")
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.model_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.num_groups(), 4);
        assert_eq!(c.group_layers(3), 6..8);
        assert_eq!(c.group_of_layer(5), 2);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut c = ModelConfig::default();
        c.model_dim = 100;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.group_boundaries = vec![0, 4, 4];
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.group_boundaries = vec![1, 4];
        assert!(c.validate().is_err());
    }

    #[test]
    fn even_groups_cover_layers() {
        assert_eq!(ModelConfig::even_groups(8, 4), vec![0, 2, 4, 6]);
        assert_eq!(ModelConfig::even_groups(5, 2), vec![0, 3]);
    }
}
