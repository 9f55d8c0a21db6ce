use crate::error::{Error, Result};
use crate::model::attention::{build_causal_mask, keysets_from_mask, KeySet};
use crate::model::rotary::apply_rotary;
use crate::model::weights::rms_norm;
use crate::model::{MaskMode, Weights};
use crate::numeric::{softmax_in_place, Matrix};

/// Keys (rotary applied) and values of one layer, one row per sequence
/// position, heads concatenated along columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKv {
    pub keys: Matrix,
    pub values: Matrix,
}

impl LayerKv {
    pub fn zeros(seq_len: usize, model_dim: usize) -> Self {
        Self {
            keys: Matrix::zeros(seq_len, model_dim),
            values: Matrix::zeros(seq_len, model_dim),
        }
    }
}

/// Everything a full forward pass computed.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    /// `hidden[l]` is the input of layer `l`; `hidden[num_layers]` is the
    /// final residual stream before the output norm.
    pub hidden: Vec<Matrix>,
    pub kv: Vec<LayerKv>,
}

impl LayerActivations {
    /// Hidden states entering each layer group.
    pub fn group_inputs(&self, weights: &Weights) -> Vec<Matrix> {
        weights
            .config
            .group_boundaries
            .iter()
            .map(|&l| self.hidden[l].clone())
            .collect()
    }
}

/// Attention probabilities of a traced forward: `per_layer[l][h]` is a
/// `seq_len × seq_len` matrix with zeros at invisible keys.
#[derive(Debug, Clone)]
pub struct AttentionMaps {
    pub per_layer: Vec<Vec<Matrix>>,
}

/// Rows recomputed at one layer and the keys each of them may attend to.
#[derive(Debug, Clone, Default)]
pub struct LayerPlan {
    pub rows: Vec<usize>,
    pub keys: Vec<KeySet>,
}

impl LayerPlan {
    pub fn full(seq_len: usize) -> Self {
        Self {
            rows: (0..seq_len).collect(),
            keys: vec![KeySet::All; seq_len],
        }
    }

    /// Score entries this layer evaluates.
    pub fn entries(&self, seq_len: usize) -> u64 {
        self.keys.iter().map(|k| k.len(seq_len) as u64).sum()
    }
}

impl Weights {
    /// One pre-norm block over a subset of rows.
    ///
    /// `input` holds the hidden states of `rows` (in order). Their fresh keys
    /// and values overwrite the corresponding rows of `kv` before attention,
    /// so other rows attend against whatever `kv` already holds for them.
    /// Returns the block output for `rows` and the score-entry count.
    #[allow(clippy::too_many_arguments)]
    pub fn layer_forward(
        &self,
        layer: usize,
        input: &Matrix,
        rows: &[usize],
        position_ids: &[usize],
        kv: &mut LayerKv,
        keys: &[KeySet],
        mut probs: Option<&mut Vec<Matrix>>,
    ) -> Result<(Matrix, u64)> {
        let cfg = &self.config;
        let (heads, dk) = (cfg.num_heads, cfg.head_dim);
        if input.rows() != rows.len() || keys.len() != rows.len() {
            return Err(Error::Shape(format!(
                "layer {layer}: {} input rows, {} row ids, {} key sets",
                input.rows(),
                rows.len(),
                keys.len()
            )));
        }
        let lw = &self.layers[layer];
        let seq_len = kv.keys.rows();
        let positions: Vec<usize> = rows.iter().map(|&r| position_ids[r]).collect();

        let x = rms_norm(input, &lw.attn_norm);
        let mut q = x.matmul(&lw.wq)?;
        let mut k = x.matmul(&lw.wk)?;
        let v = x.matmul(&lw.wv)?;
        apply_rotary(&mut q, &positions, heads, dk);
        apply_rotary(&mut k, &positions, heads, dk);
        kv.keys.set_rows(rows, &k)?;
        kv.values.set_rows(rows, &v)?;

        let scale = 1.0 / (dk as f64).sqrt();
        let mut attn = Matrix::zeros(rows.len(), cfg.model_dim);
        let mut scores = Vec::with_capacity(seq_len);
        let mut entries = 0u64;
        for (i, keyset) in keys.iter().enumerate() {
            entries += keyset.len(seq_len) as u64;
            for h in 0..heads {
                let cols = h * dk..(h + 1) * dk;
                let qh = &q.row(i)[cols.clone()];
                scores.clear();
                let mut push = |j: usize| {
                    let kh = &kv.keys.row(j)[cols.clone()];
                    scores.push(qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f64>() * scale);
                };
                match keyset {
                    KeySet::All => (0..seq_len).for_each(&mut push),
                    KeySet::Subset(ks) => ks.iter().copied().for_each(&mut push),
                }
                softmax_in_place(&mut scores).map_err(|_| Error::FullyMaskedRow { row: rows[i] })?;
                let out = &mut attn.row_mut(i)[cols.clone()];
                let mut accumulate = |(p, j): (f64, usize)| {
                    let vh = &kv.values.row(j)[cols.clone()];
                    for (o, x) in out.iter_mut().zip(vh) {
                        *o += p * x;
                    }
                };
                match keyset {
                    KeySet::All => scores.iter().copied().zip(0..seq_len).for_each(&mut accumulate),
                    KeySet::Subset(ks) => scores
                        .iter()
                        .copied()
                        .zip(ks.iter().copied())
                        .for_each(&mut accumulate),
                }
                if let Some(maps) = probs.as_deref_mut() {
                    let map = &mut maps[h];
                    match keyset {
                        KeySet::All => map.row_mut(rows[i]).copy_from_slice(&scores),
                        KeySet::Subset(ks) => {
                            for (&p, &j) in scores.iter().zip(ks.iter()) {
                                map.set(rows[i], j, p);
                            }
                        }
                    }
                }
            }
        }

        let mut hidden = attn.matmul(&lw.wo)?;
        hidden.add_assign(input)?;
        let mut up = rms_norm(&hidden, &lw.ffn_norm).matmul(&lw.w_up)?;
        for u in up.data_mut() {
            *u /= 1.0 + (-*u).exp();
        }
        let down = up.matmul(&lw.w_down)?;
        hidden.add_assign(&down)?;
        Ok((hidden, entries))
    }

    /// Query projections (rotary applied) for `rows`, given their layer input.
    pub fn project_queries(
        &self,
        layer: usize,
        input: &Matrix,
        rows: &[usize],
        position_ids: &[usize],
    ) -> Result<Matrix> {
        let lw = &self.layers[layer];
        let mut q = rms_norm(input, &lw.attn_norm).matmul(&lw.wq)?;
        let positions: Vec<usize> = rows.iter().map(|&r| position_ids[r]).collect();
        apply_rotary(&mut q, &positions, self.config.num_heads, self.config.head_dim);
        Ok(q)
    }
}

fn check_inputs(
    weights: &Weights,
    embeddings: &Matrix,
    position_ids: &[usize],
    mask: Option<&Matrix>,
) -> Result<()> {
    if embeddings.rows() != position_ids.len() {
        return Err(Error::Shape(format!(
            "{} embedding rows vs {} position ids",
            embeddings.rows(),
            position_ids.len()
        )));
    }
    if embeddings.cols() != weights.config.model_dim {
        return Err(Error::Shape(format!(
            "embedding width {} vs model_dim {}",
            embeddings.cols(),
            weights.config.model_dim
        )));
    }
    if let Some(m) = mask {
        let n = embeddings.rows();
        if m.shape() != (n, n) {
            return Err(Error::Shape(format!(
                "mask {:?} for sequence of {n}",
                m.shape()
            )));
        }
    }
    Ok(())
}

fn forward_impl(
    weights: &Weights,
    embeddings: &Matrix,
    position_ids: &[usize],
    mask: Option<&Matrix>,
    trace: bool,
) -> Result<(Matrix, LayerActivations, Option<AttentionMaps>)> {
    check_inputs(weights, embeddings, position_ids, mask)?;
    let cfg = &weights.config;
    let n = embeddings.rows();
    let keys = match (mask, cfg.mask_mode) {
        (Some(m), _) => keysets_from_mask(m),
        (None, MaskMode::Causal) => keysets_from_mask(&build_causal_mask(n)),
        (None, MaskMode::Bidirectional) => vec![KeySet::All; n],
    };
    let rows: Vec<usize> = (0..n).collect();
    let mut hidden = vec![embeddings.clone()];
    let mut kv = Vec::with_capacity(cfg.num_layers);
    let mut maps = trace.then(|| AttentionMaps {
        per_layer: Vec::with_capacity(cfg.num_layers),
    });
    for layer in 0..cfg.num_layers {
        let mut layer_kv = LayerKv::zeros(n, cfg.model_dim);
        let mut probs = trace.then(|| vec![Matrix::zeros(n, n); cfg.num_heads]);
        let (out, _) = weights.layer_forward(
            layer,
            hidden.last().unwrap(),
            &rows,
            position_ids,
            &mut layer_kv,
            &keys,
            probs.as_mut(),
        )?;
        hidden.push(out);
        kv.push(layer_kv);
        if let (Some(maps), Some(p)) = (maps.as_mut(), probs) {
            maps.per_layer.push(p);
        }
    }
    let logits = weights.logits(hidden.last().unwrap())?;
    Ok((logits, LayerActivations { hidden, kv }, maps))
}

/// Full forward pass. Without an explicit mask, the config's mask mode
/// decides between causal and full bidirectional attention.
pub fn forward(
    weights: &Weights,
    embeddings: &Matrix,
    position_ids: &[usize],
    mask: Option<&Matrix>,
) -> Result<(Matrix, LayerActivations)> {
    forward_impl(weights, embeddings, position_ids, mask, false).map(|(l, a, _)| (l, a))
}

/// [`forward`] that also records every layer's attention probabilities.
pub fn forward_traced(
    weights: &Weights,
    embeddings: &Matrix,
    position_ids: &[usize],
    mask: Option<&Matrix>,
) -> Result<(Matrix, LayerActivations, AttentionMaps)> {
    forward_impl(weights, embeddings, position_ids, mask, true)
        .map(|(l, a, m)| (l, a, m.expect("trace requested")))
}

/// Per-layer keys/values for every position plus the hidden states entering
/// each layer group. This is all a row-subset forward needs to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct RowCache {
    pub kv: Vec<LayerKv>,
    pub group_inputs: Vec<Matrix>,
}

impl RowCache {
    pub fn from_activations(weights: &Weights, acts: &LayerActivations) -> Self {
        Self {
            kv: acts.kv.clone(),
            group_inputs: acts.group_inputs(weights),
        }
    }
}

/// Result of [`forward_rows`].
#[derive(Debug, Clone)]
pub struct RowForward {
    /// Logits for the requested output rows, in request order.
    pub logits: Matrix,
    pub entries: u64,
    /// Σ over layers of rows recomputed.
    pub row_layers: u64,
}

/// Recomputes only the rows named by each layer's plan, reading everything
/// else from `cache` and writing fresh values back into it.
///
/// A row joining the recomputed set must do so at a group's first layer,
/// where its input comes from `cache.group_inputs` (or `embeddings` for the
/// first group). Rows may not join in the middle of a group.
pub fn forward_rows(
    weights: &Weights,
    cache: &mut RowCache,
    embeddings: &Matrix,
    position_ids: &[usize],
    plans: &[LayerPlan],
    output_rows: &[usize],
) -> Result<RowForward> {
    check_inputs(weights, embeddings, position_ids, None)?;
    let cfg = &weights.config;
    if plans.len() != cfg.num_layers {
        return Err(Error::Shape(format!(
            "{} layer plans for {} layers",
            plans.len(),
            cfg.num_layers
        )));
    }
    let n = embeddings.rows();
    let mut slot: Vec<Option<usize>> = vec![None; n];
    let mut current = Matrix::zeros(0, cfg.model_dim);
    let mut entries = 0u64;
    let mut row_layers = 0u64;

    for (layer, plan) in plans.iter().enumerate() {
        let group = cfg.group_of_layer(layer);
        let at_group_start = cfg.group_boundaries[group] == layer;
        let mut input = Matrix::zeros(plan.rows.len(), cfg.model_dim);
        for (k, &r) in plan.rows.iter().enumerate() {
            let src = match slot[r] {
                Some(s) => current.row(s),
                None if layer == 0 => embeddings.row(r),
                None if at_group_start => cache.group_inputs[group].row(r),
                None => {
                    return Err(Error::Config(format!(
                        "row {r} joins the recomputed set inside group {group} at layer {layer}"
                    )))
                }
            };
            input.row_mut(k).copy_from_slice(src);
        }
        if at_group_start {
            cache.group_inputs[group].set_rows(&plan.rows, &input)?;
        }
        let (out, e) = weights.layer_forward(
            layer,
            &input,
            &plan.rows,
            position_ids,
            &mut cache.kv[layer],
            &plan.keys,
            None,
        )?;
        entries += e;
        row_layers += plan.rows.len() as u64;
        slot.iter_mut().for_each(|s| *s = None);
        for (k, &r) in plan.rows.iter().enumerate() {
            slot[r] = Some(k);
        }
        current = out;
    }

    let mut final_rows = Matrix::zeros(output_rows.len(), cfg.model_dim);
    for (k, &r) in output_rows.iter().enumerate() {
        let s = slot[r].ok_or_else(|| {
            Error::Config(format!("output row {r} was not recomputed at the last layer"))
        })?;
        final_rows.row_mut(k).copy_from_slice(current.row(s));
    }
    Ok(RowForward {
        logits: weights.logits(&final_rows)?,
        entries,
        row_layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{attention, init_weights, ModelConfig};
    use crate::numeric::{seeded_stream, Permutation};

    fn tiny() -> ModelConfig {
        ModelConfig {
            num_layers: 4,
            num_heads: 2,
            model_dim: 16,
            head_dim: 8,
            vocab_size: 32,
            group_boundaries: vec![0, 2],
            mask_mode: MaskMode::Bidirectional,
        }
    }

    fn inputs(n: usize, d: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let e = seeded_stream(seed, "emb").gaussian_matrix(n, d, 1.0);
        (e, (0..n).collect())
    }

    #[test]
    fn deterministic() {
        let w = init_weights(&tiny(), 1).unwrap();
        let (e, p) = inputs(10, 16, 2);
        let a = forward(&w, &e, &p, None).unwrap();
        let b = forward(&w, &e, &p, None).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn shape_mismatch_errors() {
        let w = init_weights(&tiny(), 1).unwrap();
        let (e, _) = inputs(10, 16, 2);
        assert!(matches!(
            forward(&w, &e, &[0, 1, 2], None),
            Err(Error::Shape(_))
        ));
        assert!(forward(&w, &e, &(0..10).collect::<Vec<_>>(), Some(&Matrix::zeros(3, 3))).is_err());
    }

    #[test]
    fn kernel_matches_dense_attention_per_head() {
        // Recompute layer 0's attention output with the dense reference path.
        let cfg = tiny();
        let w = init_weights(&cfg, 5).unwrap();
        let (e, p) = inputs(9, 16, 6);
        let mask = build_causal_mask(9);
        let (_, acts, maps) = forward_traced(&w, &e, &p, Some(&mask)).unwrap();
        let lw = &w.layers[0];
        let x = rms_norm(&e, &lw.attn_norm);
        let mut q = x.matmul(&lw.wq).unwrap();
        apply_rotary(&mut q, &p, 2, 8);
        let kv = &acts.kv[0];
        for h in 0..2 {
            let qh = q.column_block(h * 8, 8);
            let kh = kv.keys.column_block(h * 8, 8);
            let mut scores = qh.matmul_transposed(&kh).unwrap();
            scores.scale(1.0 / 8f64.sqrt());
            let dense = crate::numeric::softmax_rows(&scores, Some(&mask)).unwrap();
            assert!(dense.max_abs_diff(&maps.per_layer[0][h]).unwrap() < 1e-14);
            let vh = kv.values.column_block(h * 8, 8);
            let o = attention(&qh, &kh, &vh, Some(&mask)).unwrap();
            assert!(o.is_finite());
        }
    }

    #[test]
    fn bidirectional_permutation_equivariance() {
        let w = init_weights(&tiny(), 3).unwrap();
        let (e, p) = inputs(12, 16, 4);
        let perm = Permutation::from_order(vec![5, 2, 11, 0, 1, 9, 3, 4, 10, 6, 8, 7]).unwrap();
        let (base, _) = forward(&w, &e, &p, None).unwrap();
        let (moved, _) = forward(&w, &perm.apply_rows(&e).unwrap(), &perm.apply(&p), None).unwrap();
        let restored = perm.inverse().apply_rows(&moved).unwrap();
        assert!(restored.max_abs_diff(&base).unwrap() <= 1e-9);
    }

    #[test]
    fn causal_permutation_changes_logits() {
        let w = init_weights(&tiny().with_mask_mode(MaskMode::Causal), 3).unwrap();
        let (e, p) = inputs(12, 16, 4);
        let perm = Permutation::from_order((0..12).rev().collect()).unwrap();
        let (base, _) = forward(&w, &e, &p, None).unwrap();
        let (moved, _) = forward(&w, &perm.apply_rows(&e).unwrap(), &perm.apply(&p), None).unwrap();
        let restored = perm.inverse().apply_rows(&moved).unwrap();
        assert!(restored.max_abs_diff(&base).unwrap() > 1e-6);
    }

    #[test]
    fn causal_changes_only_later_positions() {
        let w = init_weights(&tiny().with_mask_mode(MaskMode::Causal), 3).unwrap();
        let (mut e, p) = inputs(10, 16, 4);
        let (base, _) = forward(&w, &e, &p, None).unwrap();
        for c in 0..16 {
            e.set(6, c, e.get(6, c) + 0.5);
        }
        let (moved, _) = forward(&w, &e, &p, None).unwrap();
        for i in 0..10 {
            let same = base.row(i) == moved.row(i);
            assert_eq!(same, i < 6, "row {i}");
        }
    }

    #[test]
    fn row_forward_with_all_rows_matches_full() {
        let cfg = tiny();
        let w = init_weights(&cfg, 9).unwrap();
        let (e, p) = inputs(11, 16, 10);
        let (logits, acts) = forward(&w, &e, &p, None).unwrap();
        let mut cache = RowCache::from_activations(&w, &acts);
        // Corrupt the cache: a full recompute must not read it.
        for kv in &mut cache.kv {
            kv.keys.scale(3.0);
        }
        let plans = vec![LayerPlan::full(11); 4];
        let out = forward_rows(&w, &mut cache, &e, &p, &plans, &[3, 7]).unwrap();
        assert!(out.logits.max_abs_diff(&logits.select_rows(&[3, 7])).unwrap() <= 1e-12);
        assert_eq!(out.entries, 4 * 121);
        assert_eq!(out.row_layers, 44);
        assert_eq!(cache.kv, acts.kv);
    }

    #[test]
    fn row_forward_subset_reuses_cache() {
        // With unchanged inputs, recomputing only a few rows against a fresh
        // cache reproduces the full forward exactly at those rows.
        let cfg = tiny();
        let w = init_weights(&cfg, 9).unwrap();
        let (e, p) = inputs(11, 16, 10);
        let (logits, acts) = forward(&w, &e, &p, None).unwrap();
        let mut cache = RowCache::from_activations(&w, &acts);
        let rows = vec![8, 9, 10];
        let plan = LayerPlan {
            rows: rows.clone(),
            keys: vec![KeySet::All; 3],
        };
        let out = forward_rows(&w, &mut cache, &e, &p, &vec![plan; 4], &rows).unwrap();
        assert!(out.logits.max_abs_diff(&logits.select_rows(&rows)).unwrap() <= 1e-12);
    }

    #[test]
    fn row_joining_mid_group_is_rejected() {
        let cfg = tiny();
        let w = init_weights(&cfg, 9).unwrap();
        let (e, p) = inputs(6, 16, 10);
        let (_, acts) = forward(&w, &e, &p, None).unwrap();
        let mut cache = RowCache::from_activations(&w, &acts);
        let small = LayerPlan {
            rows: vec![5],
            keys: vec![KeySet::All],
        };
        let big = LayerPlan {
            rows: vec![4, 5],
            keys: vec![KeySet::All; 2],
        };
        let plans = vec![small.clone(), big, small.clone(), small];
        assert!(forward_rows(&w, &mut cache, &e, &p, &plans, &[5]).is_err());
    }
}
