use sha2::{Digest, Sha256};

use crate::diffusion::SequenceLayout;
use crate::error::{Error, Result};
use crate::numeric::{softmax_in_place, Matrix, Permutation};

/// `size` query indices spread evenly over `0..seq_len` (`⌊i·L/s⌋`).
pub fn equidistant_sample(seq_len: usize, size: usize) -> Vec<usize> {
    let size = size.min(seq_len);
    (0..size).map(|i| i * seq_len / size).collect()
}

/// Debiased proxy attention of sampled queries over the visual keys.
///
/// `q` and `k` have one row per sequence position (single head). Row `i` of
/// the result is `softmax(q[sample[i]] · k[visual]ᵀ / √d_k)` with the entry
/// where the sampled query meets itself set to zero afterwards, so rows sum
/// to at most one.
pub fn proxy_scores(q: &Matrix, k: &Matrix, sample: &[usize], visual: &[usize]) -> Result<Matrix> {
    if sample.is_empty() {
        return Err(Error::Config("proxy scoring needs a non-empty sample".into()));
    }
    if q.cols() != k.cols() {
        return Err(Error::Shape(format!(
            "query width {} vs key width {}",
            q.cols(),
            k.cols()
        )));
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut out = Matrix::zeros(sample.len(), visual.len());
    for (i, &s) in sample.iter().enumerate() {
        let qs = q.row(s);
        let row = out.row_mut(i);
        for (c, &j) in visual.iter().enumerate() {
            row[c] = qs.iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        softmax_in_place(row)?;
        if let Some(c) = visual.iter().position(|&j| j == s) {
            row[c] = 0.0;
        }
    }
    Ok(out)
}

/// Top-`k` visual tokens of each frame by column sum of `scores`
/// (columns are visual positions `0..visual_len`). Ties go to the lower
/// index; each frame's anchors come back ascending.
pub fn select_frame_anchors(scores: &Matrix, layout: &SequenceLayout, k: usize) -> Result<Vec<Vec<usize>>> {
    let patches = layout.patches_per_frame();
    if k > patches {
        return Err(Error::Config(format!(
            "anchor budget {k} exceeds frame size {patches}"
        )));
    }
    if scores.cols() != layout.visual_len() {
        return Err(Error::Shape(format!(
            "{} score columns for {} visual tokens",
            scores.cols(),
            layout.visual_len()
        )));
    }
    let mut column_sums = vec![0.0; scores.cols()];
    for i in 0..scores.rows() {
        for (s, x) in column_sums.iter_mut().zip(scores.row(i)) {
            *s += x;
        }
    }
    Ok(layout
        .frame_spans()
        .iter()
        .map(|span| {
            let mut idx: Vec<usize> = span.clone().collect();
            idx.sort_by(|&a, &b| column_sums[b].total_cmp(&column_sums[a]).then(a.cmp(&b)));
            idx.truncate(k);
            idx.sort_unstable();
            idx
        })
        .collect())
}

/// Anchors chosen once at the first decoding step and reused afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorPlan {
    pub sample: Vec<usize>,
    /// Per-frame budget k_g for each group, non-increasing with depth.
    pub budgets: Vec<usize>,
    /// `per_frame[g][j]`: anchors of frame `j` in group `g`.
    pub per_frame: Vec<Vec<Vec<usize>>>,
}

impl AnchorPlan {
    /// Union of group `g`'s per-frame anchors, ascending.
    pub fn anchors(&self, group: usize) -> Vec<usize> {
        self.per_frame[group].iter().flatten().copied().collect()
    }

    /// The lowest-indexed `k_g` tokens of every frame. Stands in for real
    /// anchors wherever only their count matters.
    pub fn lowest(layout: &SequenceLayout, budgets: &[usize]) -> Result<Self> {
        check_budgets(budgets, layout.patches_per_frame())?;
        Ok(Self {
            sample: Vec::new(),
            budgets: budgets.to_vec(),
            per_frame: budgets
                .iter()
                .map(|&k| layout.frame_spans().iter().map(|s| (s.start..s.start + k).collect()).collect())
                .collect(),
        })
    }

    pub fn groups(&self) -> usize {
        self.budgets.len()
    }

    /// SHA-256 over the sample and every anchor index.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let mut put = |x: usize| h.update((x as u64).to_le_bytes());
        put(self.sample.len());
        self.sample.iter().for_each(|&s| put(s));
        for (g, frames) in self.per_frame.iter().enumerate() {
            put(self.budgets[g]);
            for f in frames {
                put(f.len());
                f.iter().for_each(|&a| put(a));
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub(crate) fn check_budgets(budgets: &[usize], patches: usize) -> Result<()> {
    if let Some(&k) = budgets.iter().find(|&&k| k > patches) {
        return Err(Error::Config(format!(
            "anchor budget {k} exceeds frame size {patches}"
        )));
    }
    if budgets.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Config(format!(
            "anchor budgets must not grow with depth, got {budgets:?}"
        )));
    }
    Ok(())
}

/// Builds the plan from one debiased proxy matrix per group (each computed
/// at that group's first layer).
pub fn select_anchors(
    group_scores: &[Matrix],
    layout: &SequenceLayout,
    budgets: &[usize],
    sample: Vec<usize>,
) -> Result<AnchorPlan> {
    if group_scores.len() != budgets.len() {
        return Err(Error::Config(format!(
            "{} proxy matrices for {} budgets",
            group_scores.len(),
            budgets.len()
        )));
    }
    check_budgets(budgets, layout.patches_per_frame())?;
    let per_frame = group_scores
        .iter()
        .zip(budgets)
        .map(|(s, &k)| select_frame_anchors(s, layout, k))
        .collect::<Result<_>>()?;
    Ok(AnchorPlan {
        sample,
        budgets: budgets.to_vec(),
        per_frame,
    })
}

/// Moves every frame's anchors to the front of the visual segment (frame
/// order, ascending within a frame); everything else keeps its relative
/// order. Returns the permutation and its inverse.
pub fn relocate_anchors(layout: &SequenceLayout, anchors: &[usize]) -> Result<(Permutation, Permutation)> {
    let visual = layout.visual_len();
    if let Some(&a) = anchors.iter().find(|&&a| a >= visual) {
        return Err(Error::OutOfRange(format!("anchor {a} is not a visual token")));
    }
    let mut is_anchor = vec![false; visual];
    anchors.iter().for_each(|&a| is_anchor[a] = true);
    let mut order: Vec<usize> = (0..visual).filter(|&i| is_anchor[i]).collect();
    order.extend((0..visual).filter(|&i| !is_anchor[i]));
    order.extend(visual..layout.seq_len());
    let perm = Permutation::from_order(order)?;
    let inv = perm.inverse();
    Ok((perm, inv))
}
