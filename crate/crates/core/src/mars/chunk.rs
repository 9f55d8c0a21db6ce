use crate::diffusion::SequenceLayout;
use crate::error::Result;
use crate::model::{attention, mask_from_keysets, KeySet};
use crate::numeric::Matrix;

/// Visual indices of frames `n-1`, `n`, `n+1` (0-based `n`), truncated at the
/// ends of the visual segment.
pub fn neighborhood(layout: &SequenceLayout, frame: usize) -> Vec<usize> {
    let frames = layout.frame_spans();
    let lo = frame.saturating_sub(1);
    let hi = (frame + 1).min(frames.len() - 1);
    (frames[lo].start..frames[hi].end).collect()
}

/// Key sets for the visual query rows under pure frame-wise chunking.
pub fn chunk_keysets(layout: &SequenceLayout) -> Vec<KeySet> {
    let mut out = Vec::with_capacity(layout.visual_len());
    for (n, span) in layout.frame_spans().iter().enumerate() {
        let keys = KeySet::subset(neighborhood(layout, n));
        out.extend(std::iter::repeat_n(keys, span.len()));
    }
    out
}

/// Key sets for every row when `anchors` are globally visible.
///
/// Text rows and anchor rows see everything. A non-anchor visual row in frame
/// `n` sees its neighbourhood plus all anchors, and text keys only when
/// `text_keys` is set.
pub fn anchor_keysets(layout: &SequenceLayout, anchors: &[usize], text_keys: bool) -> Vec<KeySet> {
    let seq_len = layout.seq_len();
    let mut is_anchor = vec![false; seq_len];
    for &a in anchors {
        is_anchor[a] = true;
    }
    let mut out = vec![KeySet::All; seq_len];
    for (n, span) in layout.frame_spans().iter().enumerate() {
        let mut keys = neighborhood(layout, n);
        keys.extend(anchors.iter().copied());
        if text_keys {
            keys.extend(layout.visual_len()..seq_len);
        }
        let keys = KeySet::subset(keys);
        for i in span.clone() {
            if !is_anchor[i] {
                out[i] = keys.clone();
            }
        }
    }
    out
}

/// Frame-wise chunk attention for visual queries.
///
/// `q` holds one row per visual position; `k`/`v` cover the whole sequence.
/// Each frame's queries attend only to keys in its temporal neighbourhood.
pub fn chunk_attention(q: &Matrix, k: &Matrix, v: &Matrix, layout: &SequenceLayout) -> Result<Matrix> {
    let mask = mask_from_keysets(&chunk_keysets(layout), k.rows());
    attention(q, k, v, Some(&mask))
}

/// Attention for every row under the anchor visibility rule of
/// [`anchor_keysets`] (text keys hidden from non-anchor visual rows).
pub fn anchor_augmented_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    layout: &SequenceLayout,
    anchors: &[usize],
) -> Result<Matrix> {
    let mask = mask_from_keysets(&anchor_keysets(layout, anchors, false), k.rows());
    attention(q, k, v, Some(&mask))
}
