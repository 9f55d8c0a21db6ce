use crate::diffusion::SequenceLayout;
use crate::error::{Error, Result};
use crate::model::{forward, Weights};
use crate::numeric::{Matrix, Permutation, RandomStream};

/// Result of moving the highest-norm visual tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Relocation {
    pub embeddings: Matrix,
    /// Original position ids carried along with their rows.
    pub position_ids: Vec<usize>,
    pub permutation: Permutation,
    /// Visual index where the relocated run starts.
    pub start: usize,
    /// Original indices of the relocated tokens, ascending.
    pub moved: Vec<usize>,
}

/// Scales `k` distinct random visual rows by `factor`, so they form an
/// unambiguous top-`k` by norm. Returns the new matrix and the chosen rows.
pub fn inject_high_norm(visual: &Matrix, k: usize, factor: f64, rng: &mut RandomStream) -> (Matrix, Vec<usize>) {
    let mut rows = rng.sample_distinct(visual.rows(), k.min(visual.rows()));
    rows.sort_unstable();
    let mut out = visual.clone();
    for &r in &rows {
        out.row_mut(r).iter_mut().for_each(|x| *x *= factor);
    }
    (out, rows)
}

/// Moves the `k` visual rows with the largest ℓ2 norm into one contiguous
/// run starting at visual index `min(⌊r·|V|⌋, |V| − k)`. Every other token
/// keeps its relative order, and each row keeps its position id.
pub fn relocate_high_norm(
    embeddings: &Matrix,
    position_ids: &[usize],
    layout: &SequenceLayout,
    k: usize,
    r: f64,
) -> Result<Relocation> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::OutOfRange(format!("position ratio {r} outside [0, 1]")));
    }
    let nv = layout.visual_len();
    if k > nv {
        return Err(Error::OutOfRange(format!("{k} tokens requested from {nv} visual tokens")));
    }
    if embeddings.rows() != position_ids.len() || embeddings.rows() != layout.seq_len() {
        return Err(Error::Shape(format!(
            "{} embedding rows, {} position ids, sequence of {}",
            embeddings.rows(),
            position_ids.len(),
            layout.seq_len()
        )));
    }
    let mut by_norm: Vec<usize> = (0..nv).collect();
    by_norm.sort_by(|&a, &b| embeddings.row_norm(b).total_cmp(&embeddings.row_norm(a)).then(a.cmp(&b)));
    let mut moved = by_norm[..k].to_vec();
    moved.sort_unstable();
    let start = ((r * nv as f64).floor() as usize).min(nv - k);

    let mut is_moved = vec![false; nv];
    moved.iter().for_each(|&i| is_moved[i] = true);
    let rest: Vec<usize> = (0..nv).filter(|&i| !is_moved[i]).collect();
    let mut order = Vec::with_capacity(embeddings.rows());
    order.extend_from_slice(&rest[..start]);
    order.extend_from_slice(&moved);
    order.extend_from_slice(&rest[start..]);
    order.extend(nv..embeddings.rows());
    let permutation = Permutation::from_order(order)?;
    Ok(Relocation {
        embeddings: permutation.apply_rows(embeddings)?,
        position_ids: permutation.apply(position_ids),
        permutation,
        start,
        moved,
    })
}

/// Logits of the sequence after relocation, mapped back to the original
/// token order.
pub fn relocation_logits(
    weights: &Weights,
    embeddings: &Matrix,
    layout: &SequenceLayout,
    k: usize,
    r: f64,
) -> Result<Matrix> {
    let moved = relocate_high_norm(embeddings, layout.position_ids(), layout, k, r)?;
    let (logits, _) = forward(weights, &moved.embeddings, &moved.position_ids, None)?;
    moved.permutation.inverse().apply_rows(&logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::seeded_stream;

    fn layout() -> SequenceLayout {
        SequenceLayout::new(2, 4, 2, 2, 2, 9).unwrap()
    }

    #[test]
    fn run_lands_at_ratio_and_inverse_restores() {
        let l = layout();
        let mut rng = seeded_stream(3, "reloc");
        let base = rng.gaussian_matrix(12, 4, 0.1);
        let (e, chosen) = inject_high_norm(&base.select_rows(&(0..8).collect::<Vec<_>>()), 2, 8.0, &mut rng);
        let e = e.vstack(&base.select_rows(&(8..12).collect::<Vec<_>>())).unwrap();
        let pos: Vec<usize> = (0..12).collect();
        for (r, start) in [(0.0, 0), (0.5, 4), (1.0, 6)] {
            let m = relocate_high_norm(&e, &pos, &l, 2, r).unwrap();
            assert_eq!(m.moved, chosen);
            assert_eq!(m.start, start);
            assert_eq!(&m.position_ids[start..start + 2], chosen.as_slice());
            let back = m.permutation.inverse().apply_rows(&m.embeddings).unwrap();
            assert_eq!(back, e);
            assert_eq!(&m.position_ids[8..], &[8, 9, 10, 11]);
        }
    }

    #[test]
    fn in_place_run_is_identity() {
        let l = layout();
        let mut e = Matrix::filled(12, 4, 0.1);
        e.row_mut(4).fill(5.0);
        e.row_mut(5).fill(5.0);
        let pos: Vec<usize> = (0..12).collect();
        let m = relocate_high_norm(&e, &pos, &l, 2, 0.5).unwrap();
        assert!(m.permutation.is_identity());
        assert!(relocate_high_norm(&e, &pos, &l, 0, 0.3).unwrap().permutation.is_identity());
        assert!(relocate_high_norm(&e, &pos, &l, 2, 1.5).is_err());
        assert!(relocate_high_norm(&e, &pos, &l, 9, 0.0).is_err());
    }
}
