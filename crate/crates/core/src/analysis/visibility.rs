use crate::numeric::Matrix;

/// How many positions of a causal length-`len` sequence can see each token:
/// `len - j + 1` for 1-based `j`.
pub fn visibility_frequency(len: usize) -> Vec<u64> {
    (0..len).map(|j| (len - j) as u64).collect()
}

/// Column counts of visible (zero) entries in an additive mask.
pub fn visibility_from_mask(mask: &Matrix) -> Vec<u64> {
    let mut counts = vec![0u64; mask.cols()];
    for i in 0..mask.rows() {
        for (c, &m) in counts.iter_mut().zip(mask.row(i)) {
            *c += u64::from(m == 0.0);
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_causal_mask;

    #[test]
    fn first_sees_everything_last_sees_itself() {
        let c = visibility_frequency(10);
        assert_eq!(c[0], 10);
        assert_eq!(c[9], 1);
        assert!(c.windows(2).all(|w| w[0] == w[1] + 1));
        assert!(visibility_frequency(0).is_empty());
    }

    #[test]
    fn matches_causal_mask_columns() {
        for len in [1, 2, 7, 64] {
            assert_eq!(visibility_frequency(len), visibility_from_mask(&build_causal_mask(len)));
        }
    }
}
