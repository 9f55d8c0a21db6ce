use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::{softmax_rows, Matrix};

/// Additive causal mask: `0` where `j <= i`, `-inf` above the diagonal.
pub fn build_causal_mask(length: usize) -> Matrix {
    Matrix::from_fn(length, length, |i, j| {
        if j <= i {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    })
}

/// `Softmax(Q·Kᵀ/√d_k + mask)·V` for a single head.
///
/// This is the dense reference path; the engines use the key-subset kernel
/// in the forward pass, which must agree with it.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix, mask: Option<&Matrix>) -> Result<Matrix> {
    if q.cols() != k.cols() {
        return Err(Error::Shape(format!(
            "query width {} vs key width {}",
            q.cols(),
            k.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(Error::Shape(format!(
            "{} keys vs {} values",
            k.rows(),
            v.rows()
        )));
    }
    let mut scores = q.matmul_transposed(k)?;
    scores.scale(1.0 / (q.cols() as f64).sqrt());
    softmax_rows(&scores, mask)?.matmul(v)
}

/// Keys visible to one query row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeySet {
    All,
    /// Ascending key indices.
    Subset(Arc<[usize]>),
}

impl KeySet {
    pub fn subset(mut keys: Vec<usize>) -> KeySet {
        keys.sort_unstable();
        keys.dedup();
        KeySet::Subset(keys.into())
    }

    /// Number of score entries this row costs against `seq_len` keys.
    pub fn len(&self, seq_len: usize) -> usize {
        match self {
            KeySet::All => seq_len,
            KeySet::Subset(keys) => keys.len(),
        }
    }

    pub fn contains(&self, key: usize) -> bool {
        match self {
            KeySet::All => true,
            KeySet::Subset(keys) => keys.binary_search(&key).is_ok(),
        }
    }
}

/// Key sets equivalent to a 0/−∞ additive mask.
pub fn keysets_from_mask(mask: &Matrix) -> Vec<KeySet> {
    (0..mask.rows())
        .map(|i| {
            let row = mask.row(i);
            if row.iter().all(|&m| m == 0.0) {
                KeySet::All
            } else {
                KeySet::Subset(
                    row.iter()
                        .enumerate()
                        .filter(|(_, &m)| m == 0.0)
                        .map(|(j, _)| j)
                        .collect(),
                )
            }
        })
        .collect()
}

/// Dense additive mask for a list of key sets over `seq_len` keys.
pub fn mask_from_keysets(keys: &[KeySet], seq_len: usize) -> Matrix {
    Matrix::from_fn(keys.len(), seq_len, |i, j| {
        if keys[i].contains(j) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    })
}

/// Zero entries of an additive mask, i.e. query–key dot products it allows.
pub fn count_visible_entries(mask: &Matrix) -> u64 {
    mask.data().iter().filter(|&&m| m == 0.0).count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::seeded_stream;

    #[test]
    fn causal_mask_shapes() {
        assert_eq!(build_causal_mask(1).data(), &[0.0]);
        let m = build_causal_mask(3);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if j <= i { 0.0 } else { f64::NEG_INFINITY };
                assert_eq!(m.get(i, j), expected);
            }
        }
        let m = build_causal_mask(17);
        for i in 0..17 {
            assert_eq!(m.row(i).iter().filter(|&&x| x == 0.0).count(), i + 1);
        }
    }

    #[test]
    fn single_key_returns_its_value() {
        let q = Matrix::from_rows(&[vec![0.5, -1.0]]).unwrap();
        let v = Matrix::from_rows(&[vec![3.0, 4.0, 5.0]]).unwrap();
        let out = attention(&q, &q, &v, None).unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn zero_queries_average_values() {
        let mut rng = seeded_stream(3, "attn");
        let k = rng.gaussian_matrix(5, 4, 1.0);
        let v = rng.gaussian_matrix(5, 3, 1.0);
        let out = attention(&Matrix::zeros(2, 4), &k, &v, None).unwrap();
        for c in 0..3 {
            let mean = (0..5).map(|r| v.get(r, c)).sum::<f64>() / 5.0;
            assert!((out.get(0, c) - mean).abs() < 1e-14);
            assert!((out.get(1, c) - mean).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_mask_is_identity() {
        let mut rng = seeded_stream(4, "attn");
        let q = rng.gaussian_matrix(4, 4, 1.0);
        let k = rng.gaussian_matrix(4, 4, 1.0);
        let v = rng.gaussian_matrix(4, 4, 1.0);
        let a = attention(&q, &k, &v, None).unwrap();
        let b = attention(&q, &k, &v, Some(&Matrix::zeros(4, 4))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn keyset_mask_roundtrip() {
        let m = build_causal_mask(6);
        let ks = keysets_from_mask(&m);
        assert_eq!(ks[5], KeySet::All);
        assert_eq!(mask_from_keysets(&ks, 6), m);
        assert_eq!(count_visible_entries(&m), 21);
    }
}
