use crate::model::AttentionMaps;

/// Shannon entropy (nats) of one probability row. Zero entries contribute
/// nothing.
pub fn row_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Mean row entropy per layer, averaged over heads and query rows.
pub fn attention_entropy(maps: &AttentionMaps) -> Vec<f64> {
    maps.per_layer
        .iter()
        .map(|heads| {
            let (mut sum, mut rows) = (0.0, 0usize);
            for m in heads {
                for i in 0..m.rows() {
                    sum += row_entropy(m.row(i));
                    rows += 1;
                }
            }
            if rows == 0 {
                0.0
            } else {
                sum / rows as f64
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Matrix;

    #[test]
    fn uniform_and_one_hot() {
        let n = 13;
        assert!((row_entropy(&vec![1.0 / n as f64; n]) - (n as f64).ln()).abs() < 1e-12);
        let mut one_hot = vec![0.0; n];
        one_hot[4] = 1.0;
        assert_eq!(row_entropy(&one_hot), 0.0);
        let maps = AttentionMaps {
            per_layer: vec![
                vec![Matrix::filled(3, 4, 0.25)],
                vec![Matrix::from_fn(3, 4, |i, j| f64::from(u8::from(i == j)))],
            ],
        };
        let e = attention_entropy(&maps);
        assert!((e[0] - 4f64.ln()).abs() < 1e-12);
        assert_eq!(e[1], 0.0);
    }
}
