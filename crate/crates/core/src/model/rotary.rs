use crate::numeric::Matrix;

const ROPE_BASE: f64 = 10_000.0;

/// Rotates each head's consecutive coordinate pairs by `position · θ_i`,
/// with `positions[r]` the position id of row `r`.
pub fn apply_rotary(m: &mut Matrix, positions: &[usize], num_heads: usize, head_dim: usize) {
    debug_assert_eq!(m.rows(), positions.len());
    debug_assert_eq!(m.cols(), num_heads * head_dim);
    let half = head_dim / 2;
    let inv_freq: Vec<f64> = (0..half)
        .map(|i| ROPE_BASE.powf(-2.0 * i as f64 / head_dim as f64))
        .collect();
    let mut cos = vec![0.0; half];
    let mut sin = vec![0.0; half];
    for (r, &pos) in positions.iter().enumerate() {
        for i in 0..half {
            let (s, c) = (pos as f64 * inv_freq[i]).sin_cos();
            cos[i] = c;
            sin[i] = s;
        }
        let row = m.row_mut(r);
        for h in 0..num_heads {
            let head = &mut row[h * head_dim..(h + 1) * head_dim];
            for i in 0..half {
                let (a, b) = (head[2 * i], head[2 * i + 1]);
                head[2 * i] = a * cos[i] - b * sin[i];
                head[2 * i + 1] = a * sin[i] + b * cos[i];
            }
        }
    }
}
