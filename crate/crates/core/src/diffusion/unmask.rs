use serde::{Deserialize, Serialize};

use crate::numeric::Matrix;

/// How many masked positions a denoising step commits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnmaskRule {
    /// The `n` most confident positions.
    Count(usize),
    /// Every position with confidence `>= c`, or the single best if none.
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Commit {
    pub position: usize,
    pub token: usize,
    pub confidence: f64,
}

/// Picks positions to commit. Row `i` of `probabilities` is the token
/// distribution at `positions[i]`; confidence is its maximum, and the token
/// is the argmax (lowest id on ties). Ranking ties go to the lower position.
/// Returned commits are sorted by position.
pub fn select_unmask(probabilities: &Matrix, positions: &[usize], rule: UnmaskRule) -> Vec<Commit> {
    debug_assert_eq!(probabilities.rows(), positions.len());
    let mut ranked: Vec<Commit> = positions
        .iter()
        .enumerate()
        .map(|(i, &position)| {
            let (token, confidence) = probabilities.row(i).iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |best, (tok, &p)| if p > best.1 { (tok, p) } else { best },
            );
            Commit {
                position,
                token,
                confidence,
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.position.cmp(&b.position))
    });
    let take = match rule {
        UnmaskRule::Count(n) => n.min(ranked.len()),
        UnmaskRule::Threshold(c) => ranked
            .iter()
            .take_while(|x| x.confidence >= c)
            .count()
            .max(1)
            .min(ranked.len()),
    };
    ranked.truncate(take);
    ranked.sort_by_key(|c| c.position);
    ranked
}
