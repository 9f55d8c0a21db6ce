//! Deterministic numerics substrate: dense f64 matrices, masked softmax,
//! cosine similarity, seeded splittable randomness and row permutations.

mod matrix;
mod perm;
mod rng;

pub use matrix::{cosine_similarity, softmax_in_place, softmax_rows, Matrix};
pub use perm::Permutation;
pub use rng::{seeded_stream, RandomStream};
