use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// A reordering of sequence rows. Position `i` of the permuted sequence holds
/// the element that was at `order[i]` in the original.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    pub fn identity(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
        }
    }

    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::OutOfRange(format!(
                    "not a permutation of 0..{}",
                    order.len()
                )));
            }
        }
        Ok(Self { order })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.order.len()];
        for (new, &old) in self.order.iter().enumerate() {
            inv[old] = new;
        }
        Permutation { order: inv }
    }

    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        self.order.iter().map(|&i| items[i].clone()).collect()
    }

    pub fn apply_rows(&self, m: &Matrix) -> Result<Matrix> {
        if m.rows() != self.order.len() {
            return Err(Error::Shape(format!(
                "permutation of {} applied to {} rows",
                self.order.len(),
                m.rows()
            )));
        }
        Ok(m.select_rows(&self.order))
    }
}
