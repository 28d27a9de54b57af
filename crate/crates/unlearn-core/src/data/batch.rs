//! Deterministic batch iteration over index subsets.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Yields batches of dataset indices. A fixed `(indices, shuffle_seed)`
/// always produces the same batch order; every index appears exactly once
/// per pass (minus the dropped tail when `drop_last` is set).
pub struct BatchIter {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    limit: usize,
}

impl BatchIter {
    pub fn new(
        indices: &[usize],
        batch_size: usize,
        shuffle_seed: Option<u64>,
        drop_last: bool,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if drop_last && batch_size > indices.len() {
            return Err(Error::config(format!(
                "batch size {batch_size} exceeds subset size {} with drop_last: iterator would be empty",
                indices.len()
            )));
        }
        let mut order = indices.to_vec();
        if let Some(seed) = shuffle_seed {
            let mut rng = rng::rng_for(seed, "batch-shuffle", 0, 0);
            order.shuffle(&mut rng);
        }
        let limit = if drop_last {
            order.len() - order.len() % batch_size
        } else {
            order.len()
        };
        Ok(BatchIter { order, batch_size, pos: 0, limit })
    }

    pub fn num_batches(&self) -> usize {
        self.limit.div_ceil(self.batch_size)
    }
}

impl Iterator for BatchIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.limit {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.limit);
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }
}
