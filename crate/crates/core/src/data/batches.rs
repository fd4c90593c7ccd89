use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::Dataset;

#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// One shuffled pass over a dataset. The last batch may be short.
#[derive(Debug)]
pub struct BatchIterator<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl BatchIterator<'_> {
    /// Sample order for this pass.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn batch_count(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let (images, labels) = self.dataset.gather(&self.order[self.pos..end]);
        self.pos = end;
        Some(Batch { images, labels })
    }
}

/// Shuffles the sample order with `rng` and yields `batch_size` chunks.
///
/// Callers pass a per-epoch fork of their shuffle stream so an epoch's order
/// depends only on (seed, epoch).
pub fn batches<'a>(
    dataset: &'a Dataset,
    batch_size: usize,
    rng: &mut SeededRng,
) -> Result<BatchIterator<'a>> {
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    rng.shuffle(&mut order);
    Ok(BatchIterator {
        dataset,
        order,
        batch_size,
        pos: 0,
    })
}
