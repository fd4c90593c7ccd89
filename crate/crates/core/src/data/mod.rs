//! Datasets: MNIST IDX and CIFAR-10 binary readers, shuffled batching and
//! synthetic Gaussian blobs for fast runs.
//!
//! Pixels are scaled by 1/255 with no mean subtraction.

mod batches;
mod cifar;
mod idx;
mod synthetic;

pub use batches::{batches, Batch, BatchIterator};
pub use cifar::{load_cifar10, CIFAR_RECORD_BYTES};
pub use idx::{load_idx, to_idx_bytes, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use synthetic::synthetic_blobs;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images as `[N, H, W, C]` in `[0, 1]` with one label per image.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::Argument(format!(
                "images must be [N, H, W, C], got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::Argument(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::Argument("class_count must be positive".into()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Argument(format!(
                "label {bad} >= class count {class_count}"
            )));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Argument("image values must lie in [0, 1]".into()));
        }
        Ok(Dataset {
            images,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// `[H, W, C]` of a single image.
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    fn sample_len(&self) -> usize {
        self.image_shape().iter().product()
    }

    /// Gathers the given samples into one batch tensor.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * len..(i + 1) * len]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.image_shape());
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::from_parts(shape, data), labels)
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn truncated(&self, n: usize) -> Dataset {
        if n >= self.len() || n == 0 {
            return self.clone();
        }
        let indices: Vec<usize> = (0..n).collect();
        let (images, labels) = self.gather(&indices);
        Dataset {
            images,
            labels,
            class_count: self.class_count,
        }
    }
}
