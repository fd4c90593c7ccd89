//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 32×32 red, green and blue planes.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::Dataset;

const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * PLANE;
const CIFAR_CLASSES: usize = 10;

/// Concatenates the records of every file into one `[N, 32, 32, 3]` dataset.
pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P]) -> Result<Dataset> {
    if batch_paths.is_empty() {
        return Err(Error::Argument("no CIFAR-10 batch files given".into()));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
            return Err(Error::Format {
                path: PathBuf::from(path),
                offset: (bytes.len() - bytes.len() % CIFAR_RECORD_BYTES) as u64,
                message: format!(
                    "length {} is not a multiple of {CIFAR_RECORD_BYTES}",
                    bytes.len()
                ),
            });
        }
        for (r, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
            let label = record[0] as usize;
            if label >= CIFAR_CLASSES {
                return Err(Error::Format {
                    path: PathBuf::from(path),
                    offset: (r * CIFAR_RECORD_BYTES) as u64,
                    message: format!("label {label} out of range"),
                });
            }
            labels.push(label);
            let planes = &record[1..];
            for i in 0..PLANE {
                for c in 0..3 {
                    pixels.push(f64::from(planes[c * PLANE + i]) / 255.0);
                }
            }
        }
    }
    let n = labels.len();
    Dataset::new(
        Tensor::from_parts(vec![n, SIDE, SIDE, 3], pixels),
        labels,
        CIFAR_CLASSES,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_record_is_zero_image() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let mut rec = vec![0u8; CIFAR_RECORD_BYTES];
        rec[0] = 4;
        std::fs::write(&p, &rec).unwrap();
        let ds = load_cifar10(&[&p]).unwrap();
        assert_eq!(ds.images().shape(), &[1, 32, 32, 3]);
        assert!(ds.images().data().iter().all(|&v| v == 0.0));
        assert_eq!(ds.labels(), &[4]);
    }

    #[test]
    fn channel_major_is_reordered_to_hwc() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let mut rec = vec![0u8; CIFAR_RECORD_BYTES];
        rec[0] = 1;
        for (i, b) in rec[1..].iter_mut().enumerate() {
            *b = (i * 7 % 256) as u8;
        }
        std::fs::write(&p, &rec).unwrap();
        let ds = load_cifar10(&[&p]).unwrap();
        // Unpack by hand: plane c, row y, column x.
        for y in [0usize, 5, 31] {
            for x in [0usize, 17, 31] {
                for c in 0..3 {
                    let byte = rec[1 + c * 1024 + y * 32 + x];
                    let got = ds.images().data()[(y * 32 + x) * 3 + c];
                    assert_eq!(got, f64::from(byte) / 255.0);
                }
            }
        }
    }

    #[test]
    fn partial_record_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        std::fs::write(&p, vec![0u8; CIFAR_RECORD_BYTES + 5]).unwrap();
        assert!(matches!(
            load_cifar10(&[&p]),
            Err(Error::Format { offset, .. }) if offset == CIFAR_RECORD_BYTES as u64
        ));
    }

    #[test]
    fn files_are_concatenated() {
        let dir = tempfile::tempdir().unwrap();
        let paths: Vec<_> = (0..3)
            .map(|k| {
                let p = dir.path().join(format!("data_batch_{k}.bin"));
                let mut bytes = Vec::new();
                for r in 0..2 {
                    let mut rec = vec![0u8; CIFAR_RECORD_BYTES];
                    rec[0] = (k * 2 + r) as u8;
                    bytes.extend(rec);
                }
                std::fs::write(&p, bytes).unwrap();
                p
            })
            .collect();
        let ds = load_cifar10(&paths).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.labels(), &[0, 1, 2, 3, 4, 5]);
    }
}
