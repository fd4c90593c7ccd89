//! MNIST IDX container: big-endian u32 magic and dimensions, then raw bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::Dataset;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;
const MNIST_CLASSES: usize = 10;

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn format_error(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn u32_at(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_error(path, bytes.len(), "truncated header"))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = u32_at(bytes, 0, path)?;
    if magic != expected {
        return Err(format_error(
            path,
            0,
            format!("magic {magic}, expected {expected}"),
        ));
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    let end = header + len;
    if bytes.len() < end {
        return Err(format_error(
            path,
            bytes.len(),
            format!(
                "truncated payload: {} bytes, header promises {end}",
                bytes.len()
            ),
        ));
    }
    if bytes.len() > end {
        return Err(format_error(path, end, "trailing bytes after payload"));
    }
    Ok(&bytes[header..end])
}

/// Reads an IDX image file and its label file into an `[N, rows, cols, 1]`
/// dataset with pixels scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read(images_path)?;
    check_magic(&images, IDX_IMAGES_MAGIC, images_path)?;
    let count = u32_at(&images, 4, images_path)? as usize;
    let rows = u32_at(&images, 8, images_path)? as usize;
    let cols = u32_at(&images, 12, images_path)? as usize;
    if count == 0 || rows == 0 || cols == 0 {
        return Err(format_error(images_path, 4, "zero dimension"));
    }
    let pixels = payload(&images, 16, count * rows * cols, images_path)?;

    let labels = read(labels_path)?;
    check_magic(&labels, IDX_LABELS_MAGIC, labels_path)?;
    let label_count = u32_at(&labels, 4, labels_path)? as usize;
    if label_count != count {
        return Err(format_error(
            labels_path,
            4,
            format!("{label_count} labels for {count} images"),
        ));
    }
    let raw_labels = payload(&labels, 8, count, labels_path)?;
    if let Some(pos) = raw_labels.iter().position(|&l| l as usize >= MNIST_CLASSES) {
        return Err(format_error(
            labels_path,
            8 + pos,
            format!("label {} out of range", raw_labels[pos]),
        ));
    }

    let data = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let images = Tensor::from_parts(vec![count, rows, cols, 1], data);
    Dataset::new(
        images,
        raw_labels.iter().map(|&l| l as usize).collect(),
        MNIST_CLASSES,
    )
}

/// Encodes a single-channel dataset back into IDX image and label bytes.
pub fn to_idx_bytes(dataset: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let [rows, cols, channels] = dataset.image_shape() else {
        unreachable!("datasets are rank 4");
    };
    if *channels != 1 {
        return Err(Error::Argument(format!(
            "IDX images need one channel, got {channels}"
        )));
    }
    if dataset.labels().iter().any(|&l| l > u8::MAX as usize) {
        return Err(Error::Argument("labels above 255 do not fit IDX".into()));
    }
    let n = dataset.len() as u32;
    let mut images = Vec::with_capacity(16 + dataset.images().len());
    for v in [IDX_IMAGES_MAGIC, n, *rows as u32, *cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(
        dataset
            .images()
            .data()
            .iter()
            .map(|&v| (v * 255.0).round() as u8),
    );

    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    labels.extend(dataset.labels().iter().map(|&l| l as u8));
    Ok((images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pair(
        dir: &Path,
        images: &[u8],
        labels: &[u8],
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("images");
        let lp = dir.join("labels");
        std::fs::write(&ip, images).unwrap();
        std::fs::write(&lp, labels).unwrap();
        (ip, lp)
    }

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn parses_and_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        let mut images = header(IDX_IMAGES_MAGIC, &[2, 2, 2]);
        images.extend_from_slice(&[0, 255, 51, 102, 255, 0, 0, 0]);
        let mut labels = header(IDX_LABELS_MAGIC, &[2]);
        labels.extend_from_slice(&[7, 0]);
        let (ip, lp) = write_pair(dir.path(), &images, &labels);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.images().shape(), &[2, 2, 2, 1]);
        assert_eq!(ds.images().data()[0], 0.0);
        assert_eq!(ds.images().data()[1], 1.0);
        assert!((ds.images().data()[2] - 0.2).abs() < 1e-15);
        assert_eq!(ds.labels(), &[7, 0]);
        assert_eq!(ds.class_count(), 10);

        let (ib, lb) = to_idx_bytes(&ds).unwrap();
        assert_eq!(ib, images);
        assert_eq!(lb, labels);
    }

    #[test]
    fn label_file_as_images_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut labels = header(IDX_LABELS_MAGIC, &[1]);
        labels.push(3);
        let (_, lp) = write_pair(dir.path(), &[], &labels);
        match load_idx(&lp, &lp) {
            Err(Error::Format {
                offset: 0, message, ..
            }) => assert!(message.contains("2049"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncation_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut images = header(IDX_IMAGES_MAGIC, &[2, 2, 2]);
        images.extend_from_slice(&[1, 2, 3]);
        let mut labels = header(IDX_LABELS_MAGIC, &[2]);
        labels.extend_from_slice(&[1, 2]);
        let (ip, lp) = write_pair(dir.path(), &images, &labels);
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::Format { offset: 19, .. })
        ));

        let mut images = header(IDX_IMAGES_MAGIC, &[1, 1, 1]);
        images.push(9);
        let (ip, lp) = write_pair(dir.path(), &images, &labels);
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::Format { offset: 4, .. })
        ));

        let (ip, lp) = write_pair(dir.path(), &images[..6], &labels);
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_label_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let mut images = header(IDX_IMAGES_MAGIC, &[2, 1, 1]);
        images.extend_from_slice(&[0, 0]);
        let mut labels = header(IDX_LABELS_MAGIC, &[2]);
        labels.extend_from_slice(&[1, 12]);
        let (ip, lp) = write_pair(dir.path(), &images, &labels);
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::Format { offset: 9, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let p = Path::new("/nonexistent/idx");
        assert!(matches!(load_idx(p, p), Err(Error::Io { .. })));
    }
}
