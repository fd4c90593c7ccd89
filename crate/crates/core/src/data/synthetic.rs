use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::Dataset;

const CLUSTER_STD: f64 = 0.1;
const LOW: f64 = 0.25;
const HIGH: f64 = 0.75;

fn hamming(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Gaussian clusters shaped `[N, 1, 1, dims]`, `per_class` points per class.
///
/// Each class mean sits on a distinct corner of the `{0.25, 0.75}^dims`
/// grid; corners differ in at least four coordinates when `dims` allows,
/// which puts means at least unit distance apart. Points get isotropic noise
/// of std 0.1 and are clamped to `[0, 1]`.
pub fn synthetic_blobs(
    classes: usize,
    per_class: usize,
    dims: usize,
    rng: &mut SeededRng,
) -> Result<Dataset> {
    if classes == 0 || per_class == 0 || dims == 0 {
        return Err(Error::Argument(
            "classes, per_class and dims must be positive".into(),
        ));
    }
    if dims < usize::BITS as usize && classes > 1usize << dims {
        return Err(Error::Argument(format!(
            "{dims} dims cannot host {classes} distinct corners"
        )));
    }

    let mut codes: Vec<Vec<bool>> = Vec::with_capacity(classes);
    let mut min_distance = dims.min(4);
    while codes.len() < classes {
        let mut placed = false;
        for _ in 0..1000 {
            let code: Vec<bool> = (0..dims).map(|_| rng.next_u64() & 1 == 1).collect();
            if codes.iter().all(|c| hamming(c, &code) >= min_distance) {
                codes.push(code);
                placed = true;
                break;
            }
        }
        if !placed {
            min_distance -= 1;
        }
    }

    let mut data = Vec::with_capacity(classes * per_class * dims);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (class, code) in codes.iter().enumerate() {
        for _ in 0..per_class {
            for &bit in code {
                let mean = if bit { HIGH } else { LOW };
                data.push((mean + CLUSTER_STD * rng.standard_normal()).clamp(0.0, 1.0));
            }
            labels.push(class);
        }
    }
    let n = labels.len();
    Dataset::new(
        Tensor::from_parts(vec![n, 1, 1, dims], data),
        labels,
        classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_per_class() {
        let ds = synthetic_blobs(5, 1, 8, &mut SeededRng::new(1)).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.labels(), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn deterministic_and_bounded() {
        let a = synthetic_blobs(3, 20, 6, &mut SeededRng::new(4)).unwrap();
        let b = synthetic_blobs(3, 20, 6, &mut SeededRng::new(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.image_shape(), &[1, 1, 6]);
    }

    #[test]
    fn class_means_are_separated() {
        let ds = synthetic_blobs(4, 200, 8, &mut SeededRng::new(2)).unwrap();
        let means: Vec<Vec<f64>> = (0..4)
            .map(|c| {
                let mut m = vec![0.0; 8];
                for (i, &l) in ds.labels().iter().enumerate() {
                    if l == c {
                        for (j, mj) in m.iter_mut().enumerate() {
                            *mj += ds.images().data()[i * 8 + j] / 200.0;
                        }
                    }
                }
                m
            })
            .collect();
        for a in 0..4 {
            for b in a + 1..4 {
                let d: f64 = means[a]
                    .iter()
                    .zip(&means[b])
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d > 0.9, "classes {a},{b} only {d} apart");
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(synthetic_blobs(0, 1, 1, &mut SeededRng::new(0)).is_err());
        assert!(synthetic_blobs(5, 1, 2, &mut SeededRng::new(0)).is_err());
    }
}
