use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_labels(y: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let (batch, classes) = match y.shape() {
        [b, c] => (*b, *c),
        s => {
            return Err(Error::Argument(format!(
                "class scores must be [batch, classes], got {s:?}"
            )))
        }
    };
    if labels.len() != batch {
        return Err(Error::Argument(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Argument(format!(
            "label {bad} outside [0, {classes})"
        )));
    }
    Ok((batch, classes))
}

/// Mean negative log-likelihood of `labels` under softmax(`y`), and its
/// gradient `(softmax(y) − onehot) / batch`.
pub fn softmax_cross_entropy(y: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, classes) = check_labels(y, labels)?;
    let mut grad = vec![0.0; batch * classes];
    let mut total = 0.0;
    let inv_batch = 1.0 / batch as f64;
    for ((row, g), &label) in y
        .data()
        .chunks_exact(classes)
        .zip(grad.chunks_exact_mut(classes))
        .zip(labels)
    {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (gv, &v) in g.iter_mut().zip(row) {
            *gv = (v - max).exp();
            denom += *gv;
        }
        total += denom.ln() - (row[label] - max);
        for gv in g.iter_mut() {
            *gv *= inv_batch / denom;
        }
        g[label] -= inv_batch;
    }
    let loss = total * inv_batch;
    if !loss.is_finite() {
        return Err(Error::Numeric {
            context: "softmax cross-entropy".into(),
        });
    }
    Ok((loss, Tensor::new(y.shape(), grad)?))
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(y: &Tensor, labels: &[usize]) -> Result<f64> {
    let (_, classes) = check_labels(y, labels)?;
    Ok(correct_count(y.data(), classes, labels) as f64 / labels.len() as f64)
}

pub(crate) fn correct_count(scores: &[f64], classes: usize, labels: &[usize]) -> usize {
    scores
        .chunks_exact(classes)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}
