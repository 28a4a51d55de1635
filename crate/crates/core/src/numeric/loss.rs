use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Mean softmax cross-entropy over the rows of `logits` and its gradient
/// with respect to the logits (`(softmax - onehot) / batch`).
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let classes = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut grad = Matrix::zeros(logits.rows(), classes);
    if labels.is_empty() {
        return Ok((0.0, grad));
    }

    let scale = 1.0 / labels.len() as f64;
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = max + sum_exp.ln();
        // log-sum-exp >= any entry, so this is >= 0 up to rounding.
        total += (log_sum - row[y]).max(0.0);
        let g = grad.row_mut(r);
        for (c, gv) in g.iter_mut().enumerate() {
            *gv = (row[c] - max).exp() / sum_exp * scale;
        }
        g[y] -= scale;
    }
    Ok((total * scale, grad))
}
