use ndarray::Array2;

use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Summed cross-entropy of per-frame class labels with its gradient w.r.t.
/// the logits. Frames with zero weight are skipped; `weights` defaults to all
/// ones.
pub fn softmax_cross_entropy(
    logits: &Array2<f64>,
    labels: &[usize],
    weights: Option<&[f64]>,
) -> Result<(f64, Array2<f64>)> {
    let (rows, classes) = logits.dim();
    if labels.len() != rows {
        return Err(Error::shape("label count", rows, labels.len()));
    }
    if let Some(w) = weights {
        if w.len() != rows {
            return Err(Error::shape("frame weights", rows, w.len()));
        }
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let probs = softmax_rows(logits);
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (t, &label) in labels.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[t]);
        if w == 0.0 {
            continue;
        }
        if label >= classes {
            return Err(Error::shape("class label", format!("< {classes}"), label));
        }
        let row = logits.row(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += w * (lse - row[label]);
        let mut g = grad.row_mut(t);
        g.assign(&probs.row(t));
        g[label] -= 1.0;
        g *= w;
    }
    Ok((loss, grad))
}

/// `0.5 * sum (y - target)^2` over rows with nonzero weight.
pub fn squared_error(
    output: &Array2<f64>,
    target: &Array2<f64>,
    weights: Option<&[f64]>,
) -> Result<(f64, Array2<f64>)> {
    if output.dim() != target.dim() {
        return Err(Error::shape(
            "regression target",
            format!("{:?}", output.dim()),
            format!("{:?}", target.dim()),
        ));
    }
    let mut grad = output - target;
    if let Some(w) = weights {
        if w.len() != output.nrows() {
            return Err(Error::shape("frame weights", output.nrows(), w.len()));
        }
        for (mut row, &wt) in grad.rows_mut().into_iter().zip(w) {
            row *= wt;
        }
    }
    let loss = 0.5 * (&grad * &(output - target)).sum();
    Ok((loss, grad))
}
