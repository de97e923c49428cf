use ndarray::Array2;

use super::{Network, SeqBatch};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over parameters of `|analytic - numeric| / (|analytic| + 1e-8)`
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub checked: usize,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + 1e-8)
}

/// Compares `analytic` against central differences of `loss` for every scalar
/// in `params`. `loss` sees the perturbed tensors.
pub fn grad_check_tensors(
    names: &[String],
    params: &mut [Array2<f64>],
    analytic: &[Array2<f64>],
    loss: &mut dyn FnMut(&[Array2<f64>]) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for k in 0..params.len() {
        for i in 0..params[k].len() {
            let orig = params[k].as_slice().expect("standard layout")[i];
            params[k].as_slice_mut().expect("standard layout")[i] = orig + FD_STEP;
            let up = loss(params)?;
            params[k].as_slice_mut().expect("standard layout")[i] = orig - FD_STEP;
            let down = loss(params)?;
            params[k].as_slice_mut().expect("standard layout")[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[k].as_slice().expect("standard layout")[i];
            let err = rel_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_tensor.is_empty() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst_tensor = names[k].clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

/// Finite-difference check of [`Network`] gradients in train mode (dropout
/// masks fixed by `seed`, batch statistics in batch normalisation).
pub fn grad_check(
    net: &Network,
    batch: &SeqBatch,
    seed: u64,
    loss_fn: &dyn Fn(&Array2<f64>) -> Result<(f64, Array2<f64>)>,
) -> Result<GradCheckReport> {
    let (_, grads) = net.loss_and_gradients(batch, seed, loss_fn)?;
    let mut probe = net.clone();
    let names = net.param_names().to_vec();
    let mut params = net.params().to_vec();
    grad_check_tensors(&names, &mut params, grads.values(), &mut |p| {
        for (dst, src) in probe.params_mut().iter_mut().zip(p) {
            dst.assign(src);
        }
        probe.train_loss(batch, seed, loss_fn)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_model_squared_loss() {
        // y = x w + b, loss = 0.5 |y - t|^2; dL/dw = x^T (y - t), dL/db = sum rows (y - t)
        let x = array![[0.5, -1.0, 2.0], [1.5, 0.3, -0.7]];
        let t = array![[1.0, 0.0], [-2.0, 0.5]];
        let w = array![[0.1, -0.2], [0.4, 0.3], [-0.5, 0.25]];
        let b = array![[0.05, -0.1]];
        let residual = x.dot(&w) + &b - &t;
        let dw = x.t().dot(&residual);
        let db = residual.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
        let names = vec!["w".to_string(), "b".to_string()];
        let mut params = vec![w, b];
        let report = grad_check_tensors(&names, &mut params, &[dw, db], &mut |p| {
            let r = x.dot(&p[0]) + &p[1] - &t;
            Ok(0.5 * r.mapv(|v| v * v).sum())
        })
        .unwrap();
        assert_eq!(report.checked, 8);
        assert!(report.max_rel_error < 1e-7, "{report:?}");
    }
}
