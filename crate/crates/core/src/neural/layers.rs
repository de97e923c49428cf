//! Forward/backward kernels for the per-frame and span-local layers.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub(crate) fn apply_row_mask(x: &mut Array2<f64>, mask: &[f64]) {
    for (mut row, &m) in x.rows_mut().into_iter().zip(mask) {
        if m == 0.0 {
            row.fill(0.0);
        }
    }
}

pub(crate) fn dense(x: &ArrayView2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    x.dot(w) + b
}

/// Returns `(dx, dw, db)` for `y = x w + b`.
pub(crate) fn dense_backward(
    x: &ArrayView2<f64>,
    w: &Array2<f64>,
    dy: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let dx = dy.dot(&w.t());
    let dw = x.t().dot(dy);
    let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    (dx, dw, db)
}

fn pad_left(width: usize) -> usize {
    (width - 1) / 2
}

/// Unfolds each span into `rows x (width * cin)` with zero padding at span
/// edges; column block `j` holds frame `t + j - pad_left`.
pub(crate) fn im2col(x: &Array2<f64>, spans: &[(usize, usize)], width: usize) -> Array2<f64> {
    let cin = x.ncols();
    let pl = pad_left(width) as isize;
    let mut cols = Array2::zeros((x.nrows(), width * cin));
    for &(start, len) in spans {
        for t in 0..len {
            for j in 0..width {
                let src = t as isize + j as isize - pl;
                if src < 0 || src >= len as isize {
                    continue;
                }
                cols.slice_mut(s![start + t, j * cin..(j + 1) * cin])
                    .assign(&x.row(start + src as usize));
            }
        }
    }
    cols
}

pub(crate) fn col2im(
    dcols: &Array2<f64>,
    spans: &[(usize, usize)],
    width: usize,
    cin: usize,
) -> Array2<f64> {
    let pl = pad_left(width) as isize;
    let mut dx = Array2::zeros((dcols.nrows(), cin));
    for &(start, len) in spans {
        for t in 0..len {
            for j in 0..width {
                let src = t as isize + j as isize - pl;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let mut row = dx.row_mut(start + src as usize);
                row += &dcols.slice(s![start + t, j * cin..(j + 1) * cin]);
            }
        }
    }
    dx
}

#[derive(Debug, Clone)]
pub(crate) struct BnTape {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

/// Batch normalisation with statistics over unmasked rows only.
pub(crate) fn batch_norm_train(
    x: &Array2<f64>,
    gamma: &Array2<f64>,
    beta: &Array2<f64>,
    mask: &[f64],
) -> (Array2<f64>, BnTape) {
    let c = x.ncols();
    let n: f64 = mask.iter().sum();
    let mut mean = Array1::zeros(c);
    let mut var = Array1::zeros(c);
    if n > 0.0 {
        for (row, &m) in x.rows().into_iter().zip(mask) {
            if m != 0.0 {
                mean += &row;
            }
        }
        mean /= n;
        for (row, &m) in x.rows().into_iter().zip(mask) {
            if m != 0.0 {
                Zip::from(&mut var)
                    .and(&row)
                    .and(&mean)
                    .for_each(|v, &xv, &mu| *v += (xv - mu) * (xv - mu));
            }
        }
        var /= n;
    }
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let mut xhat = (x - &mean) * &inv_std;
    apply_row_mask(&mut xhat, mask);
    let y = &xhat * &gamma.row(0) + &beta.row(0);
    (
        y,
        BnTape {
            xhat,
            inv_std,
            mean,
            var,
        },
    )
}

pub(crate) fn batch_norm_infer(
    x: &Array2<f64>,
    gamma: &Array2<f64>,
    beta: &Array2<f64>,
    running_mean: &Array2<f64>,
    running_var: &Array2<f64>,
) -> Array2<f64> {
    let inv_std = running_var.row(0).mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    (x - &running_mean.row(0)) * &inv_std * &gamma.row(0) + &beta.row(0)
}

/// Returns `(dx, dgamma, dbeta)`; masked rows receive zero gradient.
pub(crate) fn batch_norm_backward(
    tape: &BnTape,
    gamma: &Array2<f64>,
    dy: &Array2<f64>,
    mask: &[f64],
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let mut dy = dy.clone();
    apply_row_mask(&mut dy, mask);
    let n: f64 = mask.iter().sum();
    let dbeta = dy.sum_axis(Axis(0));
    let dgamma = (&dy * &tape.xhat).sum_axis(Axis(0));
    let mut dx = Array2::zeros(dy.raw_dim());
    if n > 0.0 {
        // dxhat = dy * gamma; dx = inv_std / n * (n dxhat - sum dxhat - xhat sum(dxhat xhat))
        let g = gamma.row(0);
        let sum_dxhat = &dbeta * &g;
        let sum_dxhat_xhat = &dgamma * &g;
        for (((mut dx_row, dy_row), xh_row), &m) in dx
            .rows_mut()
            .into_iter()
            .zip(dy.rows())
            .zip(tape.xhat.rows())
            .zip(mask)
        {
            if m == 0.0 {
                continue;
            }
            for c in 0..dx_row.len() {
                dx_row[c] = tape.inv_std[c] / n
                    * (n * dy_row[c] * g[c] - sum_dxhat[c] - xh_row[c] * sum_dxhat_xhat[c]);
            }
        }
    }
    (
        dx,
        dgamma.insert_axis(Axis(0)),
        dbeta.insert_axis(Axis(0)),
    )
}

/// Width-2, stride-1 max pooling that keeps sequence length:
/// `y[t] = max(x[t], x[t + 1])`, with the final frame of each span copied.
/// The returned flags mark elements taken from `t + 1`.
pub(crate) fn max_pool(x: &Array2<f64>, spans: &[(usize, usize)]) -> (Array2<f64>, Array2<bool>) {
    let mut y = x.clone();
    let mut take_next = Array2::from_elem(x.raw_dim(), false);
    for &(start, len) in spans {
        for t in start..start + len.saturating_sub(1) {
            for c in 0..x.ncols() {
                if x[[t + 1, c]] > x[[t, c]] {
                    y[[t, c]] = x[[t + 1, c]];
                    take_next[[t, c]] = true;
                }
            }
        }
    }
    (y, take_next)
}

pub(crate) fn max_pool_backward(dy: &Array2<f64>, take_next: &Array2<bool>) -> Array2<f64> {
    let mut dx = Array2::zeros(dy.raw_dim());
    for ((t, c), &g) in dy.indexed_iter() {
        if take_next[[t, c]] {
            dx[[t + 1, c]] += g;
        } else {
            dx[[t, c]] += g;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn im2col_respects_span_edges() {
        let x = array![[1.0], [2.0], [3.0], [4.0], [5.0]];
        let spans = [(0, 2), (2, 3)];
        let cols = im2col(&x, &spans, 3);
        assert_eq!(
            cols,
            array![
                [0.0, 1.0, 2.0],
                [1.0, 2.0, 0.0],
                [0.0, 3.0, 4.0],
                [3.0, 4.0, 5.0],
                [4.0, 5.0, 0.0]
            ]
        );
        // even width: pad one on the right
        let cols = im2col(&x, &[(0, 5)], 2);
        assert_eq!(cols.row(4), array![5.0, 0.0]);
        assert_eq!(cols.row(0), array![1.0, 2.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let x = Array2::from_shape_fn((7, 2), |(i, j)| (i * 3 + j) as f64 * 0.1 - 0.4);
        let spans = [(0, 3), (3, 4)];
        for width in 1..=4 {
            let cols = im2col(&x, &spans, width);
            let g = cols.mapv(|v| v * 1.7 + 0.3);
            let lhs: f64 = (&cols * &g).sum();
            let rhs: f64 = (&x * &col2im(&g, &spans, width, 2)).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn max_pool_keeps_length_and_spans() {
        let x = array![[1.0], [3.0], [2.0], [9.0], [0.5]];
        let (y, _) = max_pool(&x, &[(0, 3), (3, 2)]);
        assert_eq!(y, array![[3.0], [3.0], [2.0], [9.0], [0.5]]);
    }
}
