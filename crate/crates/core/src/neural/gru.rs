//! One GRU direction over the spans of a batch.
//!
//! Gate blocks are ordered `[z | r | n]` along the `3H` axis:
//!
//! ```text
//! z = sigmoid(x Wz + h Uz + bz)
//! r = sigmoid(x Wr + h Ur + br)
//! n = tanh(x Wn + (r * h) Un + bn)
//! h' = (1 - z) * n + z * h
//! ```
//!
//! The input projection `x W + b` is computed for all frames up front; this
//! module only runs the recurrence. Masked frames hold the state unchanged.

use ndarray::{s, Array1, Array2};
use rayon::prelude::*;

use super::layers::sigmoid;

#[derive(Debug, Clone)]
pub(crate) struct GruTape {
    h_prev: Array2<f64>,
    rh: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    n: Array2<f64>,
}

struct SpanForward {
    out: Array2<f64>,
    tape: GruTape,
}

fn order(len: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    }
}

fn run_span(
    xw: &Array2<f64>,
    u: &Array2<f64>,
    start: usize,
    len: usize,
    mask: &[f64],
    reverse: bool,
) -> SpanForward {
    let h_units = u.nrows();
    let u_zr = u.slice(s![.., ..2 * h_units]);
    let u_n = u.slice(s![.., 2 * h_units..]);
    let zeros = || Array2::zeros((len, h_units));
    let (mut out, mut h_prev_m, mut rh_m, mut z_m, mut r_m, mut n_m) =
        (zeros(), zeros(), zeros(), zeros(), zeros(), zeros());
    let mut h = Array1::<f64>::zeros(h_units);
    for t in order(len, reverse) {
        h_prev_m.row_mut(t).assign(&h);
        if mask[start + t] == 0.0 {
            continue;
        }
        let a = xw.row(start + t);
        let hu = h.dot(&u_zr);
        let z = Array1::from_shape_fn(h_units, |k| sigmoid(a[k] + hu[k]));
        let r = Array1::from_shape_fn(h_units, |k| sigmoid(a[h_units + k] + hu[h_units + k]));
        let rh = &r * &h;
        let nu = rh.dot(&u_n);
        let n = Array1::from_shape_fn(h_units, |k| (a[2 * h_units + k] + nu[k]).tanh());
        let h_new = Array1::from_shape_fn(h_units, |k| (1.0 - z[k]) * n[k] + z[k] * h[k]);
        rh_m.row_mut(t).assign(&rh);
        z_m.row_mut(t).assign(&z);
        r_m.row_mut(t).assign(&r);
        n_m.row_mut(t).assign(&n);
        out.row_mut(t).assign(&h_new);
        h = h_new;
    }
    SpanForward {
        out,
        tape: GruTape {
            h_prev: h_prev_m,
            rh: rh_m,
            z: z_m,
            r: r_m,
            n: n_m,
        },
    }
}

/// Runs the recurrence for every span (in parallel across spans) and returns
/// the hidden-state sequence `N x H` with one tape per span.
pub(crate) fn forward(
    xw: &Array2<f64>,
    u: &Array2<f64>,
    spans: &[(usize, usize)],
    mask: &[f64],
    reverse: bool,
) -> (Array2<f64>, Vec<GruTape>) {
    let results: Vec<SpanForward> = spans
        .par_iter()
        .map(|&(start, len)| run_span(xw, u, start, len, mask, reverse))
        .collect();
    let mut out = Array2::zeros((xw.nrows(), u.nrows()));
    let mut tapes = Vec::with_capacity(spans.len());
    for (&(start, len), r) in spans.iter().zip(results) {
        out.slice_mut(s![start..start + len, ..]).assign(&r.out);
        tapes.push(r.tape);
    }
    (out, tapes)
}

struct SpanBackward {
    dxw: Array2<f64>,
    du: Array2<f64>,
}

fn back_span(
    tape: &GruTape,
    u: &Array2<f64>,
    dout: &Array2<f64>,
    start: usize,
    len: usize,
    mask: &[f64],
    reverse: bool,
) -> SpanBackward {
    let h_units = u.nrows();
    let u_zr = u.slice(s![.., ..2 * h_units]);
    let u_n = u.slice(s![.., 2 * h_units..]);
    let mut dxw = Array2::zeros((len, 3 * h_units));
    let mut dh_next = Array1::<f64>::zeros(h_units);
    // walk the processing order backwards
    for t in order(len, !reverse) {
        let dh = &dout.row(start + t) + &dh_next;
        if mask[start + t] == 0.0 {
            dh_next = dh;
            continue;
        }
        let (h_prev, z, r, n) = (
            tape.h_prev.row(t),
            tape.z.row(t),
            tape.r.row(t),
            tape.n.row(t),
        );
        let mut dh_prev = &dh * &z;
        let da_n = Array1::from_shape_fn(h_units, |k| dh[k] * (1.0 - z[k]) * (1.0 - n[k] * n[k]));
        let d_rh = u_n.dot(&da_n);
        let mut row = dxw.row_mut(t);
        for k in 0..h_units {
            let dz = dh[k] * (h_prev[k] - n[k]);
            let dr = d_rh[k] * h_prev[k];
            dh_prev[k] += d_rh[k] * r[k];
            row[k] = dz * z[k] * (1.0 - z[k]);
            row[h_units + k] = dr * r[k] * (1.0 - r[k]);
            row[2 * h_units + k] = da_n[k];
        }
        dh_prev += &u_zr.dot(&row.slice(s![..2 * h_units]));
        dh_next = dh_prev;
    }
    let mut du = Array2::zeros(u.raw_dim());
    du.slice_mut(s![.., ..2 * h_units])
        .assign(&tape.h_prev.t().dot(&dxw.slice(s![.., ..2 * h_units])));
    du.slice_mut(s![.., 2 * h_units..])
        .assign(&tape.rh.t().dot(&dxw.slice(s![.., 2 * h_units..])));
    SpanBackward { dxw, du }
}

/// Returns `(d xw, d U)`. Per-span `dU` contributions are summed in span order.
pub(crate) fn backward(
    tapes: &[GruTape],
    u: &Array2<f64>,
    dout: &Array2<f64>,
    spans: &[(usize, usize)],
    mask: &[f64],
    reverse: bool,
) -> (Array2<f64>, Array2<f64>) {
    let results: Vec<SpanBackward> = spans
        .par_iter()
        .zip(tapes.par_iter())
        .map(|(&(start, len), tape)| back_span(tape, u, dout, start, len, mask, reverse))
        .collect();
    let mut dxw = Array2::zeros((dout.nrows(), 3 * u.nrows()));
    let mut du = Array2::zeros(u.raw_dim());
    for (&(start, len), r) in spans.iter().zip(results) {
        dxw.slice_mut(s![start..start + len, ..]).assign(&r.dxw);
        du += &r.du;
    }
    (dxw, du)
}
