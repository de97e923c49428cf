//! Gaussian mixture output head.
//!
//! A raw head row is laid out as `[weight logits | means | log stddevs]`:
//! `M` logits, then `M * D` means (component-major), then either `M * D`
//! log-stddevs (diagonal) or `M` log-stddevs (isotropic). Standard deviations
//! are `exp` of the raw value clamped to `[SIGMA_MIN, SIGMA_MAX]`.

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIGMA_MIN: f64 = 1e-3;
pub const SIGMA_MAX: f64 = 1e3;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Covariance {
    /// One standard deviation per component and output dimension.
    Diagonal,
    /// One standard deviation per component shared across dimensions.
    Isotropic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MdnLayout {
    pub mixtures: usize,
    pub dim: usize,
    pub covariance: Covariance,
}

impl MdnLayout {
    pub fn new(mixtures: usize, dim: usize, covariance: Covariance) -> Self {
        Self {
            mixtures,
            dim,
            covariance,
        }
    }

    fn sigma_cols(&self) -> usize {
        match self.covariance {
            Covariance::Diagonal => self.mixtures * self.dim,
            Covariance::Isotropic => self.mixtures,
        }
    }

    /// Width of the raw head row.
    pub fn width(&self) -> usize {
        self.mixtures + self.mixtures * self.dim + self.sigma_cols()
    }

    fn sigma_col(&self, j: usize, d: usize) -> usize {
        let base = self.mixtures + self.mixtures * self.dim;
        match self.covariance {
            Covariance::Diagonal => base + j * self.dim + d,
            Covariance::Isotropic => base + j,
        }
    }

    fn check(&self, raw: &Array2<f64>) -> Result<()> {
        if raw.ncols() != self.width() {
            return Err(Error::shape("mdn head width", self.width(), raw.ncols()));
        }
        Ok(())
    }
}

/// Per-frame mixture weights, means and standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct MdnParams {
    /// `T x M`, rows sum to one.
    pub weights: Array2<f64>,
    /// `T x M x D`
    pub means: Array3<f64>,
    /// `T x M x D`, always expanded per dimension.
    pub stddevs: Array3<f64>,
}

fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn log_softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let lse = log_sum_exp(logits.iter().copied());
    logits.mapv(|a| a - lse)
}

fn clamp_log_sigma(raw: f64) -> f64 {
    raw.clamp(SIGMA_MIN.ln(), SIGMA_MAX.ln())
}

pub fn split_head(raw: &Array2<f64>, layout: &MdnLayout) -> Result<MdnParams> {
    layout.check(raw)?;
    let (t_len, m, d) = (raw.nrows(), layout.mixtures, layout.dim);
    let mut weights = Array2::zeros((t_len, m));
    for (t, row) in raw.rows().into_iter().enumerate() {
        let lp = log_softmax(row.slice(s![..m]));
        weights.row_mut(t).assign(&lp.mapv(f64::exp));
    }
    let means = Array3::from_shape_fn((t_len, m, d), |(t, j, k)| raw[[t, m + j * d + k]]);
    let stddevs = Array3::from_shape_fn((t_len, m, d), |(t, j, k)| {
        clamp_log_sigma(raw[[t, layout.sigma_col(j, k)]]).exp()
    });
    Ok(MdnParams {
        weights,
        means,
        stddevs,
    })
}

impl MdnParams {
    pub fn n_frames(&self) -> usize {
        self.weights.nrows()
    }

    pub fn mixtures(&self) -> usize {
        self.weights.ncols()
    }

    pub fn dim(&self) -> usize {
        self.means.dim().2
    }

    fn check_targets(&self, x: &Array2<f64>) -> Result<()> {
        if x.dim() != (self.n_frames(), self.dim()) {
            return Err(Error::shape(
                "mdn targets",
                format!("{:?}", (self.n_frames(), self.dim())),
                format!("{:?}", x.dim()),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mdn targets".into()));
        }
        Ok(())
    }

    /// Per-frame `ln Pr(x_t)`, computed with log-sum-exp over components.
    pub fn log_pdf(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        self.check_targets(x)?;
        let (m, d) = (self.mixtures(), self.dim());
        Ok(Array1::from_shape_fn(self.n_frames(), |t| {
            let comps: Vec<f64> = (0..m)
                .map(|j| {
                    let mut lp = self.weights[[t, j]].ln();
                    for k in 0..d {
                        let sigma = self.stddevs[[t, j, k]];
                        let z = (x[[t, k]] - self.means[[t, j, k]]) / sigma;
                        lp -= 0.5 * LN_2PI + sigma.ln() + 0.5 * z * z;
                    }
                    lp
                })
                .collect();
            log_sum_exp(comps.into_iter())
        }))
    }

    pub fn pdf(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.log_pdf(x)?.mapv(f64::exp))
    }

    /// Sum of per-frame negative log likelihoods.
    pub fn nll(&self, x: &Array2<f64>) -> Result<f64> {
        Ok(-self.log_pdf(x)?.sum())
    }

    /// Mean of the heaviest component per frame; ties go to the lower index.
    pub fn point_estimate(&self) -> Array2<f64> {
        let (t_len, m, d) = self.means.dim();
        let mut out = Array2::zeros((t_len, d));
        for t in 0..t_len {
            let mut best = 0;
            for j in 1..m {
                if self.weights[[t, j]] > self.weights[[t, best]] {
                    best = j;
                }
            }
            out.row_mut(t).assign(&self.means.slice(s![t, best, ..]));
        }
        out
    }
}

pub fn mdn_pdf(p: &MdnParams, x: &Array2<f64>) -> Result<Array1<f64>> {
    p.pdf(x)
}

pub fn point_estimate(p: &MdnParams) -> Array2<f64> {
    p.point_estimate()
}

/// Loss and its gradient with respect to the raw head outputs.
#[derive(Debug, Clone)]
pub struct NllOutput {
    pub loss: f64,
    pub grad: Array2<f64>,
}

/// Negative log likelihood summed over frames, with the exact gradient
/// w.r.t. the raw head matrix.
pub fn mdn_nll(raw: &Array2<f64>, layout: &MdnLayout, x: &Array2<f64>) -> Result<NllOutput> {
    mdn_nll_weighted(raw, layout, x, None)
}

/// As [`mdn_nll`], with an optional per-frame weight (0 excludes a frame
/// entirely, including from the gradient).
pub fn mdn_nll_weighted(
    raw: &Array2<f64>,
    layout: &MdnLayout,
    x: &Array2<f64>,
    frame_weights: Option<&[f64]>,
) -> Result<NllOutput> {
    layout.check(raw)?;
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mdn head output".into()));
    }
    if x.dim() != (raw.nrows(), layout.dim) {
        return Err(Error::shape(
            "mdn targets",
            format!("{:?}", (raw.nrows(), layout.dim)),
            format!("{:?}", x.dim()),
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mdn targets".into()));
    }
    if let Some(w) = frame_weights {
        if w.len() != raw.nrows() {
            return Err(Error::shape("mdn frame weights", raw.nrows(), w.len()));
        }
    }
    let (m, d) = (layout.mixtures, layout.dim);
    let (lo, hi) = (SIGMA_MIN.ln(), SIGMA_MAX.ln());
    let mut grad = Array2::zeros(raw.raw_dim());
    let mut loss = 0.0;
    let mut comp = vec![0.0; m];
    for t in 0..raw.nrows() {
        let w = frame_weights.map_or(1.0, |w| w[t]);
        if w == 0.0 {
            continue;
        }
        let row = raw.row(t);
        let log_pi = log_softmax(row.slice(s![..m]));
        for (j, c) in comp.iter_mut().enumerate() {
            let mut lp = log_pi[j];
            for k in 0..d {
                let log_sigma = clamp_log_sigma(row[layout.sigma_col(j, k)]);
                let z = (x[[t, k]] - row[m + j * d + k]) * (-log_sigma).exp();
                lp -= 0.5 * LN_2PI + log_sigma + 0.5 * z * z;
            }
            *c = lp;
        }
        let lse = log_sum_exp(comp.iter().copied());
        loss -= w * lse;
        let mut g = grad.row_mut(t);
        for j in 0..m {
            let resp = (comp[j] - lse).exp();
            g[j] = w * (log_pi[j].exp() - resp);
            for k in 0..d {
                let sc = layout.sigma_col(j, k);
                let raw_sigma = row[sc];
                let inv_sigma = (-clamp_log_sigma(raw_sigma)).exp();
                let diff = x[[t, k]] - row[m + j * d + k];
                let z = diff * inv_sigma;
                g[m + j * d + k] = -w * resp * diff * inv_sigma * inv_sigma;
                if raw_sigma > lo && raw_sigma < hi {
                    g[sc] += w * resp * (1.0 - z * z);
                }
            }
        }
    }
    Ok(NllOutput { loss, grad })
}

/// `ln N(x | mu, sigma)` for a scalar Gaussian; exposed for bounds checks.
pub fn gaussian_log_density(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * (2.0 * PI).ln() - sigma.ln() - 0.5 * z * z
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_raw(rng: &mut ChaCha8Rng, t: usize, layout: &MdnLayout) -> Array2<f64> {
        Array2::from_shape_fn((t, layout.width()), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_row_gives_uniform_weights_unit_sigma() {
        let layout = MdnLayout::new(2, 1, Covariance::Diagonal);
        let p = split_head(&Array2::zeros((1, 6)), &layout).unwrap();
        assert_eq!(p.weights, array![[0.5, 0.5]]);
        assert!(p.means.iter().all(|&v| v == 0.0));
        assert!(p.stddevs.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn softmax_of_ln3_and_zero() {
        let layout = MdnLayout::new(2, 1, Covariance::Diagonal);
        let raw = array![[3f64.ln(), 0.0, 0.0, 0.0, 0.0, 0.0]];
        let p = split_head(&raw, &layout).unwrap();
        assert_abs_diff_eq!(p.weights[[0, 0]], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(p.weights[[0, 1]], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn logit_shift_invariance() {
        let layout = MdnLayout::new(3, 2, Covariance::Diagonal);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw = random_raw(&mut rng, 4, &layout);
        let mut shifted = raw.clone();
        shifted.slice_mut(s![.., ..3]).mapv_inplace(|v| v + 7.5);
        let a = split_head(&raw, &layout).unwrap();
        let b = split_head(&shifted, &layout).unwrap();
        for (x, y) in a.weights.iter().zip(b.weights.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
    }

    #[test]
    fn wrong_width_is_rejected() {
        let layout = MdnLayout::new(2, 3, Covariance::Diagonal);
        assert!(split_head(&Array2::zeros((1, 5)), &layout).is_err());
    }

    #[test]
    fn stddevs_are_clamped() {
        let layout = MdnLayout::new(1, 1, Covariance::Diagonal);
        let p = split_head(&array![[0.0, 0.0, -50.0], [0.0, 0.0, 50.0]], &layout).unwrap();
        assert_abs_diff_eq!(p.stddevs[[0, 0, 0]], SIGMA_MIN, epsilon = 1e-15);
        assert_abs_diff_eq!(p.stddevs[[1, 0, 0]], SIGMA_MAX, epsilon = 1e-9);
    }

    #[test]
    fn standard_normal_at_mean() {
        let layout = MdnLayout::new(1, 1, Covariance::Diagonal);
        let p = split_head(&Array2::zeros((1, 3)), &layout).unwrap();
        let v = p.pdf(&array![[0.0]]).unwrap()[0];
        assert_abs_diff_eq!(v, 0.398_942_280_401_432_7, epsilon = 1e-15);
    }

    #[test]
    fn identical_components_ignore_weights() {
        let layout = MdnLayout::new(2, 1, Covariance::Diagonal);
        let raw = array![[1.3, -0.4, 0.2, 0.2, 0.1, 0.1]];
        let single = MdnLayout::new(1, 1, Covariance::Diagonal);
        let p2 = split_head(&raw, &layout).unwrap();
        let p1 = split_head(&array![[0.0, 0.2, 0.1]], &single).unwrap();
        let x = array![[0.7]];
        assert_abs_diff_eq!(p2.pdf(&x).unwrap()[0], p1.pdf(&x).unwrap()[0], epsilon = 1e-15);
    }

    #[test]
    fn nll_at_mean_is_ln_two_pi() {
        let layout = MdnLayout::new(1, 2, Covariance::Diagonal);
        let raw = array![[0.0, 0.3, -0.2, 0.0, 0.0]];
        let out = mdn_nll(&raw, &layout, &array![[0.3, -0.2]]).unwrap();
        assert_abs_diff_eq!(out.loss, (2.0 * PI).ln(), epsilon = 1e-12);
    }

    #[test]
    fn nll_sums_over_frames() {
        let layout = MdnLayout::new(2, 3, Covariance::Diagonal);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let raw1 = random_raw(&mut rng, 1, &layout);
        let x1 = Array2::from_shape_fn((1, 3), |_| rng.random_range(-1.0..1.0));
        let raw2 = ndarray::concatenate![ndarray::Axis(0), raw1, raw1];
        let x2 = ndarray::concatenate![ndarray::Axis(0), x1, x1];
        let one = mdn_nll(&raw1, &layout, &x1).unwrap().loss;
        let two = mdn_nll(&raw2, &layout, &x2).unwrap().loss;
        assert_eq!(two, 2.0 * one);
    }

    #[test]
    fn zero_weight_frames_are_excluded() {
        let layout = MdnLayout::new(2, 2, Covariance::Diagonal);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let raw = random_raw(&mut rng, 3, &layout);
        let x = Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0));
        let out = mdn_nll_weighted(&raw, &layout, &x, Some(&[1.0, 0.0, 1.0])).unwrap();
        assert!(out.grad.row(1).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_target_is_an_error() {
        let layout = MdnLayout::new(1, 1, Covariance::Diagonal);
        let err = mdn_nll(&Array2::zeros((1, 3)), &layout, &array![[f64::NAN]]);
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    fn fd_check(layout: MdnLayout, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = random_raw(&mut rng, 3, &layout);
        let x = Array2::from_shape_fn((3, layout.dim), |_| rng.random_range(-1.5..1.5));
        let out = mdn_nll(&raw, &layout, &x).unwrap();
        let h = 1e-5;
        for idx in ndarray::indices(raw.dim()) {
            let mut plus = raw.clone();
            plus[idx] += h;
            let mut minus = raw.clone();
            minus[idx] -= h;
            let fd = (mdn_nll(&plus, &layout, &x).unwrap().loss
                - mdn_nll(&minus, &layout, &x).unwrap().loss)
                / (2.0 * h);
            let a = out.grad[idx];
            let rel = (a - fd).abs() / (a.abs() + 1e-8);
            assert!(rel < 1e-6, "{idx:?}: analytic {a} fd {fd} rel {rel}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        fd_check(MdnLayout::new(3, 2, Covariance::Diagonal), 1);
        fd_check(MdnLayout::new(2, 3, Covariance::Isotropic), 2);
    }

    #[test]
    fn point_estimate_rules() {
        let layout = MdnLayout::new(2, 1, Covariance::Diagonal);
        let heavy_second = array![[0.2f64.ln(), 0.8f64.ln(), 1.0, 2.0, 0.0, 0.0]];
        let tie = array![[0.0, 0.0, 1.0, 2.0, 0.0, 0.0]];
        let p = split_head(&heavy_second, &layout).unwrap();
        assert_eq!(p.point_estimate(), array![[2.0]]);
        let p = split_head(&tie, &layout).unwrap();
        assert_eq!(p.point_estimate(), array![[1.0]]);
        let single = MdnLayout::new(1, 2, Covariance::Diagonal);
        let p = split_head(&array![[0.4, 5.0, -1.0, 0.0, 0.0]], &single).unwrap();
        assert_eq!(p.point_estimate(), array![[5.0, -1.0]]);
    }

    #[test]
    fn isotropic_shares_sigma() {
        let layout = MdnLayout::new(2, 3, Covariance::Isotropic);
        assert_eq!(layout.width(), 2 + 6 + 2);
        let mut raw = Array2::zeros((1, layout.width()));
        raw[[0, 8]] = 0.5;
        let p = split_head(&raw, &layout).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(p.stddevs[[0, 0, k]], 0.5f64.exp(), epsilon = 1e-15);
            assert_eq!(p.stddevs[[0, 1, k]], 1.0);
        }
    }
}
