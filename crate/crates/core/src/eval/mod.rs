//! Mel-cepstral distortion, timing and the parameter/latency summary table.
//!
//! Per-frame distortion over cepstra `c_1..c_40` (the 0th coefficient is not
//! part of the feature):
//!
//! ```text
//! MCD = 10 / ln 10 * sqrt(2 * sum_d (c_d^target - c_d^converted)^2)   [dB]
//! ```

mod bench;

use std::fmt::Write as _;

use ndarray::ArrayView1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{MfccSequence, Waveform};
use crate::error::{Error, Result};
use crate::pipeline::Converter;

pub use bench::{bench, bench_convert, BenchReport, LatencyTable};

/// Cepstral order required by [`mcd`].
pub const MCD_ORDER: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// Frame `t` against frame `t`; lengths must match.
    #[default]
    Frame,
    /// Dynamic time warping with steps (1,0), (0,1), (1,1), each charged the
    /// local distance, averaged over the warping path length.
    Dtw,
}

impl std::str::FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame" => Ok(Alignment::Frame),
            "dtw" => Ok(Alignment::Dtw),
            other => Err(Error::Config(format!("unknown alignment {other:?}, expected frame or dtw"))),
        }
    }
}

fn frame_mcd(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let sq: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    10.0 / std::f64::consts::LN_10 * (2.0 * sq).sqrt()
}

fn check_order(m: &MfccSequence, which: &str) -> Result<()> {
    if m.order() != MCD_ORDER {
        return Err(Error::shape(format!("{which} cepstral order"), MCD_ORDER, m.order()));
    }
    if m.n_frames() == 0 {
        return Err(Error::Empty(format!("{which} cepstra")));
    }
    Ok(())
}

/// Mean per-frame mel-cepstral distortion in dB.
pub fn mcd(target: &MfccSequence, converted: &MfccSequence, align: Alignment) -> Result<f64> {
    check_order(target, "target")?;
    check_order(converted, "converted")?;
    let (a, b) = (target.frames(), converted.frames());
    match align {
        Alignment::Frame => {
            if a.nrows() != b.nrows() {
                return Err(Error::shape("frame-aligned MCD lengths", a.nrows(), b.nrows()));
            }
            let total: f64 = a
                .rows()
                .into_iter()
                .zip(b.rows())
                .map(|(x, y)| frame_mcd(x, y))
                .sum();
            Ok(total / a.nrows() as f64)
        }
        Alignment::Dtw => Ok(dtw_mean(a.nrows(), b.nrows(), |i, j| {
            frame_mcd(a.row(i), b.row(j))
        })),
    }
}

/// Minimum-cost monotone path from (0,0) to (n-1,m-1); returns cost / length
/// of that path. Ties prefer the diagonal, then the shorter path.
fn dtw_mean(n: usize, m: usize, dist: impl Fn(usize, usize) -> f64) -> f64 {
    // (cost, steps) per cell, one row at a time
    let mut prev = vec![(f64::INFINITY, 0usize); m];
    let mut cur = vec![(f64::INFINITY, 0usize); m];
    for i in 0..n {
        for j in 0..m {
            let d = dist(i, j);
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut cands = [(f64::INFINITY, 0usize); 3];
                if i > 0 && j > 0 {
                    cands[0] = prev[j - 1];
                }
                if i > 0 {
                    cands[1] = prev[j];
                }
                if j > 0 {
                    cands[2] = cur[j - 1];
                }
                cands
                    .into_iter()
                    .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
                    .expect("three candidates")
            };
            cur[j] = (best.0 + d, best.1 + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (cost, steps) = prev[m - 1];
    cost / steps as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McdReport {
    pub per_utterance: Vec<f64>,
    pub mean: f64,
    /// population standard deviation
    pub stddev: f64,
    pub n_utterances: usize,
}

impl McdReport {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("MCD values".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite("MCD values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self {
            n_utterances: values.len(),
            mean,
            stddev: var.sqrt(),
            per_utterance: values,
        })
    }

    /// One `id<TAB>mcd_db` line per utterance, then `mean` and `stddev`.
    pub fn to_tsv(&self, ids: &[String]) -> String {
        let mut out = String::from("utterance\tmcd_db\n");
        for (i, v) in self.per_utterance.iter().enumerate() {
            let id = ids.get(i).cloned().unwrap_or_else(|| i.to_string());
            let _ = writeln!(out, "{id}\t{v:.4}");
        }
        let _ = writeln!(out, "mean\t{:.4}", self.mean);
        let _ = writeln!(out, "stddev\t{:.4}", self.stddev);
        out
    }
}

/// MCD of each `(target, converted)` pair with mean and population stddev.
pub fn mcd_batch(pairs: &[(MfccSequence, MfccSequence)], align: Alignment) -> Result<McdReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("MCD pairs".into()));
    }
    let values = pairs
        .iter()
        .map(|(t, c)| mcd(t, c, align))
        .collect::<Result<Vec<_>>>()?;
    McdReport::from_values(values)
}

/// Distortion against a target rendering of the same content, for the
/// converted spectrogram and for the unconverted source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionReport {
    pub converted: McdReport,
    pub unconverted: McdReport,
}

/// Scores `converter` on `(source, target)` pairs. Converted cepstra come
/// straight from the converted spectrogram, so no vocoder is involved.
pub fn evaluate_conversion(
    converter: &dyn Converter,
    pairs: &[(Waveform, Waveform)],
    align: Alignment,
) -> Result<ConversionReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs".into()));
    }
    let analyzer = converter.analyzer();
    let scores = pairs
        .par_iter()
        .map(|(source, target)| {
            let target = analyzer.mfcc(target)?;
            let converted = analyzer.mfcc_from_spectrogram(&converter.convert_spectrogram(source)?);
            let source = analyzer.mfcc(source)?;
            Ok((mcd(&target, &converted, align)?, mcd(&target, &source, align)?))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (conv, unconv): (Vec<f64>, Vec<f64>) = scores.into_iter().unzip();
    Ok(ConversionReport {
        converted: McdReport::from_values(conv)?,
        unconverted: McdReport::from_values(unconv)?,
    })
}

/// `100 * (baseline - proposed) / baseline`, rounded to one decimal.
pub fn relative_reduction(baseline: f64, proposed: f64) -> Result<f64> {
    if !(baseline > 0.0) || !proposed.is_finite() {
        return Err(Error::Config(format!(
            "relative reduction needs a positive baseline, got {baseline}"
        )));
    }
    let pct = 100.0 * (baseline - proposed) / baseline;
    Ok((pct * 10.0).round() / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn seq(frames: Array2<f64>) -> MfccSequence {
        MfccSequence::new(frames, true)
    }

    fn ramp(t: usize, offset: f64) -> MfccSequence {
        seq(Array2::from_shape_fn((t, 40), |(i, d)| ((i * 7 + d * 3) % 11) as f64 * 0.1 + offset))
    }

    #[test]
    fn identical_sequences_have_zero_distortion() {
        let a = ramp(12, 0.0);
        assert_eq!(mcd(&a, &a, Alignment::Frame).unwrap(), 0.0);
        assert_eq!(mcd(&a, &a, Alignment::Dtw).unwrap(), 0.0);
    }

    #[test]
    fn unit_difference_in_one_dimension() {
        let a = ramp(5, 0.0);
        let mut b = a.frames().clone();
        b.column_mut(17).mapv_inplace(|v| v + 1.0);
        let expected = 10.0 / 10f64.ln() * 2f64.sqrt();
        let got = mcd(&a, &seq(b), Alignment::Frame).unwrap();
        assert!((got - expected).abs() < 1e-9);
        assert!((expected - 6.1419).abs() < 1e-4);
    }

    #[test]
    fn wrong_order_or_length_is_rejected() {
        let a = ramp(5, 0.0);
        let short = seq(Array2::zeros((5, 39)));
        assert!(mcd(&a, &short, Alignment::Frame).is_err());
        assert!(mcd(&a, &ramp(6, 0.0), Alignment::Frame).is_err());
        assert!(mcd(&a, &ramp(6, 0.0), Alignment::Dtw).is_ok());
    }

    #[test]
    fn dtw_recovers_a_repeated_frame() {
        // b is a with frame 2 duplicated: DTW pairs every frame with its copy
        let a = ramp(6, 0.0);
        let mut rows: Vec<_> = a.frames().rows().into_iter().map(|r| r.to_owned()).collect();
        rows.insert(2, rows[2].clone());
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        let b = seq(ndarray::stack(ndarray::Axis(0), &views).unwrap());
        assert_eq!(mcd(&a, &b, Alignment::Dtw).unwrap(), 0.0);
    }

    #[test]
    fn batch_uses_population_stddev() {
        let r = McdReport::from_values(vec![2.0, 5.0]).unwrap();
        assert_eq!(r.mean, 3.5);
        assert_eq!(r.stddev, 1.5);
        let one = McdReport::from_values(vec![4.25]).unwrap();
        assert_eq!((one.mean, one.stddev), (4.25, 0.0));
        assert!(mcd_batch(&[], Alignment::Frame).is_err());
    }

    #[test]
    fn table_reductions() {
        assert_eq!(relative_reduction(12.13, 6.73).unwrap(), 44.5);
        assert_eq!(relative_reduction(12_515_404.0, 7_268_623.0).unwrap(), 41.9);
        assert_eq!(relative_reduction(3.0, 3.0).unwrap(), 0.0);
        assert!(relative_reduction(0.0, 1.0).is_err());
        assert!(relative_reduction(-2.0, 1.0).is_err());
    }

    fn arb_seq(t: usize) -> impl Strategy<Value = MfccSequence> {
        prop::collection::vec(-5.0f64..5.0, t * 40)
            .prop_map(move |v| seq(Array2::from_shape_vec((t, 40), v).unwrap()))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn symmetric_and_homogeneous(a in arb_seq(6), b in arb_seq(6), k in 0.1f64..10.0) {
            let ab = mcd(&a, &b, Alignment::Frame).unwrap();
            let ba = mcd(&b, &a, Alignment::Frame).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
            let scaled = seq(a.frames() + &((b.frames() - a.frames()) * k));
            let ks = mcd(&a, &scaled, Alignment::Frame).unwrap();
            prop_assert!((ks - k * ab).abs() <= 1e-9 * ks.max(1.0));
        }

        #[test]
        fn dtw_never_exceeds_frame_alignment(a in arb_seq(7), b in arb_seq(7)) {
            let frame = mcd(&a, &b, Alignment::Frame).unwrap();
            let dtw = mcd(&a, &b, Alignment::Dtw).unwrap();
            prop_assert!(dtw <= frame + 1e-12);
            let dtw_ba = mcd(&b, &a, Alignment::Dtw).unwrap();
            prop_assert!((dtw - dtw_ba).abs() <= 1e-9 * dtw.max(1.0));
        }
    }
}
