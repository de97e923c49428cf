//! Signal-processing front end: framing, STFT magnitudes, mel-cepstra,
//! per-utterance cepstral normalization and Griffin-Lim phase recovery.
//!
//! Framing does not center or pad the signal: frame `t` covers samples
//! `[t * hop, t * hop + frame_len)`, so an utterance of `n` samples yields
//! `1 + (n - frame_len) / hop` frames. Each frame is Hann-windowed and
//! zero-padded to `fft_size` before the transform.

mod wav;

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use wav::{read_wav, write_wav};

/// Analysis settings shared by every feature extractor in the toolkit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub frame_hop: usize,
    pub fft_size: usize,
    pub mel_channels: usize,
    pub mfcc_order: usize,
    pub griffin_lim_iters: usize,
    /// Floor applied to mel energies before the logarithm.
    pub log_floor: f64,
    /// Magnitude unit of the compressed domain `ln(1 + |X| / reference)`.
    /// Magnitudes well above it are compressed logarithmically.
    pub magnitude_reference: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_len: 400,
            frame_hop: 160,
            fft_size: 512,
            mel_channels: 80,
            mfcc_order: 40,
            griffin_lim_iters: 60,
            log_floor: 1e-10,
            magnitude_reference: 1e-6,
        }
    }
}

impl DspConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sample_rate", self.sample_rate as usize),
            ("frame_len", self.frame_len),
            ("frame_hop", self.frame_hop),
            ("fft_size", self.fft_size),
            ("mel_channels", self.mel_channels),
            ("mfcc_order", self.mfcc_order),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.frame_len > self.fft_size {
            return Err(Error::Config(format!(
                "frame_len {} exceeds fft_size {}",
                self.frame_len, self.fft_size
            )));
        }
        if self.mfcc_order > self.mel_channels {
            return Err(Error::Config(format!(
                "mfcc_order {} exceeds mel_channels {}",
                self.mfcc_order, self.mel_channels
            )));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        if !(self.magnitude_reference > 0.0 && self.magnitude_reference.is_finite()) {
            return Err(Error::Config("magnitude_reference must be positive".into()));
        }
        Ok(())
    }

    /// Number of one-sided frequency bins.
    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `len` samples, `None` if shorter than a frame.
    pub fn n_frames(&self, len: usize) -> Option<usize> {
        (len >= self.frame_len).then(|| 1 + (len - self.frame_len) / self.frame_hop)
    }

    /// Length of the signal reconstructed from `frames` analysis frames.
    pub fn signal_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            self.frame_len + (frames - 1) * self.frame_hop
        }
    }
}

/// Mono PCM audio with amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Snaps every sample onto the signed 16-bit PCM grid, so the in-memory
    /// waveform matches what a WAV round trip would return.
    pub fn quantize_pcm16(&self) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|&s| f64::from(wav::to_pcm16(s)) / 32768.0)
            .collect();
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

/// Magnitude STFT, `T x (fft_size / 2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frames: Array2<f64>,
    frame_hop_s: f64,
    fft_size: usize,
}

impl Spectrogram {
    pub fn new(frames: Array2<f64>, frame_hop_s: f64, fft_size: usize) -> Result<Self> {
        if frames.ncols() != fft_size / 2 + 1 {
            return Err(Error::shape(
                "spectrogram bins",
                fft_size / 2 + 1,
                frames.ncols(),
            ));
        }
        if frames.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite(
                "spectrogram magnitudes (must be finite and non-negative)".into(),
            ));
        }
        Ok(Self {
            frames,
            frame_hop_s,
            fft_size,
        })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn frame_hop_s(&self) -> f64 {
        self.frame_hop_s
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    /// `ln(1 + |X| / r)` with `r = cfg.magnitude_reference`, the domain the
    /// mixture heads are trained in.
    pub fn to_log(&self, cfg: &DspConfig) -> Array2<f64> {
        let r = cfg.magnitude_reference;
        self.frames.mapv(|m| (m / r).ln_1p())
    }

    /// Inverse of [`Spectrogram::to_log`]; negative magnitudes are clipped to zero.
    pub fn from_log(log_frames: &Array2<f64>, cfg: &DspConfig) -> Result<Self> {
        let r = cfg.magnitude_reference;
        let frames = log_frames.mapv(|v| (r * v.exp_m1()).max(0.0));
        Self::new(
            frames,
            cfg.frame_hop as f64 / cfg.sample_rate as f64,
            cfg.fft_size,
        )
    }
}

/// Frame-synchronous cepstra `c_1..c_D` (the zeroth coefficient is dropped).
#[derive(Debug, Clone, PartialEq)]
pub struct MfccSequence {
    frames: Array2<f64>,
    normalized: bool,
}

impl MfccSequence {
    pub fn new(frames: Array2<f64>, normalized: bool) -> Self {
        Self { frames, normalized }
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }

    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn order(&self) -> usize {
        self.frames.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

/// Precomputed window, FFT plans, mel filterbank and DCT basis for one
/// [`DspConfig`]. Cheap to share across threads.
#[derive(Clone)]
pub struct Analyzer {
    cfg: DspConfig,
    window: Vec<f64>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
    /// `bins x mel_channels`
    mel: Array2<f64>,
    /// `mel_channels x mfcc_order`, orthonormal DCT-II rows 1..=order
    dct: Array2<f64>,
}

impl std::fmt::Debug for Analyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Analyzer").field("cfg", &self.cfg).finish()
    }
}

impl Analyzer {
    pub fn new(cfg: &DspConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = RealFftPlanner::<f64>::new();
        Ok(Self {
            cfg: cfg.clone(),
            window: hann(cfg.frame_len),
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
            mel: mel_filterbank(cfg),
            dct: dct_basis(cfg.mel_channels, cfg.mfcc_order),
        })
    }

    pub fn config(&self) -> &DspConfig {
        &self.cfg
    }

    pub fn mel_filterbank(&self) -> &Array2<f64> {
        &self.mel
    }

    fn check_rate(&self, w: &Waveform) -> Result<()> {
        if w.sample_rate() != self.cfg.sample_rate {
            return Err(Error::Config(format!(
                "waveform sample rate {} Hz does not match analysis rate {} Hz",
                w.sample_rate(),
                self.cfg.sample_rate
            )));
        }
        Ok(())
    }

    fn complex_stft(&self, samples: &[f64]) -> Result<Array2<Complex<f64>>> {
        let cfg = &self.cfg;
        let n_frames = cfg.n_frames(samples.len()).ok_or(Error::TooShort {
            samples: samples.len(),
            frame_len: cfg.frame_len,
        })?;
        let mut out = Array2::zeros((n_frames, cfg.n_bins()));
        let mut buf = self.forward.make_input_vec();
        let mut spec = self.forward.make_output_vec();
        let mut scratch = self.forward.make_scratch_vec();
        for (t, mut row) in out.rows_mut().into_iter().enumerate() {
            let start = t * cfg.frame_hop;
            buf.iter_mut().for_each(|b| *b = 0.0);
            for (n, (b, w)) in buf.iter_mut().zip(&self.window).enumerate() {
                *b = samples[start + n] * w;
            }
            self.forward
                .process_with_scratch(&mut buf, &mut spec, &mut scratch)
                .expect("fft buffer sizes are fixed by the plan");
            row.iter_mut().zip(&spec).for_each(|(o, s)| *o = *s);
        }
        Ok(out)
    }

    /// Least-squares inverse STFT (weighted overlap-add normalised by the
    /// summed squared window).
    fn istft(&self, frames: &Array2<Complex<f64>>) -> Vec<f64> {
        let cfg = &self.cfg;
        let len = cfg.signal_len(frames.nrows());
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut spec = self.inverse.make_input_vec();
        let mut buf = self.inverse.make_output_vec();
        let mut scratch = self.inverse.make_scratch_vec();
        let scale = 1.0 / cfg.fft_size as f64;
        let last = spec.len() - 1;
        for (t, row) in frames.rows().into_iter().enumerate() {
            spec.iter_mut().zip(row.iter()).for_each(|(s, r)| *s = *r);
            spec[0].im = 0.0;
            if cfg.fft_size.is_multiple_of(2) {
                spec[last].im = 0.0;
            }
            self.inverse
                .process_with_scratch(&mut spec, &mut buf, &mut scratch)
                .expect("fft buffer sizes are fixed by the plan");
            let start = t * cfg.frame_hop;
            for (n, w) in self.window.iter().enumerate() {
                out[start + n] += buf[n] * scale * w;
                norm[start + n] += w * w;
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            *o = if *n > 1e-10 { *o / n } else { 0.0 };
        }
        out
    }

    pub fn stft(&self, w: &Waveform) -> Result<Spectrogram> {
        self.check_rate(w)?;
        let frames = self.complex_stft(w.samples())?.mapv(|c| c.norm());
        Spectrogram::new(
            frames,
            self.cfg.frame_hop as f64 / self.cfg.sample_rate as f64,
            self.cfg.fft_size,
        )
    }

    pub fn mfcc(&self, w: &Waveform) -> Result<MfccSequence> {
        Ok(self.mfcc_from_spectrogram(&self.stft(w)?))
    }

    /// Mel-cepstra of an existing magnitude spectrogram. Used to score
    /// converted spectrograms without running a vocoder.
    pub fn mfcc_from_spectrogram(&self, s: &Spectrogram) -> MfccSequence {
        let floor = self.cfg.log_floor;
        let log_mel = s.frames().dot(&self.mel).mapv(|e| e.max(floor).ln());
        MfccSequence::new(log_mel.dot(&self.dct), false)
    }

    pub fn griffin_lim(&self, s: &Spectrogram) -> Result<Waveform> {
        Ok(self.griffin_lim_traced(s, self.cfg.griffin_lim_iters)?.0)
    }

    /// Runs `iters` Griffin-Lim iterations from zero phase and also returns the
    /// magnitude error of every intermediate signal (`iters + 1` values, see
    /// [`Analyzer::magnitude_error`]).
    pub fn griffin_lim_traced(&self, s: &Spectrogram, iters: usize) -> Result<(Waveform, Vec<f64>)> {
        if s.fft_size() != self.cfg.fft_size {
            return Err(Error::shape("griffin-lim fft size", self.cfg.fft_size, s.fft_size()));
        }
        let target = s.frames();
        let mut spec = target.mapv(|m| Complex::new(m, 0.0));
        let mut signal = self.istft(&spec);
        let mut trace = Vec::with_capacity(iters + 1);
        let record = |signal: &[f64], trace: &mut Vec<f64>| -> Result<Array2<Complex<f64>>> {
            let rebuilt = self.complex_stft(signal)?;
            trace.push(self.magnitude_error(target, &rebuilt.mapv(|c| c.norm())));
            Ok(rebuilt)
        };
        let mut rebuilt = record(&signal, &mut trace)?;
        for _ in 0..iters {
            ndarray::Zip::from(&mut spec)
                .and(target)
                .and(&rebuilt)
                .for_each(|o, &m, r| {
                    let phase = if r.norm() > 0.0 { r.arg() } else { 0.0 };
                    *o = Complex::from_polar(m, phase);
                });
            signal = self.istft(&spec);
            rebuilt = record(&signal, &mut trace)?;
        }
        Ok((Waveform::new(signal, self.cfg.sample_rate)?, trace))
    }

    /// Relative L2 distance between two one-sided magnitude spectrograms,
    /// measured in two-sided energy (interior bins counted twice).
    pub fn magnitude_error(&self, target: &Array2<f64>, achieved: &Array2<f64>) -> f64 {
        let last = target.ncols() - 1;
        let even = self.cfg.fft_size.is_multiple_of(2);
        let weight = |f: usize| if f == 0 || (even && f == last) { 1.0 } else { 2.0 };
        let (mut num, mut den) = (0.0, 0.0);
        for (t_row, a_row) in target.rows().into_iter().zip(achieved.rows()) {
            for (f, (t, a)) in t_row.iter().zip(a_row.iter()).enumerate() {
                num += weight(f) * (t - a).powi(2);
                den += weight(f) * t * t;
            }
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }
}

/// Periodic Hann window.
fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the HTK mel scale between 0 Hz and
/// Nyquist, evaluated at each bin's centre frequency. Unnormalised peaks of 1.
fn mel_filterbank(cfg: &DspConfig) -> Array2<f64> {
    let n_bins = cfg.n_bins();
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..cfg.mel_channels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (cfg.mel_channels + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((n_bins, cfg.mel_channels));
    for f in 0..n_bins {
        let hz = f as f64 * cfg.sample_rate as f64 / cfg.fft_size as f64;
        for m in 0..cfg.mel_channels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let rise = (hz - lo) / (mid - lo);
            let fall = (hi - hz) / (hi - mid);
            fb[[f, m]] = rise.min(fall).max(0.0);
        }
    }
    fb
}

/// Columns `k = 1..=order` of the orthonormal DCT-II over `n` inputs.
fn dct_basis(n: usize, order: usize) -> Array2<f64> {
    let scale = (2.0 / n as f64).sqrt();
    Array2::from_shape_fn((n, order), |(m, k)| {
        scale * (PI * (k + 1) as f64 * (m as f64 + 0.5) / n as f64).cos()
    })
}

pub fn stft(w: &Waveform, cfg: &DspConfig) -> Result<Spectrogram> {
    Analyzer::new(cfg)?.stft(w)
}

pub fn mfcc(w: &Waveform, cfg: &DspConfig) -> Result<MfccSequence> {
    Analyzer::new(cfg)?.mfcc(w)
}

pub fn griffin_lim(s: &Spectrogram, cfg: &DspConfig) -> Result<Waveform> {
    Analyzer::new(cfg)?.griffin_lim(s)
}

const VARIANCE_FLOOR: f64 = 1e-12;

/// Per-utterance, per-dimension mean and variance normalisation using the
/// population variance. Columns whose variance falls below the floor are set
/// to zero.
pub fn cmvn(m: &MfccSequence) -> Result<MfccSequence> {
    let x = m.frames();
    let t = x.nrows();
    if t < 2 {
        return Err(Error::shape("cmvn frame count", ">= 2", t));
    }
    let mean: Array1<f64> = x.mean_axis(Axis(0)).expect("t >= 2");
    let mut out = x - &mean;
    for mut col in out.columns_mut() {
        let var = col.iter().map(|v| v * v).sum::<f64>() / t as f64;
        if var < VARIANCE_FLOOR {
            col.fill(0.0);
        } else {
            let inv = 1.0 / var.sqrt();
            col.mapv_inplace(|v| v * inv);
        }
    }
    Ok(MfccSequence::new(out, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sine(freq: f64, seconds: f64, amp: f64) -> Waveform {
        let n = (16_000.0 * seconds) as usize;
        let s = (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / 16_000.0).sin())
            .collect();
        Waveform::new(s, 16_000).unwrap()
    }

    #[test]
    fn framing_count_for_two_seconds() {
        let s = stft(&sine(440.0, 2.0, 0.5), &DspConfig::default()).unwrap();
        assert_eq!(s.frames().dim(), (198, 257));
    }

    #[test]
    fn too_short_is_an_error() {
        let w = Waveform::new(vec![0.0; 399], 16_000).unwrap();
        assert!(matches!(
            stft(&w, &DspConfig::default()),
            Err(Error::TooShort { samples: 399, .. })
        ));
    }

    #[test]
    fn sine_peaks_at_expected_bin_and_matches_direct_dft() {
        let cfg = DspConfig::default();
        let w = sine(1000.0, 0.2, 0.8);
        let s = stft(&w, &cfg).unwrap();
        for row in s.frames().rows() {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, 32);
        }
        // direct O(N^2) DFT of frame 3
        let win = hann(cfg.frame_len);
        let start = 3 * cfg.frame_hop;
        for k in [0usize, 10, 31, 32, 33, 100, 256] {
            let (mut re, mut im) = (0.0, 0.0);
            for n in 0..cfg.frame_len {
                let v = w.samples()[start + n] * win[n];
                let ang = -2.0 * PI * (k * n) as f64 / cfg.fft_size as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            assert_abs_diff_eq!(s.frames()[[3, k]], re.hypot(im), epsilon = 1e-9);
        }
    }

    #[test]
    fn silence_gives_zero_spectrogram() {
        let w = Waveform::new(vec![0.0; 4000], 16_000).unwrap();
        let s = stft(&w, &DspConfig::default()).unwrap();
        assert!(s.frames().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn silence_mfcc_is_dct_of_constant_log_floor() {
        let cfg = DspConfig::default();
        let w = Waveform::new(vec![0.0; 4000], 16_000).unwrap();
        let m = mfcc(&w, &cfg).unwrap();
        // independent evaluation: DCT-II (orthonormal) of a constant vector
        let c = cfg.log_floor.ln();
        let n = cfg.mel_channels as f64;
        for k in 1..=cfg.mfcc_order {
            let expect: f64 = (0..cfg.mel_channels)
                .map(|i| (2.0 / n).sqrt() * c * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .sum();
            for t in 0..m.n_frames() {
                assert_abs_diff_eq!(m.frames()[[t, k - 1]], expect, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn mfcc_is_deterministic_and_shaped() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let noise: Vec<f64> = (0..16_000).map(|_| rng.random_range(-0.5..0.5)).collect();
        let w = Waveform::new(noise, 16_000).unwrap();
        let a = mfcc(&w, &DspConfig::default()).unwrap();
        let b = mfcc(&w, &DspConfig::default()).unwrap();
        assert_eq!(a.frames().dim(), (98, 40));
        assert_eq!(a, b);
    }

    #[test]
    fn mfcc_shift_by_one_hop_shifts_frames() {
        let cfg = DspConfig::default();
        let w = sine(330.0, 0.5, 0.3);
        let shifted = Waveform::new(w.samples()[cfg.frame_hop..].to_vec(), 16_000).unwrap();
        let a = mfcc(&w, &cfg).unwrap();
        let b = mfcc(&shifted, &cfg).unwrap();
        for t in 0..b.n_frames() {
            assert_eq!(a.frames().row(t + 1), b.frames().row(t));
        }
    }

    #[test]
    fn cmvn_cases() {
        let x = ndarray::array![[1.0, 5.0], [3.0, 5.0]];
        let n = cmvn(&MfccSequence::new(x, false)).unwrap();
        assert_eq!(n.frames(), &ndarray::array![[-1.0, 0.0], [1.0, 0.0]]);
        assert!(n.is_normalized());
        let single = MfccSequence::new(ndarray::array![[1.0, 2.0]], false);
        assert!(cmvn(&single).is_err());
    }

    #[test]
    fn griffin_lim_zero_iterations_and_silence() {
        let cfg = DspConfig::default();
        let an = Analyzer::new(&cfg).unwrap();
        let s = an.stft(&sine(440.0, 0.3, 0.5)).unwrap();
        let (w, trace) = an.griffin_lim_traced(&s, 0).unwrap();
        assert_eq!(w.len(), cfg.signal_len(s.n_frames()));
        assert!(w.samples().iter().all(|v| v.is_finite()));
        assert_eq!(trace.len(), 1);

        let zero = Spectrogram::new(Array2::zeros((20, 257)), 0.01, 512).unwrap();
        let w = an.griffin_lim(&zero).unwrap();
        assert!(w.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn griffin_lim_reconstructs_a_sine() {
        let cfg = DspConfig::default();
        let an = Analyzer::new(&cfg).unwrap();
        let s = an.stft(&sine(440.0, 1.0, 0.5)).unwrap();
        let (w, trace) = an.griffin_lim_traced(&s, 60).unwrap();
        let again = an.stft(&w).unwrap();
        let err = an.magnitude_error(s.frames(), again.frames());
        assert!(err < 0.1, "relative error {err}");
        assert_abs_diff_eq!(err, *trace.last().unwrap(), epsilon = 1e-12);
        for pair in trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "trace not monotone: {trace:?}");
        }
    }

    #[test]
    fn log_domain_round_trip() {
        let cfg = DspConfig::default();
        let s = stft(&sine(700.0, 0.1, 0.4), &cfg).unwrap();
        for r in [1.0, 1e-4] {
            let cfg = DspConfig {
                magnitude_reference: r,
                ..cfg.clone()
            };
            let back = Spectrogram::from_log(&s.to_log(&cfg), &cfg).unwrap();
            for (a, b) in s.frames().iter().zip(back.frames()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12 * (1.0 + a));
            }
        }
    }

    #[test]
    fn config_validation() {
        let bad = DspConfig {
            frame_len: 600,
            ..DspConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = DspConfig {
            mfcc_order: 81,
            ..DspConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
