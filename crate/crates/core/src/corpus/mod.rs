//! Synthetic multi-speaker corpus and WAV manifest ingestion.
//!
//! Every utterance index has one phone sequence that all speakers render, so
//! parallel references exist for evaluation even though training never pairs
//! them. A rendering is a glottal pulse train plus aspiration noise, passed
//! through a cascade of second-order formant resonators (scaled per speaker),
//! then given the speaker's spectral tilt.

mod manifest;

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use realfft::num_complex::Complex;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{write_wav, DspConfig, Waveform};
use crate::error::{Error, Result};
use crate::seed::mix_seed;

pub use manifest::{load_labels, load_manifest, write_manifest, Corpus, Utterance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPhone {
    pub id: usize,
    pub formant_centers: Vec<f64>,
    pub bandwidths: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeakerRole {
    /// Multi-speaker pool for the recognizer and the distillation pairs.
    Train,
    /// Held-out conversion source.
    Source,
    /// The conversion target.
    Target,
}

impl SpeakerRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            SpeakerRole::Train => "train",
            SpeakerRole::Source => "source",
            SpeakerRole::Target => "target",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpeaker {
    pub id: String,
    pub role: SpeakerRole,
    pub formant_scale: f64,
    pub pitch_hz: f64,
    /// dB per octave, zero or negative
    pub spectral_tilt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub phones: Vec<SyntheticPhone>,
    pub speakers: Vec<SyntheticSpeaker>,
    pub utterances_per_speaker: usize,
    pub utterance_seconds: f64,
    pub seed: u64,
    pub sample_rate: u32,
    /// Phone durations are drawn uniformly from this range.
    pub min_phone_ms: f64,
    pub max_phone_ms: f64,
    /// Aspiration noise amplitude relative to the pulse train.
    pub noise_level: f64,
}

fn phone(id: usize, formants: [f64; 3], bandwidths: [f64; 3]) -> SyntheticPhone {
    SyntheticPhone {
        id,
        formant_centers: formants.to_vec(),
        bandwidths: bandwidths.to_vec(),
    }
}

fn speaker(id: &str, role: SpeakerRole, scale: f64, pitch: f64, tilt: f64) -> SyntheticSpeaker {
    SyntheticSpeaker {
        id: id.into(),
        role,
        formant_scale: scale,
        pitch_hz: pitch,
        spectral_tilt: tilt,
    }
}

impl Default for CorpusSpec {
    /// 8 vowel-like phones, 4 training speakers, one source and one target,
    /// 20 utterances of 2 s each.
    fn default() -> Self {
        let bw = [80.0, 100.0, 140.0];
        use SpeakerRole::*;
        Self {
            phones: vec![
                phone(0, [280.0, 2250.0, 2900.0], bw),
                phone(1, [450.0, 1950.0, 2600.0], bw),
                phone(2, [700.0, 1200.0, 2600.0], bw),
                phone(3, [500.0, 850.0, 2500.0], bw),
                phone(4, [320.0, 800.0, 2300.0], bw),
                phone(5, [650.0, 1700.0, 2450.0], bw),
                phone(6, [480.0, 1350.0, 1700.0], bw),
                phone(7, [250.0, 1000.0, 2200.0], [120.0, 160.0, 200.0]),
            ],
            speakers: vec![
                speaker("spk1", Train, 0.85, 110.0, -6.0),
                speaker("spk2", Train, 1.15, 210.0, -4.0),
                speaker("spk3", Train, 0.95, 135.0, -8.0),
                speaker("spk4", Train, 1.25, 240.0, -3.0),
                speaker("src1", Source, 0.9, 120.0, -7.0),
                speaker("tgt1", Target, 1.2, 225.0, -3.0),
            ],
            utterances_per_speaker: 20,
            utterance_seconds: 2.0,
            seed: 0,
            sample_rate: 16_000,
            min_phone_ms: 80.0,
            max_phone_ms: 200.0,
            noise_level: 0.05,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("corpus: {m}")));
        if self.phones.is_empty() || self.speakers.is_empty() {
            return bad("phone and speaker lists must be nonempty".into());
        }
        if self.utterances_per_speaker == 0 || !(self.utterance_seconds > 0.0) {
            return bad("utterance count and length must be positive".into());
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if !(self.min_phone_ms > 0.0 && self.max_phone_ms >= self.min_phone_ms) {
            return bad("phone duration range is empty".into());
        }
        if !(self.noise_level >= 0.0) {
            return bad("noise_level must be non-negative".into());
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let max_scale = self
            .speakers
            .iter()
            .map(|s| s.formant_scale)
            .fold(0.0, f64::max);
        for (i, p) in self.phones.iter().enumerate() {
            if p.id != i {
                return bad(format!("phone ids must be 0..{}, found {} at {i}", self.phones.len(), p.id));
            }
            if p.formant_centers.len() < 2 || p.formant_centers.len() != p.bandwidths.len() {
                return bad(format!("phone {i} needs at least 2 formants with bandwidths"));
            }
            for (&f, &b) in p.formant_centers.iter().zip(&p.bandwidths) {
                if !(f > 0.0 && f * max_scale < nyquist && b > 0.0) {
                    return bad(format!("phone {i}: formant {f} Hz / bandwidth {b} Hz out of range"));
                }
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for s in &self.speakers {
            if !ids.insert(&s.id) || s.id.is_empty() || s.id.contains(['\t', '/', '\\']) {
                return bad(format!("speaker id {:?} is empty, duplicated or not a plain name", s.id));
            }
            if !(0.7..=1.4).contains(&s.formant_scale) {
                return bad(format!("{}: formant_scale {} outside [0.7, 1.4]", s.id, s.formant_scale));
            }
            if !(60.0..=400.0).contains(&s.pitch_hz) {
                return bad(format!("{}: pitch {} Hz outside [60, 400]", s.id, s.pitch_hz));
            }
            if !(s.spectral_tilt <= 0.0 && s.spectral_tilt > -24.0) {
                return bad(format!("{}: spectral_tilt {} outside (-24, 0]", s.id, s.spectral_tilt));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.utterance_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn speakers_with_role(&self, role: SpeakerRole) -> impl Iterator<Item = &SyntheticSpeaker> {
        self.speakers.iter().filter(move |s| s.role == role)
    }
}

/// A phone occupying samples `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhoneSegment {
    pub phone: usize,
    pub start: usize,
    pub len: usize,
}

/// The phone sequence of utterance `index`, shared by every speaker.
pub fn utterance_plan(spec: &CorpusSpec, index: usize) -> Vec<PhoneSegment> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, index as u64, 0));
    let total = spec.n_samples();
    let sr = spec.sample_rate as f64;
    let mut segments: Vec<PhoneSegment> = Vec::new();
    let mut start = 0;
    while start < total {
        let mut phone = rng.random_range(0..spec.phones.len());
        if spec.phones.len() > 1 {
            while segments.last().is_some_and(|s| s.phone == phone) {
                phone = rng.random_range(0..spec.phones.len());
            }
        }
        let ms = if spec.max_phone_ms > spec.min_phone_ms {
            rng.random_range(spec.min_phone_ms..spec.max_phone_ms)
        } else {
            spec.min_phone_ms
        };
        let len = ((ms / 1000.0 * sr).round() as usize).max(1).min(total - start);
        segments.push(PhoneSegment { phone, start, len });
        start += len;
    }
    segments
}

/// Phone label of each analysis frame, taken at the frame's centre sample.
pub fn frame_labels(plan: &[PhoneSegment], n_samples: usize, dsp: &DspConfig) -> Vec<usize> {
    let frames = dsp.n_frames(n_samples).unwrap_or(0);
    let mut seg = 0;
    (0..frames)
        .map(|t| {
            let centre = t * dsp.frame_hop + dsp.frame_len / 2;
            while seg + 1 < plan.len() && centre >= plan[seg].start + plan[seg].len {
                seg += 1;
            }
            plan[seg].phone
        })
        .collect()
}

/// Two-pole resonator with unity gain at DC.
#[derive(Debug, Clone, Copy)]
struct Resonator {
    a: f64,
    b: f64,
    c: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, sr: f64) -> Self {
        let r = (-PI * bandwidth / sr).exp();
        let b = 2.0 * r * (2.0 * PI * freq / sr).cos();
        let c = -r * r;
        Self { a: 1.0 - b - c, b, c }
    }
}

/// Below this frequency the tilt is flat.
const TILT_CORNER_HZ: f64 = 300.0;

/// Applies `tilt_db_per_octave` above [`TILT_CORNER_HZ`] over the whole
/// signal in the frequency domain and removes any DC offset.
fn apply_tilt(signal: &mut [f64], tilt_db_per_octave: f64, sr: f64) {
    let n = signal.len();
    if n < 2 {
        return;
    }
    let mut planner = RealFftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let mut spectrum = forward.make_output_vec();
    forward
        .process(signal, &mut spectrum)
        .expect("buffer sizes come from the plan");
    for (k, bin) in spectrum.iter_mut().enumerate() {
        let f = k as f64 * sr / n as f64;
        let gain_db = tilt_db_per_octave * (f.max(TILT_CORNER_HZ) / TILT_CORNER_HZ).log2();
        *bin *= 10f64.powf(gain_db / 20.0) / n as f64;
    }
    spectrum[0] = Complex::new(0.0, 0.0);
    if n.is_multiple_of(2) {
        spectrum[n / 2].im = 0.0;
    }
    inverse
        .process(&mut spectrum, signal)
        .expect("buffer sizes come from the plan");
}

/// Renders a phone plan with one speaker's voice. `noise_seed` drives the
/// aspiration noise and the small per-utterance pitch offset.
pub fn render(
    spec: &CorpusSpec,
    speaker: &SyntheticSpeaker,
    plan: &[PhoneSegment],
    noise_seed: u64,
) -> Result<Waveform> {
    let sr = spec.sample_rate as f64;
    let n = spec.n_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let pitch_offset = 1.0 + rng.random_range(-0.03..0.03);
    let n_formants = spec.phones.iter().map(|p| p.formant_centers.len()).max().unwrap_or(0);
    let mut state = vec![[0.0f64; 2]; n_formants];
    let mut phase = 1.0;
    let mut out = Vec::with_capacity(n);
    for seg in plan {
        let p = &spec.phones[seg.phone];
        let resonators: Vec<Resonator> = p
            .formant_centers
            .iter()
            .zip(&p.bandwidths)
            .map(|(&f, &b)| Resonator::new(f * speaker.formant_scale, b, sr))
            .collect();
        for i in seg.start..(seg.start + seg.len).min(n) {
            // gentle declination across the utterance
            let f0 = speaker.pitch_hz * pitch_offset * (1.05 - 0.1 * i as f64 / n as f64);
            phase += f0 / sr;
            // zero-mean pulse train: the resonators pass DC at unit gain
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0 - f0 / sr
            } else {
                -f0 / sr
            };
            let mut x = pulse + spec.noise_level * rng.random_range(-1.0..1.0);
            for (res, st) in resonators.iter().zip(state.iter_mut()) {
                let y = res.a * x + res.b * st[0] + res.c * st[1];
                st[1] = st[0];
                st[0] = y;
                x = y;
            }
            out.push(x);
        }
    }
    out.resize(n, 0.0);
    apply_tilt(&mut out, speaker.spectral_tilt, sr);
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        let gain = 0.1 / rms;
        out.iter_mut().for_each(|v| *v = (*v * gain).clamp(-1.0, 1.0));
    }
    Ok(Waveform::new(out, spec.sample_rate)?.quantize_pcm16())
}

/// Noise seed used by [`generate_corpus`] for one (speaker, utterance).
pub fn noise_seed(spec: &CorpusSpec, speaker_index: usize, utterance: usize) -> u64 {
    mix_seed(spec.seed, utterance as u64, speaker_index as u64 + 1)
}

pub fn utterance_id(speaker: &str, index: usize) -> String {
    format!("{speaker}_{index:03}")
}

/// Manifest file for a role subset (or the whole corpus) inside `out_dir`.
pub fn manifest_path(out_dir: &Path, role: Option<SpeakerRole>) -> PathBuf {
    match role {
        None => out_dir.join("manifest.tsv"),
        Some(r) => out_dir.join(format!("{}.tsv", r.as_str())),
    }
}

/// Writes WAVs, label files, a corpus-wide manifest and one manifest per
/// speaker role, plus `spec.json`. Returns the loaded corpus-wide manifest.
pub fn generate_corpus(spec: &CorpusSpec, out_dir: &Path, dsp: &DspConfig) -> Result<Corpus> {
    spec.validate()?;
    if dsp.sample_rate != spec.sample_rate {
        return Err(Error::Config(format!(
            "corpus sample rate {} differs from analysis rate {}",
            spec.sample_rate, dsp.sample_rate
        )));
    }
    let n = spec.n_samples();
    if dsp.n_frames(n).is_none() {
        return Err(Error::TooShort {
            samples: n,
            frame_len: dsp.frame_len,
        });
    }
    for dir in ["wav", "labels"] {
        let d = out_dir.join(dir);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let plans: Vec<_> = (0..spec.utterances_per_speaker)
        .map(|u| utterance_plan(spec, u))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..spec.speakers.len())
        .flat_map(|s| (0..spec.utterances_per_speaker).map(move |u| (s, u)))
        .collect();
    let records: Vec<(SpeakerRole, Utterance)> = jobs
        .par_iter()
        .map(|&(s, u)| {
            let spk = &spec.speakers[s];
            let id = utterance_id(&spk.id, u);
            let wav = render(spec, spk, &plans[u], noise_seed(spec, s, u))?;
            let audio = out_dir.join("wav").join(format!("{id}.wav"));
            write_wav(&audio, &wav)?;
            let labels = frame_labels(&plans[u], n, dsp);
            let label_path = out_dir.join("labels").join(format!("{id}.lab"));
            let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
            fs::write(&label_path, text).map_err(|e| Error::io(&label_path, e))?;
            Ok((
                spk.role,
                Utterance {
                    id,
                    audio,
                    speaker: spk.id.clone(),
                    labels: Some(label_path),
                },
            ))
        })
        .collect::<Result<_>>()?;
    let all: Vec<Utterance> = records.iter().map(|(_, u)| u.clone()).collect();
    write_manifest(&manifest_path(out_dir, None), &all)?;
    for role in [SpeakerRole::Train, SpeakerRole::Source, SpeakerRole::Target] {
        let subset: Vec<Utterance> = records
            .iter()
            .filter(|(r, _)| *r == role)
            .map(|(_, u)| u.clone())
            .collect();
        write_manifest(&manifest_path(out_dir, Some(role)), &subset)?;
    }
    let spec_path = out_dir.join("spec.json");
    let json = serde_json::to_string_pretty(spec).expect("corpus spec serialises");
    fs::write(&spec_path, json + "\n").map_err(|e| Error::io(&spec_path, e))?;
    load_manifest(&manifest_path(out_dir, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::stft;

    fn small_spec() -> CorpusSpec {
        CorpusSpec {
            utterances_per_speaker: 2,
            utterance_seconds: 0.5,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn default_spec_is_valid() {
        let spec = CorpusSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.phones.len(), 8);
        assert_eq!(spec.speakers.len(), 6);
        assert_eq!(spec.speakers_with_role(SpeakerRole::Train).count(), 4);
        assert_eq!(spec.n_samples(), 32_000);
    }

    #[test]
    fn invalid_speakers_are_rejected() {
        let mut spec = CorpusSpec::default();
        spec.speakers[0].formant_scale = 1.5;
        assert!(spec.validate().is_err());
        let mut spec = CorpusSpec::default();
        spec.speakers[1].pitch_hz = 40.0;
        assert!(spec.validate().is_err());
        let mut spec = CorpusSpec::default();
        spec.phones[0].formant_centers.truncate(1);
        spec.phones[0].bandwidths.truncate(1);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn plan_covers_the_utterance_without_repeats() {
        let spec = CorpusSpec::default();
        let plan = utterance_plan(&spec, 3);
        assert_eq!(plan.iter().map(|s| s.len).sum::<usize>(), spec.n_samples());
        for w in plan.windows(2) {
            assert_eq!(w[0].start + w[0].len, w[1].start);
            assert_ne!(w[0].phone, w[1].phone);
        }
        assert_eq!(plan, utterance_plan(&spec, 3));
        assert_ne!(plan, utterance_plan(&spec, 4));
    }

    #[test]
    fn labels_follow_frame_centres() {
        let dsp = DspConfig::default();
        let plan = [
            PhoneSegment { phone: 1, start: 0, len: 360 },
            PhoneSegment { phone: 2, start: 360, len: 640 },
        ];
        // frame t centre = 160 t + 200: t=0 -> 200 (phone 1), t=1 -> 360 (phone 2)
        assert_eq!(frame_labels(&plan, 1000, &dsp), vec![1, 2, 2, 2]);
    }

    #[test]
    fn rendering_is_deterministic_and_normalised() {
        let spec = small_spec();
        let plan = utterance_plan(&spec, 0);
        let a = render(&spec, &spec.speakers[0], &plan, 5).unwrap();
        let b = render(&spec, &spec.speakers[0], &plan, 5).unwrap();
        let c = render(&spec, &spec.speakers[0], &plan, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 8000);
        let rms = (a.samples().iter().map(|v| v * v).sum::<f64>() / 8000.0).sqrt();
        assert!((rms - 0.1).abs() < 1e-3, "{rms}");
    }

    #[test]
    fn formant_peaks_land_on_expected_bins() {
        // bins 700 * 512 / 16000 = 22.4 and 1200 * 512 / 16000 = 38.4
        let mut spec = small_spec();
        spec.phones = vec![
            SyntheticPhone {
                id: 0,
                formant_centers: vec![700.0, 1200.0],
                bandwidths: vec![80.0, 100.0],
            },
            SyntheticPhone {
                id: 1,
                formant_centers: vec![300.0, 2300.0],
                bandwidths: vec![80.0, 100.0],
            },
        ];
        // 175 Hz puts the 4th and 7th harmonics on 700 and 1225 Hz; a 25 ms
        // window cannot resolve harmonics of a much lower voice
        let voice = speaker("flat", SpeakerRole::Train, 1.0, 175.0, -6.0);
        let plan = [
            PhoneSegment { phone: 1, start: 0, len: 2000 },
            PhoneSegment { phone: 0, start: 2000, len: 6000 },
        ];
        let w = render(&spec, &voice, &plan, 1).unwrap();
        let dsp = DspConfig::default();
        let s = stft(&w, &dsp).unwrap();
        let labels = frame_labels(&plan, w.len(), &dsp);
        for (t, &l) in labels.iter().enumerate() {
            // skip frames that straddle the boundary or the onset transient
            if l != 0 || t < 20 {
                continue;
            }
            let frame = s.frames().row(t);
            let peak = |lo: usize, hi: usize| {
                (lo..hi).max_by(|&a, &b| frame[a].total_cmp(&frame[b])).unwrap()
            };
            let (f1, f2) = (peak(12, 31), peak(31, 50));
            assert!((f1 as i64 - 22).abs() <= 2, "frame {t}: F1 peak at bin {f1}");
            assert!((f2 as i64 - 38).abs() <= 2, "frame {t}: F2 peak at bin {f2}");
        }
    }
}
