use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::dsp::{Analyzer, DspConfig, MfccSequence, Spectrogram, Waveform};
use crate::error::{Error, Result};
use crate::mdn::mdn_nll_weighted;
use crate::neural::{
    adam_step, softmax_cross_entropy, AdamConfig, AdamState, Mode, Network, NetworkConfig, SeqBatch,
};
use crate::seed::mix_seed;

use super::{compute_ppg, features, ArchConfig, CascadeConverter, Converter, PpgSequence, StageConfig};

/// A trained network (infer mode) and its per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct Trained {
    pub network: Network,
    /// Mean loss per valid frame, one entry per epoch.
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Example {
    pub id: String,
    pub mfcc: MfccSequence,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Example {
    pub ppg: PpgSequence,
    /// `ln(1 + |X|)` of the target speaker's spectrogram.
    pub target: Array2<f64>,
}

/// Distillation pair: source cepstra and the cascade's spectrogram for them.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage3Pair {
    pub input: MfccSequence,
    pub target: Spectrogram,
}

/// Features and frame labels for every labelled utterance in `corpus`.
pub fn prepare_stage1(corpus: &Corpus, analyzer: &Analyzer) -> Result<Vec<Stage1Example>> {
    let rate = analyzer.config().sample_rate;
    corpus
        .utterances
        .par_iter()
        .map(|u| {
            let mfcc = features(analyzer, &u.load_audio(rate)?)?;
            let labels = u.load_labels()?;
            if labels.len() != mfcc.n_frames() {
                return Err(Error::Labels {
                    utterance: u.id.clone(),
                    reason: format!("{} labels for {} frames", labels.len(), mfcc.n_frames()),
                });
            }
            Ok(Stage1Example {
                id: u.id.clone(),
                mfcc,
                labels,
            })
        })
        .collect()
}

/// Phone posteriors of target-speaker speech paired with its log spectrogram.
pub fn prepare_stage2(net1: &Network, analyzer: &Analyzer, target_speech: &[Waveform]) -> Result<Vec<Stage2Example>> {
    target_speech
        .par_iter()
        .map(|w| {
            let ppg = compute_ppg(net1, &features(analyzer, w)?)?;
            let target = analyzer.stft(w)?.to_log(analyzer.config());
            if target.nrows() != ppg.n_frames() {
                return Err(Error::shape("spectrogram frames", ppg.n_frames(), target.nrows()));
            }
            Ok(Stage2Example { ppg, target })
        })
        .collect()
}

enum Targets<'a> {
    Labels(&'a [usize]),
    Frames(&'a Array2<f64>),
}

struct Example<'a> {
    input: &'a Array2<f64>,
    targets: Targets<'a>,
}

/// A training window: utterance index, first frame and valid frame count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Window {
    example: usize,
    start: usize,
    valid: usize,
}

fn windows(lengths: &[usize], segment: usize, hop: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for (example, &len) in lengths.iter().enumerate() {
        let mut start = 0;
        while start < len {
            let valid = segment.min(len - start);
            out.push(Window { example, start, valid });
            if start + segment >= len {
                break;
            }
            start += hop;
        }
    }
    out
}

fn pad_rows(x: &Array2<f64>, start: usize, valid: usize, rows: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows, x.ncols()));
    out.slice_mut(s![..valid, ..]).assign(&x.slice(s![start..start + valid, ..]));
    out
}

/// Shared minibatch loop. Windows in a batch are zero-padded to the longest
/// one; padded rows carry zero weight in the loss.
fn fit(
    mut net: Network,
    examples: &[Example],
    cfg: &StageConfig,
    on_epoch: &mut dyn FnMut(usize, &Network) -> Result<()>,
) -> Result<Trained> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty("training examples".into()));
    }
    let lengths: Vec<usize> = examples.iter().map(|e| e.input.nrows()).collect();
    let all = windows(&lengths, cfg.segment_frames, cfg.segment_hop);
    if all.is_empty() {
        return Err(Error::Empty("training frames".into()));
    }
    let layout = net.config().mdn_layout();
    net.set_mode(Mode::Train);
    let mut adam = AdamState::new(
        &net,
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order = all.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64, 0)));
        let (mut loss_sum, mut frames) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_segments).enumerate() {
            let rows = chunk.iter().map(|w| w.valid).max().unwrap_or(0);
            let seqs: Vec<(Array2<f64>, usize)> = chunk
                .iter()
                .map(|w| (pad_rows(examples[w.example].input, w.start, w.valid, rows), w.valid))
                .collect();
            let batch = SeqBatch::from_sequences(&seqs)?;
            let n_valid = batch.n_valid();
            let out = net.forward_train(&batch, mix_seed(cfg.seed, epoch as u64, b as u64 + 1))?;
            let (loss, mut grad) = match (&examples[chunk[0].example].targets, &layout) {
                (Targets::Labels(_), _) => {
                    let mut labels = vec![0usize; batch.n_rows()];
                    for (k, w) in chunk.iter().enumerate() {
                        let Targets::Labels(l) = examples[w.example].targets else {
                            return Err(Error::Config("mixed target kinds in one stage".into()));
                        };
                        let row = k * rows;
                        labels[row..row + w.valid].copy_from_slice(&l[w.start..w.start + w.valid]);
                    }
                    softmax_cross_entropy(&out, &labels, Some(batch.mask()))?
                }
                (Targets::Frames(_), Some(layout)) => {
                    let mut target = Array2::zeros((batch.n_rows(), layout.dim));
                    for (k, w) in chunk.iter().enumerate() {
                        let Targets::Frames(f) = examples[w.example].targets else {
                            return Err(Error::Config("mixed target kinds in one stage".into()));
                        };
                        let row = k * rows;
                        target
                            .slice_mut(s![row..row + w.valid, ..])
                            .assign(&f.slice(s![w.start..w.start + w.valid, ..]));
                    }
                    let nll = mdn_nll_weighted(&out, layout, &target, Some(batch.mask()))?;
                    (nll.loss, nll.grad)
                }
                (Targets::Frames(_), None) => {
                    return Err(Error::Config("spectrogram targets need a mixture head".into()));
                }
            };
            grad /= n_valid as f64;
            let mut grads = net.backward(&grad)?;
            let norm = grads.l2_norm();
            if cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm {
                grads.scale(cfg.max_grad_norm / norm);
            }
            adam_step(&mut net, &mut adam, &grads)?;
            loss_sum += loss;
            frames += n_valid;
        }
        losses.push(loss_sum / frames as f64);
        let mut snapshot = net.clone();
        snapshot.set_mode(Mode::Infer);
        on_epoch(epoch, &snapshot)?;
    }
    net.set_mode(Mode::Infer);
    Ok(Trained { network: net, losses })
}

fn check_input(cfg: &NetworkConfig, order: usize, what: &str) -> Result<()> {
    if order != cfg.input_dim {
        return Err(Error::shape(format!("{what} input width"), cfg.input_dim, order));
    }
    Ok(())
}

/// Phone recognizer trained by frame-wise cross-entropy.
pub fn train_stage1(
    examples: &[Stage1Example],
    n_phones: usize,
    dsp: &DspConfig,
    arch: &ArchConfig,
    cfg: &StageConfig,
) -> Result<Trained> {
    if examples.is_empty() {
        return Err(Error::Empty("stage-1 corpus".into()));
    }
    let net_cfg = arch.net1(dsp, n_phones);
    for e in examples {
        check_input(&net_cfg, e.mfcc.order(), "phone recognizer")?;
        if e.labels.len() != e.mfcc.n_frames() {
            return Err(Error::Labels {
                utterance: e.id.clone(),
                reason: format!("{} labels for {} frames", e.labels.len(), e.mfcc.n_frames()),
            });
        }
        if let Some(&bad) = e.labels.iter().find(|&&l| l >= n_phones) {
            return Err(Error::Labels {
                utterance: e.id.clone(),
                reason: format!("label {bad} outside {n_phones} phones"),
            });
        }
    }
    let net = Network::new(net_cfg, cfg.seed)?;
    let data: Vec<Example> = examples
        .iter()
        .map(|e| Example {
            input: e.mfcc.frames(),
            targets: Targets::Labels(&e.labels),
        })
        .collect();
    fit(net, &data, cfg, &mut |_, _| Ok(()))
}

/// PPG-to-spectrogram mapper for one target speaker.
pub fn train_stage2(
    net1: &Network,
    analyzer: &Analyzer,
    target_speech: &[Waveform],
    arch: &ArchConfig,
    cfg: &StageConfig,
) -> Result<Trained> {
    if target_speech.is_empty() {
        return Err(Error::Empty("target-speaker corpus".into()));
    }
    let examples = prepare_stage2(net1, analyzer, target_speech)?;
    let net = Network::new(arch.net2(analyzer.config(), net1.config().output_dim), cfg.seed)?;
    let data: Vec<Example> = examples
        .iter()
        .map(|e| Example {
            input: e.ppg.frames(),
            targets: Targets::Frames(&e.target),
        })
        .collect();
    fit(net, &data, cfg, &mut |_, _| Ok(()))
}

/// Runs the cascade over `speech` to produce distillation pairs.
pub fn synthesize_stage3_pairs(cascade: &CascadeConverter, speech: &[Waveform]) -> Result<Vec<Stage3Pair>> {
    speech
        .par_iter()
        .map(|w| {
            let input = features(cascade.analyzer(), w)?;
            let target = cascade.spectrogram_from_features(&input)?;
            Ok(Stage3Pair { input, target })
        })
        .collect()
}

/// `||a - b|| / ||b||` over all entries.
pub fn relative_l2(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape("relative L2 operands", format!("{:?}", b.dim()), format!("{:?}", a.dim())));
    }
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    if den == 0.0 {
        return Err(Error::Config("relative L2 against an all-zero reference".into()));
    }
    Ok((num / den).sqrt())
}

fn warm_start_from(net: &mut Network, init: &Network) -> Result<()> {
    let tensors = init
        .param_names()
        .iter()
        .zip(init.params())
        .chain(init.buffer_names().iter().zip(init.buffers()));
    for (name, value) in tensors {
        // the first prenet layer reads a different input
        if name == "prenet.0.weight" {
            continue;
        }
        net.set_tensor(name, value.clone())?;
    }
    Ok(())
}

/// Direct network trained on the cascade's outputs.
pub fn train_stage3(
    pairs: &[Stage3Pair],
    dsp: &DspConfig,
    arch: &ArchConfig,
    cfg: &StageConfig,
    warm_start: Option<&Network>,
) -> Result<Trained> {
    train_stage3_with(pairs, dsp, arch, cfg, warm_start, &mut |_, _| Ok(()))
}

/// [`train_stage3`] with a hook that sees an infer-mode copy of the network
/// after every epoch.
pub fn train_stage3_with(
    pairs: &[Stage3Pair],
    dsp: &DspConfig,
    arch: &ArchConfig,
    cfg: &StageConfig,
    warm_start: Option<&Network>,
    on_epoch: &mut dyn FnMut(usize, &Network) -> Result<()>,
) -> Result<Trained> {
    if pairs.is_empty() {
        return Err(Error::Empty("stage-3 pairs".into()));
    }
    let net_cfg = arch.net3(dsp);
    let mut net = Network::new(net_cfg.clone(), cfg.seed)?;
    if let Some(init) = warm_start {
        warm_start_from(&mut net, init)?;
    }
    let targets: Vec<Array2<f64>> = pairs
        .iter()
        .map(|p| {
            check_input(&net_cfg, p.input.order(), "direct network")?;
            if p.input.n_frames() != p.target.n_frames() {
                return Err(Error::shape("pair frames", p.input.n_frames(), p.target.n_frames()));
            }
            Ok(p.target.to_log(dsp))
        })
        .collect::<Result<_>>()?;
    let data: Vec<Example> = pairs
        .iter()
        .zip(&targets)
        .map(|(p, t)| Example {
            input: p.input.frames(),
            targets: Targets::Frames(t),
        })
        .collect();
    fit(net, &data, cfg, on_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_cover_every_frame_once_without_overlap() {
        let w = windows(&[10, 3, 8], 4, 4);
        let valid: Vec<usize> = w.iter().map(|w| w.valid).collect();
        assert_eq!(valid, [4, 4, 2, 3, 4, 4]);
        assert_eq!(w[2], Window { example: 0, start: 8, valid: 2 });
    }

    #[test]
    fn overlapping_windows_stop_at_the_end() {
        let w = windows(&[10], 4, 2);
        let starts: Vec<usize> = w.iter().map(|w| w.start).collect();
        assert_eq!(starts, [0, 2, 4, 6]);
        assert_eq!(w.last().unwrap().valid, 4);
    }

    #[test]
    fn relative_l2_of_scaled_copy() {
        let b = Array2::from_elem((2, 3), 2.0);
        let a = &b * 1.1;
        assert!((relative_l2(&a, &b).unwrap() - 0.1).abs() < 1e-12);
        assert!(relative_l2(&a, &Array2::zeros((2, 3))).is_err());
    }
}
