use crate::dsp::{Analyzer, MfccSequence, Spectrogram, Waveform};
use crate::error::{Error, Result};
use crate::neural::{HeadKind, Mode, Network};

use super::{compute_ppg, features, mdn_spectrogram, PpgSequence};

/// A conversion path from source speech to the target speaker's spectrogram.
pub trait Converter: Sync {
    fn name(&self) -> &str;

    /// Trainable parameters deployed by this path.
    fn param_count(&self) -> usize;

    fn analyzer(&self) -> &Analyzer;

    /// Feature extraction, inference and point estimation; no vocoding.
    fn convert_spectrogram(&self, w: &Waveform) -> Result<Spectrogram>;

    /// Spectrogram plus its Griffin-Lim rendering.
    fn convert(&self, w: &Waveform) -> Result<(Spectrogram, Waveform)> {
        let s = self.convert_spectrogram(w)?;
        let audio = self.analyzer().griffin_lim(&s)?;
        Ok((s, audio))
    }
}

fn into_infer(mut net: Network) -> Network {
    net.set_mode(Mode::Infer);
    net
}

fn check_mdn(net: &Network, input_dim: usize, n_bins: usize, what: &str) -> Result<()> {
    let cfg = net.config();
    if !matches!(cfg.head, HeadKind::Mdn { .. }) {
        return Err(Error::Config(format!("{what} needs a mixture head")));
    }
    if cfg.input_dim != input_dim || cfg.output_dim != n_bins {
        return Err(Error::Config(format!(
            "{what} maps {} -> {}, expected {input_dim} -> {n_bins}",
            cfg.input_dim, cfg.output_dim
        )));
    }
    Ok(())
}

/// Network 3 alone.
#[derive(Clone)]
pub struct DirectConverter {
    net3: Network,
    analyzer: Analyzer,
}

impl DirectConverter {
    pub fn new(net3: Network, analyzer: Analyzer) -> Result<Self> {
        let dsp = analyzer.config();
        check_mdn(&net3, dsp.mfcc_order, dsp.n_bins(), "direct network")?;
        Ok(Self {
            net3: into_infer(net3),
            analyzer,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net3
    }

    pub fn spectrogram_from_features(&self, m: &MfccSequence) -> Result<Spectrogram> {
        mdn_spectrogram(&self.net3, m.frames(), self.analyzer.config())
    }
}

impl Converter for DirectConverter {
    fn name(&self) -> &str {
        "net3"
    }

    fn param_count(&self) -> usize {
        self.net3.param_count()
    }

    fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    fn convert_spectrogram(&self, w: &Waveform) -> Result<Spectrogram> {
        self.spectrogram_from_features(&features(&self.analyzer, w)?)
    }
}

/// Network 1 followed by network 2.
#[derive(Clone)]
pub struct CascadeConverter {
    net1: Network,
    net2: Network,
    analyzer: Analyzer,
}

impl CascadeConverter {
    pub fn new(net1: Network, net2: Network, analyzer: Analyzer) -> Result<Self> {
        let dsp = analyzer.config();
        let c1 = net1.config();
        if c1.head != HeadKind::Softmax || c1.input_dim != dsp.mfcc_order {
            return Err(Error::Config(format!(
                "phone recognizer must map {} cepstra to a softmax",
                dsp.mfcc_order
            )));
        }
        check_mdn(&net2, c1.output_dim, dsp.n_bins(), "PPG mapper")?;
        Ok(Self {
            net1: into_infer(net1),
            net2: into_infer(net2),
            analyzer,
        })
    }

    pub fn net1(&self) -> &Network {
        &self.net1
    }

    pub fn net2(&self) -> &Network {
        &self.net2
    }

    pub fn ppg(&self, m: &MfccSequence) -> Result<PpgSequence> {
        compute_ppg(&self.net1, m)
    }

    pub fn spectrogram_from_ppg(&self, ppg: &PpgSequence) -> Result<Spectrogram> {
        mdn_spectrogram(&self.net2, ppg.frames(), self.analyzer.config())
    }

    pub fn spectrogram_from_features(&self, m: &MfccSequence) -> Result<Spectrogram> {
        self.spectrogram_from_ppg(&self.ppg(m)?)
    }
}

impl Converter for CascadeConverter {
    fn name(&self) -> &str {
        "cascade"
    }

    fn param_count(&self) -> usize {
        self.net1.param_count() + self.net2.param_count()
    }

    fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    fn convert_spectrogram(&self, w: &Waveform) -> Result<Spectrogram> {
        self.spectrogram_from_features(&features(&self.analyzer, w)?)
    }
}
