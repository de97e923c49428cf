//! Training stages and conversion paths.
//!
//! ```text
//! stage 1   MFCC (multi-speaker, labelled)  -> net1 -> phone posteriors
//! stage 2   PPG(target speech via net1)      -> net2 -> target log-spectrogram
//! stage 3   MFCC (multi-speaker)             -> net3 -> cascade's point estimate
//!
//! cascade   w -> MFCC -> net1 -> PPG -> net2 -> spectrogram -> Griffin-Lim
//! direct    w -> MFCC -> net3 -> spectrogram -> Griffin-Lim
//! ```
//!
//! Spectrogram targets live in the `ln(1 + |X|)` domain. MFCC inputs are
//! normalised per utterance before entering any network.

mod convert;
mod train;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dsp::{cmvn, Analyzer, DspConfig, MfccSequence, Spectrogram, Waveform};
use crate::error::{Error, Result};
use crate::mdn::Covariance;
use crate::neural::{softmax_rows, HeadKind, Mode, Network, NetworkConfig};

pub use convert::{CascadeConverter, Converter, DirectConverter};
pub use train::{
    prepare_stage1, prepare_stage2, relative_l2, synthesize_stage3_pairs, train_stage1,
    train_stage2, train_stage3, train_stage3_with, Stage1Example, Stage2Example, Stage3Pair, Trained,
};

/// Phone posteriors, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PpgSequence {
    frames: Array2<f64>,
}

impl PpgSequence {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        for (t, row) in frames.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Config(format!("PPG frame {t} is not a distribution (sum {sum})")));
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_phones(&self) -> usize {
        self.frames.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    /// Training window length in frames.
    pub segment_frames: usize,
    /// Window advance; equal to `segment_frames` for non-overlapping windows.
    pub segment_hop: usize,
    pub epochs: usize,
    pub batch_segments: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub max_grad_norm: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            segment_frames: 401,
            segment_hop: 401,
            epochs: 10,
            batch_segments: 8,
            learning_rate: 1e-3,
            seed: 0,
            max_grad_norm: 5.0,
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_frames == 0 || self.segment_hop == 0 || self.batch_segments == 0 {
            return Err(Error::Config(
                "segment_frames, segment_hop and batch_segments must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.max_grad_norm >= 0.0) {
            return Err(Error::Config("max_grad_norm must be non-negative".into()));
        }
        Ok(())
    }
}

/// Layer sizes shared by all three networks; only input width, output width
/// and head differ between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub prenet_layers: usize,
    pub prenet_units: usize,
    pub dropout_rate: f64,
    pub cbhg_units: usize,
    pub bank_channels: usize,
    pub conv_bank_k: usize,
    pub highway_layers: usize,
    pub gru_units: usize,
    pub mixtures: usize,
    pub covariance: Covariance,
}

impl Default for ArchConfig {
    /// Full-size stack with a 5-component diagonal mixture head.
    fn default() -> Self {
        Self::scaled(512, 8, 8, 512)
    }
}

impl ArchConfig {
    pub fn scaled(cbhg_units: usize, conv_bank_k: usize, highway_layers: usize, gru_units: usize) -> Self {
        let n = NetworkConfig::scaled(1, 1, HeadKind::Softmax, cbhg_units, conv_bank_k, highway_layers, gru_units);
        Self {
            prenet_layers: n.prenet_layers,
            prenet_units: n.prenet_units,
            dropout_rate: n.dropout_rate,
            cbhg_units,
            bank_channels: n.bank_channels,
            conv_bank_k,
            highway_layers,
            gru_units,
            mixtures: 5,
            covariance: Covariance::Diagonal,
        }
    }

    /// Shared sizes of an existing network; the mixture settings come from
    /// its head when it has one.
    pub fn from_network(cfg: &NetworkConfig) -> Self {
        let (mixtures, covariance) = match cfg.head {
            HeadKind::Mdn { mixtures, covariance } => (mixtures, covariance),
            HeadKind::Softmax => (5, Covariance::Diagonal),
        };
        Self {
            prenet_layers: cfg.prenet_layers,
            prenet_units: cfg.prenet_units,
            dropout_rate: cfg.dropout_rate,
            cbhg_units: cfg.cbhg_units,
            bank_channels: cfg.bank_channels,
            conv_bank_k: cfg.conv_bank_k,
            highway_layers: cfg.highway_layers,
            gru_units: cfg.gru_units,
            mixtures,
            covariance,
        }
    }

    fn network(&self, input_dim: usize, output_dim: usize, head: HeadKind) -> NetworkConfig {
        NetworkConfig {
            input_dim,
            output_dim,
            prenet_layers: self.prenet_layers,
            prenet_units: self.prenet_units,
            dropout_rate: self.dropout_rate,
            cbhg_units: self.cbhg_units,
            bank_channels: self.bank_channels,
            conv_bank_k: self.conv_bank_k,
            highway_layers: self.highway_layers,
            gru_units: self.gru_units,
            head,
        }
    }

    fn mdn_head(&self) -> HeadKind {
        HeadKind::Mdn {
            mixtures: self.mixtures,
            covariance: self.covariance,
        }
    }

    /// MFCC -> phone posteriors.
    pub fn net1(&self, dsp: &DspConfig, n_phones: usize) -> NetworkConfig {
        self.network(dsp.mfcc_order, n_phones, HeadKind::Softmax)
    }

    /// PPG -> spectrogram mixture.
    pub fn net2(&self, dsp: &DspConfig, n_phones: usize) -> NetworkConfig {
        self.network(n_phones, dsp.n_bins(), self.mdn_head())
    }

    /// MFCC -> spectrogram mixture.
    pub fn net3(&self, dsp: &DspConfig) -> NetworkConfig {
        self.network(dsp.mfcc_order, dsp.n_bins(), self.mdn_head())
    }
}

fn require_infer(net: &Network, what: &str) -> Result<()> {
    if net.mode() != Mode::Infer {
        return Err(Error::Config(format!("{what} must be in infer mode")));
    }
    Ok(())
}

/// Normalised cepstra of a waveform, the input of networks 1 and 3.
pub fn features(analyzer: &Analyzer, w: &Waveform) -> Result<MfccSequence> {
    cmvn(&analyzer.mfcc(w)?)
}

/// Phone posteriors of normalised cepstra.
pub fn compute_ppg(net1: &Network, m: &MfccSequence) -> Result<PpgSequence> {
    require_infer(net1, "phone recognizer")?;
    if !m.is_normalized() {
        return Err(Error::Config("phone recognizer input must be mean/variance normalised".into()));
    }
    if net1.config().head != HeadKind::Softmax {
        return Err(Error::Config("phone recognizer needs a softmax head".into()));
    }
    PpgSequence::new(softmax_rows(&net1.forward(m.frames(), 0)?))
}

/// Point estimate of a mixture-head network, mapped back to magnitudes.
pub(crate) fn mdn_spectrogram(net: &Network, input: &Array2<f64>, dsp: &DspConfig) -> Result<Spectrogram> {
    let layout = net
        .config()
        .mdn_layout()
        .ok_or_else(|| Error::Config("spectrogram network needs a mixture head".into()))?;
    let raw = net.forward(input, 0)?;
    let estimate = crate::mdn::split_head(&raw, &layout)?.point_estimate();
    Spectrogram::from_log(&estimate, dsp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Mode;

    #[test]
    fn stage_networks_differ_only_in_io() {
        let arch = ArchConfig::scaled(16, 2, 1, 8);
        let dsp = DspConfig::default();
        let (a, b, c) = (arch.net1(&dsp, 8), arch.net2(&dsp, 8), arch.net3(&dsp));
        let strip = |mut n: NetworkConfig| {
            n.input_dim = 0;
            n.output_dim = 0;
            n.head = HeadKind::Softmax;
            n
        };
        assert_eq!(strip(a.clone()), strip(b.clone()));
        assert_eq!(strip(b.clone()), strip(c.clone()));
        assert_eq!((a.input_dim, a.output_dim), (40, 8));
        assert_eq!((b.input_dim, b.output_dim), (8, 257));
        assert_eq!((c.input_dim, c.output_dim), (40, 257));
        assert_eq!(b.head, c.head);
    }

    #[test]
    fn arch_round_trips_through_a_network_config() {
        let arch = ArchConfig {
            mixtures: 3,
            ..ArchConfig::scaled(32, 3, 2, 16)
        };
        let dsp = DspConfig::default();
        assert_eq!(ArchConfig::from_network(&arch.net3(&dsp)), arch);
        let from_softmax = ArchConfig::from_network(&arch.net1(&dsp, 8));
        assert_eq!(from_softmax.mixtures, 5);
        assert_eq!(from_softmax.cbhg_units, 32);
    }

    #[test]
    fn paper_structure_counts_favour_the_direct_network() {
        let arch = ArchConfig::default();
        let dsp = DspConfig::default();
        let count = |cfg| Network::new(cfg, 0).unwrap().param_count();
        let (n1, n2, n3) = (count(arch.net1(&dsp, 61)), count(arch.net2(&dsp, 61)), count(arch.net3(&dsp)));
        assert!(n3 < n1 + n2);
    }

    #[test]
    fn zero_head_gives_uniform_posteriors() {
        let dsp = DspConfig::default();
        let mut net = Network::new(ArchConfig::scaled(8, 2, 1, 4).net1(&dsp, 5), 1).unwrap();
        net.param_mut("head.weight").unwrap().fill(0.0);
        net.param_mut("head.bias").unwrap().fill(0.0);
        net.set_mode(Mode::Infer);
        let m = MfccSequence::new(Array2::from_shape_fn((9, 40), |(i, j)| (i as f64 - j as f64) * 0.1), true);
        let ppg = compute_ppg(&net, &m).unwrap();
        assert!(ppg.frames().iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn ppg_rows_are_distributions() {
        let dsp = DspConfig::default();
        let mut net = Network::new(ArchConfig::scaled(8, 2, 1, 4).net1(&dsp, 6), 2).unwrap();
        net.set_mode(Mode::Infer);
        let m = MfccSequence::new(Array2::from_shape_fn((20, 40), |(i, j)| ((i * j) % 7) as f64 - 3.0), true);
        let ppg = compute_ppg(&net, &m).unwrap();
        for row in ppg.frames().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        let raw = MfccSequence::new(m.frames().clone(), false);
        assert!(compute_ppg(&net, &raw).is_err());
        net.set_mode(Mode::Train);
        assert!(compute_ppg(&net, &m).is_err());
    }

    #[test]
    fn stage_config_validation() {
        assert!(StageConfig::default().validate().is_ok());
        let bad = StageConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
