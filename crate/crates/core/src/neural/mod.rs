//! Frame-synchronous CBHG network with hand-written reverse-mode gradients.
//!
//! Every network in the pipeline shares one stack:
//!
//! ```text
//! input -> prenet (FC + ReLU + dropout) x N
//!       -> conv bank (widths 1..=K, BN, ReLU) -> max-pool (width 2, stride 1)
//!       -> conv projection (BN, ReLU) -> conv projection (BN) -> + prenet output
//!       -> highway x L -> bidirectional GRU -> FC head
//! ```
//!
//! Sequences are processed as a [`SeqBatch`]: frames of several sequences
//! stacked row-wise with span boundaries. Convolutions, pooling and the GRU
//! never cross a span boundary; batch normalisation pools statistics over all
//! unmasked frames in the batch.

mod adam;
mod checkpoint;
mod gradcheck;
mod gru;
mod layers;
mod loss;
mod network;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdn::{Covariance, MdnLayout};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    sha256_hex, Checkpoint, CheckpointHeader, Parent, Stage, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{grad_check, grad_check_tensors, GradCheckReport, FD_STEP};
pub use loss::{softmax_cross_entropy, softmax_rows, squared_error};
pub use network::{Gradients, Mode, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HeadKind {
    /// Per-frame logits over `output_dim` classes.
    Softmax,
    /// Gaussian mixture over an `output_dim`-dimensional target.
    Mdn {
        mixtures: usize,
        covariance: Covariance,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub prenet_layers: usize,
    pub prenet_units: usize,
    pub dropout_rate: f64,
    pub cbhg_units: usize,
    /// Output channels of each conv-bank convolution.
    pub bank_channels: usize,
    pub conv_bank_k: usize,
    pub highway_layers: usize,
    /// Units per GRU direction.
    pub gru_units: usize,
    pub head: HeadKind,
}

impl NetworkConfig {
    /// Full-size structure: 3-layer prenet with dropout 0.2, 512-unit CBHG
    /// with 8 bank filters and 8 highway layers, 512-unit bidirectional GRU.
    pub fn new(input_dim: usize, output_dim: usize, head: HeadKind) -> Self {
        Self::scaled(input_dim, output_dim, head, 512, 8, 8, 512)
    }

    /// Same stack with the main widths chosen by the caller. Prenet width is
    /// `cbhg_units / 2` and each bank filter has `cbhg_units / 4` channels.
    pub fn scaled(
        input_dim: usize,
        output_dim: usize,
        head: HeadKind,
        cbhg_units: usize,
        conv_bank_k: usize,
        highway_layers: usize,
        gru_units: usize,
    ) -> Self {
        Self {
            input_dim,
            output_dim,
            prenet_layers: 3,
            prenet_units: (cbhg_units / 2).max(1),
            dropout_rate: 0.2,
            cbhg_units,
            bank_channels: (cbhg_units / 4).max(1),
            conv_bank_k,
            highway_layers,
            gru_units,
            head,
        }
    }

    pub fn head_width(&self) -> usize {
        match self.head {
            HeadKind::Softmax => self.output_dim,
            HeadKind::Mdn { .. } => self.mdn_layout().map_or(0, |l| l.width()),
        }
    }

    pub fn mdn_layout(&self) -> Option<MdnLayout> {
        match self.head {
            HeadKind::Softmax => None,
            HeadKind::Mdn {
                mixtures,
                covariance,
            } => Some(MdnLayout::new(mixtures, self.output_dim, covariance)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("input layer", "input_dim", self.input_dim),
            ("head", "output_dim", self.output_dim),
            ("prenet", "prenet_layers", self.prenet_layers),
            ("prenet", "prenet_units", self.prenet_units),
            ("conv bank", "cbhg_units", self.cbhg_units),
            ("conv bank", "bank_channels", self.bank_channels),
            ("conv bank", "conv_bank_k", self.conv_bank_k),
            ("highway", "highway_layers", self.highway_layers),
            ("gru", "gru_units", self.gru_units),
        ];
        for (layer, field, value) in checks {
            if value == 0 {
                return Err(Error::Config(format!("{layer}: {field} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "prenet: dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if let HeadKind::Mdn { mixtures: 0, .. } = self.head {
            return Err(Error::Config("head: mixtures must be positive".into()));
        }
        Ok(())
    }
}

/// Several variable-length sequences stacked row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    inputs: Array2<f64>,
    spans: Vec<(usize, usize)>,
    mask: Vec<f64>,
}

impl SeqBatch {
    pub fn single(x: Array2<f64>) -> Self {
        let n = x.nrows();
        Self {
            inputs: x,
            spans: vec![(0, n)],
            mask: vec![1.0; n],
        }
    }

    /// Stacks `(frames, valid)` pairs; rows at or beyond `valid` in each
    /// sequence are padding and excluded from every computation that could
    /// leak into valid frames.
    pub fn from_sequences(seqs: &[(Array2<f64>, usize)]) -> Result<Self> {
        let cols = seqs.first().map_or(0, |(x, _)| x.ncols());
        let total: usize = seqs.iter().map(|(x, _)| x.nrows()).sum();
        let mut inputs = Array2::zeros((total, cols));
        let mut spans = Vec::with_capacity(seqs.len());
        let mut mask = Vec::with_capacity(total);
        let mut start = 0;
        for (x, valid) in seqs {
            if x.ncols() != cols {
                return Err(Error::shape("batch columns", cols, x.ncols()));
            }
            let len = x.nrows();
            if *valid > len {
                return Err(Error::shape("valid frames", format!("<= {len}"), valid));
            }
            inputs
                .slice_mut(ndarray::s![start..start + len, ..])
                .assign(x);
            spans.push((start, len));
            mask.extend((0..len).map(|t| if t < *valid { 1.0 } else { 0.0 }));
            start += len;
        }
        Ok(Self {
            inputs,
            spans,
            mask,
        })
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    pub fn mask(&self) -> &[f64] {
        &self.mask
    }

    pub fn n_rows(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn n_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m > 0.0).count()
    }
}
