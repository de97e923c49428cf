//! Subcommand options. Each struct is both a clap argument group and a TOML
//! table; a value given on the command line wins over the file.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use ppgvc::mdn::Covariance;
use ppgvc::pipeline::ArchConfig;

use crate::Mode;

/// Takes `self.field` when set, otherwise the file's value.
macro_rules! merge_fields {
    ($flags:expr, $file:expr; $($field:ident),* $(,)?) => {
        $( if $flags.$field.is_none() { $flags.$field = $file.$field; } )*
    };
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub gen_corpus: GenCorpusArgs,
    pub train: TrainArgs,
    pub convert: ConvertArgs,
    pub eval: EvalArgs,
    pub bench: BenchArgs,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenCorpusArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Utterances per speaker.
    #[arg(long)]
    pub utterances: Option<usize>,
    /// Length of each utterance in seconds.
    #[arg(long)]
    pub seconds: Option<f64>,
}

impl GenCorpusArgs {
    pub fn merge(mut self, file: Self) -> Self {
        merge_fields!(self, file; out, seed, utterances, seconds);
        self
    }
}

/// Layer sizes; unset values come from the parent checkpoint (stages 2 and
/// 3) or the full-size defaults.
#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ArchArgs {
    /// CBHG width; prenet and bank widths follow from it.
    #[arg(long)]
    pub units: Option<usize>,
    /// Largest convolution-bank filter width.
    #[arg(long)]
    pub bank_k: Option<usize>,
    #[arg(long)]
    pub highway: Option<usize>,
    /// Units per GRU direction.
    #[arg(long)]
    pub gru_units: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Mixture components in spectrogram heads.
    #[arg(long)]
    pub mixtures: Option<usize>,
    /// Share one standard deviation across output dimensions.
    #[arg(long)]
    pub isotropic: Option<bool>,
}

impl ArchArgs {
    fn merge(&mut self, file: Self) {
        merge_fields!(self, file; units, bank_k, highway, gru_units, dropout, mixtures, isotropic);
    }

    pub fn apply(&self, base: ArchConfig) -> ArchConfig {
        let mut arch = match self.units {
            Some(u) => ArchConfig {
                mixtures: base.mixtures,
                covariance: base.covariance,
                ..ArchConfig::scaled(u, base.conv_bank_k, base.highway_layers, base.gru_units)
            },
            None => base,
        };
        if let Some(k) = self.bank_k {
            arch.conv_bank_k = k;
        }
        if let Some(h) = self.highway {
            arch.highway_layers = h;
        }
        if let Some(g) = self.gru_units {
            arch.gru_units = g;
        }
        if let Some(d) = self.dropout {
            arch.dropout_rate = d;
        }
        if let Some(m) = self.mixtures {
            arch.mixtures = m;
        }
        if let Some(iso) = self.isotropic {
            arch.covariance = if iso { Covariance::Isotropic } else { Covariance::Diagonal };
        }
        arch
    }
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub stage: Option<u8>,
    /// Corpus directory written by gen-corpus [default: data].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Manifest to train on instead of the stage's default in --data.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Use only the first N utterances of the manifest (stages 2 and 3).
    #[arg(long)]
    pub take: Option<usize>,
    /// Checkpoint directory [default: models].
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_segments: Option<usize>,
    #[arg(long)]
    pub segment_frames: Option<usize>,
    #[arg(long)]
    pub segment_hop: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Phone inventory size; inferred from the labels when absent.
    #[arg(long)]
    pub phones: Option<usize>,
    /// Stage 3: start from net2's weights except its input layer.
    #[arg(long)]
    pub warm_start: Option<bool>,
    #[command(flatten)]
    #[serde(flatten)]
    pub arch: ArchArgs,
}

impl TrainArgs {
    pub fn merge(mut self, file: Self) -> Self {
        merge_fields!(self, file;
            stage, data, manifest, take, models, epochs, learning_rate, batch_segments,
            segment_frames, segment_hop, seed, phones, warm_start);
        self.arch.merge(file.arch);
        self
    }
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConvertArgs {
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Checkpoint file; once for direct mode, twice (net1, net2) for cascade.
    #[arg(long)]
    pub model: Vec<PathBuf>,
    /// Input WAV file or directory of WAV files.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    /// Output WAV file, or directory when --in is a directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ConvertArgs {
    pub fn merge(mut self, file: Self) -> Self {
        merge_fields!(self, file; mode, input, out);
        if self.model.is_empty() {
            self.model = file.model;
        }
        self
    }
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalArgs {
    /// Reference WAV file or directory.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Converted WAV file or directory; directories pair up in sorted order.
    #[arg(long)]
    pub converted: Option<PathBuf>,
    /// frame or dtw [default: frame]
    #[arg(long)]
    pub align: Option<String>,
    /// Write the per-utterance report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl EvalArgs {
    pub fn merge(mut self, file: Self) -> Self {
        merge_fields!(self, file; target, converted, align, out);
        self
    }
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct BenchArgs {
    /// Number of synthetic utterances [default: 30].
    #[arg(long)]
    pub utterances: Option<usize>,
    /// Utterance length in seconds [default: 2].
    #[arg(long)]
    pub seconds: Option<f64>,
    /// Timed passes; the fastest counts [default: 3].
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Phone inventory size of the recognizer [default: 8].
    #[arg(long)]
    pub phones: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the table as TSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub arch: ArchArgs,
}

impl BenchArgs {
    pub fn merge(mut self, file: Self) -> Self {
        merge_fields!(self, file; utterances, seconds, repeats, phones, seed, out);
        self.arch.merge(file.arch);
        self
    }
}
