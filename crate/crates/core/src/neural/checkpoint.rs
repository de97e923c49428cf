//! Binary checkpoint format.
//!
//! ```text
//! "PVC1"            magic
//! u32               format version
//! u32 + bytes       JSON header (stage, configs, conventions, provenance)
//! u32               tensor count
//! per tensor:       u32 name length, name bytes, u32 ndim, u64 dims..., f64 data (row-major)
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Network, NetworkConfig};
use crate::dsp::DspConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PVC1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub const GRU_CONVENTION: &str = "gates=z,r,n;z,r=sigmoid;n=tanh(x*Wn+(r*h)*Un+bn);h=(1-z)*n+z*h_prev";
pub const BATCHNORM_CONVENTION: &str = "eps=1e-5;momentum=0.1;biased_batch_var;running_stats_at_inference";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Net1,
    Net2,
    Net3,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Net1 => "net1",
            Stage::Net2 => "net2",
            Stage::Net3 => "net3",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parent {
    pub stage: Stage,
    /// hex SHA-256 of the parent checkpoint bytes
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub stage: Stage,
    pub network: NetworkConfig,
    pub dsp: DspConfig,
    pub gru_convention: String,
    pub batchnorm_convention: String,
    pub parents: Vec<Parent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub network: Network,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn write_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Checkpoint("length exceeds u32".into()))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Checkpoint {
    pub fn new(stage: Stage, network: Network, dsp: DspConfig, parents: Vec<Parent>) -> Self {
        Self {
            header: CheckpointHeader {
                stage,
                network: network.config().clone(),
                dsp,
                gru_convention: GRU_CONVENTION.into(),
                batchnorm_convention: BATCHNORM_CONVENTION.into(),
                parents,
            },
            network,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&self.header)
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        write_len(&mut out, header.len())?;
        out.extend_from_slice(&header);
        let net = &self.network;
        let tensors: Vec<(&String, &Array2<f64>)> = net
            .param_names()
            .iter()
            .zip(net.params())
            .chain(net.buffer_names().iter().zip(net.buffers()))
            .collect();
        write_len(&mut out, tensors.len())?;
        for (name, value) in tensors {
            write_len(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            write_len(&mut out, 2)?;
            for d in value.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in value.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let header_len = r.u32()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if header.gru_convention != GRU_CONVENTION {
            return Err(Error::Checkpoint(format!(
                "unsupported GRU convention {:?}",
                header.gru_convention
            )));
        }
        if header.batchnorm_convention != BATCHNORM_CONVENTION {
            return Err(Error::Checkpoint(format!(
                "unsupported batch-norm convention {:?}",
                header.batchnorm_convention
            )));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let ndim = r.u32()?;
            if ndim != 2 {
                return Err(Error::Checkpoint(format!("{name}: expected 2 dims, found {ndim}")));
            }
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let value = Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            tensors.push((name, value));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after tensors".into()));
        }
        let mut network = Network::from_parts(header.network.clone(), tensors)?;
        network.set_mode(super::Mode::Infer);
        Ok(Self { header, network })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads a checkpoint and checks it carries the given stage tag.
    pub fn load_stage(path: &Path, stage: Stage) -> Result<(Self, String)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt = Self::from_bytes(&bytes)?;
        if ckpt.header.stage != stage {
            return Err(Error::Checkpoint(format!(
                "{}: expected a {stage} checkpoint, found {}",
                path.display(),
                ckpt.header.stage
            )));
        }
        Ok((ckpt, sha256_hex(&bytes)))
    }
}
