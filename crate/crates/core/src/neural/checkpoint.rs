//! Versioned binary checkpoints for network parameters.
//!
//! Layout mirrors the dataset format: magic, version, JSON header (graph
//! size, layer dims, seed lineage), float64 payload in the canonical flat
//! parameter order, CRC32 over everything before it.

use super::params::{GainNetwork, NetDims};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 4] = b"GTCP";
const FORMAT_VERSION: u32 = 1;

/// Where the parameters came from: seeds and the hash of the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SeedLineage {
    pub init_seed: u64,
    pub train_seed: Option<u64>,
    pub dataset_hash: Option<String>,
    /// Short (16-hex) per-trajectory hashes of the training set, for
    /// train/test disjointness checks.
    pub trajectory_hashes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    n: usize,
    layer_dims: Vec<usize>,
    param_count: usize,
    lineage: SeedLineage,
    #[serde(default)]
    feature_scale: Option<Vec<f64>>,
}

/// A parameter checkpoint plus its lineage.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: GainNetwork,
    pub lineage: SeedLineage,
}

impl Checkpoint {
    pub fn new(net: GainNetwork, lineage: SeedLineage) -> Self {
        Self { net, lineage }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = NetDims::new(self.net.n());
        let header = Header {
            n: d.n,
            layer_dims: vec![d.input(), d.fc1(), d.hidden(), d.hidden(), d.fc2(), d.output()],
            param_count: self.net.param_count(),
            lineage: self.lineage.clone(),
            feature_scale: self.net.feature_scale.as_ref().map(|s| s.iter().copied().collect()),
        };
        let header_json = serde_json::to_vec(&header).expect("header serialization");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_json);
        for x in self.net.to_flat().iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::InvalidInput("checkpoint file truncated".into()));
        }
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        if &body[0..4] != MAGIC {
            return Err(Error::InvalidInput("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::FormatVersionMismatch { found: version, supported: FORMAT_VERSION });
        }
        let header_len = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
        if body.len() < 12 + header_len {
            return Err(Error::InvalidInput("checkpoint header truncated".into()));
        }
        let header: Header = serde_json::from_slice(&body[12..12 + header_len])?;
        let payload = &body[12 + header_len..];
        if payload.len() != header.param_count * 8 {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "checkpoint payload holds {} floats, header says {}",
                    payload.len() / 8,
                    header.param_count
                ),
            });
        }
        let flat = nalgebra::DVector::from_iterator(
            header.param_count,
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())),
        );
        let mut net = GainNetwork::from_flat(header.n, &flat)?;
        net.feature_scale = header.feature_scale.map(nalgebra::DVector::from_vec);
        Ok(Self { net, lineage: header.lineage })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}
