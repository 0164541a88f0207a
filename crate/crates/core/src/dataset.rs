//! Trajectory and dataset containers with binary persistence.
//!
//! Datasets are float64-heavy (thousands of trajectories), so the primary
//! format is little-endian binary: a magic tag, a format version, a JSON
//! header with the metadata and dimensions, the raw payload, and a CRC32 over
//! everything before it. A CSV export is provided for interop.

use crate::dynamics::{NoiseProcess, StateSpaceModel};
use crate::error::{Error, Result};
use crate::util::ContentHasher;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"GTDS";
const FORMAT_VERSION: u32 = 1;

/// One simulated state/observation sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x0: DVector<f64>,
    pub states: Vec<DVector<f64>>,
    pub observations: Vec<DVector<f64>>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n(&self) -> usize {
        self.x0.len()
    }

    /// Stable content hash over the float payload.
    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        h.update(&self.seed.to_le_bytes());
        h.update_vector(&self.x0);
        for s in &self.states {
            h.update_vector(s);
        }
        for o in &self.observations {
            h.update_vector(o);
        }
        h.finish()
    }
}

/// Provenance recorded alongside every dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub scenario: String,
    pub n: usize,
    pub process_noise: NoiseProcess,
    pub meas_noise: NoiseProcess,
    pub graph_hash: String,
    pub seed: u64,
    pub x0: Vec<f64>,
}

impl DatasetMetadata {
    pub fn new(scenario: &str, model: &StateSpaceModel, graph_hash: String, seed: u64) -> Self {
        Self {
            scenario: scenario.to_string(),
            n: model.n(),
            process_noise: model.process_noise,
            meas_noise: model.meas_noise,
            graph_hash,
            seed,
            x0: model.x0.iter().copied().collect(),
        }
    }

    /// Metadata stub for unit tests that do not care about provenance.
    pub fn for_tests(scenario: &str, model: &StateSpaceModel, seed: u64) -> Self {
        Self::new(scenario, model, "test".into(), seed)
    }
}

/// A set of trajectories sharing one model and graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub metadata: DatasetMetadata,
}

#[derive(Serialize, Deserialize)]
struct Header {
    metadata: DatasetMetadata,
    n: usize,
    d: usize,
    t_len: Vec<usize>,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>, metadata: DatasetMetadata) -> Self {
        debug_assert!(trajectories.iter().all(|t| t.n() == metadata.n));
        Self { trajectories, metadata }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn n(&self) -> usize {
        self.metadata.n
    }

    /// Hash of the serialized dataset; identical content gives identical
    /// hashes across runs and platforms.
    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        h.update(&self.to_bytes());
        h.finish()
    }

    /// Per-trajectory hashes, used to enforce train/test disjointness.
    pub fn trajectory_hashes(&self) -> Vec<String> {
        self.trajectories.iter().map(Trajectory::content_hash).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            metadata: self.metadata.clone(),
            n: self.n(),
            d: self.len(),
            t_len: self.trajectories.iter().map(Trajectory::len).collect(),
        };
        let header_json = serde_json::to_vec(&header).expect("header serialization");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_json);
        for traj in &self.trajectories {
            out.extend_from_slice(&traj.seed.to_le_bytes());
            push_vector(&mut out, &traj.x0);
            for s in &traj.states {
                push_vector(&mut out, s);
            }
            for o in &traj.observations {
                push_vector(&mut out, o);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 + 4 {
            return Err(Error::InvalidInput("dataset file truncated".into()));
        }
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        if &body[0..4] != MAGIC {
            return Err(Error::InvalidInput("not a dataset file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::FormatVersionMismatch { found: version, supported: FORMAT_VERSION });
        }
        let header_len = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
        if body.len() < 12 + header_len {
            return Err(Error::InvalidInput("dataset header truncated".into()));
        }
        let header: Header = serde_json::from_slice(&body[12..12 + header_len])?;
        let mut cursor = 12 + header_len;
        let n = header.n;
        let mut trajectories = Vec::with_capacity(header.d);
        for t_len in &header.t_len {
            let seed = read_u64(body, &mut cursor)?;
            let x0 = read_vector(body, &mut cursor, n)?;
            let mut states = Vec::with_capacity(*t_len);
            for _ in 0..*t_len {
                states.push(read_vector(body, &mut cursor, n)?);
            }
            let mut observations = Vec::with_capacity(*t_len);
            for _ in 0..*t_len {
                observations.push(read_vector(body, &mut cursor, n)?);
            }
            trajectories.push(Trajectory { x0, states, observations, seed });
        }
        if cursor != body.len() {
            return Err(Error::InvalidInput("trailing bytes in dataset file".into()));
        }
        Ok(Self::new(trajectories, header.metadata))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    /// Writes one CSV per trajectory (`traj_0000.csv`, ...) with columns
    /// t, x_1..x_N, y_1..y_N. Floats are printed shortest-roundtrip.
    pub fn export_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let n = self.n();
        for (i, traj) in self.trajectories.iter().enumerate() {
            let mut file = std::io::BufWriter::new(std::fs::File::create(
                dir.join(format!("traj_{i:04}.csv")),
            )?);
            write!(file, "t")?;
            for c in 1..=n {
                write!(file, ",x_{c}")?;
            }
            for c in 1..=n {
                write!(file, ",y_{c}")?;
            }
            writeln!(file)?;
            for t in 0..traj.len() {
                write!(file, "{}", t + 1)?;
                for v in traj.states[t].iter() {
                    write!(file, ",{v}")?;
                }
                for v in traj.observations[t].iter() {
                    write!(file, ",{v}")?;
                }
                writeln!(file)?;
            }
        }
        Ok(())
    }

    /// First `count` trajectories as a new dataset (shared metadata).
    pub fn take(&self, count: usize) -> Dataset {
        Dataset::new(self.trajectories[..count.min(self.len())].to_vec(), self.metadata.clone())
    }
}

fn push_vector(out: &mut Vec<u8>, v: &DVector<f64>) {
    for x in v.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn read_u64(bytes: &[u8], cursor: &mut usize) -> Result<u64> {
    let end = *cursor + 8;
    if end > bytes.len() {
        return Err(Error::InvalidInput("dataset payload truncated".into()));
    }
    let v = u64::from_le_bytes(bytes[*cursor..end].try_into().unwrap());
    *cursor = end;
    Ok(v)
}

fn read_vector(bytes: &[u8], cursor: &mut usize, n: usize) -> Result<DVector<f64>> {
    let end = *cursor + 8 * n;
    if end > bytes.len() {
        return Err(Error::InvalidInput("dataset payload truncated".into()));
    }
    let v = DVector::from_iterator(
        n,
        bytes[*cursor..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap())),
    );
    *cursor = end;
    Ok(v)
}
