//! Binary model checkpoints.
//!
//! ```text
//! b"DHSM" | u32 version = 1
//! u64 config length | config JSON bytes
//! u32 tensor count, then per tensor:
//!     u32 name length | name | u32 rank | rank x u64 dims | f64 values (row-major)
//! ```
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::features::{read_exact, read_string, read_u32, read_u64};
use crate::params::Params;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DHSM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// The JSON config block: architecture plus free-form metadata the caller
/// needs to rebuild the inputs (feature selection, seed, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: CheckpointConfig,
    pub params: Params,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let config = serde_json::to_vec(&self.config).map_err(std::io::Error::other)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(config.len() as u64).to_le_bytes())?;
        w.write_all(&config)?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, value) in self.params.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&2u32.to_le_bytes())?;
            w.write_all(&(value.nrows() as u64).to_le_bytes())?;
            w.write_all(&(value.ncols() as u64).to_le_bytes())?;
            for x in value.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = read_u64(&mut r)? as usize;
        if len > 1 << 24 {
            return Err(Error::Format(format!("implausible config length {len}")));
        }
        let mut buf = vec![0u8; len];
        read_exact(&mut r, &mut buf)?;
        let config: CheckpointConfig = serde_json::from_slice(&buf)
            .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;

        let count = read_u32(&mut r)? as usize;
        let mut params = Params::new();
        for _ in 0..count {
            let name = read_string(&mut r)?;
            let rank = read_u32(&mut r)? as usize;
            if !(1..=2).contains(&rank) {
                return Err(Error::Format(format!("tensor {name}: unsupported rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u64(&mut r)? as usize);
            }
            let (rows, cols) = if rank == 1 { (1, dims[0]) } else { (dims[0], dims[1]) };
            let numel = rows
                .checked_mul(cols)
                .filter(|&n| n <= 1 << 28)
                .ok_or_else(|| Error::Format(format!("tensor {name}: implausible size")))?;
            let mut bytes = vec![0u8; numel * 8];
            read_exact(&mut r, &mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let value = Array2::from_shape_vec((rows, cols), data).expect("size checked");
            if params.id_of(&name).is_some() {
                return Err(Error::Format(format!("duplicate tensor {name}")));
            }
            params.add(name, value);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(|e| Error::Format(e.to_string()))? != 0 {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Ok(Checkpoint { config, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    /// Rebuilds the model and checks every stored tensor against the
    /// architecture's names and shapes.
    pub fn restore(&self) -> Result<(Model, Params)> {
        let (model, mut params) =
            Model::new(self.config.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        if params.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, architecture needs {}",
                self.params.len(),
                params.len()
            )));
        }
        for id in params.ids().collect::<Vec<_>>() {
            let name = params.name(id).to_string();
            let stored = self
                .params
                .id_of(&name)
                .map(|sid| self.params.get(sid))
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
            if stored.dim() != params.get(id).dim() {
                return Err(Error::Format(format!(
                    "tensor {name}: stored shape {:?}, expected {:?}",
                    stored.dim(),
                    params.get(id).dim()
                )));
            }
            *params.get_mut(id) = stored.clone();
        }
        Ok((model, params))
    }
}
