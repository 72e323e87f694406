//! `DLCK` checkpoint files (little-endian):
//!
//! ```text
//! "DLCK" | version u32 | run id (u32 len + utf-8) | epoch f64 | iteration u64
//!        | d u64 | d f64 weights
//!        | optimizer: kind u8 | lr f64 | momentum f64 | weight decay f64
//!                     | beta1 f64 | beta2 f64 | eps f64 | step u64
//!                     | n_buffers u8 | n_buffers * d f64
//!        | rng blob (u32 len + bytes)
//!        | lineage: flag u8 [| parent id string | spawn epoch f64 | inherited u8]
//!        | crc32 u32
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::model::NetworkSpec;
use crate::params::ParamVector;

use super::optim::{OptimizerConfig, OptimizerKind, OptimizerState};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub parent_run_id: String,
    pub spawn_epoch: f64,
    /// Whether the optimizer buffers were copied from the parent.
    pub inherited_optimizer: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub run_id: String,
    pub epoch: f64,
    pub iteration: u64,
    pub weights: Vec<f64>,
    pub optimizer: OptimizerState,
    pub rng_state: Vec<u8>,
    pub lineage: Option<Lineage>,
}

impl Checkpoint {
    pub fn params(&self, spec: &NetworkSpec) -> Result<ParamVector> {
        ParamVector::new(spec.layout(), self.weights.clone())
    }

    /// Stream seed stored in the RNG blob.
    pub fn stream_seed(&self) -> Result<u64> {
        let raw: [u8; 8] = self
            .rng_state
            .as_slice()
            .try_into()
            .map_err(|_| Error::invalid("rng state blob must hold 8 bytes"))?;
        Ok(u64::from_le_bytes(raw))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.blob(self.run_id.as_bytes());
        w.f64(self.epoch);
        w.u64(self.iteration);
        w.u64(self.weights.len() as u64);
        w.f64_slice(&self.weights);
        let o = &self.optimizer;
        w.u8(match o.config.kind {
            OptimizerKind::SgdMomentum => 0,
            OptimizerKind::Adam => 1,
        });
        w.f64(o.lr);
        w.f64(o.config.momentum);
        w.f64(o.config.weight_decay);
        w.f64(o.config.beta1);
        w.f64(o.config.beta2);
        w.f64(o.config.eps);
        w.u64(o.step);
        w.u8(o.buffers.len() as u8);
        for b in &o.buffers {
            w.f64_slice(b);
        }
        w.blob(&self.rng_state);
        match &self.lineage {
            None => w.u8(0),
            Some(l) => {
                w.u8(1);
                w.blob(l.parent_run_id.as_bytes());
                w.f64(l.spawn_epoch);
                w.u8(l.inherited_optimizer as u8);
            }
        }
        w.finish_with_crc()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::with_crc(bytes, CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version { expected: CHECKPOINT_VERSION, found: version });
        }
        let run_id = r.string()?;
        let epoch = r.f64()?;
        let iteration = r.u64()?;
        let d = r.u64()? as usize;
        let weights = r.f64_vec(d)?;
        let kind = match r.u8()? {
            0 => OptimizerKind::SgdMomentum,
            1 => OptimizerKind::Adam,
            t => return Err(Error::invalid(format!("unknown optimizer tag {t}"))),
        };
        let lr = r.f64()?;
        let config = OptimizerConfig {
            kind,
            momentum: r.f64()?,
            weight_decay: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
        };
        let step = r.u64()?;
        let n = r.u8()? as usize;
        let buffers = (0..n).map(|_| r.f64_vec(d)).collect::<Result<Vec<_>>>()?;
        let rng_state = r.blob()?.to_vec();
        let lineage = match r.u8()? {
            0 => None,
            1 => Some(Lineage {
                parent_run_id: r.string()?,
                spawn_epoch: r.f64()?,
                inherited_optimizer: r.u8()? != 0,
            }),
            t => return Err(Error::invalid(format!("bad lineage flag {t}"))),
        };
        r.finish()?;
        Ok(Checkpoint {
            run_id,
            epoch,
            iteration,
            weights,
            optimizer: OptimizerState { config, lr, step, buffers },
            rng_state,
            lineage,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
