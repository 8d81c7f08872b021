//! Resumable training snapshots.
//!
//! A checkpoint bundles the two weight-file payloads, both Adam states, the
//! master seed, and the config hash in one versioned, checksummed container.
//! Because every stochastic stream derives from `(seed, iteration)`, this is
//! all the state needed to continue a run bit-exactly.

use std::path::Path;

use super::{Phase, TrainConfig};
use crate::bytes::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::models::{Discriminator, Generator};
use crate::tensor::AdamState;

const MAGIC: &[u8; 4] = b"SRCK";
const VERSION: u32 = 1;

#[derive(Clone)]
pub struct Checkpoint {
    pub phase: Phase,
    /// Completed iterations.
    pub iteration: u64,
    pub seed: u64,
    pub config_hash: [u8; 32],
    /// Generator weight-file payload bytes.
    pub generator: Vec<u8>,
    /// Discriminator payload (GAN phase only).
    pub discriminator: Option<Vec<u8>>,
    pub gen_adam: AdamState,
    pub disc_adam: Option<AdamState>,
}

fn write_adam(w: &mut ByteWriter, state: &AdamState) {
    w.f64(state.beta1);
    w.f64(state.beta2);
    w.f64(state.eps);
    w.u64(state.t);
    let slots: Vec<_> = state.slots().collect();
    w.u32(slots.len() as u32);
    for (m, v) in slots {
        w.u32(m.len() as u32);
        w.f64_slice(m);
        w.f64_slice(v);
    }
}

fn read_adam(r: &mut ByteReader) -> Result<AdamState> {
    let beta1 = r.f64()?;
    let beta2 = r.f64()?;
    let eps = r.f64()?;
    let t = r.u64()?;
    let count = r.u32()? as usize;
    let mut slots = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let m = r.f64_vec(len)?;
        let v = r.f64_vec(len)?;
        slots.push((m, v));
    }
    Ok(AdamState::from_parts(beta1, beta2, eps, t, slots))
}

impl Checkpoint {
    pub(crate) fn capture(
        cfg: &TrainConfig,
        iteration: u64,
        gen: &Generator,
        disc: Option<&Discriminator>,
        gen_adam: &AdamState,
        disc_adam: Option<&AdamState>,
    ) -> Self {
        Self {
            phase: cfg.phase,
            iteration,
            seed: cfg.seed,
            config_hash: cfg.hash(),
            generator: gen.to_weight_bytes(),
            discriminator: disc.map(|d| d.to_weight_bytes()),
            gen_adam: gen_adam.clone(),
            disc_adam: disc_adam.map(|a| a.clone()),
        }
    }

    pub fn restore_generator(&self) -> Result<Generator> {
        Generator::from_weight_bytes(&self.generator, Path::new("<checkpoint generator>"))
    }

    pub fn restore_discriminator(&self) -> Result<Option<Discriminator>> {
        self.discriminator
            .as_ref()
            .map(|bytes| {
                Discriminator::from_weight_bytes(bytes, Path::new("<checkpoint discriminator>"))
            })
            .transpose()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u8(self.phase.tag());
        w.u64(self.iteration);
        w.u64(self.seed);
        w.bytes(&self.config_hash);
        w.u64(self.generator.len() as u64);
        w.bytes(&self.generator);
        match &self.discriminator {
            Some(bytes) => {
                w.u8(1);
                w.u64(bytes.len() as u64);
                w.bytes(bytes);
            }
            None => w.u8(0),
        }
        write_adam(&mut w, &self.gen_adam);
        match &self.disc_adam {
            Some(a) => {
                w.u8(1);
                write_adam(&mut w, a);
            }
            None => w.u8(0),
        }
        w.finish_with_checksum()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::with_checksum(bytes, path)?;
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("unsupported checkpoint version {version}"),
            });
        }
        let phase = Phase::from_tag(r.u8()?)?;
        let iteration = r.u64()?;
        let seed = r.u64()?;
        let config_hash: [u8; 32] = r.bytes(32)?.try_into().expect("fixed length");
        let gen_len = r.u64()? as usize;
        let generator = r.bytes(gen_len)?;
        let discriminator = match r.u8()? {
            0 => None,
            _ => {
                let len = r.u64()? as usize;
                Some(r.bytes(len)?)
            }
        };
        let gen_adam = read_adam(&mut r)?;
        let disc_adam = match r.u8()? {
            0 => None,
            _ => Some(read_adam(&mut r)?),
        };
        r.done()?;
        Ok(Self {
            phase,
            iteration,
            seed,
            config_hash,
            generator,
            discriminator,
            gen_adam,
            disc_adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::bytes::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
