//! Versioned binary weight files.
//!
//! Layout: magic `SRWT`, format version, a model-kind tag plus its spec
//! fields, then one named record per parameter (name, shape, raw f64
//! little-endian data), and a trailing SHA-256 checksum. Loading into a
//! model requires an exactly matching spec and parameter set.

use std::path::Path;

use super::{BlockVariant, Discriminator, Generator, GeneratorSpec};
use crate::bytes::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::models::DiscriminatorSpec;
use crate::rng::RngState;
use crate::tensor::{Parameter, Shape};

const MAGIC: &[u8; 4] = b"SRWT";
const VERSION: u32 = 1;
const KIND_GENERATOR: u8 = 1;
const KIND_DISCRIMINATOR: u8 = 2;

/// Parsed contents of a weight file.
pub struct WeightsPayload {
    pub spec: ModelSpecHeader,
    pub records: Vec<(String, Shape, Vec<f64>)>,
}

pub enum ModelSpecHeader {
    Generator(GeneratorSpec),
    Discriminator(DiscriminatorSpec),
}

fn write_generator_spec(w: &mut ByteWriter, spec: &GeneratorSpec) {
    w.u32(spec.num_blocks as u32);
    w.u32(spec.num_features as u32);
    w.u32(spec.growth_channels as u32);
    w.u32(spec.dense_layers_per_block as u32);
    w.u32(spec.scale as u32);
    w.u8(spec.variant.tag());
    w.u8(spec.noise_enabled as u8);
    w.u8(spec.noise_on_outer_residual as u8);
    w.f64(spec.residual_scaling);
}

fn read_generator_spec(r: &mut ByteReader) -> Result<GeneratorSpec> {
    Ok(GeneratorSpec {
        num_blocks: r.u32()? as usize,
        num_features: r.u32()? as usize,
        growth_channels: r.u32()? as usize,
        dense_layers_per_block: r.u32()? as usize,
        scale: r.u32()? as usize,
        variant: BlockVariant::from_tag(r.u8()?)?,
        noise_enabled: r.u8()? != 0,
        noise_on_outer_residual: r.u8()? != 0,
        residual_scaling: r.f64()?,
    })
}

fn write_discriminator_spec(w: &mut ByteWriter, spec: &DiscriminatorSpec) {
    w.u32(spec.input_size as u32);
    w.u32(spec.base_channels as u32);
    w.u32(spec.num_downsample_stages as u32);
    w.u8(spec.use_batchnorm as u8);
}

fn read_discriminator_spec(r: &mut ByteReader) -> Result<DiscriminatorSpec> {
    Ok(DiscriminatorSpec {
        input_size: r.u32()? as usize,
        base_channels: r.u32()? as usize,
        num_downsample_stages: r.u32()? as usize,
        use_batchnorm: r.u8()? != 0,
    })
}

fn encode(spec: &ModelSpecHeader, params: &[Parameter]) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    match spec {
        ModelSpecHeader::Generator(g) => {
            w.u8(KIND_GENERATOR);
            write_generator_spec(&mut w, g);
        }
        ModelSpecHeader::Discriminator(d) => {
            w.u8(KIND_DISCRIMINATOR);
            write_discriminator_spec(&mut w, d);
        }
    }
    w.u32(params.len() as u32);
    for p in params {
        w.str(&p.name);
        let s = p.tensor.shape();
        w.u32(s.n as u32);
        w.u32(s.c as u32);
        w.u32(s.h as u32);
        w.u32(s.w as u32);
        w.f64_slice(&p.tensor.data());
    }
    w.finish_with_checksum()
}

fn decode(bytes: &[u8], path: &Path) -> Result<WeightsPayload> {
    let mut r = ByteReader::with_checksum(bytes, path)?;
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("unsupported weight format version {version}"),
        });
    }
    let spec = match r.u8()? {
        KIND_GENERATOR => ModelSpecHeader::Generator(read_generator_spec(&mut r)?),
        KIND_DISCRIMINATOR => ModelSpecHeader::Discriminator(read_discriminator_spec(&mut r)?),
        other => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("unknown model kind tag {other}"),
            })
        }
    };
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.str()?;
        let shape = Shape::new(
            r.u32()? as usize,
            r.u32()? as usize,
            r.u32()? as usize,
            r.u32()? as usize,
        );
        let data = r.f64_vec(shape.numel())?;
        records.push((name, shape, data));
    }
    r.done()?;
    Ok(WeightsPayload { spec, records })
}

/// Fill a model's parameters from decoded records. The record set must match
/// the parameter set exactly (names and shapes).
fn apply_records(
    params: &[Parameter],
    records: &[(String, Shape, Vec<f64>)],
    path: &Path,
) -> Result<()> {
    if params.len() != records.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!(
                "parameter count mismatch: model has {}, file has {}",
                params.len(),
                records.len()
            ),
        });
    }
    for p in params {
        let Some((_, shape, data)) = records.iter().find(|(n, _, _)| n == &p.name) else {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("missing parameter record '{}'", p.name),
            });
        };
        if *shape != p.tensor.shape() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!(
                    "parameter '{}' has shape {} in file, expected {}",
                    p.name,
                    shape,
                    p.tensor.shape()
                ),
            });
        }
        p.tensor.set_data(data);
    }
    Ok(())
}

fn generator_spec_diff(a: &GeneratorSpec, b: &GeneratorSpec) -> Vec<String> {
    let mut fields = Vec::new();
    if a.num_blocks != b.num_blocks {
        fields.push("num_blocks".into());
    }
    if a.num_features != b.num_features {
        fields.push("num_features".into());
    }
    if a.growth_channels != b.growth_channels {
        fields.push("growth_channels".into());
    }
    if a.dense_layers_per_block != b.dense_layers_per_block {
        fields.push("dense_layers_per_block".into());
    }
    if a.scale != b.scale {
        fields.push("scale".into());
    }
    if a.variant != b.variant {
        fields.push("variant".into());
    }
    if a.noise_enabled != b.noise_enabled {
        fields.push("noise_enabled".into());
    }
    if a.noise_on_outer_residual != b.noise_on_outer_residual {
        fields.push("noise_on_outer_residual".into());
    }
    if a.residual_scaling != b.residual_scaling {
        fields.push("residual_scaling".into());
    }
    fields
}

fn discriminator_spec_diff(a: &DiscriminatorSpec, b: &DiscriminatorSpec) -> Vec<String> {
    let mut fields = Vec::new();
    if a.input_size != b.input_size {
        fields.push("input_size".into());
    }
    if a.base_channels != b.base_channels {
        fields.push("base_channels".into());
    }
    if a.num_downsample_stages != b.num_downsample_stages {
        fields.push("num_downsample_stages".into());
    }
    if a.use_batchnorm != b.use_batchnorm {
        fields.push("use_batchnorm".into());
    }
    fields
}

/// Save any payload to a file.
pub fn save_weights_file(payload: &WeightsPayload, path: &Path) -> Result<()> {
    let params: Vec<Parameter> = payload
        .records
        .iter()
        .map(|(name, shape, data)| {
            Parameter::frozen(
                name.clone(),
                crate::tensor::Tensor::from_vec(data.clone(), *shape).expect("consistent"),
            )
        })
        .collect();
    crate::bytes::write_atomic(path, &encode(&payload.spec, &params))
}

/// Load and checksum-verify a weight file.
pub fn load_weights_file(path: &Path) -> Result<WeightsPayload> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

impl Generator {
    pub fn to_weight_bytes(&self) -> Vec<u8> {
        encode(
            &ModelSpecHeader::Generator(self.spec().clone()),
            &self.parameters(),
        )
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        crate::bytes::write_atomic(path, &self.to_weight_bytes())
    }

    /// Load weights from file into this model; the file spec must match.
    pub fn load_weights(&self, path: &Path) -> Result<()> {
        let payload = load_weights_file(path)?;
        self.load_payload(&payload, path)
    }

    fn load_payload(&self, payload: &WeightsPayload, path: &Path) -> Result<()> {
        let ModelSpecHeader::Generator(file_spec) = &payload.spec else {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: "file holds discriminator weights, expected generator".into(),
            });
        };
        let diff = generator_spec_diff(self.spec(), file_spec);
        if !diff.is_empty() {
            return Err(Error::Incompatible { fields: diff });
        }
        apply_records(&self.parameters(), &payload.records, path)
    }

    /// Construct a generator directly from a weight file.
    pub fn from_weight_bytes(bytes: &[u8], path: &Path) -> Result<Generator> {
        let payload = decode(bytes, path)?;
        let ModelSpecHeader::Generator(spec) = &payload.spec else {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: "file holds discriminator weights, expected generator".into(),
            });
        };
        // Init values are immediately overwritten by the records.
        let gen = Generator::new(spec, &mut RngState::new(0))?;
        apply_records(&gen.parameters(), &payload.records, path)?;
        Ok(gen)
    }

    pub fn from_weights(path: &Path) -> Result<Generator> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_weight_bytes(&bytes, path)
    }
}

impl Discriminator {
    pub fn to_weight_bytes(&self) -> Vec<u8> {
        encode(
            &ModelSpecHeader::Discriminator(self.spec().clone()),
            &self.parameters(),
        )
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        crate::bytes::write_atomic(path, &self.to_weight_bytes())
    }

    pub fn load_weights(&self, path: &Path) -> Result<()> {
        let payload = load_weights_file(path)?;
        let ModelSpecHeader::Discriminator(file_spec) = &payload.spec else {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: "file holds generator weights, expected discriminator".into(),
            });
        };
        let diff = discriminator_spec_diff(self.spec(), file_spec);
        if !diff.is_empty() {
            return Err(Error::Incompatible { fields: diff });
        }
        apply_records(&self.parameters(), &payload.records, path)
    }

    pub fn from_weight_bytes(bytes: &[u8], path: &Path) -> Result<Discriminator> {
        let payload = decode(bytes, path)?;
        let ModelSpecHeader::Discriminator(spec) = &payload.spec else {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: "file holds generator weights, expected discriminator".into(),
            });
        };
        let disc = Discriminator::new(spec, &mut RngState::new(0))?;
        apply_records(&disc.parameters(), &payload.records, path)?;
        Ok(disc)
    }
}
