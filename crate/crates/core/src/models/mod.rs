//! Generator and discriminator architectures.
//!
//! The generator family follows the RRDB layout: a head conv, a trunk of
//! residual-in-residual blocks, a global skip, two nearest-neighbour ×2
//! upsampling stages, and a two-conv tail. Blocks come in two interior
//! variants: the plain dense block, and the residual dense block that adds
//! a parameter-free skip between equal-width layers two apart. Either kind
//! can inject per-channel scaled Gaussian noise after each inner block.

mod discriminator;
mod generator;
mod serialize;

pub use discriminator::Discriminator;
pub use generator::Generator;
pub use serialize::{load_weights_file, save_weights_file, WeightsPayload};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{conv2d, leaky_relu, Parameter, Shape, Tensor};

/// Leaky-ReLU slope used across both networks.
pub const LRELU_SLOPE: f64 = 0.2;

/// Interior wiring of the dense blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockVariant {
    /// Plain dense block: every layer consumes the concatenation of the
    /// block input and all previous layer outputs.
    DenseBlock,
    /// Dense block with extra residuals between equal-width layers two
    /// apart (layer 3 adds layer 1's output, layer 4 adds layer 2's, ...).
    ResidualDenseBlock,
}

impl BlockVariant {
    pub fn tag(&self) -> u8 {
        match self {
            BlockVariant::DenseBlock => 0,
            BlockVariant::ResidualDenseBlock => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(BlockVariant::DenseBlock),
            1 => Ok(BlockVariant::ResidualDenseBlock),
            other => Err(Error::Config(format!("unknown block variant tag {other}"))),
        }
    }
}

/// Generator hyperparameters. Defaults follow the full-scale 23-block
/// profile; see `TrainConfig::desk_profile` for the CPU-friendly one.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub num_blocks: usize,
    pub num_features: usize,
    pub growth_channels: usize,
    pub dense_layers_per_block: usize,
    pub scale: usize,
    pub variant: BlockVariant,
    pub noise_enabled: bool,
    /// Also inject noise after each block-level residual, not only after the
    /// inner dense blocks.
    pub noise_on_outer_residual: bool,
    pub residual_scaling: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            num_blocks: 23,
            num_features: 64,
            growth_channels: 32,
            dense_layers_per_block: 5,
            scale: 4,
            variant: BlockVariant::ResidualDenseBlock,
            noise_enabled: false,
            noise_on_outer_residual: false,
            residual_scaling: 0.2,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks < 1 {
            return Err(Error::Config("num_blocks must be >= 1".into()));
        }
        if self.num_features < 1 || self.growth_channels < 1 {
            return Err(Error::Config(
                "num_features and growth_channels must be >= 1".into(),
            ));
        }
        if self.scale != 4 {
            return Err(Error::Config(format!(
                "only x4 scale is supported, got x{}",
                self.scale
            )));
        }
        if self.dense_layers_per_block < 2 {
            return Err(Error::Config(
                "dense_layers_per_block must be >= 2".into(),
            ));
        }
        if !(self.residual_scaling > 0.0 && self.residual_scaling <= 1.0) {
            return Err(Error::Config(format!(
                "residual_scaling must be in (0, 1], got {}",
                self.residual_scaling
            )));
        }
        if self.noise_on_outer_residual && !self.noise_enabled {
            return Err(Error::Config(
                "noise_on_outer_residual requires noise_enabled".into(),
            ));
        }
        Ok(())
    }
}

/// Discriminator hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorSpec {
    /// Side length of the (square) input crop.
    pub input_size: usize,
    pub base_channels: usize,
    pub num_downsample_stages: usize,
    pub use_batchnorm: bool,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            input_size: 128,
            base_channels: 64,
            num_downsample_stages: 5,
            use_batchnorm: true,
        }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 1 {
            return Err(Error::Config("base_channels must be >= 1".into()));
        }
        if self.num_downsample_stages < 1 {
            return Err(Error::Config("num_downsample_stages must be >= 1".into()));
        }
        let div = 1usize << self.num_downsample_stages;
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(Error::Config(format!(
                "input_size {} must be divisible by 2^{}",
                self.input_size, self.num_downsample_stages
            )));
        }
        Ok(())
    }

    /// Channel width after downsample stage `k` (0-based); doubling capped
    /// at 8x base.
    pub(crate) fn stage_channels(&self, k: usize) -> usize {
        self.base_channels * (1usize << (k + 1).min(3))
    }
}

/// A conv layer bundling weight, bias, and geometry.
#[derive(Clone)]
pub(crate) struct Conv2dLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dLayer {
    /// Kaiming fan-in normal initialization, scaled by `init_scale`; zero
    /// bias. The small-scale variant (0.1) is used for all dense-block convs.
    pub fn init(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init_scale: f64,
        rng: &mut RngState,
    ) -> Self {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let std = (2.0 / fan_in).sqrt() * init_scale;
        let shape = Shape::new(out_ch, in_ch, kernel, kernel);
        let data: Vec<f64> = (0..shape.numel()).map(|_| rng.normal() * std).collect();
        let weight = Tensor::from_vec(data, shape).expect("consistent");
        let bias = Tensor::zeros(Shape::new(1, out_ch, 1, 1));
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight, &self.bias, self.stride, self.padding)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<Parameter>) {
        out.push(Parameter::new(format!("{prefix}.weight"), self.weight.clone()));
        out.push(Parameter::new(format!("{prefix}.bias"), self.bias.clone()));
    }
}

pub(crate) fn lrelu(x: &Tensor) -> Result<Tensor> {
    leaky_relu(x, LRELU_SLOPE)
}

/// Copy parameters by name from `src` into `dst` where names match.
/// Returns the number of copied parameters.
pub fn transplant_params(dst: &[Parameter], src: &[Parameter]) -> usize {
    let mut copied = 0;
    for d in dst {
        if let Some(s) = src.iter().find(|s| s.name == d.name) {
            if s.tensor.shape() == d.tensor.shape() {
                d.tensor.set_data(&s.tensor.to_vec());
                copied += 1;
            }
        }
    }
    copied
}
