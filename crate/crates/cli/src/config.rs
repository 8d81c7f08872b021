//! Run configuration files: TOML with flat sections of key = value pairs.
//! Unknown keys are rejected. See `configs/desk.toml` for a complete
//! commented example.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sr_core::data::AugmentationSpec;
use sr_core::losses::LossWeights;
use sr_core::models::{BlockVariant, DiscriminatorSpec, GeneratorSpec};
use sr_core::training::{AdamHyper, Phase, TrainConfig};
use sr_core::Error;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub model: ModelSection,
    #[serde(default)]
    pub discriminator: DiscriminatorSection,
    pub data: DataSection,
    pub train: TrainSection,
    #[serde(default)]
    pub loss: LossSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum BlockName {
    Rrdb,
    Rrdrb,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub block: BlockName,
    pub noise: bool,
    pub num_blocks: usize,
    pub num_features: usize,
    pub growth_channels: usize,
    #[serde(default = "default_dense_layers")]
    pub dense_layers: usize,
    #[serde(default = "default_residual_scaling")]
    pub residual_scaling: f64,
    #[serde(default)]
    pub noise_on_outer_residual: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorSection {
    pub base_channels: usize,
    pub downsample_stages: usize,
    #[serde(default = "default_true")]
    pub batchnorm: bool,
}

impl Default for DiscriminatorSection {
    fn default() -> Self {
        Self {
            base_channels: 64,
            downsample_stages: 5,
            batchnorm: true,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train_dir: PathBuf,
    pub hr_crop: usize,
    pub batch: usize,
    #[serde(default = "default_true")]
    pub flip: bool,
    #[serde(default = "default_rotations")]
    pub rotations: Vec<u16>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_milestones")]
    pub lr_milestones: Vec<u64>,
    pub pretrain_iters: u64,
    pub gan_iters: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    pub output_dir: PathBuf,
    /// Pretrain checkpoint used to initialize the generator in the GAN
    /// phase. Empty or absent: fresh initialization.
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    #[serde(default = "default_perceptual_weight")]
    pub perceptual_weight: f64,
    #[serde(default = "default_adversarial_weight")]
    pub adversarial_weight: f64,
    #[serde(default = "default_pixel_weight")]
    pub pixel_weight: f64,
    #[serde(default = "default_feature_depth")]
    pub feature_depth: usize,
    #[serde(default = "default_feature_seed")]
    pub feature_seed: u64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            perceptual_weight: default_perceptual_weight(),
            adversarial_weight: default_adversarial_weight(),
            pixel_weight: default_pixel_weight(),
            feature_depth: default_feature_depth(),
            feature_seed: default_feature_seed(),
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_dense_layers() -> usize {
    5
}
fn default_residual_scaling() -> f64 {
    0.2
}
fn default_rotations() -> Vec<u16> {
    vec![0, 90, 180, 270]
}
fn default_base_lr() -> f64 {
    1e-4
}
fn default_milestones() -> Vec<u64> {
    vec![50_000, 100_000, 200_000, 300_000]
}
fn default_checkpoint_every() -> u64 {
    100
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_perceptual_weight() -> f64 {
    1.0
}
fn default_adversarial_weight() -> f64 {
    5e-3
}
fn default_pixel_weight() -> f64 {
    1e-2
}
fn default_feature_depth() -> usize {
    3
}
fn default_feature_seed() -> u64 {
    0x5EED
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            num_blocks: self.model.num_blocks,
            num_features: self.model.num_features,
            growth_channels: self.model.growth_channels,
            dense_layers_per_block: self.model.dense_layers,
            scale: 4,
            variant: match self.model.block {
                BlockName::Rrdb => BlockVariant::DenseBlock,
                BlockName::Rrdrb => BlockVariant::ResidualDenseBlock,
            },
            noise_enabled: self.model.noise,
            noise_on_outer_residual: self.model.noise_on_outer_residual,
            residual_scaling: self.model.residual_scaling,
        }
    }

    pub fn discriminator_spec(&self) -> DiscriminatorSpec {
        DiscriminatorSpec {
            input_size: self.data.hr_crop,
            base_channels: self.discriminator.base_channels,
            num_downsample_stages: self.discriminator.downsample_stages,
            use_batchnorm: self.discriminator.batchnorm,
        }
    }

    /// Assemble the TrainConfig for one phase; `seed_override` comes from
    /// the command line.
    pub fn train_config(&self, phase: Phase, seed_override: Option<u64>) -> TrainConfig {
        TrainConfig {
            phase,
            total_iters: match phase {
                Phase::PsnrPretrain => self.train.pretrain_iters,
                Phase::Gan => self.train.gan_iters,
            },
            base_lr: self.train.base_lr,
            lr_milestones: self.train.lr_milestones.clone(),
            batch: self.data.batch,
            hr_crop: self.data.hr_crop,
            loss_weights: LossWeights {
                perceptual: self.loss.perceptual_weight,
                adversarial: self.loss.adversarial_weight,
                pixel: self.loss.pixel_weight,
            },
            adam: AdamHyper {
                beta1: self.train.adam_beta1,
                beta2: self.train.adam_beta2,
                eps: self.train.adam_eps,
            },
            seed: seed_override.unwrap_or(self.train.seed),
            checkpoint_every: self.train.checkpoint_every,
            generator: self.generator_spec(),
            discriminator: self.discriminator_spec(),
            augmentation: AugmentationSpec {
                horizontal_flip: self.data.flip,
                rotations: self.data.rotations.clone(),
            },
            feature_depth: self.loss.feature_depth,
            feature_seed: self.loss.feature_seed,
        }
    }
}
