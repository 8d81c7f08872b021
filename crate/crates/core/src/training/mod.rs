//! Two-phase training: PSNR-oriented pretraining (pixel L1 only), then GAN
//! fine-tuning with alternating relativistic-average discriminator and
//! composite generator updates.
//!
//! Determinism contract: given a config (including its seed), the whole run
//! (init draws, batch order, crops, augmentation, noise, updates) is a pure
//! function of that config. Batches and noise derive from
//! `(seed, iteration)`, so resuming from a checkpoint continues bit-exactly.

mod checkpoint;

pub use checkpoint::Checkpoint;

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::{AugmentationSpec, BatchIterator, DatasetIndex};
use crate::error::{Error, Result};
use crate::losses::{
    pixel_l1, ragan_d_loss, total_generator_loss, FeatureExtractor, LossWeights,
};
use crate::models::{Discriminator, DiscriminatorSpec, Generator, GeneratorSpec};
use crate::rng::{derive_seed, RngState};
use crate::tensor::{adam_step, backward, no_grad, zero_grads, AdamState, Parameter};

const LANE_GEN_INIT: u64 = 0x47_45;
const LANE_DISC_INIT: u64 = 0x44_49;
const LANE_DATA: u64 = 0x44_41;
const LANE_NOISE: u64 = 0x4E_4F;

/// Training phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    PsnrPretrain,
    Gan,
}

impl Phase {
    pub fn tag(&self) -> u8 {
        match self {
            Phase::PsnrPretrain => 1,
            Phase::Gan => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(Phase::PsnrPretrain),
            2 => Ok(Phase::Gan),
            other => Err(Error::Config(format!("unknown phase tag {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Phase::PsnrPretrain => "pretrain",
            Phase::Gan => "gan",
        }
    }
}

/// Adam hyperparameters shared by both optimizers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Full training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub phase: Phase,
    pub total_iters: u64,
    pub base_lr: f64,
    pub lr_milestones: Vec<u64>,
    pub batch: usize,
    pub hr_crop: usize,
    pub loss_weights: LossWeights,
    pub adam: AdamHyper,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub augmentation: AugmentationSpec,
    /// Conv stages of the frozen perceptual feature extractor.
    pub feature_depth: usize,
    pub feature_seed: u64,
}

impl TrainConfig {
    /// CPU-friendly profile: 4 blocks, nf 32, gc 16, crop 64, batch 4.
    pub fn desk_profile() -> Self {
        Self {
            phase: Phase::PsnrPretrain,
            total_iters: 200,
            base_lr: 1e-4,
            lr_milestones: vec![50_000, 100_000, 200_000, 300_000],
            batch: 4,
            hr_crop: 64,
            loss_weights: LossWeights::default(),
            adam: AdamHyper::default(),
            seed: 0,
            checkpoint_every: 100,
            generator: GeneratorSpec {
                num_blocks: 4,
                num_features: 32,
                growth_channels: 16,
                noise_enabled: true,
                ..GeneratorSpec::default()
            },
            discriminator: DiscriminatorSpec {
                input_size: 64,
                base_channels: 16,
                num_downsample_stages: 4,
                use_batchnorm: true,
            },
            augmentation: AugmentationSpec::default(),
            feature_depth: 3,
            feature_seed: 0x5EED,
        }
    }

    /// Full-scale profile (23 blocks, crop 128, batch 16). Long-running;
    /// intended for completeness, not for CPU smoke runs.
    pub fn full_profile() -> Self {
        Self {
            total_iters: 100_000,
            batch: 16,
            hr_crop: 128,
            checkpoint_every: 5_000,
            generator: GeneratorSpec {
                noise_enabled: true,
                ..GeneratorSpec::default()
            },
            discriminator: DiscriminatorSpec::default(),
            ..Self::desk_profile()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters < 1 {
            return Err(Error::Config("total_iters must be >= 1".into()));
        }
        if !self.lr_milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(
                "lr_milestones must be strictly increasing".into(),
            ));
        }
        if self.base_lr <= 0.0 {
            return Err(Error::Config("base_lr must be > 0".into()));
        }
        if self.batch < 1 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if self.checkpoint_every < 1 {
            return Err(Error::Config("checkpoint_every must be >= 1".into()));
        }
        self.loss_weights.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.augmentation.validate()?;
        if self.feature_depth == 0 || self.feature_depth > crate::losses::MAX_FEATURE_DEPTH {
            return Err(Error::Config(format!(
                "feature_depth must be in 1..={}",
                crate::losses::MAX_FEATURE_DEPTH
            )));
        }
        if self.phase == Phase::Gan && self.discriminator.input_size != self.hr_crop {
            return Err(Error::Config(format!(
                "discriminator input_size {} must equal hr_crop {}",
                self.discriminator.input_size, self.hr_crop
            )));
        }
        Ok(())
    }

    /// Hash of everything that defines the run dynamics. Stopping conditions
    /// (`total_iters`, `checkpoint_every`) are excluded so a run can be
    /// extended when resuming.
    pub fn hash(&self) -> [u8; 32] {
        use crate::bytes::ByteWriter;
        use sha2::{Digest, Sha256};
        let mut w = ByteWriter::new();
        w.u8(self.phase.tag());
        w.f64(self.base_lr);
        w.u32(self.lr_milestones.len() as u32);
        for m in &self.lr_milestones {
            w.u64(*m);
        }
        w.u64(self.batch as u64);
        w.u64(self.hr_crop as u64);
        w.f64(self.loss_weights.perceptual);
        w.f64(self.loss_weights.adversarial);
        w.f64(self.loss_weights.pixel);
        w.f64(self.adam.beta1);
        w.f64(self.adam.beta2);
        w.f64(self.adam.eps);
        w.u64(self.seed);
        let g = &self.generator;
        w.u64(g.num_blocks as u64);
        w.u64(g.num_features as u64);
        w.u64(g.growth_channels as u64);
        w.u64(g.dense_layers_per_block as u64);
        w.u64(g.scale as u64);
        w.u8(g.variant.tag());
        w.u8(g.noise_enabled as u8);
        w.u8(g.noise_on_outer_residual as u8);
        w.f64(g.residual_scaling);
        let d = &self.discriminator;
        w.u64(d.input_size as u64);
        w.u64(d.base_channels as u64);
        w.u64(d.num_downsample_stages as u64);
        w.u8(d.use_batchnorm as u8);
        w.u8(self.augmentation.horizontal_flip as u8);
        w.u32(self.augmentation.rotations.len() as u32);
        for r in &self.augmentation.rotations {
            w.u64(*r as u64);
        }
        w.u64(self.feature_depth as u64);
        w.u64(self.feature_seed);
        Sha256::digest(w.into_inner()).into()
    }
}

/// Step-decay schedule: `base_lr * 0.5^(number of milestones <= iteration)`.
pub fn lr_at(iteration: u64, base_lr: f64, milestones: &[u64]) -> f64 {
    let halvings = milestones.iter().filter(|&&m| m <= iteration).count();
    base_lr * 0.5f64.powi(halvings as i32)
}

/// One line of the training log.
#[derive(Debug, Clone)]
pub struct TrainLogRow {
    pub iter: u64,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_pix: f64,
    pub loss_percep: f64,
    pub loss_adv: f64,
    pub d_loss: f64,
    pub seconds: f64,
}

pub const TRAIN_LOG_HEADER: &str = "iter,lr,loss_total,loss_pix,loss_percep,loss_adv,d_loss,seconds";

impl TrainLogRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:e},{:.8},{:.8},{:.8},{:.8},{:.8},{:.3}",
            self.iter,
            self.lr,
            self.loss_total,
            self.loss_pix,
            self.loss_percep,
            self.loss_adv,
            self.d_loss,
            self.seconds
        )
    }
}

/// Outcome of a training call: the final checkpoint plus the per-iteration
/// log rows of this invocation.
pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub log: Vec<TrainLogRow>,
}

struct LoopState {
    gen: Generator,
    disc: Option<Discriminator>,
    gen_adam: AdamState,
    disc_adam: Option<AdamState>,
    start_iter: u64,
}

/// Phase 1: train the generator with pixel L1 only.
pub fn pretrain_psnr(
    cfg: &TrainConfig,
    data: &DatasetIndex,
    out_dir: Option<&Path>,
) -> Result<TrainResult> {
    if cfg.phase != Phase::PsnrPretrain {
        return Err(Error::Config("pretrain_psnr requires phase = pretrain".into()));
    }
    cfg.validate()?;
    let gen = Generator::new(&cfg.generator, &mut RngState::derive(cfg.seed, &[LANE_GEN_INIT]))?;
    let state = LoopState {
        gen,
        disc: None,
        gen_adam: AdamState::new(cfg.adam.beta1, cfg.adam.beta2, cfg.adam.eps),
        disc_adam: None,
        start_iter: 0,
    };
    run_loop(cfg, data, state, out_dir)
}

/// Phase 2: adversarial fine-tuning. `init` usually carries the pretrained
/// generator; with `None` the generator starts from scratch.
pub fn train_gan(
    cfg: &TrainConfig,
    data: &DatasetIndex,
    init: Option<&Checkpoint>,
    out_dir: Option<&Path>,
) -> Result<TrainResult> {
    if cfg.phase != Phase::Gan {
        return Err(Error::Config("train_gan requires phase = gan".into()));
    }
    cfg.validate()?;
    let gen = match init {
        Some(ckpt) => {
            let gen = ckpt.restore_generator()?;
            if gen.spec() != &cfg.generator {
                return Err(Error::Incompatible {
                    fields: vec!["generator spec differs from init checkpoint".into()],
                });
            }
            gen
        }
        None => Generator::new(
            &cfg.generator,
            &mut RngState::derive(cfg.seed, &[LANE_GEN_INIT]),
        )?,
    };
    let disc = Discriminator::new(
        &cfg.discriminator,
        &mut RngState::derive(cfg.seed, &[LANE_DISC_INIT]),
    )?;
    let state = LoopState {
        gen,
        disc: Some(disc),
        gen_adam: AdamState::new(cfg.adam.beta1, cfg.adam.beta2, cfg.adam.eps),
        disc_adam: Some(AdamState::new(cfg.adam.beta1, cfg.adam.beta2, cfg.adam.eps)),
        start_iter: 0,
    };
    run_loop(cfg, data, state, out_dir)
}

/// Continue an interrupted run from its checkpoint up to `cfg.total_iters`.
/// The checkpoint's config hash must match `cfg`.
pub fn resume_training(
    cfg: &TrainConfig,
    data: &DatasetIndex,
    ckpt: &Checkpoint,
    out_dir: Option<&Path>,
) -> Result<TrainResult> {
    cfg.validate()?;
    if ckpt.config_hash != cfg.hash() {
        return Err(Error::Config(
            "checkpoint config hash does not match the current configuration".into(),
        ));
    }
    if ckpt.phase != cfg.phase {
        return Err(Error::Config(format!(
            "checkpoint phase {} does not match configured phase {}",
            ckpt.phase.name(),
            cfg.phase.name()
        )));
    }
    if ckpt.iteration > cfg.total_iters {
        return Err(Error::Config(format!(
            "checkpoint is at iteration {} beyond total_iters {}",
            ckpt.iteration, cfg.total_iters
        )));
    }
    let state = LoopState {
        gen: ckpt.restore_generator()?,
        disc: ckpt.restore_discriminator()?,
        gen_adam: ckpt.gen_adam.clone(),
        disc_adam: ckpt.disc_adam.clone(),
        start_iter: ckpt.iteration,
    };
    run_loop(cfg, data, state, out_dir)
}

fn check_finite(term: &str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::NonFinite { term: term.into() });
    }
    Ok(())
}

struct OutputPaths {
    checkpoints: PathBuf,
    log_file: PathBuf,
}

fn prepare_output(out_dir: &Path, phase: Phase) -> Result<OutputPaths> {
    let checkpoints = out_dir.join("checkpoints");
    let logs = out_dir.join("logs");
    for dir in [&checkpoints, &logs, &out_dir.join("images")] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(OutputPaths {
        checkpoints,
        log_file: logs.join(format!("train_{}.csv", phase.name())),
    })
}

fn run_loop(
    cfg: &TrainConfig,
    data: &DatasetIndex,
    mut state: LoopState,
    out_dir: Option<&Path>,
) -> Result<TrainResult> {
    let paths = out_dir.map(|d| prepare_output(d, cfg.phase)).transpose()?;
    let mut log_writer: Option<std::fs::File> = match &paths {
        Some(p) => {
            use std::io::Write;
            let mut f =
                std::fs::File::create(&p.log_file).map_err(|e| Error::io(&p.log_file, e))?;
            writeln!(f, "{TRAIN_LOG_HEADER}").map_err(|e| Error::io(&p.log_file, e))?;
            Some(f)
        }
        None => None,
    };

    let mut batches = BatchIterator::new(
        data.clone(),
        cfg.batch,
        cfg.hr_crop,
        cfg.augmentation.clone(),
        derive_seed(cfg.seed, &[LANE_DATA]),
    )?;
    let feature = (cfg.phase == Phase::Gan)
        .then(|| FeatureExtractor::new(cfg.feature_depth, cfg.feature_seed))
        .transpose()?;
    let gen_params = state.gen.parameters();
    let disc_params: Vec<Parameter> = state
        .disc
        .as_ref()
        .map(|d| d.parameters())
        .unwrap_or_default();

    let mut log = Vec::new();
    let mut final_ckpt: Option<Checkpoint> = None;
    for i in state.start_iter..cfg.total_iters {
        let started = Instant::now();
        let lr_rate = lr_at(i, cfg.base_lr, &cfg.lr_milestones);
        let (hr, lr_img) = batches.nth_batch(i)?;

        let row = match cfg.phase {
            Phase::PsnrPretrain => {
                let mut noise_rng = RngState::derive(cfg.seed, &[LANE_NOISE, i, 0]);
                let sr = state.gen.forward(&lr_img, &mut noise_rng)?;
                let loss = pixel_l1(&sr, &hr)?;
                let loss_v = loss.item();
                check_finite("pixel_l1", loss_v)?;
                zero_grads(&gen_params);
                backward(&loss)?;
                adam_step(&gen_params, &mut state.gen_adam, lr_rate);
                TrainLogRow {
                    iter: i + 1,
                    lr: lr_rate,
                    loss_total: loss_v,
                    loss_pix: loss_v,
                    loss_percep: 0.0,
                    loss_adv: 0.0,
                    d_loss: 0.0,
                    seconds: started.elapsed().as_secs_f64(),
                }
            }
            Phase::Gan => {
                let disc = state.disc.as_ref().expect("gan phase has a discriminator");
                let disc_adam = state.disc_adam.as_mut().expect("gan phase adam");
                let f = feature.as_ref().expect("gan phase extractor");

                // Discriminator step on a detached SR batch.
                let mut noise_rng = RngState::derive(cfg.seed, &[LANE_NOISE, i, 0]);
                let sr_detached =
                    no_grad(|| state.gen.forward(&lr_img, &mut noise_rng))?;
                let d_real = disc.forward(&hr)?;
                let d_fake = disc.forward(&sr_detached)?;
                let d_loss = ragan_d_loss(&d_real, &d_fake)?;
                let d_loss_v = d_loss.item();
                check_finite("d_loss", d_loss_v)?;
                zero_grads(&disc_params);
                backward(&d_loss)?;
                adam_step(&disc_params, disc_adam, lr_rate);

                // Generator step with a fresh forward; discriminator weights
                // are frozen so gradients only flow through its activations.
                let mut noise_rng = RngState::derive(cfg.seed, &[LANE_NOISE, i, 1]);
                let sr = state.gen.forward(&lr_img, &mut noise_rng)?;
                for p in &disc_params {
                    p.tensor.set_requires_grad(false);
                }
                let d_real_ref = no_grad(|| disc.forward(&hr))?;
                let d_fake_g = disc.forward(&sr)?;
                let g_out = total_generator_loss(
                    &sr,
                    &hr,
                    &d_real_ref,
                    &d_fake_g,
                    f,
                    &cfg.loss_weights,
                );
                for p in &disc_params {
                    p.tensor.set_requires_grad(true);
                }
                let (g_total, parts) = g_out?;
                check_finite("loss_percep", parts.perceptual)?;
                check_finite("loss_adv", parts.adversarial)?;
                check_finite("loss_pix", parts.pixel)?;
                check_finite("loss_total", parts.total)?;
                zero_grads(&gen_params);
                backward(&g_total)?;
                adam_step(&gen_params, &mut state.gen_adam, lr_rate);

                TrainLogRow {
                    iter: i + 1,
                    lr: lr_rate,
                    loss_total: parts.total,
                    loss_pix: parts.pixel,
                    loss_percep: parts.perceptual,
                    loss_adv: parts.adversarial,
                    d_loss: d_loss_v,
                    seconds: started.elapsed().as_secs_f64(),
                }
            }
        };

        if let Some(f) = log_writer.as_mut() {
            use std::io::Write;
            writeln!(f, "{}", row.to_csv())
                .map_err(|e| Error::io(&paths.as_ref().unwrap().log_file, e))?;
        }
        log.push(row);

        let done = i + 1;
        if done % cfg.checkpoint_every == 0 || done == cfg.total_iters {
            let ckpt = Checkpoint::capture(
                cfg,
                done,
                &state.gen,
                state.disc.as_ref(),
                &state.gen_adam,
                state.disc_adam.as_ref(),
            );
            if let Some(p) = &paths {
                let file = p
                    .checkpoints
                    .join(format!("{}_iter{:07}.ckpt", cfg.phase.name(), done));
                ckpt.save(&file)?;
            }
            if done == cfg.total_iters {
                final_ckpt = Some(ckpt);
            }
        }
    }

    // resuming an already-finished run performs no iterations; re-capture
    // the unchanged state
    let checkpoint = final_ckpt.unwrap_or_else(|| {
        Checkpoint::capture(
            cfg,
            cfg.total_iters,
            &state.gen,
            state.disc.as_ref(),
            &state.gen_adam,
            state.disc_adam.as_ref(),
        )
    });
    Ok(TrainResult { checkpoint, log })
}
