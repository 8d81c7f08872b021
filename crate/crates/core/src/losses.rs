//! Training objectives: pixel L1, perceptual feature distance, and the
//! relativistic-average GAN losses.
//!
//! Both GAN losses are computed in logit space through `softplus`, never by
//! materializing a sigmoid and taking its log, so they stay finite under
//! arbitrarily large logit offsets. All reductions are means, which keeps
//! the loss weights independent of batch size.

use crate::error::{Error, Result};
use crate::models::LRELU_SLOPE;
use crate::rng::RngState;
use crate::tensor::{
    add, l1_distance, leaky_relu, mean_all, scale, softplus, sub_broadcast, Parameter, Shape,
    Tensor,
};

/// Weights of the composite generator objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub perceptual: f64,
    /// lambda: weight of the adversarial term.
    pub adversarial: f64,
    /// eta: weight of the pixel L1 term.
    pub pixel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            perceptual: 1.0,
            adversarial: 5e-3,
            pixel: 1e-2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.perceptual < 0.0 || self.adversarial < 0.0 || self.pixel < 0.0 {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        Ok(())
    }

    /// Weighted sum of already-computed component values. Mirrors the tape
    /// composition in [`total_generator_loss`] term for term.
    pub fn combine(&self, perceptual: f64, adversarial: f64, pixel: f64) -> f64 {
        self.perceptual * perceptual + self.adversarial * adversarial + self.pixel * pixel
    }
}

/// Mean absolute difference between two same-shape tensors.
pub fn pixel_l1(sr: &Tensor, hr: &Tensor) -> Result<Tensor> {
    l1_distance(sr, hr)
}

/// A small frozen conv stack used as the perceptual feature extractor.
///
/// Weights are drawn once from a seed and never trained; the feature tap is
/// the final conv output taken *before* its activation. Gradients flow to
/// the extractor's input but never into its weights.
pub struct FeatureExtractor {
    layers: Vec<(Tensor, Tensor, usize)>, // (weight, bias, stride)
}

/// Channel plan for the extractor stack; depth selects a prefix.
const FEATURE_WIDTHS: [usize; 4] = [16, 24, 32, 48];
pub const MAX_FEATURE_DEPTH: usize = FEATURE_WIDTHS.len();

impl FeatureExtractor {
    /// `depth` conv stages (1..=4); all weights drawn from `seed`.
    pub fn new(depth: usize, seed: u64) -> Result<Self> {
        if depth == 0 || depth > MAX_FEATURE_DEPTH {
            return Err(Error::Config(format!(
                "feature extractor depth must be in 1..={MAX_FEATURE_DEPTH}, got {depth}"
            )));
        }
        let mut rng = RngState::derive(seed, &[0xFEA7]);
        let mut layers = Vec::with_capacity(depth);
        let mut in_ch = 3;
        for (i, &out_ch) in FEATURE_WIDTHS.iter().take(depth).enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            let fan_in = (in_ch * 9) as f64;
            let std = (2.0 / fan_in).sqrt();
            let shape = Shape::new(out_ch, in_ch, 3, 3);
            let data: Vec<f64> = (0..shape.numel()).map(|_| rng.normal() * std).collect();
            let weight = Tensor::from_vec(data, shape)?;
            let bias = Tensor::zeros(Shape::new(1, out_ch, 1, 1));
            layers.push((weight, bias, stride));
            in_ch = out_ch;
        }
        Ok(Self { layers })
    }

    /// Pre-activation features of the last conv stage.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let depth = self.layers.len();
        let mut f = x.clone();
        for (i, (weight, bias, stride)) in self.layers.iter().enumerate() {
            f = crate::tensor::conv2d(&f, weight, bias, *stride, 1)?;
            if i + 1 < depth {
                f = leaky_relu(&f, LRELU_SLOPE)?;
            }
        }
        Ok(f)
    }

    /// Single 3x3 identity conv over RGB: features equal the input image.
    #[cfg(test)]
    pub(crate) fn identity_for_tests() -> Self {
        let mut w = vec![0.0; 3 * 3 * 9];
        for c in 0..3 {
            w[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
        }
        Self {
            layers: vec![(
                Tensor::from_vec(w, Shape::new(3, 3, 3, 3)).expect("consistent"),
                Tensor::zeros(Shape::new(1, 3, 1, 1)),
                1,
            )],
        }
    }

    /// Frozen named parameters (for inspection/testing; never trained).
    pub fn parameters(&self) -> Vec<Parameter> {
        let mut out = Vec::new();
        for (i, (weight, bias, _)) in self.layers.iter().enumerate() {
            out.push(Parameter::frozen(format!("feat{i}.weight"), weight.clone()));
            out.push(Parameter::frozen(format!("feat{i}.bias"), bias.clone()));
        }
        out
    }
}

/// Mean L1 distance between pre-activation feature maps of `sr` and `hr`.
pub fn perceptual_loss(sr: &Tensor, hr: &Tensor, f: &FeatureExtractor) -> Result<Tensor> {
    if sr.shape() != hr.shape() {
        return Err(Error::shape(
            "perceptual_loss",
            format!("{} vs {}", sr.shape(), hr.shape()),
        ));
    }
    let fs = f.features(sr)?;
    let fh = f.features(hr)?;
    l1_distance(&fs, &fh)
}

fn check_logits(real: &Tensor, fake: &Tensor, op: &'static str) -> Result<()> {
    let (r, f) = (real.shape(), fake.shape());
    if r.n == 0 || f.n == 0 {
        return Err(Error::shape(op, "empty logit batch".to_string()));
    }
    if r != f {
        return Err(Error::shape(op, format!("{} vs {}", r, f)));
    }
    if r.c != 1 || r.h != 1 || r.w != 1 {
        return Err(Error::shape(
            op,
            format!("logits must be (n,1,1,1), got {}", r),
        ));
    }
    Ok(())
}

/// Relativistic-average discriminator loss:
/// `-E[log sig(C(real) - E C(fake))] - E[log(1 - sig(C(fake) - E C(real)))]`,
/// evaluated as `E[softplus(-(r - mean_f))] + E[softplus(f - mean_r)]`.
pub fn ragan_d_loss(real_logits: &Tensor, fake_logits: &Tensor) -> Result<Tensor> {
    check_logits(real_logits, fake_logits, "ragan_d_loss")?;
    let mean_real = mean_all(real_logits);
    let mean_fake = mean_all(fake_logits);
    let rel_real = sub_broadcast(real_logits, &mean_fake)?;
    let rel_fake = sub_broadcast(fake_logits, &mean_real)?;
    let term_real = mean_all(&softplus(&scale(&rel_real, -1.0)));
    let term_fake = mean_all(&softplus(&rel_fake));
    add(&term_real, &term_fake)
}

/// Relativistic-average generator loss; the same formula with the roles of
/// real and fake swapped.
pub fn ragan_g_loss(real_logits: &Tensor, fake_logits: &Tensor) -> Result<Tensor> {
    check_logits(real_logits, fake_logits, "ragan_g_loss")?;
    ragan_d_loss(fake_logits, real_logits)
}

/// Component values of one generator loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLossParts {
    pub perceptual: f64,
    pub adversarial: f64,
    pub pixel: f64,
    pub total: f64,
}

/// The composite generator objective:
/// `perceptual_weight * perceptual + lambda * ragan_g + eta * pixel_l1`.
/// Returns the total as a differentiable scalar plus the component values.
pub fn total_generator_loss(
    sr: &Tensor,
    hr: &Tensor,
    d_real_logits: &Tensor,
    d_fake_logits: &Tensor,
    f: &FeatureExtractor,
    w: &LossWeights,
) -> Result<(Tensor, GeneratorLossParts)> {
    let percep = perceptual_loss(sr, hr, f)?;
    let adv = ragan_g_loss(d_real_logits, d_fake_logits)?;
    let pix = pixel_l1(sr, hr)?;
    let total = add(
        &add(&scale(&percep, w.perceptual), &scale(&adv, w.adversarial))?,
        &scale(&pix, w.pixel),
    )?;
    let parts = GeneratorLossParts {
        perceptual: percep.item(),
        adversarial: adv.item(),
        pixel: pix.item(),
        total: total.item(),
    };
    Ok((total, parts))
}
