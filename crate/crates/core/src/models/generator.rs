//! The RRDB-family generator.

use super::{lrelu, BlockVariant, Conv2dLayer, GeneratorSpec};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{
    add, concat_channels, noise_inject, scale, upsample_nearest, Parameter, Shape, Tensor,
};

/// Reduced-magnitude init factor for all dense-block convs.
const DENSE_INIT_SCALE: f64 = 0.1;

/// One dense block: `dense_layers_per_block` convs with dense connectivity,
/// an outer residual scaled by beta, and an optional learned noise stage.
struct DenseBlock {
    convs: Vec<Conv2dLayer>,
    noise_scale: Option<Tensor>,
}

impl DenseBlock {
    fn init(spec: &GeneratorSpec, rng: &mut RngState) -> Self {
        let nf = spec.num_features;
        let gc = spec.growth_channels;
        let layers = spec.dense_layers_per_block;
        let mut convs = Vec::with_capacity(layers);
        for i in 0..layers {
            let in_ch = nf + i * gc;
            let out_ch = if i + 1 == layers { nf } else { gc };
            convs.push(Conv2dLayer::init(
                in_ch,
                out_ch,
                3,
                1,
                1,
                DENSE_INIT_SCALE,
                rng,
            ));
        }
        // Noise scales start at zero so the noisy model is exactly the
        // noise-free model at initialization.
        let noise_scale = spec
            .noise_enabled
            .then(|| Tensor::zeros(Shape::new(1, nf, 1, 1)));
        Self { convs, noise_scale }
    }

    /// Dense connectivity: layer `i` consumes `[x, y_0, .., y_{i-1}]`. All
    /// layers but the last emit `gc` channels through leaky-relu; the last
    /// emits `nf` channels linearly. With the residual-dense variant, layer
    /// outputs two apart (and equal width) are summed before concatenation
    /// continues. Returns `x + beta * last`, plus noise when enabled.
    fn forward(
        &self,
        x: &Tensor,
        spec: &GeneratorSpec,
        rng: Option<&mut RngState>,
    ) -> Result<Tensor> {
        let layers = self.convs.len();
        let mut feats: Vec<Tensor> = vec![x.clone()];
        let mut outputs: Vec<Tensor> = Vec::with_capacity(layers);
        for (i, conv) in self.convs.iter().enumerate() {
            let refs: Vec<&Tensor> = feats.iter().collect();
            let cat = concat_channels(&refs)?;
            let mut y = conv.forward(&cat)?;
            if i + 1 < layers {
                y = lrelu(&y)?;
                if spec.variant == BlockVariant::ResidualDenseBlock && i >= 2 {
                    y = add(&y, &outputs[i - 2])?;
                }
                feats.push(y.clone());
            }
            outputs.push(y);
        }
        let mut out = add(x, &scale(&outputs[layers - 1], spec.residual_scaling))?;
        if let (Some(scales), Some(rng)) = (&self.noise_scale, rng) {
            let s = out.shape();
            let noise = Tensor::randn(Shape::new(s.n, 1, s.h, s.w), rng);
            out = noise_inject(&out, scales, &noise)?;
        }
        Ok(out)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<Parameter>) {
        for (i, conv) in self.convs.iter().enumerate() {
            conv.collect(&format!("{prefix}.conv{i}"), out);
        }
        if let Some(scales) = &self.noise_scale {
            out.push(Parameter::new(
                format!("{prefix}.noise_scale"),
                scales.clone(),
            ));
        }
    }
}

/// Residual-in-residual block: three inner dense blocks applied in sequence,
/// wrapped by an outer beta-scaled skip.
struct RrdBlock {
    inner: Vec<DenseBlock>,
    outer_noise_scale: Option<Tensor>,
}

pub(crate) const INNER_BLOCKS: usize = 3;

impl RrdBlock {
    fn init(spec: &GeneratorSpec, rng: &mut RngState) -> Self {
        let inner = (0..INNER_BLOCKS)
            .map(|_| DenseBlock::init(spec, rng))
            .collect();
        let outer_noise_scale = (spec.noise_enabled && spec.noise_on_outer_residual)
            .then(|| Tensor::zeros(Shape::new(1, spec.num_features, 1, 1)));
        Self {
            inner,
            outer_noise_scale,
        }
    }

    fn forward(
        &self,
        x: &Tensor,
        spec: &GeneratorSpec,
        mut rng: Option<&mut RngState>,
    ) -> Result<Tensor> {
        let mut cur = x.clone();
        for block in &self.inner {
            cur = block.forward(&cur, spec, rng.as_deref_mut())?;
        }
        let mut out = add(x, &scale(&cur, spec.residual_scaling))?;
        if let (Some(scales), Some(rng)) = (&self.outer_noise_scale, rng) {
            let s = out.shape();
            let noise = Tensor::randn(Shape::new(s.n, 1, s.h, s.w), rng);
            out = noise_inject(&out, scales, &noise)?;
        }
        Ok(out)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<Parameter>) {
        for (i, block) in self.inner.iter().enumerate() {
            block.collect(&format!("{prefix}.db{i}"), out);
        }
        if let Some(scales) = &self.outer_noise_scale {
            out.push(Parameter::new(
                format!("{prefix}.noise_scale"),
                scales.clone(),
            ));
        }
    }
}

/// The x4 generator: head conv, residual-in-residual trunk with global skip,
/// two nearest-neighbour upsampling stages, two tail convs.
pub struct Generator {
    spec: GeneratorSpec,
    head: Conv2dLayer,
    blocks: Vec<RrdBlock>,
    trunk: Conv2dLayer,
    up1: Conv2dLayer,
    up2: Conv2dLayer,
    tail_hr: Conv2dLayer,
    tail_out: Conv2dLayer,
}

impl Generator {
    /// Build and initialize from a spec. Weight draws depend only on `rng`
    /// and the architecture, in construction order.
    pub fn new(spec: &GeneratorSpec, rng: &mut RngState) -> Result<Self> {
        spec.validate()?;
        let nf = spec.num_features;
        let head = Conv2dLayer::init(3, nf, 3, 1, 1, 1.0, rng);
        let blocks = (0..spec.num_blocks)
            .map(|_| RrdBlock::init(spec, rng))
            .collect();
        let trunk = Conv2dLayer::init(nf, nf, 3, 1, 1, 1.0, rng);
        let up1 = Conv2dLayer::init(nf, nf, 3, 1, 1, 1.0, rng);
        let up2 = Conv2dLayer::init(nf, nf, 3, 1, 1, 1.0, rng);
        let tail_hr = Conv2dLayer::init(nf, nf, 3, 1, 1, 1.0, rng);
        let tail_out = Conv2dLayer::init(nf, 3, 3, 1, 1, 1.0, rng);
        Ok(Self {
            spec: spec.clone(),
            head,
            blocks,
            trunk,
            up1,
            up2,
            tail_hr,
            tail_out,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    /// Super-resolve a `(n, 3, h, w)` batch to `(n, 3, 4h, 4w)`. Output is
    /// not clamped; clamp at image export. Noise (when enabled by the spec)
    /// draws from `rng`.
    pub fn forward(&self, lr_image: &Tensor, rng: &mut RngState) -> Result<Tensor> {
        self.forward_impl(lr_image, self.spec.noise_enabled.then_some(rng))
    }

    /// Forward pass with noise injection forced off, regardless of spec.
    pub fn forward_no_noise(&self, lr_image: &Tensor) -> Result<Tensor> {
        self.forward_impl(lr_image, None)
    }

    fn forward_impl(&self, x: &Tensor, mut rng: Option<&mut RngState>) -> Result<Tensor> {
        let s = x.shape();
        if s.c != 3 {
            return Err(Error::shape(
                "generator_forward",
                format!("expected 3 input channels, got {}", s.c),
            ));
        }
        let head = self.head.forward(x)?;
        let mut feat = head.clone();
        for block in &self.blocks {
            feat = block.forward(&feat, &self.spec, rng.as_deref_mut())?;
        }
        let trunk = self.trunk.forward(&feat)?;
        let mut f = add(&head, &trunk)?;
        f = lrelu(&self.up1.forward(&upsample_nearest(&f, 2)?)?)?;
        f = lrelu(&self.up2.forward(&upsample_nearest(&f, 2)?)?)?;
        f = lrelu(&self.tail_hr.forward(&f)?)?;
        self.tail_out.forward(&f)
    }

    /// Upscale a single image without recording gradients. Output values
    /// clamp to [0, 1] at the image boundary. `noise = false` forces the
    /// deterministic path regardless of the spec.
    pub fn super_resolve(
        &self,
        img: &crate::data::ImageRGB,
        rng: &mut RngState,
        noise: bool,
    ) -> Result<crate::data::ImageRGB> {
        let input = crate::data::ImageRGB::to_batch(&[img])?;
        let out = crate::tensor::no_grad(|| {
            if noise {
                self.forward(&input, rng)
            } else {
                self.forward_no_noise(&input)
            }
        })?;
        Ok(crate::data::ImageRGB::from_tensor(&out, 0))
    }

    /// Named parameters in a stable order.
    pub fn parameters(&self) -> Vec<Parameter> {
        let mut out = Vec::new();
        self.head.collect("head", &mut out);
        for (i, block) in self.blocks.iter().enumerate() {
            block.collect(&format!("block{i}"), &mut out);
        }
        self.trunk.collect("trunk", &mut out);
        self.up1.collect("up1", &mut out);
        self.up2.collect("up2", &mut out);
        self.tail_hr.collect("tail_hr", &mut out);
        self.tail_out.collect("tail_out", &mut out);
        out
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        crate::tensor::param_count(&self.parameters())
    }
}
