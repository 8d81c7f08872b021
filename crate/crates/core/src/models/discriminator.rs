//! Conv-stack discriminator emitting one raw logit per image.

use super::{lrelu, Conv2dLayer, DiscriminatorSpec};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{batch_norm, flatten_channels, Parameter, Shape, Tensor};

const BN_EPS: f64 = 1e-5;
const HIDDEN_UNITS: usize = 100;

struct DownStage {
    conv: Conv2dLayer,
    bn: Option<(Tensor, Tensor)>, // (gamma, beta)
}

/// Input conv, `num_downsample_stages` stride-2 convs with channel doubling
/// (batch-normalized after all but the first conv), then two affine layers
/// reducing the flattened features to a scalar logit.
pub struct Discriminator {
    spec: DiscriminatorSpec,
    conv_in: Conv2dLayer,
    stages: Vec<DownStage>,
    fc_hidden: Conv2dLayer,
    fc_out: Conv2dLayer,
}

impl Discriminator {
    pub fn new(spec: &DiscriminatorSpec, rng: &mut RngState) -> Result<Self> {
        spec.validate()?;
        let conv_in = Conv2dLayer::init(3, spec.base_channels, 3, 1, 1, 1.0, rng);
        let mut stages = Vec::with_capacity(spec.num_downsample_stages);
        let mut ch = spec.base_channels;
        for k in 0..spec.num_downsample_stages {
            let out_ch = spec.stage_channels(k);
            let conv = Conv2dLayer::init(ch, out_ch, 3, 2, 1, 1.0, rng);
            let bn = spec.use_batchnorm.then(|| {
                (
                    Tensor::full(Shape::new(1, out_ch, 1, 1), 1.0),
                    Tensor::zeros(Shape::new(1, out_ch, 1, 1)),
                )
            });
            stages.push(DownStage { conv, bn });
            ch = out_ch;
        }
        let side = spec.input_size >> spec.num_downsample_stages;
        let flat = ch * side * side;
        let fc_hidden = Conv2dLayer::init(flat, HIDDEN_UNITS, 1, 1, 0, 1.0, rng);
        let fc_out = Conv2dLayer::init(HIDDEN_UNITS, 1, 1, 1, 0, 1.0, rng);
        Ok(Self {
            spec: spec.clone(),
            conv_in,
            stages,
            fc_hidden,
            fc_out,
        })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    /// Raw (pre-sigmoid) logits, shape `(n, 1, 1, 1)`.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let s = image.shape();
        if s.c != 3 || s.h != self.spec.input_size || s.w != self.spec.input_size {
            return Err(Error::shape(
                "discriminator_forward",
                format!(
                    "expected (n, 3, {0}, {0}), got {1}",
                    self.spec.input_size, s
                ),
            ));
        }
        let mut f = lrelu(&self.conv_in.forward(image)?)?;
        for stage in &self.stages {
            f = stage.conv.forward(&f)?;
            if let Some((gamma, beta)) = &stage.bn {
                f = batch_norm(&f, gamma, beta, BN_EPS)?;
            }
            f = lrelu(&f)?;
        }
        let flat = flatten_channels(&f);
        let hidden = lrelu(&self.fc_hidden.forward(&flat)?)?;
        self.fc_out.forward(&hidden)
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        let mut out = Vec::new();
        self.conv_in.collect("conv_in", &mut out);
        for (i, stage) in self.stages.iter().enumerate() {
            stage.conv.collect(&format!("stage{i}.conv"), &mut out);
            if let Some((gamma, beta)) = &stage.bn {
                out.push(Parameter::new(format!("stage{i}.bn.gamma"), gamma.clone()));
                out.push(Parameter::new(format!("stage{i}.bn.beta"), beta.clone()));
            }
        }
        self.fc_hidden.collect("fc_hidden", &mut out);
        self.fc_out.collect("fc_out", &mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        crate::tensor::param_count(&self.parameters())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use crate::tensor::no_grad;

    fn tiny_spec(bn: bool) -> DiscriminatorSpec {
        DiscriminatorSpec {
            input_size: 16,
            base_channels: 2,
            num_downsample_stages: 2,
            use_batchnorm: bn,
        }
    }

    #[test]
    fn spec_validation() {
        assert!(tiny_spec(true).validate().is_ok());
        let bad = DiscriminatorSpec {
            input_size: 20,
            num_downsample_stages: 3,
            ..tiny_spec(true)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn logits_shape_and_input_check() {
        let d = Discriminator::new(&tiny_spec(true), &mut RngState::new(0)).unwrap();
        let x = Tensor::randn(Shape::new(3, 3, 16, 16), &mut RngState::new(1));
        let logits = no_grad(|| d.forward(&x)).unwrap();
        assert_eq!(logits.shape(), Shape::new(3, 1, 1, 1));
        let wrong = Tensor::randn(Shape::new(1, 3, 8, 8), &mut RngState::new(2));
        assert!(d.forward(&wrong).is_err());
    }

    #[test]
    fn zero_final_layer_gives_zero_logits() {
        let d = Discriminator::new(&tiny_spec(true), &mut RngState::new(3)).unwrap();
        d.fc_out.weight.update_data(|v| v.fill(0.0));
        d.fc_out.bias.update_data(|v| v.fill(0.0));
        let x = Tensor::randn(Shape::new(2, 3, 16, 16), &mut RngState::new(4));
        let logits = no_grad(|| d.forward(&x)).unwrap();
        assert!(logits.to_vec().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_permutation_permutes_logits() {
        let mut rng = RngState::new(6);
        let a = Tensor::randn(Shape::new(1, 3, 16, 16), &mut rng);
        let b = Tensor::randn(Shape::new(1, 3, 16, 16), &mut rng);
        let c = Tensor::randn(Shape::new(1, 3, 16, 16), &mut rng);
        let abc = Tensor::from_vec(
            [a.to_vec(), b.to_vec(), c.to_vec()].concat(),
            Shape::new(3, 3, 16, 16),
        )
        .unwrap();
        let cab = Tensor::from_vec(
            [c.to_vec(), a.to_vec(), b.to_vec()].concat(),
            Shape::new(3, 3, 16, 16),
        )
        .unwrap();

        // without batch norm the samples are fully independent: bit-exact
        let d = Discriminator::new(&tiny_spec(false), &mut RngState::new(5)).unwrap();
        let l1 = no_grad(|| d.forward(&abc)).unwrap().to_vec();
        let l2 = no_grad(|| d.forward(&cab)).unwrap().to_vec();
        assert_eq!(l1[0].to_bits(), l2[1].to_bits());
        assert_eq!(l1[1].to_bits(), l2[2].to_bits());
        assert_eq!(l1[2].to_bits(), l2[0].to_bits());

        // with batch norm the batch statistics couple the samples; the
        // statistics are permutation-invariant, so logits still permute up
        // to summation rounding
        let dbn = Discriminator::new(&tiny_spec(true), &mut RngState::new(5)).unwrap();
        let m1 = no_grad(|| dbn.forward(&abc)).unwrap().to_vec();
        let m2 = no_grad(|| dbn.forward(&cab)).unwrap().to_vec();
        for (x, y) in [(m1[0], m2[1]), (m1[1], m2[2]), (m1[2], m2[0])] {
            assert!((x - y).abs() < 1e-9 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    /// Scalar-loop trace of the whole tiny batchnorm-free network.
    #[test]
    fn logits_match_hand_traced_network() {
        let spec = tiny_spec(false);
        let d = Discriminator::new(&spec, &mut RngState::new(7)).unwrap();
        let x = Tensor::randn(Shape::new(1, 3, 16, 16), &mut RngState::new(8));
        let got = no_grad(|| d.forward(&x)).unwrap().item();

        let lrelu = |v: f64| if v >= 0.0 { v } else { 0.2 * v };
        // generic strided conv as nested loops over plane vectors
        let conv = |input: &[Vec<f64>],
                    h: usize,
                    w: usize,
                    layer: &Conv2dLayer|
         -> (Vec<Vec<f64>>, usize, usize) {
            let ws = layer.weight.shape();
            let oh = (h + 2 * layer.padding - ws.h) / layer.stride + 1;
            let ow = (w + 2 * layer.padding - ws.w) / layer.stride + 1;
            let mut out = vec![vec![0.0; oh * ow]; ws.n];
            for o in 0..ws.n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = layer.bias.data()[o];
                        for c in 0..ws.c {
                            for ky in 0..ws.h {
                                for kx in 0..ws.w {
                                    let iy = (oy * layer.stride + ky) as isize
                                        - layer.padding as isize;
                                    let ix = (ox * layer.stride + kx) as isize
                                        - layer.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += layer.weight.at(o, c, ky, kx)
                                        * input[c][iy as usize * w + ix as usize];
                                }
                            }
                        }
                        out[o][oy * ow + ox] = acc;
                    }
                }
            }
            (out, oh, ow)
        };

        let planes: Vec<Vec<f64>> = (0..3)
            .map(|c| {
                (0..256)
                    .map(|i| x.at(0, c, i / 16, i % 16))
                    .collect::<Vec<f64>>()
            })
            .collect();
        let (mut f, mut h, mut w) = conv(&planes, 16, 16, &d.conv_in);
        for p in f.iter_mut() {
            for v in p.iter_mut() {
                *v = lrelu(*v);
            }
        }
        for stage in &d.stages {
            let (nf, nh, nw) = conv(&f, h, w, &stage.conv);
            f = nf;
            h = nh;
            w = nw;
            for p in f.iter_mut() {
                for v in p.iter_mut() {
                    *v = lrelu(*v);
                }
            }
        }
        // flatten then two 1x1 affine layers
        let flat: Vec<f64> = f.concat();
        let fc1 = &d.fc_hidden;
        let ws = fc1.weight.shape();
        let mut hidden = vec![0.0; ws.n];
        for (o, h_v) in hidden.iter_mut().enumerate() {
            let mut acc = fc1.bias.data()[o];
            for (c, x_v) in flat.iter().enumerate() {
                acc += fc1.weight.at(o, c, 0, 0) * x_v;
            }
            *h_v = lrelu(acc);
        }
        let fc2 = &d.fc_out;
        let mut logit = fc2.bias.data()[0];
        for (c, h_v) in hidden.iter().enumerate() {
            logit += fc2.weight.at(0, c, 0, 0) * h_v;
        }

        assert!(
            (got - logit).abs() < 1e-10,
            "hand trace {logit} vs forward {got}"
        );
    }
}
