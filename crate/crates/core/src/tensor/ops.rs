//! Differentiable primitives. Each op computes its result eagerly and, when
//! gradient tracking is active, records a [`GradFn`] node holding the parent
//! handles plus whatever context its backward pass needs.

use std::rc::Rc;

use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// One recorded node of the backward graph.
pub(crate) trait GradFn {
    fn parents(&self) -> Vec<Tensor>;
    /// Map d(loss)/d(output) to d(loss)/d(parent) for each parent, in the
    /// order of [`parents`](Self::parents). `None` marks parents that do not
    /// track gradients.
    fn backward(&self, out_grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

fn want(parent: &Tensor) -> bool {
    parent.needs_grad()
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

struct Conv2dOp {
    input: Tensor,
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
    out_shape: Shape,
}

/// 2-D cross-correlation with bias: `weight` is `(co, ci, kh, kw)` packed in
/// a `Shape`, `bias` is `(1, co, 1, 1)`. Output spatial dims follow
/// `(h + 2p - kh) / stride + 1`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let xs = input.shape();
    let ws = weight.shape();
    let (co, ci, kh, kw) = (ws.n, ws.c, ws.h, ws.w);
    if xs.c != ci {
        return Err(Error::shape(
            "conv2d",
            format!("input has {} channels but weight expects {}", xs.c, ci),
        ));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::shape(
            "conv2d",
            format!("kernel dims must be odd, got {kh}x{kw}"),
        ));
    }
    if stride < 1 {
        return Err(Error::shape("conv2d", "stride must be >= 1".to_string()));
    }
    let bs = bias.shape();
    if bs != Shape::new(1, co, 1, 1) {
        return Err(Error::shape(
            "conv2d",
            format!("bias shape {} incompatible with {} output channels", bs, co),
        ));
    }
    if xs.h + 2 * padding < kh || xs.w + 2 * padding < kw {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kh}x{kw} larger than padded input {}", xs),
        ));
    }
    let oh = (xs.h + 2 * padding - kh) / stride + 1;
    let ow = (xs.w + 2 * padding - kw) / stride + 1;
    let out_shape = Shape::new(xs.n, co, oh, ow);

    let data = conv_forward(
        &input.data(),
        xs,
        &weight.data(),
        co,
        kh,
        kw,
        &bias.data(),
        stride,
        padding,
        oh,
        ow,
    );
    Ok(Tensor::from_op(
        data,
        out_shape,
        Rc::new(Conv2dOp {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.clone(),
            stride,
            padding,
            out_shape,
        }),
    ))
}

// Fused row kernel for 3-wide kernels at stride 1, pad 1:
// dst[j] += wl*src[j-1] + wc*src[j] + wr*src[j+1] with edge clamping to the
// valid range (missing taps contribute nothing).
#[inline]
fn row3_s1(dst: &mut [f64], src: &[f64], wl: f64, wc: f64, wr: f64) {
    let w = dst.len();
    debug_assert_eq!(src.len(), w);
    if w == 1 {
        dst[0] += wc * src[0];
        return;
    }
    dst[0] += wc * src[0] + wr * src[1];
    let inner = w - 2;
    if inner > 0 {
        let d = &mut dst[1..w - 1];
        let s0 = &src[0..inner];
        let s1 = &src[1..inner + 1];
        let s2 = &src[2..inner + 2];
        for i in 0..inner {
            d[i] += wl * s0[i] + wc * s1[i] + wr * s2[i];
        }
    }
    dst[w - 1] += wl * src[w - 2] + wc * src[w - 1];
}

// Same contract at stride 2: dst[j] pulls src[2j-1], src[2j], src[2j+1].
#[inline]
fn row3_s2(dst: &mut [f64], src: &[f64], wl: f64, wc: f64, wr: f64) {
    let iw = src.len();
    for (j, d) in dst.iter_mut().enumerate() {
        let center = 2 * j;
        let mut acc = wc * src[center];
        if center >= 1 {
            acc += wl * src[center - 1];
        }
        if center + 1 < iw {
            acc += wr * src[center + 1];
        }
        *d += acc;
    }
}

// Three shifted dot products in one pass: returns
// (sum g[j]*x[j-1], sum g[j]*x[j], sum g[j]*x[j+1]) over the valid ranges.
#[inline]
fn dots3_s1(g: &[f64], x: &[f64]) -> (f64, f64, f64) {
    let w = g.len();
    debug_assert_eq!(x.len(), w);
    let mut a0 = 0.0;
    let mut a1 = 0.0;
    let mut a2 = 0.0;
    for (gv, xv) in g[1..].iter().zip(&x[..w - 1]) {
        a0 += gv * xv;
    }
    for (gv, xv) in g.iter().zip(x) {
        a1 += gv * xv;
    }
    for (gv, xv) in g[..w - 1].iter().zip(&x[1..]) {
        a2 += gv * xv;
    }
    (a0, a1, a2)
}

#[inline]
fn dots3_s2(g: &[f64], x: &[f64]) -> (f64, f64, f64) {
    let iw = x.len();
    let mut a0 = 0.0;
    let mut a1 = 0.0;
    let mut a2 = 0.0;
    for (j, gv) in g.iter().enumerate() {
        let center = 2 * j;
        if center >= 1 {
            a0 += gv * x[center - 1];
        }
        a1 += gv * x[center];
        if center + 1 < iw {
            a2 += gv * x[center + 1];
        }
    }
    (a0, a1, a2)
}

#[inline]
fn axpy(dst: &mut [f64], k: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[derive(Clone, Copy, PartialEq)]
enum ConvKind {
    /// 3x3 kernel, pad 1, stride 1 or 2
    K3 { stride: usize },
    /// 1x1 kernel, pad 0, stride 1
    K1,
    Generic,
}

fn conv_kind(kh: usize, kw: usize, stride: usize, pad: usize) -> ConvKind {
    if kh == 3 && kw == 3 && pad == 1 && (stride == 1 || stride == 2) {
        ConvKind::K3 { stride }
    } else if kh == 1 && kw == 1 && pad == 0 && stride == 1 {
        ConvKind::K1
    } else {
        ConvKind::Generic
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    xs: Shape,
    w: &[f64],
    co: usize,
    kh: usize,
    kw: usize,
    b: &[f64],
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let ci = xs.c;
    let in_plane = xs.h * xs.w;
    let out_plane = oh * ow;
    let mut out = vec![0.0; xs.n * co * out_plane];
    match conv_kind(kh, kw, stride, pad) {
        ConvKind::K3 { stride } => {
            for n in 0..xs.n {
                for o in 0..co {
                    let out_base = (n * co + o) * out_plane;
                    out[out_base..out_base + out_plane].fill(b[o]);
                    for c in 0..ci {
                        let in_base = (n * ci + c) * in_plane;
                        let w9 = &w[(o * ci + c) * 9..(o * ci + c) * 9 + 9];
                        for ky in 0..3usize {
                            for oy in 0..oh {
                                let iy = (oy * stride + ky) as isize - 1;
                                if iy < 0 || iy >= xs.h as isize {
                                    continue;
                                }
                                let src =
                                    &x[in_base + iy as usize * xs.w..in_base + (iy as usize + 1) * xs.w];
                                let dst = &mut out[out_base + oy * ow..out_base + (oy + 1) * ow];
                                if stride == 1 {
                                    row3_s1(dst, src, w9[ky * 3], w9[ky * 3 + 1], w9[ky * 3 + 2]);
                                } else {
                                    row3_s2(dst, src, w9[ky * 3], w9[ky * 3 + 1], w9[ky * 3 + 2]);
                                }
                            }
                        }
                    }
                }
            }
        }
        ConvKind::K1 => {
            if in_plane == 1 {
                // fully-connected case: out[n][o] = b[o] + dot(w[o], x[n])
                for n in 0..xs.n {
                    let x_row = &x[n * ci..(n + 1) * ci];
                    for o in 0..co {
                        out[n * co + o] = b[o] + dot(&w[o * ci..(o + 1) * ci], x_row);
                    }
                }
            } else {
                for n in 0..xs.n {
                    for o in 0..co {
                        let out_base = (n * co + o) * out_plane;
                        out[out_base..out_base + out_plane].fill(b[o]);
                        for c in 0..ci {
                            let in_base = (n * ci + c) * in_plane;
                            axpy(
                                &mut out[out_base..out_base + out_plane],
                                w[o * ci + c],
                                &x[in_base..in_base + in_plane],
                            );
                        }
                    }
                }
            }
        }
        ConvKind::Generic => {
            for n in 0..xs.n {
                for o in 0..co {
                    let out_base = (n * co + o) * out_plane;
                    out[out_base..out_base + out_plane].fill(b[o]);
                    for c in 0..ci {
                        let in_base = (n * ci + c) * in_plane;
                        let w_base = (o * ci + c) * kh * kw;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let wv = w[w_base + ky * kw + kx];
                                for oy in 0..oh {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= xs.h as isize {
                                        continue;
                                    }
                                    let in_row = in_base + iy as usize * xs.w;
                                    let out_row = out_base + oy * ow;
                                    for ox in 0..ow {
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if ix < 0 || ix >= xs.w as isize {
                                            continue;
                                        }
                                        out[out_row + ox] += wv * x[in_row + ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

impl Conv2dOp {
    fn backward_input(&self, g: &[f64]) -> Vec<f64> {
        let xs = self.input.shape();
        let ws = self.weight.shape();
        let (co, ci, kh, kw) = (ws.n, ws.c, ws.h, ws.w);
        let (oh, ow) = (self.out_shape.h, self.out_shape.w);
        let (stride, pad) = (self.stride, self.padding);
        let in_plane = xs.h * xs.w;
        let out_plane = oh * ow;
        let w = self.weight.data();
        let mut dx = vec![0.0; xs.numel()];
        match conv_kind(kh, kw, stride, pad) {
            ConvKind::K3 { stride: 1 } => {
                // full correlation with the flipped kernel
                for n in 0..xs.n {
                    for o in 0..co {
                        let out_base = (n * co + o) * out_plane;
                        for c in 0..ci {
                            let in_base = (n * ci + c) * in_plane;
                            let w9 = &w[(o * ci + c) * 9..(o * ci + c) * 9 + 9];
                            for ky in 0..3usize {
                                for iy in 0..xs.h {
                                    let oy = iy as isize + 1 - ky as isize;
                                    if oy < 0 || oy >= oh as isize {
                                        continue;
                                    }
                                    let src = &g
                                        [out_base + oy as usize * ow..out_base + (oy as usize + 1) * ow];
                                    let dst = &mut dx[in_base + iy * xs.w..in_base + (iy + 1) * xs.w];
                                    // taps flip: dx[j] += w2*g[j-1] + w1*g[j] + w0*g[j+1]
                                    row3_s1(dst, src, w9[ky * 3 + 2], w9[ky * 3 + 1], w9[ky * 3]);
                                }
                            }
                        }
                    }
                }
            }
            ConvKind::K1 => {
                if in_plane == 1 {
                    for n in 0..xs.n {
                        let dx_row = &mut dx[n * ci..(n + 1) * ci];
                        for o in 0..co {
                            axpy(dx_row, g[n * co + o], &w[o * ci..(o + 1) * ci]);
                        }
                    }
                } else {
                    for n in 0..xs.n {
                        for c in 0..ci {
                            let in_base = (n * ci + c) * in_plane;
                            for o in 0..co {
                                let out_base = (n * co + o) * out_plane;
                                axpy(
                                    &mut dx[in_base..in_base + in_plane],
                                    w[o * ci + c],
                                    &g[out_base..out_base + out_plane],
                                );
                            }
                        }
                    }
                }
            }
            _ => {
                for n in 0..xs.n {
                    for o in 0..co {
                        let out_base = (n * co + o) * out_plane;
                        for c in 0..ci {
                            let in_base = (n * ci + c) * in_plane;
                            let w_base = (o * ci + c) * kh * kw;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let wv = w[w_base + ky * kw + kx];
                                    for oy in 0..oh {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        if iy < 0 || iy >= xs.h as isize {
                                            continue;
                                        }
                                        let in_row = in_base + iy as usize * xs.w;
                                        let out_row = out_base + oy * ow;
                                        for ox in 0..ow {
                                            let ix = (ox * stride + kx) as isize - pad as isize;
                                            if ix < 0 || ix >= xs.w as isize {
                                                continue;
                                            }
                                            dx[in_row + ix as usize] += wv * g[out_row + ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn backward_weight(&self, g: &[f64]) -> Vec<f64> {
        let xs = self.input.shape();
        let ws = self.weight.shape();
        let (co, ci, kh, kw) = (ws.n, ws.c, ws.h, ws.w);
        let (oh, ow) = (self.out_shape.h, self.out_shape.w);
        let (stride, pad) = (self.stride, self.padding);
        let in_plane = xs.h * xs.w;
        let out_plane = oh * ow;
        let x = self.input.data();
        let mut dw = vec![0.0; ws.numel()];
        match conv_kind(kh, kw, stride, pad) {
            ConvKind::K3 { stride } => {
                for n in 0..xs.n {
                    for o in 0..co {
                        let out_base = (n * co + o) * out_plane;
                        for c in 0..ci {
                            let in_base = (n * ci + c) * in_plane;
                            let w_base = (o * ci + c) * 9;
                            for ky in 0..3usize {
                                let mut acc = (0.0, 0.0, 0.0);
                                for oy in 0..oh {
                                    let iy = (oy * stride + ky) as isize - 1;
                                    if iy < 0 || iy >= xs.h as isize {
                                        continue;
                                    }
                                    let g_row =
                                        &g[out_base + oy * ow..out_base + (oy + 1) * ow];
                                    let x_row = &x
                                        [in_base + iy as usize * xs.w..in_base + (iy as usize + 1) * xs.w];
                                    let (a0, a1, a2) = if stride == 1 {
                                        dots3_s1(g_row, x_row)
                                    } else {
                                        dots3_s2(g_row, x_row)
                                    };
                                    acc.0 += a0;
                                    acc.1 += a1;
                                    acc.2 += a2;
                                }
                                dw[w_base + ky * 3] += acc.0;
                                dw[w_base + ky * 3 + 1] += acc.1;
                                dw[w_base + ky * 3 + 2] += acc.2;
                            }
                        }
                    }
                }
            }
            ConvKind::K1 => {
                if in_plane == 1 {
                    for n in 0..xs.n {
                        let x_row = &x[n * ci..(n + 1) * ci];
                        for o in 0..co {
                            axpy(&mut dw[o * ci..(o + 1) * ci], g[n * co + o], x_row);
                        }
                    }
                } else {
                    for n in 0..xs.n {
                        for o in 0..co {
                            let out_base = (n * co + o) * out_plane;
                            let g_plane = &g[out_base..out_base + out_plane];
                            for c in 0..ci {
                                let in_base = (n * ci + c) * in_plane;
                                dw[o * ci + c] += dot(g_plane, &x[in_base..in_base + in_plane]);
                            }
                        }
                    }
                }
            }
            ConvKind::Generic => {
                for n in 0..xs.n {
                    for o in 0..co {
                        let out_base = (n * co + o) * out_plane;
                        for c in 0..ci {
                            let in_base = (n * ci + c) * in_plane;
                            let w_base = (o * ci + c) * kh * kw;
                            for ky in 0..kh {
                                for oy in 0..oh {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= xs.h as isize {
                                        continue;
                                    }
                                    let in_row = in_base + iy as usize * xs.w;
                                    let out_row = out_base + oy * ow;
                                    for kx in 0..kw {
                                        let mut acc = 0.0;
                                        for ox in 0..ow {
                                            let ix =
                                                (ox * stride + kx) as isize - pad as isize;
                                            if ix < 0 || ix >= xs.w as isize {
                                                continue;
                                            }
                                            acc += g[out_row + ox] * x[in_row + ix as usize];
                                        }
                                        dw[w_base + ky * kw + kx] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        dw
    }
}

impl GradFn for Conv2dOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.input.clone(), self.weight.clone(), self.bias.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let xs = self.input.shape();
        let co = self.weight.shape().n;
        let out_plane = self.out_shape.h * self.out_shape.w;

        let d_input = want(&self.input).then(|| self.backward_input(g));
        let d_weight = want(&self.weight).then(|| self.backward_weight(g));
        let d_bias = want(&self.bias).then(|| {
            let mut db = vec![0.0; co];
            for n in 0..xs.n {
                for o in 0..co {
                    let out_base = (n * co + o) * out_plane;
                    let mut acc = 0.0;
                    for gv in &g[out_base..out_base + out_plane] {
                        acc += gv;
                    }
                    db[o] += acc;
                }
            }
            db
        });

        vec![d_input, d_weight, d_bias]
    }
}


// ---------------------------------------------------------------------------
// elementwise / structural ops
// ---------------------------------------------------------------------------

struct LeakyReluOp {
    input: Tensor,
    slope: f64,
}

/// `max(x, slope * x)` elementwise; `slope` in [0, 1).
pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&slope) {
        return Err(Error::Config(format!(
            "leaky_relu slope must be in [0, 1), got {slope}"
        )));
    }
    let data: Vec<f64> = x
        .data()
        .iter()
        .map(|&v| if v >= 0.0 { v } else { slope * v })
        .collect();
    Ok(Tensor::from_op(
        data,
        x.shape(),
        Rc::new(LeakyReluOp {
            input: x.clone(),
            slope,
        }),
    ))
}

impl GradFn for LeakyReluOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.input.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let d = want(&self.input).then(|| {
            self.input
                .data()
                .iter()
                .zip(g)
                .map(|(&v, &gv)| if v >= 0.0 { gv } else { self.slope * gv })
                .collect()
        });
        vec![d]
    }
}

struct UpsampleOp {
    input: Tensor,
    factor: usize,
}

/// Nearest-neighbour upsampling: each pixel becomes a `factor x factor` block.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor < 1 {
        return Err(Error::Config("upsample factor must be >= 1".to_string()));
    }
    let s = x.shape();
    let out_shape = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    let src = x.data();
    let mut data = vec![0.0; out_shape.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..out_shape.h {
                let in_row = s.index(n, c, oy / factor, 0);
                let out_row = out_shape.index(n, c, oy, 0);
                for ox in 0..out_shape.w {
                    data[out_row + ox] = src[in_row + ox / factor];
                }
            }
        }
    }
    drop(src);
    Ok(Tensor::from_op(
        data,
        out_shape,
        Rc::new(UpsampleOp {
            input: x.clone(),
            factor,
        }),
    ))
}

impl GradFn for UpsampleOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.input.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let d = want(&self.input).then(|| {
            let s = self.input.shape();
            let f = self.factor;
            let out = Shape::new(s.n, s.c, s.h * f, s.w * f);
            let mut dx = vec![0.0; s.numel()];
            for n in 0..s.n {
                for c in 0..s.c {
                    for oy in 0..out.h {
                        let in_row = s.index(n, c, oy / f, 0);
                        let out_row = out.index(n, c, oy, 0);
                        for ox in 0..out.w {
                            dx[in_row + ox / f] += g[out_row + ox];
                        }
                    }
                }
            }
            dx
        });
        vec![d]
    }
}

struct BinaryOp {
    lhs: Tensor,
    rhs: Tensor,
    kind: BinaryKind,
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

fn binary(lhs: &Tensor, rhs: &Tensor, kind: BinaryKind, name: &'static str) -> Result<Tensor> {
    if lhs.shape() != rhs.shape() {
        return Err(Error::shape(
            name,
            format!("{} vs {}", lhs.shape(), rhs.shape()),
        ));
    }
    let a = lhs.data();
    let b = rhs.data();
    let data: Vec<f64> = match kind {
        BinaryKind::Add => a.iter().zip(b.iter()).map(|(x, y)| x + y).collect(),
        BinaryKind::Sub => a.iter().zip(b.iter()).map(|(x, y)| x - y).collect(),
        BinaryKind::Mul => a.iter().zip(b.iter()).map(|(x, y)| x * y).collect(),
    };
    drop(a);
    drop(b);
    Ok(Tensor::from_op(
        data,
        lhs.shape(),
        Rc::new(BinaryOp {
            lhs: lhs.clone(),
            rhs: rhs.clone(),
            kind,
        }),
    ))
}

/// Elementwise sum of two same-shape tensors.
pub fn add(lhs: &Tensor, rhs: &Tensor) -> Result<Tensor> {
    binary(lhs, rhs, BinaryKind::Add, "add")
}

/// Elementwise difference.
pub fn sub(lhs: &Tensor, rhs: &Tensor) -> Result<Tensor> {
    binary(lhs, rhs, BinaryKind::Sub, "sub")
}

/// Elementwise product.
pub fn mul(lhs: &Tensor, rhs: &Tensor) -> Result<Tensor> {
    binary(lhs, rhs, BinaryKind::Mul, "mul")
}

impl GradFn for BinaryOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.lhs.clone(), self.rhs.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        match self.kind {
            BinaryKind::Add => vec![
                want(&self.lhs).then(|| g.to_vec()),
                want(&self.rhs).then(|| g.to_vec()),
            ],
            BinaryKind::Sub => vec![
                want(&self.lhs).then(|| g.to_vec()),
                want(&self.rhs).then(|| g.iter().map(|v| -v).collect()),
            ],
            BinaryKind::Mul => vec![
                want(&self.lhs)
                    .then(|| self.rhs.data().iter().zip(g).map(|(r, gv)| r * gv).collect()),
                want(&self.rhs)
                    .then(|| self.lhs.data().iter().zip(g).map(|(l, gv)| l * gv).collect()),
            ],
        }
    }
}

struct ScaleOp {
    input: Tensor,
    k: f64,
}

/// Multiply every element by the constant `k`.
pub fn scale(x: &Tensor, k: f64) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|v| v * k).collect();
    Tensor::from_op(
        data,
        x.shape(),
        Rc::new(ScaleOp {
            input: x.clone(),
            k,
        }),
    )
}

impl GradFn for ScaleOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.input.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![want(&self.input).then(|| g.iter().map(|v| v * self.k).collect())]
    }
}

struct ConcatOp {
    inputs: Vec<Tensor>,
}

/// Concatenate along the channel axis; all inputs share `n`, `h`, `w`.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    if inputs.is_empty() {
        return Err(Error::shape("concat_channels", "no inputs".to_string()));
    }
    let first = inputs[0].shape();
    let mut c_total = 0;
    for t in inputs {
        let s = t.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape(
                "concat_channels",
                format!("{} vs {}", s, first),
            ));
        }
        c_total += s.c;
    }
    let out_shape = Shape::new(first.n, c_total, first.h, first.w);
    let plane = first.h * first.w;
    let mut data = vec![0.0; out_shape.numel()];
    for n in 0..first.n {
        let mut offset = out_shape.index(n, 0, 0, 0);
        for t in inputs {
            let s = t.shape();
            let chunk = s.c * plane;
            let src = t.data();
            data[offset..offset + chunk].copy_from_slice(&src[n * chunk..(n + 1) * chunk]);
            offset += chunk;
        }
    }
    Ok(Tensor::from_op(
        data,
        out_shape,
        Rc::new(ConcatOp {
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
        }),
    ))
}

impl GradFn for ConcatOp {
    fn parents(&self) -> Vec<Tensor> {
        self.inputs.clone()
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let first = self.inputs[0].shape();
        let plane = first.h * first.w;
        let c_total: usize = self.inputs.iter().map(|t| t.shape().c).sum();
        let mut grads: Vec<Option<Vec<f64>>> = self
            .inputs
            .iter()
            .map(|t| want(t).then(|| vec![0.0; t.numel()]))
            .collect();
        for n in 0..first.n {
            let mut offset = n * c_total * plane;
            for (t, slot) in self.inputs.iter().zip(grads.iter_mut()) {
                let chunk = t.shape().c * plane;
                if let Some(dst) = slot {
                    dst[n * chunk..(n + 1) * chunk].copy_from_slice(&g[offset..offset + chunk]);
                }
                offset += chunk;
            }
        }
        grads
    }
}

struct ReduceOp {
    input: Tensor,
    kind: ReduceKind,
}

#[derive(Clone, Copy)]
enum ReduceKind {
    Mean,
    Sum,
}

/// Mean over all elements, as a `(1,1,1,1)` tensor.
pub fn mean_all(x: &Tensor) -> Tensor {
    let sum: f64 = x.data().iter().sum();
    let v = sum / x.numel() as f64;
    Tensor::from_op(
        vec![v],
        Shape::scalar(),
        Rc::new(ReduceOp {
            input: x.clone(),
            kind: ReduceKind::Mean,
        }),
    )
}

/// Sum over all elements, as a `(1,1,1,1)` tensor.
pub fn sum_all(x: &Tensor) -> Tensor {
    let sum: f64 = x.data().iter().sum();
    Tensor::from_op(
        vec![sum],
        Shape::scalar(),
        Rc::new(ReduceOp {
            input: x.clone(),
            kind: ReduceKind::Sum,
        }),
    )
}

impl GradFn for ReduceOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.input.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let n = self.input.numel();
        let per = match self.kind {
            ReduceKind::Mean => g[0] / n as f64,
            ReduceKind::Sum => g[0],
        };
        vec![want(&self.input).then(|| vec![per; n])]
    }
}

struct L1Op {
    lhs: Tensor,
    rhs: Tensor,
}

/// Mean absolute difference, as a scalar tensor.
pub fn l1_distance(lhs: &Tensor, rhs: &Tensor) -> Result<Tensor> {
    if lhs.shape() != rhs.shape() {
        return Err(Error::shape(
            "l1_distance",
            format!("{} vs {}", lhs.shape(), rhs.shape()),
        ));
    }
    let sum: f64 = lhs
        .data()
        .iter()
        .zip(rhs.data().iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    let v = sum / lhs.numel() as f64;
    Ok(Tensor::from_op(
        vec![v],
        Shape::scalar(),
        Rc::new(L1Op {
            lhs: lhs.clone(),
            rhs: rhs.clone(),
        }),
    ))
}

impl GradFn for L1Op {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.lhs.clone(), self.rhs.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let n = self.lhs.numel() as f64;
        let k = g[0] / n;
        let signs: Vec<f64> = self
            .lhs
            .data()
            .iter()
            .zip(self.rhs.data().iter())
            .map(|(a, b)| {
                if a > b {
                    k
                } else if a < b {
                    -k
                } else {
                    0.0
                }
            })
            .collect();
        let d_lhs = want(&self.lhs).then(|| signs.clone());
        let d_rhs = want(&self.rhs).then(|| signs.iter().map(|v| -v).collect());
        vec![d_lhs, d_rhs]
    }
}

struct SoftplusOp {
    input: Tensor,
}

/// Numerically stable `ln(1 + exp(x))`.
pub fn softplus(x: &Tensor) -> Tensor {
    let data: Vec<f64> = x
        .data()
        .iter()
        .map(|&z| z.max(0.0) + (-z.abs()).exp().ln_1p())
        .collect();
    Tensor::from_op(
        data,
        x.shape(),
        Rc::new(SoftplusOp { input: x.clone() }),
    )
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl GradFn for SoftplusOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.input.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![want(&self.input).then(|| {
            self.input
                .data()
                .iter()
                .zip(g)
                .map(|(&z, &gv)| gv * sigmoid(z))
                .collect()
        })]
    }
}

struct SubBroadcastOp {
    lhs: Tensor,
    rhs: Tensor,
}

/// Subtract a scalar tensor `(1,1,1,1)` from every element of `x`.
pub fn sub_broadcast(x: &Tensor, scalar: &Tensor) -> Result<Tensor> {
    if scalar.numel() != 1 {
        return Err(Error::shape(
            "sub_broadcast",
            format!("rhs must be scalar, got {}", scalar.shape()),
        ));
    }
    let s = scalar.item();
    let data: Vec<f64> = x.data().iter().map(|v| v - s).collect();
    Ok(Tensor::from_op(
        data,
        x.shape(),
        Rc::new(SubBroadcastOp {
            lhs: x.clone(),
            rhs: scalar.clone(),
        }),
    ))
}

impl GradFn for SubBroadcastOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.lhs.clone(), self.rhs.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let d_lhs = want(&self.lhs).then(|| g.to_vec());
        let d_rhs = want(&self.rhs).then(|| vec![-g.iter().sum::<f64>()]);
        vec![d_lhs, d_rhs]
    }
}

struct FlattenOp {
    input: Tensor,
}

/// Reshape `(n, c, h, w)` to `(n, c*h*w, 1, 1)`; data order is unchanged.
pub fn flatten_channels(x: &Tensor) -> Tensor {
    let s = x.shape();
    let out_shape = Shape::new(s.n, s.c * s.h * s.w, 1, 1);
    Tensor::from_op(
        x.to_vec(),
        out_shape,
        Rc::new(FlattenOp { input: x.clone() }),
    )
}

impl GradFn for FlattenOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.input.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![want(&self.input).then(|| g.to_vec())]
    }
}

// ---------------------------------------------------------------------------
// batch norm
// ---------------------------------------------------------------------------

struct BatchNormOp {
    input: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

/// Per-channel batch normalization using batch statistics:
/// `y = gamma * (x - mu_c) / sqrt(var_c + eps) + beta`.
/// `gamma`/`beta` have shape `(1, c, 1, 1)`.
pub fn batch_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let s = x.shape();
    let expect = Shape::new(1, s.c, 1, 1);
    if gamma.shape() != expect || beta.shape() != expect {
        return Err(Error::shape(
            "batch_norm",
            format!(
                "gamma {} / beta {} incompatible with input {}",
                gamma.shape(),
                beta.shape(),
                s
            ),
        ));
    }
    let m = (s.n * s.h * s.w) as f64;
    let src = x.data();
    let plane = s.h * s.w;
    let mut mean = vec![0.0; s.c];
    let mut var = vec![0.0; s.c];
    for c in 0..s.c {
        let mut acc = 0.0;
        for n in 0..s.n {
            let base = (n * s.c + c) * plane;
            for v in &src[base..base + plane] {
                acc += v;
            }
        }
        mean[c] = acc / m;
        let mut acc2 = 0.0;
        for n in 0..s.n {
            let base = (n * s.c + c) * plane;
            for v in &src[base..base + plane] {
                let d = v - mean[c];
                acc2 += d * d;
            }
        }
        var[c] = acc2 / m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let gm = gamma.data();
    let bt = beta.data();
    let mut data = vec![0.0; s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let (mu, is, gv, bv) = (mean[c], inv_std[c], gm[c], bt[c]);
            for (out, v) in data[base..base + plane].iter_mut().zip(&src[base..base + plane]) {
                *out = gv * (v - mu) * is + bv;
            }
        }
    }
    drop(src);
    drop(gm);
    drop(bt);
    Ok(Tensor::from_op(
        data,
        s,
        Rc::new(BatchNormOp {
            input: x.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            mean,
            inv_std,
        }),
    ))
}

impl GradFn for BatchNormOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.input.clone(), self.gamma.clone(), self.beta.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let s = self.input.shape();
        let plane = s.h * s.w;
        let m = (s.n * plane) as f64;
        let src = self.input.data();
        let gm = self.gamma.data();

        // per-channel sums of g and g*xhat
        let mut sum_g = vec![0.0; s.c];
        let mut sum_gx = vec![0.0; s.c];
        for n in 0..s.n {
            for c in 0..s.c {
                let base = (n * s.c + c) * plane;
                let (mu, is) = (self.mean[c], self.inv_std[c]);
                for (gv, v) in g[base..base + plane].iter().zip(&src[base..base + plane]) {
                    sum_g[c] += gv;
                    sum_gx[c] += gv * (v - mu) * is;
                }
            }
        }

        let d_input = want(&self.input).then(|| {
            let mut dx = vec![0.0; s.numel()];
            for n in 0..s.n {
                for c in 0..s.c {
                    let base = (n * s.c + c) * plane;
                    let (mu, is, gv_c) = (self.mean[c], self.inv_std[c], gm[c]);
                    let k = gv_c * is;
                    for ((d, gv), v) in dx[base..base + plane]
                        .iter_mut()
                        .zip(&g[base..base + plane])
                        .zip(&src[base..base + plane])
                    {
                        let xhat = (v - mu) * is;
                        *d = k * (gv - sum_g[c] / m - xhat * sum_gx[c] / m);
                    }
                }
            }
            dx
        });
        let d_gamma = want(&self.gamma).then(|| sum_gx.clone());
        let d_beta = want(&self.beta).then(|| sum_g.clone());
        vec![d_input, d_gamma, d_beta]
    }
}

// ---------------------------------------------------------------------------
// noise injection
// ---------------------------------------------------------------------------

struct NoiseInjectOp {
    input: Tensor,
    scales: Tensor,
    noise: Tensor,
}

/// `out[n,c,y,x] = x[n,c,y,x] + scales[c] * noise[n,0,y,x]`.
///
/// One noise map per sample is shared across channels and weighted by a
/// learned per-channel factor. Gradients flow to `x` and `scales`; the noise
/// tensor is treated as a constant.
pub fn noise_inject(x: &Tensor, scales: &Tensor, noise: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if scales.shape() != Shape::new(1, s.c, 1, 1) {
        return Err(Error::shape(
            "noise_inject",
            format!("scales {} incompatible with input {}", scales.shape(), s),
        ));
    }
    if noise.shape() != Shape::new(s.n, 1, s.h, s.w) {
        return Err(Error::shape(
            "noise_inject",
            format!("noise {} incompatible with input {}", noise.shape(), s),
        ));
    }
    let plane = s.h * s.w;
    let src = x.data();
    let sc = scales.data();
    let nz = noise.data();
    let mut data = vec![0.0; s.numel()];
    for n in 0..s.n {
        let noise_base = n * plane;
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let k = sc[c];
            for ((out, v), nv) in data[base..base + plane]
                .iter_mut()
                .zip(&src[base..base + plane])
                .zip(&nz[noise_base..noise_base + plane])
            {
                *out = v + k * nv;
            }
        }
    }
    drop(src);
    drop(sc);
    drop(nz);
    Ok(Tensor::from_op(
        data,
        s,
        Rc::new(NoiseInjectOp {
            input: x.clone(),
            scales: scales.clone(),
            noise: noise.clone(),
        }),
    ))
}

impl GradFn for NoiseInjectOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.input.clone(), self.scales.clone(), self.noise.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let s = self.input.shape();
        let plane = s.h * s.w;
        let d_input = want(&self.input).then(|| g.to_vec());
        let d_scales = want(&self.scales).then(|| {
            let nz = self.noise.data();
            let mut ds = vec![0.0; s.c];
            for n in 0..s.n {
                let noise_base = n * plane;
                for c in 0..s.c {
                    let base = (n * s.c + c) * plane;
                    let mut acc = 0.0;
                    for (gv, nv) in g[base..base + plane]
                        .iter()
                        .zip(&nz[noise_base..noise_base + plane])
                    {
                        acc += gv * nv;
                    }
                    ds[c] += acc;
                }
            }
            ds
        });
        // noise is always a frozen sample
        vec![d_input, d_scales, None]
    }
}
