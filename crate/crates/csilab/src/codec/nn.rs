//! Minimal convolutional network machinery with hand-written backward passes.
//!
//! Everything runs in f64. Layers cache what they need during `forward` and
//! accumulate parameter gradients during `backward`; an [`Adam`] optimizer
//! updates the flattened parameter set. Kernels must have odd extents; a
//! strided conv halves (or quarters) a dimension and the matching transposed
//! conv restores it, so encoder/decoder stacks mirror exactly.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CsiError, Result};

/// Dense (channels, height, width) tensor, row-major within a channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Tensor {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.h + y) * self.w + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// A learnable parameter block with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    fn new(value: Vec<f64>) -> Param {
        let grad = vec![0.0; value.len()];
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    /// weights laid out [out_c][in_c][kh][kw]
    pub weight: Param,
    pub bias: Param,
    cached_input: Option<Tensor>,
}

impl Conv2d {
    pub fn new<R: Rng>(
        in_c: usize,
        out_c: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        rng: &mut R,
    ) -> Result<Conv2d> {
        let (kh, kw) = kernel;
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(CsiError::Config("conv kernels must have odd extents".into()));
        }
        let fan_in = (in_c * kh * kw) as f64;
        let std = (2.0 / fan_in).sqrt();
        let weight: Vec<f64> = (0..out_c * in_c * kh * kw)
            .map(|_| {
                let n: f64 = StandardNormal.sample(rng);
                n * std
            })
            .collect();
        Ok(Conv2d {
            in_c,
            out_c,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            weight: Param::new(weight),
            bias: Param::new(vec![0.0; out_c]),
            cached_input: None,
        })
    }

    pub fn out_shape(&self, h: usize, w: usize) -> (usize, usize) {
        // out = floor((in - 1)/s) + 1 with pad (k-1)/2, i.e. ceil(in/s)
        ((h - 1) / self.sh + 1, (w - 1) / self.sw + 1)
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        debug_assert_eq!(x.c, self.in_c);
        let (oh, ow) = self.out_shape(x.h, x.w);
        let (ph, pw) = ((self.kh - 1) / 2, (self.kw - 1) / 2);
        let mut out = Tensor::zeros(self.out_c, oh, ow);
        for oc in 0..self.out_c {
            let b = self.bias.value[oc];
            for oy in 0..oh {
                let y0 = (oy * self.sh) as isize - ph as isize;
                let ky_lo = (-y0).max(0) as usize;
                let ky_hi = (x.h as isize - y0).min(self.kh as isize).max(0) as usize;
                for ox in 0..ow {
                    let mut acc = b;
                    let x0 = (ox * self.sw) as isize - pw as isize;
                    let kx_lo = (-x0).max(0) as usize;
                    let kx_hi = (x.w as isize - x0).min(self.kw as isize).max(0) as usize;
                    for ic in 0..self.in_c {
                        let wbase = ((oc * self.in_c + ic) * self.kh) * self.kw;
                        for ky in ky_lo..ky_hi {
                            let iy = (y0 + ky as isize) as usize;
                            let row = (ic * x.h + iy) * x.w;
                            let i0 = row + (x0 + kx_lo as isize) as usize;
                            let w0 = wbase + ky * self.kw + kx_lo;
                            let n = kx_hi - kx_lo;
                            acc += self.weight.value[w0..w0 + n]
                                .iter()
                                .zip(&x.data[i0..i0 + n])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                    }
                    *out.at_mut(oc, oy, ox) = acc;
                }
            }
        }
        if train {
            self.cached_input = Some(x.clone());
        }
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self
            .cached_input
            .as_ref()
            .expect("backward without forward(train=true)");
        let (ph, pw) = ((self.kh - 1) / 2, (self.kw - 1) / 2);
        let mut grad_in = Tensor::zeros(x.c, x.h, x.w);
        for oc in 0..self.out_c {
            for oy in 0..grad_out.h {
                let y0 = (oy * self.sh) as isize - ph as isize;
                let ky_lo = (-y0).max(0) as usize;
                let ky_hi = (x.h as isize - y0).min(self.kh as isize).max(0) as usize;
                for ox in 0..grad_out.w {
                    let g = grad_out.at(oc, oy, ox);
                    if g == 0.0 {
                        continue;
                    }
                    self.bias.grad[oc] += g;
                    let x0 = (ox * self.sw) as isize - pw as isize;
                    let kx_lo = (-x0).max(0) as usize;
                    let kx_hi = (x.w as isize - x0).min(self.kw as isize).max(0) as usize;
                    let n = kx_hi - kx_lo;
                    for ic in 0..self.in_c {
                        let wbase = ((oc * self.in_c + ic) * self.kh) * self.kw;
                        for ky in ky_lo..ky_hi {
                            let iy = (y0 + ky as isize) as usize;
                            let i0 = (ic * x.h + iy) * x.w + (x0 + kx_lo as isize) as usize;
                            let w0 = wbase + ky * self.kw + kx_lo;
                            for k in 0..n {
                                self.weight.grad[w0 + k] += g * x.data[i0 + k];
                                grad_in.data[i0 + k] += g * self.weight.value[w0 + k];
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

/// Transposed convolution upsampling by the stride factor: out = in * stride.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    /// weights laid out [in_c][out_c][kh][kw]
    pub weight: Param,
    pub bias: Param,
    cached_input: Option<Tensor>,
}

impl ConvTranspose2d {
    pub fn new<R: Rng>(
        in_c: usize,
        out_c: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        rng: &mut R,
    ) -> Result<ConvTranspose2d> {
        let (kh, kw) = kernel;
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(CsiError::Config("conv kernels must have odd extents".into()));
        }
        let fan_in = (in_c * kh * kw) as f64;
        let std = (2.0 / fan_in).sqrt();
        let weight: Vec<f64> = (0..in_c * out_c * kh * kw)
            .map(|_| {
                let n: f64 = StandardNormal.sample(rng);
                n * std
            })
            .collect();
        Ok(ConvTranspose2d {
            in_c,
            out_c,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            weight: Param::new(weight),
            bias: Param::new(vec![0.0; out_c]),
            cached_input: None,
        })
    }

    pub fn out_shape(&self, h: usize, w: usize) -> (usize, usize) {
        (h * self.sh, w * self.sw)
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        debug_assert_eq!(x.c, self.in_c);
        let (oh, ow) = self.out_shape(x.h, x.w);
        let (ph, pw) = ((self.kh - 1) / 2, (self.kw - 1) / 2);
        let mut out = Tensor::zeros(self.out_c, oh, ow);
        for oc in 0..self.out_c {
            let b = self.bias.value[oc];
            out.channel_mut(oc).iter_mut().for_each(|v| *v = b);
        }
        for ic in 0..self.in_c {
            for iy in 0..x.h {
                let y0 = (iy * self.sh) as isize - ph as isize;
                let ky_lo = (-y0).max(0) as usize;
                let ky_hi = (oh as isize - y0).min(self.kh as isize).max(0) as usize;
                for ix in 0..x.w {
                    let v = x.at(ic, iy, ix);
                    if v == 0.0 {
                        continue;
                    }
                    let x0 = (ix * self.sw) as isize - pw as isize;
                    let kx_lo = (-x0).max(0) as usize;
                    let kx_hi = (ow as isize - x0).min(self.kw as isize).max(0) as usize;
                    let n = kx_hi - kx_lo;
                    for oc in 0..self.out_c {
                        let wbase = ((ic * self.out_c + oc) * self.kh) * self.kw;
                        for ky in ky_lo..ky_hi {
                            let oy = (y0 + ky as isize) as usize;
                            let o0 = (oc * oh + oy) * ow + (x0 + kx_lo as isize) as usize;
                            let w0 = wbase + ky * self.kw + kx_lo;
                            out.data[o0..o0 + n]
                                .iter_mut()
                                .zip(&self.weight.value[w0..w0 + n])
                                .for_each(|(o, w)| *o += v * w);
                        }
                    }
                }
            }
        }
        if train {
            self.cached_input = Some(x.clone());
        }
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self
            .cached_input
            .as_ref()
            .expect("backward without forward(train=true)");
        let (oh, ow) = (grad_out.h, grad_out.w);
        let (ph, pw) = ((self.kh - 1) / 2, (self.kw - 1) / 2);
        for oc in 0..self.out_c {
            self.bias.grad[oc] += grad_out.channel(oc).iter().sum::<f64>();
        }
        let mut grad_in = Tensor::zeros(x.c, x.h, x.w);
        for ic in 0..self.in_c {
            for iy in 0..x.h {
                let y0 = (iy * self.sh) as isize - ph as isize;
                let ky_lo = (-y0).max(0) as usize;
                let ky_hi = (oh as isize - y0).min(self.kh as isize).max(0) as usize;
                for ix in 0..x.w {
                    let v = x.at(ic, iy, ix);
                    let mut acc = 0.0;
                    let x0 = (ix * self.sw) as isize - pw as isize;
                    let kx_lo = (-x0).max(0) as usize;
                    let kx_hi = (ow as isize - x0).min(self.kw as isize).max(0) as usize;
                    let n = kx_hi - kx_lo;
                    for oc in 0..self.out_c {
                        let wbase = ((ic * self.out_c + oc) * self.kh) * self.kw;
                        for ky in ky_lo..ky_hi {
                            let oy = (y0 + ky as isize) as usize;
                            let o0 = (oc * oh + oy) * ow + (x0 + kx_lo as isize) as usize;
                            let w0 = wbase + ky * self.kw + kx_lo;
                            for k in 0..n {
                                let g = grad_out.data[o0 + k];
                                self.weight.grad[w0 + k] += g * v;
                                acc += g * self.weight.value[w0 + k];
                            }
                        }
                    }
                    *grad_in.at_mut(ic, iy, ix) = acc;
                }
            }
        }
        grad_in
    }
}

/// Parametric ReLU with one learnable slope per channel.
#[derive(Debug, Clone)]
pub struct PRelu {
    pub slope: Param,
    cached_input: Option<Tensor>,
}

impl PRelu {
    pub fn new(channels: usize) -> PRelu {
        PRelu {
            slope: Param::new(vec![0.2; channels]),
            cached_input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut out = x.clone();
        for c in 0..x.c {
            let a = self.slope.value[c];
            for v in out.channel_mut(c) {
                if *v < 0.0 {
                    *v *= a;
                }
            }
        }
        if train {
            self.cached_input = Some(x.clone());
        }
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self
            .cached_input
            .as_ref()
            .expect("backward without forward(train=true)");
        let mut grad_in = grad_out.clone();
        for c in 0..x.c {
            let a = self.slope.value[c];
            let mut da = 0.0;
            let xs = x.channel(c);
            for (g, &xv) in grad_in.channel_mut(c).iter_mut().zip(xs) {
                if xv < 0.0 {
                    da += *g * xv;
                    *g *= a;
                }
            }
            self.slope.grad[c] += da;
        }
        grad_in
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    ConvT(ConvTranspose2d),
    PRelu(PRelu),
    Residual(ResidualBlock),
}

/// Two stride-1 convolutions with a PReLU in between; the input is added
/// back onto the output (element-wise shortcut).
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub layers: Vec<Layer>,
}

impl ResidualBlock {
    pub fn new<R: Rng>(channels: usize, kernel: (usize, usize), rng: &mut R) -> Result<ResidualBlock> {
        Ok(ResidualBlock {
            layers: vec![
                Layer::Conv(Conv2d::new(channels, channels, kernel, (1, 1), rng)?),
                Layer::PRelu(PRelu::new(channels)),
                Layer::Conv(Conv2d::new(channels, channels, kernel, (1, 1), rng)?),
            ],
        })
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut y = x.clone();
        for l in self.layers.iter_mut() {
            y = l.forward(&y, train);
        }
        for (o, &i) in y.data.iter_mut().zip(x.data.iter()) {
            *o += i;
        }
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let mut g = grad_out.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g);
        }
        for (gi, &go) in g.data.iter_mut().zip(grad_out.data.iter()) {
            *gi += go;
        }
        g
    }
}

impl Layer {
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        match self {
            Layer::Conv(l) => l.forward(x, train),
            Layer::ConvT(l) => l.forward(x, train),
            Layer::PRelu(l) => l.forward(x, train),
            Layer::Residual(l) => l.forward(x, train),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        match self {
            Layer::Conv(l) => l.backward(grad_out),
            Layer::ConvT(l) => l.backward(grad_out),
            Layer::PRelu(l) => l.backward(grad_out),
            Layer::Residual(l) => l.backward(grad_out),
        }
    }

    pub fn visit_params<F: FnMut(&mut Param)>(&mut self, f: &mut F) {
        match self {
            Layer::Conv(l) => {
                f(&mut l.weight);
                f(&mut l.bias);
            }
            Layer::ConvT(l) => {
                f(&mut l.weight);
                f(&mut l.bias);
            }
            Layer::PRelu(l) => f(&mut l.slope),
            Layer::Residual(l) => {
                for inner in l.layers.iter_mut() {
                    inner.visit_params(f);
                }
            }
        }
    }
}

pub fn forward_stack(layers: &mut [Layer], x: &Tensor, train: bool) -> Tensor {
    let mut y = x.clone();
    for l in layers.iter_mut() {
        y = l.forward(&y, train);
    }
    y
}

pub fn backward_stack(layers: &mut [Layer], grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for l in layers.iter_mut().rev() {
        g = l.backward(&g);
    }
    g
}

pub fn zero_grads(layers: &mut [Layer]) {
    for l in layers.iter_mut() {
        l.visit_params(&mut |p| p.zero_grad());
    }
}

pub fn collect_grads(layers: &mut [Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers.iter_mut() {
        l.visit_params(&mut |p| out.extend_from_slice(&p.grad));
    }
    out
}

pub fn collect_values(layers: &mut [Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers.iter_mut() {
        l.visit_params(&mut |p| out.extend_from_slice(&p.value));
    }
    out
}

pub fn set_values(layers: &mut [Layer], flat: &[f64]) {
    let mut pos = 0;
    for l in layers.iter_mut() {
        l.visit_params(&mut |p| {
            let n = p.value.len();
            p.value.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        });
    }
    assert_eq!(pos, flat.len(), "parameter vector length mismatch");
}

pub fn param_count(layers: &mut [Layer]) -> usize {
    let mut n = 0;
    for l in layers.iter_mut() {
        l.visit_params(&mut |p| n += p.value.len());
    }
    n
}

/// Adam over a flat parameter vector spanning a layer stack.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// Apply one step given an externally accumulated flat gradient.
    pub fn step(&mut self, layers: &mut [Layer], flat_grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        let mut pos = 0;
        for l in layers.iter_mut() {
            l.visit_params(&mut |p| {
                for (i, val) in p.value.iter_mut().enumerate() {
                    let g = flat_grad[pos + i];
                    let m = &mut self.m[pos + i];
                    let v = &mut self.v[pos + i];
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mh = *m / b1t;
                    let vh = *v / b2t;
                    *val -= self.lr * mh / (vh.sqrt() + self.eps);
                }
                pos += p.value.len();
            });
        }
        debug_assert_eq!(pos, flat_grad.len());
    }
}
