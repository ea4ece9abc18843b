//! Layer kinds and their forward/backward kernels.
//!
//! Image tensors are laid out `[height, width, channels]` (row-major, channels
//! fastest). Dense weights are `[in, out]`; conv kernels are
//! `[kh, kw, in_ch, out_ch]`. Only valid padding is supported.

use serde::{Deserialize, Serialize};

use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Conv2d,
    Relu,
    Maxpool2d,
    Flatten,
    Softmax,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::Maxpool2d => "maxpool2d",
            LayerKind::Flatten => "flatten",
            LayerKind::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T: Real = f32> {
    Dense {
        weights: Tensor<T>,
        bias: Tensor<T>,
    },
    Conv2d {
        weights: Tensor<T>,
        bias: Tensor<T>,
        stride: usize,
    },
    Relu,
    MaxPool2d {
        size: usize,
        stride: usize,
    },
    Flatten,
    Softmax,
}

/// Accumulated parameter gradients of one layer; empty for parameter-free layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T: Real = f32> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ParamGrads<T> {
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a = *a + *b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a = *a + *b;
        }
    }
}

impl<T: Real> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense { .. } => LayerKind::Dense,
            Layer::Conv2d { .. } => LayerKind::Conv2d,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool2d { .. } => LayerKind::Maxpool2d,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Softmax => LayerKind::Softmax,
        }
    }

    pub fn params(&self) -> Option<(&Tensor<T>, &Tensor<T>)> {
        match self {
            Layer::Dense { weights, bias } | Layer::Conv2d { weights, bias, .. } => Some((weights, bias)),
            _ => None,
        }
    }

    pub(crate) fn params_mut(&mut self) -> Option<(&mut Tensor<T>, &mut Tensor<T>)> {
        match self {
            Layer::Dense { weights, bias } | Layer::Conv2d { weights, bias, .. } => Some((weights, bias)),
            _ => None,
        }
    }

    pub fn zero_grads(&self) -> ParamGrads<T> {
        match self.params() {
            Some((w, b)) => ParamGrads {
                weights: vec![T::zero(); w.len()],
                bias: vec![T::zero(); b.len()],
            },
            None => ParamGrads {
                weights: Vec::new(),
                bias: Vec::new(),
            },
        }
    }

    pub fn cast<U: Real>(&self) -> Layer<U> {
        match self {
            Layer::Dense { weights, bias } => Layer::Dense {
                weights: weights.cast(),
                bias: bias.cast(),
            },
            Layer::Conv2d { weights, bias, stride } => Layer::Conv2d {
                weights: weights.cast(),
                bias: bias.cast(),
                stride: *stride,
            },
            Layer::Relu => Layer::Relu,
            Layer::MaxPool2d { size, stride } => Layer::MaxPool2d {
                size: *size,
                stride: *stride,
            },
            Layer::Flatten => Layer::Flatten,
            Layer::Softmax => Layer::Softmax,
        }
    }

    /// Output shape for the given input shape, or a description of why the
    /// layer cannot accept it.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match self {
            Layer::Dense { weights, bias } => {
                let ws = weights.shape();
                if ws.len() != 2 {
                    return Err(format!("dense weights must be [in, out], got {ws:?}"));
                }
                if bias.shape() != [ws[1]] {
                    return Err(format!("dense bias must be [{}], got {:?}", ws[1], bias.shape()));
                }
                if input != [ws[0]] {
                    return Err(format!("dense expects input [{}], got {input:?}", ws[0]));
                }
                Ok(vec![ws[1]])
            }
            Layer::Conv2d { weights, bias, stride } => {
                let ws = weights.shape();
                if ws.len() != 4 {
                    return Err(format!("conv2d weights must be [kh, kw, in_ch, out_ch], got {ws:?}"));
                }
                if bias.shape() != [ws[3]] {
                    return Err(format!("conv2d bias must be [{}], got {:?}", ws[3], bias.shape()));
                }
                if *stride == 0 {
                    return Err("conv2d stride must be positive".into());
                }
                if input.len() != 3 || input[2] != ws[2] {
                    return Err(format!("conv2d expects [h, w, {}] input, got {input:?}", ws[2]));
                }
                if input[0] < ws[0] || input[1] < ws[1] {
                    return Err(format!("conv2d kernel {ws:?} larger than input {input:?}"));
                }
                Ok(vec![
                    (input[0] - ws[0]) / stride + 1,
                    (input[1] - ws[1]) / stride + 1,
                    ws[3],
                ])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2d { size, stride } => {
                if *size == 0 || *stride == 0 {
                    return Err("maxpool2d size and stride must be positive".into());
                }
                if input.len() != 3 || input[0] < *size || input[1] < *size {
                    return Err(format!("maxpool2d of size {size} cannot take input {input:?}"));
                }
                Ok(vec![
                    (input[0] - size) / stride + 1,
                    (input[1] - size) / stride + 1,
                    input[2],
                ])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Softmax => {
                if input.len() != 1 {
                    return Err(format!("softmax expects a vector, got {input:?}"));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Forward pass. The caller guarantees `x` has a shape accepted by
    /// [`Layer::output_shape`].
    pub(crate) fn forward(&self, x: &Tensor<T>, out_shape: &[usize]) -> Tensor<T> {
        let data = match self {
            Layer::Dense { weights, bias } => dense_forward(x.data(), weights, bias),
            Layer::Conv2d { weights, bias, stride } => conv_forward(x, weights, bias, *stride, out_shape),
            Layer::Relu => x
                .data()
                .iter()
                .map(|&v| if v > T::zero() { v } else { T::zero() })
                .collect(),
            Layer::MaxPool2d { size, stride } => maxpool_forward(x, *size, *stride, out_shape),
            Layer::Flatten => x.data().to_vec(),
            Layer::Softmax => softmax(x.data()),
        };
        Tensor::from_parts(out_shape.to_vec(), data)
    }

    /// Gradient with respect to the layer input given the gradient `gy` with
    /// respect to its output `y`. Parameter gradients are accumulated into
    /// `grads` when provided.
    pub(crate) fn backward(&self, x: &Tensor<T>, y: &Tensor<T>, gy: &[T], grads: Option<&mut ParamGrads<T>>) -> Vec<T> {
        match self {
            Layer::Dense { weights, .. } => dense_backward(x.data(), weights, gy, grads),
            Layer::Conv2d { weights, stride, .. } => conv_backward(x, weights, *stride, y.shape(), gy, grads),
            // Subgradient 0 at exactly-zero pre-activation.
            Layer::Relu => x
                .data()
                .iter()
                .zip(gy)
                .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                .collect(),
            Layer::MaxPool2d { size, stride } => maxpool_backward(x, *size, *stride, y.shape(), gy),
            Layer::Flatten => gy.to_vec(),
            Layer::Softmax => {
                let p = y.data();
                let dot = p.iter().zip(gy).fold(T::zero(), |acc, (&pi, &gi)| acc + pi * gi);
                p.iter().zip(gy).map(|(&pi, &gi)| pi * (gi - dot)).collect()
            }
        }
    }
}

pub(crate) fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

fn dense_forward<T: Real>(x: &[T], weights: &Tensor<T>, bias: &Tensor<T>) -> Vec<T> {
    let out = weights.shape()[1];
    let w = weights.data();
    let mut y = bias.data().to_vec();
    for (i, &xi) in x.iter().enumerate() {
        if xi == T::zero() {
            continue;
        }
        let row = &w[i * out..(i + 1) * out];
        for (yj, &wij) in y.iter_mut().zip(row) {
            *yj = *yj + xi * wij;
        }
    }
    y
}

fn dense_backward<T: Real>(x: &[T], weights: &Tensor<T>, gy: &[T], grads: Option<&mut ParamGrads<T>>) -> Vec<T> {
    let out = weights.shape()[1];
    let w = weights.data();
    let gx = (0..x.len())
        .map(|i| {
            w[i * out..(i + 1) * out]
                .iter()
                .zip(gy)
                .fold(T::zero(), |acc, (&wij, &gj)| acc + wij * gj)
        })
        .collect();
    if let Some(g) = grads {
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (gw, &gj) in g.weights[i * out..(i + 1) * out].iter_mut().zip(gy) {
                *gw = *gw + xi * gj;
            }
        }
        for (gb, &gj) in g.bias.iter_mut().zip(gy) {
            *gb = *gb + gj;
        }
    }
    gx
}

fn conv_forward<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    out_shape: &[usize],
) -> Vec<T> {
    let (w_in, c_in) = (x.shape()[1], x.shape()[2]);
    let ws = weights.shape();
    let (kh, kw, oc) = (ws[0], ws[1], ws[3]);
    let (oh, ow) = (out_shape[0], out_shape[1]);
    let (xd, wd, bd) = (x.data(), weights.data(), bias.data());
    let mut y = Vec::with_capacity(oh * ow * oc);
    for oy in 0..oh {
        for ox in 0..ow {
            let start = y.len();
            y.extend_from_slice(bd);
            let acc = &mut y[start..];
            for ky in 0..kh {
                for kx in 0..kw {
                    let xbase = ((oy * stride + ky) * w_in + ox * stride + kx) * c_in;
                    let wbase = (ky * kw + kx) * c_in * oc;
                    for ic in 0..c_in {
                        let xv = xd[xbase + ic];
                        if xv == T::zero() {
                            continue;
                        }
                        let wrow = &wd[wbase + ic * oc..wbase + (ic + 1) * oc];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a = *a + xv * wv;
                        }
                    }
                }
            }
        }
    }
    y
}

fn conv_backward<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    out_shape: &[usize],
    gy: &[T],
    mut grads: Option<&mut ParamGrads<T>>,
) -> Vec<T> {
    let (w_in, c_in) = (x.shape()[1], x.shape()[2]);
    let ws = weights.shape();
    let (kh, kw, oc) = (ws[0], ws[1], ws[3]);
    let (oh, ow) = (out_shape[0], out_shape[1]);
    let (xd, wd) = (x.data(), weights.data());
    let mut gx = vec![T::zero(); xd.len()];
    for oy in 0..oh {
        for ox in 0..ow {
            let g = &gy[(oy * ow + ox) * oc..(oy * ow + ox + 1) * oc];
            if g.iter().all(|&v| v == T::zero()) {
                continue;
            }
            for ky in 0..kh {
                for kx in 0..kw {
                    let xbase = ((oy * stride + ky) * w_in + ox * stride + kx) * c_in;
                    let wbase = (ky * kw + kx) * c_in * oc;
                    for ic in 0..c_in {
                        let wrow = &wd[wbase + ic * oc..wbase + (ic + 1) * oc];
                        gx[xbase + ic] = wrow.iter().zip(g).fold(gx[xbase + ic], |acc, (&wv, &gv)| acc + wv * gv);
                        if let Some(pg) = grads.as_deref_mut() {
                            let xv = xd[xbase + ic];
                            if xv != T::zero() {
                                let gw = &mut pg.weights[wbase + ic * oc..wbase + (ic + 1) * oc];
                                for (a, &gv) in gw.iter_mut().zip(g) {
                                    *a = *a + xv * gv;
                                }
                            }
                        }
                    }
                }
            }
            if let Some(pg) = grads.as_deref_mut() {
                for (b, &gv) in pg.bias.iter_mut().zip(g) {
                    *b = *b + gv;
                }
            }
        }
    }
    gx
}

/// Row-major index of the first maximal element of a pooling window.
fn window_argmax<T: Real>(xd: &[T], w_in: usize, c: usize, y0: usize, x0: usize, ch: usize, size: usize) -> usize {
    let mut best = (y0 * w_in + x0) * c + ch;
    for ky in 0..size {
        for kx in 0..size {
            let idx = ((y0 + ky) * w_in + x0 + kx) * c + ch;
            if xd[idx] > xd[best] {
                best = idx;
            }
        }
    }
    best
}

fn maxpool_forward<T: Real>(x: &Tensor<T>, size: usize, stride: usize, out_shape: &[usize]) -> Vec<T> {
    let (w_in, c) = (x.shape()[1], x.shape()[2]);
    let xd = x.data();
    let mut y = Vec::with_capacity(out_shape.iter().product());
    for oy in 0..out_shape[0] {
        for ox in 0..out_shape[1] {
            for ch in 0..c {
                y.push(xd[window_argmax(xd, w_in, c, oy * stride, ox * stride, ch, size)]);
            }
        }
    }
    y
}

fn maxpool_backward<T: Real>(x: &Tensor<T>, size: usize, stride: usize, out_shape: &[usize], gy: &[T]) -> Vec<T> {
    let (w_in, c) = (x.shape()[1], x.shape()[2]);
    let xd = x.data();
    let mut gx = vec![T::zero(); xd.len()];
    let mut k = 0;
    for oy in 0..out_shape[0] {
        for ox in 0..out_shape[1] {
            for ch in 0..c {
                let src = window_argmax(xd, w_in, c, oy * stride, ox * stride, ch, size);
                gx[src] = gx[src] + gy[k];
                k += 1;
            }
        }
    }
    gx
}
