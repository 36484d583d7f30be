//! Layers with explicit forward and backward passes over batch matrices.
//!
//! Parameters live in one flat buffer owned by the network; a layer only
//! records the ranges of its weight and bias inside that buffer.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::Matrix;

const NORM_EPS: f64 = 1e-5;

/// Channel-major feature shape of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn flat(c: usize) -> Self {
        Shape { c, h: 1, w: 1 }
    }

    pub fn size(&self) -> usize {
        self.c * self.h * self.w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense { out: usize },
    Relu,
    /// 3x3 convolution, stride 1, zero padding 1.
    Conv3x3 { out_channels: usize },
    /// 2x2 max pooling, stride 2.
    MaxPool2,
    /// Per-sample normalization over all features with a per-channel gain and bias.
    Norm,
    Dropout { p: f32 },
}

#[derive(Debug, Clone)]
pub(crate) struct Layer {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

#[derive(Debug, Clone)]
pub(crate) enum Aux<F> {
    None,
    PoolArgmax(Vec<u32>),
    Norm { xhat: Vec<F>, rstd: Vec<F> },
    Mask(Vec<F>),
}

#[inline]
fn cast<F: Float>(v: f64) -> F {
    F::from(v).unwrap()
}

impl Layer {
    /// Lay out `spec` after `offset` parameters, returning the layer and the new offset.
    pub fn build(spec: LayerSpec, input: Shape, offset: usize) -> Result<(Layer, usize)> {
        let (output, wlen, blen) = match spec {
            LayerSpec::Dense { out } => {
                if out == 0 {
                    return Err(Error::config("dense layer width must be positive"));
                }
                (Shape::flat(out), input.size() * out, out)
            }
            LayerSpec::Relu => (input, 0, 0),
            LayerSpec::Conv3x3 { out_channels } => {
                if out_channels == 0 {
                    return Err(Error::config("convolution width must be positive"));
                }
                (
                    Shape { c: out_channels, ..input },
                    out_channels * input.c * 9,
                    out_channels,
                )
            }
            LayerSpec::MaxPool2 => {
                if input.h < 2 || input.w < 2 {
                    return Err(Error::config("max pooling needs at least a 2x2 input"));
                }
                (
                    Shape {
                        c: input.c,
                        h: input.h / 2,
                        w: input.w / 2,
                    },
                    0,
                    0,
                )
            }
            LayerSpec::Norm => (input, input.c, input.c),
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::config("dropout probability must be in [0, 1)"));
                }
                (input, 0, 0)
            }
        };
        let weight = offset..offset + wlen;
        let bias = weight.end..weight.end + blen;
        let end = bias.end;
        Ok((
            Layer {
                spec,
                input,
                output,
                weight,
                bias,
            },
            end,
        ))
    }

    pub fn has_params(&self) -> bool {
        !self.weight.is_empty()
    }

    /// Weights of dense and convolution layers are decayed; gains and biases are not.
    pub fn decayed(&self) -> bool {
        matches!(self.spec, LayerSpec::Dense { .. } | LayerSpec::Conv3x3 { .. })
    }

    pub fn init<F: Float>(&self, params: &mut [F], rng: &mut StreamRng) {
        match self.spec {
            LayerSpec::Dense { .. } | LayerSpec::Conv3x3 { .. } => {
                let fan_in = self.weight.len() / self.bias.len();
                let bound = (6.0 / fan_in as f64).sqrt();
                for p in &mut params[self.weight.clone()] {
                    *p = cast(rng.random_range(-bound..bound));
                }
                for p in &mut params[self.bias.clone()] {
                    *p = F::zero();
                }
            }
            LayerSpec::Norm => {
                for p in &mut params[self.weight.clone()] {
                    *p = F::one();
                }
                for p in &mut params[self.bias.clone()] {
                    *p = F::zero();
                }
            }
            _ => {}
        }
    }

    pub fn forward<F: Float>(
        &self,
        params: &[F],
        x: &Matrix<F>,
        dropout: Option<&mut StreamRng>,
    ) -> (Matrix<F>, Aux<F>) {
        let n = x.rows();
        let mut y = Matrix::zeros(n, self.output.size());
        let aux = match self.spec {
            LayerSpec::Dense { out } => {
                let w = &params[self.weight.clone()];
                let b = &params[self.bias.clone()];
                for r in 0..n {
                    let xr = x.row(r);
                    let yr = y.row_mut(r);
                    yr.copy_from_slice(b);
                    for (i, &xi) in xr.iter().enumerate() {
                        if xi == F::zero() {
                            continue;
                        }
                        let wr = &w[i * out..(i + 1) * out];
                        for (yo, &wo) in yr.iter_mut().zip(wr) {
                            *yo = *yo + xi * wo;
                        }
                    }
                }
                Aux::None
            }
            LayerSpec::Relu => {
                for (o, &v) in y.data_mut().iter_mut().zip(x.data()) {
                    *o = if v > F::zero() { v } else { F::zero() };
                }
                Aux::None
            }
            LayerSpec::Conv3x3 { .. } => {
                let w = &params[self.weight.clone()];
                let b = &params[self.bias.clone()];
                for r in 0..n {
                    conv3x3_forward(self.input, self.output.c, w, b, x.row(r), y.row_mut(r));
                }
                Aux::None
            }
            LayerSpec::MaxPool2 => {
                let mut arg = Vec::with_capacity(n * self.output.size());
                for r in 0..n {
                    maxpool_forward(self.input, self.output, x.row(r), y.row_mut(r), &mut arg);
                }
                Aux::PoolArgmax(arg)
            }
            LayerSpec::Norm => {
                let d = self.input.size();
                let hw = self.input.h * self.input.w;
                let gain = &params[self.weight.clone()];
                let beta = &params[self.bias.clone()];
                let mut xhat = vec![F::zero(); n * d];
                let mut rstd = Vec::with_capacity(n);
                let inv_d = cast::<F>(1.0 / d as f64);
                for r in 0..n {
                    let xr = x.row(r);
                    let mean = xr.iter().fold(F::zero(), |a, &v| a + v) * inv_d;
                    let var = xr
                        .iter()
                        .fold(F::zero(), |a, &v| a + (v - mean) * (v - mean))
                        * inv_d;
                    let rs = F::one() / (var + cast(NORM_EPS)).sqrt();
                    rstd.push(rs);
                    let xh = &mut xhat[r * d..(r + 1) * d];
                    let yr = y.row_mut(r);
                    for i in 0..d {
                        let c = i / hw;
                        xh[i] = (xr[i] - mean) * rs;
                        yr[i] = gain[c] * xh[i] + beta[c];
                    }
                }
                Aux::Norm { xhat, rstd }
            }
            LayerSpec::Dropout { p } => match dropout {
                Some(rng) if p > 0.0 => {
                    let scale = cast::<F>(1.0 / (1.0 - p as f64));
                    let mask: Vec<F> = (0..x.data().len())
                        .map(|_| {
                            if rng.random_bool(p as f64) {
                                F::zero()
                            } else {
                                scale
                            }
                        })
                        .collect();
                    for ((o, &v), &m) in y.data_mut().iter_mut().zip(x.data()).zip(&mask) {
                        *o = v * m;
                    }
                    Aux::Mask(mask)
                }
                _ => {
                    y.data_mut().copy_from_slice(x.data());
                    Aux::None
                }
            },
        };
        (y, aux)
    }

    /// Accumulate parameter gradients into `grads` and return the input gradient.
    pub fn backward<F: Float>(
        &self,
        params: &[F],
        x: &Matrix<F>,
        aux: &Aux<F>,
        dy: &Matrix<F>,
        grads: &mut [F],
    ) -> Matrix<F> {
        let n = x.rows();
        let mut dx = Matrix::zeros(n, self.input.size());
        match (&self.spec, aux) {
            (LayerSpec::Dense { out }, _) => {
                let out = *out;
                let w = &params[self.weight.clone()];
                let (gw, gb) = split_grads(grads, &self.weight, &self.bias);
                for r in 0..n {
                    let xr = x.row(r);
                    let dyr = dy.row(r);
                    for (g, &d) in gb.iter_mut().zip(dyr) {
                        *g = *g + d;
                    }
                    let dxr = dx.row_mut(r);
                    for (i, &xi) in xr.iter().enumerate() {
                        let wr = &w[i * out..(i + 1) * out];
                        dxr[i] = crate::tensor::dot(wr, dyr);
                        if xi == F::zero() {
                            continue;
                        }
                        let gr = &mut gw[i * out..(i + 1) * out];
                        for (g, &d) in gr.iter_mut().zip(dyr) {
                            *g = *g + xi * d;
                        }
                    }
                }
            }
            (LayerSpec::Relu, _) => {
                for ((o, &v), &d) in dx.data_mut().iter_mut().zip(x.data()).zip(dy.data()) {
                    *o = if v > F::zero() { d } else { F::zero() };
                }
            }
            (LayerSpec::Conv3x3 { .. }, _) => {
                let w = &params[self.weight.clone()];
                let (gw, gb) = split_grads(grads, &self.weight, &self.bias);
                for r in 0..n {
                    conv3x3_backward(
                        self.input,
                        self.output.c,
                        w,
                        x.row(r),
                        dy.row(r),
                        dx.row_mut(r),
                        gw,
                        gb,
                    );
                }
            }
            (LayerSpec::MaxPool2, Aux::PoolArgmax(arg)) => {
                let od = self.output.size();
                for r in 0..n {
                    let dxr = dx.row_mut(r);
                    for (j, &d) in dy.row(r).iter().enumerate() {
                        let src = arg[r * od + j] as usize;
                        dxr[src] = dxr[src] + d;
                    }
                }
            }
            (LayerSpec::Norm, Aux::Norm { xhat, rstd }) => {
                let d = self.input.size();
                let hw = self.input.h * self.input.w;
                let gain = &params[self.weight.clone()];
                let (gg, gb) = split_grads(grads, &self.weight, &self.bias);
                let df = cast::<F>(d as f64);
                let mut dxhat = vec![F::zero(); d];
                for r in 0..n {
                    let xh = &xhat[r * d..(r + 1) * d];
                    let dyr = dy.row(r);
                    let mut sum = F::zero();
                    let mut sum_x = F::zero();
                    for i in 0..d {
                        let c = i / hw;
                        gg[c] = gg[c] + dyr[i] * xh[i];
                        gb[c] = gb[c] + dyr[i];
                        dxhat[i] = dyr[i] * gain[c];
                        sum = sum + dxhat[i];
                        sum_x = sum_x + dxhat[i] * xh[i];
                    }
                    let scale = rstd[r] / df;
                    let dxr = dx.row_mut(r);
                    for i in 0..d {
                        dxr[i] = scale * (df * dxhat[i] - sum - xh[i] * sum_x);
                    }
                }
            }
            (LayerSpec::Dropout { .. }, Aux::Mask(mask)) => {
                for ((o, &d), &m) in dx.data_mut().iter_mut().zip(dy.data()).zip(mask) {
                    *o = d * m;
                }
            }
            (LayerSpec::Dropout { .. }, _) => {
                dx.data_mut().copy_from_slice(dy.data());
            }
            _ => unreachable!("layer cache does not match layer kind"),
        }
        dx
    }
}

fn split_grads<'a, F>(grads: &'a mut [F], w: &Range<usize>, b: &Range<usize>) -> (&'a mut [F], &'a mut [F]) {
    debug_assert_eq!(w.end, b.start);
    let (head, tail) = grads[w.start..b.end].split_at_mut(w.len());
    (head, tail)
}

fn conv3x3_forward<F: Float>(inp: Shape, oc_n: usize, w: &[F], b: &[F], x: &[F], y: &mut [F]) {
    let (h, wd) = (inp.h, inp.w);
    let hw = h * wd;
    for oc in 0..oc_n {
        let out = &mut y[oc * hw..(oc + 1) * hw];
        out.iter_mut().for_each(|v| *v = b[oc]);
        for ic in 0..inp.c {
            let plane = &x[ic * hw..(ic + 1) * hw];
            let k = &w[(oc * inp.c + ic) * 9..(oc * inp.c + ic + 1) * 9];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = valid_range(wd, dx);
                    let wv = k[ky * 3 + kx];
                    for yy in y0..y1 {
                        let iy = (yy as isize + dy) as usize;
                        let orow = &mut out[yy * wd + x0..yy * wd + x1];
                        let irow = &plane[iy * wd..(iy + 1) * wd];
                        let ix0 = (x0 as isize + dx) as usize;
                        for (o, &v) in orow.iter_mut().zip(&irow[ix0..ix0 + (x1 - x0)]) {
                            *o = *o + wv * v;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward<F: Float>(
    inp: Shape,
    oc_n: usize,
    w: &[F],
    x: &[F],
    dy: &[F],
    dx: &mut [F],
    gw: &mut [F],
    gb: &mut [F],
) {
    let (h, wd) = (inp.h, inp.w);
    let hw = h * wd;
    for oc in 0..oc_n {
        let g = &dy[oc * hw..(oc + 1) * hw];
        gb[oc] = g.iter().fold(gb[oc], |a, &v| a + v);
        for ic in 0..inp.c {
            let plane = &x[ic * hw..(ic + 1) * hw];
            let base = (oc * inp.c + ic) * 9;
            for ky in 0..3 {
                let sy = ky as isize - 1;
                let (y0, y1) = valid_range(h, sy);
                for kx in 0..3 {
                    let sx = kx as isize - 1;
                    let (x0, x1) = valid_range(wd, sx);
                    let wv = w[base + ky * 3 + kx];
                    let mut acc = F::zero();
                    let ix0 = (x0 as isize + sx) as usize;
                    for yy in y0..y1 {
                        let iy = (yy as isize + sy) as usize;
                        let grow = &g[yy * wd + x0..yy * wd + x1];
                        let irow = &plane[iy * wd + ix0..iy * wd + ix0 + (x1 - x0)];
                        acc = grow.iter().zip(irow).fold(acc, |a, (&d, &v)| a + d * v);
                        let drow = &mut dx[ic * hw + iy * wd + ix0..ic * hw + iy * wd + ix0 + (x1 - x0)];
                        for (o, &d) in drow.iter_mut().zip(grow) {
                            *o = *o + wv * d;
                        }
                    }
                    gw[base + ky * 3 + kx] = gw[base + ky * 3 + kx] + acc;
                }
            }
        }
    }
}

/// Output coordinates whose input coordinate `o + shift` stays inside `0..len`.
#[inline]
fn valid_range(len: usize, shift: isize) -> (usize, usize) {
    let lo = if shift < 0 { (-shift) as usize } else { 0 };
    let hi = if shift > 0 { len - shift as usize } else { len };
    (lo, hi)
}

fn maxpool_forward<F: Float>(inp: Shape, out: Shape, x: &[F], y: &mut [F], arg: &mut Vec<u32>) {
    let hw = inp.h * inp.w;
    for c in 0..out.c {
        for oy in 0..out.h {
            for ox in 0..out.w {
                let mut best = c * hw + (2 * oy) * inp.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = c * hw + (2 * oy + dy) * inp.w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                y[(c * out.h + oy) * out.w + ox] = x[best];
                arg.push(best as u32);
            }
        }
    }
}
