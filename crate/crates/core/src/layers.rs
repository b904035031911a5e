//! Convolution, transposed convolution and leaky-ReLU layers with
//! hand-derived backward passes.
//!
//! Convolution weights are `[c_out, k, k, c_in]`. A transposed convolution
//! stores `[c_in, k, k, c_out]`, which makes it the exact adjoint of the
//! convolution with the same weight buffer: its forward pass is the
//! convolution's input gradient and vice versa.

use rand::Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    TransposedConv,
    Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub kind: LayerKind,
    pub weights: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

/// Gradients for one layer, shaped like its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LayerGrads {
    pub fn zeros_like(params: &LayerParams) -> Self {
        LayerGrads {
            weights: Tensor::zeros(params.weights.shape()),
            bias: Tensor::zeros(params.bias.shape()),
        }
    }

    pub fn add_assign(&mut self, other: &LayerGrads) -> Result<()> {
        self.weights.add_assign(&other.weights)?;
        self.bias.add_assign(&other.bias)
    }

    pub fn scale(&mut self, s: f64) {
        self.weights.data_mut().iter_mut().for_each(|v| *v *= s);
        self.bias.data_mut().iter_mut().for_each(|v| *v *= s);
    }
}

impl LayerParams {
    pub fn conv(weights: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        Self::with_kind(LayerKind::Conv, weights, bias, stride, padding)
    }

    pub fn transposed(
        weights: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Self::with_kind(LayerKind::TransposedConv, weights, bias, stride, padding)
    }

    pub fn activation() -> Self {
        LayerParams {
            kind: LayerKind::Activation,
            weights: Tensor::empty(),
            bias: Tensor::empty(),
            stride: 1,
            padding: 0,
        }
    }

    fn with_kind(
        kind: LayerKind,
        weights: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Argument("stride must be at least 1".into()));
        }
        let ws = weights.shape();
        if ws.len() != 4 || ws[1] != ws[2] {
            return Err(Error::dims(&[0, 0, 0, 0], ws));
        }
        let bias_len = match kind {
            LayerKind::Conv => ws[0],
            _ => ws[3],
        };
        bias.ensure_shape(&[bias_len])?;
        Ok(LayerParams {
            kind,
            weights,
            bias,
            stride,
            padding,
        })
    }

    /// Random initialisation with He-style scaling on the fan-in.
    pub fn init<R: Rng>(
        kind: LayerKind,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = match kind {
            LayerKind::Conv => c_in * kernel * kernel,
            _ => (c_in * kernel * kernel / (stride * stride)).max(1),
        } as f64;
        let bound = gain * (6.0 / fan_in).sqrt();
        let shape = match kind {
            LayerKind::Conv => [c_out, kernel, kernel, c_in],
            _ => [c_in, kernel, kernel, c_out],
        };
        let weights = Tensor::from_fn(&shape, |_| rng.gen_range(-bound..bound));
        Self::with_kind(kind, weights, Tensor::zeros(&[c_out]), stride, padding)
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape().get(1).copied().unwrap_or(0)
    }

    pub fn in_channels(&self) -> usize {
        let ws = self.weights.shape();
        match self.kind {
            LayerKind::Conv => ws[3],
            LayerKind::TransposedConv => ws[0],
            LayerKind::Activation => 0,
        }
    }

    pub fn out_channels(&self) -> usize {
        let ws = self.weights.shape();
        match self.kind {
            LayerKind::Conv => ws[0],
            LayerKind::TransposedConv => ws[3],
            LayerKind::Activation => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        match self.kind {
            LayerKind::Conv => conv2d_forward(input, self),
            LayerKind::TransposedConv => transposed_conv2d_forward(input, self),
            LayerKind::Activation => Ok(activation_forward(input)),
        }
    }

    /// Returns the input gradient and the parameter gradients.
    pub fn backward(&self, input: &Tensor, upstream: &Tensor) -> Result<(Tensor, LayerGrads)> {
        match self.kind {
            LayerKind::Conv => conv2d_backward(input, self, upstream),
            LayerKind::TransposedConv => transposed_conv2d_backward(input, self, upstream),
            LayerKind::Activation => Ok((
                activation_backward(input, upstream)?,
                LayerGrads::zeros_like(self),
            )),
        }
    }

    /// Input gradient only; skips the weight reduction.
    pub fn backward_input(&self, input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        match self.kind {
            LayerKind::Conv => {
                let (h, w, _) = input.hwc()?;
                check_upstream(self, input, upstream)?;
                Ok(correlate_adjoint(upstream, &self.weights, self.stride, self.padding, h, w))
            }
            LayerKind::TransposedConv => {
                check_upstream(self, input, upstream)?;
                Ok(correlate(upstream, &self.weights, None, self.stride, self.padding))
            }
            LayerKind::Activation => activation_backward(input, upstream),
        }
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        let (s, p) = (self.stride, self.padding);
        match self.kind {
            LayerKind::Conv => {
                if h + 2 * p < k || w + 2 * p < k {
                    return Err(Error::Argument(format!(
                        "input {h}x{w} smaller than kernel {k} with padding {p}"
                    )));
                }
                Ok(((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1))
            }
            LayerKind::TransposedConv => {
                let oh = ((h - 1) * s + k).checked_sub(2 * p);
                let ow = ((w - 1) * s + k).checked_sub(2 * p);
                match (oh, ow) {
                    (Some(oh), Some(ow)) if oh > 0 && ow > 0 && h > 0 && w > 0 => Ok((oh, ow)),
                    _ => Err(Error::Argument(format!(
                        "transposed output empty for {h}x{w}"
                    ))),
                }
            }
            LayerKind::Activation => Ok((h, w)),
        }
    }
}

fn check_input(params: &LayerParams, input: &Tensor) -> Result<(usize, usize, usize)> {
    let (h, w, c) = input.hwc()?;
    if c != params.in_channels() {
        let mut expected = input.shape().to_vec();
        expected[2] = params.in_channels();
        return Err(Error::dims(&expected, input.shape()));
    }
    Ok((h, w, c))
}

fn check_upstream(params: &LayerParams, input: &Tensor, upstream: &Tensor) -> Result<()> {
    let (h, w, _) = check_input(params, input)?;
    let (oh, ow) = params.output_dims(h, w)?;
    upstream.ensure_shape(&[oh, ow, params.out_channels()])
}

/// `c = a * b` (or `c += a * b`) for row-major strided matrices.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    n_stride: usize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= (m - 1) * rsa + (k.max(1) - 1) * csa + 1 || k == 0);
    assert!(b.len() >= (k.max(1) - 1) * rsb + (n - 1) * csb + 1 || k == 0);
    assert!(c.len() >= (m - 1) * n_stride + n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n_stride as isize,
            1,
        );
    }
}

struct Geometry {
    h: usize,
    w: usize,
    ci: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.k * self.k * self.ci
    }

    /// Input pixel under output `(oy, ox)` and tap `(ky, kx)`, if inside.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
        if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
            None
        } else {
            Some(iy as usize * self.w + ix as usize)
        }
    }
}

/// Patch matrix `[oh * ow, k * k * c_in]`, zero where the window hangs
/// over the padding.
fn im2col(x: &[f64], g: &Geometry) -> Vec<f64> {
    let p = g.patch();
    let mut cols = vec![0.0; g.oh * g.ow * p];
    par::for_each_chunk_mut(&mut cols, g.ow * p, |oy, row| {
        for ox in 0..g.ow {
            for ky in 0..g.k {
                for kx in 0..g.k {
                    if let Some(src) = g.source(oy, ox, ky, kx) {
                        let dst = ox * p + (ky * g.k + kx) * g.ci;
                        row[dst..dst + g.ci].copy_from_slice(&x[src * g.ci..(src + 1) * g.ci]);
                    }
                }
            }
        }
    });
    cols
}

/// Sum patch rows back onto the input grid (adjoint of [`im2col`]).
fn col2im(cols: &[f64], g: &Geometry) -> Vec<f64> {
    let p = g.patch();
    let mut out = vec![0.0; g.h * g.w * g.ci];
    par::for_each_chunk_mut(&mut out, g.w * g.ci, |iy, row| {
        for ky in 0..g.k {
            let ny = iy as isize + g.pad as isize - ky as isize;
            if ny < 0 || ny % g.stride as isize != 0 || ny as usize / g.stride >= g.oh {
                continue;
            }
            let oy = ny as usize / g.stride;
            for ix in 0..g.w {
                for kx in 0..g.k {
                    let nx = ix as isize + g.pad as isize - kx as isize;
                    if nx < 0 || nx % g.stride as isize != 0 || nx as usize / g.stride >= g.ow {
                        continue;
                    }
                    let ox = nx as usize / g.stride;
                    let src = &cols[(oy * g.ow + ox) * p + (ky * g.k + kx) * g.ci..][..g.ci];
                    for (a, v) in row[ix * g.ci..(ix + 1) * g.ci].iter_mut().zip(src) {
                        *a += v;
                    }
                }
            }
        }
    });
    out
}

/// Rows of the output handled per parallel task.
const ROW_BLOCK: usize = 64;

fn geometry(h: usize, w: usize, ci: usize, k: usize, stride: usize, pad: usize) -> Geometry {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    Geometry { h, w, ci, k, stride, pad, oh, ow }
}

/// Strided cross-correlation with zero padding, `h x w x c_in` to
/// `oh x ow x c_out`.
fn correlate(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Tensor {
    let [h, w, ci] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let ws = weights.shape();
    let (co, k) = (ws[0], ws[1]);
    let g = geometry(h, w, ci, k, stride, pad);
    let p = g.patch();
    let cols = im2col(input.data(), &g);
    let wt = weights.data();
    let mut out = vec![0.0; g.oh * g.ow * co];
    par::for_each_chunk_mut(&mut out, ROW_BLOCK * co, |blk, chunk| {
        let rows = chunk.len() / co;
        if let Some(b) = bias {
            for px in chunk.chunks_mut(co) {
                px.copy_from_slice(b.data());
            }
        }
        let a = &cols[blk * ROW_BLOCK * p..][..rows * p];
        // out[r, c] += sum_j cols[r, j] * wt[c, j]
        gemm(rows, p, co, a, (p, 1), wt, (1, p), chunk, co, bias.is_some());
    });
    Tensor::new(vec![g.oh, g.ow, co], out).expect("conv output shape")
}

/// Adjoint of [`correlate`] with respect to its input, producing an
/// `h x w x c_in` tensor from an `oh x ow x c_out` one.
fn correlate_adjoint(
    grad: &Tensor,
    weights: &Tensor,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
) -> Tensor {
    let co = grad.shape()[2];
    let ws = weights.shape();
    let (k, ci) = (ws[1], ws[3]);
    let g = geometry(h, w, ci, k, stride, pad);
    debug_assert_eq!((g.oh, g.ow), (grad.shape()[0], grad.shape()[1]));
    let p = g.patch();
    let gd = grad.data();
    let wt = weights.data();
    let mut cols = vec![0.0; g.oh * g.ow * p];
    par::for_each_chunk_mut(&mut cols, ROW_BLOCK * p, |blk, chunk| {
        let rows = chunk.len() / p;
        let a = &gd[blk * ROW_BLOCK * co..][..rows * co];
        // cols[r, j] = sum_c grad[r, c] * wt[c, j]
        gemm(rows, co, p, a, (co, 1), wt, (p, 1), chunk, p, false);
    });
    Tensor::new(vec![h, w, ci], col2im(&cols, &g)).expect("adjoint output shape")
}

/// Gradient of [`correlate`] with respect to its weights.
fn correlate_weight_grad(
    input: &Tensor,
    grad: &Tensor,
    k: usize,
    stride: usize,
    pad: usize,
) -> Tensor {
    let [h, w, ci] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let co = grad.shape()[2];
    let g = geometry(h, w, ci, k, stride, pad);
    let p = g.patch();
    let n = g.oh * g.ow;
    let cols = im2col(input.data(), &g);
    let gd = grad.data();
    let mut out = vec![0.0; co * p];
    // One task per group of output channels: out[c, j] = sum_r grad[r, c] * cols[r, j]
    let per = co.div_ceil(par::available_threads().max(1)).max(1);
    par::for_each_chunk_mut(&mut out, per * p, |blk, chunk| {
        let c0 = blk * per;
        let rows = chunk.len() / p;
        gemm(rows, n, p, &gd[c0..], (1, co), &cols, (p, 1), chunk, p, false);
    });
    Tensor::new(vec![co, k, k, ci], out).expect("weight grad shape")
}

fn channel_sums(t: &Tensor) -> Tensor {
    let c = t.shape()[2];
    let mut sums = vec![0.0; c];
    for px in t.data().chunks(c) {
        for (s, v) in sums.iter_mut().zip(px) {
            *s += v;
        }
    }
    Tensor::new(vec![c], sums).expect("bias shape")
}

pub fn conv2d_forward(input: &Tensor, params: &LayerParams) -> Result<Tensor> {
    if params.kind != LayerKind::Conv {
        return Err(Error::Argument("conv2d_forward needs a conv layer".into()));
    }
    let (h, w, _) = check_input(params, input)?;
    params.output_dims(h, w)?;
    Ok(correlate(
        input,
        &params.weights,
        Some(&params.bias),
        params.stride,
        params.padding,
    ))
}

pub fn conv2d_backward(
    input: &Tensor,
    params: &LayerParams,
    upstream: &Tensor,
) -> Result<(Tensor, LayerGrads)> {
    check_upstream(params, input, upstream)?;
    let (h, w, _) = input.hwc()?;
    let grad_input = correlate_adjoint(upstream, &params.weights, params.stride, params.padding, h, w);
    let grads = LayerGrads {
        weights: correlate_weight_grad(
            input,
            upstream,
            params.kernel(),
            params.stride,
            params.padding,
        ),
        bias: channel_sums(upstream),
    };
    Ok((grad_input, grads))
}

pub fn transposed_conv2d_forward(input: &Tensor, params: &LayerParams) -> Result<Tensor> {
    if params.kind != LayerKind::TransposedConv {
        return Err(Error::Argument(
            "transposed_conv2d_forward needs a transposed layer".into(),
        ));
    }
    let (h, w, _) = check_input(params, input)?;
    let (oh, ow) = params.output_dims(h, w)?;
    let mut out = correlate_adjoint(input, &params.weights, params.stride, params.padding, oh, ow);
    let c = params.out_channels();
    let b = params.bias.data();
    for px in out.data_mut().chunks_mut(c) {
        for (v, bc) in px.iter_mut().zip(b) {
            *v += bc;
        }
    }
    Ok(out)
}

pub fn transposed_conv2d_backward(
    input: &Tensor,
    params: &LayerParams,
    upstream: &Tensor,
) -> Result<(Tensor, LayerGrads)> {
    check_upstream(params, input, upstream)?;
    let grad_input = correlate(upstream, &params.weights, None, params.stride, params.padding);
    // Same buffer layout as a conv from the output space back to the input space.
    let weights = correlate_weight_grad(
        upstream,
        input,
        params.kernel(),
        params.stride,
        params.padding,
    );
    Ok((
        grad_input,
        LayerGrads {
            weights,
            bias: channel_sums(upstream),
        },
    ))
}

pub fn leaky_relu(v: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

pub fn activation_forward(input: &Tensor) -> Tensor {
    input.map(leaky_relu)
}

pub fn activation_backward(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    input.zip_map(upstream, |x, g| if x >= 0.0 { g } else { LEAKY_SLOPE * g })
}

/// A fixed chain of layers with its activations cached for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub layers: Vec<LayerParams>,
}

/// Inputs of each layer recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Tensor>,
}

impl Sequential {
    pub fn new(layers: Vec<LayerParams>) -> Self {
        Sequential { layers }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = self.layers[0].forward(x)?;
        for layer in &self.layers[1..] {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, Trace)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let next = layer.forward(&cur)?;
            inputs.push(cur);
            cur = next;
        }
        Ok((cur, Trace { inputs }))
    }

    pub fn backward(&self, trace: &Trace, upstream: &Tensor) -> Result<(Tensor, Vec<LayerGrads>)> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.clone();
        for (layer, input) in self.layers.iter().zip(&trace.inputs).rev() {
            let (gi, lg) = layer.backward(input, &g)?;
            grads.push(lg);
            g = gi;
        }
        grads.reverse();
        Ok((g, grads))
    }

    pub fn backward_input(&self, trace: &Trace, upstream: &Tensor) -> Result<Tensor> {
        let mut g = upstream.clone();
        for (layer, input) in self.layers.iter().zip(&trace.inputs).rev() {
            g = layer.backward_input(input, &g)?;
        }
        Ok(g)
    }

    pub fn zero_grads(&self) -> Vec<LayerGrads> {
        self.layers.iter().map(LayerGrads::zeros_like).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::param_count).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct nested-loop cross-correlation, written independently of `correlate`.
    fn naive_conv(x: &Tensor, p: &LayerParams) -> Tensor {
        let (h, w, ci) = x.hwc().unwrap();
        let k = p.kernel();
        let co = p.out_channels();
        let (s, pad) = (p.stride as i64, p.padding as i64);
        let oh = (h as i64 + 2 * pad - k as i64) / s + 1;
        let ow = (w as i64 + 2 * pad - k as i64) / s + 1;
        let mut out = Tensor::zeros(&[oh as usize, ow as usize, co]);
        for oy in 0..oh {
            for ox in 0..ow {
                for c in 0..co {
                    let mut acc = p.bias.data()[c];
                    for ky in 0..k as i64 {
                        for kx in 0..k as i64 {
                            let iy = oy * s + ky - pad;
                            let ix = ox * s + kx - pad;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            for i in 0..ci {
                                let xv = x.data()[((iy as usize) * w + ix as usize) * ci + i];
                                let wv = p.weights.data()
                                    [((c * k + ky as usize) * k + kx as usize) * ci + i];
                                acc += xv * wv;
                            }
                        }
                    }
                    out.data_mut()[((oy * ow + ox) as usize) * co + c] = acc;
                }
            }
        }
        out
    }

    /// Scatter-form transposed convolution, the textbook definition.
    fn naive_transposed(x: &Tensor, p: &LayerParams) -> Tensor {
        let (h, w, ci) = x.hwc().unwrap();
        let k = p.kernel();
        let co = p.out_channels();
        let (oh, ow) = p.output_dims(h, w).unwrap();
        let mut out = Tensor::zeros(&[oh, ow, co]);
        for iy in 0..h {
            for ix in 0..w {
                for i in 0..ci {
                    let xv = x.data()[(iy * w + ix) * ci + i];
                    for ky in 0..k {
                        for kx in 0..k {
                            let oy = (iy * p.stride + ky) as i64 - p.padding as i64;
                            let ox = (ix * p.stride + kx) as i64 - p.padding as i64;
                            if oy < 0 || ox < 0 || oy >= oh as i64 || ox >= ow as i64 {
                                continue;
                            }
                            for c in 0..co {
                                let wv = p.weights.data()[((i * k + ky) * k + kx) * co + c];
                                out.data_mut()[((oy as usize) * ow + ox as usize) * co + c] +=
                                    xv * wv;
                            }
                        }
                    }
                }
            }
        }
        for px in out.data_mut().chunks_mut(co) {
            for (v, b) in px.iter_mut().zip(p.bias.data()) {
                *v += b;
            }
        }
        out
    }

    fn random_layer(kind: LayerKind, ci: usize, co: usize, k: usize, s: usize, pad: usize, rng: &mut ChaCha8Rng) -> LayerParams {
        let mut l = LayerParams::init(kind, ci, co, k, s, pad, 1.0, rng).unwrap();
        l.bias = rand_tensor(&[co], rng);
        l
    }

    /// Central finite-difference check of d<upstream, f(x)>/dx and d/dparams.
    fn fd_check(layer: &LayerParams, x: &Tensor, rng: &mut ChaCha8Rng) {
        let out = layer.forward(x).unwrap();
        let up = rand_tensor(out.shape(), rng);
        let (gi, gp) = layer.backward(x, &up).unwrap();
        let h = 1e-5;
        let objective = |l: &LayerParams, xx: &Tensor| l.forward(xx).unwrap().dot(&up).unwrap();
        for _ in 0..5 {
            let i = rng.gen_range(0..x.len());
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (objective(layer, &xp) - objective(layer, &xm)) / (2.0 * h);
            let an = gi.data()[i];
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "input grad {fd} vs {an}");
        }
        if layer.kind == LayerKind::Activation {
            return;
        }
        for _ in 0..5 {
            let i = rng.gen_range(0..layer.weights.len());
            let mut lp = layer.clone();
            lp.weights.data_mut()[i] += h;
            let mut lm = layer.clone();
            lm.weights.data_mut()[i] -= h;
            let fd = (objective(&lp, x) - objective(&lm, x)) / (2.0 * h);
            let an = gp.weights.data()[i];
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "weight grad {fd} vs {an}");
        }
        let i = rng.gen_range(0..layer.bias.len());
        let mut lp = layer.clone();
        lp.bias.data_mut()[i] += h;
        let mut lm = layer.clone();
        lm.bias.data_mut()[i] -= h;
        let fd = (objective(&lp, x) - objective(&lm, x)) / (2.0 * h);
        assert!((fd - gp.bias.data()[i]).abs() <= 1e-6 * fd.abs().max(1.0));
    }

    #[test]
    fn identity_1x1_conv_passes_input_through() {
        let mut w = Tensor::zeros(&[3, 1, 1, 3]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let layer = LayerParams::conv(w, Tensor::zeros(&[3]), 1, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&[4, 5, 3], &mut rng);
        assert_eq!(conv2d_forward(&x, &layer).unwrap(), x);
        let up = rand_tensor(&[4, 5, 3], &mut rng);
        let (gi, _) = conv2d_backward(&x, &layer, &up).unwrap();
        assert_eq!(gi, up);
    }

    #[test]
    fn zero_weights_give_bias() {
        let layer = LayerParams::conv(
            Tensor::zeros(&[2, 3, 3, 1]),
            Tensor::new(vec![2], vec![0.7, -1.5]).unwrap(),
            1,
            1,
        )
        .unwrap();
        let x = Tensor::filled(&[4, 4, 1], 3.0);
        let y = conv2d_forward(&x, &layer).unwrap();
        for px in y.data().chunks(2) {
            assert_eq!(px, &[0.7, -1.5]);
        }
        let t = LayerParams::transposed(
            Tensor::zeros(&[1, 4, 4, 2]),
            Tensor::new(vec![2], vec![0.25, 2.0]).unwrap(),
            2,
            1,
        )
        .unwrap();
        let yt = transposed_conv2d_forward(&x, &t).unwrap();
        assert_eq!(yt.shape(), &[8, 8, 2]);
        assert!(yt.data().chunks(2).all(|px| px == [0.25, 2.0]));
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(s, pad) in &[(1, 0), (1, 1), (2, 1), (2, 0)] {
            let layer = random_layer(LayerKind::Conv, 1, 2, 3, s, pad, &mut rng);
            let x = rand_tensor(&[4, 4, 1], &mut rng);
            let got = conv2d_forward(&x, &layer).unwrap();
            let want = naive_conv(&x, &layer);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_matches_scatter_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &(k, s, pad) in &[(4, 2, 1), (3, 1, 1), (5, 2, 2), (3, 2, 0)] {
            let layer = random_layer(LayerKind::TransposedConv, 3, 2, k, s, pad, &mut rng);
            let x = rand_tensor(&[3, 4, 3], &mut rng);
            let got = transposed_conv2d_forward(&x, &layer).unwrap();
            let want = naive_transposed(&x, &layer);
            assert_eq!(got.shape(), want.shape());
            let (h, w) = (3, 4);
            assert_eq!(got.shape()[0], (h - 1) * s + k - 2 * pad);
            assert_eq!(got.shape()[1], (w - 1) * s + k - 2 * pad);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [LayerKind::Conv, LayerKind::TransposedConv] {
            let layer = random_layer(kind, 2, 3, 4, 2, 1, &mut rng);
            let x = rand_tensor(&[4, 4, 2], &mut rng);
            let out = layer.forward(&x).unwrap();
            let (gi, gp) = layer.backward(&x, &Tensor::zeros(out.shape())).unwrap();
            assert!(gi.data().iter().all(|&v| v == 0.0));
            assert!(gp.weights.data().iter().all(|&v| v == 0.0));
            assert!(gp.bias.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identity_1x1_transposed_passes_gradient() {
        let mut w = Tensor::zeros(&[2, 1, 1, 2]);
        w.data_mut()[0] = 1.0;
        w.data_mut()[3] = 1.0;
        let layer = LayerParams::transposed(w, Tensor::zeros(&[2]), 1, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&[3, 3, 2], &mut rng);
        assert_eq!(layer.forward(&x).unwrap(), x);
        let up = rand_tensor(&[3, 3, 2], &mut rng);
        assert_eq!(layer.backward(&x, &up).unwrap().0, up);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let ci = rng.gen_range(1..4);
            let co = rng.gen_range(1..4);
            let conv = random_layer(LayerKind::Conv, ci, co, 3, 1 + trial % 2, 1, &mut rng);
            fd_check(&conv, &rand_tensor(&[5, 6, ci], &mut rng), &mut rng);
            let tconv = random_layer(LayerKind::TransposedConv, ci, co, 4, 2, 1, &mut rng);
            fd_check(&tconv, &rand_tensor(&[3, 2, ci], &mut rng), &mut rng);
            fd_check(&LayerParams::activation(), &rand_tensor(&[3, 3, ci], &mut rng), &mut rng);
        }
    }

    #[test]
    fn leaky_relu_definition() {
        assert_eq!(leaky_relu(-1.0), -0.01);
        assert_eq!(leaky_relu(2.0), 2.0);
        let z = Tensor::zeros(&[2, 2, 2]);
        assert_eq!(activation_forward(&z), z);
    }

    #[test]
    fn conv_is_linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut layer = random_layer(LayerKind::Conv, 2, 3, 3, 2, 1, &mut rng);
        layer.bias = Tensor::zeros(&[3]);
        let x = rand_tensor(&[6, 6, 2], &mut rng);
        let y = rand_tensor(&[6, 6, 2], &mut rng);
        let (a, b) = (1.7, -0.3);
        let lhs = layer.forward(&x.scale(a).axpy(b, &y).unwrap()).unwrap();
        let rhs = layer.forward(&x).unwrap().scale(a).axpy(b, &layer.forward(&y).unwrap()).unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            assert!((l - r).abs() < 1e-10);
        }
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = random_layer(LayerKind::Conv, 3, 2, 3, 1, 1, &mut rng);
        let err = conv2d_forward(&Tensor::zeros(&[4, 4, 2]), &layer).unwrap_err();
        match err {
            Error::Dimension { expected, actual } => {
                assert_eq!(expected, vec![4, 4, 3]);
                assert_eq!(actual, vec![4, 4, 2]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let x = Tensor::zeros(&[4, 4, 3]);
        let bad_up = Tensor::zeros(&[3, 3, 2]);
        assert!(conv2d_backward(&x, &layer, &bad_up).is_err());
    }

    #[test]
    fn forward_backward_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let layer = random_layer(LayerKind::TransposedConv, 4, 3, 4, 2, 1, &mut rng);
        let x = rand_tensor(&[4, 4, 4], &mut rng);
        let up = rand_tensor(&[8, 8, 3], &mut rng);
        let a = layer.backward(&x, &up).unwrap();
        let b = layer.backward(&x, &up).unwrap();
        assert_eq!(a.0.data(), b.0.data());
        assert_eq!(a.1, b.1);
        assert_eq!(layer.forward(&x).unwrap(), layer.forward(&x).unwrap());
    }
}
