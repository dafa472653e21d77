//! Forward and backward kernels for every layer kind.
//!
//! The slice-level functions work on a single channel-last sample and are what
//! [`Network`](super::Network) drives; the `Tensor` wrappers validate shapes and
//! are the public per-layer API.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Whether stochastic layers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.h - self.kh + 1
    }

    pub fn out_w(&self) -> usize {
        self.w - self.kw + 1
    }

    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Length of one unrolled receptive field.
    pub fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }
}

/// Unrolls every receptive field into a row of `cols` (`positions x patch`),
/// ordered `(ky, kx, channel)` to match a `[kh, kw, cin, cout]` kernel.
pub(crate) fn im2col<T: Scalar>(input: &[T], g: ConvGeom, cols: &mut Vec<T>) {
    let (oh, ow, patch) = (g.out_h(), g.out_w(), g.patch());
    cols.clear();
    cols.resize(oh * ow * patch, T::zero());
    let row_len = g.kw * g.cin;
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut cols[(oy * ow + ox) * patch..][..patch];
            for ky in 0..g.kh {
                let src = ((oy + ky) * g.w + ox) * g.cin;
                dst[ky * row_len..(ky + 1) * row_len].copy_from_slice(&input[src..src + row_len]);
            }
        }
    }
}

/// Scatter-adds unrolled patch gradients back onto the input image.
fn col2im<T: Scalar>(dcols: &[T], g: ConvGeom, dinput: &mut [T]) {
    let (oh, ow, patch) = (g.out_h(), g.out_w(), g.patch());
    let row_len = g.kw * g.cin;
    for oy in 0..oh {
        for ox in 0..ow {
            let src = &dcols[(oy * ow + ox) * patch..][..patch];
            for ky in 0..g.kh {
                let dst = ((oy + ky) * g.w + ox) * g.cin;
                for (d, &s) in dinput[dst..dst + row_len]
                    .iter_mut()
                    .zip(&src[ky * row_len..(ky + 1) * row_len])
                {
                    *d = *d + s;
                }
            }
        }
    }
}

/// Pre-activation convolution output (`positions x cout`).
pub(crate) fn conv_forward_slice<T: Scalar>(
    input: &[T],
    kernel: &[T],
    bias: &[T],
    g: ConvGeom,
    cols: &mut Vec<T>,
) -> Vec<T> {
    im2col(input, g, cols);
    let p = g.positions();
    let mut out = Vec::with_capacity(p * g.cout);
    for _ in 0..p {
        out.extend_from_slice(bias);
    }
    T::gemm(p, g.patch(), g.cout, cols, (g.patch(), 1), kernel, (g.cout, 1), T::one(), &mut out);
    out
}

/// Accumulates kernel and bias gradients and returns the input gradient.
///
/// `dz` is the gradient with respect to the pre-activation output.
pub(crate) fn conv_backward_slice<T: Scalar>(
    input: &[T],
    kernel: &[T],
    dz: &[T],
    g: ConvGeom,
    dkernel: &mut [T],
    dbias: &mut [T],
    cols: &mut Vec<T>,
    need_input_grad: bool,
) -> Option<Vec<T>> {
    let (p, patch) = (g.positions(), g.patch());
    im2col(input, g, cols);
    // dK += cols^T * dz
    T::gemm(patch, p, g.cout, cols, (1, patch), dz, (g.cout, 1), T::one(), dkernel);
    for row in dz.chunks_exact(g.cout) {
        for (b, &d) in dbias.iter_mut().zip(row) {
            *b = *b + d;
        }
    }
    if !need_input_grad {
        return None;
    }
    // dcols = dz * K^T
    let mut dcols = vec![T::zero(); p * patch];
    T::gemm(p, g.cout, patch, dz, (g.cout, 1), kernel, (1, g.cout), T::zero(), &mut dcols);
    let mut dinput = vec![T::zero(); g.h * g.w * g.cin];
    col2im(&dcols, g, &mut dinput);
    Some(dinput)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub ph: usize,
    pub pw: usize,
    pub stride: usize,
}

impl PoolGeom {
    pub fn out_h(&self) -> usize {
        (self.h - self.ph) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w - self.pw) / self.stride + 1
    }
}

/// Returns the pooled values and, per output element, the flat input index of
/// the winning element (first maximum in row-major window order).
pub(crate) fn maxpool_forward_slice<T: Scalar>(input: &[T], g: PoolGeom) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = Vec::with_capacity(oh * ow * g.c);
    let mut argmax = Vec::with_capacity(oh * ow * g.c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..g.c {
                let mut best_idx = ((oy * g.stride) * g.w + ox * g.stride) * g.c + ch;
                let mut best = input[best_idx];
                for dy in 0..g.ph {
                    for dx in 0..g.pw {
                        let idx = ((oy * g.stride + dy) * g.w + ox * g.stride + dx) * g.c + ch;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx as u32);
            }
        }
    }
    (out, argmax)
}

pub(crate) fn maxpool_backward_slice<T: Scalar>(dout: &[T], argmax: &[u32], input_len: usize) -> Vec<T> {
    let mut dinput = vec![T::zero(); input_len];
    for (&d, &idx) in dout.iter().zip(argmax) {
        let slot = &mut dinput[idx as usize];
        *slot = *slot + d;
    }
    dinput
}

pub(crate) fn relu_in_place<T: Scalar>(values: &mut [T]) {
    for v in values {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `grad` where the ReLU output was not positive.
pub(crate) fn relu_backward_in_place<T: Scalar>(output: &[T], grad: &mut [T]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

pub(crate) fn dense_forward_slice<T: Scalar>(input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let mut out = bias.to_vec();
    let units = bias.len();
    T::gemm(1, input.len(), units, input, (input.len(), 1), weight, (units, 1), T::one(), &mut out);
    out
}

/// Accumulates weight/bias gradients and returns the input gradient.
pub(crate) fn dense_backward_slice<T: Scalar>(
    input: &[T],
    weight: &[T],
    dz: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let (n_in, units) = (input.len(), dz.len());
    // dW += x^T dz (outer product)
    T::gemm(n_in, 1, units, input, (1, 1), dz, (units, 1), T::one(), dweight);
    for (b, &d) in dbias.iter_mut().zip(dz) {
        *b = *b + d;
    }
    // dx = W dz
    let mut dinput = vec![T::zero(); n_in];
    T::gemm(n_in, units, 1, weight, (units, 1), dz, (1, 1), T::zero(), &mut dinput);
    dinput
}

/// Numerically stable softmax of one row, in place.
pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Gradient with respect to the logits given the gradient with respect to the
/// softmax output: `p * (g - <g, p>)`.
pub(crate) fn softmax_backward_row<T: Scalar>(probs: &[T], dprobs: &[T]) -> Vec<T> {
    let dot = probs.iter().zip(dprobs).fold(T::zero(), |acc, (&p, &g)| acc + p * g);
    probs.iter().zip(dprobs).map(|(&p, &g)| p * (g - dot)).collect()
}

/// Inverted dropout. Returns the keep-mask; in `Infer` mode or at rate 0 the
/// mask is all `true` and the input is returned unchanged.
pub(crate) fn dropout_slice<T: Scalar, R: Rng + ?Sized>(
    values: &mut [T],
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Vec<bool> {
    if mode == Mode::Infer || rate == 0.0 {
        return vec![true; values.len()];
    }
    let scale = T::from_f64_lossy(1.0 / (1.0 - rate));
    values
        .iter_mut()
        .map(|v| {
            let keep = rng.random::<f64>() >= rate;
            *v = if keep { *v * scale } else { T::zero() };
            keep
        })
        .collect()
}

pub(crate) fn dropout_backward_in_place<T: Scalar>(grad: &mut [T], mask: &[bool], rate: f64) {
    let scale = T::from_f64_lossy(1.0 / (1.0 - rate));
    for (g, &keep) in grad.iter_mut().zip(mask) {
        *g = if keep { *g * scale } else { T::zero() };
    }
}

fn image_dims(t: &Tensor<impl Scalar>, what: &str) -> Result<[usize; 3]> {
    match *t.shape() {
        [h, w, c] => Ok([h, w, c]),
        ref s => Err(Error::shape(format!("{what} must be [H, W, C], got {s:?}"))),
    }
}

fn conv_geom<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<ConvGeom> {
    let [h, w, cin] = image_dims(input, "convolution input")?;
    let [kh, kw, kc, cout] = match *kernel.shape() {
        [a, b, c, d] => [a, b, c, d],
        ref s => return Err(Error::shape(format!("kernel must be [kh, kw, cin, cout], got {s:?}"))),
    };
    if kc != cin {
        return Err(Error::shape(format!("kernel expects {kc} input channels, input has {cin}")));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape(format!("bias must be [{cout}], got {:?}", bias.shape())));
    }
    if h < kh || w < kw {
        return Err(Error::shape(format!("{h}x{w} input is smaller than the {kh}x{kw} kernel")));
    }
    Ok(ConvGeom { h, w, cin, kh, kw, cout })
}

/// Valid, stride-1 cross-correlation plus bias (no activation).
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let g = conv_geom(input, kernel, bias)?;
    let mut cols = Vec::new();
    let out = conv_forward_slice(input.data(), kernel.data(), bias.data(), g, &mut cols);
    Tensor::new(vec![g.out_h(), g.out_w(), g.cout], out)
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of a convolution given the gradient of its (pre-activation) output.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    dout: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = conv_geom(input, kernel, bias)?;
    if dout.shape() != [g.out_h(), g.out_w(), g.cout] {
        return Err(Error::shape(format!("output gradient has shape {:?}", dout.shape())));
    }
    let mut dk = vec![T::zero(); kernel.len()];
    let mut db = vec![T::zero(); g.cout];
    let mut cols = Vec::new();
    let dx = conv_backward_slice(input.data(), kernel.data(), dout.data(), g, &mut dk, &mut db, &mut cols, true)
        .expect("input gradient requested");
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        kernel: Tensor::new(kernel.shape().to_vec(), dk)?,
        bias: Tensor::new(vec![g.cout], db)?,
    })
}

/// 2x2, stride-2 max pooling. Returns the pooled tensor and the flat input index
/// that won each window.
pub fn maxpool_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [h, w, c] = image_dims(input, "pooling input")?;
    if h < 2 || w < 2 {
        return Err(Error::shape(format!("{h}x{w} input is too small for 2x2 pooling")));
    }
    let g = PoolGeom { h, w, c, ph: 2, pw: 2, stride: 2 };
    let (out, argmax) = maxpool_forward_slice(input.data(), g);
    Ok((
        Tensor::new(vec![g.out_h(), g.out_w(), c], out)?,
        argmax.into_iter().map(|i| i as usize).collect(),
    ))
}

/// Routes each output gradient to the input position recorded in `argmax`.
pub fn maxpool_backward<T: Scalar>(dout: &Tensor<T>, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor<T>> {
    if argmax.len() != dout.len() {
        return Err(Error::shape("argmax length differs from output gradient length"));
    }
    let len: usize = input_shape.iter().product();
    if argmax.iter().any(|&i| i >= len) {
        return Err(Error::shape("argmax index outside the input"));
    }
    let idx: Vec<u32> = argmax.iter().map(|&i| i as u32).collect();
    Tensor::new(input_shape.to_vec(), maxpool_backward_slice(dout.data(), &idx, len))
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v < T::zero() { T::zero() } else { v })
}

/// Fully connected layer: `out_j = sum_i x_i * W[i, j] + b_j`.
pub fn dense_forward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [n_in, units] = match *weight.shape() {
        [a, b] => [a, b],
        ref s => return Err(Error::shape(format!("weight must be [in, out], got {s:?}"))),
    };
    if input.len() != n_in {
        return Err(Error::shape(format!("input has {} values, weight expects {n_in}", input.len())));
    }
    if bias.shape() != [units] {
        return Err(Error::shape(format!("bias must be [{units}], got {:?}", bias.shape())));
    }
    Tensor::new(vec![units], dense_forward_slice(input.data(), weight.data(), bias.data()))
}

/// Softmax over the last axis.
pub fn softmax<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let k = *input.shape().last().expect("tensor has at least one axis");
    let mut out = input.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        softmax_in_place(row);
    }
    out
}

/// Inverted dropout over a whole tensor.
pub fn dropout_forward<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Vec<bool>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Arg(format!("dropout rate {rate} outside [0, 1)")));
    }
    let mut out = input.clone();
    let mask = dropout_slice(out.data_mut(), rate, mode, rng);
    Ok((out, mask))
}

/// Index of the largest probability (lowest index on ties) and its one-hot vector.
pub fn predict_class<T: Scalar>(probs: &[T]) -> (usize, Vec<T>) {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    let mut onehot = vec![T::zero(); probs.len()];
    if !onehot.is_empty() {
        onehot[best] = T::one();
    }
    (best, onehot)
}
