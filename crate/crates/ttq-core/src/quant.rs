//! 8-bit quantization of weights and activations, and the integer-domain
//! convolution / batch-norm / max-pooling kernels built on top of it.
//!
//! Weights map to signed 8-bit values in `[-127, 127]` with a per-tensor
//! scale `xi` so that `w ~= xi * w_q`; `-128` is never produced. Activations
//! map to unsigned numerators over a fixed denominator of 256, representing
//! values in `[0, 255/256]`. Convolution accumulates exact 32-bit integer
//! sums of 8-bit products; all rounding happens once, at requantization.

use rayon::prelude::*;
use thiserror::Error;

use crate::tensor::{DenseTensor, Shape};

/// Fixed denominator of the activation representation: value = n / 256.
pub const ACTIVATION_DENOM: f64 = 256.0;

/// Slope of the leaky rectifier used between quantized layers.
pub const LEAKY_SLOPE: f64 = 0.1;

pub const BN_EPS_DEFAULT: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("RANGE: weight {0} outside [-1, 1]")]
    WeightRange(f64),
    #[error("RANGE: activation {0} outside [0, 1]")]
    ActivationRange(f64),
    #[error("SHAPE_MISMATCH: {0}")]
    ShapeMismatch(String),
    #[error("OVERFLOW_RISK: kernel {kernel}x{kernel}x{in_ch} may overflow the 32-bit accumulator")]
    OverflowRisk { kernel: usize, in_ch: usize },
    #[error("SHAPE: {0}")]
    Shape(String),
}

impl QuantError {
    pub fn code(&self) -> &'static str {
        match self {
            QuantError::WeightRange(_) | QuantError::ActivationRange(_) => "RANGE",
            QuantError::ShapeMismatch(_) => "SHAPE_MISMATCH",
            QuantError::OverflowRisk { .. } => "OVERFLOW_RISK",
            QuantError::Shape(_) => "SHAPE",
        }
    }
}

/// Quantizes one weight in `[-1, 1]` to a signed 8-bit value in `[-127, 127]`.
///
/// Piecewise map: values at most `1/128` in magnitude collapse to `sign(w)`,
/// `|w| = 1` saturates to `127 * sign(w)`, everything in between is
/// `128 * w` rounded toward zero, and `0` maps to `0`. Rounding toward zero
/// (rather than floor) keeps the map odd-symmetric and keeps `-128` out of
/// the range.
pub fn quantize_weight(w: f64) -> Result<i8, QuantError> {
    if !(w.is_finite() && w.abs() <= 1.0) {
        return Err(QuantError::WeightRange(w));
    }
    let q = if w == 0.0 {
        0
    } else if w.abs() <= 1.0 / 128.0 {
        w.signum() as i32
    } else if w.abs() == 1.0 {
        127 * w.signum() as i32
    } else {
        (128.0 * w).trunc() as i32
    };
    debug_assert!((-127..=127).contains(&q));
    Ok(q as i8)
}

/// Quantizes one activation in `[0, 1]` to a numerator over 256.
///
/// `a < 1` maps to `floor(256 * a)`; `a = 1` saturates to `255`.
pub fn quantize_activation(a: f64) -> Result<u8, QuantError> {
    if !(a.is_finite() && (0.0..=1.0).contains(&a)) {
        return Err(QuantError::ActivationRange(a));
    }
    let n = if a >= 1.0 { 255 } else { (256.0 * a).floor() as u32 };
    debug_assert!(n <= 255);
    Ok(n as u8)
}

pub fn dequantize_weight(q: i8, xi: f64) -> f64 {
    xi * f64::from(q)
}

pub fn dequantize_activation(n: u8) -> f64 {
    f64::from(n) / ACTIVATION_DENOM
}

/// Signed 8-bit weight tensor with its scale factor.
///
/// `pre_scale` is the max-abs normalizer applied before quantization, so the
/// original weight is approximately `xi * value` with `xi = pre_scale / 128`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeights {
    pub values: Vec<i8>,
    pub xi: f64,
    pub pre_scale: f64,
    pub shape: Shape,
}

impl QuantizedWeights {
    pub fn dequantize(&self) -> DenseTensor<f64> {
        let data = self.values.iter().map(|&q| dequantize_weight(q, self.xi)).collect();
        DenseTensor::from_vec(self.shape.clone(), data).expect("shape matches payload")
    }
}

/// Quantizes a whole real-valued weight tensor.
///
/// Weights outside `[-1, 1]` are handled by dividing through by the tensor's
/// max-abs value first; an all-zero tensor gets `pre_scale = 1`.
pub fn quantize_weights_tensor(t: &DenseTensor<f64>) -> QuantizedWeights {
    let max_abs = t.max_abs();
    let pre_scale = if max_abs > 0.0 { max_abs } else { 1.0 };
    let values = t
        .as_slice()
        .iter()
        .map(|&w| quantize_weight(w / pre_scale).expect("normalized weight in [-1,1]"))
        .collect();
    QuantizedWeights {
        values,
        xi: pre_scale / 128.0,
        pre_scale,
        shape: t.shape().clone(),
    }
}

/// Unsigned 8-bit activation tensor; represented value is `numerators/256`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedActivations {
    pub numerators: Vec<u8>,
    pub shape: Shape,
}

impl QuantizedActivations {
    pub fn dequantize(&self) -> DenseTensor<f64> {
        let data = self.numerators.iter().map(|&n| dequantize_activation(n)).collect();
        DenseTensor::from_vec(self.shape.clone(), data).expect("shape matches payload")
    }
}

/// Quantizes a real tensor with all values already in `[0, 1]`.
pub fn quantize_activations_tensor(
    t: &DenseTensor<f64>,
) -> Result<QuantizedActivations, QuantError> {
    let numerators = t
        .as_slice()
        .iter()
        .map(|&a| quantize_activation(a))
        .collect::<Result<_, _>>()?;
    Ok(QuantizedActivations {
        numerators,
        shape: t.shape().clone(),
    })
}

/// Exact integer sums-of-products out of the quantized convolution, plus the
/// combined scale `xi/256` that maps them back to real values.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatorTensor {
    pub values: Vec<i32>,
    pub shape: Shape,
    pub combined_scale: f64,
}

impl AccumulatorTensor {
    /// Real value of each accumulator entry: `value * combined_scale`.
    pub fn dequantize(&self) -> DenseTensor<f64> {
        let s = self.combined_scale;
        let data = self.values.iter().map(|&v| f64::from(v) * s).collect();
        DenseTensor::from_vec(self.shape.clone(), data).expect("shape matches payload")
    }
}

/// Worst-case accumulator magnitude for a `kernel x kernel x in_ch` window.
pub fn accumulator_bound(kernel: usize, in_ch: usize) -> i64 {
    (kernel * kernel * in_ch) as i64 * 127 * 255
}

/// Rejects layer geometry whose worst-case integer sum cannot fit in `i32`.
pub fn check_accumulator(kernel: usize, in_ch: usize) -> Result<(), QuantError> {
    if accumulator_bound(kernel, in_ch) > i64::from(i32::MAX) {
        return Err(QuantError::OverflowRisk { kernel, in_ch });
    }
    Ok(())
}

fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Integer convolution: activations `[A, B, D]` with weights `[K, K, D, Z]`
/// produce accumulators `[A', B', Z]`. Zero padding contributes numerator 0.
///
/// The sum is exact in `i32`; geometry admitted by [`check_accumulator`]
/// cannot overflow, so the result is identical under any parallel schedule.
pub fn qconv2d(
    act: &QuantizedActivations,
    wt: &QuantizedWeights,
    stride: usize,
    pad: usize,
) -> Result<AccumulatorTensor, QuantError> {
    let adims = act.shape.dims();
    let wdims = wt.shape.dims();
    if adims.len() != 3 || wdims.len() != 4 {
        return Err(QuantError::ShapeMismatch(format!(
            "expected activations [A,B,D] and weights [K,K,D,Z], got {} and {}",
            act.shape, wt.shape
        )));
    }
    let (ia, ib, id) = (adims[0], adims[1], adims[2]);
    let (kh, kw, wd, out_ch) = (wdims[0], wdims[1], wdims[2], wdims[3]);
    if kh != kw {
        return Err(QuantError::ShapeMismatch(format!(
            "kernel must be square, got {kh}x{kw}"
        )));
    }
    if wd != id {
        return Err(QuantError::ShapeMismatch(format!(
            "input depth {id} does not match kernel depth {wd}"
        )));
    }
    if stride == 0 || ia + 2 * pad < kh || ib + 2 * pad < kw {
        return Err(QuantError::Shape(format!(
            "window {kh} does not fit input {ia}x{ib} with pad {pad}"
        )));
    }
    check_accumulator(kh, id)?;

    let oa = conv_out_dim(ia, kh, stride, pad);
    let ob = conv_out_dim(ib, kw, stride, pad);
    let out_shape = Shape::new(vec![oa, ob, out_ch]).expect("positive dims");
    let mut values = vec![0i32; oa * ob * out_ch];

    let a = &act.numerators;
    let w = &wt.values;
    // parallel over output rows; exact integer accumulation makes the result
    // schedule- and order-independent
    values
        .par_chunks_mut(ob * out_ch)
        .enumerate()
        .for_each(|(x, row)| {
            for y in 0..ob {
                let slots = &mut row[y * out_ch..(y + 1) * out_ch];
                for i in 0..kh {
                    let ax = (x * stride + i) as isize - pad as isize;
                    if ax < 0 || ax as usize >= ia {
                        continue;
                    }
                    for j in 0..kw {
                        let ay = (y * stride + j) as isize - pad as isize;
                        if ay < 0 || ay as usize >= ib {
                            continue;
                        }
                        let abase = (ax as usize * ib + ay as usize) * id;
                        let wbase = ((i * kw + j) * id) * out_ch;
                        for l in 0..id {
                            let av = i32::from(a[abase + l]);
                            if av == 0 {
                                continue;
                            }
                            let wrow = &w[wbase + l * out_ch..][..out_ch];
                            for (slot, &wv) in slots.iter_mut().zip(wrow) {
                                *slot += av * i32::from(wv);
                            }
                        }
                    }
                }
            }
        });

    Ok(AccumulatorTensor {
        values,
        shape: out_shape,
        combined_scale: wt.xi / ACTIVATION_DENOM,
    })
}

/// Per-output-channel affine `y = gamma * x + beta`, either a folded batch
/// norm or a plain bias (`gamma = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAffine {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ChannelAffine {
    pub fn bias_only(beta: Vec<f64>) -> Self {
        ChannelAffine {
            gamma: vec![1.0; beta.len()],
            beta,
        }
    }
}

/// What happens between the integer accumulator and the next layer's 8-bit
/// input: optional affine, optional leaky rectifier, then clamp to `[0, 1]`.
#[derive(Debug, Clone, Default)]
pub struct PostOp {
    pub affine: Option<ChannelAffine>,
    pub leaky_relu: bool,
}

fn post_value(raw: f64, ch: usize, post: &PostOp) -> f64 {
    let mut v = raw;
    if let Some(aff) = &post.affine {
        v = aff.gamma[ch] * v + aff.beta[ch];
    }
    if post.leaky_relu && v < 0.0 {
        v *= LEAKY_SLOPE;
    }
    v
}

/// Applies the post-op in the real domain (no clamp, no quantization).
/// Used for the network's final feature layer, whose logits leave the 8-bit
/// pipeline.
pub fn dequantize_accumulator(acc: &AccumulatorTensor, post: &PostOp) -> DenseTensor<f64> {
    let out_ch = *acc.shape.dims().last().unwrap();
    let data = acc
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| post_value(f64::from(v) * acc.combined_scale, i % out_ch, post))
        .collect();
    DenseTensor::from_vec(acc.shape.clone(), data).expect("shape matches payload")
}

/// Accumulator -> next layer's 8-bit activations: affine, activation, clamp
/// to `[0, 1]`, quantize.
pub fn requantize(acc: &AccumulatorTensor, post: &PostOp) -> QuantizedActivations {
    let out_ch = *acc.shape.dims().last().unwrap();
    let numerators = acc
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let r = post_value(f64::from(v) * acc.combined_scale, i % out_ch, post);
            quantize_activation(r.clamp(0.0, 1.0)).expect("clamped value in range")
        })
        .collect();
    QuantizedActivations {
        numerators,
        shape: acc.shape.clone(),
    }
}

/// Max-pooling in the integer domain.
///
/// `stride == 1` pools same-padded (output size equals input size, windows
/// truncated at the borders); any other stride pools valid windows only.
pub fn qmaxpool(
    act: &QuantizedActivations,
    kernel: usize,
    stride: usize,
) -> Result<QuantizedActivations, QuantError> {
    let dims = act.shape.dims();
    if dims.len() != 3 {
        return Err(QuantError::Shape(format!(
            "expected activations [A,B,D], got {}",
            act.shape
        )));
    }
    let (ia, ib, id) = (dims[0], dims[1], dims[2]);
    if kernel == 0 || stride == 0 {
        return Err(QuantError::Shape("kernel and stride must be >= 1".into()));
    }
    let (oa, ob) = if stride == 1 {
        (ia, ib)
    } else {
        if ia < kernel || ib < kernel {
            return Err(QuantError::Shape(format!(
                "window {kernel} does not fit input {ia}x{ib}"
            )));
        }
        ((ia - kernel) / stride + 1, (ib - kernel) / stride + 1)
    };

    let a = &act.numerators;
    let mut numerators = vec![0u8; oa * ob * id];
    for x in 0..oa {
        for y in 0..ob {
            for l in 0..id {
                let mut best = 0u8;
                for i in 0..kernel {
                    let ax = x * stride + i;
                    if ax >= ia {
                        continue;
                    }
                    for j in 0..kernel {
                        let ay = y * stride + j;
                        if ay >= ib {
                            continue;
                        }
                        best = best.max(a[(ax * ib + ay) * id + l]);
                    }
                }
                numerators[(x * ob + y) * id + l] = best;
            }
        }
    }
    Ok(QuantizedActivations {
        numerators,
        shape: Shape::new(vec![oa, ob, id]).expect("positive dims"),
    })
}

/// Folds batch-norm statistics into an affine:
/// `gamma' = gamma / sqrt(var + eps)`, `beta' = beta - gamma * mean / sqrt(var + eps)`.
pub fn bn_fold(gamma: f64, beta: f64, mean: f64, var: f64, eps: f64) -> (f64, f64) {
    let denom = (var + eps).sqrt();
    (gamma / denom, beta - gamma * mean / denom)
}

/// Reference float convolution with the same geometry rules as [`qconv2d`].
/// This is the float route the integer kernel is checked against, and the
/// basis of the unquantized forward pass.
pub fn conv2d_f64(
    input: &DenseTensor<f64>,
    weights: &DenseTensor<f64>,
    stride: usize,
    pad: usize,
) -> Result<DenseTensor<f64>, QuantError> {
    let adims = input.shape().dims();
    let wdims = weights.shape().dims();
    if adims.len() != 3 || wdims.len() != 4 || wdims[0] != wdims[1] || wdims[2] != adims[2] {
        return Err(QuantError::ShapeMismatch(format!(
            "float conv shapes {} and {}",
            input.shape(),
            weights.shape()
        )));
    }
    let (ia, ib, id) = (adims[0], adims[1], adims[2]);
    let (k, out_ch) = (wdims[0], wdims[3]);
    if stride == 0 || ia + 2 * pad < k || ib + 2 * pad < k {
        return Err(QuantError::Shape(format!(
            "window {k} does not fit input {ia}x{ib} with pad {pad}"
        )));
    }
    let oa = conv_out_dim(ia, k, stride, pad);
    let ob = conv_out_dim(ib, k, stride, pad);
    let a = input.as_slice();
    let w = weights.as_slice();
    let mut out = vec![0.0; oa * ob * out_ch];
    for x in 0..oa {
        for y in 0..ob {
            for z in 0..out_ch {
                let mut acc = 0.0;
                for i in 0..k {
                    let ax = (x * stride + i) as isize - pad as isize;
                    if ax < 0 || ax as usize >= ia {
                        continue;
                    }
                    for j in 0..k {
                        let ay = (y * stride + j) as isize - pad as isize;
                        if ay < 0 || ay as usize >= ib {
                            continue;
                        }
                        for l in 0..id {
                            acc += a[(ax as usize * ib + ay as usize) * id + l]
                                * w[((i * k + j) * id + l) * out_ch + z];
                        }
                    }
                }
                out[(x * ob + y) * out_ch + z] = acc;
            }
        }
    }
    DenseTensor::from_vec(Shape::new(vec![oa, ob, out_ch]).unwrap(), out)
        .map_err(|e| QuantError::Shape(e.to_string()))
}
