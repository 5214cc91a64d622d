//! Quantized feed-forward detector networks: layer specs, weight storage,
//! the 8-bit forward pass, a float reference forward pass, Darknet weight
//! import/export, detection decoding, and AP/mAP evaluation.

mod config;
mod darknet;
mod detect;

pub use config::{parse_net_config, tiny_yolov2_608, NetDefinition};
pub use detect::{
    average_precision, decode_detections, iou, mean_ap, nms, DetectionBox, DetectionGridConfig,
    GroundTruth, Prediction, NMS_DEFAULT_IOU,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::quant::{
    bn_fold, check_accumulator, conv2d_f64, dequantize_accumulator, qconv2d, qmaxpool,
    quantize_activations_tensor, quantize_weights_tensor, requantize, ChannelAffine, PostOp,
    QuantError, QuantizedWeights, BN_EPS_DEFAULT, LEAKY_SLOPE,
};
use crate::tensor::{DenseTensor, Shape, TensorError};

#[derive(Debug, Error)]
pub enum QnetError {
    #[error("BAD_CHAIN: {0}")]
    BadChain(String),
    #[error("SHAPE: {0}")]
    Shape(String),
    #[error("NOT_QUANTIZED: {0}")]
    NotQuantized(String),
    #[error("TRUNCATED: weight stream ended early ({0})")]
    Truncated(String),
    #[error("TRAILING_BYTES: {0} unused bytes after the last layer")]
    TrailingBytes(usize),
    #[error("BAD_MAGIC: {0}")]
    BadMagic(String),
    #[error("CONFIG: {0}")]
    Config(String),
    #[error(transparent)]
    Quant(#[from] QuantError),
}

impl QnetError {
    pub fn code(&self) -> &'static str {
        match self {
            QnetError::BadChain(_) => "BAD_CHAIN",
            QnetError::Shape(_) => "SHAPE",
            QnetError::NotQuantized(_) => "NOT_QUANTIZED",
            QnetError::Truncated(_) => "TRUNCATED",
            QnetError::TrailingBytes(_) => "TRAILING_BYTES",
            QnetError::BadMagic(_) => "BAD_MAGIC",
            QnetError::Config(_) => "CONFIG",
            QnetError::Quant(e) => e.code(),
        }
    }
}

impl From<TensorError> for QnetError {
    fn from(e: TensorError) -> Self {
        QnetError::Shape(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Leaky,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        batch_norm: bool,
        activation: Activation,
    },
    Maxpool {
        kernel: usize,
        stride: usize,
    },
}

impl LayerSpec {
    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. })
    }

    /// Weight parameters of a conv layer: kernel^2 * in * out.
    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::Conv {
                in_ch, out_ch, kernel, ..
            } => kernel * kernel * in_ch * out_ch,
            LayerSpec::Maxpool { .. } => 0,
        }
    }
}

/// Raw batch-norm statistics as trained/loaded; the shift term lives in the
/// layer bias, matching the Darknet layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub scale: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Full-precision parameters of one conv layer. Weight layout is
/// `[kernel, kernel, in_ch, out_ch]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: DenseTensor<f64>,
    pub bias: Vec<f64>,
    pub bn: Option<BnStats>,
}

/// Quantized parameters of one conv layer: int8 weights plus the folded
/// per-channel affine (batch norm absorbed, or plain bias).
#[derive(Debug, Clone, PartialEq)]
pub struct QConvParams {
    pub weights: QuantizedWeights,
    pub affine: ChannelAffine,
}

/// Version header of an imported Darknet weight file, kept verbatim so
/// re-serialization is byte-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DarknetHeader {
    pub major: i32,
    pub minor: i32,
    pub revision: i32,
    pub seen: u64,
}

impl Default for DarknetHeader {
    fn default() -> Self {
        DarknetHeader {
            major: 0,
            minor: 2,
            revision: 0,
            seen: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetModel {
    /// Input dims: two spatial extents then channels.
    pub input_dims: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    /// Per-layer fp32-precision parameters (None for pooling layers and for
    /// models loaded from a quantized file).
    pub fp: Vec<Option<ConvParams>>,
    /// Present once the model has been quantized.
    pub q: Option<Vec<Option<QConvParams>>>,
    pub darknet_header: DarknetHeader,
}

/// Validates the layer chain and creates a zero-initialized model.
pub fn build_qnet(
    input_dims: (usize, usize, usize),
    layers: Vec<LayerSpec>,
) -> Result<QNetModel, QnetError> {
    if layers.is_empty() {
        return Err(QnetError::BadChain("no layers".into()));
    }
    let (mut a, mut b, mut c) = input_dims;
    if a == 0 || b == 0 || c == 0 {
        return Err(QnetError::BadChain("input dims must be >= 1".into()));
    }
    for (idx, layer) in layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
                ..
            } => {
                if in_ch != c {
                    return Err(QnetError::BadChain(format!(
                        "layer {idx}: declared in_channels {in_ch} but previous output has {c}"
                    )));
                }
                if !(kernel == 1 || kernel == 3) {
                    return Err(QnetError::BadChain(format!(
                        "layer {idx}: conv kernel must be 1 or 3, got {kernel}"
                    )));
                }
                if out_ch == 0 || stride == 0 {
                    return Err(QnetError::BadChain(format!(
                        "layer {idx}: out_channels and stride must be >= 1"
                    )));
                }
                if a + 2 * pad < kernel || b + 2 * pad < kernel {
                    return Err(QnetError::BadChain(format!(
                        "layer {idx}: {kernel}x{kernel} window does not fit {a}x{b} with pad {pad}"
                    )));
                }
                check_accumulator(kernel, in_ch)?;
                a = (a + 2 * pad - kernel) / stride + 1;
                b = (b + 2 * pad - kernel) / stride + 1;
                c = out_ch;
            }
            LayerSpec::Maxpool { kernel, stride } => {
                if kernel == 0 || stride == 0 {
                    return Err(QnetError::BadChain(format!(
                        "layer {idx}: pool kernel and stride must be >= 1"
                    )));
                }
                if stride != 1 {
                    if a < kernel || b < kernel {
                        return Err(QnetError::BadChain(format!(
                            "layer {idx}: {kernel}x{kernel} pool does not fit {a}x{b}"
                        )));
                    }
                    a = (a - kernel) / stride + 1;
                    b = (b - kernel) / stride + 1;
                }
            }
        }
    }

    let fp = layers
        .iter()
        .map(|layer| match *layer {
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                batch_norm,
                ..
            } => {
                let shape =
                    Shape::new(vec![kernel, kernel, in_ch, out_ch]).expect("validated dims");
                Some(ConvParams {
                    weights: DenseTensor::zeros(shape),
                    bias: vec![0.0; out_ch],
                    bn: batch_norm.then(|| BnStats {
                        scale: vec![1.0; out_ch],
                        mean: vec![0.0; out_ch],
                        var: vec![1.0; out_ch],
                    }),
                })
            }
            LayerSpec::Maxpool { .. } => None,
        })
        .collect();

    Ok(QNetModel {
        input_dims,
        layers,
        fp,
        q: None,
        darknet_header: DarknetHeader::default(),
    })
}

impl QNetModel {
    pub fn is_quantized(&self) -> bool {
        self.q.is_some()
    }

    /// Spatial/channel dims after each layer; last entry is the output.
    pub fn dims_chain(&self) -> Vec<(usize, usize, usize)> {
        let (mut a, mut b, mut c) = self.input_dims;
        let mut chain = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match *layer {
                LayerSpec::Conv {
                    out_ch,
                    kernel,
                    stride,
                    pad,
                    ..
                } => {
                    a = (a + 2 * pad - kernel) / stride + 1;
                    b = (b + 2 * pad - kernel) / stride + 1;
                    c = out_ch;
                }
                LayerSpec::Maxpool { kernel, stride } => {
                    if stride != 1 {
                        a = (a - kernel) / stride + 1;
                        b = (b - kernel) / stride + 1;
                    }
                }
            }
            chain.push((a, b, c));
        }
        chain
    }

    pub fn output_dims(&self) -> (usize, usize, usize) {
        *self.dims_chain().last().expect("nonempty layer list")
    }

    /// Fills fp weights with scaled uniform noise; batch-norm statistics stay
    /// at identity. Values are rounded to f32 so Darknet export/import is
    /// lossless.
    pub fn randomize_weights(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (layer, params) in self.layers.iter().zip(&mut self.fp) {
            let Some(p) = params else { continue };
            let LayerSpec::Conv { in_ch, kernel, .. } = *layer else {
                continue;
            };
            let fan_in = (kernel * kernel * in_ch) as f64;
            let bound = (3.0 / fan_in).sqrt();
            for w in p.weights.as_mut_slice() {
                *w = (rng.random_range(-bound..bound) as f32) as f64;
            }
            for bv in &mut p.bias {
                *bv = (rng.random_range(-0.05..0.05) as f32) as f64;
            }
        }
        self.q = None;
    }

    /// Quantizes every conv layer and folds batch norm into a per-channel
    /// affine. The result carries both fp and quantized parameters.
    pub fn quantize(&self) -> QNetModel {
        let q = self
            .fp
            .iter()
            .map(|params| {
                params.as_ref().map(|p| {
                    let weights = quantize_weights_tensor(&p.weights);
                    let affine = match &p.bn {
                        Some(bn) => {
                            let out_ch = p.bias.len();
                            let mut gamma = vec![0.0; out_ch];
                            let mut beta = vec![0.0; out_ch];
                            for ch in 0..out_ch {
                                let (g, b) = bn_fold(
                                    bn.scale[ch],
                                    p.bias[ch],
                                    bn.mean[ch],
                                    bn.var[ch],
                                    BN_EPS_DEFAULT,
                                );
                                gamma[ch] = g;
                                beta[ch] = b;
                            }
                            ChannelAffine { gamma, beta }
                        }
                        None => ChannelAffine::bias_only(p.bias.clone()),
                    };
                    QConvParams { weights, affine }
                })
            })
            .collect();
        QNetModel {
            q: Some(q),
            ..self.clone()
        }
    }

    fn check_frame(&self, frame: &DenseTensor<f64>) -> Result<(), QnetError> {
        let (a, b, c) = self.input_dims;
        if frame.shape().dims() != [a, b, c] {
            return Err(QnetError::Shape(format!(
                "frame shape {} does not match network input {a}x{b}x{c}",
                frame.shape()
            )));
        }
        Ok(())
    }

    /// 8-bit forward pass: the input is quantized to numerators over 256,
    /// every layer runs in the integer domain, and the final conv layer's
    /// output is returned in the real domain (no clamp), which is the feature
    /// tensor consumed by detection decoding and the recurrent classifier.
    pub fn forward(&self, frame: &DenseTensor<f64>) -> Result<DenseTensor<f64>, QnetError> {
        let q = self
            .q
            .as_ref()
            .ok_or_else(|| QnetError::NotQuantized("call quantize() before forward()".into()))?;
        self.check_frame(frame)?;
        let mut act = quantize_activations_tensor(frame)?;
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv {
                    stride,
                    pad,
                    activation,
                    ..
                } => {
                    let params = q[idx].as_ref().expect("conv layer has weights");
                    let acc = qconv2d(&act, &params.weights, stride, pad)?;
                    let post = PostOp {
                        affine: Some(params.affine.clone()),
                        leaky_relu: activation == Activation::Leaky,
                    };
                    if idx == last {
                        return Ok(dequantize_accumulator(&acc, &post));
                    }
                    act = requantize(&acc, &post);
                }
                LayerSpec::Maxpool { kernel, stride } => {
                    act = qmaxpool(&act, kernel, stride)?;
                }
            }
        }
        Ok(act.dequantize())
    }

    /// Full-precision reference forward pass with the same clamp-to-[0,1]
    /// convention between layers; only quantization is absent.
    pub fn forward_fp(&self, frame: &DenseTensor<f64>) -> Result<DenseTensor<f64>, QnetError> {
        self.check_frame(frame)?;
        let mut x = frame.clone();
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv {
                    stride,
                    pad,
                    activation,
                    ..
                } => {
                    let params = self.fp[idx]
                        .as_ref()
                        .ok_or_else(|| QnetError::Shape("missing fp weights".into()))?;
                    let mut y = conv2d_f64(&x, &params.weights, stride, pad)?;
                    let out_ch = params.bias.len();
                    let (gamma, beta): (Vec<f64>, Vec<f64>) = match &params.bn {
                        Some(bn) => (0..out_ch)
                            .map(|ch| {
                                bn_fold(
                                    bn.scale[ch],
                                    params.bias[ch],
                                    bn.mean[ch],
                                    bn.var[ch],
                                    BN_EPS_DEFAULT,
                                )
                            })
                            .unzip(),
                        None => (vec![1.0; out_ch], params.bias.clone()),
                    };
                    for (i, v) in y.as_mut_slice().iter_mut().enumerate() {
                        let ch = i % out_ch;
                        let mut r = gamma[ch] * *v + beta[ch];
                        if activation == Activation::Leaky && r < 0.0 {
                            r *= LEAKY_SLOPE;
                        }
                        if idx != last {
                            r = r.clamp(0.0, 1.0);
                        }
                        *v = r;
                    }
                    x = y;
                }
                LayerSpec::Maxpool { kernel, stride } => {
                    x = maxpool_f64(&x, kernel, stride)?;
                }
            }
        }
        Ok(x)
    }

    /// Per-conv-layer accounting rows.
    pub fn report_layers(&self) -> Vec<LayerReportRow> {
        let chain = self.dims_chain();
        let mut rows = Vec::new();
        let mut prev = self.input_dims;
        let mut conv_idx = 0usize;
        for (idx, layer) in self.layers.iter().enumerate() {
            if let LayerSpec::Conv { .. } = layer {
                conv_idx += 1;
                let params = layer.param_count();
                rows.push(LayerReportRow {
                    name: format!("CONV_{conv_idx}"),
                    input_dims: prev,
                    output_dims: chain[idx],
                    params,
                    fp_bytes: params * 4,
                    q_bytes: params,
                });
            }
            prev = chain[idx];
        }
        rows
    }

    /// Total conv weight parameters (report rows summed).
    pub fn weight_param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReportRow {
    pub name: String,
    pub input_dims: (usize, usize, usize),
    pub output_dims: (usize, usize, usize),
    pub params: usize,
    pub fp_bytes: usize,
    pub q_bytes: usize,
}

impl LayerReportRow {
    pub fn fp_kb(&self) -> f64 {
        self.fp_bytes as f64 / 1024.0
    }

    pub fn q_kb(&self) -> f64 {
        self.q_bytes as f64 / 1024.0
    }
}

fn maxpool_f64(
    input: &DenseTensor<f64>,
    kernel: usize,
    stride: usize,
) -> Result<DenseTensor<f64>, QnetError> {
    let dims = input.shape().dims();
    if dims.len() != 3 {
        return Err(QnetError::Shape(format!(
            "expected [A,B,D] input, got {}",
            input.shape()
        )));
    }
    let (ia, ib, id) = (dims[0], dims[1], dims[2]);
    let (oa, ob) = if stride == 1 {
        (ia, ib)
    } else {
        ((ia - kernel) / stride + 1, (ib - kernel) / stride + 1)
    };
    let a = input.as_slice();
    let mut out = vec![0.0f64; oa * ob * id];
    for x in 0..oa {
        for y in 0..ob {
            for l in 0..id {
                let mut best = f64::NEG_INFINITY;
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
                out[(x * ob + y) * id + l] = best;
            }
        }
    }
    Ok(DenseTensor::from_vec(Shape::new(vec![oa, ob, id]).expect("positive"), out)
        .expect("count matches"))
}

pub use darknet::{load_darknet_weights, write_darknet_weights};
