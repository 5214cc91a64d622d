//! Bit-exact binary serialization.
//!
//! Every file is a `TTQ1` container: magic, a kind byte, a format version,
//! the payload length, and a CRC32 of the payload, all little-endian,
//! followed by the payload. Field-by-field payload layouts are documented in
//! `docs/FORMATS.md`. Saves write to a temporary sibling file and atomically
//! rename into place.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::qnet::{
    Activation, BnStats, ConvParams, DarknetHeader, LayerSpec, QConvParams, QNetModel,
};
use crate::quant::{ChannelAffine, QuantizedWeights};
use crate::tensor::{DenseTensor, Shape};
use crate::ttrnn::{init_model, CellKind, FeatureSequence, TTRnnConfig, TTRnnModel};

pub const MAGIC: [u8; 4] = *b"TTQ1";
pub const FORMAT_VERSION: u16 = 1;

pub const HEADER_LEN: usize = 4 + 1 + 2 + 8 + 4;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("BAD_MAGIC: not a TTQ1 file")]
    BadMagic,
    #[error("BAD_CHECKSUM: payload crc32 {actual:#010x}, header says {expected:#010x}")]
    BadChecksum { expected: u32, actual: u32 },
    #[error("VERSION: {0}")]
    Version(String),
    #[error("TRUNCATED: {0}")]
    Truncated(String),
    #[error("ENCODING: {0}")]
    Encoding(String),
}

impl IoError {
    pub fn code(&self) -> &'static str {
        match self {
            IoError::Io(_) => "IO",
            IoError::BadMagic => "BAD_MAGIC",
            IoError::BadChecksum { .. } => "BAD_CHECKSUM",
            IoError::Version(_) => "VERSION",
            IoError::Truncated(_) => "TRUNCATED",
            IoError::Encoding(_) => "ENCODING",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    QNet = 1,
    TtRnn = 2,
    Features = 3,
    Clip = 4,
    TtMatrix = 5,
}

impl FileKind {
    fn from_byte(b: u8) -> Option<FileKind> {
        match b {
            1 => Some(FileKind::QNet),
            2 => Some(FileKind::TtRnn),
            3 => Some(FileKind::Features),
            4 => Some(FileKind::Clip),
            5 => Some(FileKind::TtMatrix),
            _ => None,
        }
    }
}

// -- little-endian wire helpers ---------------------------------------------

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s_from_f64(&mut self, vals: &[f64]) {
        for &v in vals {
            self.f32(v as f32);
        }
    }
    fn i8s(&mut self, vals: &[i8]) {
        self.buf.extend(vals.iter().map(|&v| v as u8));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        if self.pos + n > self.bytes.len() {
            return Err(IoError::Truncated(format!(
                "needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32, IoError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, IoError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, IoError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s_from_f32(&mut self, n: usize) -> Result<Vec<f64>, IoError> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
    fn i8s(&mut self, n: usize) -> Result<Vec<i8>, IoError> {
        Ok(self.take(n)?.iter().map(|&b| b as i8).collect())
    }
    fn done(&self) -> Result<(), IoError> {
        if self.pos != self.bytes.len() {
            return Err(IoError::Encoding(format!(
                "{} unused payload bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

// -- container ---------------------------------------------------------------

pub fn encode_container(kind: FileKind, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(kind as u8);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

pub fn decode_container(bytes: &[u8], expected: FileKind) -> Result<&[u8], IoError> {
    if bytes.len() < HEADER_LEN {
        return Err(IoError::Truncated("shorter than the header".into()));
    }
    if bytes[0..4] != MAGIC {
        return Err(IoError::BadMagic);
    }
    let kind = FileKind::from_byte(bytes[4])
        .ok_or_else(|| IoError::Version(format!("unknown kind byte {}", bytes[4])))?;
    if kind != expected {
        return Err(IoError::Version(format!(
            "expected kind {expected:?}, file holds {kind:?}"
        )));
    }
    let version = u16::from_le_bytes(bytes[5..7].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(IoError::Version(format!("unsupported version {version}")));
    }
    let payload_len = u64::from_le_bytes(bytes[7..15].try_into().unwrap()) as usize;
    let expected_crc = u32::from_le_bytes(bytes[15..19].try_into().unwrap());
    let payload = bytes
        .get(HEADER_LEN..HEADER_LEN + payload_len)
        .ok_or_else(|| IoError::Truncated("payload shorter than header claims".into()))?;
    if bytes.len() != HEADER_LEN + payload_len {
        return Err(IoError::Encoding(format!(
            "{} bytes after the payload",
            bytes.len() - HEADER_LEN - payload_len
        )));
    }
    let actual = crc32fast::hash(payload);
    if actual != expected_crc {
        return Err(IoError::BadChecksum {
            expected: expected_crc,
            actual,
        });
    }
    Ok(payload)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let tmp = path.with_extension("ttq.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

// -- qnet --------------------------------------------------------------------

const ACT_LEAKY: u8 = 0;
const ACT_LINEAR: u8 = 1;
const LAYER_CONV: u8 = 0;
const LAYER_MAXPOOL: u8 = 1;

pub fn qnet_to_bytes(model: &QNetModel) -> Vec<u8> {
    let mut w = Writer::default();
    let (a, b, c) = model.input_dims;
    w.u32(a);
    w.u32(b);
    w.u32(c);
    w.i32(model.darknet_header.major);
    w.i32(model.darknet_header.minor);
    w.i32(model.darknet_header.revision);
    w.u64(model.darknet_header.seen);
    w.u32(model.layers.len());
    for layer in &model.layers {
        match *layer {
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
                batch_norm,
                activation,
            } => {
                w.u8(LAYER_CONV);
                w.u32(in_ch);
                w.u32(out_ch);
                w.u32(kernel);
                w.u32(stride);
                w.u32(pad);
                w.u8(batch_norm as u8);
                w.u8(match activation {
                    Activation::Leaky => ACT_LEAKY,
                    Activation::Linear => ACT_LINEAR,
                });
            }
            LayerSpec::Maxpool { kernel, stride } => {
                w.u8(LAYER_MAXPOOL);
                w.u32(kernel);
                w.u32(stride);
            }
        }
    }
    match &model.q {
        None => {
            w.u8(0);
            for (layer, params) in model.layers.iter().zip(&model.fp) {
                let LayerSpec::Conv { .. } = layer else { continue };
                let p = params.as_ref().expect("conv layer has fp params");
                w.f32s_from_f64(&p.bias);
                if let Some(bn) = &p.bn {
                    w.f32s_from_f64(&bn.scale);
                    w.f32s_from_f64(&bn.mean);
                    w.f32s_from_f64(&bn.var);
                }
                w.f32s_from_f64(p.weights.as_slice());
            }
        }
        Some(q) => {
            w.u8(1);
            for (layer, params) in model.layers.iter().zip(q) {
                let LayerSpec::Conv { .. } = layer else { continue };
                let p = params.as_ref().expect("conv layer has quantized params");
                w.f32(p.weights.xi as f32);
                w.f32(p.weights.pre_scale as f32);
                w.i8s(&p.weights.values);
                w.f32s_from_f64(&p.affine.gamma);
                w.f32s_from_f64(&p.affine.beta);
            }
        }
    }
    encode_container(FileKind::QNet, &w.buf)
}

pub fn qnet_from_bytes(bytes: &[u8]) -> Result<QNetModel, IoError> {
    let payload = decode_container(bytes, FileKind::QNet)?;
    let mut r = Reader::new(payload);
    let input_dims = (r.u32()?, r.u32()?, r.u32()?);
    let darknet_header = DarknetHeader {
        major: r.i32()?,
        minor: r.i32()?,
        revision: r.i32()?,
        seen: r.u64()?,
    };
    let layer_count = r.u32()?;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        match r.u8()? {
            LAYER_CONV => {
                let (in_ch, out_ch, kernel, stride, pad) =
                    (r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?);
                let batch_norm = r.u8()? != 0;
                let activation = match r.u8()? {
                    ACT_LEAKY => Activation::Leaky,
                    ACT_LINEAR => Activation::Linear,
                    other => {
                        return Err(IoError::Encoding(format!("unknown activation {other}")))
                    }
                };
                layers.push(LayerSpec::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    pad,
                    batch_norm,
                    activation,
                });
            }
            LAYER_MAXPOOL => layers.push(LayerSpec::Maxpool {
                kernel: r.u32()?,
                stride: r.u32()?,
            }),
            other => return Err(IoError::Encoding(format!("unknown layer tag {other}"))),
        }
    }
    let quantized = r.u8()? != 0;
    let mut fp: Vec<Option<ConvParams>> = vec![None; layers.len()];
    let mut q: Option<Vec<Option<QConvParams>>> = None;
    if !quantized {
        for (idx, layer) in layers.iter().enumerate() {
            let LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                batch_norm,
                ..
            } = *layer
            else {
                continue;
            };
            let bias = r.f64s_from_f32(out_ch)?;
            let bn = if batch_norm {
                Some(BnStats {
                    scale: r.f64s_from_f32(out_ch)?,
                    mean: r.f64s_from_f32(out_ch)?,
                    var: r.f64s_from_f32(out_ch)?,
                })
            } else {
                None
            };
            let count = kernel * kernel * in_ch * out_ch;
            let data = r.f64s_from_f32(count)?;
            let shape = Shape::new(vec![kernel, kernel, in_ch, out_ch])
                .map_err(|e| IoError::Encoding(e.to_string()))?;
            fp[idx] = Some(ConvParams {
                weights: DenseTensor::from_vec(shape, data)
                    .map_err(|e| IoError::Encoding(e.to_string()))?,
                bias,
                bn,
            });
        }
    } else {
        let mut qv: Vec<Option<QConvParams>> = vec![None; layers.len()];
        for (idx, layer) in layers.iter().enumerate() {
            let LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                ..
            } = *layer
            else {
                continue;
            };
            let xi = r.f32()? as f64;
            let pre_scale = r.f32()? as f64;
            let count = kernel * kernel * in_ch * out_ch;
            let values = r.i8s(count)?;
            let gamma = r.f64s_from_f32(out_ch)?;
            let beta = r.f64s_from_f32(out_ch)?;
            let shape = Shape::new(vec![kernel, kernel, in_ch, out_ch])
                .map_err(|e| IoError::Encoding(e.to_string()))?;
            qv[idx] = Some(QConvParams {
                weights: QuantizedWeights {
                    values,
                    xi,
                    pre_scale,
                    shape,
                },
                affine: ChannelAffine { gamma, beta },
            });
        }
        q = Some(qv);
    }
    r.done()?;
    Ok(QNetModel {
        input_dims,
        layers,
        fp,
        q,
        darknet_header,
    })
}

pub fn save_qnet(path: &Path, model: &QNetModel) -> Result<(), IoError> {
    write_atomic(path, &qnet_to_bytes(model))
}

pub fn load_qnet(path: &Path) -> Result<QNetModel, IoError> {
    qnet_from_bytes(&fs::read(path)?)
}

// -- ttrnn -------------------------------------------------------------------

/// A stored recurrent model remembers its training precision.
#[derive(Debug, Clone)]
pub enum TtRnnFile {
    F32(TTRnnModel<f32>),
    F64(TTRnnModel<f64>),
}

impl TtRnnFile {
    /// Widens to f64 for inference paths.
    pub fn into_f64(self) -> TTRnnModel<f64> {
        match self {
            TtRnnFile::F64(m) => m,
            TtRnnFile::F32(m) => {
                let flat: Vec<f64> = m.params_flat().iter().map(|&v| v as f64).collect();
                let mut out: TTRnnModel<f64> =
                    init_model(m.config.clone()).expect("stored config is valid");
                out.set_params_flat(&flat).expect("same structure");
                out
            }
        }
    }

    pub fn config(&self) -> &TTRnnConfig {
        match self {
            TtRnnFile::F32(m) => &m.config,
            TtRnnFile::F64(m) => &m.config,
        }
    }
}

const PREC_F64: u8 = 0;
const PREC_F32: u8 = 1;

fn write_ttrnn_config(w: &mut Writer, cfg: &TTRnnConfig) {
    w.u8(match cfg.cell {
        CellKind::PlainRnn => 0,
        CellKind::Lstm => 1,
    });
    w.u32(cfg.input_modes.len());
    for &m in &cfg.input_modes {
        w.u32(m);
    }
    for &m in &cfg.hidden_modes {
        w.u32(m);
    }
    for &r in &cfg.ranks_ih {
        w.u32(r);
    }
    for &r in &cfg.ranks_hh {
        w.u32(r);
    }
    w.f64(cfg.dropout_p);
    w.u32(cfg.classes);
    w.u64(cfg.seed);
}

fn read_ttrnn_config(r: &mut Reader) -> Result<TTRnnConfig, IoError> {
    let cell = match r.u8()? {
        0 => CellKind::PlainRnn,
        1 => CellKind::Lstm,
        other => return Err(IoError::Encoding(format!("unknown cell kind {other}"))),
    };
    let d = r.u32()?;
    if d == 0 || d > 64 {
        return Err(IoError::Encoding(format!("implausible tensor order {d}")));
    }
    let mut input_modes = Vec::with_capacity(d);
    for _ in 0..d {
        input_modes.push(r.u32()?);
    }
    let mut hidden_modes = Vec::with_capacity(d);
    for _ in 0..d {
        hidden_modes.push(r.u32()?);
    }
    let mut ranks_ih = Vec::with_capacity(d + 1);
    for _ in 0..=d {
        ranks_ih.push(r.u32()?);
    }
    let mut ranks_hh = Vec::with_capacity(d + 1);
    for _ in 0..=d {
        ranks_hh.push(r.u32()?);
    }
    Ok(TTRnnConfig {
        cell,
        input_modes,
        hidden_modes,
        ranks_ih,
        ranks_hh,
        dropout_p: r.f64()?,
        classes: r.u32()?,
        seed: r.u64()?,
    })
}

pub fn ttrnn_to_bytes(model: &TtRnnFile) -> Vec<u8> {
    let mut w = Writer::default();
    match model {
        TtRnnFile::F64(m) => {
            w.u8(PREC_F64);
            write_ttrnn_config(&mut w, &m.config);
            let flat = m.params_flat();
            w.u64(flat.len() as u64);
            for v in flat {
                w.f64(v);
            }
        }
        TtRnnFile::F32(m) => {
            w.u8(PREC_F32);
            write_ttrnn_config(&mut w, &m.config);
            let flat = m.params_flat();
            w.u64(flat.len() as u64);
            for v in flat {
                w.f32(v);
            }
        }
    }
    encode_container(FileKind::TtRnn, &w.buf)
}

pub fn ttrnn_from_bytes(bytes: &[u8]) -> Result<TtRnnFile, IoError> {
    let payload = decode_container(bytes, FileKind::TtRnn)?;
    let mut r = Reader::new(payload);
    let precision = r.u8()?;
    let config = read_ttrnn_config(&mut r)?;
    let count = r.u64()? as usize;
    let out = match precision {
        PREC_F64 => {
            let mut flat = Vec::with_capacity(count);
            for _ in 0..count {
                flat.push(r.f64()?);
            }
            let mut model: TTRnnModel<f64> = init_model(config)
                .map_err(|e| IoError::Encoding(format!("stored config invalid: {e}")))?;
            model
                .set_params_flat(&flat)
                .map_err(|e| IoError::Encoding(format!("parameter count mismatch: {e}")))?;
            TtRnnFile::F64(model)
        }
        PREC_F32 => {
            let mut flat = Vec::with_capacity(count);
            for _ in 0..count {
                flat.push(r.f32()?);
            }
            let mut model: TTRnnModel<f32> = init_model(config)
                .map_err(|e| IoError::Encoding(format!("stored config invalid: {e}")))?;
            model
                .set_params_flat(&flat)
                .map_err(|e| IoError::Encoding(format!("parameter count mismatch: {e}")))?;
            TtRnnFile::F32(model)
        }
        other => return Err(IoError::Encoding(format!("unknown precision {other}"))),
    };
    r.done()?;
    Ok(out)
}

pub fn save_ttrnn(path: &Path, model: &TtRnnFile) -> Result<(), IoError> {
    write_atomic(path, &ttrnn_to_bytes(model))
}

pub fn load_ttrnn(path: &Path) -> Result<TtRnnFile, IoError> {
    ttrnn_from_bytes(&fs::read(path)?)
}

// -- feature sequences -------------------------------------------------------

pub fn features_to_bytes(seq: &FeatureSequence<f32>) -> Result<Vec<u8>, IoError> {
    if seq.frames.is_empty() {
        return Err(IoError::Encoding("empty feature sequence".into()));
    }
    let dims = seq.frames[0].shape().dims().to_vec();
    let mut w = Writer::default();
    w.u32(seq.frames.len());
    w.u32(dims.len());
    for &d in &dims {
        w.u32(d);
    }
    w.i64(seq.label as i64);
    for frame in &seq.frames {
        if frame.shape().dims() != dims {
            return Err(IoError::Encoding("ragged frame shapes".into()));
        }
        for &v in frame.as_slice() {
            w.f32(v);
        }
    }
    Ok(encode_container(FileKind::Features, &w.buf))
}

pub fn features_from_bytes(bytes: &[u8]) -> Result<FeatureSequence<f32>, IoError> {
    let payload = decode_container(bytes, FileKind::Features)?;
    let mut r = Reader::new(payload);
    let frame_count = r.u32()?;
    let d = r.u32()?;
    if d == 0 || d > 64 {
        return Err(IoError::Encoding(format!("implausible tensor order {d}")));
    }
    let mut dims = Vec::with_capacity(d);
    for _ in 0..d {
        dims.push(r.u32()?);
    }
    let label = r.i64()?;
    if label < 0 {
        return Err(IoError::Encoding("negative label".into()));
    }
    let shape = Shape::new(dims).map_err(|e| IoError::Encoding(e.to_string()))?;
    let per_frame = shape.count();
    let mut frames = Vec::with_capacity(frame_count);
    for _ in 0..frame_count {
        let mut data = Vec::with_capacity(per_frame);
        for _ in 0..per_frame {
            data.push(r.f32()?);
        }
        frames.push(
            DenseTensor::from_vec(shape.clone(), data)
                .map_err(|e| IoError::Encoding(e.to_string()))?,
        );
    }
    r.done()?;
    Ok(FeatureSequence {
        frames,
        label: label as usize,
    })
}

pub fn save_features(path: &Path, seq: &FeatureSequence<f32>) -> Result<(), IoError> {
    write_atomic(path, &features_to_bytes(seq)?)
}

pub fn load_features(path: &Path) -> Result<FeatureSequence<f32>, IoError> {
    features_from_bytes(&fs::read(path)?)
}

// -- raw clips ----------------------------------------------------------------

/// Raw frame tensors with clip metadata; how video enters the toolkit.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredClip {
    pub fps: f64,
    pub label: Option<usize>,
    pub frames: Vec<DenseTensor<f64>>,
}

pub fn clip_to_bytes(clip: &StoredClip) -> Result<Vec<u8>, IoError> {
    if clip.frames.is_empty() {
        return Err(IoError::Encoding("empty clip".into()));
    }
    let dims = clip.frames[0].shape().dims().to_vec();
    if dims.len() != 3 {
        return Err(IoError::Encoding("clip frames must be [H,W,C]".into()));
    }
    let mut w = Writer::default();
    w.f64(clip.fps);
    w.i64(clip.label.map_or(-1, |l| l as i64));
    w.u32(clip.frames.len());
    for &d in &dims {
        w.u32(d);
    }
    for frame in &clip.frames {
        if frame.shape().dims() != dims {
            return Err(IoError::Encoding("ragged frame shapes".into()));
        }
        w.f32s_from_f64(frame.as_slice());
    }
    Ok(encode_container(FileKind::Clip, &w.buf))
}

pub fn clip_from_bytes(bytes: &[u8]) -> Result<StoredClip, IoError> {
    let payload = decode_container(bytes, FileKind::Clip)?;
    let mut r = Reader::new(payload);
    let fps = r.f64()?;
    let label_raw = r.i64()?;
    let frame_count = r.u32()?;
    let dims = vec![r.u32()?, r.u32()?, r.u32()?];
    let shape = Shape::new(dims).map_err(|e| IoError::Encoding(e.to_string()))?;
    let per_frame = shape.count();
    let mut frames = Vec::with_capacity(frame_count);
    for _ in 0..frame_count {
        let data = r.f64s_from_f32(per_frame)?;
        frames.push(
            DenseTensor::from_vec(shape.clone(), data)
                .map_err(|e| IoError::Encoding(e.to_string()))?,
        );
    }
    r.done()?;
    Ok(StoredClip {
        fps,
        label: (label_raw >= 0).then_some(label_raw as usize),
        frames,
    })
}

pub fn save_clip(path: &Path, clip: &StoredClip) -> Result<(), IoError> {
    write_atomic(path, &clip_to_bytes(clip)?)
}

pub fn load_clip(path: &Path) -> Result<StoredClip, IoError> {
    clip_from_bytes(&fs::read(path)?)
}

// -- standalone TT matrices ---------------------------------------------------

pub fn ttmatrix_to_bytes(tt: &crate::tt::TTMatrix<f64>) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(tt.ndim());
    for core in tt.cores() {
        for &d in core.shape().dims() {
            w.u32(d);
        }
        for &v in core.as_slice() {
            w.f64(v);
        }
    }
    encode_container(FileKind::TtMatrix, &w.buf)
}

pub fn ttmatrix_from_bytes(bytes: &[u8]) -> Result<crate::tt::TTMatrix<f64>, IoError> {
    let payload = decode_container(bytes, FileKind::TtMatrix)?;
    let mut r = Reader::new(payload);
    let d = r.u32()?;
    if d == 0 || d > 64 {
        return Err(IoError::Encoding(format!("implausible core count {d}")));
    }
    let mut cores = Vec::with_capacity(d);
    for _ in 0..d {
        let dims = vec![r.u32()?, r.u32()?, r.u32()?, r.u32()?];
        let shape = Shape::new(dims).map_err(|e| IoError::Encoding(e.to_string()))?;
        let mut data = Vec::with_capacity(shape.count());
        for _ in 0..shape.count() {
            data.push(r.f64()?);
        }
        cores.push(
            DenseTensor::from_vec(shape, data).map_err(|e| IoError::Encoding(e.to_string()))?,
        );
    }
    r.done()?;
    crate::tt::TTMatrix::new(cores).map_err(|e| IoError::Encoding(e.to_string()))
}

pub fn save_ttmatrix(path: &Path, tt: &crate::tt::TTMatrix<f64>) -> Result<(), IoError> {
    write_atomic(path, &ttmatrix_to_bytes(tt))
}

pub fn load_ttmatrix(path: &Path) -> Result<crate::tt::TTMatrix<f64>, IoError> {
    ttmatrix_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnet::{build_qnet, tiny_yolov2_608};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_qnet(seed: u64) -> QNetModel {
        let mut net = build_qnet(
            (8, 8, 3),
            vec![
                LayerSpec::Conv {
                    in_ch: 3,
                    out_ch: 4,
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                    batch_norm: true,
                    activation: Activation::Leaky,
                },
                LayerSpec::Maxpool { kernel: 2, stride: 2 },
                LayerSpec::Conv {
                    in_ch: 4,
                    out_ch: 2,
                    kernel: 1,
                    stride: 1,
                    pad: 0,
                    batch_norm: false,
                    activation: Activation::Linear,
                },
            ],
        )
        .unwrap();
        net.randomize_weights(seed);
        net
    }

    fn small_rnn(seed: u64) -> TTRnnModel<f64> {
        init_model(TTRnnConfig {
            cell: CellKind::Lstm,
            input_modes: vec![2, 3],
            hidden_modes: vec![2, 2],
            ranks_ih: vec![1, 2, 1],
            ranks_hh: vec![1, 2, 1],
            dropout_p: 0.25,
            classes: 4,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn qnet_roundtrip_bit_exact() {
        for seed in 0..5 {
            let net = small_qnet(seed);
            let bytes = qnet_to_bytes(&net);
            let back = qnet_from_bytes(&bytes).unwrap();
            assert_eq!(qnet_to_bytes(&back), bytes);

            let qnet = net.quantize();
            let qbytes = qnet_to_bytes(&qnet);
            let qback = qnet_from_bytes(&qbytes).unwrap();
            assert!(qback.is_quantized());
            assert_eq!(qnet_to_bytes(&qback), qbytes);
        }
    }

    #[test]
    fn quantized_file_is_about_4x_smaller_for_the_table_config() {
        let mut net = tiny_yolov2_608();
        net.randomize_weights(7);
        let fp_len = qnet_to_bytes(&net).len() as f64;
        let q_len = qnet_to_bytes(&net.quantize()).len() as f64;
        let ratio = fp_len / q_len;
        assert!(
            (ratio - 3.994).abs() / 3.994 <= 0.005,
            "compression ratio {ratio}"
        );
    }

    #[test]
    fn ttrnn_roundtrip_bit_exact() {
        let model = small_rnn(3);
        let bytes = ttrnn_to_bytes(&TtRnnFile::F64(model));
        let back = ttrnn_from_bytes(&bytes).unwrap();
        assert_eq!(ttrnn_to_bytes(&back), bytes);

        // f32 precision keeps its tag and payload width through a round trip
        let m32: TTRnnModel<f32> = init_model(small_rnn(4).config).unwrap();
        let bytes32 = ttrnn_to_bytes(&TtRnnFile::F32(m32));
        let back32 = ttrnn_from_bytes(&bytes32).unwrap();
        assert_eq!(ttrnn_to_bytes(&back32), bytes32);
        assert!(bytes32.len() < bytes.len());
    }

    #[test]
    fn ttrnn_file_size_tracks_param_count() {
        let model = small_rnn(5);
        let params = model.total_param_count() as usize;
        let bytes = ttrnn_to_bytes(&TtRnnFile::F64(model));
        let overhead = bytes.len() as i64 - (8 * params) as i64;
        assert!(overhead > 0 && overhead < 1024, "overhead {overhead}");
    }

    #[test]
    fn features_roundtrip_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shape = Shape::new(vec![2, 3, 2]).unwrap();
        let seq = FeatureSequence::<f32> {
            frames: (0..4)
                .map(|_| DenseTensor::from_fn(shape.clone(), |_| rng.random_range(-1.0f32..1.0)))
                .collect(),
            label: 2,
        };
        let bytes = features_to_bytes(&seq).unwrap();
        let back = features_from_bytes(&bytes).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn clip_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let shape = Shape::new(vec![4, 4, 3]).unwrap();
        let clip = StoredClip {
            fps: 25.0,
            label: Some(1),
            frames: (0..3)
                .map(|_| {
                    DenseTensor::from_fn(shape.clone(), |_| {
                        (rng.random_range(0.0f32..1.0)) as f64
                    })
                })
                .collect(),
        };
        let bytes = clip_to_bytes(&clip).unwrap();
        let back = clip_from_bytes(&bytes).unwrap();
        assert_eq!(back, clip);
    }

    #[test]
    fn wrong_kind_byte_is_version_error() {
        let model = small_rnn(6);
        let bytes = ttrnn_to_bytes(&TtRnnFile::F64(model));
        assert_eq!(qnet_from_bytes(&bytes).unwrap_err().code(), "VERSION");
    }

    #[test]
    fn bad_magic_detected() {
        let mut bytes = qnet_to_bytes(&small_qnet(1));
        bytes[0] = b'X';
        assert_eq!(qnet_from_bytes(&bytes).unwrap_err().code(), "BAD_MAGIC");
    }

    #[test]
    fn truncation_detected() {
        let bytes = qnet_to_bytes(&small_qnet(2));
        let cut = &bytes[..bytes.len() - 3];
        assert_eq!(qnet_from_bytes(cut).unwrap_err().code(), "TRUNCATED");
    }

    #[test]
    fn single_bit_flips_are_caught() {
        let net = small_qnet(3);
        let bytes = qnet_to_bytes(&net);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut caught = 0;
        for _ in 0..100 {
            let mut corrupted = bytes.clone();
            let byte = rng.random_range(HEADER_LEN..corrupted.len());
            let bit = rng.random_range(0..8u8);
            corrupted[byte] ^= 1 << bit;
            match qnet_from_bytes(&corrupted) {
                Err(IoError::BadChecksum { .. }) => caught += 1,
                other => panic!("bit flip slipped through: {other:?}"),
            }
        }
        assert_eq!(caught, 100);
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ttq");
        let net = small_qnet(4).quantize();
        save_qnet(&path, &net).unwrap();
        let back = load_qnet(&path).unwrap();
        assert_eq!(qnet_to_bytes(&back), qnet_to_bytes(&net));
        // no temp file left behind
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
