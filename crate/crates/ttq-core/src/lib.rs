//! Compression toolkit for small detect-then-classify networks: 8-bit
//! quantization-aware inference for convolutional detectors, tensor-train
//! (TT) compression of recurrent classifiers, and the pipeline wiring the
//! two together.
//!
//! Modules:
//! - [`tensor`]: dense multi-dimensional arrays and flat/multi index maps
//! - [`quant`]: int8 weight / uint8 activation quantization and the integer
//!   convolution, batch-norm folding and pooling kernels
//! - [`qnet`]: quantized feed-forward detector nets, Darknet weight import,
//!   detection decoding and AP/mAP metrics
//! - [`tt`]: tensor-train matrices, SVD-based construction, matrix-vector
//!   products and parameter/FLOP accounting
//! - [`ttrnn`]: TT-compressed recurrent classifiers with backprop training
//! - [`pipeline`]: feature extraction, synthetic data, end-to-end comprehension
//! - [`io`]: bit-exact binary serialization for all model kinds

pub mod bench;
pub mod io;
pub mod pipeline;
pub mod qnet;
pub mod quant;
pub mod tensor;
pub mod tt;
pub mod ttrnn;

pub use qnet::{
    average_precision, decode_detections, iou, mean_ap, DetectionBox, DetectionGridConfig,
    LayerSpec, QNetModel,
};
pub use quant::{AccumulatorTensor, QuantizedActivations, QuantizedWeights};
pub use tensor::{DenseTensor, Real, Shape};
pub use tt::TTMatrix;
pub use ttrnn::{FeatureSequence, TTRnnConfig, TTRnnModel};
