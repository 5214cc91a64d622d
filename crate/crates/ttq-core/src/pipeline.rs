//! End-to-end orchestration: frame sampling, feature extraction through the
//! quantized net, dataset preprocessing with on-disk persistence, the
//! synthetic temporal dataset, and streaming clip comprehension.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{load_features, save_features, IoError};
use crate::qnet::{decode_detections, DetectionBox, DetectionGridConfig, QNetModel, QnetError};
use crate::tensor::{DenseTensor, Shape};
use crate::ttrnn::{CellState, FeatureSequence, TTRnnModel, TtrnnError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("TOO_SHORT: clip has {have} frames, need {need}")]
    TooShort { have: usize, need: usize },
    #[error("SHAPE: {0}")]
    Shape(String),
    #[error("MISSING_LABEL: clip {0} has no label")]
    MissingLabel(usize),
    #[error(transparent)]
    Qnet(#[from] QnetError),
    #[error(transparent)]
    Ttrnn(#[from] TtrnnError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("IO: {0}")]
    Fs(#[from] std::io::Error),
    #[error("IO: {0}")]
    Manifest(#[from] serde_json::Error),
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::TooShort { .. } => "TOO_SHORT",
            PipelineError::Shape(_) => "SHAPE",
            PipelineError::MissingLabel(_) => "MISSING_LABEL",
            PipelineError::Qnet(e) => e.code(),
            PipelineError::Ttrnn(e) => e.code(),
            PipelineError::Io(e) => e.code(),
            PipelineError::Fs(_) | PipelineError::Manifest(_) => "IO",
        }
    }
}

/// Raw video clip: frames `[H, W, 3]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub frames: Vec<DenseTensor<f64>>,
    pub fps: f64,
    pub label: Option<usize>,
}

/// `k` distinct frame indices drawn uniformly without replacement, returned
/// in ascending order.
pub fn sample_frame_indices(
    clip: &VideoClip,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, PipelineError> {
    if clip.frames.len() < k {
        return Err(PipelineError::TooShort {
            have: clip.frames.len(),
            need: k,
        });
    }
    let mut idx = rand::seq::index::sample(rng, clip.frames.len(), k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// The sampled frames themselves, ascending.
pub fn sample_frames(
    clip: &VideoClip,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DenseTensor<f64>>, PipelineError> {
    Ok(sample_frame_indices(clip, k, rng)?
        .into_iter()
        .map(|i| clip.frames[i].clone())
        .collect())
}

/// Runs each frame through the quantized net and reshapes the final feature
/// tensor to the recurrent model's input modes.
pub fn extract_features(
    qnet: &QNetModel,
    frames: &[DenseTensor<f64>],
    input_modes: &[usize],
    label: usize,
) -> Result<FeatureSequence<f64>, PipelineError> {
    let mode_shape =
        Shape::new(input_modes.to_vec()).map_err(|e| PipelineError::Shape(e.to_string()))?;
    let mut out = Vec::with_capacity(frames.len());
    for frame in frames {
        let feature = qnet.forward(frame)?;
        if feature.len() != mode_shape.count() {
            return Err(PipelineError::Shape(format!(
                "feature tensor {} has {} elements, input modes {:?} need {}",
                feature.shape(),
                feature.len(),
                input_modes,
                mode_shape.count()
            )));
        }
        out.push(feature.into_reshape(mode_shape.clone()).expect("count checked"));
    }
    Ok(FeatureSequence {
        frames: out,
        label,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestItem {
    pub id: usize,
    pub file: String,
    pub label: usize,
    pub frames: usize,
}

/// Index of a preprocessed dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub generator_version: u32,
    pub seed: u64,
    pub frames_per_sequence: usize,
    pub input_modes: Vec<usize>,
    pub items: Vec<ManifestItem>,
}

pub const GENERATOR_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

fn sequence_file_name(id: usize) -> String {
    format!("seq_{id:05}.ttq")
}

/// Samples `k` frames per clip, extracts features, and persists one feature
/// file per clip plus a manifest. Resumable: items whose file already loads
/// cleanly are skipped, so a second run changes nothing.
pub fn preprocess_dataset(
    qnet: &QNetModel,
    clips: &[VideoClip],
    k: usize,
    seed: u64,
    input_modes: &[usize],
    out_dir: &Path,
) -> Result<DatasetManifest, PipelineError> {
    fs::create_dir_all(out_dir)?;
    let items: Result<Vec<ManifestItem>, PipelineError> = clips
        .par_iter()
        .enumerate()
        .map(|(id, clip)| {
            let label = clip.label.ok_or(PipelineError::MissingLabel(id))?;
            let file = sequence_file_name(id);
            let path = out_dir.join(&file);
            if !(path.exists() && load_features(&path).is_ok()) {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed ^ (id as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15));
                let frames = sample_frames(clip, k, &mut rng)?;
                let seq = extract_features(qnet, &frames, input_modes, label)?;
                save_features(&path, &seq.cast::<f32>())?;
            }
            Ok(ManifestItem {
                id,
                file,
                label,
                frames: k,
            })
        })
        .collect();
    let manifest = DatasetManifest {
        generator_version: GENERATOR_VERSION,
        seed,
        frames_per_sequence: k,
        input_modes: input_modes.to_vec(),
        items: items?,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(out_dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

/// Loads every sequence listed in a dataset directory's manifest.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<FeatureSequence<f32>>), PipelineError> {
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let mut seqs = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        seqs.push(load_features(&dir.join(&item.file))?);
    }
    Ok((manifest, seqs))
}

/// Geometry and texture of the synthetic temporal dataset.
#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub frames_per_clip: usize,
    pub height: usize,
    pub width: usize,
    pub fps: f64,
    /// Blob displacement per frame, pixels.
    pub speed: f64,
    /// Per-frame heading change, radians; classes also differ by heading.
    pub curvature: f64,
    /// Uniform background noise amplitude.
    pub noise: f64,
    pub blob_sigma: f64,
    pub blob_amplitude: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            frames_per_clip: 8,
            height: 24,
            width: 24,
            fps: 25.0,
            speed: 3.0,
            curvature: 0.0,
            noise: 0.15,
            blob_sigma: 2.5,
            blob_amplitude: 0.8,
            seed: 0,
        }
    }
}

/// Class-conditioned moving-blob clips on a torus.
///
/// The blob looks identical for every class and its position is uniform at
/// every time step (uniform start plus deterministic drift with wraparound),
/// so a single frame carries no class information; only the trajectory
/// direction separates the classes.
pub fn synth_dataset(
    classes: usize,
    clips_per_class: usize,
    opts: &SynthOptions,
) -> Vec<VideoClip> {
    assert!(classes >= 2, "synthetic task needs at least 2 classes");
    let (h, w) = (opts.height as f64, opts.width as f64);
    let shape = Shape::new(vec![opts.height, opts.width, 3]).expect("positive dims");
    let mut clips = Vec::with_capacity(classes * clips_per_class);
    for class in 0..classes {
        let heading = 2.0 * std::f64::consts::PI * class as f64 / classes as f64;
        for clip_idx in 0..clips_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(
                opts.seed
                    ^ ((class * clips_per_class + clip_idx) as u64 + 1)
                        .wrapping_mul(0x9e3779b97f4a7c15),
            );
            let mut cx = rng.random_range(0.0..w);
            let mut cy = rng.random_range(0.0..h);
            let mut frames = Vec::with_capacity(opts.frames_per_clip);
            for t in 0..opts.frames_per_clip {
                let mut frame = DenseTensor::zeros(shape.clone());
                {
                    let data = frame.as_mut_slice();
                    for y in 0..opts.height {
                        for x in 0..opts.width {
                            // toroidal distance to the blob center
                            let dx = {
                                let d = (x as f64 - cx).abs() % w;
                                d.min(w - d)
                            };
                            let dy = {
                                let d = (y as f64 - cy).abs() % h;
                                d.min(h - d)
                            };
                            let bump = opts.blob_amplitude
                                * (-(dx * dx + dy * dy)
                                    / (2.0 * opts.blob_sigma * opts.blob_sigma))
                                    .exp();
                            for ch in 0..3 {
                                let noise = rng.random_range(0.0..opts.noise);
                                data[(y * opts.width + x) * 3 + ch] =
                                    (bump + noise).clamp(0.0, 1.0);
                            }
                        }
                    }
                }
                frames.push(frame);
                let angle = heading + opts.curvature * t as f64;
                cx = (cx + opts.speed * angle.cos()).rem_euclid(w);
                cy = (cy + opts.speed * angle.sin()).rem_euclid(h);
            }
            clips.push(VideoClip {
                frames,
                fps: opts.fps,
                label: Some(class),
            });
        }
    }
    clips
}

/// Output of the end-to-end detect-then-classify flow over one clip.
#[derive(Debug, Clone)]
pub struct ComprehensionResult {
    pub per_frame_detections: Vec<Vec<DetectionBox>>,
    pub action_class: usize,
    pub action_probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ComprehendOptions {
    /// Frames sampled from the clip and fed to the recurrent model.
    pub frames: usize,
    pub seed: u64,
    pub detection: Option<DetectionGridConfig>,
    pub conf_threshold: f64,
}

impl Default for ComprehendOptions {
    fn default() -> Self {
        ComprehendOptions {
            frames: 6,
            seed: 0,
            detection: None,
            conf_threshold: 0.5,
        }
    }
}

/// Streams sampled frames through the detector and the recurrent classifier:
/// each frame's feature tensor is consumed by the cell as soon as it is
/// produced; no per-clip feature buffer exists.
pub fn comprehend(
    qnet: &QNetModel,
    rnn: &TTRnnModel<f64>,
    clip: &VideoClip,
    opts: &ComprehendOptions,
) -> Result<ComprehensionResult, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let indices = sample_frame_indices(clip, opts.frames, &mut rng)?;
    let mode_shape = Shape::new(rnn.config.input_modes.clone())
        .map_err(|e| PipelineError::Shape(e.to_string()))?;

    let mut per_frame_detections = Vec::with_capacity(indices.len());
    let mut state = CellState::zeros(rnn.hidden_size());
    for &idx in &indices {
        let feature = qnet.forward(&clip.frames[idx])?;
        if let Some(grid) = &opts.detection {
            per_frame_detections.push(decode_detections(&feature, grid, opts.conf_threshold)?);
        } else {
            per_frame_detections.push(Vec::new());
        }
        if feature.len() != mode_shape.count() {
            return Err(PipelineError::Shape(format!(
                "feature tensor {} does not reshape to input modes {:?}",
                feature.shape(),
                rnn.config.input_modes
            )));
        }
        let x = feature
            .into_reshape(mode_shape.clone())
            .expect("count checked");
        state = rnn.cell_forward(&x, &state, None)?;
    }

    let logits = rnn.head_logits(&state.h);
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let action_probs: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    let action_class = action_probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(ComprehensionResult {
        per_frame_detections,
        action_class,
        action_probs,
    })
}
