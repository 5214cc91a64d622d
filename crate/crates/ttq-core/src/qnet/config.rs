//! Network definition files.
//!
//! TOML schema:
//!
//! ```toml
//! [input]
//! height = 608
//! width = 608
//! channels = 3
//!
//! [[layer]]
//! kind = "conv"          # or "maxpool"
//! out_channels = 16      # conv only
//! in_channels = 3        # optional; inferred from the chain when omitted
//! kernel = 3
//! stride = 1
//! pad = 1                # conv only, default 0
//! batch_norm = true      # conv only, default false
//! activation = "leaky"   # conv only: "leaky" | "linear", default "leaky"
//!
//! [detection]            # optional decode geometry
//! boxes = 5
//! classes = 20
//! anchors = [[1.08, 1.19], [3.42, 4.41], [6.63, 11.38], [9.42, 5.11], [16.62, 10.52]]
//! ```

use serde::Deserialize;

use super::{build_qnet, Activation, DetectionGridConfig, LayerSpec, QNetModel, QnetError};

#[derive(Debug, Deserialize)]
struct FileRoot {
    input: InputSection,
    #[serde(default)]
    layer: Vec<LayerSection>,
    detection: Option<DetectionSection>,
}

#[derive(Debug, Deserialize)]
struct InputSection {
    height: usize,
    width: usize,
    channels: usize,
}

#[derive(Debug, Deserialize)]
struct LayerSection {
    kind: String,
    in_channels: Option<usize>,
    out_channels: Option<usize>,
    kernel: Option<usize>,
    stride: Option<usize>,
    #[serde(default)]
    pad: usize,
    #[serde(default)]
    batch_norm: bool,
    activation: Option<String>,
}

#[derive(Debug, Deserialize)]
struct DetectionSection {
    boxes: usize,
    classes: usize,
    anchors: Vec<(f64, f64)>,
}

/// A parsed network definition: the validated model plus optional decode
/// geometry.
#[derive(Debug)]
pub struct NetDefinition {
    pub model: QNetModel,
    pub detection: Option<DetectionGridConfig>,
}

pub fn parse_net_config(text: &str) -> Result<NetDefinition, QnetError> {
    let root: FileRoot =
        toml::from_str(text).map_err(|e| QnetError::Config(format!("net config: {e}")))?;
    if root.layer.is_empty() {
        return Err(QnetError::Config("net config has no layers".into()));
    }
    let mut channels = root.input.channels;
    let mut layers = Vec::with_capacity(root.layer.len());
    for (idx, l) in root.layer.iter().enumerate() {
        match l.kind.as_str() {
            "conv" => {
                let out_ch = l.out_channels.ok_or_else(|| {
                    QnetError::Config(format!("layer {idx}: conv needs out_channels"))
                })?;
                let kernel = l.kernel.unwrap_or(3);
                let activation = match l.activation.as_deref().unwrap_or("leaky") {
                    "leaky" => Activation::Leaky,
                    "linear" => Activation::Linear,
                    other => {
                        return Err(QnetError::Config(format!(
                            "layer {idx}: unknown activation {other:?}"
                        )))
                    }
                };
                let in_ch = l.in_channels.unwrap_or(channels);
                layers.push(LayerSpec::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    stride: l.stride.unwrap_or(1),
                    pad: l.pad,
                    batch_norm: l.batch_norm,
                    activation,
                });
                channels = out_ch;
            }
            "maxpool" => {
                layers.push(LayerSpec::Maxpool {
                    kernel: l.kernel.unwrap_or(2),
                    stride: l.stride.unwrap_or(2),
                });
            }
            other => {
                return Err(QnetError::Config(format!(
                    "layer {idx}: unknown kind {other:?}"
                )))
            }
        }
    }
    let model = build_qnet(
        (root.input.height, root.input.width, root.input.channels),
        layers,
    )?;
    let detection = match root.detection {
        Some(d) => {
            let cfg = DetectionGridConfig {
                grid: model.output_dims().0,
                boxes: d.boxes,
                classes: d.classes,
                anchors: d.anchors,
            };
            cfg.validate()?;
            Some(cfg)
        }
        None => None,
    };
    Ok(NetDefinition { model, detection })
}

/// The tiny-YOLOv2-shaped detector at 608x608 input: nine conv layers with
/// interleaved pooling, 125-channel linear head over a 19x19 grid.
pub fn tiny_yolov2_608() -> QNetModel {
    let conv = |in_ch: usize, out_ch: usize| LayerSpec::Conv {
        in_ch,
        out_ch,
        kernel: 3,
        stride: 1,
        pad: 1,
        batch_norm: true,
        activation: Activation::Leaky,
    };
    let pool = |stride: usize| LayerSpec::Maxpool { kernel: 2, stride };
    build_qnet(
        (608, 608, 3),
        vec![
            conv(3, 16),
            pool(2),
            conv(16, 32),
            pool(2),
            conv(32, 64),
            pool(2),
            conv(64, 128),
            pool(2),
            conv(128, 256),
            pool(2),
            conv(256, 512),
            pool(1),
            conv(512, 1024),
            conv(1024, 1024),
            LayerSpec::Conv {
                in_ch: 1024,
                out_ch: 125,
                kernel: 1,
                stride: 1,
                pad: 0,
                batch_norm: false,
                activation: Activation::Linear,
            },
        ],
    )
    .expect("fixed architecture chains")
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
[input]
height = 16
width = 16
channels = 3

[[layer]]
kind = "conv"
out_channels = 8
kernel = 3
pad = 1
batch_norm = true

[[layer]]
kind = "maxpool"

[[layer]]
kind = "conv"
out_channels = 4
kernel = 1
activation = "linear"

[detection]
boxes = 2
classes = 2
anchors = [[1.0, 1.0], [2.0, 2.0]]
"#;

    #[test]
    fn parses_and_chains() {
        let def = parse_net_config(SMALL).unwrap();
        assert_eq!(def.model.layers.len(), 3);
        assert_eq!(def.model.output_dims(), (8, 8, 4));
        let det = def.detection.unwrap();
        assert_eq!(det.grid, 8);
        assert_eq!(det.channels(), 14);
    }

    #[test]
    fn explicit_in_channels_mismatch_fails() {
        let text = SMALL.replace("out_channels = 4", "out_channels = 4\nin_channels = 5");
        assert_eq!(parse_net_config(&text).unwrap_err().code(), "BAD_CHAIN");
    }

    #[test]
    fn unknown_kind_rejected() {
        let text = SMALL.replace("kind = \"maxpool\"", "kind = \"avgpool\"");
        assert_eq!(parse_net_config(&text).unwrap_err().code(), "CONFIG");
    }

    #[test]
    fn anchor_count_must_match_boxes() {
        let text = SMALL.replace("boxes = 2", "boxes = 3");
        assert_eq!(parse_net_config(&text).unwrap_err().code(), "CONFIG");
    }
}
