use std::path::PathBuf;

use ttq_core::io::{load_clip, load_qnet, load_ttrnn};
use ttq_core::pipeline::{comprehend, ComprehendOptions, VideoClip};
use ttq_core::qnet::{nms, parse_net_config, NMS_DEFAULT_IOU};

use crate::{Cli, CliError};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Quantized detector (.ttq).
    #[arg(long)]
    pub net: PathBuf,

    /// Trained classifier (.ttq).
    #[arg(long)]
    pub model: PathBuf,

    /// Clip file (kind 4 .ttq).
    #[arg(long)]
    pub clip: PathBuf,

    /// Network definition with a [detection] section; enables box decoding.
    #[arg(long)]
    pub net_config: Option<PathBuf>,

    /// Frames sampled from the clip.
    #[arg(long, default_value_t = 6)]
    pub frames: usize,

    /// Confidence threshold for reported boxes.
    #[arg(long, default_value_t = 0.5)]
    pub conf: f64,

    /// Apply greedy per-class non-maximum suppression to reported boxes.
    #[arg(long)]
    pub nms: bool,
}

pub fn run(cli: &Cli, args: &Args) -> Result<(), CliError> {
    let qnet = load_qnet(&args.net)?;
    let rnn = load_ttrnn(&args.model)?.into_f64();
    let stored = load_clip(&args.clip)?;
    let clip = VideoClip {
        frames: stored.frames,
        fps: stored.fps,
        label: stored.label,
    };

    let detection = match &args.net_config {
        Some(path) => parse_net_config(&std::fs::read_to_string(path)?)?.detection,
        None => None,
    };

    let result = comprehend(
        &qnet,
        &rnn,
        &clip,
        &ComprehendOptions {
            frames: args.frames,
            seed: cli.seed,
            detection,
            conf_threshold: args.conf,
        },
    )?;

    for (i, dets) in result.per_frame_detections.iter().enumerate() {
        let dets = if args.nms {
            nms(dets.clone(), NMS_DEFAULT_IOU)
        } else {
            dets.clone()
        };
        println!("frame {i}: {} boxes", dets.len());
        for d in dets {
            println!(
                "  class {} conf {:.3} center ({:.3}, {:.3}) size ({:.3}, {:.3})",
                d.class_id, d.confidence, d.cx, d.cy, d.w, d.h
            );
        }
    }
    println!(
        "action class {} (probs {:?})",
        result.action_class,
        result
            .action_probs
            .iter()
            .map(|p| (p * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>()
    );
    if let Some(label) = clip.label {
        println!("clip label {label}");
    }
    Ok(())
}
