use std::path::PathBuf;

use ttq_core::io::{load_clip, load_qnet};
use ttq_core::pipeline::{preprocess_dataset, synth_dataset, SynthOptions, VideoClip};

use super::parse_usize_list;
use crate::{sidecar, Cli, CliError};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Quantized detector model (.ttq).
    #[arg(long)]
    pub net: PathBuf,

    /// Directory of clip files (kind 4 .ttq), processed in name order.
    #[arg(long, conflicts_with = "synth")]
    pub clips: Option<PathBuf>,

    /// Generate a synthetic dataset instead: "<classes>x<clips-per-class>".
    #[arg(long)]
    pub synth: Option<String>,

    /// Frames per synthetic clip.
    #[arg(long, default_value_t = 8)]
    pub synth_frames: usize,

    /// Synthetic frame size "HxW".
    #[arg(long, default_value = "24x24")]
    pub synth_size: String,

    /// Frames sampled per clip into each feature sequence.
    #[arg(long, default_value_t = 6)]
    pub frames: usize,

    /// Input-mode shape for the stored feature tensors; defaults to the
    /// net's own output dims.
    #[arg(long)]
    pub modes: Option<String>,

    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_pair(text: &str, what: &str) -> Result<(usize, usize), CliError> {
    let parts: Vec<&str> = text.split('x').collect();
    if parts.len() != 2 {
        return Err(CliError::new(
            "CONFIG",
            anyhow::anyhow!("{what} must look like 5x40, got {text:?}"),
        ));
    }
    let a = parts[0].trim().parse::<usize>();
    let b = parts[1].trim().parse::<usize>();
    match (a, b) {
        (Ok(a), Ok(b)) => Ok((a, b)),
        _ => Err(CliError::new(
            "CONFIG",
            anyhow::anyhow!("{what} must be two integers, got {text:?}"),
        )),
    }
}

pub fn run(cli: &Cli, args: &Args) -> Result<(), CliError> {
    let qnet = load_qnet(&args.net)?;
    if !qnet.is_quantized() {
        return Err(CliError::new(
            "NOT_QUANTIZED",
            anyhow::anyhow!("{} stores fp32 weights; run `ttq quantize` first", args.net.display()),
        ));
    }

    let clips: Vec<VideoClip> = if let Some(spec) = &args.synth {
        let (classes, per_class) = parse_pair(spec, "--synth")?;
        let (height, width) = parse_pair(&args.synth_size, "--synth-size")?;
        synth_dataset(
            classes,
            per_class,
            &SynthOptions {
                frames_per_clip: args.synth_frames,
                height,
                width,
                seed: cli.seed,
                ..SynthOptions::default()
            },
        )
    } else if let Some(dir) = &args.clips {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "ttq"))
            .collect();
        paths.sort();
        let mut out = Vec::with_capacity(paths.len());
        for p in paths {
            let stored = load_clip(&p)?;
            out.push(VideoClip {
                frames: stored.frames,
                fps: stored.fps,
                label: stored.label,
            });
        }
        out
    } else {
        return Err(CliError::new(
            "CONFIG",
            anyhow::anyhow!("one of --clips or --synth is required"),
        ));
    };

    let modes = match &args.modes {
        Some(text) => parse_usize_list(text)?,
        None => {
            let (a, b, c) = qnet.output_dims();
            vec![a, b, c]
        }
    };

    let manifest = preprocess_dataset(&qnet, &clips, args.frames, cli.seed, &modes, &args.out)?;
    sidecar::record_run(&args.out, "extract", cli.seed, &cli.precision)?;
    println!(
        "wrote {} sequences ({} frames each, modes {modes:?}) to {}",
        manifest.items.len(),
        args.frames,
        args.out.display()
    );
    Ok(())
}
