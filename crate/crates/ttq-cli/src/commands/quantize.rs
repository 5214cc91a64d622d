use std::path::PathBuf;

use ttq_core::io::{qnet_to_bytes, save_qnet};
use ttq_core::qnet::{load_darknet_weights, parse_net_config};

use crate::{sidecar, Cli, CliError};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Network definition (TOML).
    #[arg(long)]
    pub net_config: PathBuf,

    /// Darknet weight file to import.
    #[arg(long, conflicts_with = "random_seed")]
    pub weights: Option<PathBuf>,

    /// Fill weights with seeded random values instead of importing.
    #[arg(long)]
    pub random_seed: Option<u64>,

    /// Where to store the quantized model.
    #[arg(long, required_unless_present = "report_only")]
    pub out: Option<PathBuf>,

    /// Print the layer table without writing a model file.
    #[arg(long)]
    pub report_only: bool,
}

pub fn run(cli: &Cli, args: &Args) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.net_config)?;
    let def = parse_net_config(&text)?;
    let mut model = def.model;

    if let Some(weights_path) = &args.weights {
        let bytes = std::fs::read(weights_path)?;
        load_darknet_weights(&mut model, &bytes)?;
        println!(
            "loaded {} bytes of weights (version {}.{}.{}, seen {})",
            bytes.len(),
            model.darknet_header.major,
            model.darknet_header.minor,
            model.darknet_header.revision,
            model.darknet_header.seen
        );
    } else {
        let seed = args.random_seed.unwrap_or(cli.seed);
        model.randomize_weights(seed);
        println!("randomized weights with seed {seed}");
    }

    let quantized = model.quantize();

    println!(
        "{:<10} {:>16} {:>16} {:>12} {:>12} {:>12}",
        "layer", "input", "output", "params", "fp32", "int8"
    );
    let dims = |d: (usize, usize, usize)| format!("{}x{}x{}", d.0, d.1, d.2);
    for row in quantized.report_layers() {
        println!(
            "{:<10} {:>16} {:>16} {:>12} {:>8} B / {:>6.1} KB {:>8} B / {:>6.1} KB",
            row.name,
            dims(row.input_dims),
            dims(row.output_dims),
            row.params,
            row.fp_bytes,
            row.fp_kb(),
            row.q_bytes,
            row.q_kb(),
        );
    }
    let fp_file = qnet_to_bytes(&model).len();
    let q_file = qnet_to_bytes(&quantized).len();
    println!(
        "model file: {} B fp32, {} B int8  ({:.3}x compression)",
        fp_file,
        q_file,
        fp_file as f64 / q_file as f64
    );

    if args.report_only {
        return Ok(());
    }
    let out = args.out.as_ref().expect("clap enforces out");
    save_qnet(out, &quantized)?;
    sidecar::record_run(out, "quantize", cli.seed, &cli.precision)?;
    println!("wrote {}", out.display());
    Ok(())
}
