use std::path::PathBuf;

use ttq_core::io::{load_ttrnn, qnet_to_bytes, ttrnn_to_bytes, FileKind, TtRnnFile};
use ttq_core::tt::dense_matvec_multiplies;

use crate::{Cli, CliError};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Stored models to account for (.ttq, detector or classifier).
    #[arg(long = "model")]
    pub models: Vec<PathBuf>,

    /// Dense layer dims "ROWSxCOLS" the ratios are measured against.
    #[arg(long, default_value = "57600x1024")]
    pub dense: String,

    /// Externally reported parameter counts to turn into ratios.
    #[arg(long = "count")]
    pub counts: Vec<u64>,
}

fn file_kind(bytes: &[u8]) -> Option<FileKind> {
    if bytes.len() < 5 || &bytes[0..4] != b"TTQ1" {
        return None;
    }
    match bytes[4] {
        1 => Some(FileKind::QNet),
        2 => Some(FileKind::TtRnn),
        _ => None,
    }
}

pub fn run(_cli: &Cli, args: &Args) -> Result<(), CliError> {
    let parts: Vec<&str> = args.dense.split('x').collect();
    if parts.len() != 2 {
        return Err(CliError::new(
            "CONFIG",
            anyhow::anyhow!("--dense must look like 57600x1024"),
        ));
    }
    let rows: usize = parts[0]
        .trim()
        .parse()
        .map_err(|e| CliError::new("CONFIG", anyhow::anyhow!("bad --dense rows: {e}")))?;
    let cols: usize = parts[1]
        .trim()
        .parse()
        .map_err(|e| CliError::new("CONFIG", anyhow::anyhow!("bad --dense cols: {e}")))?;
    let dense = dense_matvec_multiplies(rows, cols);
    println!("dense {rows}x{cols}: {dense} parameters");

    for &count in &args.counts {
        if count == 0 {
            return Err(CliError::new("CONFIG", anyhow::anyhow!("--count must be > 0")));
        }
        let ratio = (dense as f64 / count as f64).round() as u64;
        println!("  vs reported count {count}: {ratio}x reduction");
    }

    for path in &args.models {
        let bytes = std::fs::read(path)?;
        match file_kind(&bytes) {
            Some(FileKind::QNet) => {
                let model = ttq_core::io::qnet_from_bytes(&bytes)?;
                let params = model.weight_param_count();
                let file_len = bytes.len();
                let fp_len = if model.is_quantized() {
                    // quantized files drop fp weights; a zero-filled twin of
                    // the same architecture gives the fp32 byte count
                    let rebuilt =
                        ttq_core::qnet::build_qnet(model.input_dims, model.layers.clone())
                            .map_err(CliError::from)?;
                    qnet_to_bytes(&rebuilt).len()
                } else {
                    file_len
                };
                println!(
                    "{}: detector, {} weight params, {} B on disk ({}; fp32 twin {} B, {:.3}x)",
                    path.display(),
                    params,
                    file_len,
                    if model.is_quantized() { "int8" } else { "fp32" },
                    fp_len,
                    fp_len as f64 / file_len as f64
                );
            }
            Some(FileKind::TtRnn) => {
                let stored = load_ttrnn(path)?;
                let cfg = stored.config().clone();
                let (m, h): (usize, usize) = (
                    cfg.input_modes.iter().product(),
                    cfg.hidden_modes.iter().product(),
                );
                let (ih_per_gate, total, file_len) = match &stored {
                    TtRnnFile::F64(model) => (
                        model.w_ih[0].param_count(),
                        model.total_param_count(),
                        ttrnn_to_bytes(&stored).len(),
                    ),
                    TtRnnFile::F32(model) => (
                        model.w_ih[0].param_count(),
                        model.total_param_count(),
                        ttrnn_to_bytes(&stored).len(),
                    ),
                };
                let dense_ih = dense_matvec_multiplies(m, h);
                let ratio = (dense_ih as f64 / ih_per_gate as f64).round() as u64;
                println!(
                    "{}: classifier, input-to-hidden {} params per gate (formula: sum of m*n*r*r core sizes; \
                     biases and head excluded), dense {}x{} = {}, {}x reduction (formula-based); \
                     {} trainable total, {} B on disk",
                    path.display(),
                    ih_per_gate,
                    m,
                    h,
                    dense_ih,
                    ratio,
                    total,
                    file_len
                );
            }
            _ => {
                return Err(CliError::new(
                    "BAD_MAGIC",
                    anyhow::anyhow!("{} is not a TTQ1 model file", path.display()),
                ));
            }
        }
    }
    Ok(())
}
