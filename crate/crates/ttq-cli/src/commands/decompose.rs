use std::path::PathBuf;

use ttq_core::io::save_ttmatrix;
use ttq_core::tensor::{DenseTensor, Shape};
use ttq_core::tt::{tt_from_dense, TtTruncation};

use super::parse_usize_list;
use crate::{sidecar, Cli, CliError};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Dense matrix as CSV: one row per line, comma-separated values.
    #[arg(long)]
    pub matrix: PathBuf,

    /// Row mode sizes, comma separated; product must equal the row count.
    #[arg(long)]
    pub row_modes: String,

    /// Column mode sizes, comma separated.
    #[arg(long)]
    pub col_modes: String,

    /// Interior rank caps (d-1 values). Unbounded when omitted.
    #[arg(long)]
    pub max_ranks: Option<String>,

    /// Relative singular-value cutoff per sweep.
    #[arg(long, default_value_t = 0.0)]
    pub tol: f64,

    #[arg(long)]
    pub out: PathBuf,
}

fn read_csv_matrix(path: &PathBuf) -> Result<DenseTensor<f64>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| {
            CliError::new(
                "CONFIG",
                anyhow::anyhow!("{}:{}: {e}", path.display(), lineno + 1),
            )
        })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(CliError::new(
                    "CONFIG",
                    anyhow::anyhow!("ragged CSV: line {} has {} values", lineno + 1, row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::new("CONFIG", anyhow::anyhow!("empty matrix file")));
    }
    let (m, n) = (rows.len(), rows[0].len());
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    let shape = Shape::new(vec![m, n]).map_err(|e| CliError::new("SHAPE", anyhow::anyhow!("{e}")))?;
    Ok(DenseTensor::from_vec(shape, data).expect("counted"))
}

pub fn run(cli: &Cli, args: &Args) -> Result<(), CliError> {
    let matrix = read_csv_matrix(&args.matrix)?;
    let row_modes = parse_usize_list(&args.row_modes)?;
    let col_modes = parse_usize_list(&args.col_modes)?;
    let trunc = TtTruncation {
        max_ranks: args.max_ranks.as_deref().map(parse_usize_list).transpose()?,
        tol: args.tol,
    };
    let (tt, report) = tt_from_dense(&matrix, &row_modes, &col_modes, &trunc)?;

    let dims = matrix.shape().dims();
    println!(
        "decomposed {}x{} over modes {row_modes:?} x {col_modes:?}",
        dims[0], dims[1]
    );
    println!("ranks: {:?}", report.ranks);
    println!("parameters: {} (dense {})", tt.param_count(), matrix.len());
    println!("truncation error (Frobenius): {:.3e}", report.truncation_error);

    save_ttmatrix(&args.out, &tt)?;
    sidecar::record_run(&args.out, "decompose", cli.seed, &cli.precision)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
