use ttq_core::bench::{compare_qconv_vs_float, compare_tt_vs_dense_matvec};

use super::parse_usize_list;
use crate::{Cli, CliError};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// What to measure.
    #[arg(long, value_parser = ["tt-matvec", "qconv2d"])]
    pub op: String,

    /// tt-matvec: row modes, e.g. "8,20,20,18".
    #[arg(long, default_value = "8,20,20,18")]
    pub row_modes: String,

    /// tt-matvec: column modes.
    #[arg(long, default_value = "4,4,4,4")]
    pub col_modes: String,

    /// tt-matvec: rank chain.
    #[arg(long, default_value = "1,4,4,4,1")]
    pub ranks: String,

    /// qconv2d: square input size.
    #[arg(long, default_value_t = 64)]
    pub size: usize,

    #[arg(long, default_value_t = 16)]
    pub in_ch: usize,

    #[arg(long, default_value_t = 16)]
    pub out_ch: usize,

    #[arg(long, default_value_t = 3)]
    pub kernel: usize,

    /// Timed repetitions (median reported).
    #[arg(long, default_value_t = 9)]
    pub reps: usize,
}

pub fn run(cli: &Cli, args: &Args) -> Result<(), CliError> {
    match args.op.as_str() {
        "tt-matvec" => {
            let row_modes = parse_usize_list(&args.row_modes)?;
            let col_modes = parse_usize_list(&args.col_modes)?;
            let ranks = parse_usize_list(&args.ranks)?;
            let cmp =
                compare_tt_vs_dense_matvec(&row_modes, &col_modes, &ranks, args.reps, cli.seed)?;
            println!(
                "tt-matvec {}x{} (modes {row_modes:?} x {col_modes:?}, ranks {ranks:?})",
                cmp.rows, cmp.cols
            );
            println!(
                "  tt:    {:>12.6} s median, {:>12} multiplies",
                cmp.tt.median_secs, cmp.tt_multiplies
            );
            println!(
                "  dense: {:>12.6} s median, {:>12} multiplies",
                cmp.dense.median_secs, cmp.dense_multiplies
            );
            println!("  speed-up: {:.2}x wall-clock, {:.2}x multiplies", cmp.speedup(),
                cmp.dense_multiplies as f64 / cmp.tt_multiplies as f64);
        }
        "qconv2d" => {
            let cmp = compare_qconv_vs_float(
                args.size, args.in_ch, args.out_ch, args.kernel, args.reps, cli.seed,
            )?;
            println!(
                "qconv2d {0}x{0}x{1} -> {2} channels, {3}x{3} kernel",
                args.size, args.in_ch, args.out_ch, args.kernel
            );
            println!("  int8:  {:>12.6} s median", cmp.quantized.median_secs);
            println!("  float: {:>12.6} s median", cmp.float.median_secs);
            println!(
                "  {} multiply-accumulates, speed-up {:.2}x",
                cmp.multiplies,
                cmp.speedup()
            );
        }
        _ => unreachable!("clap validates"),
    }
    Ok(())
}
