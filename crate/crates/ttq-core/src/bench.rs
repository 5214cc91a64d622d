//! Wall-clock and multiply-count comparisons between the compressed kernels
//! and their dense/float baselines. Used by the CLI's `bench` subcommand and
//! the acceptance suite; statistical benchmarking lives in the criterion
//! targets.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::quant::{conv2d_f64, qconv2d, QuantizedActivations, QuantizedWeights};
use crate::tensor::{DenseTensor, Shape};
use crate::tt::{dense_matvec_multiplies, tt_matvec_multiplies, TTMatrix, TtError};

#[derive(Debug, Clone, Copy)]
pub struct Timing {
    pub median_secs: f64,
    pub reps: usize,
}

/// Median wall time over `reps` runs after one warmup run.
pub fn time_median(reps: usize, mut f: impl FnMut()) -> Timing {
    let reps = reps.max(1);
    f();
    let mut samples: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    Timing {
        median_secs: samples[samples.len() / 2],
        reps,
    }
}

#[derive(Debug, Clone)]
pub struct MatvecComparison {
    pub rows: usize,
    pub cols: usize,
    pub tt: Timing,
    pub dense: Timing,
    pub tt_multiplies: u64,
    pub dense_multiplies: u64,
}

impl MatvecComparison {
    pub fn speedup(&self) -> f64 {
        self.dense.median_secs / self.tt.median_secs
    }
}

/// Times a TT matrix-vector product against a dense matrix-vector product of
/// the same dimensions (random data on both sides; timing is value-blind).
pub fn compare_tt_vs_dense_matvec(
    row_modes: &[usize],
    col_modes: &[usize],
    ranks: &[usize],
    reps: usize,
    seed: u64,
) -> Result<MatvecComparison, TtError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tt = TTMatrix::<f64>::zeros(row_modes, col_modes, ranks)?;
    for core in tt.cores_mut() {
        for v in core.as_mut_slice() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    let rows: usize = row_modes.iter().product();
    let cols: usize = col_modes.iter().product();
    let x = DenseTensor::<f64>::from_fn(Shape::new(row_modes.to_vec()).expect("positive"), |_| {
        rng.random_range(-1.0..1.0)
    });

    let tt_timing = time_median(reps, || {
        let y = tt.matvec(black_box(&x), None).expect("validated shapes");
        black_box(y);
    });

    let dense: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xv = x.as_slice().to_vec();
    let dense_timing = time_median(reps, || {
        let mut y = vec![0.0f64; cols];
        for (i, &xi) in xv.iter().enumerate() {
            let row = &dense[i * cols..(i + 1) * cols];
            for (yj, &wij) in y.iter_mut().zip(row) {
                *yj += wij * xi;
            }
        }
        black_box(y);
    });

    Ok(MatvecComparison {
        rows,
        cols,
        tt: tt_timing,
        dense: dense_timing,
        tt_multiplies: tt_matvec_multiplies(row_modes, col_modes, ranks)?,
        dense_multiplies: dense_matvec_multiplies(rows, cols),
    })
}

#[derive(Debug, Clone)]
pub struct QconvComparison {
    pub quantized: Timing,
    pub float: Timing,
    pub multiplies: u64,
}

impl QconvComparison {
    pub fn speedup(&self) -> f64 {
        self.float.median_secs / self.quantized.median_secs
    }
}

/// Times the integer convolution against the float convolution of the
/// dequantized operands.
pub fn compare_qconv_vs_float(
    size: usize,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    reps: usize,
    seed: u64,
) -> Result<QconvComparison, crate::quant::QuantError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let act = QuantizedActivations {
        numerators: (0..size * size * in_ch).map(|_| rng.random::<u8>()).collect(),
        shape: Shape::new(vec![size, size, in_ch]).expect("positive"),
    };
    let wt = QuantizedWeights {
        values: (0..kernel * kernel * in_ch * out_ch)
            .map(|_| rng.random_range(-127i8..=127))
            .collect(),
        xi: 1.0 / 128.0,
        pre_scale: 1.0,
        shape: Shape::new(vec![kernel, kernel, in_ch, out_ch]).expect("positive"),
    };
    // validate geometry once up front
    qconv2d(&act, &wt, 1, kernel / 2)?;

    let quantized = time_median(reps, || {
        let acc = qconv2d(black_box(&act), black_box(&wt), 1, kernel / 2).expect("validated");
        black_box(acc);
    });
    let act_f = act.dequantize();
    let wt_f = wt.dequantize();
    let float = time_median(reps, || {
        let out = conv2d_f64(black_box(&act_f), black_box(&wt_f), 1, kernel / 2).expect("validated");
        black_box(out);
    });
    let out_size = size; // stride 1, same padding for odd kernels
    Ok(QconvComparison {
        quantized,
        float,
        multiplies: (out_size * out_size * out_ch * kernel * kernel * in_ch) as u64,
    })
}
