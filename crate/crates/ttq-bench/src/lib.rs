//! Shared fixtures for the criterion benchmarks in `benches/`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ttq_core::quant::{QuantizedActivations, QuantizedWeights};
use ttq_core::tensor::{DenseTensor, Shape};
use ttq_core::tt::TTMatrix;

pub fn random_tt_matrix(
    seed: u64,
    row_modes: &[usize],
    col_modes: &[usize],
    ranks: &[usize],
) -> TTMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tt = TTMatrix::<f64>::zeros(row_modes, col_modes, ranks).expect("valid config");
    for core in tt.cores_mut() {
        for v in core.as_mut_slice() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    tt
}

pub fn random_input(seed: u64, modes: &[usize]) -> DenseTensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseTensor::from_fn(Shape::new(modes.to_vec()).expect("positive"), |_| {
        rng.random_range(-1.0..1.0)
    })
}

pub fn random_dense(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_qconv_operands(
    seed: u64,
    size: usize,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
) -> (QuantizedActivations, QuantizedWeights) {
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
    (act, wt)
}
