//! Tensor-train representation of matrices.
//!
//! A matrix of size `(m_1*...*m_d) x (n_1*...*n_d)` is stored as a chain of
//! 4-way cores `G_k` of shape `(m_k, n_k, r_{k-1}, r_k)` with boundary ranks
//! `r_0 = r_d = 1`. Entry `(row, col)` is the product of the `r_{k-1} x r_k`
//! slices picked by the per-mode index pair `(i_k, j_k)` — the double-index
//! pairing `h_k = i_k * n_k + j_k`.
//!
//! Matrix-vector products contract the cores left to right against the input
//! tensor and never materialize the dense matrix.

use thiserror::Error;

use crate::tensor::{multi_to_flat, DenseTensor, Real, Shape};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TtError {
    #[error("MODE_MISMATCH: {0}")]
    ModeMismatch(String),
    #[error("RANK_CHAIN: {0}")]
    RankChain(String),
    #[error("SHAPE: {0}")]
    Shape(String),
    #[error("OUT_OF_RANGE: {0}")]
    OutOfRange(String),
}

impl TtError {
    pub fn code(&self) -> &'static str {
        match self {
            TtError::ModeMismatch(_) => "MODE_MISMATCH",
            TtError::RankChain(_) => "RANK_CHAIN",
            TtError::Shape(_) => "SHAPE",
            TtError::OutOfRange(_) => "OUT_OF_RANGE",
        }
    }
}

fn validate_rank_chain(dims: &[(usize, usize)]) -> Result<(), TtError> {
    let d = dims.len();
    if d == 0 {
        return Err(TtError::Shape("core list is empty".into()));
    }
    if dims[0].0 != 1 || dims[d - 1].1 != 1 {
        return Err(TtError::RankChain(format!(
            "boundary ranks must be 1, got r_0 = {} and r_d = {}",
            dims[0].0,
            dims[d - 1].1
        )));
    }
    for k in 0..d - 1 {
        if dims[k].1 != dims[k + 1].0 {
            return Err(TtError::RankChain(format!(
                "core {} has trailing rank {} but core {} has leading rank {}",
                k,
                dims[k].1,
                k + 1,
                dims[k + 1].0
            )));
        }
    }
    Ok(())
}

/// Tensor-train decomposition of a d-way tensor: 3-way cores
/// `(l_k, r_{k-1}, r_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TTCores<T: Real = f64> {
    cores: Vec<DenseTensor<T>>,
}

impl<T: Real> TTCores<T> {
    pub fn new(cores: Vec<DenseTensor<T>>) -> Result<Self, TtError> {
        for c in &cores {
            if c.shape().ndim() != 3 {
                return Err(TtError::Shape(format!(
                    "vector-TT cores must be 3-way, got {}",
                    c.shape()
                )));
            }
        }
        let rank_dims: Vec<(usize, usize)> = cores
            .iter()
            .map(|c| (c.shape().dims()[1], c.shape().dims()[2]))
            .collect();
        validate_rank_chain(&rank_dims)?;
        Ok(TTCores { cores })
    }

    pub fn cores(&self) -> &[DenseTensor<T>] {
        &self.cores
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape().dims()[0]).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.shape().dims()[1]).collect();
        r.push(1);
        r
    }

    /// Element at a multi-index: the product of the matrix slices
    /// `G_1(h_1) * ... * G_d(h_d)`.
    pub fn element(&self, idx: &[usize]) -> Result<T, TtError> {
        if idx.len() != self.cores.len() {
            return Err(TtError::OutOfRange(format!(
                "index has {} modes, tensor has {}",
                idx.len(),
                self.cores.len()
            )));
        }
        let mut acc: Vec<T> = vec![T::one()];
        for (k, core) in self.cores.iter().enumerate() {
            let dims = core.shape().dims();
            let (l, r_prev, r_next) = (dims[0], dims[1], dims[2]);
            let h = idx[k];
            if h >= l {
                return Err(TtError::OutOfRange(format!(
                    "index {h} out of range for mode {k} of size {l}"
                )));
            }
            let slab = &core.as_slice()[h * r_prev * r_next..(h + 1) * r_prev * r_next];
            let mut next = vec![T::zero(); r_next];
            for (a, &acc_a) in acc.iter().enumerate() {
                for (b, n) in next.iter_mut().enumerate() {
                    *n += acc_a * slab[a * r_next + b];
                }
            }
            acc = next;
        }
        Ok(acc[0])
    }

    /// Full dense tensor; oracle-sized inputs only.
    pub fn reconstruct(&self) -> DenseTensor<T> {
        let shape = Shape::new(self.mode_sizes()).expect("valid modes");
        let mut out = DenseTensor::zeros(shape.clone());
        let mut idx = vec![0usize; shape.ndim()];
        for flat in 0..shape.count() {
            out.as_mut_slice()[flat] = self.element(&idx).expect("index in range");
            // odometer increment, last mode fastest
            for k in (0..idx.len()).rev() {
                idx[k] += 1;
                if idx[k] < shape.dims()[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        out
    }
}

/// Tensor-train matrix: 4-way cores `(m_k, n_k, r_{k-1}, r_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TTMatrix<T: Real = f64> {
    cores: Vec<DenseTensor<T>>,
}

impl<T: Real> TTMatrix<T> {
    pub fn new(cores: Vec<DenseTensor<T>>) -> Result<Self, TtError> {
        for c in &cores {
            if c.shape().ndim() != 4 {
                return Err(TtError::Shape(format!(
                    "TT-matrix cores must be 4-way, got {}",
                    c.shape()
                )));
            }
        }
        let rank_dims: Vec<(usize, usize)> = cores
            .iter()
            .map(|c| (c.shape().dims()[2], c.shape().dims()[3]))
            .collect();
        validate_rank_chain(&rank_dims)?;
        Ok(TTMatrix { cores })
    }

    /// All-zero TT matrix with the given rank chain.
    pub fn zeros(row_modes: &[usize], col_modes: &[usize], ranks: &[usize]) -> Result<Self, TtError> {
        let d = check_mode_lists(row_modes, col_modes, Some(ranks))?;
        let cores = (0..d)
            .map(|k| {
                DenseTensor::zeros(
                    Shape::new(vec![row_modes[k], col_modes[k], ranks[k], ranks[k + 1]])
                        .expect("positive dims"),
                )
            })
            .collect();
        TTMatrix::new(cores)
    }

    /// Identity matrix as a rank-1 TT (each core slice is a Kronecker delta).
    pub fn identity(modes: &[usize]) -> Result<Self, TtError> {
        let cores = modes
            .iter()
            .map(|&m| {
                let mut c = DenseTensor::zeros(Shape::new(vec![m, m, 1, 1]).expect("positive"));
                for i in 0..m {
                    c.as_mut_slice()[i * m + i] = T::one();
                }
                c
            })
            .collect();
        TTMatrix::new(cores)
    }

    pub fn cores(&self) -> &[DenseTensor<T>] {
        &self.cores
    }

    pub fn cores_mut(&mut self) -> &mut [DenseTensor<T>] {
        &mut self.cores
    }

    pub fn ndim(&self) -> usize {
        self.cores.len()
    }

    pub fn row_modes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape().dims()[0]).collect()
    }

    pub fn col_modes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape().dims()[1]).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.shape().dims()[2]).collect();
        r.push(1);
        r
    }

    pub fn rows(&self) -> usize {
        self.row_modes().iter().product()
    }

    pub fn cols(&self) -> usize {
        self.col_modes().iter().product()
    }

    pub fn param_count(&self) -> u64 {
        self.cores.iter().map(|c| c.len() as u64).sum()
    }

    /// Entry at paired multi-indices: product of the slices `G_k(i_k, j_k)`.
    pub fn element(&self, row_idx: &[usize], col_idx: &[usize]) -> Result<T, TtError> {
        let d = self.cores.len();
        if row_idx.len() != d || col_idx.len() != d {
            return Err(TtError::OutOfRange(format!(
                "index has {}/{} modes, matrix has {}",
                row_idx.len(),
                col_idx.len(),
                d
            )));
        }
        let mut acc: Vec<T> = vec![T::one()];
        for (k, core) in self.cores.iter().enumerate() {
            let dims = core.shape().dims();
            let (m, n, r_prev, r_next) = (dims[0], dims[1], dims[2], dims[3]);
            let (i, j) = (row_idx[k], col_idx[k]);
            if i >= m || j >= n {
                return Err(TtError::OutOfRange(format!(
                    "index pair ({i},{j}) out of range for mode {k} of size ({m},{n})"
                )));
            }
            let slab = &core.as_slice()[(i * n + j) * r_prev * r_next..][..r_prev * r_next];
            let mut next = vec![T::zero(); r_next];
            for (a, &acc_a) in acc.iter().enumerate() {
                for (b, nx) in next.iter_mut().enumerate() {
                    *nx += acc_a * slab[a * r_next + b];
                }
            }
            acc = next;
        }
        Ok(acc[0])
    }

    /// Entry by flat row/column index (row-major over the mode lists).
    pub fn entry(&self, row: usize, col: usize) -> Result<T, TtError> {
        let rs = Shape::new(self.row_modes()).expect("valid modes");
        let cs = Shape::new(self.col_modes()).expect("valid modes");
        let ri = crate::tensor::flat_to_multi(row, &rs)
            .map_err(|e| TtError::OutOfRange(e.to_string()))?;
        let ci = crate::tensor::flat_to_multi(col, &cs)
            .map_err(|e| TtError::OutOfRange(e.to_string()))?;
        self.element(&ri, &ci)
    }

    /// Dense `[rows, cols]` matrix. Oracle path; cost grows with rows*cols.
    pub fn reconstruct(&self) -> DenseTensor<T> {
        let (rows, cols) = (self.rows(), self.cols());
        let rs = Shape::new(self.row_modes()).expect("valid modes");
        let cs = Shape::new(self.col_modes()).expect("valid modes");
        let mut out = DenseTensor::zeros(Shape::new(vec![rows, cols]).expect("positive"));
        for row in 0..rows {
            let ri = crate::tensor::flat_to_multi(row, &rs).expect("in range");
            for col in 0..cols {
                let ci = crate::tensor::flat_to_multi(col, &cs).expect("in range");
                out.as_mut_slice()[row * cols + col] = self.element(&ri, &ci).expect("in range");
            }
        }
        out
    }

    /// `y = W x + b` by sequential core contraction.
    ///
    /// `x` must carry the row-mode shape `(m_1, ..., m_d)`; `bias`, when
    /// present, and the output carry the column-mode shape `(n_1, ..., n_d)`.
    /// Peak intermediate size is `max_k prod_{t<=k} n_t * r_k * prod_{t>k} m_t`,
    /// far below `rows*cols` for any useful rank chain.
    pub fn matvec(
        &self,
        x: &DenseTensor<T>,
        bias: Option<&DenseTensor<T>>,
    ) -> Result<DenseTensor<T>, TtError> {
        if x.shape().dims() != self.row_modes().as_slice() {
            return Err(TtError::Shape(format!(
                "input shape {} does not match row modes {:?}",
                x.shape(),
                self.row_modes()
            )));
        }
        if let Some(b) = bias {
            if b.shape().dims() != self.col_modes().as_slice() {
                return Err(TtError::Shape(format!(
                    "bias shape {} does not match column modes {:?}",
                    b.shape(),
                    self.col_modes()
                )));
            }
        }
        let mut y = contract::forward(self, x.as_slice(), None).0;
        if let Some(b) = bias {
            for (yi, &bi) in y.iter_mut().zip(b.as_slice()) {
                *yi += bi;
            }
        }
        DenseTensor::from_vec(Shape::new(self.col_modes()).expect("valid modes"), y)
            .map_err(|e| TtError::Shape(e.to_string()))
    }
}

fn check_mode_lists(
    row_modes: &[usize],
    col_modes: &[usize],
    ranks: Option<&[usize]>,
) -> Result<usize, TtError> {
    let d = row_modes.len();
    if d == 0 || col_modes.len() != d {
        return Err(TtError::ModeMismatch(format!(
            "row modes {row_modes:?} and column modes {col_modes:?} must have equal nonzero length"
        )));
    }
    if row_modes.iter().chain(col_modes).any(|&m| m == 0) {
        return Err(TtError::ModeMismatch("mode sizes must be >= 1".into()));
    }
    if let Some(r) = ranks {
        if r.len() != d + 1 {
            return Err(TtError::RankChain(format!(
                "expected {} ranks for {} modes, got {}",
                d + 1,
                d,
                r.len()
            )));
        }
        if r[0] != 1 || r[d] != 1 {
            return Err(TtError::RankChain("boundary ranks must be 1".into()));
        }
        if r.contains(&0) {
            return Err(TtError::RankChain("ranks must be >= 1".into()));
        }
    }
    Ok(d)
}

/// `sum_k m_k * n_k * r_{k-1} * r_k`: stored parameters of a TT matrix.
pub fn tt_param_count(
    row_modes: &[usize],
    col_modes: &[usize],
    ranks: &[usize],
) -> Result<u64, TtError> {
    let d = check_mode_lists(row_modes, col_modes, Some(ranks))?;
    Ok((0..d)
        .map(|k| (row_modes[k] * col_modes[k] * ranks[k] * ranks[k + 1]) as u64)
        .sum())
}

/// Multiplies in one full pass over the core slices: each distinct
/// `(i_k, j_k)` slice is pushed through its `r_{k-1} x r_k` rank matrix once.
/// This is the `O(d * r^2 * max_k(m_k n_k))` count and coincides with
/// [`tt_param_count`]; the executed multiply count of a whole matrix-vector
/// product is [`tt_matvec_multiplies`].
pub fn tt_flops(row_modes: &[usize], col_modes: &[usize], ranks: &[usize]) -> Result<u64, TtError> {
    tt_param_count(row_modes, col_modes, ranks)
}

/// Scalar multiplies executed by [`TTMatrix::matvec`]'s left-to-right
/// contraction (excluding the bias add).
pub fn tt_matvec_multiplies(
    row_modes: &[usize],
    col_modes: &[usize],
    ranks: &[usize],
) -> Result<u64, TtError> {
    let d = check_mode_lists(row_modes, col_modes, Some(ranks))?;
    let mut total = 0u64;
    let mut q_prev = 1u64; // prod_{t<k} n_t
    for k in 0..d {
        let p_next: u64 = row_modes[k + 1..].iter().map(|&m| m as u64).product();
        total += p_next
            * q_prev
            * (row_modes[k] * col_modes[k] * ranks[k] * ranks[k + 1]) as u64;
        q_prev *= col_modes[k] as u64;
    }
    Ok(total)
}

/// Multiplies of the plain dense matrix-vector product.
pub fn dense_matvec_multiplies(rows: usize, cols: usize) -> u64 {
    rows as u64 * cols as u64
}

/// Left-to-right contraction kernels shared by [`TTMatrix::matvec`] and the
/// recurrent-network backward pass.
pub(crate) mod contract {
    use super::TTMatrix;
    use crate::tensor::Real;

    /// Intermediate contraction states. `stages[k]` has logical dims
    /// `(P_k, Q_k, r_k)` with `P_k = prod_{t>k} m_t`, `Q_k = prod_{t<=k} n_t`;
    /// `stages[0]` is the input itself.
    pub struct Trace<T> {
        pub stages: Vec<Vec<T>>,
    }

    /// Contracts `x` through the cores. When `keep_trace` is set, all
    /// intermediate stages are returned for the backward pass.
    pub fn forward<T: Real>(
        m: &TTMatrix<T>,
        x: &[T],
        keep_trace: Option<()>,
    ) -> (Vec<T>, Option<Trace<T>>) {
        let d = m.ndim();
        let row_modes = m.row_modes();
        let mut stages: Vec<Vec<T>> = Vec::with_capacity(if keep_trace.is_some() { d } else { 1 });
        let mut cur = x.to_vec();
        let mut q_prev = 1usize;
        for k in 0..d {
            let core = &m.cores()[k];
            let dims = core.shape().dims();
            let (mk, nk, r_prev, r_next) = (dims[0], dims[1], dims[2], dims[3]);
            let p_next: usize = row_modes[k + 1..].iter().product();
            let mut next = vec![T::zero(); p_next * q_prev * nk * r_next];
            let g = core.as_slice();
            for i in 0..mk {
                for j in 0..nk {
                    let slab = &g[(i * nk + j) * r_prev * r_next..][..r_prev * r_next];
                    for p in 0..p_next {
                        for q in 0..q_prev {
                            let src = &cur[((i * p_next + p) * q_prev + q) * r_prev..][..r_prev];
                            let dst =
                                &mut next[((p * q_prev + q) * nk + j) * r_next..][..r_next];
                            for (a, &s) in src.iter().enumerate() {
                                if s == T::zero() {
                                    continue;
                                }
                                let grow = &slab[a * r_next..][..r_next];
                                for (dv, &gv) in dst.iter_mut().zip(grow) {
                                    *dv += s * gv;
                                }
                            }
                        }
                    }
                }
            }
            if keep_trace.is_some() {
                stages.push(cur);
            }
            cur = next;
            q_prev *= nk;
        }
        let trace = keep_trace.map(|_| Trace { stages });
        (cur, trace)
    }

    /// Reverse-mode pass: gradient of a scalar loss w.r.t. the input and
    /// every core element, given `dL/dy`.
    pub fn backward<T: Real>(
        m: &TTMatrix<T>,
        trace: &Trace<T>,
        dy: &[T],
    ) -> (Vec<T>, Vec<Vec<T>>) {
        let d = m.ndim();
        let row_modes = m.row_modes();
        let col_modes = m.col_modes();
        let mut core_grads: Vec<Vec<T>> = m
            .cores()
            .iter()
            .map(|c| vec![T::zero(); c.len()])
            .collect();
        let mut d_cur = dy.to_vec();
        for k in (0..d).rev() {
            let core = &m.cores()[k];
            let dims = core.shape().dims();
            let (mk, nk, r_prev, r_next) = (dims[0], dims[1], dims[2], dims[3]);
            let p_next: usize = row_modes[k + 1..].iter().product();
            let q_prev: usize = col_modes[..k].iter().product();
            let prev = &trace.stages[k];
            let mut d_prev = vec![T::zero(); prev.len()];
            let g = core.as_slice();
            let dg = &mut core_grads[k];
            for i in 0..mk {
                for j in 0..nk {
                    let slab = &g[(i * nk + j) * r_prev * r_next..][..r_prev * r_next];
                    let dslab = &mut dg[(i * nk + j) * r_prev * r_next..][..r_prev * r_next];
                    for p in 0..p_next {
                        for q in 0..q_prev {
                            let src = &prev[((i * p_next + p) * q_prev + q) * r_prev..][..r_prev];
                            let dsrc =
                                &mut d_prev[((i * p_next + p) * q_prev + q) * r_prev..][..r_prev];
                            let dout = &d_cur[((p * q_prev + q) * nk + j) * r_next..][..r_next];
                            for a in 0..r_prev {
                                let grow = &slab[a * r_next..][..r_next];
                                let dgrow = &mut dslab[a * r_next..][..r_next];
                                let mut acc = T::zero();
                                let s = src[a];
                                for b in 0..r_next {
                                    acc += dout[b] * grow[b];
                                    dgrow[b] += s * dout[b];
                                }
                                dsrc[a] += acc;
                            }
                        }
                    }
                }
            }
            d_cur = d_prev;
        }
        (d_cur, core_grads)
    }
}

/// Rank truncation policy for [`tt_from_dense`]: keep singular values above
/// `tol * sigma_max` per sweep, optionally capped by per-bond `max_ranks`.
#[derive(Debug, Clone, Default)]
pub struct TtTruncation {
    pub max_ranks: Option<Vec<usize>>,
    pub tol: f64,
}

impl TtTruncation {
    pub fn exact() -> Self {
        TtTruncation::default()
    }

    pub fn with_max_ranks(ranks: Vec<usize>) -> Self {
        TtTruncation {
            max_ranks: Some(ranks),
            tol: 0.0,
        }
    }
}

/// Ranks chosen by the sweep and the Frobenius norm of what truncation
/// discarded (square root of the summed discarded singular-value energy).
#[derive(Debug, Clone)]
pub struct DecompReport {
    pub ranks: Vec<usize>,
    pub truncation_error: f64,
}

/// Builds a TT matrix from a dense `[M, N]` matrix by sequential SVD sweeps
/// over the double-index pairing. With `tol = 0` and no rank caps the result
/// reconstructs the input to numerical precision.
///
/// Trained models never pass through here — their cores are optimized
/// directly; this is the constructive route used by oracles and the CLI.
pub fn tt_from_dense(
    matrix: &DenseTensor<f64>,
    row_modes: &[usize],
    col_modes: &[usize],
    trunc: &TtTruncation,
) -> Result<(TTMatrix<f64>, DecompReport), TtError> {
    let d = check_mode_lists(row_modes, col_modes, None)?;
    let dims = matrix.shape().dims();
    if dims.len() != 2 {
        return Err(TtError::Shape(format!(
            "expected a 2-way matrix, got {}",
            matrix.shape()
        )));
    }
    let (rows, cols) = (dims[0], dims[1]);
    let m_prod: usize = row_modes.iter().product();
    let n_prod: usize = col_modes.iter().product();
    if m_prod != rows || n_prod != cols {
        return Err(TtError::ModeMismatch(format!(
            "mode products {m_prod}x{n_prod} do not match matrix {rows}x{cols}"
        )));
    }
    if let Some(caps) = &trunc.max_ranks {
        if caps.len() != d - 1 {
            return Err(TtError::RankChain(format!(
                "expected {} interior rank caps, got {}",
                d - 1,
                caps.len()
            )));
        }
    }

    // permute W into the paired tensor C(h_1, ..., h_d), h_k = i_k*n_k + j_k
    let l_modes: Vec<usize> = (0..d).map(|k| row_modes[k] * col_modes[k]).collect();
    let total = rows * cols;
    let mut c = vec![0.0f64; total];
    let w = matrix.as_slice();
    let row_shape = Shape::new(row_modes.to_vec()).expect("positive modes");
    let col_shape = Shape::new(col_modes.to_vec()).expect("positive modes");
    {
        let mut h = vec![0usize; d];
        let mut i_idx = vec![0usize; d];
        let mut j_idx = vec![0usize; d];
        for (flat, slot) in c.iter_mut().enumerate() {
            for k in 0..d {
                i_idx[k] = h[k] / col_modes[k];
                j_idx[k] = h[k] % col_modes[k];
            }
            let row = multi_to_flat(&i_idx, &row_shape).expect("in range");
            let col = multi_to_flat(&j_idx, &col_shape).expect("in range");
            *slot = w[row * cols + col];
            for k in (0..d).rev() {
                h[k] += 1;
                if h[k] < l_modes[k] {
                    break;
                }
                h[k] = 0;
            }
            let _ = flat;
        }
    }

    let mut cores: Vec<DenseTensor<f64>> = Vec::with_capacity(d);
    let mut ranks = vec![1usize; d + 1];
    let mut discarded_energy = 0.0f64;
    let mut r_prev = 1usize;
    let mut cur = c;

    for k in 0..d - 1 {
        let lk = l_modes[k];
        let mat_rows = r_prev * lk;
        let mat_cols = cur.len() / mat_rows;
        let a = nalgebra::DMatrix::<f64>::from_row_slice(mat_rows, mat_cols, &cur);
        let svd = a.svd(true, true);
        let u = svd.u.as_ref().expect("u requested");
        let vt = svd.v_t.as_ref().expect("v_t requested");
        let sing = &svd.singular_values;

        let sigma_max = sing.iter().cloned().fold(0.0f64, f64::max);
        let cap = trunc
            .max_ranks
            .as_ref()
            .map(|c| c[k])
            .unwrap_or(usize::MAX)
            .max(1);
        // numerical-rank floor: singular values at roundoff scale are zeros
        let floor = f64::EPSILON * mat_rows.max(mat_cols) as f64;
        let threshold = trunc.tol.max(floor) * sigma_max;
        let mut keep = 0usize;
        for (i, &s) in sing.iter().enumerate() {
            if i < cap && s > threshold {
                keep = i + 1;
            } else {
                break;
            }
        }
        keep = keep.max(1);
        for &s in sing.iter().skip(keep) {
            discarded_energy += s * s;
        }

        // core k: (m_k, n_k, r_prev, keep) from U[:, :keep] with row a*l_k + h
        let mut core = DenseTensor::<f64>::zeros(
            Shape::new(vec![row_modes[k], col_modes[k], r_prev, keep]).expect("positive"),
        );
        {
            let cd = core.as_mut_slice();
            for h in 0..lk {
                for a_r in 0..r_prev {
                    for b in 0..keep {
                        cd[(h * r_prev + a_r) * keep + b] = u[(a_r * lk + h, b)];
                    }
                }
            }
        }
        cores.push(core);
        ranks[k + 1] = keep;

        // next chain state: diag(sigma[..keep]) * V^T[..keep, :]
        let mut next = vec![0.0f64; keep * mat_cols];
        for b in 0..keep {
            let s = sing[b];
            for col in 0..mat_cols {
                next[b * mat_cols + col] = s * vt[(b, col)];
            }
        }
        cur = next;
        r_prev = keep;
    }

    // last core: (m_d, n_d, r_prev, 1), value (h, a) = cur[a * l_d + h]
    let ld = l_modes[d - 1];
    debug_assert_eq!(cur.len(), r_prev * ld);
    let mut last = DenseTensor::<f64>::zeros(
        Shape::new(vec![row_modes[d - 1], col_modes[d - 1], r_prev, 1]).expect("positive"),
    );
    {
        let cd = last.as_mut_slice();
        for h in 0..ld {
            for a_r in 0..r_prev {
                cd[h * r_prev + a_r] = cur[a_r * ld + h];
            }
        }
    }
    cores.push(last);

    let tt = TTMatrix::new(cores)?;
    Ok((
        tt,
        DecompReport {
            ranks,
            truncation_error: discarded_energy.sqrt(),
        },
    ))
}
