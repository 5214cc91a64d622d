//! Dense tensors, shape algebra, and the flat/multi index bijections used by
//! the double-index reshapes in the tensor-train code.
//!
//! Layout is row-major everywhere (last index fastest); indices are 0-based.

use std::fmt;

use num_traits::{Float, NumAssign};
use thiserror::Error;

/// Scalar type for tensor payloads. Implemented for `f32` and `f64`.
pub trait Real:
    Float + NumAssign + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("COUNT_MISMATCH: data length {actual} does not match shape element count {expected}")]
    CountMismatch { expected: usize, actual: usize },
    #[error("OUT_OF_RANGE: index {index:?} is outside shape {dims:?}")]
    OutOfRange { index: Vec<usize>, dims: Vec<usize> },
    #[error("OUT_OF_RANGE: flat index {index} is outside element count {count}")]
    FlatOutOfRange { index: usize, count: usize },
    #[error("SHAPE: dimensions must all be >= 1, got {0:?}")]
    ZeroDim(Vec<usize>),
    #[error("SHAPE: element count of {0:?} overflows the platform integer")]
    CountOverflow(Vec<usize>),
    #[error("SHAPE: rank mismatch, index has {index_len} entries but shape has {ndim}")]
    RankMismatch { index_len: usize, ndim: usize },
}

impl TensorError {
    /// Stable error code for diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            TensorError::CountMismatch { .. } => "COUNT_MISMATCH",
            TensorError::OutOfRange { .. } | TensorError::FlatOutOfRange { .. } => "OUT_OF_RANGE",
            TensorError::ZeroDim(_) | TensorError::CountOverflow(_) | TensorError::RankMismatch { .. } => {
                "SHAPE"
            }
        }
    }
}

/// Mode sizes of a dense tensor. All dimensions are >= 1 and the element
/// count is checked against platform-integer overflow at construction.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self, TensorError> {
        let dims = dims.into();
        if dims.is_empty() || dims.contains(&0) {
            return Err(TensorError::ZeroDim(dims));
        }
        let mut count: usize = 1;
        for &d in &dims {
            count = count
                .checked_mul(d)
                .ok_or_else(|| TensorError::CountOverflow(dims.clone()))?;
        }
        Ok(Shape { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Total number of elements (product of dims).
    pub fn count(&self) -> usize {
        self.dims.iter().product()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for d in &self.dims {
            if !first {
                write!(f, "x")?;
            }
            write!(f, "{d}")?;
            first = false;
        }
        Ok(())
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Row-major flat index of a multi-index: `idx[0]` varies slowest.
pub fn multi_to_flat(idx: &[usize], shape: &Shape) -> Result<usize, TensorError> {
    if idx.len() != shape.ndim() {
        return Err(TensorError::RankMismatch {
            index_len: idx.len(),
            ndim: shape.ndim(),
        });
    }
    let mut flat = 0usize;
    for (&i, &d) in idx.iter().zip(shape.dims()) {
        if i >= d {
            return Err(TensorError::OutOfRange {
                index: idx.to_vec(),
                dims: shape.dims().to_vec(),
            });
        }
        flat = flat * d + i;
    }
    Ok(flat)
}

/// Inverse of [`multi_to_flat`].
pub fn flat_to_multi(flat: usize, shape: &Shape) -> Result<Vec<usize>, TensorError> {
    if flat >= shape.count() {
        return Err(TensorError::FlatOutOfRange {
            index: flat,
            count: shape.count(),
        });
    }
    let mut idx = vec![0usize; shape.ndim()];
    let mut rem = flat;
    for (k, &d) in shape.dims().iter().enumerate().rev() {
        idx[k] = rem % d;
        rem /= d;
    }
    Ok(idx)
}

/// Pairs a row index `i < m` with a column index `j < n` into a single mode
/// index `i*n + j`, a bijection onto `[0, m*n)`.
pub fn pair_index(i: usize, j: usize, m: usize, n: usize) -> Result<usize, TensorError> {
    if i >= m || j >= n {
        return Err(TensorError::OutOfRange {
            index: vec![i, j],
            dims: vec![m, n],
        });
    }
    Ok(i * n + j)
}

/// Dense d-dimensional array, row-major, contiguous.
#[derive(Clone, PartialEq)]
pub struct DenseTensor<T: Real = f64> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> DenseTensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        let n = shape.count();
        DenseTensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self, TensorError> {
        if data.len() != shape.count() {
            return Err(TensorError::CountMismatch {
                expected: shape.count(),
                actual: data.len(),
            });
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.count();
        DenseTensor {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, idx: &[usize]) -> Result<T, TensorError> {
        Ok(self.data[multi_to_flat(idx, &self.shape)?])
    }

    pub fn set(&mut self, idx: &[usize], v: T) -> Result<(), TensorError> {
        let flat = multi_to_flat(idx, &self.shape)?;
        self.data[flat] = v;
        Ok(())
    }

    /// Same buffer under a new shape; element counts must agree.
    pub fn reshape(&self, shape: Shape) -> Result<Self, TensorError> {
        self.clone().into_reshape(shape)
    }

    /// Consuming reshape; no copy.
    pub fn into_reshape(self, shape: Shape) -> Result<Self, TensorError> {
        if shape.count() != self.data.len() {
            return Err(TensorError::CountMismatch {
                expected: shape.count(),
                actual: self.data.len(),
            });
        }
        Ok(DenseTensor {
            shape,
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    /// Widen or narrow the scalar type. Narrowing rounds to nearest.
    pub fn cast<U: Real>(&self) -> DenseTensor<U> {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of_f64(v.as_f64())).collect(),
        }
    }
}

impl<T: Real> fmt::Debug for DenseTensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseTensor[{}]", self.shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shape(dims: &[usize]) -> Shape {
        Shape::new(dims.to_vec()).unwrap()
    }

    #[test]
    fn reshape_relabels_without_touching_values() {
        let t = DenseTensor::from_vec(shape(&[6]), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = t.reshape(shape(&[2, 3])).unwrap();
        assert_eq!(r.as_slice(), t.as_slice());
        assert_eq!(r.get(&[1, 2]).unwrap(), 6.0);
    }

    #[test]
    fn reshape_feature_tensor_counts_match() {
        // 19*19*425 == 17*19*19*25 == 153_425
        assert_eq!(19 * 19 * 425, 153_425);
        assert_eq!(17 * 19 * 19 * 25, 153_425);
        let t = DenseTensor::<f64>::zeros(shape(&[19, 19, 425]));
        let r = t.reshape(shape(&[17, 19, 19, 25])).unwrap();
        assert_eq!(r.len(), 153_425);

        // the 125-channel head factors the same way: 19*19*125 == 5*19*19*25
        assert_eq!(19 * 19 * 125, 45_125);
        assert_eq!(5 * 19 * 19 * 25, 45_125);
        let t = DenseTensor::<f64>::zeros(shape(&[19, 19, 125]));
        assert!(t.reshape(shape(&[5, 19, 19, 25])).is_ok());
    }

    #[test]
    fn reshape_count_mismatch_rejected() {
        let t = DenseTensor::<f64>::zeros(shape(&[4]));
        let err = t.reshape(shape(&[5])).unwrap_err();
        assert_eq!(err.code(), "COUNT_MISMATCH");
    }

    #[test]
    fn flat_multi_hand_cases() {
        let s = shape(&[2, 3]);
        assert_eq!(multi_to_flat(&[0, 0], &s).unwrap(), 0);
        assert_eq!(multi_to_flat(&[1, 2], &s).unwrap(), 5);
        assert_eq!(flat_to_multi(5, &s).unwrap(), vec![1, 2]);
        assert_eq!(flat_to_multi(6, &s).unwrap_err().code(), "OUT_OF_RANGE");
    }

    #[test]
    fn flat_multi_brute_force_enumeration() {
        // independent oracle: enumerate [2,3] in row-major order by hand
        let s = shape(&[2, 3]);
        let expected = [
            [0, 0], [0, 1], [0, 2], [1, 0], [1, 1], [1, 2],
        ];
        for (flat, idx) in expected.iter().enumerate() {
            assert_eq!(multi_to_flat(idx, &s).unwrap(), flat);
            assert_eq!(flat_to_multi(flat, &s).unwrap(), idx.to_vec());
        }
    }

    #[test]
    fn pair_index_hand_cases() {
        assert_eq!(pair_index(0, 0, 3, 4).unwrap(), 0);
        assert_eq!(pair_index(1, 1, 2, 2).unwrap(), 3);
        assert_eq!(pair_index(2, 0, 2, 2).unwrap_err().code(), "OUT_OF_RANGE");
        assert_eq!(pair_index(0, 2, 2, 2).unwrap_err().code(), "OUT_OF_RANGE");
    }

    #[test]
    fn pair_index_is_bijection() {
        for (m, n) in [(1, 1), (2, 3), (4, 4), (5, 2)] {
            let mut seen = vec![false; m * n];
            for i in 0..m {
                for j in 0..n {
                    let p = pair_index(i, j, m, n).unwrap();
                    assert!(!seen[p], "collision at ({i},{j})");
                    seen[p] = true;
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(Shape::new(vec![2, 0, 3]).is_err());
        assert!(Shape::new(Vec::<usize>::new()).is_err());
    }

    #[test]
    fn count_overflow_rejected() {
        let err = Shape::new(vec![usize::MAX, 2]).unwrap_err();
        assert_eq!(err.code(), "SHAPE");
    }

    proptest! {
        #[test]
        fn flat_multi_roundtrip(dims in proptest::collection::vec(1usize..12, 1..5)) {
            let s = Shape::new(dims).unwrap();
            prop_assume!(s.count() <= 10_000);
            for flat in 0..s.count() {
                let idx = flat_to_multi(flat, &s).unwrap();
                prop_assert_eq!(multi_to_flat(&idx, &s).unwrap(), flat);
            }
        }

        #[test]
        fn reshape_preserves_backing_data(
            dims in proptest::collection::vec(1usize..6, 1..4),
            seedval in any::<u32>(),
        ) {
            let s = Shape::new(dims).unwrap();
            let t = DenseTensor::from_fn(s.clone(), |i| (i as f64) + f64::from(seedval % 17));
            let flat = t.reshape(Shape::new(vec![s.count()]).unwrap()).unwrap();
            prop_assert_eq!(flat.as_slice(), t.as_slice());
        }
    }
}
