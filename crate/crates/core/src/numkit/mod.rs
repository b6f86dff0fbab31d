//! Dense vectors, row-major matrices and the handful of numeric kernels the
//! rest of the crate is built on. All reals are `f64`.

mod rng;

pub use rng::{SeededRng, Stream};

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use crate::{Error, Result};

/// A fixed-dimension real vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        FeatureVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        FeatureVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for FeatureVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(v: Vec<f64>) -> Self {
        FeatureVector(v)
    }
}

impl From<&[f64]> for FeatureVector {
    fn from(v: &[f64]) -> Self {
        FeatureVector(v.to_vec())
    }
}

/// Row-major stack of `rows` vectors of dimension `cols`.
///
/// Also used for plain real matrices (similarity tables, gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                what: "matrix data",
                expected: (rows, cols),
                found: (data.len() / cols.max(1), cols),
            });
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. An empty iterator yields a
    /// `0 x cols` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(cols: usize, rows: impl IntoIterator<Item = R>) -> Result<Self> {
        let mut data = Vec::new();
        let mut n = 0;
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
            n += 1;
        }
        Ok(FeatureMatrix {
            rows: n,
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact on a zero-width matrix would panic
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// New matrix holding the given rows in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> FeatureMatrix {
        let mut out = FeatureMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

#[inline]
fn check_norm(n: f64, row: Option<usize>) -> Result<f64> {
    if n > 0.0 && n.is_finite() {
        Ok(n)
    } else {
        Err(Error::ZeroNorm { row })
    }
}

/// `a·b / (‖a‖‖b‖)`.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let na = check_norm(norm(a), None)?;
    let nb = check_norm(norm(b), None)?;
    Ok(dot(a, b) / (na * nb))
}

pub fn l2_normalize(a: &[f64]) -> Result<FeatureVector> {
    let n = check_norm(norm(a), None)?;
    Ok(FeatureVector(a.iter().map(|v| v / n).collect()))
}

/// Row norms, failing on the first zero-norm row.
pub fn row_norms(m: &FeatureMatrix) -> Result<Vec<f64>> {
    m.iter_rows()
        .enumerate()
        .map(|(i, r)| check_norm(norm(r), Some(i)))
        .collect()
}

/// Copy of `m` with every row scaled to unit length.
pub fn normalize_rows(m: &FeatureMatrix) -> Result<FeatureMatrix> {
    let norms = row_norms(m)?;
    let mut out = m.clone();
    for (i, n) in norms.iter().enumerate() {
        out.row_mut(i).iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

/// Cosine similarity between every row of `a` and every row of `b`.
///
/// Entry `(i, j)` is computed with exactly the arithmetic of [`cosine_sim`],
/// so the two agree bit for bit and `pairwise_sim(b, a)` is exactly the
/// transpose of `pairwise_sim(a, b)`.
pub fn pairwise_sim(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<FeatureMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            expected: a.cols(),
            found: b.cols(),
        });
    }
    let na = row_norms(a)?;
    let nb = row_norms(b).map_err(|e| match e {
        // report B's rows after A's so the index is unambiguous
        Error::ZeroNorm { row: Some(r) } => Error::ZeroNorm {
            row: Some(a.rows() + r),
        },
        other => other,
    })?;
    let mut out = FeatureMatrix::zeros(a.rows(), b.rows());
    for (i, ra) in a.iter_rows().enumerate() {
        for (j, rb) in b.iter_rows().enumerate() {
            out.set(i, j, dot(ra, rb) / (na[i] * nb[j]));
        }
    }
    Ok(out)
}

/// Nearest-rank percentile: the element at 1-based rank `ceil(rate·n)` of the
/// ascending sort. Never interpolates.
pub fn percentile_nearest_rank(xs: &[f64], rate: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Empty("percentile input"));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::OutOfRange {
            what: "percentile rate",
            value: rate,
        });
    }
    let rank = nearest_rank(rate, xs.len());
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[rank - 1])
}

/// `ceil(rate·n)` clamped to `[1, n]`, snapping products that are integers up
/// to rounding error (0.3·10 is 3.0000000000000004 in binary).
pub fn nearest_rank(rate: f64, n: usize) -> usize {
    let x = rate * n as f64;
    let r = libm::round(x);
    let rank = if libm::fabs(x - r) < 1e-9 {
        r
    } else {
        libm::ceil(x)
    };
    (rank as usize).clamp(1, n)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}
