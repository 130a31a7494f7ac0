//! Dense symmetric linear algebra at small scale: Cholesky factorization with
//! jitter escalation, triangular solves, log-determinants, and the
//! forward-mode derivative of the Cholesky factor.
//!
//! Everything here is a pure function of immutable inputs; callers on
//! concurrent workers need no coordination.

use crate::real::Real;
use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Mat {
            rows: r,
            cols: c,
            data: rows.iter().flat_map(|row| row.iter().copied()).collect(),
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.cols.max(1))
    }

    /// Frobenius norm.
    pub fn norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn scale(&mut self, s: T) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    pub fn add_scaled(&mut self, other: &Mat<T>, s: T) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (x, &y) in self.data.iter_mut().zip(&other.data) {
            *x += s * y;
        }
    }
}

impl<T: Real> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T: Real> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

/// Symmetric matrix, stored full for simple indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> SymMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "not square");
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        debug_assert!(m.is_symmetric_within(T::of(1e-12)));
        m
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &x| acc.max(x.abs()))
    }

    pub fn is_symmetric_within(&self, rel: T) -> bool {
        let scale = self.max_abs().max(T::one());
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if (self.get(i, j) - self.get(j, i)).abs() > rel * scale {
                    return false;
                }
            }
        }
        true
    }
}

/// Lower-triangular matrix; strictly upper entries are kept at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> LowerTriangular<T> {
    pub fn zeros(n: usize) -> Self {
        LowerTriangular {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        debug_assert!(j <= i, "upper entry of a lower-triangular matrix");
        self.data[i * self.n + j] = v;
    }

    /// Row `i` truncated to its structural support `0..=i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..i * self.n + i + 1]
    }

    pub fn diag(&self) -> impl Iterator<Item = T> + '_ {
        (0..self.n).map(|i| self.get(i, i))
    }

    /// `L * L^T` as a symmetric matrix.
    pub fn gram(&self) -> SymMatrix<T> {
        let mut a = SymMatrix::zeros(self.n);
        for i in 0..self.n {
            for j in 0..=i {
                let mut s = T::zero();
                for k in 0..=j {
                    s += self.get(i, k) * self.get(j, k);
                }
                a.set(i, j, s);
            }
        }
        a
    }
}

/// How a failed factorization escalates diagonal jitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JitterPolicy {
    /// Fail on the first non-positive pivot.
    Off,
    /// Retry with jitter `1e-10 * trace/n`, growing tenfold per retry up to
    /// `1e-2 * trace/n`.
    Escalate,
}

/// A successful factorization `L * L^T = A + jitter * I`.
#[derive(Debug, Clone)]
pub struct CholFactor<T> {
    pub lower: LowerTriangular<T>,
    pub jitter: T,
}

fn cholesky_attempt<T: Real>(a: &SymMatrix<T>, jitter: T) -> Option<LowerTriangular<T>> {
    let n = a.n();
    let mut l = LowerTriangular::zeros(n);
    for j in 0..n {
        for i in j..n {
            let mut s = a.get(i, j);
            if i == j {
                s += jitter;
            }
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if !(s > T::zero()) || !s.is_finite() {
                    return None;
                }
                l.set(j, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Some(l)
}

/// Cholesky factorization of a symmetric positive (semi-)definite matrix.
///
/// With [`JitterPolicy::Escalate`], a failed factorization retries with a
/// growing diagonal shift; the accepted shift is reported in the result so
/// callers can account for `L L^T = A + delta I`.
pub fn cholesky<T: Real>(a: &SymMatrix<T>, policy: JitterPolicy) -> Result<CholFactor<T>> {
    if let Some(lower) = cholesky_attempt(a, T::zero()) {
        return Ok(CholFactor {
            lower,
            jitter: T::zero(),
        });
    }
    let scale = (a.trace() / T::of(a.n().max(1) as f64)).abs();
    if policy == JitterPolicy::Off || scale == T::zero() {
        return Err(Error::NotPositiveDefinite { max_jitter: 0.0 });
    }
    let mut jitter = scale * T::of(1e-10);
    let cap = scale * T::of(1e-2);
    loop {
        if let Some(lower) = cholesky_attempt(a, jitter) {
            return Ok(CholFactor { lower, jitter });
        }
        if jitter >= cap {
            return Err(Error::NotPositiveDefinite {
                max_jitter: jitter.as_f64(),
            });
        }
        jitter = (jitter * T::of(10.0)).min(cap);
    }
}

/// Forward-mode derivative of the Cholesky factor: given `L` with
/// `L L^T = A` and a symmetric perturbation `dA`, returns the lower-triangular
/// `dL` satisfying `dL L^T + L dL^T = dA`.
///
/// Differentiates the factorization recurrence directly, so the identity
/// holds to rounding error.
pub fn cholesky_derivative<T: Real>(
    l: &LowerTriangular<T>,
    da: &SymMatrix<T>,
) -> Result<LowerTriangular<T>> {
    let n = l.n();
    if da.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "factor is {n}x{n}, perturbation is {}x{}",
            da.n(),
            da.n()
        )));
    }
    let mut dl = LowerTriangular::zeros(n);
    let half = T::of(0.5);
    for j in 0..n {
        for i in j..n {
            let mut ds = da.get(i, j);
            for k in 0..j {
                ds -= dl.get(i, k) * l.get(j, k) + l.get(i, k) * dl.get(j, k);
            }
            if i == j {
                dl.set(j, j, half * ds / l.get(j, j));
            } else {
                dl.set(i, j, (ds - l.get(i, j) * dl.get(j, j)) / l.get(j, j));
            }
        }
    }
    Ok(dl)
}

/// Which system a triangular solve targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Solve `L x = b` by forward substitution.
    Lower,
    /// Solve `L^T x = b` by back substitution.
    TransposedUpper,
}

pub fn solve_triangular<T: Real>(l: &LowerTriangular<T>, b: &[T], side: Side) -> Result<Vec<T>> {
    let n = l.n();
    if b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "factor is {n}x{n}, rhs has length {}",
            b.len()
        )));
    }
    for i in 0..n {
        if l.get(i, i) == T::zero() {
            return Err(Error::SingularFactor { index: i });
        }
    }
    let mut x = b.to_vec();
    match side {
        Side::Lower => {
            for i in 0..n {
                let mut s = x[i];
                for k in 0..i {
                    s -= l.get(i, k) * x[k];
                }
                x[i] = s / l.get(i, i);
            }
        }
        Side::TransposedUpper => {
            for i in (0..n).rev() {
                let mut s = x[i];
                for k in (i + 1)..n {
                    s -= l.get(k, i) * x[k];
                }
                x[i] = s / l.get(i, i);
            }
        }
    }
    Ok(x)
}

/// `log det(L L^T) = 2 sum_i log L_ii` for a valid factor.
pub fn logdet_from_factor<T: Real>(l: &LowerTriangular<T>) -> T {
    let two = T::of(2.0);
    two * l.diag().map(|d| d.ln()).sum::<T>()
}
