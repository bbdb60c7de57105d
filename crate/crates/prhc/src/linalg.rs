//! Sparse storage, a banded LU for the finite element systems, and a few dense helpers.

use nalgebra::{DMatrix, DVector};

use crate::Error;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed and
    /// explicit zeros are kept so that matrices assembled on one mesh share a pattern.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds");
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut next = counts.clone();
        for &(i, j, v) in triplets {
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..nrows {
            row.clear();
            row.extend((counts[i]..counts[i + 1]).map(|k| (cols[k], vals[k])));
            row.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let (j, mut v) = row[k];
                k += 1;
                while k < row.len() && row[k].0 == j {
                    v += row[k].1;
                    k += 1;
                }
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self { nrows, ncols, indptr, indices, values }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates over stored entries as `(row, col, value)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            (self.indptr[i]..self.indptr[i + 1]).map(move |k| (i, self.indices[k], self.values[k]))
        })
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols);
        DVector::from_fn(self.nrows, |i, _| {
            let mut s = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.values[k] * x[self.indices[k]];
            }
            s
        })
    }

    pub fn transpose_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = DVector::zeros(self.ncols);
        for i in 0..self.nrows {
            let xi = x[i];
            for k in self.indptr[i]..self.indptr[i + 1] {
                y[self.indices[k]] += self.values[k] * xi;
            }
        }
        y
    }

    /// Dense product `self * x` for a block of columns.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.ncols);
        let mut y = DMatrix::zeros(self.nrows, x.ncols());
        for c in 0..x.ncols() {
            for i in 0..self.nrows {
                let mut s = 0.0;
                for k in self.indptr[i]..self.indptr[i + 1] {
                    s += self.values[k] * x[(self.indices[k], c)];
                }
                y[(i, c)] = s;
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    /// `sum_i c_i * M_i` over matrices of equal shape.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> Self {
        let (_, first) = terms.first().expect("at least one term");
        let same_pattern = terms
            .iter()
            .all(|(_, m)| m.indptr == first.indptr && m.indices == first.indices);
        if same_pattern {
            let mut values = vec![0.0; first.values.len()];
            for (c, m) in terms {
                for (v, w) in values.iter_mut().zip(&m.values) {
                    *v += c * w;
                }
            }
            return Self { values, ..(*first).clone() };
        }
        let mut t = Vec::new();
        for (c, m) in terms {
            assert_eq!((m.nrows, m.ncols), (first.nrows, first.ncols));
            t.extend(m.triplets().map(|(i, j, v)| (i, j, c * v)));
        }
        Self::from_triplets(first.nrows, first.ncols, &t)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] += v;
        }
        d
    }

    /// Lower and upper bandwidth of the stored pattern.
    pub fn bandwidth(&self) -> (usize, usize) {
        let mut lo = 0;
        let mut up = 0;
        for (i, j, _) in self.triplets() {
            if j < i {
                lo = lo.max(i - j);
            } else {
                up = up.max(j - i);
            }
        }
        (lo, up)
    }
}

/// LU factorization of a square banded matrix without pivoting.
///
/// Only used on matrices whose symmetric part is positive definite, for which the
/// elimination exists and needs no row exchanges.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    lower: usize,
    upper: usize,
    // row-major band, row i holds columns i-lower ..= i+upper
    band: Vec<f64>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self, Error> {
        assert_eq!(a.nrows(), a.ncols(), "banded LU needs a square matrix");
        let n = a.nrows();
        let (lower, upper) = a.bandwidth();
        let width = lower + upper + 1;
        let mut band = vec![0.0; n * width];
        for (i, j, v) in a.triplets() {
            band[i * width + j + lower - i] += v;
        }
        let scale = band.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let pivot = band[k * width + lower];
            if !(pivot.abs() > scale * 1e-14) {
                return Err(Error::Singular(format!("zero pivot at row {k} of {n}")));
            }
            let last_row = (k + lower).min(n - 1);
            let last_col = (k + upper).min(n - 1);
            for i in k + 1..=last_row {
                let ik = i * width + k + lower - i;
                let l = band[ik] / pivot;
                band[ik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=last_col {
                    let kj = band[k * width + j + lower - k];
                    band[i * width + j + lower - i] -= l * kj;
                }
            }
        }
        Ok(Self { n, lower, upper, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.band[i * (self.lower + self.upper + 1) + j + self.lower - i]
    }

    fn forward_unit_lower(&self, x: &mut [f64]) {
        for i in 0..self.n {
            let first = i.saturating_sub(self.lower);
            let mut s = x[i];
            for (j, xj) in x.iter().enumerate().take(i).skip(first) {
                s -= self.at(i, j) * xj;
            }
            x[i] = s;
        }
    }

    fn backward_upper(&self, x: &mut [f64]) {
        for i in (0..self.n).rev() {
            let last = (i + self.upper).min(self.n - 1);
            let mut s = x[i];
            for (j, xj) in x.iter().enumerate().take(last + 1).skip(i + 1) {
                s -= self.at(i, j) * xj;
            }
            x[i] = s / self.at(i, i);
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        let xs = x.as_mut_slice();
        self.forward_unit_lower(xs);
        self.backward_upper(xs);
        x
    }

    /// Solves `A^T x = b`.
    #[allow(clippy::needless_range_loop)]
    pub fn solve_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        let xs = x.as_mut_slice();
        // U^T z = b
        for i in 0..self.n {
            let first = i.saturating_sub(self.upper);
            let mut s = xs[i];
            for j in first..i {
                s -= self.at(j, i) * xs[j];
            }
            xs[i] = s / self.at(i, i);
        }
        // L^T x = z
        for i in (0..self.n).rev() {
            let last = (i + self.lower).min(self.n - 1);
            let mut s = xs[i];
            for j in i + 1..=last {
                s -= self.at(j, i) * xs[j];
            }
            xs[i] = s;
        }
        x
    }

    /// For a symmetric positive definite factored matrix `A = C C^T`, returns `C^{-1} b`.
    ///
    /// Without pivoting `U = D L^T`, hence `C = L D^{1/2}`.
    pub fn cholesky_half_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        let xs = x.as_mut_slice();
        self.forward_unit_lower(xs);
        for (i, xi) in xs.iter_mut().enumerate() {
            *xi /= self.at(i, i).sqrt();
        }
        x
    }
}

/// Thin Householder QR returning only the upper triangular factor (`k x k`, `k = ncols`).
///
/// Tall inputs only; for `nrows < ncols` the factor is padded with zero rows.
pub fn qr_upper(z: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, k) = z.shape();
    if m >= k {
        let qr = z.clone().qr();
        qr.r()
    } else {
        let qr = z.clone().qr();
        let r = qr.r();
        let mut out = DMatrix::zeros(k, k);
        out.view_mut((0, 0), (r.nrows(), k)).copy_from(&r);
        out
    }
}
