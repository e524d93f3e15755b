//! Dense complex linear algebra for the small operators of the two-atom
//! problem (at most 25×25), plus a coordinate-list sparse form used inside
//! the time-stepping loops.

use crate::{Error, Result};
use nalgebra::DMatrix;
pub use num_complex::Complex64 as C64;
use std::fmt;
use std::ops::{Index, IndexMut};

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Dense row-major complex matrix.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|j| {
                    let z = self[(i, j)];
                    format!("{:+.4e}{:+.4e}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds");
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds");
        &mut self.data[i * self.cols + j]
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting wrong lengths and
    /// non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(d, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &StateVector) -> Result<StateVector> {
        if self.cols != v.dim() {
            return Err(Error::Dimension(format!(
                "cannot apply {}x{} matrix to a {}-dim vector",
                self.rows,
                self.cols,
                v.dim()
            )));
        }
        let amps = (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(v.amplitudes())
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(StateVector { amps })
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest entrywise modulus of `self − other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Copy of the square block starting at `(start, start)` of size `n`.
    pub fn principal_block(&self, start: usize, n: usize) -> Self {
        Self::from_fn(n, n, |i, j| self[(start + i, start + j)])
    }

    /// Embeds `self` in the top-left corner of an `n`×`n` zero matrix.
    pub fn embed_top_left(&self, n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(i, j)] = self[(i, j)];
            }
        }
        m
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<C64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    /// Matrix exponential `exp(self)`.
    pub fn exp(&self) -> Self {
        Self::from_nalgebra(&self.to_nalgebra().exp())
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

/// Tensor product: `(A⊗B)[i·p+k, j·q+l] = A[i,j]·B[k,l]` for `B` of shape p×q.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (p, q) = (b.rows, b.cols);
    let mut out = ComplexMatrix::zeros(a.rows * p, a.cols * q);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let aij = a[(i, j)];
            if aij == ZERO {
                continue;
            }
            for k in 0..p {
                for l in 0..q {
                    out[(i * p + k, j * q + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Pure state in a finite-dimensional Hilbert space.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amps: Vec<C64>,
}

impl StateVector {
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        if amps.is_empty() {
            return Err(Error::Dimension("empty state vector".into()));
        }
        if amps.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("state amplitudes"));
        }
        Ok(Self { amps })
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        assert!(index < dim, "basis index {index} outside dimension {dim}");
        let mut amps = vec![ZERO; dim];
        amps[index] = ONE;
        Self { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::InvalidParameter("cannot normalize the zero vector".into()));
        }
        Ok(Self { amps: self.amps.iter().map(|z| z / n).collect() })
    }

    /// Inner product `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> C64 {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch in inner product");
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    /// `|self⟩⟨other|`.
    pub fn outer(&self, other: &Self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.dim(), other.dim(), |i, j| self.amps[i] * other.amps[j].conj())
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Hermitian, unit-trace, positive semidefinite operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    m: ComplexMatrix,
}

impl DensityMatrix {
    pub const HERMITIAN_TOL: f64 = 1e-9;
    pub const TRACE_TOL: f64 = 1e-8;
    pub const EIGEN_TOL: f64 = 1e-8;

    /// Validates the density-matrix invariants at the stated tolerances.
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        let rho = Self::new_unchecked(m)?;
        rho.validate(Self::TRACE_TOL, Self::EIGEN_TOL)?;
        Ok(rho)
    }

    /// Wraps a square matrix without checking trace or positivity.
    pub fn new_unchecked(m: ComplexMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!("density matrix must be square, got {}x{}", m.rows, m.cols)));
        }
        Ok(Self { m })
    }

    pub fn from_pure(psi: &StateVector) -> Self {
        Self { m: psi.outer(psi) }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self { m: ComplexMatrix::identity(dim).scale(C64::new(1.0 / dim as f64, 0.0)) }
    }

    pub fn dim(&self) -> usize {
        self.m.rows
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.trace().re
    }

    pub fn population(&self, i: usize) -> f64 {
        self.m[(i, i)].re
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let h = hermitian_part(&self.m).to_nalgebra();
        let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn validate(&self, trace_tol: f64, eigen_tol: f64) -> Result<()> {
        let herm = self.m.hermiticity_error();
        if herm > Self::HERMITIAN_TOL {
            return Err(Error::NotHermitian(herm));
        }
        let drift = (self.trace() - 1.0).abs();
        if drift > trace_tol {
            return Err(Error::TraceDrift(drift));
        }
        let min = self.min_eigenvalue();
        if min < -eigen_tol {
            return Err(Error::NegativeEigenvalue(min));
        }
        Ok(())
    }

    /// `⟨v|ρ|v⟩`.
    pub fn expectation_in(&self, v: &StateVector) -> f64 {
        let rv = self.m.apply(v).expect("dimension checked by caller");
        v.inner(&rv).re
    }
}

fn hermitian_part(m: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix::from_fn(m.rows, m.cols, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5)
}

/// `Re tr(op·ρ)` for Hermitian `op`.
pub fn expectation(op: &ComplexMatrix, rho: &DensityMatrix) -> Result<f64> {
    if op.rows != rho.dim() || op.cols != rho.dim() {
        return Err(Error::Dimension(format!(
            "operator {}x{} against {}-dim density matrix",
            op.rows,
            op.cols,
            rho.dim()
        )));
    }
    let err = op.hermiticity_error();
    if err > 1e-9 {
        return Err(Error::NotHermitian(err));
    }
    let n = op.rows;
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += op[(i, k)] * rho.m[(k, i)];
        }
    }
    Ok(acc.re)
}

/// Eigen-decomposition of a 2×2 Hermitian matrix.
#[derive(Clone, Debug)]
pub struct Eigensystem2 {
    /// Ascending eigenvalues.
    pub values: [f64; 2],
    /// Orthonormal eigenvectors matching `values`.
    pub vectors: [StateVector; 2],
}

pub fn eigensystem_2x2(h: &ComplexMatrix) -> Result<Eigensystem2> {
    if h.rows != 2 || h.cols != 2 {
        return Err(Error::Dimension(format!("expected 2x2, got {}x{}", h.rows, h.cols)));
    }
    let scale = h.max_abs().max(1.0);
    let err = h.hermiticity_error();
    if err > 1e-12 * scale {
        return Err(Error::NotHermitian(err));
    }
    let a = h[(0, 0)].re;
    let d = h[(1, 1)].re;
    let b = h[(0, 1)];
    let mean = 0.5 * (a + d);
    let half = 0.5 * (a - d);
    let r = half.hypot(b.norm());
    let values = [mean - r, mean + r];
    if b.norm() <= 1e-300 {
        let (lo, hi) = if a <= d { (0, 1) } else { (1, 0) };
        return Ok(Eigensystem2 {
            values,
            vectors: [StateVector::basis(2, lo), StateVector::basis(2, hi)],
        });
    }
    let vec_for = |e: f64| -> StateVector {
        // Two algebraically equivalent null vectors of (H − e); keep the better conditioned.
        let v1 = [b, C64::new(e - a, 0.0)];
        let v2 = [C64::new(e - d, 0.0), b.conj()];
        let n1 = (v1[0].norm_sqr() + v1[1].norm_sqr()).sqrt();
        let n2 = (v2[0].norm_sqr() + v2[1].norm_sqr()).sqrt();
        let (v, n) = if n1 >= n2 { (v1, n1) } else { (v2, n2) };
        StateVector { amps: vec![v[0] / n, v[1] / n] }
    };
    Ok(Eigensystem2 { values, vectors: [vec_for(values[0]), vec_for(values[1])] })
}

/// Coordinate-list sparse matrix. Duplicate coordinates are summed.
#[derive(Clone, Debug, Default)]
pub struct SparseMatrix {
    dim: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl SparseMatrix {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: Vec::with_capacity(4 * dim) }
    }

    pub fn from_dense(m: &ComplexMatrix) -> Self {
        assert!(m.is_square());
        let mut s = Self::new(m.rows);
        for i in 0..m.rows {
            for j in 0..m.cols {
                if m[(i, j)] != ZERO {
                    s.push(i, j, m[(i, j)]);
                }
            }
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn push(&mut self, i: usize, j: usize, v: C64) {
        debug_assert!(i < self.dim && j < self.dim);
        self.entries.push((i, j, v));
    }

    pub fn entries(&self) -> &[(usize, usize, C64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    /// `out = factor · (self · x)`.
    pub fn matvec_into(&self, x: &[C64], factor: C64, out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = ZERO);
        for &(i, j, v) in &self.entries {
            out[i] += v * x[j];
        }
        if factor != ONE {
            out.iter_mut().for_each(|z| *z *= factor);
        }
    }

    /// `out = factor · (self · X)` for row-major dense `X` with `dim` rows.
    pub fn matmul_dense_into(&self, x: &[C64], factor: C64, out: &mut [C64]) {
        let n = x.len() / self.dim;
        out.iter_mut().for_each(|z| *z = ZERO);
        for &(i, k, v) in &self.entries {
            let w = v * factor;
            let src = &x[k * n..(k + 1) * n];
            let dst = &mut out[i * n..(i + 1) * n];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }

    /// Gershgorin bound on the spectral radius.
    pub fn gershgorin_bound(&self) -> f64 {
        let mut rows = vec![0.0; self.dim];
        for &(i, _, v) in &self.entries {
            rows[i] += v.norm();
        }
        rows.into_iter().fold(0.0, f64::max)
    }
}
