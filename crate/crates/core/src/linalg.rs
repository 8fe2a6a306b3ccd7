//! Dense complex linear algebra.
//!
//! Everything quantum in this crate (states, Kraus operators, Stiefel frames,
//! gradients) is a [`ComplexMatrix`]. Sizes stay small (at most a few hundred
//! rows), so the routines favour simple, accurate algorithms: cyclic Jacobi
//! for Hermitian eigenproblems, Householder QR, and partially pivoted LU.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Default negative-eigenvalue clipping tolerance for [`psd_sqrt`].
pub const PSD_CLIP_TOL: f64 = 1e-9;

/// Dense complex matrix stored row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl TryFrom<RawMatrix> for ComplexMatrix {
    type Error = Error;
    fn try_from(raw: RawMatrix) -> Result<Self> {
        ComplexMatrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{:+.6}{:+.6}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidParameter("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self { rows: rows.len(), cols, data: rows.concat() }
    }

    /// Real diagonal matrix.
    pub fn from_real_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = C64::new(d, 0.0);
        }
        m
    }

    /// Outer product `|u⟩⟨v|`.
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        Self::from_fn(u.len(), v.len(), |r, c| u[r] * v[c].conj())
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn data(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<C64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn ensure_square(&self) -> Result<usize> {
        if self.is_square() {
            Ok(self.rows)
        } else {
            Err(Error::NotSquare { rows: self.rows, cols: self.cols })
        }
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn scale(&self, alpha: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * alpha).collect() }
    }

    pub fn scale_real(&self, alpha: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * alpha).collect() }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: C64, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn trace(&self) -> C64 {
        let n = self.rows.min(self.cols);
        (0..n).map(|i| self.data[i * self.cols + i]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `(A + A†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        assert!(self.is_square(), "hermitian_part of non-square matrix");
        let n = self.rows;
        Self::from_fn(n, n, |r, c| (self[(r, c)] + self[(c, r)].conj()) * 0.5)
    }

    /// Frobenius norm of `A - A†`.
    pub fn hermiticity_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut acc = 0.0;
        for r in 0..n {
            for c in 0..n {
                acc += (self[(r, c)] - self[(c, r)].conj()).norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Self {
        let mut out = Self::zeros(self.rows, other.cols);
        gemm_acc(&mut out, self, other);
        out
    }

    /// `self† · other` without materialising the adjoint.
    pub fn adjoint_mul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "adjoint_mul shape mismatch");
        let (n, p) = (self.rows, other.cols);
        let mut out = Self::zeros(self.cols, p);
        for k in 0..n {
            let arow = self.row(k);
            let brow = other.row(k);
            for (i, a) in arow.iter().enumerate() {
                let a = a.conj();
                if a == ZERO {
                    continue;
                }
                let orow = &mut out.data[i * p..(i + 1) * p];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · other†` without materialising the adjoint.
    pub fn mul_adjoint(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "mul_adjoint shape mismatch");
        let (m, p) = (self.rows, other.rows);
        let mut out = Self::zeros(m, p);
        for i in 0..m {
            let arow = self.row(i);
            for j in 0..p {
                let brow = other.row(j);
                let mut acc = ZERO;
                for (a, b) in arow.iter().zip(brow) {
                    acc += a * b.conj();
                }
                out.data[i * p + j] = acc;
            }
        }
        out
    }

    /// Rows `start..start+count` as a new matrix.
    pub fn row_block(&self, start: usize, count: usize) -> Self {
        assert!(start + count <= self.rows, "row block out of range");
        Self {
            rows: count,
            cols: self.cols,
            data: self.data[start * self.cols..(start + count) * self.cols].to_vec(),
        }
    }

    /// Vertical concatenation of equally wide blocks.
    pub fn vstack(blocks: &[Self]) -> Self {
        let cols = blocks.first().map_or(0, |b| b.cols);
        assert!(blocks.iter().all(|b| b.cols == cols), "vstack width mismatch");
        let rows = blocks.iter().map(|b| b.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for b in blocks {
            data.extend_from_slice(&b.data);
        }
        Self { rows, cols, data }
    }

    /// Horizontal concatenation of equally tall blocks.
    pub fn hstack(blocks: &[Self]) -> Self {
        let rows = blocks.first().map_or(0, |b| b.rows);
        assert!(blocks.iter().all(|b| b.rows == rows), "hstack height mismatch");
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut out = Self::zeros(rows, cols);
        let mut off = 0;
        for b in blocks {
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + b.cols].copy_from_slice(b.row(r));
            }
            off += b.cols;
        }
        out
    }

    /// Frobenius distance `‖self − other‖_F`.
    pub fn distance(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "distance shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
    }

    /// `Re Tr(self† · other)`, the real Frobenius inner product.
    pub fn real_inner(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a.conj() * b).re).sum()
    }

    /// `Tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &Self) -> C64 {
        assert_eq!((self.rows, self.cols), (other.cols, other.rows), "trace_product shape mismatch");
        let mut acc = ZERO;
        for i in 0..self.rows {
            for k in 0..self.cols {
                acc += self.data[i * self.cols + k] * other.data[k * other.cols + i];
            }
        }
        acc
    }

    /// Quadratic form `⟨v|A|v⟩`.
    pub fn expectation(&self, v: &[C64]) -> C64 {
        assert!(self.is_square() && v.len() == self.rows, "expectation shape mismatch");
        let n = self.rows;
        let mut acc = ZERO;
        for r in 0..n {
            let row = self.row(r);
            let av: C64 = row.iter().zip(v).map(|(a, x)| a * x).sum();
            acc += v[r].conj() * av;
        }
        acc
    }

    /// `‖A†A − I‖_F`, the Stiefel / completeness defect of a stacked isometry.
    pub fn isometry_defect(&self) -> f64 {
        let g = self.adjoint_mul(self);
        g.distance(&Self::identity(self.cols))
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        self.scale_real(-1.0)
    }
}

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl SubAssign<&ComplexMatrix> for ComplexMatrix {
    fn sub_assign(&mut self, rhs: &ComplexMatrix) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sub shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

/// `out += a · b`, i-k-j ordered for row-major locality.
pub fn gemm_acc(out: &mut ComplexMatrix, a: &ComplexMatrix, b: &ComplexMatrix) {
    assert_eq!(a.cols, b.rows, "matmul inner dimension mismatch");
    assert_eq!((out.rows, out.cols), (a.rows, b.cols), "matmul output shape mismatch");
    let p = b.cols;
    for i in 0..a.rows {
        let orow = &mut out.data[i * p..(i + 1) * p];
        for (k, aik) in a.row(i).iter().enumerate() {
            if *aik == ZERO {
                continue;
            }
            let brow = &b.data[k * p..(k + 1) * p];
            for (o, bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
}

/// `out += k · rho · k†`.
pub fn add_sandwich(out: &mut ComplexMatrix, k: &ComplexMatrix, rho: &ComplexMatrix) {
    let tmp = k.matmul(rho);
    let s = tmp.mul_adjoint(k);
    *out += &s;
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (ar, ac, br, bc) = (a.rows, a.cols, b.rows, b.cols);
    let mut out = ComplexMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Traces out the second tensor factor of a `(sys·env)²` matrix.
pub fn partial_trace_env(m: &ComplexMatrix, sys_dim: usize, env_dim: usize) -> Result<ComplexMatrix> {
    let n = sys_dim * env_dim;
    if m.rows != n || m.cols != n {
        return Err(Error::DimensionMismatch(format!(
            "partial trace expects {n}x{n} for sys={sys_dim}, env={env_dim}; got {}x{}",
            m.rows, m.cols
        )));
    }
    Ok(ComplexMatrix::from_fn(sys_dim, sys_dim, |s, t| {
        (0..env_dim).map(|e| m[(s * env_dim + e, t * env_dim + e)]).sum()
    }))
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermEigDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns.
    pub eigenvectors: ComplexMatrix,
}

impl HermEigDecomposition {
    /// Magnitude below which an eigenvalue is indistinguishable from zero
    /// at the working precision of the decomposition.
    pub fn noise_floor(&self) -> f64 {
        let n = self.eigenvalues.len() as f64;
        let max = self.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
        4.0 * n * f64::EPSILON * max
    }

    /// `Tr √A` for a PSD input, ignoring eigenvalues at the noise floor.
    pub fn trace_sqrt(&self) -> f64 {
        let floor = self.noise_floor();
        self.eigenvalues.iter().filter(|&&l| l > floor).map(|l| l.sqrt()).sum()
    }

    /// `V diag(f(λ)) V†`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ComplexMatrix {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        let fl: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let scaled = ComplexMatrix::from_fn(n, n, |r, c| v[(r, c)] * fl[c]);
        scaled.mul_adjoint(v)
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.map(|l| l)
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Hermitian eigendecomposition by cyclic complex Jacobi rotations.
///
/// The input is symmetrised as `(a + a†)/2` before iterating.
pub fn herm_eig(a: &ComplexMatrix) -> Result<HermEigDecomposition> {
    let n = a.ensure_square()?;
    if !a.is_finite() {
        return Err(Error::InvalidParameter("eigendecomposition of non-finite matrix".into()));
    }
    let mut m = a.hermitian_part();
    for i in 0..n {
        m[(i, i)].im = 0.0;
    }
    let mut v = ComplexMatrix::identity(n);
    let scale = m.frobenius_norm();
    if n <= 1 || scale == 0.0 {
        return Ok(finish_eig(m, v));
    }
    let target = f64::EPSILON * scale;

    for sweep in 0..JACOBI_MAX_SWEEPS {
        let off = off_diagonal_norm(&m);
        if off <= target {
            return Ok(finish_eig(m, v));
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[(p, q)];
                let g = apq.norm();
                if g == 0.0 {
                    continue;
                }
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                // Rotation is numerically a no-op once g is below the diagonal's ulp.
                if sweep > 3 && (app.abs() + 100.0 * g == app.abs()) && (aqq.abs() + 100.0 * g == aqq.abs()) {
                    m[(p, q)] = ZERO;
                    m[(q, p)] = ZERO;
                    continue;
                }
                let phase = apq / g;
                let theta = (aqq - app) / (2.0 * g);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let cphase = phase.conj();
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let x = m[(k, p)];
                    let y = m[(k, q)] * cphase;
                    let nkp = x * c - y * s;
                    let nkq = x * s + y * c;
                    m[(k, p)] = nkp;
                    m[(k, q)] = nkq;
                    m[(p, k)] = nkp.conj();
                    m[(q, k)] = nkq.conj();
                }
                m[(p, p)] = C64::new(app - t * g, 0.0);
                m[(q, q)] = C64::new(aqq + t * g, 0.0);
                m[(p, q)] = ZERO;
                m[(q, p)] = ZERO;
                for k in 0..n {
                    let x = v[(k, p)];
                    let y = v[(k, q)] * cphase;
                    v[(k, p)] = x * c - y * s;
                    v[(k, q)] = x * s + y * c;
                }
            }
        }
    }
    let residual = off_diagonal_norm(&m);
    if residual <= 1e-12 * scale {
        return Ok(finish_eig(m, v));
    }
    Err(Error::NoConvergence { sweeps: JACOBI_MAX_SWEEPS, residual })
}

fn off_diagonal_norm(m: &ComplexMatrix) -> f64 {
    let n = m.rows;
    let mut acc = 0.0;
    for r in 0..n {
        for c in 0..n {
            if r != c {
                acc += m[(r, c)].norm_sqr();
            }
        }
    }
    acc.sqrt()
}

fn finish_eig(m: ComplexMatrix, v: ComplexMatrix) -> HermEigDecomposition {
    let n = m.rows;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| m[(a, a)].re.total_cmp(&m[(b, b)].re));
    let eigenvalues = order.iter().map(|&i| m[(i, i)].re).collect();
    let eigenvectors = ComplexMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    HermEigDecomposition { eigenvalues, eigenvectors }
}

/// Principal square root of a PSD matrix.
///
/// Eigenvalues in `[-clip_tol, 0)` are clipped to zero; anything more
/// negative is reported as [`Error::NotPsd`].
pub fn psd_sqrt(a: &ComplexMatrix, clip_tol: f64) -> Result<ComplexMatrix> {
    let eig = herm_eig(a)?;
    check_psd(&eig, clip_tol)?;
    let floor = eig.noise_floor();
    Ok(eig.map(|l| if l > floor { l.sqrt() } else { 0.0 }))
}

pub(crate) fn check_psd(eig: &HermEigDecomposition, clip_tol: f64) -> Result<()> {
    if let Some(&lmin) = eig.eigenvalues.first() {
        if lmin < -clip_tol {
            return Err(Error::NotPsd { eigenvalue: lmin, tolerance: clip_tol });
        }
    }
    Ok(())
}

/// Thin Householder QR of an `m×n` matrix with `m ≥ n`.
///
/// Returns `(Q, R)` with `Q` of shape `m×n` having orthonormal columns and
/// `R` upper triangular `n×n`.
pub fn qr_thin(a: &ComplexMatrix) -> (ComplexMatrix, ComplexMatrix) {
    let (m, n) = (a.rows, a.cols);
    assert!(m >= n, "qr_thin requires rows >= cols");
    let mut r = a.clone();
    let mut reflectors: Vec<Vec<C64>> = Vec::with_capacity(n);
    for j in 0..n {
        let norm_x = (j..m).map(|i| r[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        let mut v: Vec<C64> = (j..m).map(|i| r[(i, j)]).collect();
        if norm_x == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let x0 = v[0];
        let phase = if x0.norm() == 0.0 { ONE } else { x0 / x0.norm() };
        v[0] += phase * norm_x;
        let vnorm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        // Apply H = I - 2 v v† / (v†v) to the trailing block.
        for c in j..n {
            let dot: C64 = v.iter().enumerate().map(|(k, vk)| vk.conj() * r[(j + k, c)]).sum();
            let f = dot * (2.0 / vnorm2);
            for (k, vk) in v.iter().enumerate() {
                let val = r[(j + k, c)] - vk * f;
                r[(j + k, c)] = val;
            }
        }
        for i in j + 1..m {
            r[(i, j)] = ZERO;
        }
        let inv = 1.0 / vnorm2.sqrt();
        reflectors.push(v.into_iter().map(|z| z * inv).collect());
    }
    // Q = H_0 H_1 … H_{n-1} applied to the first n columns of the identity.
    let mut q = ComplexMatrix::zeros(m, n);
    for i in 0..n {
        q[(i, i)] = ONE;
    }
    for j in (0..n).rev() {
        let v = &reflectors[j];
        if v.is_empty() {
            continue;
        }
        for c in 0..n {
            let dot: C64 = v.iter().enumerate().map(|(k, vk)| vk.conj() * q[(j + k, c)]).sum();
            let f = dot * 2.0;
            for (k, vk) in v.iter().enumerate() {
                let val = q[(j + k, c)] - vk * f;
                q[(j + k, c)] = val;
            }
        }
    }
    let rr = ComplexMatrix::from_fn(n, n, |i, c| if i <= c { r[(i, c)] } else { ZERO });
    (q, rr)
}

/// Standard complex Gaussian entry `(x + iy)/√2`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Haar-distributed isometry with `rows ≥ cols`.
///
/// Ginibre sample, thin QR, then each column of Q multiplied by the phase of
/// the matching diagonal entry of R. The result has the distribution of the
/// first `cols` columns of a Haar unitary of size `rows`.
pub fn haar_isometry<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> ComplexMatrix {
    assert!(rows >= cols && cols >= 1, "haar_isometry needs rows >= cols >= 1");
    let g = ComplexMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng));
    let (mut q, r) = qr_thin(&g);
    for c in 0..cols {
        let d = r[(c, c)];
        let ph = if d.norm() == 0.0 { ONE } else { d / d.norm() };
        for row in 0..rows {
            q[(row, c)] *= ph;
        }
    }
    q
}

/// Haar-random unitary of the given dimension.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> ComplexMatrix {
    haar_isometry(dim, dim, rng)
}

/// Rough condition-number ceiling accepted by [`solve_small`].
pub const SOLVE_MAX_CONDITION: f64 = 1e12;

/// Solves `a · x = b` by LU with partial pivoting.
///
/// The condition estimate is `‖a‖₁ · ‖a⁻¹‖₁` with the inverse norm taken
/// from the LU factors.
pub fn solve_small(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = a.ensure_square()?;
    if b.rows != n {
        return Err(Error::DimensionMismatch(format!("solve: a is {n}x{n}, b has {} rows", b.rows)));
    }
    let lu = LuFactors::factor(a)?;
    let cond = a.one_norm() * lu.inverse_one_norm();
    if !cond.is_finite() || cond > SOLVE_MAX_CONDITION {
        return Err(Error::Singular { condition: cond });
    }
    Ok(lu.solve(b))
}

impl ComplexMatrix {
    /// Maximum absolute column sum.
    pub fn one_norm(&self) -> f64 {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self[(r, c)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

struct LuFactors {
    lu: ComplexMatrix,
    perm: Vec<usize>,
}

impl LuFactors {
    fn factor(a: &ComplexMatrix) -> Result<Self> {
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (piv, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].norm()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pmax == 0.0 {
                return Err(Error::Singular { condition: f64::INFINITY });
            }
            if piv != k {
                for c in 0..n {
                    lu.data.swap(k * n + c, piv * n + c);
                }
                perm.swap(k, piv);
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f == ZERO {
                    continue;
                }
                for c in k + 1..n {
                    let val = lu[(i, c)] - f * lu[(k, c)];
                    lu[(i, c)] = val;
                }
            }
        }
        Ok(Self { lu, perm })
    }

    fn solve(&self, b: &ComplexMatrix) -> ComplexMatrix {
        let n = self.lu.rows;
        let p = b.cols;
        let mut x = ComplexMatrix::from_fn(n, p, |r, c| b[(self.perm[r], c)]);
        for c in 0..p {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= self.lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s;
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in i + 1..n {
                    s -= self.lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.lu[(i, i)];
            }
        }
        x
    }

    fn inverse_one_norm(&self) -> f64 {
        let n = self.lu.rows;
        self.solve(&ComplexMatrix::identity(n)).one_norm()
    }
}

/// Nearest isometry `m (m†m)^{-1/2}` (polar factor) of a tall matrix.
pub fn polar_isometry(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let gram = m.adjoint_mul(m);
    let eig = herm_eig(&gram)?;
    if let Some(&lmin) = eig.eigenvalues.first() {
        if lmin <= 1e-14 * eig.eigenvalues.last().copied().unwrap_or(1.0).max(1e-300) {
            return Err(Error::Singular { condition: f64::INFINITY });
        }
    }
    let inv_sqrt = eig.map(|l| 1.0 / l.sqrt());
    Ok(m.matmul(&inv_sqrt))
}
