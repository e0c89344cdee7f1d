//! Small dense complex linear algebra.
//!
//! Dimensions in scope are tiny (at most 16), so everything here is plain
//! row-major storage and textbook algorithms: cyclic Jacobi for Hermitian
//! spectra, partially pivoted elimination for solves, and a banded LU used by
//! the boundary-value solver.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Relative pivot threshold below which a matrix is declared singular.
pub const SINGULAR_RTOL: f64 = 1e-13;

/// Off-diagonal stopping threshold of the Jacobi sweep, relative to the
/// Frobenius norm of the input.
const JACOBI_RTOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 64;

#[derive(Clone, PartialEq)]
pub struct CVector {
    data: Vec<C64>,
}

impl CVector {
    pub fn zeros(dim: usize) -> Self {
        Self { data: vec![ZERO; dim] }
    }

    pub fn from_vec(data: Vec<C64>) -> Self {
        Self { data }
    }

    pub fn from_real(values: &[f64]) -> Self {
        Self { data: values.iter().map(|&v| C64::new(v, 0.0)).collect() }
    }

    /// Standard basis vector `e_index`.
    pub fn unit(dim: usize, index: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.data[index] = ONE;
        v
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &C64> {
        self.data.iter()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> C64 {
        // <self, other> = sum self_i * conj(other_i)
        self.data.iter().zip(&other.data).map(|(a, b)| a * b.conj()).sum()
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { data: self.data.iter().map(|z| z * c).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Index<usize> for CVector {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for CVector {
    fn index_mut(&mut self, i: usize) -> &mut C64 {
        &mut self.data[i]
    }
}

impl fmt::Debug for CVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.data.iter()).finish()
    }
}

impl Add for &CVector {
    type Output = CVector;
    fn add(self, rhs: &CVector) -> CVector {
        CVector { data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect() }
    }
}

impl Sub for &CVector {
    type Output = CVector;
    fn sub(self, rhs: &CVector) -> CVector {
        CVector { data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect() }
    }
}

impl AddAssign<&CVector> for CVector {
    fn add_assign(&mut self, rhs: &CVector) {
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl Neg for &CVector {
    type Output = CVector;
    fn neg(self) -> CVector {
        CVector { data: self.data.iter().map(|z| -z).collect() }
    }
}

/// Square complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![ZERO; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_diag(diag: &[C64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let d: Vec<C64> = diag.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::from_diag(&d)
    }

    /// Builds a matrix from row-major entries; panics if the length is not a square.
    pub fn from_rows(dim: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), dim * dim, "row-major data must have dim^2 entries");
        Self { dim, data }
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let dim = rows.len();
        let mut m = Self::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), dim);
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = C64::new(v, 0.0);
            }
        }
        m
    }

    /// Diagonal 0/1 projector onto the coordinates listed in `indices`.
    pub fn coordinate_projector(dim: usize, indices: &[usize]) -> Self {
        let mut m = Self::zeros(dim);
        for &i in indices {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(j, i)] = self[(i, j)].conj();
            }
        }
        m
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|z| z * c).collect() }
    }

    pub fn scale_re(&self, c: f64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|z| z * c).collect() }
    }

    pub fn matvec(&self, v: &CVector) -> CVector {
        let n = self.dim;
        debug_assert_eq!(v.dim(), n);
        let mut out = CVector::zeros(n);
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            out[i] = row.iter().zip(v.as_slice()).map(|(a, b)| a * b).sum();
        }
        out
    }

    /// Hermitian part `(A + A*)/2`.
    pub fn hermitian_part(&self) -> Self {
        let n = self.dim;
        let mut h = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                h[(i, j)] = (self[(i, j)] + self[(j, i)].conj()) * 0.5;
            }
        }
        h
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.dim).map(|i| self[(i, i)]).collect()
    }

    /// Determinant via partially pivoted elimination; zero for exactly singular input.
    pub fn det(&self) -> C64 {
        let n = self.dim;
        let mut a = self.data.clone();
        let mut det = ONE;
        for col in 0..n {
            let (p, pmax) = (col..n)
                .map(|r| (r, a[r * n + col].norm()))
                .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pmax == 0.0 {
                return ZERO;
            }
            if p != col {
                for j in 0..n {
                    a.swap(col * n + j, p * n + j);
                }
                det = -det;
            }
            let pivot = a[col * n + col];
            det *= pivot;
            for r in col + 1..n {
                let l = a[r * n + col] / pivot;
                for j in col..n {
                    let v = a[col * n + j];
                    a[r * n + j] -= l * v;
                }
            }
        }
        det
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[C64]> = self.data.chunks(self.dim.max(1)).collect();
        f.debug_list().entries(rows).finish()
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        debug_assert_eq!(self.dim, rhs.dim);
        CMatrix { dim: self.dim, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect() }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        debug_assert_eq!(self.dim, rhs.dim);
        CMatrix { dim: self.dim, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect() }
    }
}

impl AddAssign<&CMatrix> for CMatrix {
    fn add_assign(&mut self, rhs: &CMatrix) {
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl SubAssign<&CMatrix> for CMatrix {
    fn sub_assign(&mut self, rhs: &CMatrix) {
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        CMatrix { dim: self.dim, data: self.data.iter().map(|z| -z).collect() }
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        let n = self.dim;
        debug_assert_eq!(n, rhs.dim);
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }
}

impl Mul<&CVector> for &CMatrix {
    type Output = CVector;
    fn mul(self, rhs: &CVector) -> CVector {
        self.matvec(rhs)
    }
}

fn check_finite(a: &CMatrix) -> Result<()> {
    if a.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput("matrix has non-finite entries".into()))
    }
}

/// Spectral norm (largest singular value), as `sqrt(max eig(A* A))`.
pub fn op_norm(a: &CMatrix) -> Result<f64> {
    check_finite(a)?;
    Ok(op_norm_unchecked(a))
}

pub(crate) fn op_norm_unchecked(a: &CMatrix) -> f64 {
    if a.dim == 1 {
        return a.data[0].norm();
    }
    let scale = a.max_abs();
    if scale == 0.0 {
        return 0.0;
    }
    // Rescale first so that A*A cannot overflow or underflow.
    let b = a.scale_re(1.0 / scale);
    let gram = &b.adjoint() * &b;
    let eigs = jacobi_eigs(&gram, false).0;
    let top = eigs.last().copied().unwrap_or(0.0).max(0.0);
    top.sqrt() * scale
}

/// Right end of the numerical range: max eigenvalue of the Hermitian part.
pub fn omega(a: &CMatrix) -> Result<f64> {
    check_finite(a)?;
    Ok(omega_unchecked(a))
}

pub(crate) fn omega_unchecked(a: &CMatrix) -> f64 {
    if a.dim == 1 {
        return a.data[0].re;
    }
    let h = a.hermitian_part();
    *jacobi_eigs(&h, false).0.last().expect("dim >= 1")
}

pub fn trace(a: &CMatrix) -> C64 {
    (0..a.dim).map(|i| a[(i, i)]).sum()
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn herm_eigs(h: &CMatrix) -> Result<Vec<f64>> {
    Ok(herm_eigen(h)?.0)
}

/// Eigenvalues (ascending) and the matching unitary eigenvector matrix
/// (eigenvectors in columns).
pub fn herm_eigen(h: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    check_finite(h)?;
    let scale = h.frobenius().max(f64::MIN_POSITIVE);
    let asym = (h - &h.adjoint()).max_abs();
    if asym > 1e-12 * scale.max(1.0) {
        return Err(Error::ContractViolation(format!(
            "matrix is not Hermitian (asymmetry {asym:.3e})"
        )));
    }
    let (vals, vecs) = jacobi_eigs(h, true);
    Ok((vals, vecs.expect("vectors requested")))
}

/// Cyclic two-sided Jacobi on a Hermitian matrix.
fn jacobi_eigs(h: &CMatrix, want_vectors: bool) -> (Vec<f64>, Option<CMatrix>) {
    let n = h.dim;
    let mut a = h.hermitian_part();
    let mut v = want_vectors.then(|| CMatrix::identity(n));
    let target = JACOBI_RTOL * a.frobenius();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= target {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let g = a[(p, q)];
                let r = g.norm();
                if r == 0.0 {
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let tau = (aqq - app) / (2.0 * r);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let phase = g / r;
                // U = diag(1, conj(phase)) * [[c, s], [-s, c]]
                let u00 = C64::new(c, 0.0);
                let u01 = C64::new(s, 0.0);
                let u10 = -phase.conj() * s;
                let u11 = phase.conj() * c;
                // A <- A U
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * u00 + akq * u10;
                    a[(k, q)] = akp * u01 + akq * u11;
                }
                // A <- U* A
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = u00.conj() * apk + u10.conj() * aqk;
                    a[(q, k)] = u01.conj() * apk + u11.conj() * aqk;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = C64::new(a[(q, q)].re, 0.0);
                if let Some(v) = v.as_mut() {
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = vkp * u00 + vkq * u10;
                        v[(k, q)] = vkp * u01 + vkq * u11;
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let vals = order.iter().map(|&i| a[(i, i)].re).collect();
    let vecs = v.map(|v| {
        let mut sorted = CMatrix::zeros(n);
        for (new, &old) in order.iter().enumerate() {
            for k in 0..n {
                sorted[(k, new)] = v[(k, old)];
            }
        }
        sorted
    });
    (vals, vecs)
}

/// LU factorization with partial pivoting of a small dense matrix.
#[derive(Clone, Debug)]
pub struct Lu {
    dim: usize,
    lu: Vec<C64>,
    perm: Vec<usize>,
}

impl Lu {
    /// Factors `a`; the singularity threshold is `SINGULAR_RTOL * ||a||_F`
    /// (Frobenius as a cheap upper bound of the spectral norm).
    pub fn new(a: &CMatrix) -> Result<Self> {
        check_finite(a)?;
        let n = a.dim;
        let threshold = SINGULAR_RTOL * a.frobenius();
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let mut p = col;
            let mut pmax = lu[col * n + col].norm();
            for r in col + 1..n {
                let v = lu[r * n + col].norm();
                if v > pmax {
                    p = r;
                    pmax = v;
                }
            }
            if pmax <= threshold || pmax == 0.0 {
                return Err(Error::Singular { pivot: pmax, threshold });
            }
            if p != col {
                for j in 0..n {
                    lu.swap(col * n + j, p * n + j);
                }
                perm.swap(col, p);
            }
            let pivot = lu[col * n + col];
            for r in col + 1..n {
                let l = lu[r * n + col] / pivot;
                lu[r * n + col] = l;
                if l != ZERO {
                    for j in col + 1..n {
                        let v = lu[col * n + j];
                        lu[r * n + j] -= l * v;
                    }
                }
            }
        }
        Ok(Self { dim: n, lu, perm })
    }

    pub fn solve_vec(&self, b: &CVector) -> CVector {
        let n = self.dim;
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        CVector::from_vec(x)
    }

    pub fn solve_mat(&self, b: &CMatrix) -> CMatrix {
        let n = self.dim;
        let mut out = CMatrix::zeros(n);
        for col in 0..n {
            let rhs = CVector::from_vec((0..n).map(|r| b[(r, col)]).collect());
            let x = self.solve_vec(&rhs);
            for r in 0..n {
                out[(r, col)] = x[r];
            }
        }
        out
    }

    pub fn inverse(&self) -> CMatrix {
        self.solve_mat(&CMatrix::identity(self.dim))
    }
}

/// Solves `A x = b` by partially pivoted elimination.
pub fn solve_linear(a: &CMatrix, b: &CVector) -> Result<CVector> {
    if b.dim() != a.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    Ok(Lu::new(a)?.solve_vec(b))
}

/// Solves `A X = B` column by column.
pub fn solve_linear_mat(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if b.dim() != a.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    Ok(Lu::new(a)?.solve_mat(b))
}

pub fn inverse(a: &CMatrix) -> Result<CMatrix> {
    Ok(Lu::new(a)?.inverse())
}

/// Banded matrix with `kl` sub- and `ku` super-diagonals, factored in place
/// by LU with partial pivoting (fill-in widens the upper band to `kl + ku`).
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    data: Vec<C64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        Self { n, kl, ku, ld, data: vec![ZERO; n * ld] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku, "({i},{j}) outside band");
        i * self.ld + (j + self.kl - i)
    }

    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "({i},{j}) outside declared band");
        let o = self.offset(i, j);
        self.data[o] = v;
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> C64 {
        self.data[self.offset(i, j)]
    }

    /// Factors and solves in one pass. The matrix is consumed.
    pub fn solve(mut self, rhs: &[C64]) -> Result<Vec<C64>> {
        let n = self.n;
        assert_eq!(rhs.len(), n);
        let (kl, ku) = (self.kl, self.ku);
        let scale = self.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let threshold = SINGULAR_RTOL * scale;
        let mut b = rhs.to_vec();
        for j in 0..n {
            let last_row = (j + kl).min(n - 1);
            let last_col = (j + kl + ku).min(n - 1);
            let mut p = j;
            let mut pmax = self.get(j, j).norm();
            for i in j + 1..=last_row {
                let v = self.get(i, j).norm();
                if v > pmax {
                    p = i;
                    pmax = v;
                }
            }
            if pmax <= threshold || pmax == 0.0 {
                return Err(Error::Singular { pivot: pmax, threshold });
            }
            if p != j {
                for c in j..=last_col {
                    let (o1, o2) = (self.offset(j, c), self.offset(p, c));
                    self.data.swap(o1, o2);
                }
                b.swap(j, p);
            }
            let pivot = self.get(j, j);
            for i in j + 1..=last_row {
                let oij = self.offset(i, j);
                let l = self.data[oij] / pivot;
                if l == ZERO {
                    continue;
                }
                self.data[oij] = ZERO;
                for c in j + 1..=last_col {
                    let u = self.data[self.offset(j, c)];
                    let o = self.offset(i, c);
                    self.data[o] -= l * u;
                }
                let bj = b[j];
                b[i] -= l * bj;
            }
        }
        for i in (0..n).rev() {
            let last_col = (i + kl + ku).min(n - 1);
            let mut s = b[i];
            for c in i + 1..=last_col {
                s -= self.get(i, c) * b[c];
            }
            b[i] = s / self.get(i, i);
        }
        Ok(b)
    }
}
