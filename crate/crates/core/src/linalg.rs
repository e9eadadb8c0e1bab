//! Small dense complex linear algebra.
//!
//! Message dimensions equal the per-AP antenna count, which is tiny (often 1),
//! so matrices and vectors keep up to four entries inline and every kernel is a
//! plain loop. Matrices are square and row-major.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use smallvec::{smallvec, SmallVec};

pub type Storage = SmallVec<[Complex64; 1]>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Complex column vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CVec {
    data: Storage,
}

impl CVec {
    pub fn zeros(n: usize) -> Self {
        Self { data: smallvec![ZERO; n] }
    }

    pub fn from_slice(values: &[Complex64]) -> Self {
        Self { data: Storage::from_slice(values) }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize) -> Complex64) -> Self {
        Self { data: (0..n).map(&mut f).collect() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &Complex64> {
        self.data.iter()
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self { data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self { data: self.data.iter().map(|v| v * s).collect() }
    }

    /// `self^H other`
    pub fn dot(&self, other: &CVec) -> Complex64 {
        debug_assert_eq!(self.len(), other.len());
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// `self self^H`
    pub fn outer(&self) -> CMat {
        let n = self.len();
        let mut m = CMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.data[i] * self.data[j].conj();
            }
        }
        m
    }

    /// `a * self + b * other`, the pattern behind every damped update.
    pub fn lincomb(&self, a: f64, other: &CVec, b: f64) -> CVec {
        debug_assert_eq!(self.len(), other.len());
        Self { data: self.data.iter().zip(&other.data).map(|(x, y)| x * a + y * b).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

impl Index<usize> for CVec {
    type Output = Complex64;
    fn index(&self, i: usize) -> &Complex64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for CVec {
    fn index_mut(&mut self, i: usize) -> &mut Complex64 {
        &mut self.data[i]
    }
}

impl Add for &CVec {
    type Output = CVec;
    fn add(self, rhs: &CVec) -> CVec {
        debug_assert_eq!(self.len(), rhs.len());
        CVec { data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect() }
    }
}

impl Sub for &CVec {
    type Output = CVec;
    fn sub(self, rhs: &CVec) -> CVec {
        debug_assert_eq!(self.len(), rhs.len());
        CVec { data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect() }
    }
}

impl AddAssign<&CVec> for CVec {
    fn add_assign(&mut self, rhs: &CVec) {
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl SubAssign<&CVec> for CVec {
    fn sub_assign(&mut self, rhs: &CVec) {
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

impl Neg for &CVec {
    type Output = CVec;
    fn neg(self) -> CVec {
        CVec { data: self.data.iter().map(|v| -v).collect() }
    }
}

/// Square complex matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CMat {
    n: usize,
    data: Storage,
}

impl CMat {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: smallvec![ZERO; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(s, 0.0);
        }
        m
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(*d, 0.0);
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Storage::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    /// Row-major entries.
    pub fn from_row_slice(n: usize, values: &[Complex64]) -> Self {
        assert_eq!(values.len(), n * n, "expected {} entries", n * n);
        Self { n, data: Storage::from_slice(values) }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    /// Real part of the trace; for Hermitian matrices this is the trace.
    pub fn trace_re(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)].re).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == ZERO)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)].conj())
    }

    /// `(M + M^H) / 2`
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.n, |i, j| (self[(i, j)] + self[(j, i)].conj()) * 0.5)
    }

    /// Relative Frobenius distance between `M` and `M^H`.
    pub fn hermitian_defect(&self) -> f64 {
        let scale = self.frobenius();
        if scale == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                acc += (self[(i, j)] - self[(j, i)].conj()).norm_sqr();
            }
        }
        acc.sqrt() / scale
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn lincomb(&self, a: f64, other: &CMat, b: f64) -> CMat {
        debug_assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(x, y)| x * a + y * b).collect(),
        }
    }

    pub fn mul_vec(&self, v: &CVec) -> CVec {
        assert_eq!(self.n, v.len());
        CVec::from_fn(self.n, |i| (0..self.n).map(|j| self[(i, j)] * v[j]).sum())
    }

    pub fn matmul(&self, other: &CMat) -> CMat {
        assert_eq!(self.n, other.n);
        let n = self.n;
        CMat::from_fn(n, |i, j| (0..n).map(|k| self[(i, k)] * other[(k, j)]).sum())
    }

    /// Real part of `v^H M v`.
    pub fn quad_form(&self, v: &CVec) -> f64 {
        v.dot(&self.mul_vec(v)).re
    }

    /// Cholesky factorization `M = L L^H` of the Hermitian part of `self`.
    ///
    /// Fails when a pivot drops to `min_pivot` or below.
    pub fn cholesky(&self, min_pivot: f64) -> Option<Cholesky> {
        let n = self.n;
        let mut l = CMat::zeros(n);
        for j in 0..n {
            let mut d = self[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > min_pivot) || !d.is_finite() {
                return None;
            }
            let ljj = d.sqrt();
            l[(j, j)] = Complex64::new(ljj, 0.0);
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / ljj;
            }
        }
        Some(Cholesky { l })
    }

    /// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi
    /// rotations. Only the upper triangle of the Hermitian part is trusted.
    pub fn hermitian_eigen(&self) -> HermitianEigen {
        let n = self.n;
        let mut a = self.hermitian_part();
        let mut v = CMat::identity(n);
        let scale = a.frobenius();
        if n <= 1 || scale == 0.0 {
            let values = (0..n).map(|i| a[(i, i)].re).collect();
            return HermitianEigen { values, vectors: v };
        }
        for _sweep in 0..64 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[(p, q)].norm_sqr();
                }
            }
            if off.sqrt() <= 1e-16 * scale {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    let mag = apq.norm();
                    if mag <= 1e-300 {
                        continue;
                    }
                    // Phase-rotate column q so the pivot becomes real, then
                    // apply the real symmetric Jacobi rotation.
                    let phase = apq / mag;
                    let app = a[(p, p)].re;
                    let aqq = a[(q, q)].re;
                    let tau = (aqq - app) / (2.0 * mag);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    let phase_c = phase.conj();
                    let u_pp = Complex64::new(c, 0.0);
                    let u_pq = Complex64::new(s, 0.0);
                    let u_qp = phase_c * (-s);
                    let u_qq = phase_c * c;
                    // A <- A U
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = akp * u_pp + akq * u_qp;
                        a[(k, q)] = akp * u_pq + akq * u_qq;
                    }
                    // A <- U^H A
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = u_pp.conj() * apk + u_qp.conj() * aqk;
                        a[(q, k)] = u_pq.conj() * apk + u_qq.conj() * aqk;
                    }
                    a[(p, q)] = ZERO;
                    a[(q, p)] = ZERO;
                    a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
                    a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);
                    // V <- V U
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = vkp * u_pp + vkq * u_qp;
                        v[(k, q)] = vkp * u_pq + vkq * u_qq;
                    }
                }
            }
        }
        let values = (0..n).map(|i| a[(i, i)].re).collect();
        HermitianEigen { values, vectors: v }
    }
}

impl Index<(usize, usize)> for CMat {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.n + j]
    }
}

impl Add for &CMat {
    type Output = CMat;
    fn add(self, rhs: &CMat) -> CMat {
        assert_eq!(self.n, rhs.n);
        CMat { n: self.n, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect() }
    }
}

impl Sub for &CMat {
    type Output = CMat;
    fn sub(self, rhs: &CMat) -> CMat {
        assert_eq!(self.n, rhs.n);
        CMat { n: self.n, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect() }
    }
}

impl AddAssign<&CMat> for CMat {
    fn add_assign(&mut self, rhs: &CMat) {
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl SubAssign<&CMat> for CMat {
    fn sub_assign(&mut self, rhs: &CMat) {
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

impl Mul<&CVec> for &CMat {
    type Output = CVec;
    fn mul(self, rhs: &CVec) -> CVec {
        self.mul_vec(rhs)
    }
}

impl Mul for &CMat {
    type Output = CMat;
    fn mul(self, rhs: &CMat) -> CMat {
        self.matmul(rhs)
    }
}

/// Lower-triangular factor of a Hermitian positive definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: CMat,
}

impl Cholesky {
    pub fn factor(&self) -> &CMat {
        &self.l
    }

    pub fn log_det(&self) -> f64 {
        (0..self.l.n).map(|i| 2.0 * self.l[(i, i)].re.ln()).sum()
    }

    pub fn solve(&self, b: &CVec) -> CVec {
        let n = self.l.n;
        assert_eq!(b.len(), n);
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)].re;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[(k, i)].conj() * y[k];
            }
            y[i] = s / self.l[(i, i)].re;
        }
        y
    }

    /// Inverse, returned exactly Hermitian.
    pub fn inverse(&self) -> CMat {
        let n = self.l.n;
        if n == 1 {
            let d = self.l[(0, 0)].re;
            return CMat::from_real_diag(&[1.0 / (d * d)]);
        }
        let mut inv = CMat::zeros(n);
        let mut e = CVec::zeros(n);
        for j in 0..n {
            if j > 0 {
                e[j - 1] = ZERO;
            }
            e[j] = ONE;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv.hermitian_part()
    }
}

/// Eigenvalues (unsorted) with unitary eigenvectors stored column-wise.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl HermitianEigen {
    /// `V diag(f(lambda)) V^H`
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> CMat {
        let n = self.vectors.n;
        let mapped: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        let mut m = CMat::zeros(n);
        for i in 0..n {
            for j in i..n {
                let mut acc = ZERO;
                for (k, &lam) in mapped.iter().enumerate() {
                    if lam != 0.0 {
                        acc += self.vectors[(i, k)] * self.vectors[(j, k)].conj() * lam;
                    }
                }
                m[(i, j)] = acc;
                m[(j, i)] = acc.conj();
            }
            m[(i, i)] = Complex64::new(m[(i, i)].re, 0.0);
        }
        m
    }

    /// Orthogonal projection of `v` onto the span of eigenvectors selected by `keep`.
    pub fn project(&self, v: &CVec, keep: impl Fn(f64) -> bool) -> CVec {
        let n = self.vectors.n;
        let mut out = CVec::zeros(n);
        for (k, &lam) in self.values.iter().enumerate() {
            if !keep(lam) {
                continue;
            }
            let coeff: Complex64 = (0..n).map(|i| self.vectors[(i, k)].conj() * v[i]).sum();
            for i in 0..n {
                out[i] += self.vectors[(i, k)] * coeff;
            }
        }
        out
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}
