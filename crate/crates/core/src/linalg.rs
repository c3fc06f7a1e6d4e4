//! Small dense symmetric-matrix kernels. Dimensions in this crate are modest
//! (tens at most), so plain row-major storage and O(n³) routines suffice.

// Triangular solves read best with explicit indices.
#![allow(clippy::needless_range_loop)]

use crate::scalar::Scalar;

/// Square matrix in row-major order. Symmetry is the caller's contract for
/// the routines that need it.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat<S> {
    n: usize,
    data: Vec<S>,
}

impl<S: Scalar> SymMat<S> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![S::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, S::one())
    }

    pub fn scaled_identity(n: usize, s: S) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, s);
        }
        m
    }

    pub fn diagonal(d: &[S]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds from row-major data; `None` if the length is not a square.
    pub fn from_row_major(n: usize, data: Vec<S>) -> Option<Self> {
        (data.len() == n * n).then_some(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Option<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return None;
        }
        Some(Self {
            n,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.n + j] = v;
    }

    pub fn rows(&self) -> Vec<Vec<S>> {
        self.data.chunks(self.n.max(1)).map(|r| r.to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn max_asymmetry(&self) -> S {
        let mut worst = S::zero();
        for i in 0..self.n {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn trace(&self) -> S {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// `a·self + b·I`
    pub fn affine_identity(&self, a: S, b: S) -> Self {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v = *v * a;
        }
        for i in 0..self.n {
            let v = out.get(i, i) + b;
            out.set(i, i, v);
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    pub fn scale(&self, s: S) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|&a| a * s).collect(),
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == S::zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] = out.data[i * n + j] + a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// Averages the matrix with its transpose.
    pub fn symmetrized(&self) -> Self {
        let half = S::lit(0.5);
        let mut out = self.clone();
        for i in 0..self.n {
            for j in 0..i {
                let v = (self.get(i, j) + self.get(j, i)) * half;
                out.set(i, j, v);
                out.set(j, i, v);
            }
        }
        out
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky<S> {
    n: usize,
    l: Vec<S>,
}

impl<S: Scalar> Cholesky<S> {
    /// Returns `None` when a pivot is not strictly positive.
    pub fn factor(a: &SymMat<S>) -> Option<Self> {
        let n = a.dim();
        let mut l = vec![S::zero(); n * n];
        for j in 0..n {
            let mut diag = a.get(j, j);
            for k in 0..j {
                diag = diag - l[j * n + k] * l[j * n + k];
            }
            if !(diag > S::zero()) || !diag.is_finite() {
                return None;
            }
            let ljj = diag.sqrt();
            l[j * n + j] = ljj;
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s = s - l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / ljj;
            }
        }
        Some(Self { n, l })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> S {
        self.l[i * self.n + j]
    }

    /// `ln det A = 2 Σ ln L_ii`
    pub fn log_det(&self) -> S {
        let two = S::lit(2.0);
        (0..self.n).map(|i| self.entry(i, i).ln()).sum::<S>() * two
    }

    /// Solves `L z = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [S]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s = s - self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Solves `Lᵀ y = z` in place.
    pub fn solve_upper_t_in_place(&self, z: &mut [S]) {
        let n = self.n;
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s = s - self.l[k * n + i] * z[k];
            }
            z[i] = s / self.l[i * n + i];
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[S]) -> Vec<S> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_t_in_place(&mut x);
        x
    }

    /// `L ξ`, used to colour standard-normal draws.
    pub fn lower_mul(&self, xi: &[S], out: &mut [S]) {
        let n = self.n;
        for i in 0..n {
            out[i] = (0..=i).map(|k| self.l[i * n + k] * xi[k]).sum();
        }
    }

    pub fn inverse(&self) -> SymMat<S> {
        let n = self.n;
        let mut inv = SymMat::zeros(n);
        let mut e = vec![S::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = S::zero());
            e[j] = S::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv.set(i, j, col[i]);
            }
        }
        inv.symmetrized()
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// columns of the second result.
pub fn sym_eigen<S: Scalar>(a: &SymMat<S>) -> (Vec<S>, SymMat<S>) {
    let n = a.dim();
    let mut m = a.symmetrized();
    let mut v = SymMat::identity(n);
    let eps = S::epsilon();
    for _sweep in 0..100 {
        let mut off = S::zero();
        let mut scale = S::zero();
        for i in 0..n {
            scale = scale + m.get(i, i) * m.get(i, i);
            for j in 0..i {
                off = off + m.get(i, j) * m.get(i, j);
            }
        }
        if off <= eps * eps * scale.max(S::min_positive_value()) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == S::zero() {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (S::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(i, i).partial_cmp(&m.get(j, j)).unwrap());
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vecs = SymMat::zeros(n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vecs.set(k, new, v.get(k, old));
        }
    }
    (values, vecs)
}

/// Principal square root of a symmetric positive semidefinite matrix.
/// Tiny negative eigenvalues from rounding are clamped to zero.
pub fn sqrt_psd<S: Scalar>(a: &SymMat<S>) -> SymMat<S> {
    let n = a.dim();
    let (vals, vecs) = sym_eigen(a);
    let mut out = SymMat::zeros(n);
    for (k, &lam) in vals.iter().enumerate() {
        let r = lam.max(S::zero()).sqrt();
        for i in 0..n {
            for j in 0..n {
                let v = out.get(i, j) + r * vecs.get(i, k) * vecs.get(j, k);
                out.set(i, j, v);
            }
        }
    }
    out.symmetrized()
}
