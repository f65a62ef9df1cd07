//! Dense linear algebra used throughout the crate.
//!
//! Everything here works on a small row-major [`Matrix`] type. The symmetric
//! eigensolver is Householder tridiagonalization followed by implicit QL
//! (the classic `tred2`/`tql2` pair); the SVD is one-sided Jacobi.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use libm::{fabs, hypot, sqrt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
///
/// Serialized as nested row arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(&rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.to_rows()
    }
}

impl core::fmt::Display for Matrix {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        for i in 0..self.rows {
            writeln!(f, "{:?}", self.row(i))?;
        }
        Ok(())
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from row slices; every row must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch { expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            self[(i, j)] = *v;
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch { expected: self.cols, got: other.rows });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (oj, bkj) in o.iter_mut().zip(other.row(k)) {
                    *oj += aik * bkj;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.cols != x.len() {
            return Err(Error::DimensionMismatch { expected: self.cols, got: x.len() });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ x`.
    pub fn tr_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.rows != x.len() {
            return Err(Error::DimensionMismatch { expected: self.rows, got: x.len() });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn frobenius_norm(&self) -> f64 {
        sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest `|a_ij - a_ji|`; `None` for non-square matrices.
    pub fn asymmetry(&self) -> Option<f64> {
        if self.rows != self.cols {
            return None;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max(fabs(self[(i, j)] - self[(j, i)]));
            }
        }
        Some(worst)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| fabs(a - b)).fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sqrt(sq_dist(a, b))
}

/// Pairwise squared Euclidean distances between the rows of `x`.
pub fn pairwise_sq_distances(x: &Matrix) -> Matrix {
    let n = x.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sq_dist(x.row(i), x.row(j));
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Eigen-decomposition of a symmetric matrix.
///
/// `values` are sorted descending; column `i` of `vectors` is the unit
/// eigenvector for `values[i]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

const QL_MAX_SWEEPS: usize = 60;

/// Symmetric eigen-decomposition (Householder + implicit QL).
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::DimensionMismatch { expected: n, got: a.cols() });
    }
    if !a.is_finite() {
        return Err(Error::validation("symmetric_eigen: matrix has non-finite entries"));
    }
    if n == 0 {
        return Ok(SymmetricEigen { values: Vec::new(), vectors: Matrix::zeros(0, 0) });
    }
    let mut v = a.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut v, &mut d, &mut e);
    // The QL rotations touch pairs of eigenvectors; keep them as rows.
    let mut z = v.transpose();
    tql2(&mut z, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| d[i]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| z[(order[c], r)]);
    Ok(SymmetricEigen { values, vectors })
}

fn tred2(v: &mut Matrix, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += fabs(*dk);
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
                v[(j, i)] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = sqrt(h);
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n.saturating_sub(1) {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    v[(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = 0.0;
    }
    v[(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL on the tridiagonal (d, e); `z` holds eigenvectors as rows.
fn tql2(z: &mut Matrix, d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(fabs(d[l]) + fabs(e[l]));
        let mut m = l;
        while m < n {
            if fabs(e[m]) <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > QL_MAX_SWEEPS {
                    return Err(Error::NoConvergence { residual: fabs(e[l]) });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = hypot(p, 1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = hypot(p, e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let cols = z.cols();
                    let (lo, hi) = z.data.split_at_mut((i + 1) * cols);
                    let zi = &mut lo[i * cols..];
                    let zi1 = &mut hi[..cols];
                    for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                        let hk = *b;
                        *b = s * *a + c * hk;
                        *a = c * *a - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if fabs(e[l]) <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Thin singular value decomposition `a = u · diag(s) · vᵀ`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

/// One-sided Jacobi SVD for `rows >= cols`. Singular values descending; `u`
/// is completed to an orthonormal set even when `a` is rank deficient.
pub fn svd(a: &Matrix) -> Result<Svd> {
    let (m, n) = a.shape();
    if m < n {
        let t = svd(&a.transpose())?;
        return Ok(Svd { u: t.v, s: t.s, v: t.u });
    }
    // Work on columns: store Aᵀ so each column is a contiguous row.
    let mut ut = a.transpose();
    let mut vt = Matrix::identity(n);
    let tol = 1e-15;
    let mut converged = false;
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(ut.row(p), ut.row(p));
                let beta = dot(ut.row(q), ut.row(q));
                let gamma = dot(ut.row(p), ut.row(q));
                if gamma == 0.0 || fabs(gamma) <= tol * sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta >= 0.0 { 1.0 } else { -1.0 } / (fabs(zeta) + sqrt(1.0 + zeta * zeta));
                let c = 1.0 / sqrt(1.0 + t * t);
                let s = c * t;
                rotate_rows(&mut ut, p, q, c, s);
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { residual: f64::NAN });
    }
    let mut sv: Vec<f64> = (0..n).map(|j| norm(ut.row(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]).then(i.cmp(&j)));
    let smax = order.first().map_or(0.0, |&i| sv[i]);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (c, &j) in order.iter().enumerate() {
        let sj = sv[j];
        let col = if sj > smax * 1e-14 && sj > 0.0 {
            ut.row(j).iter().map(|x| x / sj).collect()
        } else {
            sv[j] = 0.0;
            Vec::new()
        };
        u_cols.push(col);
        s.push(sv[j]);
        v.set_column(c, vt.row(j));
    }
    complete_orthonormal(&mut u_cols, m);
    let mut u = Matrix::zeros(m, n);
    for (c, col) in u_cols.iter().enumerate() {
        u.set_column(c, col);
    }
    Ok(Svd { u, s, v })
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols;
    let (lo, hi) = m.data.split_at_mut(q * cols);
    let rp = &mut lo[p * cols..(p + 1) * cols];
    let rq = &mut hi[..cols];
    for (a, b) in rp.iter_mut().zip(rq.iter_mut()) {
        let x = *a;
        let y = *b;
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Replaces empty entries of `cols` with unit vectors orthogonal to the rest.
fn complete_orthonormal(cols: &mut [Vec<f64>], dim: usize) {
    let mut basis = 0;
    for idx in 0..cols.len() {
        if !cols[idx].is_empty() {
            continue;
        }
        while basis < dim {
            let mut cand = vec![0.0; dim];
            cand[basis] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for other in cols.iter().filter(|c| !c.is_empty()) {
                    let proj = dot(&cand, other);
                    for (x, o) in cand.iter_mut().zip(other) {
                        *x -= proj * o;
                    }
                }
            }
            let nrm = norm(&cand);
            if nrm > 1e-8 {
                cand.iter_mut().for_each(|x| *x /= nrm);
                cols[idx] = cand;
                break;
            }
        }
    }
}

/// Moore–Penrose pseudoinverse of a symmetric matrix via its eigenvalues.
/// Eigenvalues with `|λ| <= rel_tol · max|λ|` are treated as zero.
pub fn symmetric_pinv(a: &Matrix, rel_tol: f64) -> Result<Matrix> {
    let n = a.rows();
    let eig = symmetric_eigen(a)?;
    let lmax = eig.values.iter().fold(0.0f64, |acc, v| acc.max(fabs(*v)));
    let mut out = Matrix::zeros(n, n);
    if lmax == 0.0 {
        return Ok(out);
    }
    let cut = rel_tol * lmax;
    for (k, &lam) in eig.values.iter().enumerate() {
        if fabs(lam) <= cut {
            continue;
        }
        let inv = 1.0 / lam;
        for i in 0..n {
            let vik = eig.vectors[(i, k)] * inv;
            if vik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[(i, j)] += vik * eig.vectors[(j, k)];
            }
        }
    }
    // Symmetrize away rounding.
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = m;
            out[(j, i)] = m;
        }
    }
    Ok(out)
}

/// Operator 2-norm by power iteration on `wᵀw`.
///
/// Iterates until the relative change of the estimate drops below `tol`.
pub fn spectral_norm(w: &Matrix, tol: f64) -> f64 {
    let n = w.cols();
    if n == 0 || w.rows() == 0 {
        return 0.0;
    }
    // Deterministic, non-degenerate start.
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut estimate = 0.0;
    for _ in 0..100_000 {
        let y = w.matvec(&x).expect("dims");
        let z = w.tr_matvec(&y).expect("dims");
        let nz = norm(&z);
        if nz == 0.0 {
            return 0.0;
        }
        let next = sqrt(nz);
        x = z.into_iter().map(|v| v / nz).collect();
        if fabs(next - estimate) <= tol * next {
            // Rayleigh quotient at the converged vector is the sharper estimate.
            let y = w.matvec(&x).expect("dims");
            return norm(&y).max(next);
        }
        estimate = next;
    }
    estimate
}

/// Least-squares solution of `a x ≈ b` via Householder QR.
///
/// Returns `None` when `a` is numerically rank deficient.
pub fn lstsq(a: &Matrix, b: &[f64]) -> Option<Vec<f64>> {
    let (m, n) = a.shape();
    if b.len() != m || n > m {
        return None;
    }
    // Column-major working copy.
    let mut q = a.transpose();
    let mut rhs = b.to_vec();
    let scale = a.frobenius_norm().max(1e-300);
    for k in 0..n {
        let col = &mut q.row_mut(k)[k..];
        let alpha = norm(col);
        if alpha <= 1e-13 * scale {
            return None;
        }
        let sign = if col[0] >= 0.0 { 1.0 } else { -1.0 };
        col[0] += sign * alpha;
        let vnorm2 = dot(col, col);
        let v: Vec<f64> = col.to_vec();
        // Store R's diagonal.
        q.row_mut(k)[k] = -sign * alpha;
        for j in (k + 1)..n {
            let cj = &mut q.row_mut(j)[k..];
            let f = 2.0 * dot(&v, cj) / vnorm2;
            for (c, vi) in cj.iter_mut().zip(&v) {
                *c -= f * vi;
            }
        }
        let r = &mut rhs[k..];
        let f = 2.0 * dot(&v, r) / vnorm2;
        for (c, vi) in r.iter_mut().zip(&v) {
            *c -= f * vi;
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = rhs[k];
        for j in (k + 1)..n {
            s -= q[(j, k)] * x[j];
        }
        x[k] = s / q[(k, k)];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Median of a slice (mean of the two central values for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Indices of the `k` nearest rows to row `i` (self included as the first
/// entry), ties broken by index.
pub fn knn_row(d2: &Matrix, i: usize, k: usize, include_self: bool) -> Vec<usize> {
    let n = d2.rows();
    let mut idx: Vec<usize> = (0..n).filter(|&j| include_self || j != i).collect();
    idx.sort_by(|&a, &b| {
        let ka = if a == i { f64::NEG_INFINITY } else { d2[(i, a)] };
        let kb = if b == i { f64::NEG_INFINITY } else { d2[(i, b)] };
        ka.total_cmp(&kb).then(a.cmp(&b))
    });
    idx.truncate(k.min(idx.len()));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = next();
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    #[test]
    fn eigen_reconstructs_and_is_orthonormal() {
        for &n in &[1usize, 2, 5, 17, 40] {
            let a = random_symmetric(n, n as u64 + 3);
            let eig = symmetric_eigen(&a).unwrap();
            for w in eig.values.windows(2) {
                assert!(w[0] >= w[1]);
            }
            for k in 0..n {
                let v = eig.vectors.column(k);
                let av = a.matvec(&v).unwrap();
                let res: f64 = av.iter().zip(&v).map(|(x, y)| (x - eig.values[k] * y).abs()).fold(0.0, f64::max);
                assert!(res < 1e-12, "n={n} k={k} res={res}");
                assert!((norm(&v) - 1.0).abs() < 1e-12);
            }
            let vtv = eig.vectors.transpose().matmul(&eig.vectors).unwrap();
            assert!(vtv.max_abs_diff(&Matrix::identity(n)) < 1e-12);
        }
    }

    #[test]
    fn eigen_of_diagonal_and_repeated() {
        let mut a = Matrix::identity(4);
        a[(2, 2)] = 3.0;
        let eig = symmetric_eigen(&a).unwrap();
        assert_eq!(eig.values, vec![3.0, 1.0, 1.0, 1.0]);
        let ones = Matrix::from_fn(5, 5, |_, _| 1.0);
        let eig = symmetric_eigen(&ones).unwrap();
        assert!((eig.values[0] - 5.0).abs() < 1e-12);
        assert!(eig.values[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn svd_reconstructs() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 0.5], [0.0, -1.0, 3.0], [2.0, 2.0, 2.0], [1.0, 0.0, -1.0]]).unwrap();
        let s = svd(&a).unwrap();
        let mut us = s.u.clone();
        for i in 0..us.rows() {
            for j in 0..us.cols() {
                us[(i, j)] *= s.s[j];
            }
        }
        let back = us.matmul(&s.v.transpose()).unwrap();
        assert!(back.max_abs_diff(&a) < 1e-12);
        assert!(s.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn svd_rank_deficient_has_orthonormal_u() {
        let a = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let s = svd(&a).unwrap();
        assert!(s.s[1].abs() < 1e-12);
        let utu = s.u.transpose().matmul(&s.u).unwrap();
        assert!(utu.max_abs_diff(&Matrix::identity(2)) < 1e-12);
    }

    #[test]
    fn pinv_penrose_conditions() {
        let b = Matrix::from_rows(&[[1.0, 0.0], [2.0, 0.0], [0.5, 0.0]]).unwrap();
        let a = b.transpose().matmul(&b).unwrap(); // rank 1
        let p = symmetric_pinv(&a, 1e-6).unwrap();
        let apa = a.matmul(&p).unwrap().matmul(&a).unwrap();
        let pap = p.matmul(&a).unwrap().matmul(&p).unwrap();
        assert!(apa.max_abs_diff(&a) < 1e-12);
        assert!(pap.max_abs_diff(&p) < 1e-12);
        assert!((p[(0, 0)] - 1.0 / 5.25).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let a = Matrix::from_rows(&[[3.0, 1.0, 0.0], [1.0, -2.0, 4.0]]).unwrap();
        let s = svd(&a).unwrap();
        assert!((spectral_norm(&a, 1e-12) - s.s[0]).abs() < 1e-9);
        let w = Matrix::from_rows(&[[2.0, 0.0], [0.0, 2.0]]).unwrap();
        assert!((spectral_norm(&w, 1e-8) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lstsq_solves_overdetermined() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let x = lstsq(&a, &[1.0, 2.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
        let dup = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0]]).unwrap();
        assert!(lstsq(&dup, &[1.0, 2.0]).is_none());
    }
}
