//! Kernels, Markov normalization, diffusion embeddings and Nyström extension.

use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, pow, sqrt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, symmetric_eigen, Matrix};

/// Default neighbor rank for the bandwidth rule.
pub const DEFAULT_BANDWIDTH_RANK: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BandwidthRule {
    /// Mean distance from each point to its `r`-th nearest neighbor.
    NearestNeighborMean { r: usize },
    Fixed { value: f64 },
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule::NearestNeighborMean { r: DEFAULT_BANDWIDTH_RANK }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub rule: BandwidthRule,
    pub value: f64,
}

/// Symmetric non-negative affinity with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    entries: Matrix,
    pub bandwidth: Option<Bandwidth>,
}

impl Kernel {
    /// Wraps a matrix, checking symmetry, range and unit diagonal.
    pub fn new(entries: Matrix) -> Result<Self> {
        let n = entries.rows();
        if n != entries.cols() {
            return Err(Error::DimensionMismatch { expected: n, got: entries.cols() });
        }
        if !entries.is_finite() {
            return Err(Error::validation("kernel has non-finite entries"));
        }
        if entries.asymmetry().unwrap_or(0.0) > 1e-12 {
            return Err(Error::validation("kernel is not symmetric"));
        }
        for i in 0..n {
            if (entries[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::validation("kernel diagonal must be 1"));
            }
            if entries.row(i).iter().any(|v| *v < 0.0 || *v > 1.0 + 1e-12) {
                return Err(Error::validation("kernel entries must lie in [0, 1]"));
            }
        }
        Ok(Kernel { entries, bandwidth: None })
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn size(&self) -> usize {
        self.entries.rows()
    }
}

/// Mean over rows of the `r`-th smallest off-diagonal entry of `d`.
/// `r` is clamped to `n - 1`.
pub fn nearest_neighbor_scale(d: &Matrix, r: usize) -> f64 {
    let n = d.rows();
    if n < 2 {
        return 0.0;
    }
    let r = r.clamp(1, n - 1);
    let mut total = 0.0;
    let mut row: Vec<f64> = Vec::with_capacity(n - 1);
    for i in 0..n {
        row.clear();
        row.extend((0..n).filter(|&j| j != i).map(|j| d[(i, j)]));
        row.select_nth_unstable_by(r - 1, f64::total_cmp);
        total += row[r - 1];
    }
    total / n as f64
}

/// `exp(-d(x,y)/scale)` for a matrix of pre-computed dissimilarities.
pub fn exponential_kernel(d: &Matrix, scale: f64) -> Result<Kernel> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::validation("kernel bandwidth must be positive; are all points identical?"));
    }
    let n = d.rows();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let v = exp(-d[(i, j)] / scale);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Kernel::new(k)
}

/// Gaussian kernel `exp(-‖x−y‖²/σ²)` on the rows of `vectors`.
pub fn gaussian_kernel(vectors: &Matrix, rule: BandwidthRule) -> Result<Kernel> {
    if vectors.rows() < 2 {
        return Err(Error::validation("gaussian kernel needs at least two vectors"));
    }
    let d2 = linalg::pairwise_sq_distances(vectors);
    let sigma = match rule {
        BandwidthRule::NearestNeighborMean { r } => {
            let dist = Matrix::from_fn(d2.rows(), d2.cols(), |i, j| sqrt(d2[(i, j)]));
            nearest_neighbor_scale(&dist, r)
        }
        BandwidthRule::Fixed { value } => value,
    };
    if !(sigma > 0.0) {
        return Err(Error::validation("bandwidth is zero: all points are identical"));
    }
    let mut k = exponential_kernel(&d2, sigma * sigma)?;
    k.bandwidth = Some(Bandwidth { rule, value: sigma });
    Ok(k)
}

/// Row-stochastic `P = D⁻¹K` together with its symmetric conjugate.
#[derive(Debug, Clone)]
pub struct MarkovOperator {
    pub transition: Matrix,
    pub degrees: Vec<f64>,
    /// Stationary measure `π = d / Σd`.
    pub stationary: Vec<f64>,
    /// `D^{-1/2} K D^{-1/2}`.
    pub symmetric: Matrix,
}

pub fn markov_normalize(k: &Kernel) -> Result<MarkovOperator> {
    let n = k.size();
    let e = k.entries();
    let degrees: Vec<f64> = (0..n).map(|i| e.row(i).iter().sum()).collect();
    if let Some(i) = degrees.iter().position(|d| !(*d > 0.0)) {
        return Err(Error::IsolatedPoint(i));
    }
    let total: f64 = degrees.iter().sum();
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / sqrt(*d)).collect();
    let transition = Matrix::from_fn(n, n, |i, j| e[(i, j)] / degrees[i]);
    let mut symmetric = Matrix::from_fn(n, n, |i, j| e[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (symmetric[(i, j)] + symmetric[(j, i)]);
            symmetric[(i, j)] = m;
            symmetric[(j, i)] = m;
        }
    }
    Ok(MarkovOperator { transition, stationary: degrees.iter().map(|d| d / total).collect(), degrees, symmetric })
}

impl MarkovOperator {
    pub fn size(&self) -> usize {
        self.degrees.len()
    }

    /// All eigenvalues of `P`, descending (the first is the trivial 1).
    pub fn spectrum(&self) -> Result<Vec<f64>> {
        Ok(symmetric_eigen(&self.symmetric)?.values)
    }

    /// Eigenpairs of `P` with right eigenvectors orthonormal under the
    /// stationary measure; column 0 is the trivial constant vector.
    pub fn eigenpairs(&self) -> Result<(Vec<f64>, Matrix)> {
        let eig = symmetric_eigen(&self.symmetric)?;
        let n = self.size();
        let total: f64 = self.degrees.iter().sum();
        // φ = D^{-1/2} v · sqrt(Σd) gives Σ π φ_i φ_j = δ_ij.
        let scale: Vec<f64> = self.degrees.iter().map(|d| sqrt(total / d)).collect();
        let mut phi = Matrix::zeros(n, n);
        for c in 0..n {
            let mut col: Vec<f64> = (0..n).map(|i| eig.vectors[(i, c)] * scale[i]).collect();
            fix_sign(&mut col);
            phi.set_column(c, &col);
        }
        Ok((eig.values, phi))
    }
}

/// Flips `v` so that its largest-magnitude entry is positive (ties: lowest
/// index).
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() * (1.0 + 1e-9) {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// `λ^t`, keeping the sign of negative eigenvalues for fractional `t`.
pub fn signed_pow(lambda: f64, t: f64) -> f64 {
    if lambda >= 0.0 || libm::trunc(t) == t {
        pow(lambda, t)
    } else {
        -pow(-lambda, t)
    }
}

/// Nontrivial eigenpairs of a Markov-normalized kernel and the diffusion
/// time used to build coordinates `λ_i^t φ_i(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub eigenvalues: Vec<f64>,
    /// `n × d`; column `i` is `φ_{i+1}`.
    pub eigenvectors: Matrix,
    pub t: f64,
    pub stationary: Vec<f64>,
    pub bandwidth: Option<Bandwidth>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn len(&self) -> usize {
        self.eigenvectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Diffusion coordinates `Φ^t`.
    pub fn coordinates(&self) -> Matrix {
        self.coordinates_at(self.t)
    }

    pub fn coordinates_at(&self, t: f64) -> Matrix {
        let pw: Vec<f64> = self.eigenvalues.iter().map(|l| signed_pow(*l, t)).collect();
        Matrix::from_fn(self.len(), self.dim(), |i, j| pw[j] * self.eigenvectors[(i, j)])
    }
}

/// Eigen-residual tolerance relative to `‖φ‖`.
const RESIDUAL_TOL: f64 = 1e-8;

/// Top-`d` nontrivial diffusion embedding of `k` at time `t`.
pub fn diffusion_embed(k: &Kernel, d: usize, t: f64) -> Result<Embedding> {
    let n = k.size();
    if d >= n {
        return Err(Error::validation(alloc::format!("embedding dimension {d} must be below the number of points {n}")));
    }
    if !(t > 0.0) {
        return Err(Error::validation("diffusion time must be positive"));
    }
    let sizes = component_sizes(k.entries());
    if sizes.len() > 1 {
        return Err(Error::Disconnected { components: sizes.len(), sizes });
    }
    let op = markov_normalize(k)?;
    let (values, phi) = op.eigenpairs()?;
    let mut eigenvectors = Matrix::zeros(n, d);
    let mut worst = 0.0f64;
    for c in 0..d {
        let col = phi.column(c + 1);
        let pc = op.transition.matvec(&col)?;
        let res = linalg::norm(&pc.iter().zip(&col).map(|(a, b)| a - values[c + 1] * b).collect::<Vec<_>>());
        worst = worst.max(res / linalg::norm(&col).max(1e-300));
        eigenvectors.set_column(c, &col);
    }
    if worst > RESIDUAL_TOL {
        return Err(Error::NoConvergence { residual: worst });
    }
    Ok(Embedding { eigenvalues: values[1..=d].to_vec(), eigenvectors, t, stationary: op.stationary, bandwidth: k.bandwidth })
}

/// Out-of-sample eigenvectors; `skipped` lists axes whose eigenvalue was too
/// small to invert (their column is left at zero).
#[derive(Debug, Clone, PartialEq)]
pub struct Extension {
    pub values: Matrix,
    pub skipped: Vec<usize>,
}

pub const MIN_EXTENSION_EIGENVALUE: f64 = 1e-12;

/// Row-normalizes a non-negative cross kernel.
pub fn row_normalize(cross: &Matrix) -> Result<Matrix> {
    let mut out = cross.clone();
    for i in 0..cross.rows() {
        let s: f64 = cross.row(i).iter().sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::IsolatedPoint(i));
        }
        out.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    Ok(out)
}

/// Nyström extension `φ̃_i = λ_i^{-1/2} Ã φ_i` with `Ã` the row-stochastic
/// normalization of `cross` (`N × n`, new points by reference points).
///
/// Extending the reference set to itself yields `λ_i^{1/2} φ_i`, not `φ_i`.
pub fn nystrom_extend(emb: &Embedding, cross: &Matrix) -> Result<Extension> {
    crate::error::check_dim(emb.len(), cross.cols())?;
    let a = row_normalize(cross)?;
    extend_with(&a, &emb.eigenvalues, &emb.eigenvectors)
}

pub(crate) fn extend_with(a: &Matrix, eigenvalues: &[f64], eigenvectors: &Matrix) -> Result<Extension> {
    let d = eigenvalues.len();
    let prod = a.matmul(eigenvectors)?;
    let mut values = Matrix::zeros(a.rows(), d);
    let mut skipped = Vec::new();
    for (c, &lam) in eigenvalues.iter().enumerate() {
        if lam <= MIN_EXTENSION_EIGENVALUE {
            skipped.push(c);
            continue;
        }
        let f = 1.0 / sqrt(lam);
        for i in 0..a.rows() {
            values[(i, c)] = f * prod[(i, c)];
        }
    }
    Ok(Extension { values, skipped })
}

/// Coordinates `λ_i^t φ̃_i` of extended points.
pub fn extended_coordinates(emb: &Embedding, ext: &Extension) -> Matrix {
    let pw: Vec<f64> = emb.eigenvalues.iter().map(|l| signed_pow(*l, emb.t)).collect();
    Matrix::from_fn(ext.values.rows(), emb.dim(), |i, j| pw[j] * ext.values[(i, j)])
}

/// Gaussian cross kernel between new vectors and reference vectors using a
/// fixed bandwidth σ.
pub fn gaussian_cross_kernel(new: &Matrix, reference: &Matrix, sigma: f64) -> Result<Matrix> {
    crate::error::check_dim(reference.cols(), new.cols())?;
    if !(sigma > 0.0) {
        return Err(Error::validation("cross kernel bandwidth must be positive"));
    }
    let s2 = sigma * sigma;
    Ok(Matrix::from_fn(new.rows(), reference.rows(), |i, j| exp(-linalg::sq_dist(new.row(i), reference.row(j)) / s2)))
}

/// Connected components of the graph with edges where `k > 0`; sizes sorted
/// descending.
pub fn component_sizes(k: &Matrix) -> Vec<usize> {
    let n = k.rows();
    let mut label = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        let c = sizes.len();
        let mut stack = vec![s];
        label[s] = c;
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            for j in 0..n {
                if label[j] == usize::MAX && k[(i, j)] > 0.0 {
                    label[j] = c;
                    stack.push(j);
                }
            }
        }
        sizes.push(size);
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes
}
