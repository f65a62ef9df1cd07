//! Local z-scoring of an embedding: neighborhood means and covariances,
//! the pseudoinverse Mahalanobis distance built from them, and the
//! standardized embedding of the resulting kernel.

use alloc::vec::Vec;

use libm::exp;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Matrix};
use crate::spectral::{self, Bandwidth, BandwidthRule, Embedding, Extension, Kernel};

/// Relative eigenvalue cutoff for the covariance pseudoinverse.
pub const PINV_TOL: f64 = 1e-6;

/// Default neighborhood size `max(2d + 2, 20)`.
pub fn default_neighborhood(d: usize) -> usize {
    (2 * d + 2).max(20)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMoments {
    pub k: usize,
    /// `U_x`, including `x` itself.
    pub neighborhoods: Vec<Vec<usize>>,
    /// Row `x` is `μ_x`.
    pub means: Matrix,
    pub covariances: Vec<Matrix>,
    pub pseudoinverses: Vec<Matrix>,
}

impl LocalMoments {
    pub fn len(&self) -> usize {
        self.means.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean and population covariance over the `k` nearest neighbors (self
/// included) of each row of `coords`.
pub fn local_moments(coords: &Matrix, k: usize, pinv_tol: f64) -> Result<LocalMoments> {
    let (n, d) = coords.shape();
    if n == 0 {
        return Err(Error::validation("no points to whiten"));
    }
    let k = k.clamp(1, n);
    let d2 = linalg::pairwise_sq_distances(coords);
    let mut neighborhoods = Vec::with_capacity(n);
    let mut means = Matrix::zeros(n, d);
    let mut covariances = Vec::with_capacity(n);
    let mut pseudoinverses = Vec::with_capacity(n);
    for x in 0..n {
        let u = linalg::knn_row(&d2, x, k, true);
        let inv = 1.0 / u.len() as f64;
        let mu = means.row_mut(x);
        for &y in &u {
            for (m, v) in mu.iter_mut().zip(coords.row(y)) {
                *m += v * inv;
            }
        }
        let mu = means.row(x).to_vec();
        let mut cov = Matrix::zeros(d, d);
        for &y in &u {
            let c: Vec<f64> = coords.row(y).iter().zip(&mu).map(|(a, b)| a - b).collect();
            for i in 0..d {
                for j in i..d {
                    cov[(i, j)] += c[i] * c[j] * inv;
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                cov[(i, j)] = cov[(j, i)];
            }
        }
        pseudoinverses.push(linalg::symmetric_pinv(&cov, pinv_tol)?);
        covariances.push(cov);
        neighborhoods.push(u);
    }
    Ok(LocalMoments { k, neighborhoods, means, covariances, pseudoinverses })
}

fn quad(p: &Matrix, v: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..v.len() {
        s += v[i] * linalg::dot(p.row(i), v);
    }
    s
}

/// `d_t(x,y) = ½ Δᵀ(Σ_x⁺ + Σ_y⁺)Δ` with `Δ = (Φ(x) − μ_x) − (Φ(y) − μ_y)`.
/// This is a squared quantity and is used as such in the kernel.
pub fn whitened_distance(lm: &LocalMoments, coords: &Matrix, x: usize, y: usize) -> f64 {
    let delta: Vec<f64> = (0..coords.cols())
        .map(|i| (coords[(x, i)] - lm.means[(x, i)]) - (coords[(y, i)] - lm.means[(y, i)]))
        .collect();
    (0.5 * (quad(&lm.pseudoinverses[x], &delta) + quad(&lm.pseudoinverses[y], &delta))).max(0.0)
}

pub fn whitened_distances(lm: &LocalMoments, coords: &Matrix) -> Result<Matrix> {
    check_dim(lm.len(), coords.rows())?;
    let n = coords.rows();
    let mut out = Matrix::zeros(n, n);
    for x in 0..n {
        for y in (x + 1)..n {
            let v = whitened_distance(lm, coords, x, y);
            out[(x, y)] = v;
            out[(y, x)] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Standardized {
    pub embedding: Embedding,
    pub kernel: Kernel,
    /// Scale `σ` in `exp(-d_t/σ)`.
    pub sigma: f64,
}

/// Diffusion embedding of `W(x,y) = exp(−d_t(x,y)/σ)`, where `σ` follows
/// `rule` applied to the `d_t` values.
pub fn standardized_embedding(coords: &Matrix, lm: &LocalMoments, rule: BandwidthRule, d: usize, t: f64) -> Result<Standardized> {
    let dt = whitened_distances(lm, coords)?;
    let sigma = match rule {
        BandwidthRule::NearestNeighborMean { r } => spectral::nearest_neighbor_scale(&dt, r),
        BandwidthRule::Fixed { value } => value,
    };
    if !(sigma > 0.0) {
        return Err(Error::validation("whitened distances vanish; the embedding is degenerate"));
    }
    let mut kernel = spectral::exponential_kernel(&dt, sigma)?;
    kernel.bandwidth = Some(Bandwidth { rule, value: sigma });
    let embedding = spectral::diffusion_embed(&kernel, d, t)?;
    Ok(Standardized { embedding, kernel, sigma })
}

/// Asymmetric cross kernel `b(x,y) = exp(−½ [(Φ(x)−μ_y) − (Φ(y)−μ_y)]ᵀ Σ_y⁺ [..] / σ)`
/// between new points (rows of `new_coords`) and reference points.
pub fn whitened_cross_kernel(lm: &LocalMoments, ref_coords: &Matrix, new_coords: &Matrix, sigma: f64) -> Result<Matrix> {
    check_dim(ref_coords.cols(), new_coords.cols())?;
    check_dim(lm.len(), ref_coords.rows())?;
    let d = ref_coords.cols();
    let mut b = Matrix::zeros(new_coords.rows(), ref_coords.rows());
    let mut delta = alloc::vec![0.0; d];
    for x in 0..new_coords.rows() {
        for y in 0..ref_coords.rows() {
            for i in 0..d {
                let mu = lm.means[(y, i)];
                delta[i] = (new_coords[(x, i)] - mu) - (ref_coords[(y, i)] - mu);
            }
            b[(x, y)] = exp(-0.5 * quad(&lm.pseudoinverses[y], &delta) / sigma);
        }
    }
    Ok(b)
}

/// `ψ̃_i = s_i^{−1/2} B̃ ψ_i` for new points given by their `Φ^t` coordinates.
pub fn extend_standardized(
    lm: &LocalMoments,
    ref_coords: &Matrix,
    psi: &Embedding,
    new_coords: &Matrix,
    sigma: f64,
) -> Result<Extension> {
    let b = whitened_cross_kernel(lm, ref_coords, new_coords, sigma)?;
    spectral::nystrom_extend(psi, &b)
}
