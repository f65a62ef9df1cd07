//! Internal validation: Lipschitz tables, neighborhood mass, spectral
//! dimension, affinity histograms, the label separation bound, baseline
//! rankings, confusion matrices and embedding alignment.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;
use serde::{Deserialize, Serialize};

use crate::dataset::DataMatrix;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Matrix};
use crate::spectral::{self, Kernel};

/// Neighbors used by the local estimators.
pub const DEFAULT_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEntry {
    pub feature: String,
    pub value: f64,
    /// The feature has zero range; `value` is 0.
    pub degenerate: bool,
}

/// Largest `|f(x) − f(y)| / ‖Φ(x) − Φ(y)‖` per range-normalized feature.
///
/// Pairs are `(x, y)` with `y` among the `k` nearest neighbors of `x`, or all
/// pairs when `k` is `None`. Coincident points are skipped. Sorted ascending.
pub fn feature_lipschitz(coords: &Matrix, features: &Matrix, names: &[String], k: Option<usize>) -> Result<Vec<LipschitzEntry>> {
    check_dim(coords.rows(), features.rows())?;
    check_dim(features.cols(), names.len())?;
    let n = coords.rows();
    let d2 = linalg::pairwise_sq_distances(coords);
    let pairs: Vec<(usize, usize)> = match k {
        Some(k) => (0..n).flat_map(|x| linalg::knn_row(&d2, x, k, false).into_iter().map(move |y| (x, y))).collect(),
        None => (0..n).flat_map(|x| ((x + 1)..n).map(move |y| (x, y))).collect(),
    };
    let mut out = Vec::with_capacity(names.len());
    for (c, name) in names.iter().enumerate() {
        let col = features.column(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            out.push(LipschitzEntry { feature: name.clone(), value: 0.0, degenerate: true });
            continue;
        }
        let range = hi - lo;
        let mut best = 0.0f64;
        for &(x, y) in &pairs {
            let dist = sqrt(d2[(x, y)]);
            if dist > 0.0 {
                best = best.max((col[x] - col[y]).abs() / range / dist);
            }
        }
        out.push(LipschitzEntry { feature: name.clone(), value: best, degenerate: false });
    }
    out.sort_by(|a, b| a.value.total_cmp(&b.value).then_with(|| a.feature.cmp(&b.feature)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodMass {
    pub counts: Vec<usize>,
    pub mean: f64,
    pub sd: f64,
    pub include_self: bool,
}

/// Smallest number of neighbors whose transition probabilities, taken in
/// decreasing order, reach half of the row mass. When `include_self` is
/// false the diagonal is dropped and the rest of the row renormalized.
pub fn neighborhood_mass(p: &Matrix, include_self: bool) -> NeighborhoodMass {
    let n = p.rows();
    let mut counts = Vec::with_capacity(n);
    let mut row = Vec::with_capacity(n);
    for x in 0..n {
        row.clear();
        row.extend((0..p.cols()).filter(|&y| include_self || y != x).map(|y| p[(x, y)]));
        row.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = row.iter().sum();
        let mut acc = 0.0;
        let mut count = 0;
        for v in &row {
            if acc >= 0.5 * total {
                break;
            }
            acc += v;
            count += 1;
        }
        counts.push(count);
    }
    let (mean, sd) = mean_sd(&counts.iter().map(|c| *c as f64).collect::<Vec<_>>());
    NeighborhoodMass { counts, mean, sd, include_self }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
    (mean, sqrt(var))
}

pub const SPECTRAL_CUTOFF: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDimension {
    pub dim: usize,
    pub t: f64,
    /// `S_i^t` for the nontrivial eigenvalues, descending.
    pub curve: Vec<f64>,
    pub cutoff: f64,
}

/// Number of nontrivial Markov eigenvalues with `S_i^t > cutoff`, where
/// `t = 1/(1 − S_1)`.
pub fn spectral_dimension(k: &Kernel, cutoff: f64) -> Result<SpectralDimension> {
    let values = spectral::markov_normalize(k)?.spectrum()?;
    if values.len() > 1 && values[1] >= 1.0 - 1e-12 {
        let sizes = spectral::component_sizes(k.entries());
        return Err(Error::Disconnected { components: sizes.len(), sizes });
    }
    spectral_dimension_from(&values[1..], cutoff)
}

/// Same as [`spectral_dimension`] from the nontrivial eigenvalues.
pub fn spectral_dimension_from(nontrivial: &[f64], cutoff: f64) -> Result<SpectralDimension> {
    let s1 = nontrivial.first().copied().unwrap_or(0.0);
    if s1 >= 1.0 {
        return Err(Error::validation("leading nontrivial eigenvalue is 1; the kernel is disconnected"));
    }
    let t = 1.0 / (1.0 - s1);
    let curve: Vec<f64> = nontrivial.iter().map(|s| spectral::signed_pow(*s, t)).collect();
    let dim = curve.iter().rposition(|v| *v > cutoff).map_or(0, |i| i + 1);
    Ok(SpectralDimension { dim, t, curve, cutoff })
}

/// Affinities below this are left out of the histograms.
pub const HISTOGRAM_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityHistograms {
    /// Lower bin edges, starting at [`HISTOGRAM_FLOOR`].
    pub thresholds: Vec<f64>,
    /// Unequal-label pair counts per bin.
    pub hist_unequal: Vec<usize>,
    pub p_unequal: Vec<f64>,
    pub p_equal: Vec<f64>,
    /// `P_≠(t)/P_=(t)`; `None` where no equal-label pair exceeds `t`.
    pub ratio: Vec<Option<f64>>,
    pub unequal_pairs: usize,
    pub equal_pairs: usize,
}

/// Survival probabilities `P(A(x,y) > t)` over unequal- and equal-label pairs.
pub fn affinity_histograms(a: &Matrix, g: &[f64], bins: usize) -> Result<AffinityHistograms> {
    check_dim(a.rows(), g.len())?;
    let bins = bins.max(1);
    let width = (1.0 - HISTOGRAM_FLOOR) / bins as f64;
    let thresholds: Vec<f64> = (0..bins).map(|b| HISTOGRAM_FLOOR + b as f64 * width).collect();
    let (mut neq, mut eq) = (Vec::new(), Vec::new());
    let n = g.len();
    for x in 0..n {
        for y in (x + 1)..n {
            if g[x] != g[y] { neq.push(a[(x, y)]) } else { eq.push(a[(x, y)]) }
        }
    }
    if neq.is_empty() {
        return Err(Error::validation("all points share one label; no unequal-label pairs"));
    }
    let mut hist_unequal = vec![0; bins];
    for v in &neq {
        if *v >= HISTOGRAM_FLOOR {
            let b = (((v - HISTOGRAM_FLOOR) / width) as usize).min(bins - 1);
            hist_unequal[b] += 1;
        }
    }
    let survival = |vals: &[f64], t: f64| {
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().filter(|v| **v > t).count() as f64 / vals.len() as f64
        }
    };
    let p_unequal: Vec<f64> = thresholds.iter().map(|t| survival(&neq, *t)).collect();
    let p_equal: Vec<f64> = thresholds.iter().map(|t| survival(&eq, *t)).collect();
    let ratio = p_unequal.iter().zip(&p_equal).map(|(u, e)| if *e > 0.0 { Some(u / e) } else { None }).collect();
    Ok(AffinityHistograms { thresholds, hist_unequal, p_unequal, p_equal, ratio, unequal_pairs: neq.len(), equal_pairs: eq.len() })
}

/// Floating-point slack when checking the separation bound.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    /// `E_≠ |f(x) − f(y)|²` over ordered pairs with `g(x) ≠ g(y)`.
    pub lhs: f64,
    /// `E_≠ |g(x) − g(y)|²`.
    pub e_g: f64,
    /// Ordered unequal-label pair count.
    pub s: usize,
    /// `max_i #{y : g(y) ≠ i}`.
    pub s_max: usize,
    /// `max_i S_i · n / S`.
    pub factor: f64,
    /// `C = (1/n) Σ (g − f)²`.
    pub cost: f64,
    /// `E_≠|g-gap|² − 2·factor·C`.
    pub rhs: f64,
    pub holds: bool,
    /// `½ E_≠|g-gap|² − 4·factor·C`, which always lower-bounds `lhs`.
    pub rhs_corrected: f64,
}

/// Compares the average output gap across unequal-label pairs with the label
/// separation bound.
pub fn separation_bound_check(f: &[f64], g: &[f64]) -> Result<BoundCheck> {
    check_dim(g.len(), f.len())?;
    let n = g.len();
    if n == 0 {
        return Err(Error::validation("bound check needs at least one point"));
    }
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for v in g {
        *counts.entry(v.to_bits()).or_default() += 1;
    }
    let s_max = counts.values().map(|c| n - c).max().unwrap_or(0);
    let (mut sf, mut sg, mut s) = (0.0, 0.0, 0usize);
    for x in 0..n {
        for y in 0..n {
            if g[x] != g[y] {
                sf += (f[x] - f[y]) * (f[x] - f[y]);
                sg += (g[x] - g[y]) * (g[x] - g[y]);
                s += 1;
            }
        }
    }
    let cost = f.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
    if s == 0 {
        return Ok(BoundCheck { lhs: 0.0, e_g: 0.0, s, s_max, factor: 0.0, cost, rhs: 0.0, holds: true, rhs_corrected: 0.0 });
    }
    let (lhs, e_g) = (sf / s as f64, sg / s as f64);
    let factor = (s_max * n) as f64 / s as f64;
    let rhs = e_g - 2.0 * factor * cost;
    Ok(BoundCheck { lhs, e_g, s, s_max, factor, cost, rhs, holds: lhs >= rhs - BOUND_SLACK, rhs_corrected: 0.5 * e_g - 4.0 * factor * cost })
}

/// Sum of observed entries scaled by `m / |supp(x)|`.
pub fn row_sum_rank(d: &DataMatrix) -> Vec<f64> {
    let m = d.n_features();
    (0..d.n_points())
        .map(|i| {
            let (vals, mask) = (d.row_values(i), d.row_mask(i));
            let (s, c) = (0..m).filter(|&k| mask[k]).fold((0.0, 0usize), |(s, c), k| (s + vals[k], c + 1));
            if c == 0 { 0.0 } else { s * m as f64 / c as f64 }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnlsSolution {
    pub weights: Vec<f64>,
    pub fitted: Vec<f64>,
    /// Largest violation of the optimality conditions of `‖Aw − b‖²`.
    pub kkt_residual: f64,
}

/// Gradient `2Aᵀ(Aw − b)` of `‖Aw − b‖²`.
fn ls_gradient(a: &Matrix, b: &[f64], w: &[f64]) -> Vec<f64> {
    let r: Vec<f64> = a.matvec(w).unwrap_or_default().iter().zip(b).map(|(p, q)| p - q).collect();
    a.tr_matvec(&r).unwrap_or_default().iter().map(|v| 2.0 * v).collect()
}

/// Largest violation of `w ≥ 0`, `∇ ≥ 0` where `w = 0` and `∇ = 0` where
/// `w > 0`.
pub fn nnls_kkt_residual(a: &Matrix, b: &[f64], w: &[f64]) -> f64 {
    let grad = ls_gradient(a, b, w);
    w.iter().zip(&grad).fold(0.0f64, |acc, (wj, gj)| {
        let v = if *wj > 0.0 { gj.abs() } else { (-gj).max(0.0) };
        acc.max(v).max(-wj)
    })
}

/// Active-set non-negative least squares, `argmin_{w ≥ 0} ‖Aw − b‖²`.
pub fn nnls(a: &Matrix, b: &[f64]) -> Result<NnlsSolution> {
    check_dim(a.rows(), b.len())?;
    let p = a.cols();
    let mut w = vec![0.0; p];
    let mut passive = vec![false; p];
    let scale = a.frobenius_norm() * linalg::norm(b);
    let tol = 1e-13 * scale.max(1e-300);
    let solve_passive = |passive: &[bool]| -> Option<Vec<f64>> {
        let cols: Vec<usize> = (0..p).filter(|&j| passive[j]).collect();
        let sub = Matrix::from_fn(a.rows(), cols.len(), |i, c| a[(i, cols[c])]);
        let z = linalg::lstsq(&sub, b)?;
        let mut full = vec![0.0; p];
        for (c, j) in cols.iter().enumerate() {
            full[*j] = z[c];
        }
        Some(full)
    };
    let mut blocked = vec![false; p];
    for _ in 0..(3 * p + 10) {
        let grad = ls_gradient(a, b, &w);
        let candidate = (0..p).filter(|&j| !passive[j] && !blocked[j] && -grad[j] > tol).max_by(|&i, &j| (-grad[i]).total_cmp(&-grad[j]).then(j.cmp(&i)));
        let Some(j) = candidate else { break };
        passive[j] = true;
        let mut z = match solve_passive(&passive) {
            Some(z) => z,
            None => {
                // Column dependent on the passive set: it cannot lower the residual.
                passive[j] = false;
                blocked[j] = true;
                continue;
            }
        };
        blocked.iter_mut().for_each(|v| *v = false);
        for _ in 0..(3 * p + 10) {
            if (0..p).all(|i| !passive[i] || z[i] > 0.0) {
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in 0..p {
                if passive[i] && z[i] <= 0.0 {
                    alpha = alpha.min(w[i] / (w[i] - z[i]));
                }
            }
            for i in 0..p {
                w[i] += alpha * (z[i] - w[i]);
                if passive[i] && w[i] <= 1e-15 * (1.0 + w.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
                    passive[i] = false;
                    w[i] = 0.0;
                }
            }
            z = solve_passive(&passive).ok_or_else(|| Error::Internal("nnls subproblem became singular".into()))?;
        }
        w = z;
    }
    w.iter_mut().for_each(|v| *v = v.max(0.0));
    let fitted = a.matvec(&w)?;
    let kkt_residual = nnls_kkt_residual(a, b, &w);
    Ok(NnlsSolution { weights: w, fitted, kkt_residual })
}

/// NNLS weights for `target` over the given columns (all when `None`);
/// returns the full-length weights and the fitted scores.
pub fn nnls_rank(x: &Matrix, target: &[f64], columns: Option<&[usize]>) -> Result<NnlsSolution> {
    let cols: Vec<usize> = columns.map_or_else(|| (0..x.cols()).collect(), <[usize]>::to_vec);
    let sub = Matrix::from_fn(x.rows(), cols.len(), |i, c| x[(i, cols[c])]);
    let sol = nnls(&sub, target)?;
    let mut weights = vec![0.0; x.cols()];
    for (c, j) in cols.iter().enumerate() {
        weights[*j] = sol.weights[c];
    }
    Ok(NnlsSolution { weights, ..sol })
}

/// Quarter of the value range `[lo, hi]` that `v` falls into.
fn range_quartile(v: f64, lo: f64, hi: f64) -> usize {
    if !(hi > lo) {
        return 0;
    }
    ((4.0 * (v - lo) / (hi - lo)) as usize).min(3)
}

/// 4×4 counts; rows bin `initial`, columns bin `final_`, each by quarters of
/// its own range.
pub fn confusion(initial: &[f64], final_: &[f64]) -> Result<[[usize; 4]; 4]> {
    check_dim(initial.len(), final_.len())?;
    let range = |v: &[f64]| (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let (a0, a1) = range(initial);
    let (b0, b1) = range(final_);
    let mut m = [[0usize; 4]; 4];
    for (x, y) in initial.iter().zip(final_) {
        m[range_quartile(*x, a0, a1)][range_quartile(*y, b0, b1)] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub rotation: Matrix,
    /// `‖E1 − E2 R‖_F / ‖E1‖_F`.
    pub residual: f64,
}

/// Orthogonal `R` minimizing `‖E1 − E2 R‖_F`.
pub fn align_embeddings(e1: &Matrix, e2: &Matrix) -> Result<Alignment> {
    if e1.shape() != e2.shape() {
        return Err(Error::DimensionMismatch { expected: e1.cols(), got: e2.cols() });
    }
    let m = e2.transpose().matmul(e1)?;
    let s = linalg::svd(&m)?;
    let rotation = s.u.matmul(&s.v.transpose())?;
    let fitted = e2.matmul(&rotation)?;
    let num = fitted.max_abs_diff(e1);
    let residual = if num == 0.0 {
        0.0
    } else {
        let diff: f64 = e1.as_slice().iter().zip(fitted.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
        sqrt(diff) / e1.frobenius_norm().max(1e-300)
    };
    Ok(Alignment { rotation, residual })
}

/// Mean Jaccard overlap of the `k`-nearest-neighbor sets of each row in
/// the two embeddings.
pub fn knn_jaccard(e1: &Matrix, e2: &Matrix, k: usize) -> Result<f64> {
    check_dim(e1.rows(), e2.rows())?;
    let n = e1.rows();
    if n < 2 {
        return Err(Error::validation("need at least two points for neighbor overlap"));
    }
    let (d1, d2) = (linalg::pairwise_sq_distances(e1), linalg::pairwise_sq_distances(e2));
    let mut total = 0.0;
    for x in 0..n {
        let mut a = linalg::knn_row(&d1, x, k, false);
        let mut b = linalg::knn_row(&d2, x, k, false);
        a.sort_unstable();
        b.sort_unstable();
        let inter = a.iter().filter(|i| b.binary_search(i).is_ok()).count();
        total += inter as f64 / (a.len() + b.len() - inter) as f64;
    }
    Ok(total / n as f64)
}

/// Fraction of each point's `k` nearest neighbors sharing its class,
/// averaged over points.
pub fn knn_purity(coords: &Matrix, classes: &[usize], k: usize) -> Result<f64> {
    check_dim(coords.rows(), classes.len())?;
    let d2 = linalg::pairwise_sq_distances(coords);
    let n = coords.rows();
    let mut total = 0.0;
    for x in 0..n {
        let nb = linalg::knn_row(&d2, x, k, false);
        total += nb.iter().filter(|&&y| classes[y] == classes[x]).count() as f64 / nb.len().max(1) as f64;
    }
    Ok(total / n.max(1) as f64)
}

/// Expected purity when classes are randomly permuted over the points:
/// `Σ_c n_c(n_c − 1) / (n(n − 1))`.
pub fn purity_null(classes: &[usize]) -> f64 {
    let n = classes.len();
    if n < 2 {
        return 1.0;
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for c in classes {
        *counts.entry(*c).or_default() += 1;
    }
    counts.values().map(|c| (c * (c - 1)) as f64).sum::<f64>() / (n * (n - 1)) as f64
}

/// Population-quartile class (0..4) of each value.
pub fn quartile_classes(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| values[*a].total_cmp(&values[*b]).then(a.cmp(b)));
    let mut out = vec![0; n];
    for (rank, i) in order.into_iter().enumerate() {
        out[i] = (4 * rank / n.max(1)).min(3);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    pub groups: Vec<String>,
    /// `n × groups`; mean of the observed entries of each group, NaN when
    /// a point observes none of them.
    pub means: Matrix,
    /// NNLS weights within each group against the target, if one was given.
    pub nnls_weights: Option<Vec<Vec<f64>>>,
    pub nnls_scores: Option<Matrix>,
}

/// Per-point group means and, given a target, per-group NNLS scores on
/// `filled` (imputed copy of `d`).
pub fn group_scores(d: &DataMatrix, filled: &Matrix, target: Option<&[f64]>) -> Result<GroupScores> {
    check_dim(d.n_points(), filled.rows())?;
    let mut members: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (k, g) in d.groups.iter().enumerate() {
        members.entry(g.clone()).or_default().push(k);
    }
    if members.is_empty() {
        return Err(Error::validation("no feature groups"));
    }
    let groups: Vec<String> = members.keys().cloned().collect();
    let n = d.n_points();
    let mut means = Matrix::zeros(n, groups.len());
    for (c, g) in groups.iter().enumerate() {
        let cols = &members[g];
        for i in 0..n {
            let obs: Vec<f64> = cols.iter().filter_map(|&k| d.get(i, k)).collect();
            means[(i, c)] = if obs.is_empty() { f64::NAN } else { obs.iter().sum::<f64>() / obs.len() as f64 };
        }
    }
    let (nnls_weights, nnls_scores) = match target {
        None => (None, None),
        Some(t) => {
            let mut weights = Vec::new();
            let mut scores = Matrix::zeros(n, groups.len());
            for (c, g) in groups.iter().enumerate() {
                let sol = nnls_rank(filled, t, Some(&members[g]))?;
                scores.set_column(c, &sol.fitted);
                weights.push(members[g].iter().map(|&k| sol.weights[k]).collect());
            }
            (Some(weights), Some(scores))
        }
    };
    Ok(GroupScores { groups, means, nnls_weights, nnls_scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    pub averages: Vec<f64>,
    /// Pearson correlation of `f` with the neighbor averages; `None` when
    /// either side is constant.
    pub correlation: Option<f64>,
}

/// Affinity-weighted average of `f` over each point's other points.
pub fn neighbor_smoothness(a: &Matrix, f: &[f64]) -> Result<Smoothness> {
    check_dim(a.rows(), f.len())?;
    let n = f.len();
    let averages: Vec<f64> = (0..n)
        .map(|x| {
            let (mut s, mut w) = (0.0, 0.0);
            for y in (0..n).filter(|&y| y != x) {
                s += a[(x, y)] * f[y];
                w += a[(x, y)];
            }
            if w > 0.0 { s / w } else { f[x] }
        })
        .collect();
    Ok(Smoothness { correlation: pearson(f, &averages), averages })
}

/// Mean of `f` over each point's `k` nearest neighbors in `coords`.
pub fn knn_smoothness(coords: &Matrix, f: &[f64], k: usize) -> Result<Smoothness> {
    check_dim(coords.rows(), f.len())?;
    let d2 = linalg::pairwise_sq_distances(coords);
    let averages: Vec<f64> = (0..f.len())
        .map(|x| {
            let nb = linalg::knn_row(&d2, x, k, false);
            if nb.is_empty() { f[x] } else { nb.iter().map(|&y| f[y]).sum::<f64>() / nb.len() as f64 }
        })
        .collect();
    Ok(Smoothness { correlation: pearson(f, &averages), averages })
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    if n < 2 || b.len() != n {
        return None;
    }
    let (ma, _) = mean_sd(a);
    let (mb, _) = mean_sd(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / sqrt(saa * sbb))
}

/// Formats a confusion matrix row-wise, for logs.
pub fn format_confusion(m: &[[usize; 4]; 4]) -> String {
    m.iter().map(|r| format!("{} {} {} {}", r[0], r[1], r[2], r[3])).collect::<Vec<_>>().join("\n")
}
