//! The partially observed data matrix and its preprocessing.
//!
//! Missing entries never take part in any statistic: means, standard
//! deviations and covariances are all computed over observed entries only.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};

pub const DEFAULT_GROUP: &str = "default";

/// `N` points by `m` observations, with an explicit observed-entry mask.
///
/// Unobserved cells hold `NaN` in `values`; only cells with `mask == true`
/// are ever read.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    pub point_ids: Vec<String>,
    pub feature_names: Vec<String>,
    values: Matrix,
    mask: Vec<bool>,
    /// Group name of every feature, aligned with `feature_names`.
    pub groups: Vec<String>,
    pub weights: BTreeMap<String, f64>,
    /// Features found constant by [`standardize`].
    pub degenerate: Vec<bool>,
}

impl PartialEq for DataMatrix {
    /// Equality over ids, names, mask, observed values and group metadata.
    fn eq(&self, other: &Self) -> bool {
        self.point_ids == other.point_ids
            && self.feature_names == other.feature_names
            && self.mask == other.mask
            && self.groups == other.groups
            && self.weights == other.weights
            && self.degenerate == other.degenerate
            && (0..self.n_points()).all(|i| (0..self.n_features()).all(|k| self.get(i, k) == other.get(i, k)))
    }
}

impl DataMatrix {
    /// Builds a matrix; `None` cells are unobserved. All features start in
    /// the default group with weight 1.
    pub fn new(point_ids: Vec<String>, feature_names: Vec<String>, cells: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let n = point_ids.len();
        let m = feature_names.len();
        if n == 0 || m == 0 {
            return Err(Error::validation("data matrix must have at least one point and one feature"));
        }
        if cells.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: cells.len() });
        }
        let mut seen = BTreeMap::new();
        for (i, id) in point_ids.iter().enumerate() {
            if let Some(prev) = seen.insert(id.as_str(), i) {
                return Err(Error::validation(format!("duplicate point id '{id}' (rows {prev} and {i})")));
            }
        }
        let mut values = Matrix::zeros(n, m);
        let mut mask = vec![false; n * m];
        for (i, row) in cells.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Parse { row: i + 1, message: format!("expected {m} values, found {}", row.len()) });
            }
            for (k, cell) in row.iter().enumerate() {
                match cell {
                    Some(v) if v.is_finite() => {
                        values[(i, k)] = *v;
                        mask[i * m + k] = true;
                    }
                    Some(v) => {
                        return Err(Error::Parse { row: i + 1, message: format!("non-finite value {v} in column {k}") });
                    }
                    None => values[(i, k)] = f64::NAN,
                }
            }
        }
        let mut weights = BTreeMap::new();
        weights.insert(DEFAULT_GROUP.to_string(), 1.0);
        Ok(DataMatrix {
            point_ids,
            feature_names,
            values,
            mask,
            groups: vec![DEFAULT_GROUP.to_string(); m],
            weights,
            degenerate: vec![false; m],
        })
    }

    /// Assigns feature groups and group weights. Features absent from
    /// `group_of` fall back to the default group (weight 1 unless given).
    pub fn with_groups(mut self, group_of: &BTreeMap<String, String>, weight_of: &BTreeMap<String, f64>) -> Result<Self> {
        for name in group_of.keys() {
            if !self.feature_names.contains(name) {
                return Err(Error::validation(format!("group map names unknown feature '{name}'")));
            }
        }
        self.groups = self
            .feature_names
            .iter()
            .map(|f| group_of.get(f).cloned().unwrap_or_else(|| DEFAULT_GROUP.to_string()))
            .collect();
        let mut weights = BTreeMap::new();
        for g in &self.groups {
            let w = match weight_of.get(g) {
                Some(w) => *w,
                None if g == DEFAULT_GROUP => 1.0,
                None => return Err(Error::validation(format!("no weight given for group '{g}'"))),
            };
            weights.insert(g.clone(), w);
        }
        self.weights = weights;
        Ok(self)
    }

    #[inline]
    pub fn n_points(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn is_observed(&self, i: usize, k: usize) -> bool {
        self.mask[i * self.n_features() + k]
    }

    /// The value at (i, k) if observed.
    #[inline]
    pub fn get(&self, i: usize, k: usize) -> Option<f64> {
        self.is_observed(i, k).then(|| self.values[(i, k)])
    }

    pub fn row_mask(&self, i: usize) -> &[bool] {
        let m = self.n_features();
        &self.mask[i * m..(i + 1) * m]
    }

    /// Raw row values; unobserved cells are `NaN`.
    pub fn row_values(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    pub fn row_cells(&self, i: usize) -> Vec<Option<f64>> {
        (0..self.n_features()).map(|k| self.get(i, k)).collect()
    }

    pub fn missing_count(&self, i: usize) -> usize {
        self.row_mask(i).iter().filter(|o| !**o).count()
    }

    pub fn observed_in_column(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.n_points()).filter_map(move |i| self.get(i, k).map(|v| (i, v)))
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn group_weight(&self, k: usize) -> f64 {
        self.weights.get(&self.groups[k]).copied().unwrap_or(1.0)
    }

    /// Applies `f` to every observed cell of column `k`.
    fn map_column(&mut self, k: usize, mut f: impl FnMut(f64) -> f64) {
        for i in 0..self.n_points() {
            if self.is_observed(i, k) {
                self.values[(i, k)] = f(self.values[(i, k)]);
            }
        }
    }

    /// Sub-matrix of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DataMatrix {
        let m = self.n_features();
        let mut values = Matrix::zeros(rows.len(), m);
        let mut mask = Vec::with_capacity(rows.len() * m);
        for (r, &i) in rows.iter().enumerate() {
            values.row_mut(r).copy_from_slice(self.values.row(i));
            mask.extend_from_slice(self.row_mask(i));
        }
        DataMatrix {
            point_ids: rows.iter().map(|&i| self.point_ids[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            values,
            mask,
            groups: self.groups.clone(),
            weights: self.weights.clone(),
            degenerate: self.degenerate.clone(),
        }
    }

    /// Dense copy with unobserved cells replaced by `fill[i][k]`.
    pub fn filled(&self, fill: impl Fn(usize, usize) -> f64) -> Matrix {
        Matrix::from_fn(self.n_points(), self.n_features(), |i, k| self.get(i, k).unwrap_or_else(|| fill(i, k)))
    }

    /// Dense copy with unobserved cells set to 0.
    pub fn zero_filled(&self) -> Matrix {
        self.filled(|_, _| 0.0)
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }
}

/// Points with at most `eta` unobserved entries (the reference set).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub indices: Vec<usize>,
    pub eta: usize,
}

impl ReferenceSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Per-feature sign flips chosen by [`depolarize`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolarityMap {
    pub flip: Vec<bool>,
}

impl PolarityMap {
    pub fn identity(m: usize) -> Self {
        PolarityMap { flip: vec![false; m] }
    }

    pub fn n_flipped(&self) -> usize {
        self.flip.iter().filter(|f| **f).count()
    }

    /// Negates the observed entries of flipped features.
    pub fn apply(&self, d: &DataMatrix) -> Result<DataMatrix> {
        crate::error::check_dim(d.n_features(), self.flip.len())?;
        let mut out = d.clone();
        for (k, &f) in self.flip.iter().enumerate() {
            if f {
                out.map_column(k, |v| -v);
            }
        }
        Ok(out)
    }

    /// `self` followed by `other`.
    pub fn compose(&self, other: &PolarityMap) -> PolarityMap {
        PolarityMap { flip: self.flip.iter().zip(&other.flip).map(|(a, b)| a ^ b).collect() }
    }

    /// Sign multiplier for feature `k`.
    pub fn sign(&self, k: usize) -> f64 {
        if self.flip[k] {
            -1.0
        } else {
            1.0
        }
    }
}

/// Per-feature location and scale fitted by [`fit_standardization`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    /// Zero for degenerate features.
    pub sds: Vec<f64>,
}

impl Standardization {
    /// Applies the fitted transform; degenerate features map to 0.
    pub fn apply(&self, d: &DataMatrix) -> Result<DataMatrix> {
        crate::error::check_dim(self.means.len(), d.n_features())?;
        let mut out = d.clone();
        for k in 0..d.n_features() {
            let (mean, sd) = (self.means[k], self.sds[k]);
            out.degenerate[k] = sd == 0.0;
            if sd == 0.0 {
                out.map_column(k, |_| 0.0);
            } else {
                out.map_column(k, |v| (v - mean) / sd);
            }
        }
        Ok(out)
    }
}

/// Mean and sample sd of every feature over its observed entries. Constant
/// features (or features with a single observation) get sd 0.
pub fn fit_standardization(d: &DataMatrix) -> Result<Standardization> {
    let mut means = Vec::with_capacity(d.n_features());
    let mut sds = Vec::with_capacity(d.n_features());
    for k in 0..d.n_features() {
        let obs: Vec<f64> = d.observed_in_column(k).map(|(_, v)| v).collect();
        if obs.is_empty() {
            return Err(Error::validation(format!("feature '{}' has no observed entries", d.feature_names[k])));
        }
        let n = obs.len() as f64;
        let mean = obs.iter().sum::<f64>() / n;
        let var = if obs.len() > 1 { obs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        let sd = sqrt(var);
        means.push(mean);
        sds.push(if sd <= 1e-12 * mean.abs().max(1.0) { 0.0 } else { sd });
    }
    Ok(Standardization { means, sds })
}

/// Mean/sample-sd standardization of every feature over its observed
/// entries. Constant features are zeroed and flagged degenerate.
pub fn standardize(d: &DataMatrix) -> Result<DataMatrix> {
    fit_standardization(d)?.apply(d)
}

/// Minimum joint support for a pairwise-complete covariance entry.
const MIN_JOINT_SUPPORT: usize = 3;

/// Pairwise-complete second-moment matrix of the stacked `[M; -M]`.
///
/// The stacked matrix has zero mean, so its covariance is the uncentered
/// second moment of `M`; pairs observed together fewer than three times get 0.
pub fn stacked_covariance(d: &DataMatrix) -> Matrix {
    let m = d.n_features();
    let mut cov = Matrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let mut sum = 0.0;
            let mut count = 0usize;
            for i in 0..d.n_points() {
                if let (Some(x), Some(y)) = (d.get(i, a), d.get(i, b)) {
                    sum += x * y;
                    count += 1;
                }
            }
            let v = if count >= MIN_JOINT_SUPPORT { sum / count as f64 } else { 0.0 };
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    cov
}

/// Top principal loading of the stacked data, signed so that its entries sum
/// to a positive value (ties: largest-magnitude entry positive).
pub fn top_loading(d: &DataMatrix) -> Result<Vec<f64>> {
    let cov = stacked_covariance(d);
    if !cov.is_finite() {
        return Err(Error::validation("covariance for depolarization is not computable"));
    }
    let eig = symmetric_eigen(&cov)?;
    let mut u = eig.vectors.column(0);
    let total: f64 = u.iter().sum();
    let flip = if total.abs() > 1e-12 {
        total < 0.0
    } else {
        let mut best = 0;
        for (k, v) in u.iter().enumerate() {
            if v.abs() > u[best].abs() + 1e-15 {
                best = k;
            }
        }
        u[best] < 0.0
    };
    if flip {
        u.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(u)
}

/// Flips every feature whose top loading is negative, so that all retained
/// loadings are non-negative. A loading of exactly zero keeps its polarity.
pub fn depolarize(d: &DataMatrix) -> Result<(DataMatrix, PolarityMap)> {
    let u = top_loading(d)?;
    let map = PolarityMap { flip: u.iter().map(|v| *v < 0.0).collect() };
    let out = map.apply(d)?;
    Ok((out, map))
}

/// Multiplies each feature by its group weight.
pub fn apply_weights(d: &DataMatrix) -> Result<DataMatrix> {
    for (g, w) in &d.weights {
        if !(w.is_finite() && *w > 0.0) {
            return Err(Error::validation(format!("group '{g}' has non-positive weight {w}")));
        }
    }
    let mut out = d.clone();
    for k in 0..d.n_features() {
        let w = d.weights.get(&d.groups[k]).copied().ok_or_else(|| Error::validation(format!("no weight for group '{}'", d.groups[k])))?;
        if w != 1.0 {
            out.map_column(k, |v| v * w);
        }
    }
    Ok(out)
}

/// Points with at most `eta` unobserved entries, ascending.
pub fn select_reference(d: &DataMatrix, eta: usize) -> Result<ReferenceSet> {
    if eta > d.n_features() {
        return Err(Error::validation(format!("eta = {eta} exceeds the number of features {}", d.n_features())));
    }
    let indices: Vec<usize> = (0..d.n_points()).filter(|&i| d.missing_count(i) <= eta).collect();
    if indices.is_empty() {
        return Err(Error::validation(format!("no point has at most {eta} missing entries; try a larger eta")));
    }
    Ok(ReferenceSet { indices, eta })
}

/// Default missing-entry budget: a tenth of the features.
pub fn default_eta(m: usize) -> usize {
    m / 10
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn matrix(cols: &[&[Option<f64>]]) -> DataMatrix {
        let m = cols.len();
        let n = cols[0].len();
        let cells = (0..n).map(|i| (0..m).map(|k| cols[k][i]).collect()).collect();
        DataMatrix::new(
            (0..n).map(|i| format!("p{i}")).collect(),
            (0..m).map(|k| format!("f{k}")).collect(),
            cells,
        )
        .unwrap()
    }

    #[test]
    fn standardize_hand_case() {
        let d = matrix(&[&[Some(1.0), Some(2.0), Some(3.0)]]);
        let s = standardize(&d).unwrap();
        let col: Vec<f64> = s.observed_in_column(0).map(|(_, v)| v).collect();
        assert!((col[0] + 1.0).abs() < 1e-12 && col[1].abs() < 1e-12 && (col[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standardize_constant_is_degenerate() {
        let d = matrix(&[&[Some(5.0), Some(5.0), Some(5.0)], &[Some(1.0), None, Some(2.0)]]);
        let s = standardize(&d).unwrap();
        assert!(s.degenerate[0] && !s.degenerate[1]);
        assert!(s.observed_in_column(0).all(|(_, v)| v == 0.0));
        assert_eq!(s.mask(), d.mask());
    }

    #[test]
    fn standardize_rejects_unobserved_feature() {
        let d = matrix(&[&[Some(1.0), Some(2.0)], &[None, None]]);
        let err = standardize(&d).unwrap_err();
        assert!(matches!(err, Error::Validation(ref s) if s.contains("f1")));
    }

    #[test]
    fn standardize_is_idempotent() {
        let d = matrix(&[&[Some(1.0), Some(4.0), None, Some(-2.0), Some(7.5)], &[Some(0.1), Some(0.2), Some(0.3), Some(0.1), None]]);
        let s1 = standardize(&d).unwrap();
        let s2 = standardize(&s1).unwrap();
        for i in 0..5 {
            for k in 0..2 {
                match (s1.get(i, k), s2.get(i, k)) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9),
                    (None, None) => {}
                    _ => panic!("mask changed"),
                }
            }
        }
    }

    #[test]
    fn depolarize_flips_anticorrelated_feature() {
        let x = [1.0, -0.5, 0.3, 2.0, -1.2];
        let a: Vec<Option<f64>> = x.iter().map(|v| Some(*v)).collect();
        let b: Vec<Option<f64>> = x.iter().map(|v| Some(-*v)).collect();
        let d = standardize(&matrix(&[&a, &b])).unwrap();
        let (out, map) = depolarize(&d).unwrap();
        assert_eq!(map.n_flipped(), 1);
        let c0: Vec<f64> = out.observed_in_column(0).map(|(_, v)| v).collect();
        let c1: Vec<f64> = out.observed_in_column(1).map(|(_, v)| v).collect();
        let r: f64 = c0.iter().zip(&c1).map(|(p, q)| p * q).sum::<f64>() / (crate::linalg::norm(&c0) * crate::linalg::norm(&c1));
        assert!((r - 1.0).abs() < 1e-12);
        // Second pass: no new flips.
        let (_, again) = depolarize(&out).unwrap();
        assert_eq!(again.n_flipped(), 0);
    }

    #[test]
    fn depolarize_positive_loadings_no_flips() {
        let d = standardize(&matrix(&[
            &[Some(1.0), Some(2.0), Some(3.0), Some(4.0)],
            &[Some(1.5), Some(2.2), Some(2.9), Some(4.4)],
        ]))
        .unwrap();
        let (_, map) = depolarize(&d).unwrap();
        assert_eq!(map.n_flipped(), 0);
    }

    #[test]
    fn polarity_twice_is_identity() {
        let d = matrix(&[&[Some(1.0), None, Some(3.0)], &[Some(-2.0), Some(0.5), None]]);
        let p = PolarityMap { flip: vec![true, false] };
        let back = p.apply(&p.apply(&d).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn weights_scale_columns() {
        let d = matrix(&[&[Some(1.0), Some(-1.0), Some(0.0)], &[Some(2.0), Some(3.0), Some(4.0)]]);
        let mut groups = BTreeMap::new();
        groups.insert("f0".to_string(), "mort".to_string());
        let mut weights = BTreeMap::new();
        weights.insert("mort".to_string(), 1.5);
        let w = apply_weights(&d.clone().with_groups(&groups, &weights).unwrap()).unwrap();
        let c0: Vec<f64> = w.observed_in_column(0).map(|(_, v)| v).collect();
        assert_eq!(c0, vec![1.5, -1.5, 0.0]);
        let c1: Vec<f64> = w.observed_in_column(1).map(|(_, v)| v).collect();
        assert_eq!(c1, vec![2.0, 3.0, 4.0]);

        weights.insert("mort".to_string(), 2.0);
        let w = apply_weights(&d.clone().with_groups(&groups, &weights).unwrap()).unwrap();
        assert_eq!(w.get(1, 0), Some(-2.0));

        assert_eq!(apply_weights(&d).unwrap(), d);

        weights.insert("mort".to_string(), 0.0);
        assert!(apply_weights(&d.with_groups(&groups, &weights).unwrap()).is_err());
    }

    #[test]
    fn reference_selection() {
        let d = matrix(&[&[Some(1.0), None, Some(3.0)], &[Some(1.0), None, None], &[Some(1.0), Some(1.0), Some(1.0)]]);
        assert_eq!(select_reference(&d, 3).unwrap().indices, vec![0, 1, 2]);
        assert_eq!(select_reference(&d, 0).unwrap().indices, vec![0]);
        assert_eq!(select_reference(&d, 1).unwrap().indices, vec![0, 2]);
        let full = matrix(&[&[Some(1.0), Some(2.0)]]);
        assert_eq!(select_reference(&full, 0).unwrap().indices, vec![0, 1]);
        let all_missing_one = matrix(&[&[None, Some(2.0)], &[Some(1.0), None]]);
        assert!(select_reference(&all_missing_one, 0).is_err());
        assert!(select_reference(&d, 4).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = DataMatrix::new(vec!["a".into(), "a".into()], vec!["x".into()], vec![vec![Some(1.0)], vec![Some(2.0)]]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    proptest::proptest! {
        #[test]
        fn reference_is_monotone_in_eta(missing in proptest::collection::vec(proptest::bool::ANY, 40), k in 0usize..8) {
            let cells: Vec<Vec<Option<f64>>> = (0..5).map(|i| (0..8).map(|j| if missing[i * 8 + j] { None } else { Some(1.0) }).collect()).collect();
            let d = DataMatrix::new((0..5).map(|i| format!("{i}")).collect(), (0..8).map(|j| format!("{j}")).collect(), cells).unwrap();
            let small = select_reference(&d, k).map(|r| r.indices).unwrap_or_default();
            let big = select_reference(&d, 8).unwrap().indices;
            proptest::prop_assert!(small.iter().all(|i| big.contains(i)));
        }
    }
}
