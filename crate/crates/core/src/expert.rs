//! Pseudopoints (folder centroids) shown to an expert, the scores they return
//! and the label function those scores induce on the reference set.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cogeometry::{self, PartitionTree};
use crate::dataset::{DataMatrix, ReferenceSet};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudopointSet {
    pub level: usize,
    /// Folder ids at `level`, i.e. indices into `tree.level(level)`.
    pub folders: Vec<usize>,
    /// One row per folder.
    pub centroids: Matrix,
    pub member_counts: Vec<usize>,
    /// `(folder row, feature)` entries no member observed; they were filled
    /// from the observation tree.
    pub imputed: Vec<(usize, usize)>,
}

impl PseudopointSet {
    pub fn len(&self) -> usize {
        self.folders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folders.is_empty()
    }
}

/// Centroids of the level-`level` folders of the point tree.
///
/// Tree indices refer to positions in `omega`. Centroid entries average the
/// members that observe the feature; entries nobody observes are imputed
/// from `obs_tree`.
pub fn extract_pseudopoints(
    tree: &PartitionTree,
    level: usize,
    omega: &ReferenceSet,
    d: &DataMatrix,
    obs_tree: &PartitionTree,
) -> Result<PseudopointSet> {
    if tree.len() != omega.len() {
        return Err(Error::DimensionMismatch { expected: omega.len(), got: tree.len() });
    }
    let folders = tree.level(level)?;
    let m = d.n_features();
    let mut centroids = Matrix::zeros(folders.len(), m);
    let mut member_counts = Vec::with_capacity(folders.len());
    let mut imputed = Vec::new();
    for (f, members) in folders.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::Internal(format!("empty folder {f} at level {level}")));
        }
        member_counts.push(members.len());
        let mut mask = vec![false; m];
        let row = centroids.row_mut(f);
        for k in 0..m {
            let (mut s, mut c) = (0.0, 0usize);
            for &p in members {
                if let Some(v) = d.get(omega.indices[p], k) {
                    s += v;
                    c += 1;
                }
            }
            if c > 0 {
                row[k] = s / c as f64;
                mask[k] = true;
            }
        }
        if mask.contains(&false) {
            let fills = cogeometry::impute(row, &mask, obs_tree).map_err(|e| match e {
                Error::Validation(msg) => {
                    Error::Validation(format!("folder {f} {}: {msg}", cogeometry::describe_folder(members)))
                }
                other => other,
            })?;
            for imp in fills {
                row[imp.feature] = imp.value;
                imputed.push((f, imp.feature));
            }
        }
    }
    if !centroids.is_finite() {
        return Err(Error::Internal("non-finite centroid".into()));
    }
    Ok(PseudopointSet { level, folders: (0..folders.len()).collect(), centroids, member_counts, imputed })
}

/// Default expert score scale.
pub const DEFAULT_SCORE_RANGE: (f64, f64) = (1.0, 10.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    pub level: usize,
    pub scores: BTreeMap<usize, f64>,
    pub range: (f64, f64),
}

impl LabelMap {
    /// Checks that `entries` score every folder of `ps` exactly once and stay
    /// within `range`; all offenders are listed in the error.
    pub fn new(ps: &PseudopointSet, entries: &[(usize, Option<f64>)], range: (f64, f64)) -> Result<Self> {
        let known: BTreeMap<usize, ()> = ps.folders.iter().map(|f| (*f, ())).collect();
        let mut scores = BTreeMap::new();
        let mut problems: Vec<String> = Vec::new();
        for &(folder, score) in entries {
            if !known.contains_key(&folder) {
                problems.push(format!("unknown folder {folder}"));
                continue;
            }
            match score {
                None => problems.push(format!("folder {folder} has no score")),
                Some(s) if !(s >= range.0 && s <= range.1) => {
                    problems.push(format!("folder {folder} score {s} outside [{}, {}]", range.0, range.1))
                }
                Some(s) => {
                    if scores.insert(folder, s).is_some() {
                        problems.push(format!("folder {folder} scored twice"));
                    }
                }
            }
        }
        for f in &ps.folders {
            if !scores.contains_key(f) && !entries.iter().any(|(e, _)| e == f) {
                problems.push(format!("missing folder {f}"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::validation(format!("label file rejected: {}", problems.join("; "))));
        }
        Ok(LabelMap { level: ps.level, scores, range })
    }

    /// Distinct scores, ascending; the label classes.
    pub fn classes(&self) -> Vec<f64> {
        let mut c: Vec<f64> = self.scores.values().copied().collect();
        c.sort_by(f64::total_cmp);
        c.dedup();
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFunction {
    /// `g(x)` for each member of the reference set, in its order.
    pub g: Vec<f64>,
    /// `g` mapped affinely onto `[0, 1]`.
    pub rescaled: Vec<f64>,
    /// `(min g, max g)`.
    pub range: (f64, f64),
    /// Set when `g` is constant; `rescaled` is then 0.5 everywhere.
    pub degenerate: bool,
}

/// Gives each point the score of its level folder.
pub fn propagate_labels(lm: &LabelMap, tree: &PartitionTree) -> Result<LabelFunction> {
    let assignment = tree.assignment(lm.level)?;
    let g: Vec<f64> = assignment
        .iter()
        .map(|f| lm.scores.get(f).copied().ok_or_else(|| Error::validation(format!("folder {f} has no score"))))
        .collect::<Result<_>>()?;
    Ok(LabelFunction::from_values(g))
}

impl LabelFunction {
    pub fn from_values(g: Vec<f64>) -> Self {
        let lo = g.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let degenerate = !(hi > lo);
        let rescaled = g.iter().map(|v| if degenerate { 0.5 } else { (v - lo) / (hi - lo) }).collect();
        LabelFunction { g, rescaled, range: (lo, hi), degenerate }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cogeometry::{Axis, TREE_SCHEMA_VERSION};

    fn tree() -> PartitionTree {
        PartitionTree {
            levels: vec![vec![(0..6).collect()], vec![vec![0, 1, 2], vec![3, 4, 5]]],
            axis: Axis::Points,
            schema_version: TREE_SCHEMA_VERSION,
        }
    }

    fn data(rows: Vec<Vec<Option<f64>>>) -> DataMatrix {
        let n = rows.len();
        let m = rows[0].len();
        DataMatrix::new((0..n).map(|i| format!("p{i}")).collect(), (0..m).map(|k| format!("f{k}")).collect(), rows).unwrap()
    }

    fn omega(n: usize) -> ReferenceSet {
        ReferenceSet { indices: (0..n).collect(), eta: 0 }
    }

    #[test]
    fn centroid_is_observed_mean() {
        let d = data(vec![
            vec![Some(0.0), Some(2.0)],
            vec![Some(2.0), Some(0.0)],
            vec![Some(1.0), None],
            vec![Some(4.0), Some(4.0)],
            vec![Some(4.0), Some(4.0)],
            vec![Some(4.0), Some(4.0)],
        ]);
        let ps = extract_pseudopoints(&tree(), 2, &omega(6), &d, &PartitionTree::root_only(2, Axis::Observations)).unwrap();
        assert_eq!(ps.centroids.to_rows(), vec![vec![1.0, 1.0], vec![4.0, 4.0]]);
        assert_eq!(ps.member_counts, vec![3, 3]);
        assert!(ps.imputed.is_empty());
        assert!(extract_pseudopoints(&tree(), 3, &omega(6), &d, &PartitionTree::root_only(2, Axis::Observations)).is_err());
    }

    #[test]
    fn unobserved_centroid_entry_is_imputed() {
        let mut rows = vec![vec![Some(1.0), None, Some(3.0)]; 3];
        rows.extend(vec![vec![Some(0.0), Some(0.0), Some(0.0)]; 3]);
        let ps = extract_pseudopoints(&tree(), 2, &omega(6), &data(rows), &PartitionTree::root_only(3, Axis::Observations)).unwrap();
        assert_eq!(ps.centroids.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(ps.imputed, vec![(0, 1)]);
    }

    #[test]
    fn dyadic_level_six_has_32_folders() {
        let n = 1614;
        let assign: Vec<Vec<usize>> = (0..32).map(|f| (0..n).filter(|i| i % 32 == f).collect()).collect();
        let mut levels = vec![vec![(0..n).collect::<Vec<_>>()]];
        for l in 1..6 {
            let c = 1 << l;
            levels.push((0..c).map(|f| (0..n).filter(|i| i % c == f).collect()).collect());
        }
        let t = PartitionTree { levels, axis: Axis::Points, schema_version: TREE_SCHEMA_VERSION };
        t.validate().unwrap();
        assert_eq!(t.level(6).unwrap().len(), assign.len());
        let d = data((0..n).map(|i| vec![Some(i as f64)]).collect());
        let ps = extract_pseudopoints(&t, 6, &omega(n), &d, &PartitionTree::root_only(1, Axis::Observations)).unwrap();
        assert_eq!(ps.len(), 32);
        assert_eq!(ps.member_counts.iter().sum::<usize>(), n);
    }

    fn ps() -> PseudopointSet {
        PseudopointSet { level: 2, folders: vec![0, 1], centroids: Matrix::zeros(2, 1), member_counts: vec![3, 3], imputed: vec![] }
    }

    #[test]
    fn label_map_validation() {
        let lm = LabelMap::new(&ps(), &[(0, Some(7.0)), (1, Some(7.0))], DEFAULT_SCORE_RANGE).unwrap();
        assert_eq!(lm.classes(), vec![7.0]);
        let e = LabelMap::new(&ps(), &[(0, Some(7.0))], DEFAULT_SCORE_RANGE).unwrap_err();
        assert!(format!("{e}").contains("missing folder 1"));
        let e = LabelMap::new(&ps(), &[(0, Some(11.0)), (1, Some(2.0)), (5, Some(2.0))], DEFAULT_SCORE_RANGE).unwrap_err();
        let msg = format!("{e}");
        assert!(msg.contains("folder 0 score 11") && msg.contains("unknown folder 5"), "{msg}");
        assert!(LabelMap::new(&ps(), &[(0, None), (1, Some(2.0))], DEFAULT_SCORE_RANGE).is_err());
    }

    #[test]
    fn propagation_and_rescaling() {
        let lm = LabelMap::new(&ps(), &[(0, Some(1.0)), (1, Some(10.0))], DEFAULT_SCORE_RANGE).unwrap();
        let lf = propagate_labels(&lm, &tree()).unwrap();
        assert_eq!(lf.g, vec![1.0, 1.0, 1.0, 10.0, 10.0, 10.0]);
        assert_eq!(lf.rescaled, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!(!lf.degenerate);

        let lm = LabelMap::new(&ps(), &[(0, Some(4.0)), (1, Some(4.0))], DEFAULT_SCORE_RANGE).unwrap();
        let lf = propagate_labels(&lm, &tree()).unwrap();
        assert!(lf.degenerate && lf.rescaled.iter().all(|v| *v == 0.5));
    }

    #[test]
    fn rescaling_preserves_order() {
        let g = vec![3.0, 9.5, 1.0, 4.0, 9.5];
        let lf = LabelFunction::from_values(g.clone());
        for i in 0..g.len() {
            for j in 0..g.len() {
                assert_eq!(g[i].partial_cmp(&g[j]), lf.rescaled[i].partial_cmp(&lf.rescaled[j]));
            }
        }
    }
}
