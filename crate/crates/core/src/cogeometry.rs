//! Coupled partition trees on points and observations, tree-EMD affinities
//! and tree-based imputation of missing entries.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log2, pow};
use serde::{Deserialize, Serialize};

use crate::dataset::{DataMatrix, ReferenceSet};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::spectral::{self, Kernel};

/// Where an affinity matrix came from; decides how it is turned into a
/// kernel for tree construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffinityKind {
    /// Cosine similarities in `[-1, 1]`.
    Cosine,
    /// Kernel values in `[0, 1]`.
    Kernel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Affinity {
    pub entries: Matrix,
    pub kind: AffinityKind,
    /// Pairs `(j, k)` with `j < k` whose affinity was set to 0 because one of
    /// the restricted norms vanished.
    pub flagged: Vec<(usize, usize)>,
}

impl Affinity {
    pub fn size(&self) -> usize {
        self.entries.rows()
    }

    /// Converts to a strictly positive kernel.
    ///
    /// Cosine values go through `exp(-(1-a)/s)` with `s` the median nonzero
    /// `1-a`. Kernel values are floored at the smallest normal float so
    /// the graph stays connected.
    pub fn to_kernel(&self) -> Result<Kernel> {
        let n = self.size();
        let mut k = self.entries.clone();
        if self.kind == AffinityKind::Cosine {
            let mut gaps = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    let g = 1.0 - k[(i, j)];
                    if g > 0.0 {
                        gaps.push(g);
                    }
                }
            }
            let s = linalg::median(&gaps).unwrap_or(1.0);
            for v in k.data_mut() {
                *v = exp(-(1.0 - *v).max(0.0) / s);
            }
        }
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = if i == j { 1.0 } else { k[(i, j)].clamp(f64::MIN_POSITIVE, 1.0) };
            }
        }
        Kernel::new(k)
    }
}

/// Cosine affinity between the rows of `d` listed in `omega`, each pair
/// measured on its joint support.
pub fn cosine_affinity(omega: &ReferenceSet, d: &DataMatrix) -> Result<Affinity> {
    let rows: Vec<(&[f64], &[bool])> = omega.indices.iter().map(|&i| (d.row_values(i), d.row_mask(i))).collect();
    let n = rows.len();
    let mut a = Matrix::identity(n);
    let mut flagged = Vec::new();
    for j in 0..n {
        for k in (j + 1)..n {
            let (xv, xm) = rows[j];
            let (yv, ym) = rows[k];
            let (mut xy, mut xx, mut yy, mut support) = (0.0, 0.0, 0.0, 0usize);
            for f in 0..xv.len() {
                if xm[f] && ym[f] {
                    xy += xv[f] * yv[f];
                    xx += xv[f] * xv[f];
                    yy += yv[f] * yv[f];
                    support += 1;
                }
            }
            if support == 0 {
                return Err(Error::validation(format!(
                    "points {} and {} share no observed feature",
                    d.point_ids[omega.indices[j]], d.point_ids[omega.indices[k]]
                )));
            }
            let v = if xx > 0.0 && yy > 0.0 {
                (xy / libm::sqrt(xx * yy)).clamp(-1.0, 1.0)
            } else {
                flagged.push((j, k));
                0.0
            };
            a[(j, k)] = v;
            a[(k, j)] = v;
        }
    }
    Ok(Affinity { entries: a, kind: AffinityKind::Cosine, flagged })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Points,
    Observations,
}

pub const TREE_SCHEMA_VERSION: u32 = 1;

/// Nested partitions of `0..len`. `levels[0]` is the root; folders at each
/// level are sorted by their smallest member and members are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionTree {
    pub levels: Vec<Vec<Vec<usize>>>,
    pub axis: Axis,
    pub schema_version: u32,
}

impl PartitionTree {
    /// The tree with only the root folder.
    pub fn root_only(len: usize, axis: Axis) -> Self {
        PartitionTree { levels: vec![vec![(0..len).collect()]], axis, schema_version: TREE_SCHEMA_VERSION }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn len(&self) -> usize {
        self.levels.first().map_or(0, |l| l.iter().map(Vec::len).sum())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Folders at `level` (1 is the root).
    pub fn level(&self, level: usize) -> Result<&[Vec<usize>]> {
        if level == 0 || level > self.depth() {
            return Err(Error::validation(format!("tree level {level} outside 1..={}", self.depth())));
        }
        Ok(&self.levels[level - 1])
    }

    /// Folder index of every element at `level`.
    pub fn assignment(&self, level: usize) -> Result<Vec<usize>> {
        let folders = self.level(level)?;
        let mut out = vec![0; self.len()];
        for (f, members) in folders.iter().enumerate() {
            for &i in members {
                out[i] = f;
            }
        }
        Ok(out)
    }

    /// Index of the folder at `level - 1` containing folder `folder` of
    /// `level`.
    pub fn parent(&self, level: usize, folder: usize) -> Result<usize> {
        if level < 2 {
            return Err(Error::validation("the root has no parent"));
        }
        let first = *self.level(level)?.get(folder).and_then(|f| f.first()).ok_or_else(|| Error::validation("no such folder"))?;
        Ok(self.assignment(level - 1)?[first])
    }

    /// Checks the cover, disjointness and nesting invariants.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != TREE_SCHEMA_VERSION {
            return Err(Error::validation(format!("unsupported tree schema version {}", self.schema_version)));
        }
        let n = self.len();
        if self.levels.first().map(Vec::len) != Some(1) {
            return Err(Error::validation("level 1 must be a single root folder"));
        }
        let mut prev: Option<Vec<usize>> = None;
        for (l, folders) in self.levels.iter().enumerate() {
            let mut owner = vec![usize::MAX; n];
            for (f, members) in folders.iter().enumerate() {
                if members.is_empty() {
                    return Err(Error::validation(format!("empty folder at level {}", l + 1)));
                }
                for &i in members {
                    if i >= n || owner[i] != usize::MAX {
                        return Err(Error::validation(format!("level {} is not a partition of 0..{n}", l + 1)));
                    }
                    owner[i] = f;
                }
                if let Some(p) = &prev {
                    if members.iter().any(|&i| p[i] != p[members[0]]) {
                        return Err(Error::validation(format!("folder {f} at level {} straddles two parents", l + 1)));
                    }
                }
            }
            if owner.contains(&usize::MAX) {
                return Err(Error::validation(format!("level {} does not cover the axis", l + 1)));
            }
            prev = Some(owner);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    /// Number of levels including the root; `None` means `⌈log2 n⌉ − 1`.
    pub depth: Option<usize>,
    /// Refinement rounds in [`coupled_refine`].
    pub iters: usize,
    /// Level-weight exponent of the tree EMD.
    pub beta: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { depth: None, iters: 2, beta: 1.0 }
    }
}

pub fn default_depth(n: usize) -> usize {
    if n <= 2 {
        return 1;
    }
    let ceil = libm::ceil(log2(n as f64)) as usize;
    ceil.saturating_sub(1).max(1)
}

/// Folder count at 1-based `level` of a dyadic tree on `n` elements.
pub fn folders_at_level(n: usize, level: usize) -> usize {
    let shift = (level - 1).min(63) as u32;
    1usize.checked_shl(shift).unwrap_or(usize::MAX).min(n)
}

const TREE_EMBED_DIM: usize = 10;

/// Builds a dyadic partition tree from an affinity.
///
/// Elements are embedded by a diffusion map, then merged bottom-up: each
/// round pairs up disjoint folders by ascending average-linkage distance until
/// the folder count of the next level is reached.
pub fn build_partition_tree(a: &Affinity, depth: usize, axis: Axis) -> Result<PartitionTree> {
    if !a.entries.is_finite() {
        return Err(Error::validation("affinity has non-finite entries"));
    }
    let n = a.size();
    if n == 0 {
        return Err(Error::validation("cannot build a tree on an empty axis"));
    }
    let depth = depth.max(1);
    if depth == 1 || n == 1 {
        let mut t = PartitionTree::root_only(n, axis);
        t.levels.resize(if n == 1 { depth } else { 1 }, t.levels[0].clone());
        return Ok(t);
    }
    let kernel = a.to_kernel()?;
    let emb = spectral::diffusion_embed(&kernel, TREE_EMBED_DIM.min(n - 1), 1.0)?;
    let coords = emb.coordinates();
    let dist = Matrix::from_fn(n, n, |i, j| linalg::dist(coords.row(i), coords.row(j)));

    let mut folders: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut levels_rev: Vec<Vec<Vec<usize>>> = Vec::with_capacity(depth);
    for level in (1..=depth).rev() {
        let target = folders_at_level(n, level);
        while folders.len() > target {
            folders = merge_round(&folders, &dist, folders.len() - target);
        }
        levels_rev.push(folders.clone());
    }
    levels_rev.reverse();
    let tree = PartitionTree { levels: levels_rev, axis, schema_version: TREE_SCHEMA_VERSION };
    debug_assert!(tree.validate().is_ok());
    Ok(tree)
}

/// One matching round: merges at most `max_merges` disjoint pairs, closest
/// first. Ties go to the pair whose smallest members are smallest.
fn merge_round(folders: &[Vec<usize>], dist: &Matrix, max_merges: usize) -> Vec<Vec<usize>> {
    let c = folders.len();
    let n = dist.rows();
    // R[a][j] = Σ_{i∈a} d(i, j), then F[a][b] = Σ_{j∈b} R[a][j].
    let mut r = Matrix::zeros(c, n);
    for (f, members) in folders.iter().enumerate() {
        let row = r.row_mut(f);
        for &i in members {
            for (acc, v) in row.iter_mut().zip(dist.row(i)) {
                *acc += v;
            }
        }
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(c * (c - 1) / 2);
    for a in 0..c {
        let ra = r.row(a);
        for b in (a + 1)..c {
            let s: f64 = folders[b].iter().map(|&j| ra[j]).sum();
            pairs.push((s / (folders[a].len() * folders[b].len()) as f64, a, b));
        }
    }
    // Folders are kept sorted by smallest member, so folder index order is
    // member index order.
    pairs.sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let max_merges = max_merges.min(c / 2);
    let mut partner = vec![usize::MAX; c];
    let mut merges = 0;
    for (_, a, b) in pairs {
        if merges == max_merges {
            break;
        }
        if partner[a] == usize::MAX && partner[b] == usize::MAX {
            partner[a] = b;
            partner[b] = a;
            merges += 1;
        }
    }
    let mut out = Vec::with_capacity(c - merges);
    for a in 0..c {
        match partner[a] {
            usize::MAX => out.push(folders[a].clone()),
            b if b > a => {
                let mut m = folders[a].clone();
                m.extend_from_slice(&folders[b]);
                m.sort_unstable();
                out.push(m);
            }
            _ => {}
        }
    }
    out.sort_unstable_by_key(|f| f[0]);
    out
}

/// Multiscale folder-sum features whose L1 distance is the tree EMD:
/// `2^{β(l−L)} · |folder| · avg_folder(x)`.
pub fn tree_emd_features(tree: &PartitionTree, x: &[f64], beta: f64) -> Result<Vec<f64>> {
    if x.len() != tree.len() {
        return Err(Error::validation(format!("vector of length {} does not match tree axis of length {}", x.len(), tree.len())));
    }
    let depth = tree.depth() as f64;
    let mut out = Vec::new();
    for (l, folders) in tree.levels.iter().enumerate() {
        let w = pow(2.0, beta * ((l + 1) as f64 - depth));
        for members in folders {
            out.push(w * members.iter().map(|&i| x[i]).sum::<f64>());
        }
    }
    Ok(out)
}

/// `Σ_l Σ_folders 2^{β(l−L)} · |folder| · |avg_folder(x) − avg_folder(y)|`.
pub fn tree_emd_distance(tree: &PartitionTree, x: &[f64], y: &[f64], beta: f64) -> Result<f64> {
    let fx = tree_emd_features(tree, x, beta)?;
    let fy = tree_emd_features(tree, y, beta)?;
    Ok(fx.iter().zip(&fy).map(|(a, b)| (a - b).abs()).sum())
}

/// Kernel `exp(-d/ε)` from tree-EMD distances between the rows of
/// `vectors`, with `ε` the median nonzero distance.
pub fn emd_affinity(tree: &PartitionTree, vectors: &Matrix, beta: f64) -> Result<Affinity> {
    let feats: Vec<Vec<f64>> = (0..vectors.rows()).map(|i| tree_emd_features(tree, vectors.row(i), beta)).collect::<Result<_>>()?;
    let n = feats.len();
    let mut d = Matrix::zeros(n, n);
    let mut nonzero = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = feats[i].iter().zip(&feats[j]).map(|(a, b)| (a - b).abs()).sum();
            d[(i, j)] = v;
            d[(j, i)] = v;
            if v > 0.0 {
                nonzero.push(v);
            }
        }
    }
    let eps = linalg::median(&nonzero).unwrap_or(1.0);
    let entries = Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { exp(-d[(i, j)] / eps) });
    Ok(Affinity { entries, kind: AffinityKind::Kernel, flagged: Vec::new() })
}

/// One filled-in entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputation {
    pub feature: usize,
    pub value: f64,
    /// Tree level of the folder used; deeper means less uncertain.
    pub level: usize,
    pub folder: usize,
    pub support_count: usize,
}

/// Fills each unobserved entry of `v` with the mean of its observed
/// siblings in the deepest observation folder that has any.
pub fn impute(values: &[f64], mask: &[bool], obs_tree: &PartitionTree) -> Result<Vec<Imputation>> {
    if values.len() != obs_tree.len() || mask.len() != values.len() {
        return Err(Error::validation(format!("vector of length {} does not match observation tree of length {}", values.len(), obs_tree.len())));
    }
    if !mask.contains(&true) {
        return Err(Error::validation("cannot impute a vector with no observed entries"));
    }
    let mut out = Vec::new();
    let assignments: Vec<Vec<usize>> = (1..=obs_tree.depth()).map(|l| obs_tree.assignment(l)).collect::<Result<_>>()?;
    for k in (0..values.len()).filter(|&k| !mask[k]) {
        for level in (1..=obs_tree.depth()).rev() {
            let folder = assignments[level - 1][k];
            let members = &obs_tree.levels[level - 1][folder];
            let (sum, count) = members.iter().filter(|&&q| mask[q]).fold((0.0, 0usize), |(s, c), &q| (s + values[q], c + 1));
            if count > 0 {
                out.push(Imputation { feature: k, value: sum / count as f64, level, folder, support_count: count });
                break;
            }
        }
    }
    Ok(out)
}

/// Rows of `omega` with every missing entry imputed from `obs_tree`.
pub fn impute_rows(omega: &ReferenceSet, d: &DataMatrix, obs_tree: &PartitionTree) -> Result<Matrix> {
    let m = d.n_features();
    let mut out = Matrix::zeros(omega.len(), m);
    for (r, &i) in omega.indices.iter().enumerate() {
        let row = out.row_mut(r);
        let (vals, mask) = (d.row_values(i), d.row_mask(i));
        for k in 0..m {
            row[k] = if mask[k] { vals[k] } else { 0.0 };
        }
        let imps = impute(vals, mask, obs_tree).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("point {}: {msg}", d.point_ids[i])),
            other => other,
        })?;
        for imp in imps {
            row[imp.feature] = imp.value;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CoupledGeometry {
    pub points_tree: PartitionTree,
    pub obs_tree: PartitionTree,
    /// Last tree-EMD kernel on the points.
    pub affinity: Affinity,
    /// Data rows of the reference set with missing entries imputed from
    /// the final observation tree.
    pub imputed: Matrix,
}

/// Alternating construction of point and observation trees.
///
/// Starts from a point tree built on the cosine affinity. Each round
/// imputes missing entries against the current observation tree, builds the
/// observation tree from tree-EMD distances over the point tree, then
/// rebuilds the point tree from tree-EMD distances over the new observation
/// tree.
pub fn coupled_refine(omega: &ReferenceSet, d: &DataMatrix, cfg: &TreeConfig) -> Result<CoupledGeometry> {
    if cfg.iters == 0 {
        return Err(Error::validation("coupled refinement needs at least one iteration"));
    }
    let n = omega.len();
    let m = d.n_features();
    let point_depth = cfg.depth.unwrap_or_else(|| default_depth(n));
    let obs_depth = default_depth(m);
    let cos = cosine_affinity(omega, d)?;
    let mut points_tree = build_partition_tree(&cos, point_depth, Axis::Points)?;
    let mut obs_tree = PartitionTree::root_only(m, Axis::Observations);
    let mut affinity = cos;
    let mut filled = impute_rows(omega, d, &obs_tree)?;
    for _ in 0..cfg.iters {
        let obs_aff = emd_affinity(&points_tree, &filled.transpose(), cfg.beta)?;
        obs_tree = build_partition_tree(&obs_aff, obs_depth, Axis::Observations)?;
        filled = impute_rows(omega, d, &obs_tree)?;
        affinity = emd_affinity(&obs_tree, &filled, cfg.beta)?;
        points_tree = build_partition_tree(&affinity, point_depth, Axis::Points)?;
    }
    Ok(CoupledGeometry { points_tree, obs_tree, affinity, imputed: filled })
}

/// Formats folder members for error messages.
pub(crate) fn describe_folder(members: &[usize]) -> String {
    let shown: Vec<String> = members.iter().take(5).map(|i| format!("{i}")).collect();
    if members.len() > 5 {
        format!("[{}, ...]", shown.join(", "))
    } else {
        format!("[{}]", shown.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn matrix(rows: &[&[Option<f64>]]) -> DataMatrix {
        let ids = (0..rows.len()).map(|i| format!("p{i}")).collect();
        let names = (0..rows[0].len()).map(|k| format!("f{k}")).collect();
        DataMatrix::new(ids, names, rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn all(d: &DataMatrix) -> ReferenceSet {
        ReferenceSet { indices: (0..d.n_points()).collect(), eta: d.n_features() }
    }

    #[test]
    fn cosine_on_joint_support() {
        let d = matrix(&[&[Some(1.0), Some(2.0), None], &[Some(2.0), Some(4.0), Some(5.0)], &[Some(1.0), Some(0.0), None], &[
            Some(0.0),
            Some(1.0),
            Some(3.0),
        ]]);
        let a = cosine_affinity(&all(&d), &d).unwrap();
        assert!((a.entries[(0, 1)] - 1.0).abs() < 1e-15);
        assert!(a.entries[(2, 3)].abs() < 1e-15);
        assert_eq!(a.entries[(1, 1)], 1.0);
        assert!(a.entries.asymmetry().unwrap() < 1e-12);
        assert!(a.flagged.is_empty());
    }

    #[test]
    fn cosine_flags_zero_norm_and_rejects_empty_support() {
        let d = matrix(&[&[Some(0.0), Some(0.0)], &[Some(1.0), Some(2.0)]]);
        let a = cosine_affinity(&all(&d), &d).unwrap();
        assert_eq!(a.entries[(0, 1)], 0.0);
        assert_eq!(a.flagged, vec![(0, 1)]);
        let d = matrix(&[&[Some(1.0), None], &[None, Some(2.0)]]);
        assert!(matches!(cosine_affinity(&all(&d), &d), Err(Error::Validation(_))));
    }

    fn pairs_affinity() -> Affinity {
        let a = Matrix::from_fn(4, 4, |i, j| {
            if i == j {
                1.0
            } else if (i == 0 && j == 2) || (i == 2 && j == 0) || (i == 1 && j == 3) || (i == 3 && j == 1) {
                0.9
            } else {
                0.05
            }
        });
        Affinity { entries: a, kind: AffinityKind::Kernel, flagged: Vec::new() }
    }

    #[test]
    fn two_pairs_split_at_level_two() {
        let tree = build_partition_tree(&pairs_affinity(), 3, Axis::Points).unwrap();
        tree.validate().unwrap();
        assert_eq!(tree.level(2).unwrap(), &[vec![0, 2], vec![1, 3]]);
        assert_eq!(tree.level(3).unwrap().len(), 4);
        assert_eq!(tree.parent(2, 1).unwrap(), 0);
    }

    #[test]
    fn brute_force_best_bipartition_matches() {
        let a = pairs_affinity();
        let mut best = (f64::MIN, 0u32);
        for mask in 1u32..15 {
            if mask.count_ones() != 2 {
                continue;
            }
            let within: f64 = (0..4)
                .flat_map(|i| (0..4).map(move |j| (i, j)))
                .filter(|&(i, j)| i < j && ((mask >> i) & 1) == ((mask >> j) & 1))
                .map(|(i, j)| a.entries[(i, j)])
                .sum();
            if within > best.0 {
                best = (within, mask);
            }
        }
        let tree = build_partition_tree(&a, 2, Axis::Points).unwrap();
        let side: Vec<usize> = (0..4).filter(|i| (best.1 >> i) & 1 == 1).collect();
        assert!(tree.level(2).unwrap().contains(&side));
    }

    #[test]
    fn depth_one_is_root_only() {
        let tree = build_partition_tree(&pairs_affinity(), 1, Axis::Points).unwrap();
        assert_eq!(tree.levels, vec![vec![vec![0, 1, 2, 3]]]);
    }

    #[test]
    fn identical_rows_still_nest() {
        let a = Affinity { entries: Matrix::from_fn(7, 7, |_, _| 1.0), kind: AffinityKind::Cosine, flagged: Vec::new() };
        let tree = build_partition_tree(&a, 3, Axis::Points).unwrap();
        tree.validate().unwrap();
        assert_eq!(tree.level(3).unwrap().len(), 4);
    }

    #[test]
    fn dyadic_level_counts() {
        assert_eq!(folders_at_level(1614, 6), 32);
        assert_eq!(default_depth(1614), 10);
        assert_eq!(folders_at_level(5, 4), 5);
        assert_eq!(default_depth(2), 1);
    }

    #[test]
    fn validate_rejects_broken_trees() {
        let mut t = PartitionTree::root_only(3, Axis::Points);
        t.levels.push(vec![vec![0, 1]]);
        assert!(t.validate().is_err());
        t.levels[1] = vec![vec![0, 1], vec![1, 2]];
        assert!(t.validate().is_err());
        t.levels[1] = vec![vec![0, 2], vec![1]];
        t.levels.push(vec![vec![0, 1], vec![2]]);
        assert!(t.validate().is_err());
    }

    #[test]
    fn emd_root_only_collapses() {
        let t = PartitionTree::root_only(3, Axis::Observations);
        let x = [1.0, 2.0, 3.0];
        let y = [1.5, 2.5, 3.5];
        assert!((tree_emd_distance(&t, &x, &y, 1.0).unwrap() - 3.0 * 0.5).abs() < 1e-12);
        assert_eq!(tree_emd_distance(&t, &x, &x, 1.0).unwrap(), 0.0);
        assert!(tree_emd_distance(&t, &x, &[1.0], 1.0).is_err());
    }

    #[test]
    fn emd_level_weights() {
        let t = PartitionTree {
            levels: vec![vec![vec![0, 1]], vec![vec![0], vec![1]]],
            axis: Axis::Observations,
            schema_version: TREE_SCHEMA_VERSION,
        };
        // root: 2^{-1}·2·|0.5−0| ; leaves: 1·|1−0| + 1·|0−0|
        assert!((tree_emd_distance(&t, &[1.0, 0.0], &[0.0, 0.0], 1.0).unwrap() - 1.5).abs() < 1e-12);
    }

    fn arb_tree() -> impl Strategy<Value = PartitionTree> {
        (1usize..4).prop_map(|depth| {
            let mut levels = vec![vec![(0..8).collect::<Vec<_>>()]];
            for l in 1..depth {
                let size = 8 >> l;
                levels.push((0..(1 << l)).map(|f| (f * size..(f + 1) * size).collect()).collect());
            }
            PartitionTree { levels, axis: Axis::Observations, schema_version: TREE_SCHEMA_VERSION }
        })
    }

    proptest! {
        #[test]
        fn emd_is_a_metric_on_fixed_tree(
            tree in arb_tree(),
            x in proptest::collection::vec(-5.0f64..5.0, 8),
            y in proptest::collection::vec(-5.0f64..5.0, 8),
            z in proptest::collection::vec(-5.0f64..5.0, 8),
        ) {
            let dxy = tree_emd_distance(&tree, &x, &y, 1.0).unwrap();
            let dyx = tree_emd_distance(&tree, &y, &x, 1.0).unwrap();
            let dxz = tree_emd_distance(&tree, &x, &z, 1.0).unwrap();
            let dzy = tree_emd_distance(&tree, &z, &y, 1.0).unwrap();
            prop_assert!((dxy - dyx).abs() < 1e-12);
            prop_assert!(dxy <= dxz + dzy + 1e-9);
        }
    }

    fn obs_tree() -> PartitionTree {
        PartitionTree {
            levels: vec![vec![(0..6).collect()], vec![vec![0, 1, 2], vec![3, 4, 5]], vec![vec![0], vec![1, 2], vec![3, 4, 5]]],
            axis: Axis::Observations,
            schema_version: TREE_SCHEMA_VERSION,
        }
    }

    #[test]
    fn imputes_from_sibling_mean() {
        let values = [0.0, 0.0, 0.0, f64::NAN, 2.0, 4.0];
        let mask = [true, true, true, false, true, true];
        let imps = impute(&values, &mask, &obs_tree()).unwrap();
        assert_eq!(imps, vec![Imputation { feature: 3, value: 3.0, level: 3, folder: 2, support_count: 2 }]);
    }

    #[test]
    fn falls_back_to_root() {
        let values = [1.0, 5.0, f64::NAN, f64::NAN, f64::NAN, f64::NAN];
        let mask = [true, true, false, false, false, false];
        let imps = impute(&values, &mask, &obs_tree()).unwrap();
        let root: Vec<_> = imps.iter().filter(|i| i.feature >= 3).collect();
        assert!(root.iter().all(|i| i.level == 1 && i.value == 3.0 && i.support_count == 2));
        let f2 = imps.iter().find(|i| i.feature == 2).unwrap();
        assert_eq!((f2.level, f2.value), (3, 5.0));
    }

    #[test]
    fn impute_edge_cases() {
        assert!(impute(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[true; 6], &obs_tree()).unwrap().is_empty());
        assert!(matches!(impute(&[0.0; 6], &[false; 6], &obs_tree()), Err(Error::Validation(_))));
    }

    #[test]
    fn unmasking_siblings_deepens_level() {
        let values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut mask = [true, false, false, false, false, false];
        let mut last = 0;
        for k in [5, 4] {
            let level = impute(&values, &mask, &obs_tree()).unwrap().iter().find(|i| i.feature == 3).unwrap().level;
            assert!(level >= last);
            last = level;
            mask[k] = true;
        }
        let level = impute(&values, &mask, &obs_tree()).unwrap().iter().find(|i| i.feature == 3).unwrap().level;
        assert!(level > 1 && level >= last);
    }

    #[test]
    fn masked_values_are_never_read() {
        let mask = [true, true, true, false, true, true];
        let a = impute(&[0.0, 1.0, 2.0, 1e300, 2.0, 4.0], &mask, &obs_tree()).unwrap();
        let b = impute(&[0.0, 1.0, 2.0, f64::NAN, 2.0, 4.0], &mask, &obs_tree()).unwrap();
        assert_eq!(a, b);
    }

    fn planted_blocks(perm: &[usize]) -> DataMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = perm.len();
        let mut cells = vec![Vec::new(); n];
        for (orig, row) in (0..n).map(|p| (p, p < n / 2)).map(|(p, a)| (p, (0..8).map(|k| {
            let hi = (k < 4) == a;
            Some(if hi { 3.0 } else { -3.0 } * if k % 2 == 0 { 1.0 } else { 0.6 } + rng.gen_range(-0.3..0.3))
        }).collect::<Vec<_>>())) {
            cells[perm[orig]] = row;
        }
        cells[perm[1]][2] = None;
        cells[perm[n - 1]][5] = None;
        let ids = (0..n).map(|i| format!("p{i}")).collect();
        let names = (0..8).map(|k| format!("f{k}")).collect();
        DataMatrix::new(ids, names, cells).unwrap()
    }

    fn level2_sets(tree: &PartitionTree, perm: &[usize]) -> Vec<Vec<usize>> {
        let mut inv = vec![0; perm.len()];
        for (o, &p) in perm.iter().enumerate() {
            inv[p] = o;
        }
        let mut sets: Vec<Vec<usize>> = tree.level(2).unwrap().iter().map(|f| {
            let mut v: Vec<usize> = f.iter().map(|&i| inv[i]).collect();
            v.sort_unstable();
            v
        }).collect();
        sets.sort();
        sets
    }

    #[test]
    fn coupled_refine_recovers_planted_blocks() {
        let perm: Vec<usize> = (0..24).collect();
        let d = planted_blocks(&perm);
        let omega = all(&d);
        let cfg = TreeConfig { depth: Some(3), iters: 1, beta: 1.0 };
        let g1 = coupled_refine(&omega, &d, &cfg).unwrap();
        g1.points_tree.validate().unwrap();
        g1.obs_tree.validate().unwrap();
        assert_eq!(level2_sets(&g1.points_tree, &perm), vec![(0..12).collect::<Vec<_>>(), (12..24).collect()]);
        assert_eq!(g1.obs_tree.level(2).unwrap(), &[vec![0, 1, 2, 3], vec![4, 5, 6, 7]]);
        assert!(g1.affinity.entries.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(g1.imputed.is_finite());

        let g3 = coupled_refine(&omega, &d, &TreeConfig { iters: 3, ..cfg }).unwrap();
        assert_eq!(level2_sets(&g3.points_tree, &perm), level2_sets(&g1.points_tree, &perm));
    }

    #[test]
    fn coupled_refine_is_permutation_equivariant() {
        let ident: Vec<usize> = (0..24).collect();
        let perm: Vec<usize> = (0..24).map(|i| (i * 7) % 24).collect();
        let cfg = TreeConfig { depth: Some(2), iters: 2, beta: 1.0 };
        let a = coupled_refine(&all(&planted_blocks(&ident)), &planted_blocks(&ident), &cfg).unwrap();
        let b = coupled_refine(&all(&planted_blocks(&perm)), &planted_blocks(&perm), &cfg).unwrap();
        assert_eq!(level2_sets(&a.points_tree, &ident), level2_sets(&b.points_tree, &perm));
    }

    #[test]
    fn coupled_refine_needs_an_iteration() {
        let d = planted_blocks(&(0..8).collect::<Vec<_>>());
        assert!(coupled_refine(&all(&d), &d, &TreeConfig { iters: 0, ..TreeConfig::default() }).is_err());
    }

    #[test]
    fn describe_folder_truncates() {
        assert_eq!(describe_folder(&[1, 2]), "[1, 2]".to_string());
        assert_eq!(describe_folder(&[1, 2, 3, 4, 5, 6]), "[1, 2, 3, 4, 5, ...]".to_string());
    }
}
