//! In-memory orchestration of the full pipeline: preprocessing, coupled
//! geometry, pseudopoint labels, the net ensemble, both embeddings and the
//! validation battery.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cogeometry::{self, CoupledGeometry, PartitionTree, TreeConfig};
use crate::dataset::{self, DataMatrix, PolarityMap, ReferenceSet, Standardization};
use crate::error::{check_dim, Error, Result};
use crate::expert::{self, LabelFunction, LabelMap, PseudopointSet};
use crate::linalg::Matrix;
use crate::netens::{self, EnsembleConfig, NetEnsemble};
use crate::spectral::{self, BandwidthRule, Embedding, Kernel, MarkovOperator};
use crate::validate::{self, AffinityHistograms, BoundCheck, LipschitzEntry, NeighborhoodMass, SpectralDimension};
use crate::whiten::{self, LocalMoments, Standardized};

/// Level whose 32 folders become pseudopoints (level 1 is the root).
pub const DEFAULT_LEVEL: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Missing-entry budget for the reference set; `None` means `m / 10`.
    pub eta: Option<usize>,
    pub tree: TreeConfig,
    pub level: usize,
    pub label_range: (f64, f64),
    pub ensemble: EnsembleConfig,
    /// Train only on reference rows without imputed entries.
    pub exclude_imputed_rows: bool,
    /// Rank of the neighbor whose mean distance sets kernel bandwidths.
    pub kernel_r: usize,
    /// Fixed bandwidth for the DNN kernel, overriding the neighbor rule.
    pub kernel_epsilon: Option<f64>,
    pub embed_dim: usize,
    pub t: f64,
    /// Whitening neighborhood size; `None` means `max(2d + 2, 20)`.
    pub whiten_k: Option<usize>,
    pub pinv_tol: f64,
    pub validate: ValidateToggles,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            eta: None,
            tree: TreeConfig::default(),
            level: DEFAULT_LEVEL,
            label_range: expert::DEFAULT_SCORE_RANGE,
            ensemble: EnsembleConfig::default(),
            exclude_imputed_rows: false,
            kernel_r: spectral::DEFAULT_BANDWIDTH_RANK,
            kernel_epsilon: None,
            embed_dim: 5,
            t: 1.0,
            whiten_k: None,
            pinv_tol: whiten::PINV_TOL,
            validate: ValidateToggles::default(),
        }
    }
}

impl PipelineConfig {
    pub fn kernel_rule(&self) -> BandwidthRule {
        match self.kernel_epsilon {
            Some(value) => BandwidthRule::Fixed { value },
            None => BandwidthRule::NearestNeighborMean { r: self.kernel_r },
        }
    }

    pub fn whiten_neighbors(&self) -> usize {
        self.whiten_k.unwrap_or_else(|| whiten::default_neighborhood(self.embed_dim))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateToggles {
    pub lipschitz: bool,
    pub neighborhood_mass: bool,
    pub spectral_dimension: bool,
    pub histograms: bool,
    pub bound: bool,
    pub confusion: bool,
    pub baselines: bool,
}

impl Default for ValidateToggles {
    fn default() -> Self {
        ValidateToggles { lipschitz: true, neighborhood_mass: true, spectral_dimension: true, histograms: true, bound: true, confusion: true, baselines: true }
    }
}

/// Output of preprocessing: the standardized, depolarized and weighted data
/// with the transforms needed to map new points the same way.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: DataMatrix,
    pub standardization: Standardization,
    pub polarity: PolarityMap,
    pub reference: ReferenceSet,
}

impl Prepared {
    /// Applies the fitted standardization, polarity and weights to new rows
    /// with the same features.
    pub fn transform(&self, raw: &DataMatrix) -> Result<DataMatrix> {
        if raw.feature_names != self.data.feature_names {
            return Err(Error::validation("new points must carry the training features in the training order"));
        }
        let mut d = self.standardization.apply(raw)?;
        d = self.polarity.apply(&d)?;
        d.groups = self.data.groups.clone();
        d.weights = self.data.weights.clone();
        dataset::apply_weights(&d)
    }
}

/// The fitted parts of [`Prepared`]; with the raw data they rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedState {
    pub standardization: Standardization,
    pub polarity: PolarityMap,
    pub reference: ReferenceSet,
}

impl Prepared {
    pub fn state(&self) -> PreparedState {
        PreparedState { standardization: self.standardization.clone(), polarity: self.polarity.clone(), reference: self.reference.clone() }
    }

    /// Rebuilds the prepared data from `raw` (with its groups set) and a
    /// saved state.
    pub fn restore(raw: &DataMatrix, state: PreparedState) -> Result<Prepared> {
        let d = state.standardization.apply(raw)?;
        let d = state.polarity.apply(&d)?;
        let data = dataset::apply_weights(&d)?;
        if let Some(&last) = state.reference.indices.last() {
            if last >= data.n_points() {
                return Err(Error::validation("saved reference set does not fit the data"));
            }
        }
        Ok(Prepared { data, standardization: state.standardization, polarity: state.polarity, reference: state.reference })
    }

    /// Maps a row of prepared values back to the raw feature scale.
    pub fn to_raw_scale(&self, row: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.data.n_features(), row.len())?;
        Ok(row
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let w = self.data.group_weight(k);
                let (mean, sd) = (self.standardization.means[k], self.standardization.sds[k]);
                v / w * self.polarity.sign(k) * sd + mean
            })
            .collect())
    }
}

pub fn prepare(raw: &DataMatrix, cfg: &PipelineConfig) -> Result<Prepared> {
    let standardization = dataset::fit_standardization(raw)?;
    let standardized = standardization.apply(raw)?;
    let (depolarized, polarity) = dataset::depolarize(&standardized)?;
    let data = dataset::apply_weights(&depolarized)?;
    let eta = cfg.eta.unwrap_or_else(|| dataset::default_eta(raw.n_features()));
    let reference = dataset::select_reference(&data, eta)?;
    if reference.len() < 3 {
        return Err(Error::validation(format!("only {} points qualify for the reference set; raise eta", reference.len())));
    }
    Ok(Prepared { data, standardization, polarity, reference })
}

/// The parts of the coupled geometry later stages need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Organization {
    pub points_tree: PartitionTree,
    pub obs_tree: PartitionTree,
    /// Reference rows with missing entries imputed.
    pub imputed: Matrix,
}

impl From<CoupledGeometry> for Organization {
    fn from(g: CoupledGeometry) -> Self {
        Organization { points_tree: g.points_tree, obs_tree: g.obs_tree, imputed: g.imputed }
    }
}

pub fn organize(p: &Prepared, cfg: &PipelineConfig) -> Result<Organization> {
    Ok(cogeometry::coupled_refine(&p.reference, &p.data, &cfg.tree)?.into())
}

pub fn pseudopoints(p: &Prepared, geom: &Organization, cfg: &PipelineConfig) -> Result<PseudopointSet> {
    expert::extract_pseudopoints(&geom.points_tree, cfg.level, &p.reference, &p.data, &geom.obs_tree)
}

/// Folder scores from a known per-point target: the mean target over each
/// folder's members, mapped affinely onto `range`. `target` is indexed like
/// the reference set.
pub fn auto_scores(ps: &PseudopointSet, tree: &PartitionTree, target: &[f64], range: (f64, f64)) -> Result<Vec<(usize, Option<f64>)>> {
    check_dim(tree.len(), target.len())?;
    let folders = tree.level(ps.level)?;
    let means: Vec<f64> = ps
        .folders
        .iter()
        .map(|&f| {
            let members = &folders[f];
            members.iter().map(|&i| target[i]).sum::<f64>() / members.len() as f64
        })
        .collect();
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mid = 0.5 * (range.0 + range.1);
    Ok(ps
        .folders
        .iter()
        .zip(&means)
        .map(|(&f, &v)| {
            let score = if hi > lo { range.0 + (v - lo) / (hi - lo) * (range.1 - range.0) } else { mid };
            (f, Some(score.clamp(range.0, range.1)))
        })
        .collect())
}

/// Reference-set positions used for training.
pub fn training_rows(p: &Prepared, cfg: &PipelineConfig) -> Result<Vec<usize>> {
    if !cfg.exclude_imputed_rows {
        return Ok((0..p.reference.len()).collect());
    }
    let rows: Vec<usize> = p.reference.indices.iter().enumerate().filter(|(_, &i)| p.data.missing_count(i) == 0).map(|(pos, _)| pos).collect();
    if rows.is_empty() {
        return Err(Error::validation("no fully observed reference rows remain for training; disable exclude_imputed_rows"));
    }
    Ok(rows)
}

pub fn train(p: &Prepared, geom: &Organization, labels: &LabelFunction, cfg: &PipelineConfig) -> Result<NetEnsemble> {
    check_dim(geom.imputed.rows(), labels.g.len())?;
    let rows = training_rows(p, cfg)?;
    let x = select_matrix_rows(&geom.imputed, &rows);
    let g01: Vec<f64> = rows.iter().map(|&i| labels.rescaled[i]).collect();
    netens::train_ensemble(&x, &g01, labels.range, &cfg.ensemble)
}

pub(crate) fn select_matrix_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), m.cols(), |i, j| m[(rows[i], j)])
}

/// A kernel on some representation of the reference set and its diffusion
/// embedding.
#[derive(Debug, Clone)]
pub struct Embedded {
    pub kernel: Kernel,
    pub embedding: Embedding,
}

fn embed_vectors(vectors: &Matrix, rule: BandwidthRule, cfg: &PipelineConfig) -> Result<Embedded> {
    let kernel = spectral::gaussian_kernel(vectors, rule)?;
    let dim = cfg.embed_dim.min(vectors.rows().saturating_sub(1));
    let embedding = spectral::diffusion_embed(&kernel, dim, cfg.t)?;
    Ok(Embedded { kernel, embedding })
}

/// Diffusion embedding of the DNN representation `Ω*`.
pub fn embed(ens: &NetEnsemble, geom: &Organization, cfg: &PipelineConfig) -> Result<Embedded> {
    let rep = ens.representation_matrix(&geom.imputed)?;
    embed_vectors(&rep, cfg.kernel_rule(), cfg)
}

/// Baseline diffusion embedding of the imputed features themselves.
pub fn embed_euclidean(geom: &Organization, cfg: &PipelineConfig) -> Result<Embedded> {
    embed_vectors(&geom.imputed, BandwidthRule::NearestNeighborMean { r: cfg.kernel_r }, cfg)
}

#[derive(Debug, Clone)]
pub struct Whitened {
    pub moments: LocalMoments,
    pub standardized: Standardized,
}

pub fn standardize_embedding(emb: &Embedding, cfg: &PipelineConfig) -> Result<Whitened> {
    let coords = emb.coordinates();
    let k = cfg.whiten_neighbors().min(coords.rows());
    let moments = whiten::local_moments(&coords, k, cfg.pinv_tol)?;
    let dim = cfg.embed_dim.min(coords.rows().saturating_sub(1));
    let rule = BandwidthRule::NearestNeighborMean { r: cfg.kernel_r };
    let standardized = whiten::standardized_embedding(&coords, &moments, rule, dim, cfg.t)?;
    Ok(Whitened { moments, standardized })
}

/// Everything the pipeline produces for one dataset.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub prepared: Prepared,
    pub geometry: Organization,
    pub pseudopoints: PseudopointSet,
    pub label_map: LabelMap,
    pub labels: LabelFunction,
    pub ensemble: NetEnsemble,
    pub dnn: Embedded,
    pub whitened: Whitened,
    /// Ensemble output on the reference set, in `(0, 1)`.
    pub f: Vec<f64>,
}

/// Runs every stage, labeling pseudopoints by the mean of `target` (indexed
/// like the rows of `raw`) over each folder.
pub fn run_with_target(raw: &DataMatrix, target: &[f64], cfg: &PipelineConfig) -> Result<PipelineRun> {
    check_dim(raw.n_points(), target.len())?;
    let prepared = prepare(raw, cfg)?;
    let geometry = organize(&prepared, cfg)?;
    let pseudopoints = pseudopoints(&prepared, &geometry, cfg)?;
    let reference_target: Vec<f64> = prepared.reference.indices.iter().map(|&i| target[i]).collect();
    let scores = auto_scores(&pseudopoints, &geometry.points_tree, &reference_target, cfg.label_range)?;
    let label_map = LabelMap::new(&pseudopoints, &scores, cfg.label_range)?;
    let labels = expert::propagate_labels(&label_map, &geometry.points_tree)?;
    let ensemble = train(&prepared, &geometry, &labels, cfg)?;
    assemble(prepared, geometry, pseudopoints, label_map, ensemble, cfg)
}

/// Rebuilds the derived stages (labels, both embeddings, `f`) from the
/// persisted ones.
pub fn assemble(
    prepared: Prepared,
    geometry: Organization,
    pseudopoints: PseudopointSet,
    label_map: LabelMap,
    ensemble: NetEnsemble,
    cfg: &PipelineConfig,
) -> Result<PipelineRun> {
    let labels = expert::propagate_labels(&label_map, &geometry.points_tree)?;
    let dnn = embed(&ensemble, &geometry, cfg)?;
    let whitened = standardize_embedding(&dnn.embedding, cfg)?;
    let f = ensemble.ranks(&geometry.imputed)?;
    Ok(PipelineRun { prepared, geometry, pseudopoints, label_map, labels, ensemble, dnn, whitened, f })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingBaselines {
    pub row_sum: Vec<f64>,
    /// NNLS fit of the features to the labels `g`.
    pub nnls: Vec<f64>,
    pub nnls_weights: Vec<f64>,
    pub nnls_kkt_residual: f64,
    pub row_sum_correlation: Option<f64>,
    pub nnls_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Features and the quality function `f` under the DNN embedding.
    pub lipschitz: Option<Vec<LipschitzEntry>>,
    pub mass_dnn: Option<NeighborhoodMass>,
    pub mass_euclidean: Option<NeighborhoodMass>,
    pub dim_dnn: Option<SpectralDimension>,
    pub dim_euclidean: Option<SpectralDimension>,
    pub histograms: Option<AffinityHistograms>,
    pub bound: Option<BoundCheck>,
    /// Rows: quartile of `g`; columns: quartile of `f`.
    pub confusion: Option<[[usize; 4]; 4]>,
    pub baselines: Option<RankingBaselines>,
}

/// Name given to the ensemble output in the Lipschitz table.
pub const QUALITY_NAME: &str = "quality";

fn transition(k: &Kernel) -> Result<MarkovOperator> {
    spectral::markov_normalize(k)
}

pub fn validate_run(run: &PipelineRun, euclid: &Embedded, cfg: &PipelineConfig) -> Result<ValidationReport> {
    let toggles = cfg.validate;
    let imputed = &run.geometry.imputed;
    let lipschitz = if toggles.lipschitz {
        let n = imputed.rows();
        let mut names: Vec<String> = run.prepared.data.feature_names.clone();
        names.push(String::from(QUALITY_NAME));
        let features = Matrix::from_fn(n, names.len(), |i, j| if j < imputed.cols() { imputed[(i, j)] } else { run.f[i] });
        Some(validate::feature_lipschitz(&run.dnn.embedding.coordinates(), &features, &names, Some(validate::DEFAULT_NEIGHBORS))?)
    } else {
        None
    };
    let (mass_dnn, mass_euclidean) = if toggles.neighborhood_mass {
        (
            Some(validate::neighborhood_mass(&transition(&run.dnn.kernel)?.transition, false)),
            Some(validate::neighborhood_mass(&transition(&euclid.kernel)?.transition, false)),
        )
    } else {
        (None, None)
    };
    let (dim_dnn, dim_euclidean) = if toggles.spectral_dimension {
        (
            Some(validate::spectral_dimension(&run.dnn.kernel, validate::SPECTRAL_CUTOFF)?),
            Some(validate::spectral_dimension(&euclid.kernel, validate::SPECTRAL_CUTOFF)?),
        )
    } else {
        (None, None)
    };
    let histograms = if toggles.histograms { Some(validate::affinity_histograms(run.dnn.kernel.entries(), &run.labels.g, 10)?) } else { None };
    let bound = if toggles.bound { Some(validate::separation_bound_check(&run.f, &run.labels.rescaled)?) } else { None };
    let confusion = if toggles.confusion { Some(validate::confusion(&run.labels.g, &run.f)?) } else { None };
    let baselines = if toggles.baselines {
        let reference = run.prepared.data.select_rows(&run.prepared.reference.indices);
        let row_sum = validate::row_sum_rank(&reference);
        let sol = validate::nnls_rank(imputed, &run.labels.g, None)?;
        Some(RankingBaselines {
            row_sum_correlation: validate::pearson(&row_sum, &run.f),
            nnls_correlation: validate::pearson(&sol.fitted, &run.f),
            row_sum,
            nnls: sol.fitted,
            nnls_weights: sol.weights,
            nnls_kkt_residual: sol.kkt_residual,
        })
    } else {
        None
    };
    Ok(ValidationReport { lipschitz, mass_dnn, mass_euclidean, dim_dnn, dim_euclidean, histograms, bound, confusion, baselines })
}

/// Coordinates of new points in both embeddings, plus their imputed rows
/// and ensemble outputs.
#[derive(Debug, Clone)]
pub struct ExtendedPoints {
    pub imputed: Matrix,
    pub diffusion: Matrix,
    pub standardized: Matrix,
    pub f: Vec<f64>,
}

/// Maps new raw points through preprocessing, imputation, the ensemble and
/// both Nyström extensions. Skipped eigen-directions are left out of the
/// returned coordinates.
pub fn extend(run: &PipelineRun, raw_new: &DataMatrix) -> Result<ExtendedPoints> {
    let d = run.prepared.transform(raw_new)?;
    let all = ReferenceSet { indices: (0..d.n_points()).collect(), eta: d.n_features() };
    let imputed = cogeometry::impute_rows(&all, &d, &run.geometry.obs_tree)?;
    let rep_new = run.ensemble.representation_matrix(&imputed)?;
    let rep_ref = run.ensemble.representation_matrix(&run.geometry.imputed)?;
    let sigma = run.dnn.kernel.bandwidth.as_ref().map(|b| b.value).ok_or_else(|| Error::Internal(String::from("DNN kernel has no bandwidth record")))?;
    let cross = spectral::gaussian_cross_kernel(&rep_new, &rep_ref, sigma)?;
    let emb = &run.dnn.embedding;
    let ext = spectral::nystrom_extend(emb, &cross)?;
    let diffusion = spectral::extended_coordinates(emb, &ext);
    let ref_coords = emb.coordinates();
    if !ext.skipped.is_empty() {
        return Err(Error::validation("the diffusion embedding has negligible eigenvalues; lower embed_dim before extending"));
    }
    let st = &run.whitened.standardized;
    let ext_std = whiten::extend_standardized(&run.whitened.moments, &ref_coords, &st.embedding, &diffusion, st.sigma)?;
    let standardized = spectral::extended_coordinates(&st.embedding, &ext_std);
    let f = run.ensemble.ranks(&imputed)?;
    Ok(ExtendedPoints { imputed, diffusion, standardized, f })
}

/// Mean absolute errors of tree imputation and of column-mean imputation on
/// observed reference entries that were hidden and then imputed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputationCheck {
    pub hidden: usize,
    pub tree_error: f64,
    pub mean_error: f64,
}

/// Hides `fraction` of the observed reference entries (keeping at least one
/// per row), rebuilds the coupled geometry on the masked data and compares
/// its imputations with the hidden values.
pub fn imputation_check(p: &Prepared, cfg: &PipelineConfig, fraction: f64, seed: u64) -> Result<ImputationCheck> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::validation("holdout fraction must lie in (0, 1)"));
    }
    let omega = p.data.select_rows(&p.reference.indices);
    let (n, m) = (omega.n_points(), omega.n_features());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<Vec<Option<f64>>> = (0..n).map(|i| omega.row_cells(i)).collect();
    let mut hidden = Vec::new();
    for (i, row) in cells.iter_mut().enumerate() {
        let mut observed: Vec<usize> = (0..m).filter(|&k| row[k].is_some()).collect();
        observed.shuffle(&mut rng);
        let take = ((observed.len() as f64 * fraction) as usize).min(observed.len().saturating_sub(1));
        for &k in &observed[..take] {
            hidden.push((i, k, row[k].take().ok_or_else(|| Error::Internal(String::from("hidden cell was empty")))?));
        }
    }
    if hidden.is_empty() {
        return Err(Error::validation("nothing to hide"));
    }
    let mut masked = DataMatrix::new(omega.point_ids.clone(), omega.feature_names.clone(), cells)?;
    masked.groups = omega.groups.clone();
    masked.weights = omega.weights.clone();
    let all = ReferenceSet { indices: (0..n).collect(), eta: m };
    let geom = cogeometry::coupled_refine(&all, &masked, &cfg.tree)?;
    let col_means: Vec<f64> = (0..m)
        .map(|k| {
            let (s, c) = masked.observed_in_column(k).fold((0.0, 0usize), |(s, c), (_, v)| (s + v, c + 1));
            if c == 0 { 0.0 } else { s / c as f64 }
        })
        .collect();
    let (mut tree_err, mut mean_err) = (0.0, 0.0);
    for &(i, k, v) in &hidden {
        tree_err += (geom.imputed[(i, k)] - v).abs();
        mean_err += (col_means[k] - v).abs();
    }
    let h = hidden.len() as f64;
    Ok(ImputationCheck { hidden: hidden.len(), tree_error: tree_err / h, mean_error: mean_err / h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, SynthConfig};

    fn small() -> (synth::SynthData, PipelineConfig) {
        let s = synth::generate(&SynthConfig { n_points: 120, n_relevant_features: 12, n_noise_features: 4, intrinsic_dim: 3, seed: 5, ..SynthConfig::default() })
            .unwrap();
        let mut cfg = PipelineConfig { level: 4, embed_dim: 3, ..PipelineConfig::default() };
        cfg.ensemble.k = 3;
        cfg.ensemble.epochs = 10;
        cfg.ensemble.pretrain.epochs = 3;
        (s, cfg)
    }

    #[test]
    fn end_to_end_small() {
        let (s, cfg) = small();
        let run = run_with_target(&s.data, &s.truth, &cfg).unwrap();
        assert_eq!(run.f.len(), run.prepared.reference.len());
        assert_eq!(run.ensemble.nets.len(), 3);
        let euclid = embed_euclidean(&run.geometry, &cfg).unwrap();
        let report = validate_run(&run, &euclid, &cfg).unwrap();
        assert!(report.lipschitz.unwrap().iter().any(|e| e.feature == QUALITY_NAME));
        assert!(report.baselines.unwrap().nnls_kkt_residual < 1e-8);
    }

    #[test]
    fn restoring_a_saved_state_reproduces_preparation() {
        let (s, cfg) = small();
        let p = prepare(&s.data, &cfg).unwrap();
        let q = Prepared::restore(&s.data, p.state()).unwrap();
        assert_eq!(p.data, q.data);
        let i = p.reference.indices[0];
        let raw = q.to_raw_scale(p.data.row_values(i)).unwrap();
        for (k, v) in raw.iter().enumerate() {
            if let Some(x) = s.data.get(i, k) {
                assert!((v - x).abs() < 1e-9 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn auto_scores_span_the_range() {
        let (s, cfg) = small();
        let p = prepare(&s.data, &cfg).unwrap();
        let geom = organize(&p, &cfg).unwrap();
        let ps = pseudopoints(&p, &geom, &cfg).unwrap();
        let target: Vec<f64> = p.reference.indices.iter().map(|&i| s.truth[i]).collect();
        let scores = auto_scores(&ps, &geom.points_tree, &target, (1.0, 10.0)).unwrap();
        let vals: Vec<f64> = scores.iter().map(|(_, v)| v.unwrap()).collect();
        assert_eq!(vals.iter().copied().fold(f64::INFINITY, f64::min), 1.0);
        assert_eq!(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max), 10.0);
        LabelMap::new(&ps, &scores, (1.0, 10.0)).unwrap();
    }

    #[test]
    fn extending_a_duplicate_point_matches_its_reference_row() {
        let (s, cfg) = small();
        let run = run_with_target(&s.data, &s.truth, &cfg).unwrap();
        let i = run.prepared.reference.indices[7];
        let dup = s.data.select_rows(&[i, i]);
        let ext = extend(&run, &dup).unwrap();
        assert_eq!(ext.diffusion.row(0), ext.diffusion.row(1));
        assert!((ext.f[0] - run.f[7]).abs() < 1e-12);
        // The duplicate's imputed row equals the reference row, so its cross
        // kernel row equals the reference kernel row.
        let emb = &run.dnn.embedding;
        let kernel_row = Matrix::from_fn(1, emb.len(), |_, j| run.dnn.kernel.entries()[(7, j)]);
        let ext_ref = spectral::nystrom_extend(emb, &kernel_row).unwrap();
        let expect = spectral::extended_coordinates(emb, &ext_ref);
        for c in 0..expect.cols() {
            assert!((expect[(0, c)] - ext.diffusion[(0, c)]).abs() < 1e-8);
        }
    }

    #[test]
    fn excluding_imputed_rows_needs_complete_rows() {
        let (s, mut cfg) = small();
        cfg.exclude_imputed_rows = true;
        let p = prepare(&s.data, &cfg).unwrap();
        let rows = training_rows(&p, &cfg);
        match rows {
            Ok(r) => assert!(r.iter().all(|&pos| p.data.missing_count(p.reference.indices[pos]) == 0)),
            Err(e) => assert!(e.is_user_error()),
        }
    }

    #[test]
    fn imputation_check_reports_both_errors() {
        let (s, cfg) = small();
        let p = prepare(&s.data, &cfg).unwrap();
        let c = imputation_check(&p, &cfg, 0.1, 3).unwrap();
        assert!(c.hidden > 0 && c.tree_error.is_finite() && c.mean_error > 0.0);
        assert!(imputation_check(&p, &cfg, 1.0, 3).is_err());
    }
}
