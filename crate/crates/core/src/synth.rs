//! Seeded synthetic datasets with planted clusters, nonlinear feature lifts,
//! irrelevant features, missing entries and a known ground-truth score.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{sin, sqrt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::DataMatrix;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_points: usize,
    pub intrinsic_dim: usize,
    pub n_relevant_features: usize,
    pub n_noise_features: usize,
    pub n_clusters: usize,
    /// Relative within-cluster spreads, one per cluster; empty means all 1.
    pub cluster_spread_ratios: Vec<f64>,
    pub missing_rate: f64,
    pub polarity_flip_rate: f64,
    /// Standard deviation of the label noise, relative to that of the truth.
    pub label_noise: f64,
    /// Distance of cluster centers from the origin in latent units.
    pub cluster_separation: f64,
    /// Within-cluster latent standard deviation before the spread ratios.
    pub base_spread: f64,
    /// Relevant-feature noise relative to each lift's amplitude.
    pub feature_noise: f64,
    /// Relevant features lifting the scored coordinate 0; the others spread
    /// round-robin over the remaining coordinates. Zero spreads every
    /// relevant feature round-robin over all coordinates.
    pub n_scored_features: usize,
    /// Place cluster centers with a zero scored coordinate, so cluster
    /// membership carries no information about the truth.
    pub nuisance_clusters: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_points: 600,
            intrinsic_dim: 8,
            n_relevant_features: 40,
            n_noise_features: 20,
            n_clusters: 3,
            cluster_spread_ratios: Vec::new(),
            missing_rate: 0.1,
            polarity_flip_rate: 0.3,
            label_noise: 0.0,
            cluster_separation: 2.0,
            base_spread: 1.0,
            feature_noise: 0.05,
            n_scored_features: 2,
            nuisance_clusters: true,
            seed: 2024,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_points == 0 || self.intrinsic_dim == 0 || self.n_relevant_features == 0 || self.n_clusters == 0 {
            return Err(Error::validation("points, intrinsic dimension, relevant features and clusters must be positive"));
        }
        if self.n_clusters > self.n_points {
            return Err(Error::validation(format!("{} clusters cannot be filled by {} points", self.n_clusters, self.n_points)));
        }
        if !self.cluster_spread_ratios.is_empty() && self.cluster_spread_ratios.len() != self.n_clusters {
            return Err(Error::validation("one spread ratio per cluster is required"));
        }
        if self.cluster_spread_ratios.iter().any(|r| !(*r > 0.0)) || !(self.base_spread > 0.0) {
            return Err(Error::validation("spreads must be positive"));
        }
        for (name, r) in [("missing_rate", self.missing_rate), ("polarity_flip_rate", self.polarity_flip_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::validation(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.missing_rate >= 1.0 {
            return Err(Error::validation("missing_rate 1 leaves nothing observed"));
        }
        if self.n_scored_features > self.n_relevant_features {
            return Err(Error::validation("more scored features than relevant features"));
        }
        if self.n_scored_features > 0 && self.n_scored_features < self.n_relevant_features && self.intrinsic_dim < 2 {
            return Err(Error::validation("unscored relevant features need a second latent coordinate"));
        }
        if self.nuisance_clusters && self.intrinsic_dim < 2 && self.cluster_separation > 0.0 {
            return Err(Error::validation("nuisance clusters need a second latent coordinate"));
        }
        if !(self.label_noise >= 0.0) || !(self.feature_noise >= 0.0) || !(self.cluster_separation >= 0.0) {
            return Err(Error::validation("noise levels and separation must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lift {
    Linear,
    Sine,
    Cubic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    /// Latent coordinate driving the feature; `None` for noise features.
    pub coordinate: Option<usize>,
    pub lift: Option<Lift>,
    pub flipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub data: DataMatrix,
    /// Ground-truth score per point.
    pub truth: Vec<f64>,
    /// Ground truth plus label noise.
    pub noisy_truth: Vec<f64>,
    pub clusters: Vec<usize>,
    pub latent: Matrix,
    pub features: Vec<FeatureSpec>,
    /// Noise-free relevant features, before polarity flips.
    pub clean_relevant: Matrix,
}

struct LiftParams {
    coordinate: usize,
    lift: Lift,
    amplitude: f64,
    freq: f64,
    phase: f64,
}

impl LiftParams {
    fn eval(&self, z: f64) -> f64 {
        self.amplitude
            * match self.lift {
                Lift::Linear => z,
                Lift::Sine => sin(self.freq * z + self.phase),
                Lift::Cubic => z + 0.25 * z * z * z,
            }
    }
}

/// Latent coordinate of relevant feature `k` and its index among the
/// features sharing that coordinate.
fn feature_coordinate(k: usize, n_scored: usize, q: usize) -> (usize, usize) {
    if n_scored == 0 {
        (k % q, k / q)
    } else if k < n_scored {
        (0, k)
    } else {
        let j = k - n_scored;
        (1 + j % (q - 1), j / (q - 1))
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates the dataset. Relevant features lift single latent coordinates
/// (see [`SynthConfig::n_scored_features`]); the truth is the sum of the noise-free lifts of coordinate 0,
/// so it is an exact linear function of the relevant features.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, q) = (cfg.n_points, cfg.intrinsic_dim);
    let n_rel = cfg.n_relevant_features;
    let m = n_rel + cfg.n_noise_features;

    let centers: Vec<Vec<f64>> = (0..cfg.n_clusters)
        .map(|_| {
            let mut v: Vec<f64> = (0..q).map(|_| normal(&mut rng)).collect();
            if cfg.nuisance_clusters {
                v[0] = 0.0;
            }
            let norm = sqrt(v.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
            v.iter().map(|x| cfg.cluster_separation * x / norm).collect()
        })
        .collect();
    let spreads: Vec<f64> = (0..cfg.n_clusters).map(|c| cfg.base_spread * cfg.cluster_spread_ratios.get(c).copied().unwrap_or(1.0)).collect();
    // Round-robin assignment keeps cluster sizes within one of each other.
    let clusters: Vec<usize> = (0..n).map(|i| i % cfg.n_clusters).collect();
    let latent = Matrix::from_fn(n, q, |i, j| centers[clusters[i]][j] + spreads[clusters[i]] * normal(&mut rng));

    let lifts: Vec<LiftParams> = (0..n_rel)
        .map(|k| feature_coordinate(k, cfg.n_scored_features, q))
        .map(|(coordinate, slot)| LiftParams {
            coordinate,
            lift: [Lift::Linear, Lift::Sine, Lift::Cubic][slot % 3],
            amplitude: rng.gen_range(0.5..1.5),
            freq: rng.gen_range(0.5..1.0),
            phase: rng.gen_range(-0.5..0.5),
        })
        .collect();
    let clean_relevant = Matrix::from_fn(n, n_rel, |i, k| lifts[k].eval(latent[(i, lifts[k].coordinate)]));
    let truth: Vec<f64> = (0..n).map(|i| (0..n_rel).filter(|&k| lifts[k].coordinate == 0).map(|k| clean_relevant[(i, k)]).sum()).collect();
    let truth_sd = {
        let mean = truth.iter().sum::<f64>() / n as f64;
        sqrt(truth.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n as f64)
    };
    let noisy_truth: Vec<f64> = truth.iter().map(|t| t + cfg.label_noise * truth_sd * normal(&mut rng)).collect();

    let mut features = Vec::with_capacity(m);
    let mut flips = Vec::with_capacity(m);
    for k in 0..m {
        let flipped = rng.gen::<f64>() < cfg.polarity_flip_rate;
        flips.push(if flipped { -1.0 } else { 1.0 });
        features.push(match lifts.get(k) {
            Some(l) => FeatureSpec { name: format!("rel{k:02}"), coordinate: Some(l.coordinate), lift: Some(l.lift), flipped },
            None => FeatureSpec { name: format!("noise{:02}", k - n_rel), coordinate: None, lift: None, flipped },
        });
    }
    let mut cells = vec![vec![None; m]; n];
    for i in 0..n {
        for k in 0..m {
            let v = if k < n_rel {
                clean_relevant[(i, k)] + cfg.feature_noise * lifts[k].amplitude * normal(&mut rng)
            } else {
                normal(&mut rng)
            };
            cells[i][k] = Some(flips[k] * v);
        }
    }
    if cfg.missing_rate > 0.0 {
        for row in cells.iter_mut() {
            for cell in row.iter_mut() {
                if rng.gen::<f64>() < cfg.missing_rate {
                    *cell = None;
                }
            }
            // Every point keeps at least one observation.
            if row.iter().all(Option::is_none) {
                let k = rng.gen_range(0..m);
                *row.get_mut(k).ok_or_else(|| Error::Internal("empty row".into()))? = Some(0.0);
            }
        }
        for k in 0..m {
            // Every feature keeps at least two observations.
            let mut observed = cells.iter().filter(|r| r[k].is_some()).count();
            let mut i = 0;
            while observed < 2.min(n) && i < n {
                if cells[i][k].is_none() {
                    cells[i][k] = Some(0.0);
                    observed += 1;
                }
                i += 1;
            }
        }
    }
    let ids = (0..n).map(|i| format!("pt{i:04}")).collect();
    let names = features.iter().map(|f| f.name.clone()).collect();
    let data = DataMatrix::new(ids, names, cells)?;
    Ok(SynthData { data, truth, noisy_truth, clusters, latent, features, clean_relevant })
}
