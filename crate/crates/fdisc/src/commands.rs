//! One function per subcommand. Each checks its upstream sidecars, rebuilds
//! whatever in-memory state it needs from the persisted artifacts and writes
//! its own artifacts plus a sidecar.

use std::path::{Path, PathBuf};

use fdisc_core::dataset::DataMatrix;
use fdisc_core::expert::{self, LabelMap, PseudopointSet};
use fdisc_core::linalg::Matrix;
use fdisc_core::netens::NetEnsemble;
use fdisc_core::pipeline::{self, Organization, PipelineRun, Prepared, PreparedState, ValidationReport};
use fdisc_core::spectral::Embedding;
use fdisc_core::synth;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifacts::*;
use crate::error::{CliError, Result};
use crate::io::{self, GroupsFile, TruthFile};

/// The standardized embedding as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedArtifact {
    pub embedding: Embedding,
    /// Scale of the whitened-distance kernel.
    pub sigma: f64,
}

fn reference_ids(p: &Prepared) -> Vec<String> {
    p.reference.indices.iter().map(|&i| p.data.point_ids[i].clone()).collect()
}

/// Raw data with the configured groups and weights applied.
fn load_with_groups(ws: &Workspace, path: &Path) -> Result<DataMatrix> {
    let d = io::read_data_csv(path)?;
    match &ws.cfg.paths.groups {
        Some(g) => {
            let groups: GroupsFile = io::read_json(g)?;
            Ok(d.with_groups(&groups.groups, &groups.weights)?)
        }
        None => Ok(d),
    }
}

fn input_paths(ws: &Workspace) -> Vec<PathBuf> {
    let mut v = vec![ws.cfg.data_path()];
    v.extend(ws.cfg.paths.groups.clone());
    v
}

fn as_refs(v: &[PathBuf]) -> Vec<&Path> {
    v.iter().map(PathBuf::as_path).collect()
}

pub fn synth(ws: &Workspace) -> Result<()> {
    let s = synth::generate(&ws.cfg.synth)?;
    io::write_data_csv(&ws.path(DATA), &s.data)?;
    let truth = TruthFile { point_ids: s.data.point_ids.clone(), truth: s.truth, noisy_truth: s.noisy_truth, clusters: s.clusters };
    io::write_json(&ws.path(TRUTH), &truth)?;
    ws.record(Stage::Synth, &[], &[DATA, TRUTH], json!({ "features": s.features }))?;
    Ok(())
}

pub fn preprocess(ws: &Workspace) -> Result<()> {
    let raw = load_with_groups(ws, &ws.cfg.data_path())?;
    let p = pipeline::prepare(&raw, &ws.cfg.pipeline)?;
    io::write_json(&ws.path(PREPARED), &p.state())?;
    io::write_data_csv(&ws.path(PREPARED_CSV), &p.data)?;
    let info = json!({
        "points": raw.n_points(),
        "features": raw.n_features(),
        "reference_points": p.reference.len(),
        "eta": p.reference.eta,
        "flipped_features": p.polarity.flip.iter().zip(&p.data.feature_names).filter(|(f, _)| **f).map(|(_, n)| n).collect::<Vec<_>>(),
    });
    ws.record(Stage::Preprocess, &as_refs(&input_paths(ws)), &[PREPARED, PREPARED_CSV], info)?;
    Ok(())
}

fn load_prepared(ws: &Workspace) -> Result<Prepared> {
    ws.check(Stage::Preprocess)?;
    let raw = load_with_groups(ws, &ws.cfg.data_path())?;
    let state: PreparedState = io::read_json(&ws.path(PREPARED))?;
    Ok(Prepared::restore(&raw, state)?)
}

fn load_organization(ws: &Workspace) -> Result<Organization> {
    ws.check(Stage::Organize)?;
    io::read_json(&ws.path(ORGANIZATION))
}

pub fn organize(ws: &Workspace) -> Result<()> {
    let p = load_prepared(ws)?;
    let org = pipeline::organize(&p, &ws.cfg.pipeline)?;
    io::write_json(&ws.path(ORGANIZATION), &org)?;
    io::write_matrix_csv(&ws.path(IMPUTED_CSV), &reference_ids(&p), &p.data.feature_names, &org.imputed)?;
    let info = json!({ "point_levels": org.points_tree.depth(), "observation_levels": org.obs_tree.depth() });
    ws.record(Stage::Organize, &[&ws.path(PREPARED)], &[ORGANIZATION, IMPUTED_CSV], info)?;
    Ok(())
}

fn write_labels(ws: &Workspace, ps: &PseudopointSet, entries: &[(usize, Option<f64>)], source: &Path) -> Result<LabelMap> {
    let lm = LabelMap::new(ps, entries, ws.cfg.pipeline.label_range)?;
    io::write_json(&ws.path(LABELS), &lm)?;
    ws.record(Stage::Labels, &[&ws.path(PSEUDOPOINTS), &ws.path(ORGANIZATION), source], &[LABELS], json!({ "classes": lm.classes().len() }))?;
    Ok(lm)
}

/// Writes the pseudopoints for labeling. With `auto_label` each folder is
/// scored by the mean noisy truth of its members and the labels are
/// imported right away.
pub fn pseudopoints_export(ws: &Workspace, auto_label: Option<&Path>) -> Result<()> {
    let p = load_prepared(ws)?;
    let org = load_organization(ws)?;
    let ps = pipeline::pseudopoints(&p, &org, &ws.cfg.pipeline)?;
    let centroids = (0..ps.len()).map(|r| p.to_raw_scale(ps.centroids.row(r))).collect::<fdisc_core::Result<Vec<_>>>()?;
    let scores = match auto_label {
        Some(path) => {
            let truth: TruthFile = io::read_json(path)?;
            let by_id = TruthFile { truth: truth.noisy_truth.clone(), ..truth };
            let target = by_id.aligned(&reference_ids(&p), path)?;
            Some(pipeline::auto_scores(&ps, &org.points_tree, &target, ws.cfg.pipeline.label_range)?)
        }
        None => None,
    };
    let score_values: Option<Vec<f64>> = scores.as_ref().map(|s| s.iter().map(|(_, v)| v.unwrap_or(f64::NAN)).collect());
    io::write_json(&ws.path(PSEUDOPOINTS), &ps)?;
    io::write_pseudopoints_csv(&ws.path(PSEUDOPOINTS_CSV), &p.data.feature_names, &ps.folders, &ps.member_counts, &centroids, score_values.as_deref())?;
    let info = json!({ "level": ps.level, "pseudopoints": ps.len(), "auto_labeled": auto_label.is_some() });
    ws.record(Stage::Pseudopoints, &[&ws.path(PREPARED), &ws.path(ORGANIZATION)], &[PSEUDOPOINTS, PSEUDOPOINTS_CSV], info)?;
    if let (Some(entries), Some(path)) = (scores, auto_label) {
        write_labels(ws, &ps, &entries, path)?;
    }
    Ok(())
}

/// Reads a scored pseudopoint CSV and stores the validated labels.
pub fn pseudopoints_import(ws: &Workspace, csv: Option<&Path>) -> Result<()> {
    let csv = csv
        .map(Path::to_path_buf)
        .or_else(|| ws.cfg.paths.labels.clone())
        .ok_or_else(|| CliError::Config(String::from("no label CSV given; pass it as an argument or set paths.labels")))?;
    ws.check(Stage::Pseudopoints)?;
    let ps: PseudopointSet = io::read_json(&ws.path(PSEUDOPOINTS))?;
    let entries = io::read_pseudopoint_scores(&csv)?;
    write_labels(ws, &ps, &entries, &csv)?;
    Ok(())
}

fn load_labels(ws: &Workspace) -> Result<(PseudopointSet, LabelMap)> {
    ws.check(Stage::Labels)?;
    Ok((io::read_json(&ws.path(PSEUDOPOINTS))?, io::read_json(&ws.path(LABELS))?))
}

pub fn train(ws: &Workspace) -> Result<()> {
    let p = load_prepared(ws)?;
    let org = load_organization(ws)?;
    let (_, lm) = load_labels(ws)?;
    let labels = expert::propagate_labels(&lm, &org.points_tree)?;
    let ens = pipeline::train(&p, &org, &labels, &ws.cfg.pipeline)?;
    io::write_json(&ws.path(ENSEMBLE), &ens)?;
    let info = json!({ "nets": ens.nets.len(), "representation_dim": ens.representation_dim() });
    ws.record(Stage::Train, &[&ws.path(PREPARED), &ws.path(ORGANIZATION), &ws.path(LABELS)], &[ENSEMBLE], info)?;
    Ok(())
}

fn load_ensemble(ws: &Workspace) -> Result<NetEnsemble> {
    ws.check(Stage::Train)?;
    io::read_json(&ws.path(ENSEMBLE))
}

fn embedding_info(e: &Embedding, standardized: bool) -> serde_json::Value {
    json!({ "eigenvalues": e.eigenvalues, "t": e.t, "bandwidth": e.bandwidth, "standardized": standardized })
}

pub fn embed(ws: &Workspace) -> Result<()> {
    let p = load_prepared(ws)?;
    let org = load_organization(ws)?;
    let ens = load_ensemble(ws)?;
    let emb = pipeline::embed(&ens, &org, &ws.cfg.pipeline)?.embedding;
    io::write_json(&ws.path(EMBEDDING), &emb)?;
    io::write_matrix_csv(&ws.path(EMBEDDING_CSV), &reference_ids(&p), &io::numbered("phi", emb.dim()), &emb.coordinates())?;
    ws.record(Stage::Embed, &[&ws.path(ORGANIZATION), &ws.path(ENSEMBLE)], &[EMBEDDING, EMBEDDING_CSV], embedding_info(&emb, false))?;
    Ok(())
}

pub fn standardize(ws: &Workspace) -> Result<()> {
    let p = load_prepared(ws)?;
    ws.check(Stage::Embed)?;
    let emb: Embedding = io::read_json(&ws.path(EMBEDDING))?;
    let w = pipeline::standardize_embedding(&emb, &ws.cfg.pipeline)?;
    let art = StandardizedArtifact { embedding: w.standardized.embedding, sigma: w.standardized.sigma };
    io::write_json(&ws.path(STANDARDIZED), &art)?;
    io::write_matrix_csv(&ws.path(STANDARDIZED_CSV), &reference_ids(&p), &io::numbered("std", art.embedding.dim()), &art.embedding.coordinates())?;
    let mut info = embedding_info(&art.embedding, true);
    info["sigma"] = json!(art.sigma);
    ws.record(Stage::Standardize, &[&ws.path(EMBEDDING)], &[STANDARDIZED, STANDARDIZED_CSV], info)?;
    Ok(())
}

/// Rebuilds the full in-memory run from the artifacts and confirms that the
/// recomputed embeddings equal the persisted ones.
pub fn load_run(ws: &Workspace) -> Result<PipelineRun> {
    let p = load_prepared(ws)?;
    let org = load_organization(ws)?;
    let (ps, lm) = load_labels(ws)?;
    let ens = load_ensemble(ws)?;
    ws.check(Stage::Standardize)?;
    let emb: Embedding = io::read_json(&ws.path(EMBEDDING))?;
    let st: StandardizedArtifact = io::read_json(&ws.path(STANDARDIZED))?;
    let run = pipeline::assemble(p, org, ps, lm, ens, &ws.cfg.pipeline)?;
    if run.dnn.embedding != emb {
        return Err(CliError::Stale { path: ws.path(EMBEDDING), stage: Stage::Embed.command(), reason: String::from("it does not match the embedding recomputed from the ensemble") });
    }
    if run.whitened.standardized.embedding != st.embedding || run.whitened.standardized.sigma != st.sigma {
        return Err(CliError::Stale {
            path: ws.path(STANDARDIZED),
            stage: Stage::Standardize.command(),
            reason: String::from("it does not match the standardized embedding recomputed from the diffusion embedding"),
        });
    }
    Ok(run)
}

fn upstream_files(ws: &Workspace) -> Vec<PathBuf> {
    [PREPARED, ORGANIZATION, LABELS, ENSEMBLE, EMBEDDING, STANDARDIZED].iter().map(|n| ws.path(n)).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn write_validation_tables(ws: &Workspace, run: &PipelineRun, r: &ValidationReport) -> Result<Vec<String>> {
    let dir = Path::new(VALIDATION_DIR);
    let mut written = Vec::new();
    let mut table = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<()> {
        let rel = dir.join(name).to_string_lossy().into_owned();
        let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
        io::write_table(&ws.path(&rel), &header, rows)?;
        written.push(rel);
        Ok(())
    };
    if let Some(l) = &r.lipschitz {
        table("lipschitz.csv", &["feature", "lipschitz", "degenerate"], l.iter().map(|e| vec![e.feature.clone(), format!("{}", e.value), e.degenerate.to_string()]).collect())?;
    }
    if let (Some(a), Some(b)) = (&r.mass_dnn, &r.mass_euclidean) {
        let ids = reference_ids(&run.prepared);
        table("neighborhood_mass.csv", &["id", "dnn", "euclidean"], (0..ids.len()).map(|i| vec![ids[i].clone(), a.counts[i].to_string(), b.counts[i].to_string()]).collect())?;
    }
    if let (Some(a), Some(b)) = (&r.dim_dnn, &r.dim_euclidean) {
        let n = a.curve.len().max(b.curve.len());
        table("eigencurve.csv", &["index", "dnn", "euclidean"], (0..n).map(|i| vec![(i + 1).to_string(), opt(a.curve.get(i).copied()), opt(b.curve.get(i).copied())]).collect())?;
    }
    if let Some(c) = &r.confusion {
        table("confusion.csv", &["g_quartile", "f_q1", "f_q2", "f_q3", "f_q4"], (0..4).map(|i| {
            let mut row = vec![(i + 1).to_string()];
            row.extend(c[i].iter().map(|v| v.to_string()));
            row
        }).collect())?;
    }
    if let Some(h) = &r.histograms {
        table(
            "histograms.csv",
            &["threshold", "unequal_count", "p_unequal", "p_equal", "ratio"],
            (0..h.thresholds.len())
                .map(|i| vec![format!("{}", h.thresholds[i]), h.hist_unequal[i].to_string(), format!("{}", h.p_unequal[i]), format!("{}", h.p_equal[i]), opt(h.ratio[i])])
                .collect(),
        )?;
    }
    Ok(written)
}

pub fn validate(ws: &Workspace) -> Result<ValidationReport> {
    let run = load_run(ws)?;
    let euclid = pipeline::embed_euclidean(&run.geometry, &ws.cfg.pipeline)?;
    let report = pipeline::validate_run(&run, &euclid, &ws.cfg.pipeline)?;
    io::write_json(&ws.path(VALIDATION), &report)?;
    let mut outputs = vec![VALIDATION.to_string()];
    outputs.extend(write_validation_tables(ws, &run, &report)?);
    let outs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    ws.record(Stage::Validate, &as_refs(&upstream_files(ws)), &outs, serde_json::Value::Null)?;
    Ok(report)
}

/// Places new points from `input` in both embeddings; writes `output`
/// (default `extended.csv` in the output directory).
pub fn extend(ws: &Workspace, input: &Path, output: Option<&Path>) -> Result<PathBuf> {
    let run = load_run(ws)?;
    let new = load_with_groups(ws, input)?;
    let ext = pipeline::extend(&run, &new)?;
    let (d1, d2) = (ext.diffusion.cols(), ext.standardized.cols());
    let mut columns = vec![String::from("f")];
    columns.extend(io::numbered("phi", d1));
    columns.extend(io::numbered("std", d2));
    columns.extend(new.feature_names.iter().map(|n| format!("imputed_{n}")));
    let m = Matrix::from_fn(new.n_points(), columns.len(), |i, j| match j {
        0 => ext.f[i],
        j if j <= d1 => ext.diffusion[(i, j - 1)],
        j if j <= d1 + d2 => ext.standardized[(i, j - 1 - d1)],
        j => ext.imputed[(i, j - 1 - d1 - d2)],
    });
    let out = output.map(Path::to_path_buf).unwrap_or_else(|| ws.path(EXTENDED_CSV));
    io::write_matrix_csv(&out, &new.point_ids, &columns, &m)?;
    if out.starts_with(ws.out()) {
        let name = out.strip_prefix(ws.out()).unwrap_or(&out).to_string_lossy().into_owned();
        let mut inputs = upstream_files(ws);
        inputs.push(input.to_path_buf());
        ws.record(Stage::Extend, &as_refs(&inputs), &[&name], json!({ "points": new.n_points() }))?;
    }
    Ok(out)
}

/// Per-point plot data: labels, ensemble output, both embeddings and the
/// imputed features on the raw scale.
pub fn report(ws: &Workspace) -> Result<()> {
    let run = load_run(ws)?;
    let phi = run.dnn.embedding.coordinates();
    let st = run.whitened.standardized.embedding.coordinates();
    let names = &run.prepared.data.feature_names;
    let mut columns = vec![String::from("g"), String::from("f")];
    columns.extend(io::numbered("phi", phi.cols()));
    columns.extend(io::numbered("std", st.cols()));
    columns.extend(names.iter().cloned());
    let raw_rows = (0..run.geometry.imputed.rows()).map(|i| run.prepared.to_raw_scale(run.geometry.imputed.row(i))).collect::<fdisc_core::Result<Vec<_>>>()?;
    let (d1, d2) = (phi.cols(), st.cols());
    let m = Matrix::from_fn(phi.rows(), columns.len(), |i, j| match j {
        0 => run.labels.g[i],
        1 => run.f[i],
        j if j < 2 + d1 => phi[(i, j - 2)],
        j if j < 2 + d1 + d2 => st[(i, j - 2 - d1)],
        j => raw_rows[i][j - 2 - d1 - d2],
    });
    io::write_matrix_csv(&ws.path(REPORT_CSV), &reference_ids(&run.prepared), &columns, &m)?;
    ws.record(Stage::Report, &as_refs(&upstream_files(ws)), &[REPORT_CSV], serde_json::Value::Null)?;
    Ok(())
}

/// Every stage in order, auto-labeling from `truth`.
pub fn run_all(ws: &Workspace, truth: &Path) -> Result<ValidationReport> {
    preprocess(ws)?;
    organize(ws)?;
    pseudopoints_export(ws, Some(truth))?;
    train(ws)?;
    embed(ws)?;
    standardize(ws)?;
    validate(ws)
}
