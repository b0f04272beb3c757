//! On-disk formats: CSV tables with 17 significant digits, JSON documents,
//! and the checkpoint envelope.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use causemm_core::causalae::{CaeTrainConfig, CausalModel, EpochLoss, LatentMoments};
use causemm_core::eval::SigmaContourReport;
use causemm_core::graph::{CausalMask, WeightedAdjacency};
use causemm_core::semgen::{Dataset, Provenance, Standardization};
use causemm_core::structlearn::{HistoryRow, StructStatus};
use causemm_core::Tensor;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Fixed 17-significant-digit scientific notation; parses back exactly.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
}

fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::format(path, e.to_string());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::format(path, e.to_string()))?;
    write_bytes(path, &bytes)
}

/// Header of node names, one row per observation.
pub fn write_dataset_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let header: Vec<&str> = dataset.names.iter().map(String::as_str).collect();
    let rows = (0..dataset.rows()).map(|i| dataset.data.row(i).iter().map(|&x| num(x)).collect());
    write_csv(path, &header, rows)
}

/// Reads a dataset CSV. Parse failures name the offending line.
pub fn read_dataset_csv(path: &Path) -> Result<(Vec<String>, Tensor)> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let names: Vec<String> = r
        .headers()
        .map_err(|e| CliError::format(path, format!("line 1: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(CliError::format(
            path,
            "line 1: header must name every column",
        ));
    }
    let v = names.len();
    let mut values = Vec::new();
    for (k, record) in r.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| CliError::format(path, format!("line {line}: {e}")))?;
        if record.len() != v {
            return Err(CliError::format(
                path,
                format!("line {line}: expected {v} fields, found {}", record.len()),
            ));
        }
        for (field, name) in record.iter().zip(&names) {
            let x: f64 = field.trim().parse().map_err(|_| {
                CliError::format(
                    path,
                    format!("line {line}: `{field}` in column {name} is not a number"),
                )
            })?;
            if !x.is_finite() {
                return Err(CliError::format(
                    path,
                    format!("line {line}: non-finite value in column {name}"),
                ));
            }
            values.push(x);
        }
    }
    let rows = values.len() / v;
    let data =
        Tensor::matrix(rows, v, values).map_err(|e| CliError::format(path, e.to_string()))?;
    Ok((names, data))
}

/// Metadata written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub names: Vec<String>,
    pub rows: usize,
    pub provenance: Provenance,
    pub config_hash: String,
}

pub fn read_dataset(csv_path: &Path, meta_path: &Path) -> Result<Dataset> {
    let (names, data) = read_dataset_csv(csv_path)?;
    let meta: DatasetMeta = read_json(meta_path)?;
    if meta.names != names {
        return Err(CliError::format(
            csv_path,
            format!(
                "header {names:?} does not match provenance names {:?}",
                meta.names
            ),
        ));
    }
    Ok(Dataset::new(data, names, meta.provenance)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub parent: usize,
    pub child: usize,
    pub weight: f64,
}

/// Weighted graph document. `edges` lists every nonzero entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub nodes: Vec<String>,
    pub edges: Vec<EdgeRecord>,
}

impl GraphDoc {
    pub fn new(names: &[String], w: &WeightedAdjacency) -> Self {
        Self {
            nodes: names.to_vec(),
            edges: w
                .edges()
                .into_iter()
                .map(|(parent, child, weight)| EdgeRecord {
                    parent,
                    child,
                    weight,
                })
                .collect(),
        }
    }

    pub fn adjacency(&self) -> causemm_core::Result<WeightedAdjacency> {
        let triples: Vec<(usize, usize, f64)> = self
            .edges
            .iter()
            .map(|e| (e.parent, e.child, e.weight))
            .collect();
        WeightedAdjacency::from_edges(self.nodes.len(), &triples)
    }
}

/// Learned structure: the raw weights, the thresholded DAG, and any edges
/// removed to break cycles that survived thresholding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedGraphDoc {
    pub nodes: Vec<String>,
    pub status: StructStatus,
    pub final_h: f64,
    pub threshold: f64,
    pub weights: Vec<EdgeRecord>,
    pub mask: CausalMask,
    pub removed_for_cycles: Vec<EdgeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShdDoc {
    pub shd: usize,
    pub predicted_edges: Vec<(usize, usize)>,
    pub true_edges: Vec<(usize, usize)>,
}

pub fn write_structure_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let body = rows.iter().map(|r| {
        vec![
            r.outer.to_string(),
            num(r.h),
            num(r.recon),
            num(r.lambda),
            num(r.c),
        ]
    });
    write_csv(path, &["outer", "h", "recon", "lambda", "c"], body)
}

pub fn write_training_history(path: &Path, rows: &[EpochLoss]) -> Result<()> {
    let body = rows.iter().map(|r| {
        let l = r.loss;
        vec![
            r.epoch.to_string(),
            num(l.total),
            num(l.recon),
            num(l.mmd),
            num(l.cmmd),
        ]
    });
    write_csv(path, &["epoch", "total", "recon", "mmd", "cmmd"], body)
}

pub fn write_report_csv(path: &Path, report: &SigmaContourReport) -> Result<()> {
    let body = report.rows.iter().map(|r| {
        vec![
            num(r.sigma),
            num(r.clamp),
            num(r.kl_model),
            r.kl_baseline.map(num).unwrap_or_default(),
            r.model_count.to_string(),
            r.truth_count.to_string(),
            r.baseline_count.to_string(),
            r.baseline_starved.to_string(),
        ]
    });
    write_csv(
        path,
        &[
            "sigma",
            "clamp",
            "kl_model",
            "kl_baseline",
            "model_count",
            "truth_count",
            "baseline_count",
            "baseline_starved",
        ],
        body,
    )
}

pub const CHECKPOINT_FORMAT: &str = "causemm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One parameter tensor: little-endian f64 bytes, base64 encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

/// Versioned checkpoint of a trained [`CausalModel`]. `digest` is the
/// SHA-256 over every blob's name, shape and bytes, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub mask: CausalMask,
    pub config: CaeTrainConfig,
    pub standardization: Standardization,
    pub latent_moments: Vec<LatentMoments>,
    pub params: Vec<ParamBlob>,
    pub digest: String,
}

fn blob_digest(params: &[ParamBlob]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.name.as_bytes());
        for d in &p.shape {
            h.update((*d as u64).to_le_bytes());
        }
        h.update(p.data.as_bytes());
    }
    hex::encode(h.finalize())
}

impl Checkpoint {
    pub fn from_model(model: &CausalModel) -> Self {
        let params: Vec<ParamBlob> = model
            .param_names()
            .into_iter()
            .zip(model.params())
            .map(|(name, t)| {
                let bytes: Vec<u8> = t.values().iter().flat_map(|x| x.to_le_bytes()).collect();
                ParamBlob {
                    name,
                    shape: t.shape().to_vec(),
                    data: BASE64.encode(bytes),
                }
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            mask: model.mask.clone(),
            config: model.config.clone(),
            standardization: model.standardization.clone(),
            latent_moments: model.latent_moments.clone(),
            digest: blob_digest(&params),
            params,
        }
    }

    /// Rebuilds the model, checking format, version, digest and every
    /// parameter's name and shape.
    pub fn into_model(self, path: &Path) -> Result<CausalModel> {
        let bad = |m: String| CliError::format(path, m);
        if self.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("not a checkpoint (format `{}`)", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if blob_digest(&self.params) != self.digest {
            return Err(bad(
                "parameter digest mismatch; the checkpoint is corrupt".into()
            ));
        }
        let v = self.mask.size();
        if self.standardization.means.len() != v
            || self.standardization.stds.len() != v
            || self.latent_moments.len() != v
        {
            return Err(bad(format!(
                "per-node tables do not match the {v}-node mask"
            )));
        }
        let mut model = CausalModel::new(self.mask, &Tensor::zeros(2, v), &self.config)?;
        let names = model.param_names();
        if names.len() != self.params.len() {
            return Err(bad(format!(
                "expected {} parameter tensors, found {}",
                names.len(),
                self.params.len()
            )));
        }
        for ((name, dst), blob) in names.iter().zip(model.params_mut()).zip(&self.params) {
            if &blob.name != name || blob.shape != dst.shape() {
                return Err(bad(format!(
                    "parameter `{}` {:?} does not match expected `{name}` {:?}",
                    blob.name,
                    blob.shape,
                    dst.shape()
                )));
            }
            let bytes = BASE64
                .decode(&blob.data)
                .map_err(|e| bad(format!("parameter `{name}`: {e}")))?;
            if bytes.len() != 8 * dst.len() {
                return Err(bad(format!(
                    "parameter `{name}` has {} bytes, expected {}",
                    bytes.len(),
                    8 * dst.len()
                )));
            }
            for (x, chunk) in dst.values_mut().iter_mut().zip(bytes.chunks_exact(8)) {
                *x = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
        }
        model.standardization = self.standardization;
        model.latent_moments = self.latent_moments;
        Ok(model)
    }

    pub fn save(model: &CausalModel, path: &Path) -> Result<()> {
        write_json(path, &Self::from_model(model))
    }

    pub fn load(path: &Path) -> Result<CausalModel> {
        let cp: Self = read_json(path)?;
        cp.into_model(path)
    }
}
