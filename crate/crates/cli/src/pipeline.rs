//! The four pipeline stages and the run manifest that records them.

use std::path::{Path, PathBuf};
use std::time::Instant;

use causemm_core::causalae::{self, CausalModel};
use causemm_core::eval::{sigma_contours, SemTruth, SigmaContourReport};
use causemm_core::graph::{gen_graph, shd, CausalMask, WeightedAdjacency};
use causemm_core::rng;
use causemm_core::semgen::{ancestral_sample, Dataset, Provenance};
use causemm_core::structlearn::{learn_structure, threshold_weights};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MaskSource, Stage};
use crate::error::{CliError, Result};
use crate::formats::{
    self, read_json, sha256_file, write_json, Checkpoint, DatasetMeta, EdgeRecord, GraphDoc,
    LearnedGraphDoc, ShdDoc,
};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Default artifact locations inside the output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("data/dataset.csv")
    }

    pub fn structure_dir(&self) -> PathBuf {
        self.root.join("structure")
    }

    pub fn learned_graph(&self) -> PathBuf {
        self.root.join("structure/w_hat.json")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model/checkpoint.json")
    }

    pub fn model_dir(&self) -> PathBuf {
        self.root.join("model")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }
}

/// Provenance and truth-graph paths that travel with a dataset CSV.
pub fn provenance_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("provenance.json")
}

pub fn truth_graph_path(dataset: &Path) -> PathBuf {
    dataset.with_file_name("graph.json")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// `dataset`, `truth-graph`, `structure`, `model` or `reports`.
    pub group: String,
    /// Relative to the output directory when inside it.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub config_hash: String,
    pub seconds: f64,
    pub artifacts: Vec<Artifact>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub library_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub failure: Option<StageFailure>,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            library_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config.hash(),
            seed: config.seed,
            stages: Vec::new(),
            failure: None,
        }
    }

    pub fn load(path: &Path) -> Result<Option<Self>> {
        if path.exists() {
            read_json(path).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    /// Replaces any earlier record of the same stage, keeping stage order.
    pub fn record(&mut self, rec: StageRecord) {
        self.stages.retain(|r| r.stage != rec.stage);
        self.stages.push(rec);
        self.stages
            .sort_by_key(|r| Stage::ALL.iter().position(|s| *s == r.stage));
    }

    pub fn artifacts(&self) -> impl Iterator<Item = &Artifact> {
        self.stages.iter().flat_map(|r| &r.artifacts)
    }

    /// True when `stage` completed under `hash` and its files are unchanged.
    pub fn is_current(&self, stage: Stage, hash: &str, root: &Path) -> bool {
        self.stage(stage).is_some_and(|r| {
            r.config_hash == hash
                && r.artifacts.iter().all(|a| {
                    let p = root.join(&a.path);
                    sha256_file(&p).is_ok_and(|h| h == a.sha256)
                })
        })
    }

    /// Checks every listed artifact exists with its recorded hash.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for a in self.artifacts() {
            let p = root.join(&a.path);
            let h = sha256_file(&p)?;
            if h != a.sha256 {
                return Err(CliError::format(
                    &p,
                    "content does not match the manifest hash",
                ));
            }
        }
        Ok(())
    }
}

/// Collects artifacts and notes while a stage runs.
struct StageLog {
    root: PathBuf,
    artifacts: Vec<Artifact>,
    notes: Vec<String>,
}

impl StageLog {
    fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn add(&mut self, group: &str, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(&self.root).unwrap_or(path).to_path_buf();
        self.artifacts.push(Artifact {
            group: group.into(),
            path: rel,
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    fn finish(self, stage: Stage, config: &ExperimentConfig, started: Instant) -> StageRecord {
        StageRecord {
            stage,
            config_hash: config.hash(),
            seconds: started.elapsed().as_secs_f64(),
            artifacts: self.artifacts,
            notes: self.notes,
        }
    }
}

/// Loads a dataset CSV with its provenance file when one is present.
pub fn load_dataset(csv: &Path) -> Result<Dataset> {
    let meta = provenance_path(csv);
    if meta.exists() {
        formats::read_dataset(csv, &meta)
    } else {
        let (names, data) = formats::read_dataset_csv(csv)?;
        let provenance = Provenance {
            family: None,
            kind: causemm_core::semgen::SemKind::Linear,
            noise: Default::default(),
            seed: 0,
            interventions: Vec::new(),
        };
        Ok(Dataset::new(data, names, provenance)?)
    }
}

/// Ground-truth SEM next to a generated dataset.
pub fn load_truth(dataset: &Path) -> Result<(SemTruth, Vec<String>)> {
    let graph = truth_graph_path(dataset);
    let meta = provenance_path(dataset);
    for p in [&graph, &meta] {
        if !p.exists() {
            return Err(CliError::Config(format!(
                "evaluation needs the ground-truth SEM; {} is missing",
                p.display()
            )));
        }
    }
    let doc: GraphDoc = read_json(&graph)?;
    let meta: DatasetMeta = read_json(&meta)?;
    let w = doc
        .adjacency()
        .map_err(|e| CliError::format(&graph, e.to_string()))?;
    Ok((
        SemTruth {
            w,
            kind: meta.provenance.kind,
            noise: meta.provenance.noise,
        },
        doc.nodes,
    ))
}

/// Draws the graph and the observational dataset.
pub fn run_generate(config: &ExperimentConfig, layout: &Layout) -> Result<StageRecord> {
    let started = Instant::now();
    let mut log = StageLog::new(&layout.root);
    let spec = config.graph_spec();
    let w = gen_graph(&spec)?;
    let names = spec.family.node_names();
    let data_seed = rng::derive_seed(config.stage_seed(Stage::Generate), "data");
    let sample = ancestral_sample(
        &w,
        config.data.kind,
        &config.data.noise,
        config.data.rows,
        data_seed,
        &[],
    )?;
    let provenance = Provenance {
        family: Some(spec),
        ..sample.provenance
    };
    let dataset = Dataset::new(sample.data, names.clone(), provenance)?;

    let csv = layout.dataset();
    formats::write_dataset_csv(&csv, &dataset)?;
    log.add("dataset", &csv)?;
    let meta_path = provenance_path(&csv);
    let meta = DatasetMeta {
        names: names.clone(),
        rows: dataset.rows(),
        provenance: dataset.provenance.clone(),
        config_hash: config.hash(),
    };
    write_json(&meta_path, &meta)?;
    log.add("dataset", &meta_path)?;
    let graph_path = truth_graph_path(&csv);
    write_json(&graph_path, &GraphDoc::new(&names, &w))?;
    log.add("truth-graph", &graph_path)?;
    Ok(log.finish(Stage::Generate, config, started))
}

fn edge_records(edges: &[(usize, usize, f64)]) -> Vec<EdgeRecord> {
    edges
        .iter()
        .map(|&(parent, child, weight)| EdgeRecord {
            parent,
            child,
            weight,
        })
        .collect()
}

/// Learns `Ŵ` from `dataset`, thresholds it to a DAG, and scores it against
/// the truth graph when one sits next to the dataset.
pub fn run_learn_structure(
    config: &ExperimentConfig,
    layout: &Layout,
    dataset: &Path,
) -> Result<StageRecord> {
    let started = Instant::now();
    let mut log = StageLog::new(&layout.root);
    let data = load_dataset(dataset)?;
    let cfg = config.structure_config();
    let result = learn_structure(&data, &cfg)?;
    let outcome = threshold_weights(&result.w_hat, cfg.threshold)?;
    for &(p, c, w) in &outcome.removed {
        log.notes.push(format!(
            "thresholded graph was cyclic; removed {} -> {} (weight {w:.6})",
            data.names[p], data.names[c]
        ));
    }
    let doc = LearnedGraphDoc {
        nodes: data.names.clone(),
        status: result.status,
        final_h: result.final_h(),
        threshold: cfg.threshold,
        weights: edge_records(&result.w_hat.edges()),
        mask: outcome.mask.clone(),
        removed_for_cycles: edge_records(&outcome.removed),
    };
    let dir = layout.structure_dir();
    let w_path = dir.join("w_hat.json");
    write_json(&w_path, &doc)?;
    log.add("structure", &w_path)?;
    let hist = dir.join("history.csv");
    formats::write_structure_history(&hist, &result.history)?;
    log.add("structure", &hist)?;

    let truth_path = truth_graph_path(dataset);
    if truth_path.exists() {
        let truth: GraphDoc = read_json(&truth_path)?;
        let truth_w = truth
            .adjacency()
            .map_err(|e| CliError::format(&truth_path, e.to_string()))?;
        let truth_mask = CausalMask::from_matrix(truth_w.matrix())?;
        let doc = ShdDoc {
            shd: shd(&outcome.mask, &truth_mask)?,
            predicted_edges: outcome.mask.edges(),
            true_edges: truth_mask.edges(),
        };
        let p = dir.join("shd.json");
        write_json(&p, &doc)?;
        log.add("structure", &p)?;
    } else {
        log.notes
            .push("no ground-truth graph next to the dataset; SHD not computed".into());
    }
    Ok(log.finish(Stage::LearnStructure, config, started))
}

/// Mask from a learned-structure document or a ground-truth graph document.
pub fn load_mask(path: &Path) -> Result<CausalMask> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if let Ok(doc) = serde_json::from_str::<LearnedGraphDoc>(&text) {
        return Ok(doc.mask);
    }
    let doc: GraphDoc =
        serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))?;
    let w: WeightedAdjacency = doc
        .adjacency()
        .map_err(|e| CliError::format(path, e.to_string()))?;
    Ok(CausalMask::from_matrix(w.matrix())?)
}

/// Trains the causal autoencoder on `dataset` under the mask at `mask_path`.
pub fn run_train(
    config: &ExperimentConfig,
    layout: &Layout,
    dataset: &Path,
    mask_path: &Path,
) -> Result<StageRecord> {
    let started = Instant::now();
    let mut log = StageLog::new(&layout.root);
    let data = load_dataset(dataset)?;
    let mask = load_mask(mask_path)?;
    if mask.size() != data.nodes() {
        return Err(CliError::Config(format!(
            "mask {} has {} nodes but the dataset has {} columns",
            mask_path.display(),
            mask.size(),
            data.nodes()
        )));
    }
    let trained = causalae::train(&data, &mask, &config.train_config())?;
    let dir = layout.model_dir();
    let cp = dir.join("checkpoint.json");
    Checkpoint::save(&trained.model, &cp)?;
    log.add("model", &cp)?;
    let hist = dir.join("history.csv");
    formats::write_training_history(&hist, &trained.history)?;
    log.add("model", &hist)?;
    let shown = mask_path.strip_prefix(&layout.root).unwrap_or(mask_path);
    log.notes.push(format!("mask: {}", shown.display()));
    Ok(log.finish(Stage::Train, config, started))
}

fn report_stem(names: &[String], pair: (usize, usize)) -> String {
    format!("sigma_{}_{}", names[pair.0], names[pair.1])
}

/// One σ-contour report (CSV and JSON) per configured pair.
pub fn run_evaluate(
    config: &ExperimentConfig,
    layout: &Layout,
    dataset: &Path,
    checkpoint: &Path,
) -> Result<StageRecord> {
    let started = Instant::now();
    let mut log = StageLog::new(&layout.root);
    let model: CausalModel = Checkpoint::load(checkpoint)?;
    let (truth, names) = load_truth(dataset)?;
    if truth.w.size() != model.nodes() {
        return Err(CliError::Config(format!(
            "checkpoint has {} nodes but the ground-truth graph has {}",
            model.nodes(),
            truth.w.size()
        )));
    }
    let contour = config.evaluation.contour();
    let seed = config.stage_seed(Stage::Evaluate);
    let dir = layout.reports_dir();
    for &pair in &config.evaluation.pairs {
        let stem = report_stem(&names, pair);
        let report: SigmaContourReport = sigma_contours(
            &model,
            &truth,
            pair.0,
            pair.1,
            &contour,
            rng::derive_seed(seed, &stem),
        )?;
        let csv = dir.join(format!("{stem}.csv"));
        formats::write_report_csv(&csv, &report)?;
        log.add("reports", &csv)?;
        let json = dir.join(format!("{stem}.json"));
        write_json(&json, &report)?;
        log.add("reports", &json)?;
        let starved = report.rows.iter().filter(|r| r.baseline_starved).count();
        if starved > 0 {
            log.notes.push(format!(
                "{stem}: baseline starved at {starved} sigma value(s)"
            ));
        }
    }
    Ok(log.finish(Stage::Evaluate, config, started))
}

/// Options shared by every stage command.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Overwrite artifacts written under a different configuration.
    pub force: bool,
    /// Skip pipeline stages already completed under this configuration.
    pub resume: bool,
}

/// Refuses to overwrite `stage`'s artifacts from another configuration.
fn guard_overwrite(
    manifest: &RunManifest,
    stage: Stage,
    hash: &str,
    opts: RunOptions,
) -> Result<()> {
    if opts.force {
        return Ok(());
    }
    match manifest.stage(stage) {
        Some(r) if r.config_hash != hash => Err(CliError::Config(format!(
            "{} artifacts in the output directory come from config {}; rerun with --force to overwrite",
            stage.name(),
            &r.config_hash[..12.min(r.config_hash.len())]
        ))),
        _ => Ok(()),
    }
}

/// Runs one stage and merges its record into the output directory's
/// manifest. A failure is recorded in the manifest before it propagates.
pub fn run_stage(
    config: &ExperimentConfig,
    stage: Stage,
    opts: RunOptions,
    body: impl FnOnce(&Layout) -> Result<StageRecord>,
) -> Result<RunManifest> {
    let layout = Layout::new(&config.output_dir);
    let hash = config.hash();
    let mut manifest =
        RunManifest::load(&layout.manifest())?.unwrap_or_else(|| RunManifest::new(config));
    guard_overwrite(&manifest, stage, &hash, opts)?;
    manifest.config_hash = hash;
    manifest.seed = config.seed;
    manifest.library_version = env!("CARGO_PKG_VERSION").into();
    match body(&layout) {
        Ok(rec) => {
            manifest.record(rec);
            if manifest.failure.as_ref().is_some_and(|f| f.stage == stage) {
                manifest.failure = None;
            }
            write_json(&layout.manifest(), &manifest)?;
            Ok(manifest)
        }
        Err(e) => {
            let e = e.in_stage(stage.name());
            manifest.stages.retain(|r| r.stage != stage);
            manifest.failure = Some(StageFailure {
                stage,
                message: e.to_string(),
                exit_code: e.exit_code(),
            });
            write_json(&layout.manifest(), &manifest)?;
            Err(e)
        }
    }
}

/// generate → learn-structure → train → evaluate with one manifest.
pub fn run_pipeline(config: &ExperimentConfig, opts: RunOptions) -> Result<RunManifest> {
    let layout = Layout::new(&config.output_dir);
    let hash = config.hash();
    if !opts.force {
        if let Some(m) = RunManifest::load(&layout.manifest())? {
            if m.config_hash != hash && !m.stages.is_empty() {
                return Err(CliError::Config(format!(
                    "output directory holds a run of config {}; rerun with --force to overwrite",
                    &m.config_hash[..12.min(m.config_hash.len())]
                )));
            }
        }
    }
    let dataset = layout.dataset();
    let mask = match config.mask_source {
        MaskSource::Learned => layout.learned_graph(),
        MaskSource::Truth => truth_graph_path(&dataset),
    };
    let checkpoint = layout.checkpoint();
    let mut manifest =
        RunManifest::load(&layout.manifest())?.unwrap_or_else(|| RunManifest::new(config));
    let mut upstream_rerun = false;
    for stage in Stage::ALL {
        if opts.resume && !upstream_rerun && manifest.is_current(stage, &hash, &layout.root) {
            continue;
        }
        upstream_rerun = true;
        let force = RunOptions {
            force: true,
            ..opts
        };
        manifest = run_stage(config, stage, force, |l| match stage {
            Stage::Generate => run_generate(config, l),
            Stage::LearnStructure => run_learn_structure(config, l, &dataset),
            Stage::Train => run_train(config, l, &dataset, &mask),
            Stage::Evaluate => run_evaluate(config, l, &dataset, &checkpoint),
        })?;
    }
    Ok(manifest)
}
