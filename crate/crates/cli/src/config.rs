//! Experiment configuration: one TOML file, optional dotted-key overrides,
//! and a content hash identifying the resolved settings.

use std::path::{Path, PathBuf};

use causemm_core::causalae::CaeTrainConfig;
use causemm_core::eval::{ContourConfig, KlGrid};
use causemm_core::graph::{GraphFamily, GraphSpec};
use causemm_core::rng;
use causemm_core::semgen::{NoiseSpec, SemKind};
use causemm_core::structlearn::StructConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every stage derives its own seed from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Mask the causal autoencoder trains on.
    #[serde(default = "default_mask_source")]
    pub mask_source: MaskSource,
    pub graph: GraphSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub structure: StructConfig,
    #[serde(default)]
    pub causal_ae: CaeTrainConfig,
    #[serde(default)]
    pub evaluation: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub family: GraphFamily,
    #[serde(default = "default_weight_low")]
    pub weight_low: f64,
    #[serde(default = "default_weight_high")]
    pub weight_high: f64,
}

fn default_mask_source() -> MaskSource {
    MaskSource::Learned
}

fn default_weight_low() -> f64 {
    0.5
}

fn default_weight_high() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub kind: SemKind,
    pub noise: NoiseSpec,
    pub rows: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            kind: SemKind::Linear,
            noise: NoiseSpec::default(),
            rows: 8000,
        }
    }
}

/// Where the causal autoencoder's mask comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    Learned,
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// `(intervened node, target node)` pairs, one report each.
    pub pairs: Vec<(usize, usize)>,
    pub sigmas: Vec<f64>,
    pub samples: usize,
    pub slice_half_width: f64,
    pub min_slice: usize,
    pub grid: KlGrid,
}

impl Default for EvalSection {
    fn default() -> Self {
        let contour = ContourConfig::default();
        Self {
            pairs: vec![(1, 0), (2, 0)],
            sigmas: contour.sigmas,
            samples: contour.samples,
            slice_half_width: contour.slice_half_width,
            min_slice: contour.min_slice,
            grid: contour.grid,
        }
    }
}

impl EvalSection {
    pub fn contour(&self) -> ContourConfig {
        ContourConfig {
            sigmas: self.sigmas.clone(),
            samples: self.samples,
            slice_half_width: self.slice_half_width,
            min_slice: self.min_slice,
            grid: self.grid,
        }
    }
}

/// Pipeline stages, in order. The name keys the stage seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Generate,
    LearnStructure,
    Train,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Self::Generate,
        Self::LearnStructure,
        Self::Train,
        Self::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Generate => "generate",
            Self::LearnStructure => "learn-structure",
            Self::Train => "train",
            Self::Evaluate => "evaluate",
        }
    }
}

impl ExperimentConfig {
    /// Reads `path` and applies `key.path=value` overrides before parsing.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Field-level checks, including every nested section.
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: causemm_core::Error| CliError::Config(format!("{name}: {e}"));
        self.graph_spec()
            .validate()
            .map_err(|e| field("graph", e))?;
        if self.data.rows == 0 {
            return Err(CliError::Config("data.rows must be positive".into()));
        }
        self.data
            .noise
            .validate()
            .map_err(|e| field("data.noise", e))?;
        self.structure
            .validate()
            .map_err(|e| field("structure", e))?;
        self.causal_ae
            .validate()
            .map_err(|e| field("causal_ae", e))?;
        self.evaluation
            .contour()
            .validate()
            .map_err(|e| field("evaluation", e))?;
        for (name, seed) in [
            ("structure.seed", self.structure.seed),
            ("causal_ae.seed", self.causal_ae.seed),
        ] {
            if seed != 0 {
                return Err(CliError::Config(format!(
                    "{name} is derived from the top-level seed; set `seed` instead"
                )));
            }
        }
        let v = self.graph.family.size();
        if self.evaluation.pairs.is_empty() {
            return Err(CliError::Config("evaluation.pairs is empty".into()));
        }
        for &(j, t) in &self.evaluation.pairs {
            if j >= v || t >= v {
                return Err(CliError::Config(format!(
                    "evaluation.pairs: ({j}, {t}) refers to a node outside the {v}-node graph"
                )));
            }
            if j == t {
                return Err(CliError::Config(format!(
                    "evaluation.pairs: ({j}, {t}) intervenes on its own target"
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        rng::derive_seed(self.seed, stage.name())
    }

    pub fn graph_spec(&self) -> GraphSpec {
        GraphSpec {
            family: self.graph.family,
            weight_low: self.graph.weight_low,
            weight_high: self.graph.weight_high,
            seed: rng::derive_seed(self.stage_seed(Stage::Generate), "graph"),
        }
    }

    pub fn structure_config(&self) -> StructConfig {
        StructConfig {
            seed: self.stage_seed(Stage::LearnStructure),
            ..self.structure.clone()
        }
    }

    pub fn train_config(&self) -> CaeTrainConfig {
        CaeTrainConfig {
            seed: self.stage_seed(Stage::Train),
            ..self.causal_ae.clone()
        }
    }
}

/// Sets `a.b.c = value` in `table`. The value is read as a TOML literal
/// (`3`, `0.5`, `true`, `"text"`, `[1, 2]`); anything else is taken as a
/// bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        CliError::Config(format!(
            "override `{assignment}` is not of the form key=value"
        ))
    })?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!(
            "override `{assignment}` has an empty key segment"
        )));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    if value.is_table() {
        return Err(CliError::Config(format!(
            "override `{key}` must be a scalar or array"
        )));
    }
    let mut segments: Vec<&str> = key.split('.').collect();
    let last = segments.pop().expect("non-empty key");
    let mut cur = table;
    for seg in segments {
        let entry = cur
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("override `{key}`: `{seg}` is not a section"))
        })?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
