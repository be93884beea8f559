//! Experiment configuration files.
//!
//! Configs are JSON with a versioned schema. Unknown keys are rejected and
//! every error names the offending field path, e.g. `circuit1.random_budgets[2]`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::episode::{self, Episode, GenParams};
use crate::error::{Error, Result};
use crate::geometry::FrameGrid;
use crate::intervention::Window;
use crate::model::planted::{planted_qa_model, PlantedConfig};
use crate::model::{Model, ModelConfig};
use crate::seed;
use crate::vocab::Vocab;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Text positions reserved after the visual prefix when a random model's
/// `max_positions` is left unset.
const DEFAULT_TEXT_ROOM: usize = 32;

/// Token budgets of the random-ablation control rows, expressed for a
/// 2304-token visual prefix and rescaled to the configured grid.
pub const REFERENCE_RANDOM_BUDGETS: [usize; 5] = [100, 350, 500, 700, 900];
pub const REFERENCE_PREFIX_LEN: usize = 2304;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Root seed; every random component derives its own stream from it.
    pub seed: u64,
    pub model: ModelSource,
    pub grid: FrameGrid,
    pub episodes: EpisodeSource,
    #[serde(default)]
    pub generator: GenParams,
    /// Keep only episodes answered correctly that fail once the object is
    /// ablated.
    #[serde(default = "default_true")]
    pub curate: bool,
    /// Number of synthetic episodes whose visual tokens are averaged into the
    /// uninformative ablation embedding.
    #[serde(default = "default_mean_corpus")]
    pub mean_corpus_size: usize,
    #[serde(default)]
    pub circuit1: Circuit1Params,
    #[serde(default)]
    pub circuit2: Circuit2Params,
    #[serde(default)]
    pub circuit3: Circuit3Params,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<ReportFormat>,
}

fn default_true() -> bool {
    true
}

fn default_mean_corpus() -> usize {
    64
}

fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Csv, ReportFormat::Json, ReportFormat::Md]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    /// Randomly initialized weights; the seed is derived from the root seed.
    Random(RandomModelParams),
    /// Hand-wired question-answering circuit.
    Planted(PlantedConfig),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomModelParams {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub d_ff: usize,
    #[serde(default)]
    pub max_positions: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EpisodeSource {
    /// Synthetic episodes from the built-in generator.
    Generate { count: usize },
    /// A corpus written by `save_corpus`; relative paths resolve against the
    /// config file's directory.
    Corpus(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Md,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Md => "md",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Md),
            other => Err(Error::config(
                "format",
                format!("unknown report format `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Circuit1Params {
    pub register: bool,
    /// Dilation radii of the object rows; 0 is the bare object set.
    pub object_buffers: Vec<usize>,
    /// Random-ablation token counts. Unset means the reference budgets
    /// rescaled to the grid size.
    pub random_budgets: Option<Vec<usize>>,
    /// Also evaluate text injection on every object row.
    pub text_injection: bool,
}

impl Default for Circuit1Params {
    fn default() -> Self {
        Self {
            register: true,
            object_buffers: vec![0, 1, 2],
            random_budgets: None,
            text_injection: true,
        }
    }
}

impl Circuit1Params {
    pub fn budgets(&self, n_visual: usize) -> Vec<usize> {
        match &self.random_budgets {
            Some(b) => b.clone(),
            None => REFERENCE_RANDOM_BUDGETS
                .iter()
                .map(|&b| scaled_budget(b, n_visual))
                .collect(),
        }
    }
}

/// `round(budget * n / 2304)`, at least one token.
pub fn scaled_budget(budget: usize, n_visual: usize) -> usize {
    let num = budget * n_visual;
    let q = (num + REFERENCE_PREFIX_LEN / 2) / REFERENCE_PREFIX_LEN;
    q.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LensPositions {
    /// Every visual token.
    All,
    /// The episode's object tokens.
    Object,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Circuit2Params {
    /// Top-k entries kept per lens cell.
    pub k: usize,
    pub positions: LensPositions,
    /// Number of leading episodes that get per-frame temporal summaries.
    pub temporal_episodes: usize,
}

impl Default for Circuit2Params {
    fn default() -> Self {
        Self {
            k: 5,
            positions: LensPositions::Object,
            temporal_episodes: 4,
        }
    }
}

/// Source set of a knockout condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskCondition {
    /// Object tokens dilated by `buffer`.
    Object { buffer: usize },
    /// Every visual token except the dilated object set.
    Context { buffer: usize },
}

impl MaskCondition {
    pub const TABLE_ROWS: [MaskCondition; 6] = [
        MaskCondition::Object { buffer: 0 },
        MaskCondition::Object { buffer: 1 },
        MaskCondition::Object { buffer: 2 },
        MaskCondition::Context { buffer: 0 },
        MaskCondition::Context { buffer: 1 },
        MaskCondition::Context { buffer: 2 },
    ];

    /// Row label: `O`, `O+1`, `V-O`, `V-(O+1)`, ...
    pub fn label(self) -> String {
        match self {
            MaskCondition::Object { buffer: 0 } => "O".into(),
            MaskCondition::Object { buffer } => format!("O+{buffer}"),
            MaskCondition::Context { buffer: 0 } => "V-O".into(),
            MaskCondition::Context { buffer } => format!("V-(O+{buffer})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Circuit3Params {
    pub windows: Vec<Window>,
    pub conditions: Vec<MaskCondition>,
}

impl Default for Circuit3Params {
    fn default() -> Self {
        Self {
            windows: Window::ALL_COLUMNS.to_vec(),
            conditions: MaskCondition::TABLE_ROWS.to_vec(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config, reporting the failing field path on error.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative corpus path is resolved against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let EpisodeSource::Corpus(p) = &mut cfg.episodes {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!(
                    "schema {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        self.grid
            .validate()
            .map_err(|e| Error::config("grid", e.to_string()))?;
        self.model_config()?.validate()?;
        let max_positions = self.model_config()?.max_positions;
        if max_positions < self.grid.len() + 1 {
            return Err(Error::config(
                "model.max_positions",
                format!(
                    "{max_positions} positions cannot hold {} visual tokens plus a question",
                    self.grid.len()
                ),
            ));
        }
        if let ModelSource::Planted(p) = &self.model {
            if p.n_visual != self.grid.len() {
                return Err(Error::config(
                    "model.planted.n_visual",
                    format!(
                        "planted model is wired for {} visual tokens, grid has {}",
                        p.n_visual,
                        self.grid.len()
                    ),
                ));
            }
        }
        if let EpisodeSource::Generate { count } = self.episodes {
            if count == 0 {
                return Err(Error::config(
                    "episodes.generate.count",
                    "must be at least 1",
                ));
            }
        }
        if self.mean_corpus_size == 0 {
            return Err(Error::config("mean_corpus_size", "must be at least 1"));
        }
        let n = self.grid.len();
        for (i, &b) in self.circuit1.budgets(n).iter().enumerate() {
            if b == 0 || b > n {
                return Err(Error::config(
                    format!("circuit1.random_budgets[{i}]"),
                    format!("budget {b} must lie in 1..={n}"),
                ));
            }
        }
        if self.circuit2.k == 0 || self.circuit2.k > self.model_config()?.vocab_size {
            return Err(Error::config("circuit2.k", "must lie in 1..=vocab_size"));
        }
        if self.circuit3.windows.is_empty() {
            return Err(Error::config(
                "circuit3.windows",
                "needs at least one window",
            ));
        }
        if self.circuit3.conditions.is_empty() {
            return Err(Error::config(
                "circuit3.conditions",
                "needs at least one condition",
            ));
        }
        if self.formats.is_empty() {
            return Err(Error::config("formats", "needs at least one report format"));
        }
        Ok(())
    }

    /// Concrete model configuration, with the model seed derived from the
    /// root seed.
    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(match &self.model {
            ModelSource::Random(r) => ModelConfig {
                n_layers: r.n_layers,
                n_heads: r.n_heads,
                d_model: r.d_model,
                vocab_size: r.vocab_size,
                d_ff: r.d_ff,
                seed: seed::derive(self.seed, "model", 0),
                max_positions: r
                    .max_positions
                    .unwrap_or(self.grid.len() + DEFAULT_TEXT_ROOM),
            },
            ModelSource::Planted(p) => p.model_config(),
        })
    }

    pub fn build_model(&self) -> Result<Model> {
        match &self.model {
            ModelSource::Random(_) => Model::build(self.model_config()?),
            ModelSource::Planted(p) => planted_qa_model(p, &Vocab::toy(p.vocab_size)?),
        }
    }

    /// Generated or loaded episodes, validated against the grid and model.
    pub fn load_episodes(&self, model: &Model) -> Result<Vec<Episode>> {
        let eps = match &self.episodes {
            EpisodeSource::Generate { count } => episode::gen_episodes_with(
                seed::derive(self.seed, "episodes", 0),
                *count,
                &self.grid,
                model,
                &self.generator,
            )?,
            EpisodeSource::Corpus(path) => {
                if !path.exists() {
                    return Err(Error::config(
                        "episodes.corpus",
                        format!("corpus file {} does not exist", path.display()),
                    ));
                }
                episode::load_corpus(path)?
            }
        };
        for ep in &eps {
            if ep.grid != self.grid {
                return Err(Error::config(
                    "grid",
                    format!("episode {} uses a different grid than the config", ep.id),
                ));
            }
            ep.validate(model.vocab_size())?;
        }
        Ok(eps)
    }
}
