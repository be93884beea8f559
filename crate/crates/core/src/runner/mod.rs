//! Config-driven orchestration of the three circuits.
//!
//! [`Session::prepare`] does the work shared by every circuit (model
//! construction, episode loading, the uninformative mean embedding, optional
//! curation and the unintervened baseline); each circuit then turns the
//! session into a [`ResultsBundle`].

pub mod circuit1;
pub mod circuit2;
pub mod circuit3;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::{EpisodeSource, ExperimentConfig};
use crate::episode::{self, Episode};
use crate::error::{Error, Result};
use crate::eval::{self, EvalOutcome};
use crate::intervention::{mean_embedding, InterventionSpec};
use crate::model::Model;
use crate::report::{Cell, EpisodeValue, ResultsBundle, RESULTS_SCHEMA_VERSION};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Circuit {
    /// Visual token auditing.
    One,
    /// Semantic tracing with the logit lens.
    Two,
    /// Attention knockout.
    Three,
}

impl Circuit {
    pub const ALL: [Circuit; 3] = [Circuit::One, Circuit::Two, Circuit::Three];

    pub fn name(self) -> &'static str {
        match self {
            Circuit::One => "circuit1",
            Circuit::Two => "circuit2",
            Circuit::Three => "circuit3",
        }
    }
}

impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Circuit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Circuit::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::config("circuit", format!("unknown circuit `{s}`")))
    }
}

/// State shared by all circuits of one campaign.
#[derive(Debug, Clone)]
pub struct Session {
    pub config: ExperimentConfig,
    pub model: Model,
    /// Number of episodes before curation.
    pub n_loaded: usize,
    /// Episodes the circuits run on.
    pub episodes: Vec<Episode>,
    /// Uninformative replacement vector for ablations.
    pub mean: Vec<f32>,
    /// Unintervened outcomes, aligned with `episodes`.
    pub baseline: Vec<EvalOutcome>,
}

impl Session {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let model = config.build_model()?;
        let loaded = config.load_episodes(&model)?;
        let mean = match &config.episodes {
            EpisodeSource::Generate { .. } => {
                let pool = episode::gen_episodes_with(
                    seed::derive(config.seed, "mean_corpus", 0),
                    config.mean_corpus_size,
                    &config.grid,
                    &model,
                    &config.generator,
                )?;
                mean_embedding(&pool.into_iter().map(|e| e.visual).collect::<Vec<_>>())?
            }
            EpisodeSource::Corpus(_) => {
                mean_embedding(&loaded.iter().map(|e| e.visual.clone()).collect::<Vec<_>>())?
            }
        };
        let n_loaded = loaded.len();
        let episodes = if config.curate {
            eval::curate(&loaded, &model, &mean)?
        } else {
            loaded
        };
        if episodes.is_empty() {
            return Err(Error::Input(format!(
                "curation kept none of the {n_loaded} episodes"
            )));
        }
        let baseline = eval::evaluate_all(&model, &episodes, |_| Ok(InterventionSpec::None))?;
        Ok(Self {
            config: config.clone(),
            model,
            n_loaded,
            episodes,
            mean,
            baseline,
        })
    }

    pub fn run(&self, circuit: Circuit) -> Result<ResultsBundle> {
        match circuit {
            Circuit::One => circuit1::run(self),
            Circuit::Two => circuit2::run(self),
            Circuit::Three => circuit3::run(self),
        }
    }

    pub(crate) fn bundle(&self, circuit: Circuit) -> ResultsBundle {
        ResultsBundle {
            schema_version: RESULTS_SCHEMA_VERSION,
            circuit: circuit.name().to_string(),
            config: self.config.clone(),
            n_episodes: self.n_loaded,
            episode_ids: self.episodes.iter().map(|e| e.id).collect(),
            baseline: self.baseline.clone(),
            grids: Vec::new(),
            temporal: Vec::new(),
        }
    }
}

/// Prepares a session, runs one circuit and writes its reports into `out`.
pub fn run_and_emit(
    config: &ExperimentConfig,
    circuit: Circuit,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let session = Session::prepare(config)?;
    session.run(circuit)?.emit(out, &config.formats)
}

/// Mean of `values`, or `None` when empty.
pub(crate) fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0f64, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub(crate) fn per_episode(values: impl IntoIterator<Item = (u32, f64)>) -> Vec<EpisodeValue> {
    values
        .into_iter()
        .map(|(episode_id, value)| EpisodeValue { episode_id, value })
        .collect()
}

/// Cell holding an accuracy drop of `intervened` against `baseline`, or an
/// empty value when the drop is undefined.
pub(crate) fn drop_cell(baseline: &[EvalOutcome], intervened: Vec<EvalOutcome>) -> Result<Cell> {
    let value = if intervened.is_empty() {
        None
    } else {
        match eval::accuracy_drop(baseline, &intervened) {
            Ok(v) => Some(v),
            Err(Error::UndefinedBaseline) => None,
            Err(e) => return Err(e),
        }
    };
    Ok(Cell {
        value,
        outcomes: intervened,
        per_episode: Vec::new(),
    })
}
