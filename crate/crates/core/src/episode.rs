//! Synthetic question-answering episodes and their on-disk corpus format.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dump::ActivationDump;
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::geometry::{bbox_to_tokens, dilate, BBox, FrameGrid, TokenSet};
use crate::model::{InputSequence, Model};
use crate::vocab::{Vocab, NO, YES};
use crate::{seed, TokenId};

pub const CORPUS_SCHEMA_VERSION: u32 = 1;

/// Pre-fill appended to every open question.
pub const OPEN_PREFILL: &str = "The object is";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionFormat {
    Open,
    Close,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: u32,
    pub grid: FrameGrid,
    pub visual: EmbeddingSet,
    pub object_label: Vec<TokenId>,
    /// One entry per frame; `None` where the object is not visible.
    pub object_bboxes: Vec<Option<BBox>>,
    pub question: Vec<TokenId>,
    pub format: QuestionFormat,
    pub correct_token: TokenId,
}

impl Episode {
    /// Union of the tokens covered by every per-frame box.
    pub fn object_tokens(&self) -> Result<TokenSet> {
        let mut all = TokenSet::empty();
        for b in self.object_bboxes.iter().flatten() {
            all = all.union(&bbox_to_tokens(&self.grid, b)?);
        }
        Ok(all)
    }

    /// Object tokens dilated by `radius` (0 returns the object set itself).
    pub fn object_with_buffer(&self, radius: usize) -> Result<TokenSet> {
        let obj = self.object_tokens()?;
        Ok(if radius == 0 {
            obj
        } else {
            dilate(&self.grid, &obj, radius)
        })
    }

    pub fn input(&self) -> InputSequence {
        InputSequence::new(self.visual.clone(), self.question.clone())
    }

    /// Position whose logits predict the answer.
    pub fn answer_position(&self) -> usize {
        self.visual.len() + self.question.len() - 1
    }

    /// The label token used as `w_correct` by the lens metrics.
    pub fn label_token(&self) -> TokenId {
        self.object_label[0]
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.visual.len() != self.grid.len() {
            return Err(Error::Shape(format!(
                "episode {} has {} visual tokens for a grid of {}",
                self.id,
                self.visual.len(),
                self.grid.len()
            )));
        }
        if self.object_bboxes.len() != self.grid.frames {
            return Err(Error::Input(format!(
                "episode {} has {} bbox slots for {} frames",
                self.id,
                self.object_bboxes.len(),
                self.grid.frames
            )));
        }
        if self.object_label.is_empty() {
            return Err(Error::Input(format!(
                "episode {} has an empty label",
                self.id
            )));
        }
        if (self.correct_token as usize) >= vocab_size {
            return Err(Error::Input(format!(
                "episode {} answer token {} outside vocabulary",
                self.id, self.correct_token
            )));
        }
        if self.format == QuestionFormat::Close
            && self.correct_token != YES
            && self.correct_token != NO
        {
            return Err(Error::Input(format!(
                "close episode {} must be answered Yes or No",
                self.id
            )));
        }
        Ok(())
    }
}

/// Knobs for the synthetic video generator. Gains are relative to the mean
/// norm of the label embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenParams {
    pub object_gain: f32,
    pub background_gain: f32,
    /// Expected per-token noise norm relative to a label embedding; noise is a
    /// random combination of token embeddings.
    pub noise: f32,
    pub register_gain: f32,
    pub registers_per_frame: usize,
    pub min_box: f64,
    pub max_box: f64,
    /// Probability that the object is visible in any given frame.
    pub presence: f64,
    /// Fraction of close questions asking about an absent object.
    pub negative_close_rate: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            object_gain: 1.0,
            background_gain: 0.02,
            noise: 0.5,
            register_gain: 6.0,
            registers_per_frame: 1,
            min_box: 0.25,
            max_box: 0.55,
            presence: 0.85,
            negative_close_rate: 0.2,
        }
    }
}

/// [`gen_episodes_with`] using default generator parameters.
pub fn gen_episodes(
    seed: u64,
    count: usize,
    grid: &FrameGrid,
    model: &Model,
) -> Result<Vec<Episode>> {
    gen_episodes_with(seed, count, grid, model, &GenParams::default())
}

/// Deterministic synthetic episodes. Each plants a scaled copy of the object
/// label's embedding (plus noise) in the patches under a random per-frame box,
/// fills the rest with a weak distractor label, and adds high-norm register
/// outliers. Even ids get open questions, odd ids close questions.
pub fn gen_episodes_with(
    seed: u64,
    count: usize,
    grid: &FrameGrid,
    model: &Model,
    params: &GenParams,
) -> Result<Vec<Episode>> {
    grid.validate()?;
    if count == 0 {
        return Err(Error::Input("episode count must be at least 1".into()));
    }
    if !(0.0 < params.min_box && params.min_box <= params.max_box && params.max_box <= 1.0) {
        return Err(Error::config(
            "generator.min_box",
            "need 0 < min_box <= max_box <= 1",
        ));
    }
    let vocab = Vocab::toy(model.vocab_size())?;
    let d = model.d_model();
    let labels = vocab.labels();
    let scale = labels
        .iter()
        .map(|&t| {
            let r = model.token_embedding.row(t as usize);
            r.iter()
                .map(|v| f64::from(*v) * f64::from(*v))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / labels.len() as f64;
    // Noise lives in the span of the token embeddings: a random combination
    // of all rows, scaled so its expected norm is `noise` label norms.
    let n_vocab = model.vocab_size();
    let noise_std = f64::from(params.noise) / (n_vocab as f64).sqrt();
    let noise = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).expect("finite std");
    let emb = &model.token_embedding;
    let reg_row = model
        .token_embedding
        .row(vocab.register_token() as usize)
        .to_vec();
    let reg_norm = reg_row
        .iter()
        .map(|v| f64::from(*v).powi(2))
        .sum::<f64>()
        .sqrt()
        .max(1e-12);

    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "episode", i as u64));
            let object = labels[rng.random_range(0..labels.len())];
            let distractor = loop {
                let t = labels[rng.random_range(0..labels.len())];
                if t != object {
                    break t;
                }
            };
            let verb = vocab.verbs()[rng.random_range(0..vocab.verbs().len())];

            let mut bboxes = Vec::with_capacity(grid.frames);
            for _ in 0..grid.frames {
                bboxes.push(if rng.random_bool(params.presence) {
                    Some(random_box(&mut rng, params))
                } else {
                    None
                });
            }
            if bboxes.iter().all(Option::is_none) {
                bboxes[0] = Some(random_box(&mut rng, params));
            }
            let bboxes: Vec<Option<BBox>> = bboxes
                .into_iter()
                .enumerate()
                .map(|(f, b)| {
                    b.map(|(x0, y0, x1, y1)| BBox::new(f, x0, y0, x1, y1))
                        .transpose()
                })
                .collect::<Result<_>>()?;

            let mut object_set = TokenSet::empty();
            for b in bboxes.iter().flatten() {
                object_set = object_set.union(&bbox_to_tokens(grid, b)?);
            }
            let obj_row = model.token_embedding.row(object as usize);
            let bg_row = model.token_embedding.row(distractor as usize);
            let mut data = Vec::with_capacity(grid.len() * d);
            for t in 0..grid.len() {
                let (base, gain) = if object_set.contains(t) {
                    (obj_row, params.object_gain)
                } else {
                    (bg_row, params.background_gain)
                };
                let start = data.len();
                data.extend(base.iter().map(|&v| gain * v));
                for tok in 0..n_vocab {
                    let z = noise.sample(&mut rng) as f32;
                    for (x, &e) in data[start..].iter_mut().zip(emb.row(tok)) {
                        *x += z * e;
                    }
                }
            }
            for f in 0..grid.frames {
                let background: Vec<usize> = grid
                    .frame_tokens(f)
                    .iter()
                    .filter(|&t| !object_set.contains(t))
                    .collect();
                for _ in 0..params.registers_per_frame.min(background.len()) {
                    let t = background[rng.random_range(0..background.len())];
                    let g = (f64::from(params.register_gain) * scale / reg_norm) as f32;
                    for (v, r) in data[t * d..(t + 1) * d].iter_mut().zip(&reg_row) {
                        *v += g * r;
                    }
                }
            }

            let format = if i % 2 == 0 {
                QuestionFormat::Open
            } else {
                QuestionFormat::Close
            };
            let (question, correct_token) = match format {
                QuestionFormat::Open => {
                    let text = format!(
                        "Which object did the person {} in the video ? {OPEN_PREFILL}",
                        vocab.word(verb)
                    );
                    (vocab.encode(&text)?, object)
                }
                QuestionFormat::Close => {
                    let negative = rng.random_bool(params.negative_close_rate);
                    let asked = if negative {
                        loop {
                            let t = labels[rng.random_range(0..labels.len())];
                            if t != object && t != distractor {
                                break t;
                            }
                        }
                    } else {
                        object
                    };
                    let word = vocab.word(asked);
                    let article = if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
                        "an"
                    } else {
                        "a"
                    };
                    let text = format!("Is there {article} {word} in this video ?");
                    (vocab.encode(&text)?, if negative { NO } else { YES })
                }
            };

            Ok(Episode {
                id: i as u32,
                grid: *grid,
                visual: EmbeddingSet::new(d, data)?,
                object_label: vec![object],
                object_bboxes: bboxes,
                question,
                format,
                correct_token,
            })
        })
        .collect()
}

fn random_box(rng: &mut ChaCha8Rng, p: &GenParams) -> (f64, f64, f64, f64) {
    let w = rng.random_range(p.min_box..=p.max_box);
    let h = rng.random_range(p.min_box..=p.max_box);
    let x0 = rng.random_range(0.0..=(1.0 - w));
    let y0 = rng.random_range(0.0..=(1.0 - h));
    (x0, y0, (x0 + w).min(1.0), (y0 + h).min(1.0))
}

// ---------------------------------------------------------------------------
// Corpus files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusFile {
    schema_version: u32,
    episodes: Vec<EpisodeRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeRecord {
    id: u32,
    grid: FrameGrid,
    /// Path of the STCACT01 dump holding the visual prefix, relative to the
    /// corpus file.
    visual: PathBuf,
    object_label: Vec<TokenId>,
    object_bboxes: Vec<Option<BBox>>,
    question: Vec<TokenId>,
    format: QuestionFormat,
    correct_token: TokenId,
}

/// Writes `episodes.json` plus one dump per episode under `visual/`.
pub fn save_corpus(dir: impl AsRef<Path>, episodes: &[Episode]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let vis_dir = dir.join("visual");
    fs::create_dir_all(&vis_dir).map_err(|e| Error::io(&vis_dir, e))?;
    let mut records = Vec::with_capacity(episodes.len());
    for ep in episodes {
        let rel = PathBuf::from("visual").join(format!("ep_{:05}.stcact", ep.id));
        ActivationDump::from_embeddings(&ep.visual, format!("synthetic episode {}", ep.id))?
            .write(dir.join(&rel))?;
        records.push(EpisodeRecord {
            id: ep.id,
            grid: ep.grid,
            visual: rel,
            object_label: ep.object_label.clone(),
            object_bboxes: ep.object_bboxes.clone(),
            question: ep.question.clone(),
            format: ep.format,
            correct_token: ep.correct_token,
        });
    }
    let file = CorpusFile {
        schema_version: CORPUS_SCHEMA_VERSION,
        episodes: records,
    };
    let path = dir.join("episodes.json");
    let json = serde_json::to_string_pretty(&file)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Episode>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CorpusFile = serde_json::from_str(&text)?;
    if file.schema_version != CORPUS_SCHEMA_VERSION {
        return Err(Error::config(
            "schema_version",
            format!(
                "corpus schema {} is not supported (expected {CORPUS_SCHEMA_VERSION})",
                file.schema_version
            ),
        ));
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    file.episodes
        .into_iter()
        .map(|r| {
            let dump = ActivationDump::read(base.join(&r.visual))?;
            Ok(Episode {
                id: r.id,
                grid: r.grid,
                visual: dump.embeddings()?,
                object_label: r.object_label,
                object_bboxes: r.object_bboxes,
                question: r.question,
                format: r.format,
                correct_token: r.correct_token,
            })
        })
        .collect()
}
