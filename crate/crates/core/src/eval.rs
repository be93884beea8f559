//! Question-answering evaluation under interventions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episode::{Episode, QuestionFormat};
use crate::error::{Error, Result};
use crate::intervention::InterventionSpec;
use crate::math;
use crate::model::{ForwardTrace, Model};
use crate::vocab::{NO, YES};
use crate::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub episode_id: u32,
    pub intervention: String,
    pub predicted: TokenId,
    /// Probability of the correct token at the answer position: full softmax
    /// for open questions, Yes/No-restricted softmax for close questions.
    pub p_correct: f32,
    pub is_correct: bool,
    /// Whether the prediction changed relative to a supplied baseline run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flipped: Option<bool>,
}

fn answer_logits(trace: &ForwardTrace, ep: &Episode) -> Result<Vec<f32>> {
    let last = trace
        .last_logits()
        .ok_or_else(|| Error::Input(format!("episode {} has an empty input", ep.id)))?;
    Ok(last.to_vec())
}

fn open_outcome(ep: &Episode, spec: &InterventionSpec, logits: &[f32]) -> EvalOutcome {
    let predicted = math::argmax(logits) as TokenId;
    let probs = math::softmax(logits);
    EvalOutcome {
        episode_id: ep.id,
        intervention: spec.kind_name().to_string(),
        predicted,
        p_correct: probs[ep.correct_token as usize],
        is_correct: predicted == ep.correct_token,
        flipped: None,
    }
}

fn close_outcome(
    ep: &Episode,
    spec: &InterventionSpec,
    logits: &[f32],
    baseline: Option<&EvalOutcome>,
) -> EvalOutcome {
    let predicted = decide_yes_no(logits);
    EvalOutcome {
        episode_id: ep.id,
        intervention: spec.kind_name().to_string(),
        predicted,
        p_correct: restricted_probability(logits, ep.correct_token),
        is_correct: predicted == ep.correct_token,
        flipped: baseline.map(|b| b.predicted != predicted),
    }
}

fn outcome(ep: &Episode, spec: &InterventionSpec, logits: &[f32]) -> EvalOutcome {
    match ep.format {
        QuestionFormat::Open => open_outcome(ep, spec, logits),
        QuestionFormat::Close => close_outcome(ep, spec, logits, None),
    }
}

/// Open question: greedy next token after the pre-fill.
pub fn eval_open(model: &Model, ep: &Episode, spec: &InterventionSpec) -> Result<EvalOutcome> {
    if ep.format != QuestionFormat::Open {
        return Err(Error::Input(format!(
            "episode {} is not an open question",
            ep.id
        )));
    }
    let logits = answer_logits(&model.forward(&ep.input(), Some(spec))?, ep)?;
    Ok(open_outcome(ep, spec, &logits))
}

/// Yes when `P(Yes) >= P(No)`, otherwise No. Works on probabilities or on
/// logits alike, since softmax preserves order.
pub fn decide_yes_no(scores: &[f32]) -> TokenId {
    if scores[YES as usize] >= scores[NO as usize] {
        YES
    } else {
        NO
    }
}

/// Probability of `token` under the softmax restricted to {Yes, No}.
fn restricted_probability(logits: &[f32], token: TokenId) -> f32 {
    let yes = f64::from(logits[YES as usize]);
    let no = f64::from(logits[NO as usize]);
    let (own, other) = if token == YES { (yes, no) } else { (no, yes) };
    (1.0 / (1.0 + (other - own).exp())) as f32
}

/// Close question: restricted Yes/No comparison. The decision is taken on
/// logits so that a vocabulary-wide softmax underflowing both entries cannot
/// produce a spurious tie, and `p_correct` is the two-way probability. With a
/// baseline outcome the result records whether the answer flipped.
pub fn eval_close(
    model: &Model,
    ep: &Episode,
    spec: &InterventionSpec,
    baseline: Option<&EvalOutcome>,
) -> Result<EvalOutcome> {
    if ep.format != QuestionFormat::Close {
        return Err(Error::Input(format!(
            "episode {} is not a close question",
            ep.id
        )));
    }
    let logits = answer_logits(&model.forward(&ep.input(), Some(spec))?, ep)?;
    Ok(close_outcome(ep, spec, &logits, baseline))
}

/// Dispatches on the episode's question format.
pub fn evaluate(model: &Model, ep: &Episode, spec: &InterventionSpec) -> Result<EvalOutcome> {
    match ep.format {
        QuestionFormat::Open => eval_open(model, ep, spec),
        QuestionFormat::Close => eval_close(model, ep, spec, None),
    }
}

/// Evaluates one episode under several specs, sharing one unintervened pass
/// through [`Model::forward_resumed`]. Results equal calling [`evaluate`]
/// per spec.
pub fn evaluate_batch(
    model: &Model,
    ep: &Episode,
    specs: &[InterventionSpec],
) -> Result<Vec<EvalOutcome>> {
    let input = ep.input();
    let cache = model.forward_cached(&input)?;
    specs
        .iter()
        .map(|spec| {
            let trace = model.forward_resumed(&cache, &input, spec)?;
            Ok(outcome(ep, spec, &answer_logits(&trace, ep)?))
        })
        .collect()
}

/// Evaluates every episode under each of the specs `specs_for` returns for
/// it (the same number for every episode). The result is indexed
/// `[spec][episode]` and does not depend on scheduling.
pub fn evaluate_grid<F>(
    model: &Model,
    episodes: &[Episode],
    specs_for: F,
) -> Result<Vec<Vec<EvalOutcome>>>
where
    F: Fn(&Episode) -> Result<Vec<InterventionSpec>> + Sync,
{
    let per_episode: Vec<Vec<EvalOutcome>> = episodes
        .par_iter()
        .map(|ep| evaluate_batch(model, ep, &specs_for(ep)?))
        .collect::<Result<_>>()?;
    let n_specs = per_episode.first().map_or(0, Vec::len);
    if per_episode.iter().any(|v| v.len() != n_specs) {
        return Err(Error::Input(
            "episodes produced different numbers of specs".into(),
        ));
    }
    let mut out = vec![Vec::with_capacity(episodes.len()); n_specs];
    for outcomes in per_episode {
        for (slot, o) in out.iter_mut().zip(outcomes) {
            slot.push(o);
        }
    }
    Ok(out)
}

/// Evaluates every episode in parallel; output order follows `episodes`.
pub fn evaluate_all<F>(model: &Model, episodes: &[Episode], spec_for: F) -> Result<Vec<EvalOutcome>>
where
    F: Fn(&Episode) -> Result<InterventionSpec> + Sync,
{
    episodes
        .par_iter()
        .map(|ep| evaluate(model, ep, &spec_for(ep)?))
        .collect()
}

pub fn accuracy(outcomes: &[EvalOutcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| o.is_correct).count() as f64 / outcomes.len() as f64
}

/// Relative accuracy drop in percent: `100 * (acc_base - acc_int) / acc_base`.
pub fn accuracy_drop(baseline: &[EvalOutcome], intervened: &[EvalOutcome]) -> Result<f64> {
    if baseline.len() != intervened.len()
        || baseline
            .iter()
            .zip(intervened)
            .any(|(a, b)| a.episode_id != b.episode_id)
    {
        return Err(Error::Input(
            "baseline and intervened outcomes cover different episodes".into(),
        ));
    }
    let base = accuracy(baseline);
    if base == 0.0 {
        return Err(Error::UndefinedBaseline);
    }
    Ok(100.0 * (base - accuracy(intervened)) / base)
}

/// Keeps episodes answered correctly as-is and incorrectly once their object
/// tokens are replaced by `uninformative`.
pub fn curate(episodes: &[Episode], model: &Model, uninformative: &[f32]) -> Result<Vec<Episode>> {
    let keep: Vec<bool> = episodes
        .par_iter()
        .map(|ep| {
            let specs = [
                InterventionSpec::None,
                InterventionSpec::ablation(ep.object_tokens()?, uninformative.to_vec()),
            ];
            let out = evaluate_batch(model, ep, &specs)?;
            Ok(out[0].is_correct && !out[1].is_correct)
        })
        .collect::<Result<_>>()?;
    Ok(episodes
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(ep, _)| ep.clone())
        .collect())
}
