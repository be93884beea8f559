//! Semantic tracing: logit-lens metrics over the visual prefix, layer by layer.

use rayon::prelude::*;

use crate::config::LensPositions;
use crate::episode::Episode;
use crate::error::Result;
use crate::geometry::TokenSet;
use crate::lens::{self, LayerMetricSeries};
use crate::model::InputSequence;
use crate::report::{Cell, Grid, GridRow, ResultsBundle, TemporalRecord};

use super::{mean, per_episode, Circuit, Session};

pub const METRICS_GRID: &str = "circuit2_layer_metrics";

fn positions(ep: &Episode, which: LensPositions) -> Result<TokenSet> {
    match which {
        LensPositions::All => Ok(ep.grid.all_tokens()),
        LensPositions::Object => ep.object_tokens(),
    }
}

/// Visual tokens decode identically with or without the question because
/// attention is causal, so the lens runs on the visual prefix alone.
fn vision_only(ep: &Episode) -> InputSequence {
    InputSequence::new(ep.visual.clone(), Vec::new())
}

pub fn run(s: &Session) -> Result<ResultsBundle> {
    let p = &s.config.circuit2;
    let series: Vec<(u32, LayerMetricSeries)> = s
        .episodes
        .par_iter()
        .map(|ep| {
            let pos = positions(ep, p.positions)?;
            if pos.is_empty() {
                return Ok(None);
            }
            let label = ep.label_token();
            let rec = lens::trace(&s.model, &vision_only(ep), &pos, p.k, Some(label))?;
            Ok(Some((
                ep.id,
                LayerMetricSeries::from_record(&rec, label, &pos)?,
            )))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let n_boundaries = s.model.n_layers() + 1;
    let rows = (0..n_boundaries)
        .map(|layer| {
            let cr: Vec<(u32, f64)> = series
                .iter()
                .map(|(id, m)| (*id, m.correspondence_rate[layer]))
                .collect();
            let ap: Vec<(u32, f64)> = series
                .iter()
                .map(|(id, m)| (*id, m.answer_probability[layer]))
                .collect();
            GridRow {
                label: layer.to_string(),
                detail: None,
                cells: vec![
                    Cell {
                        value: mean(cr.iter().map(|x| x.1)),
                        outcomes: Vec::new(),
                        per_episode: per_episode(cr),
                    },
                    Cell {
                        value: mean(ap.iter().map(|x| x.1)),
                        outcomes: Vec::new(),
                        per_episode: per_episode(ap),
                    },
                ],
            }
        })
        .collect();

    let mut bundle = s.bundle(Circuit::Two);
    bundle.grids.push(Grid {
        name: METRICS_GRID.into(),
        title: "Logit-lens correspondence rate and answer probability per layer".into(),
        row_header: "Layer".into(),
        detail_header: None,
        columns: vec!["C_R".into(), "A_P".into()],
        rows,
        decimals: 4,
    });

    for ep in s.episodes.iter().take(p.temporal_episodes) {
        let Some(anchor) = ep.object_tokens()?.iter().next() else {
            continue;
        };
        let (_, row, col) = ep.grid.coords(anchor);
        let column = TokenSet::new((0..ep.grid.frames).map(|f| ep.grid.flat(f, row, col)));
        let rec = lens::trace(
            &s.model,
            &vision_only(ep),
            &column,
            p.k,
            Some(ep.label_token()),
        )?;
        bundle.temporal.push(TemporalRecord {
            episode_id: ep.id,
            position: anchor,
            frames: lens::temporal_summary(&rec, &ep.grid, anchor)?,
        });
    }
    Ok(bundle)
}
