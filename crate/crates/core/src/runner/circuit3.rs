//! Attention knockout: block attention from token groups to the answer
//! position inside each layer window.

use crate::config::MaskCondition;
use crate::episode::Episode;
use crate::error::Result;
use crate::eval;
use crate::geometry::TokenSet;
use crate::intervention::{build_knockout, partition_layers};
use crate::report::{Cell, Grid, GridRow, ResultsBundle};

use super::{mean, per_episode, Circuit, Session};

pub const ACCURACY_GRID: &str = "circuit3_accuracy";
pub const PROBABILITY_DROP_GRID: &str = "circuit3_probability_drop";

/// Source tokens of a masking condition.
pub fn condition_sources(ep: &Episode, condition: MaskCondition) -> Result<TokenSet> {
    Ok(match condition {
        MaskCondition::Object { buffer } => ep.object_with_buffer(buffer)?,
        MaskCondition::Context { buffer } => ep
            .grid
            .all_tokens()
            .difference(&ep.object_with_buffer(buffer)?),
    })
}

pub fn run(s: &Session) -> Result<ResultsBundle> {
    let p = &s.config.circuit3;
    let windows = partition_layers(s.model.n_layers())?;
    let columns: Vec<String> = p.windows.iter().map(|w| w.title().to_string()).collect();

    // Outcomes indexed [condition * n_windows + window][episode].
    let runs = eval::evaluate_grid(&s.model, &s.episodes, |ep| {
        let mut specs = Vec::with_capacity(p.conditions.len() * p.windows.len());
        for &condition in &p.conditions {
            let sources = condition_sources(ep, condition)?;
            for &w in &p.windows {
                specs.push(build_knockout(
                    &windows,
                    w,
                    sources.clone(),
                    ep.answer_position(),
                ));
            }
        }
        Ok(specs)
    })?;
    let mut runs = runs.into_iter();

    let mut acc_rows = Vec::new();
    let mut drop_rows = Vec::new();
    for &condition in &p.conditions {
        let mut acc_cells = Vec::new();
        let mut drop_cells = Vec::new();
        for _ in &p.windows {
            let outcomes = runs.next().expect("one outcome list per spec");
            let drops: Vec<(u32, f64)> = s
                .baseline
                .iter()
                .zip(&outcomes)
                .map(|(b, o)| {
                    (
                        o.episode_id,
                        f64::from(b.p_correct) - f64::from(o.p_correct),
                    )
                })
                .collect();
            drop_cells.push(Cell {
                value: mean(drops.iter().map(|d| d.1)),
                outcomes: Vec::new(),
                per_episode: per_episode(drops),
            });
            acc_cells.push(Cell {
                value: Some(eval::accuracy(&outcomes)),
                outcomes,
                per_episode: Vec::new(),
            });
        }
        acc_rows.push(GridRow {
            label: condition.label(),
            detail: None,
            cells: acc_cells,
        });
        drop_rows.push(GridRow {
            label: condition.label(),
            detail: None,
            cells: drop_cells,
        });
    }

    let mut bundle = s.bundle(Circuit::Three);
    bundle.grids.push(Grid {
        name: ACCURACY_GRID.into(),
        title: "Accuracy after attention knockout to the answer position".into(),
        row_header: "Condition".into(),
        detail_header: None,
        columns: columns.clone(),
        rows: acc_rows,
        decimals: 2,
    });
    bundle.grids.push(Grid {
        name: PROBABILITY_DROP_GRID.into(),
        title: "Mean drop in correct-answer probability after attention knockout".into(),
        row_header: "Condition".into(),
        detail_header: None,
        columns,
        rows: drop_rows,
        decimals: 3,
    });
    Ok(bundle)
}
