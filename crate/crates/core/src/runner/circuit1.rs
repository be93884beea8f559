//! Visual token auditing: ablate token groups with the uninformative mean
//! embedding and measure the relative accuracy drop per question format.

use crate::episode::{Episode, QuestionFormat};
use crate::error::Result;
use crate::eval::{self, EvalOutcome};
use crate::geometry::{detect_registers, sample_random, TokenSet};
use crate::intervention::InterventionSpec;
use crate::report::{Cell, Grid, GridRow, ResultsBundle};
use crate::seed;

use super::{drop_cell, Circuit, Session};

pub const ABLATION_GRID: &str = "circuit1_accuracy_drop";
pub const INJECTION_GRID: &str = "circuit1_text_injection";

const FORMATS: [QuestionFormat; 2] = [QuestionFormat::Open, QuestionFormat::Close];

/// Row label of an object row: `Object`, `Object+1`, ...
pub fn object_label(buffer: usize) -> String {
    if buffer == 0 {
        "Object".to_string()
    } else {
        format!("Object+{buffer}")
    }
}

fn split(
    outcomes: &[EvalOutcome],
    episodes: &[Episode],
    format: QuestionFormat,
) -> Vec<EvalOutcome> {
    outcomes
        .iter()
        .zip(episodes)
        .filter(|(_, e)| e.format == format)
        .map(|(o, _)| o.clone())
        .collect()
}

/// Open and Close drop cells for a set of outcomes aligned with the session.
fn format_cells(s: &Session, outcomes: &[EvalOutcome]) -> Result<Vec<Cell>> {
    FORMATS
        .iter()
        .map(|&f| {
            drop_cell(
                &split(&s.baseline, &s.episodes, f),
                split(outcomes, &s.episodes, f),
            )
        })
        .collect()
}

fn random_tokens(
    s: &Session,
    ep: &Episode,
    budget_index: usize,
    budget: usize,
) -> Result<TokenSet> {
    let stream = ((budget_index as u64) << 32) | u64::from(ep.id);
    sample_random(
        &ep.grid,
        budget,
        seed::derive(s.config.seed, "circuit1.random", stream),
        None,
    )
}

fn mean_len(s: &Session, select: impl Fn(&Episode) -> Result<TokenSet>) -> Result<f64> {
    let mut total = 0usize;
    for ep in &s.episodes {
        total += select(ep)?.len();
    }
    Ok(total as f64 / s.episodes.len().max(1) as f64)
}

pub fn run(s: &Session) -> Result<ResultsBundle> {
    let cfg = &s.config;
    let p = &cfg.circuit1;
    let budgets = p.budgets(cfg.grid.len());
    let inject = p.text_injection && !p.object_buffers.is_empty();

    // Every intervention of the circuit for one episode, in row order:
    // register, object rows, random rows, then injections.
    let runs = eval::evaluate_grid(&s.model, &s.episodes, |ep| {
        let ablate = |t: TokenSet| InterventionSpec::ablation(t, s.mean.clone());
        let mut specs = Vec::new();
        if p.register {
            specs.push(ablate(detect_registers(&ep.visual, &ep.grid)?));
        }
        for &b in &p.object_buffers {
            specs.push(ablate(ep.object_with_buffer(b)?));
        }
        for (i, &budget) in budgets.iter().enumerate() {
            specs.push(ablate(random_tokens(s, ep, i, budget)?));
        }
        if inject {
            for &b in &p.object_buffers {
                specs.push(InterventionSpec::injection(
                    ep.object_with_buffer(b)?,
                    ep.object_label.clone(),
                ));
            }
        }
        Ok(specs)
    })?;
    let mut runs = runs.into_iter();
    let mut next = || runs.next().expect("one outcome list per spec");

    let mut rows = vec![GridRow {
        label: "Baseline".into(),
        detail: Some("0".into()),
        cells: format_cells(s, &s.baseline)?,
    }];
    if p.register {
        rows.push(GridRow {
            label: "Register".into(),
            detail: Some(format!(
                "{:.1}",
                mean_len(s, |ep| detect_registers(&ep.visual, &ep.grid))?
            )),
            cells: format_cells(s, &next())?,
        });
    }
    let mut object_outcomes = Vec::new();
    for &b in &p.object_buffers {
        let outcomes = next();
        rows.push(GridRow {
            label: object_label(b),
            detail: Some(format!(
                "{:.1}",
                mean_len(s, |ep| ep.object_with_buffer(b))?
            )),
            cells: format_cells(s, &outcomes)?,
        });
        object_outcomes.push(outcomes);
    }
    for &budget in &budgets {
        rows.push(GridRow {
            label: "Random".into(),
            detail: Some(budget.to_string()),
            cells: format_cells(s, &next())?,
        });
    }

    let mut bundle = s.bundle(Circuit::One);
    bundle.grids.push(Grid {
        name: ABLATION_GRID.into(),
        title: "Accuracy drop (%) from visual token ablation".into(),
        row_header: "Ablation".into(),
        detail_header: Some("Tokens".into()),
        columns: vec!["Open".into(), "Close".into()],
        rows,
        decimals: 1,
    });

    if inject {
        let mut rows = Vec::new();
        for (&b, ablated) in p.object_buffers.iter().zip(&object_outcomes) {
            let injected = next();
            let mut cells = Vec::new();
            for (a, i) in format_cells(s, ablated)?
                .into_iter()
                .zip(format_cells(s, &injected)?)
            {
                cells.push(a);
                cells.push(i);
            }
            rows.push(GridRow {
                label: object_label(b),
                detail: None,
                cells,
            });
        }
        bundle.grids.push(Grid {
            name: INJECTION_GRID.into(),
            title: "Accuracy drop (%): mean-embedding ablation vs text injection".into(),
            row_header: "Tokens".into(),
            detail_header: None,
            columns: vec![
                "Open ablated".into(),
                "Open injected".into(),
                "Close ablated".into(),
                "Close injected".into(),
            ],
            rows,
            decimals: 1,
        });
    }
    Ok(bundle)
}
