//! Intervention payloads and the evaluation protocol built on them.

mod common;

use stc_core::episode::{gen_episodes, QuestionFormat};
use stc_core::eval::{self, curate, evaluate};
use stc_core::intervention::{ablate, inject_text, mean_embedding};
use stc_core::model::planted::{planted_qa_model, PlantedConfig};
use stc_core::vocab::Vocab;
use stc_core::{EmbeddingSet, FrameGrid, InterventionSpec, Model, Provenance, TokenSet};

fn planted(grid: &FrameGrid) -> Model {
    let cfg = PlantedConfig {
        n_visual: grid.len(),
        ..PlantedConfig::default()
    };
    planted_qa_model(&cfg, &Vocab::toy(cfg.vocab_size).unwrap()).unwrap()
}

#[test]
fn mean_embedding_matches_two_pass_average() {
    let mut r = common::rng(2);
    let sets: Vec<EmbeddingSet> = (0..5)
        .map(|i| {
            let m = common::random_model(0, 1);
            common::random_input(&m, &mut r, 3 + i, 0).visual
        })
        .collect();
    let got = mean_embedding(&sets).unwrap();
    let rows: Vec<&[f32]> = sets.iter().flat_map(|s| s.rows()).collect();
    for (c, g) in got.iter().enumerate() {
        // Column by column: sum first, then divide once.
        let total: f64 = rows.iter().map(|row| f64::from(row[c])).sum();
        assert_eq!(*g, (total / rows.len() as f64) as f32, "channel {c}");
    }
    assert!(mean_embedding(&[]).is_err());
}

#[test]
fn ablation_and_injection_touch_only_selected_rows() {
    let m = common::random_model(3, 1);
    let visual = common::random_input(&m, &mut common::rng(3), 6, 0).visual;
    let tokens = TokenSet::new([1, 4]);
    let repl = vec![0.25; m.d_model()];
    let ab = ablate(&visual, &tokens, &repl).unwrap();
    let inj = inject_text(&visual, &tokens, &[7, 9], &m).unwrap();
    for i in 0..6 {
        if tokens.contains(i) {
            assert_eq!(ab.row(i), &repl[..]);
            assert_eq!(ab.provenance(i), Provenance::Ablated);
        } else {
            assert_eq!(ab.row(i), visual.row(i));
            assert_eq!(inj.row(i), visual.row(i));
        }
    }
    // Labels tile the selected rows in ascending order.
    assert_eq!(inj.row(1), m.embedding_row(7).unwrap());
    assert_eq!(inj.row(4), m.embedding_row(9).unwrap());
    assert_eq!(inj.provenance(4), Provenance::Injected(9));
}

#[test]
fn fully_ablated_video_gives_the_same_open_answer_everywhere() {
    let grid = FrameGrid::new(2, 4, 4).unwrap();
    let m = planted(&grid);
    let eps = gen_episodes(5, 10, &grid, &m).unwrap();
    let mean = mean_embedding(&eps.iter().map(|e| e.visual.clone()).collect::<Vec<_>>()).unwrap();
    let open: Vec<_> = eps
        .iter()
        .filter(|e| e.format == QuestionFormat::Open)
        .map(|e| {
            evaluate(
                &m,
                e,
                &InterventionSpec::ablation(grid.all_tokens(), mean.clone()),
            )
            .unwrap()
        })
        .collect();
    assert!(open.len() >= 2);
    let preds: std::collections::BTreeSet<_> = open.iter().map(|o| o.predicted).collect();
    assert_eq!(
        preds.len(),
        1,
        "answers depend on the ablated video: {preds:?}"
    );
}

#[test]
fn planted_model_answers_its_own_episodes() {
    let grid = FrameGrid::new(2, 4, 4).unwrap();
    let m = planted(&grid);
    let eps = gen_episodes(9, 40, &grid, &m).unwrap();
    let outcomes = eval::evaluate_all(&m, &eps, |_| Ok(InterventionSpec::None)).unwrap();
    assert!(
        eval::accuracy(&outcomes) >= 0.8,
        "accuracy {}",
        eval::accuracy(&outcomes)
    );
}

#[test]
fn curation_keeps_exactly_the_sensitive_episodes() {
    let grid = FrameGrid::new(2, 4, 4).unwrap();
    let m = planted(&grid);
    let eps = gen_episodes(13, 40, &grid, &m).unwrap();
    let mean = mean_embedding(&eps.iter().map(|e| e.visual.clone()).collect::<Vec<_>>()).unwrap();
    let kept = curate(&eps, &m, &mean).unwrap();
    assert!(!kept.is_empty());

    // Recount with plain, uncached evaluation.
    let mut expected = Vec::new();
    for ep in &eps {
        let base = evaluate(&m, ep, &InterventionSpec::None).unwrap();
        let ablated = evaluate(
            &m,
            ep,
            &InterventionSpec::ablation(ep.object_tokens().unwrap(), mean.clone()),
        )
        .unwrap();
        if base.is_correct && !ablated.is_correct {
            expected.push(ep.id);
        }
    }
    assert_eq!(kept.iter().map(|e| e.id).collect::<Vec<_>>(), expected);
    assert_eq!(curate(&kept, &m, &mean).unwrap(), kept);
}

#[test]
fn batched_evaluation_matches_single_runs() {
    let grid = FrameGrid::new(1, 4, 4).unwrap();
    let m = planted(&grid);
    let eps = gen_episodes(21, 6, &grid, &m).unwrap();
    let mean = vec![0.0; m.d_model()];
    for ep in &eps {
        let specs = vec![
            InterventionSpec::None,
            InterventionSpec::ablation(ep.object_with_buffer(1).unwrap(), mean.clone()),
            InterventionSpec::injection(ep.object_tokens().unwrap(), ep.object_label.clone()),
        ];
        let batch = eval::evaluate_batch(&m, ep, &specs).unwrap();
        for (spec, got) in specs.iter().zip(batch) {
            assert_eq!(got, evaluate(&m, ep, spec).unwrap());
        }
    }
}

#[test]
fn accuracy_drop_needs_a_nonzero_baseline() {
    let grid = FrameGrid::new(1, 2, 2).unwrap();
    let m = planted(&grid);
    let eps = gen_episodes(1, 2, &grid, &m).unwrap();
    let mut base = eval::evaluate_all(&m, &eps, |_| Ok(InterventionSpec::None)).unwrap();
    for o in &mut base {
        o.is_correct = false;
    }
    assert_eq!(
        eval::accuracy_drop(&base, &base).unwrap_err().category(),
        "undefined-baseline"
    );
}
