//! Causal and knockout locality of the forward pass, checked bit for bit.

mod common;

use proptest::prelude::*;

use common::{bits_eq, random_input, rng};
use stc_core::intervention::{build_knockout, partition_layers, KnockoutMask};
use stc_core::{InterventionSpec, LayerRange, Model, TokenSet, Window};

fn model(seed: u64, n_layers: usize) -> Model {
    Model::build(common::config(seed, n_layers, 16, 24, 40)).unwrap()
}

fn knockout(sources: Vec<usize>, target: usize, start: usize, end: usize) -> InterventionSpec {
    InterventionSpec::Knockout {
        masks: vec![KnockoutMask {
            sources: TokenSet::new(sources),
            target,
            layers: LayerRange::new(start, end),
        }],
    }
}

fn same_trace(a: &stc_core::ForwardTrace, b: &stc_core::ForwardTrace) -> bool {
    (0..=a.n_layers()).all(|l| bits_eq(a.hidden_layer(l), b.hidden_layer(l)))
        && (0..a.seq_len()).all(|p| bits_eq(a.logits(p), b.logits(p)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ablation_after_p_leaves_prefix_untouched(seed in 0u64..1000, n_vis in 2usize..12, n_text in 0usize..6, cut in 0.0f64..1.0) {
        let m = model(seed, 3);
        let input = random_input(&m, &mut rng(seed), n_vis, n_text);
        let p = 1 + ((n_vis - 1) as f64 * cut) as usize;
        let spec = InterventionSpec::ablation(TokenSet::new(p..n_vis), vec![0.5; 16]);
        let base = m.forward(&input, None).unwrap();
        let hit = m.forward(&input, Some(&spec)).unwrap();
        for q in 0..p {
            prop_assert!(bits_eq(base.logits(q), hit.logits(q)));
            for l in 0..=m.n_layers() {
                prop_assert!(bits_eq(base.hidden(l, q), hit.hidden(l, q)));
            }
        }
    }

    #[test]
    fn knockout_is_confined(seed in 0u64..1000, n_vis in 1usize..10, n_text in 1usize..6, t_frac in 0.0f64..1.0, a in 0usize..4, span in 1usize..4) {
        let m = model(seed, 4);
        let input = random_input(&m, &mut rng(seed ^ 7), n_vis, n_text);
        let len = input.len();
        let t = ((len as f64) * t_frac) as usize % len;
        let b = (a + span).min(4);
        let spec = knockout((0..=t).collect(), t, a, b);
        let base = m.forward(&input, None).unwrap();
        let hit = m.forward(&input, Some(&spec)).unwrap();
        for l in 0..=a {
            prop_assert!(bits_eq(base.hidden_layer(l), hit.hidden_layer(l)));
        }
        for q in 0..t {
            for l in 0..=m.n_layers() {
                prop_assert!(bits_eq(base.hidden(l, q), hit.hidden(l, q)));
            }
        }
    }

    #[test]
    fn resumed_pass_equals_full_pass(seed in 0u64..1000, n_vis in 2usize..10, n_text in 1usize..5, which in 0usize..4, lo in 0usize..10) {
        let m = model(seed, 3);
        let input = random_input(&m, &mut rng(seed ^ 11), n_vis, n_text);
        let first = lo % n_vis;
        let spec = match which {
            0 => InterventionSpec::ablation(TokenSet::new(first..n_vis), vec![-1.0; 16]),
            1 => InterventionSpec::injection(TokenSet::new([first]), vec![3, 4]),
            2 => knockout((0..=first).collect(), input.len() - 1, lo % 3, 3),
            _ => InterventionSpec::None,
        };
        let cache = m.forward_cached(&input).unwrap();
        let resumed = m.forward_resumed(&cache, &input, &spec).unwrap();
        let full = m.forward(&input, Some(&spec)).unwrap();
        prop_assert!(same_trace(&resumed, &full));
    }
}

#[test]
fn empty_source_knockout_is_bitwise_noop() {
    for seed in 0..20 {
        let m = model(seed, 3);
        let input = random_input(&m, &mut rng(seed), 6, 3);
        let base = m.forward(&input, None).unwrap();
        let noop = m.forward(&input, Some(&knockout(vec![], 8, 0, 3))).unwrap();
        assert!(same_trace(&base, &noop));
        assert!(noop.knocked_out.is_empty());
    }
}

#[test]
fn single_layer_knockout_changes_only_later_boundaries() {
    let m = model(5, 4);
    let input = random_input(&m, &mut rng(5), 8, 2);
    let t = input.len() - 1;
    let base = m.forward(&input, None).unwrap();
    for l in 0..4 {
        let hit = m
            .forward(&input, Some(&knockout((0..8).collect(), t, l, l + 1)))
            .unwrap();
        for b in 0..=l {
            assert!(
                bits_eq(base.hidden_layer(b), hit.hidden_layer(b)),
                "boundary {b} before layer {l}"
            );
        }
        assert!(
            !bits_eq(base.hidden(l + 1, t), hit.hidden(l + 1, t)),
            "layer {l} knockout had no effect"
        );
    }
}

#[test]
fn all_layers_window_equals_union_of_five_windows() {
    let m = Model::build(common::config(9, 7, 16, 24, 40)).unwrap();
    let windows = partition_layers(7).unwrap();
    let input = random_input(&m, &mut rng(9), 10, 3);
    let t = input.len() - 1;
    let sources = TokenSet::new([1, 3, 4, 8]);
    let all = build_knockout(&windows, Window::All, sources.clone(), t);
    let union = InterventionSpec::union_knockouts(
        Window::ALL_COLUMNS[..5]
            .iter()
            .map(|&w| build_knockout(&windows, w, sources.clone(), t)),
    )
    .unwrap();
    let a = m.forward(&input, Some(&all)).unwrap();
    let b = m.forward(&input, Some(&union)).unwrap();
    assert!(same_trace(&a, &b));
    assert_eq!(a.knocked_out, b.knocked_out);
}
