//! Acceptance gate: one PASS/FAIL line per release criterion.
//!
//! Runs without the libtest harness so the lines come out in order and
//! unbuffered; the process exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stc_core::config::{EpisodeSource, ExperimentConfig, MaskCondition, ModelSource};
use stc_core::geometry::{bbox_to_tokens, detect_registers, dilate};
use stc_core::intervention::KnockoutMask;
use stc_core::lens::{self, LinearHead};
use stc_core::math;
use stc_core::model::planted::PlantedConfig;
use stc_core::report::ResultsBundle;
use stc_core::runner::{circuit1, circuit3, run_and_emit, Circuit, Session};
use stc_core::{
    BBox, EmbeddingSet, ForwardTrace, FrameGrid, InputSequence, InterventionSpec, LayerRange,
    Model, ModelConfig, TokenId, TokenSet, Window,
};

// ---------------------------------------------------------------------------
// Pinned thresholds
// ---------------------------------------------------------------------------

const CAUSAL_CASES: u64 = 150;
const CAUSAL_BUDGET: Duration = Duration::from_secs(60);
const KNOCKOUT_CASES: u64 = 150;
const LENS_MODELS: u64 = 20;
const LENS_INPUTS: u64 = 10;
const METRIC_EPISODES: usize = 50;
const METRIC_TOLERANCE: f64 = 1e-6;
const BBOX_CASES: usize = 1000;
const RANDOM_TO_OBJECT_RATIO: f64 = 2.0;
const CAMPAIGN_BUDGET: Duration = Duration::from_secs(300);

type Verdict = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Verdict + 'a>);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn bits_eq(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Small random model with a random input of `n_visual` + `n_text` tokens.
fn random_case(r: &mut ChaCha8Rng, seed: u64) -> (Model, InputSequence) {
    let d_model = 8 * r.random_range(1..=3usize);
    let cfg = ModelConfig {
        n_layers: r.random_range(1..=4),
        n_heads: 2,
        d_model,
        vocab_size: r.random_range(8..=40),
        d_ff: 2 * d_model,
        seed,
        max_positions: 40,
    };
    let model = Model::build(cfg).expect("valid config");
    let n_visual = r.random_range(2..=16);
    let n_text = r.random_range(0..=8);
    let data = (0..n_visual * d_model)
        .map(|_| r.random_range(-2.0f32..2.0))
        .collect();
    let text = (0..n_text)
        .map(|_| r.random_range(0..model.vocab_size() as TokenId))
        .collect();
    let input = InputSequence::new(EmbeddingSet::new(d_model, data).expect("rows"), text);
    (model, input)
}

fn random_subset(r: &mut ChaCha8Rng, lo: usize, hi: usize) -> TokenSet {
    let n = hi - lo;
    let k = r.random_range(1..=n);
    TokenSet::new(index::sample(r, n, k).into_iter().map(|i| lo + i))
}

/// First `(layer, position)` whose hidden state differs, over the given positions.
fn first_diff(
    a: &ForwardTrace,
    b: &ForwardTrace,
    layers: usize,
    positions: impl Iterator<Item = usize> + Clone,
) -> Option<(usize, usize)> {
    for l in 0..layers {
        for p in positions.clone() {
            if !bits_eq(a.hidden(l, p), b.hidden(l, p)) {
                return Some((l, p));
            }
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

fn causal_locality() -> Verdict {
    let start = Instant::now();
    let mut kinds = [0usize; 3];
    for case in 0..CAUSAL_CASES {
        let mut r = rng(0xCA05 ^ case);
        let (model, input) = random_case(&mut r, case);
        let n_visual = input.visual.len();
        let len = input.len();
        let p = r.random_range(1..len);
        // Ablation and injection can only touch the visual prefix; the
        // knockout targets any position at or after p.
        let kind = if p < n_visual { (case % 3) as usize } else { 2 };
        let spec = match kind {
            0 => {
                let repl = (0..model.d_model())
                    .map(|_| r.random_range(-2.0f32..2.0))
                    .collect();
                InterventionSpec::ablation(random_subset(&mut r, p, n_visual), repl)
            }
            1 => {
                let label = vec![r.random_range(0..model.vocab_size() as TokenId)];
                InterventionSpec::injection(random_subset(&mut r, p, n_visual), label)
            }
            _ => {
                let target = r.random_range(p..len);
                let start = r.random_range(0..model.n_layers());
                let end = r.random_range(start + 1..=model.n_layers());
                InterventionSpec::Knockout {
                    masks: vec![KnockoutMask {
                        sources: random_subset(&mut r, 0, target + 1),
                        target,
                        layers: LayerRange::new(start, end),
                    }],
                }
            }
        };
        kinds[kind] += 1;
        let base = model.forward(&input, None).map_err(err)?;
        let hit = model.forward(&input, Some(&spec)).map_err(err)?;
        for q in 0..p {
            if !bits_eq(base.logits(q), hit.logits(q)) {
                return Err(format!(
                    "case {case}: {} changed logits at position {q} < p = {p}",
                    spec.kind_name()
                ));
            }
        }
        if let Some((l, q)) = first_diff(&base, &hit, model.n_layers() + 1, 0..p) {
            return Err(format!(
                "case {case}: hidden state changed at layer {l}, position {q} < p = {p}"
            ));
        }
    }
    let elapsed = start.elapsed();
    if elapsed > CAUSAL_BUDGET {
        return Err(format!("took {elapsed:.1?}, budget {CAUSAL_BUDGET:?}"));
    }
    Ok(format!(
        "{CAUSAL_CASES} triples ({} ablation, {} injection, {} knockout), bitwise, {elapsed:.1?}",
        kinds[0], kinds[1], kinds[2]
    ))
}

fn knockout_locality() -> Verdict {
    let mut at_answer = 0;
    for case in 0..KNOCKOUT_CASES {
        let mut r = rng(0x4B0 ^ case);
        let (model, input) = random_case(&mut r, 1000 + case);
        let len = input.len();
        let n_layers = model.n_layers();
        // Every other case targets the final (answer) position, the only
        // position whose knockout cannot reach any other position.
        let target = if case % 2 == 0 {
            len - 1
        } else {
            r.random_range(0..len)
        };
        let a = r.random_range(0..n_layers);
        let b = r.random_range(a + 1..=n_layers);
        let sources = random_subset(&mut r, 0, target + 1);
        let mask = |sources: TokenSet| InterventionSpec::Knockout {
            masks: vec![KnockoutMask {
                sources,
                target,
                layers: LayerRange::new(a, b),
            }],
        };

        let base = model.forward(&input, None).map_err(err)?;
        let hit = model.forward(&input, Some(&mask(sources))).map_err(err)?;
        if let Some((l, p)) = first_diff(&base, &hit, a + 1, 0..len) {
            return Err(format!(
                "case {case}: window [{a},{b}) changed layer {l} <= a at position {p}"
            ));
        }
        let others = (0..len).filter(|&p| p < target || (target == len - 1 && p != target));
        if let Some((l, p)) = first_diff(&base, &hit, n_layers + 1, others) {
            return Err(format!(
                "case {case}: target {target} knockout changed position {p} at layer {l}"
            ));
        }
        if target == len - 1 {
            at_answer += 1;
        }

        let noop = model
            .forward(&input, Some(&mask(TokenSet::empty())))
            .map_err(err)?;
        if let Some((l, p)) = first_diff(&base, &noop, n_layers + 1, 0..len) {
            return Err(format!(
                "case {case}: empty-source knockout changed layer {l}, position {p}"
            ));
        }
        if !(0..len).all(|p| bits_eq(base.logits(p), noop.logits(p))) {
            return Err(format!("case {case}: empty-source knockout changed logits"));
        }
    }
    Ok(format!(
        "{KNOCKOUT_CASES} cases bitwise: layers <= a everywhere, all layers at positions != t \
         ({at_answer} answer-position targets; positions < t for interior targets), empty S no-op"
    ))
}

fn lens_identity() -> Verdict {
    let mut checked = 0usize;
    for m in 0..LENS_MODELS {
        let model = Model::build(ModelConfig {
            n_layers: 1 + (m as usize % 4),
            n_heads: 2,
            d_model: 16,
            vocab_size: 24 + 4 * m as usize,
            d_ff: 32,
            seed: 0x1E45 + m,
            max_positions: 32,
        })
        .map_err(err)?;
        let head = LinearHead::from_model(&model);
        for i in 0..LENS_INPUTS {
            let mut r = rng(m * 100 + i);
            let n_visual = r.random_range(1..=12);
            let data = (0..n_visual * 16)
                .map(|_| r.random_range(-2.0f32..2.0))
                .collect();
            let text = (0..r.random_range(0..=6))
                .map(|_| r.random_range(0..model.vocab_size() as TokenId))
                .collect();
            let input = InputSequence::new(EmbeddingSet::new(16, data).map_err(err)?, text);
            let fwd = model.forward(&input, None).map_err(err)?;
            let all = TokenSet::new(0..input.len());
            let rec = lens::trace_states(&head, &fwd, &all, 1, None).map_err(err)?;
            for p in 0..input.len() {
                let lens_top = rec.cell(model.n_layers(), p).expect("cell").top1();
                let native = math::argmax(fwd.logits(p)) as TokenId;
                if lens_top != native {
                    return Err(format!(
                        "model {m}, input {i}, position {p}: lens {lens_top} vs native {native}"
                    ));
                }
                checked += 1;
            }
        }
    }
    Ok(format!(
        "{LENS_MODELS} models x {LENS_INPUTS} inputs, {checked} positions, 0 mismatches"
    ))
}

/// Final norm, head and softmax in f64, straight from the weights.
fn brute_force_readout(model: &Model, h: &[f32], correct: usize) -> (usize, f64) {
    let d = h.len() as f64;
    let ms = h.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>() / d;
    let inv = 1.0 / (ms + f64::from(math::NORM_EPS)).sqrt();
    let normed: Vec<f64> = h
        .iter()
        .zip(&model.final_norm)
        .map(|(&v, &g)| f64::from(v) * inv * f64::from(g))
        .collect();
    let logits: Vec<f64> = (0..model.vocab_size())
        .map(|t| {
            let row = model.head.row(t);
            row.iter()
                .zip(&normed)
                .map(|(&w, &x)| f64::from(w) * x)
                .sum::<f64>()
                + f64::from(model.head_bias[t])
        })
        .collect();
    let mut best = 0;
    for (t, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = t;
        }
    }
    let max = logits[best];
    let z: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
    (best, (logits[correct] - max).exp() / z)
}

fn metric_oracle() -> Verdict {
    let grid = FrameGrid::new(2, 8, 8).map_err(err)?;
    let planted = PlantedConfig {
        n_visual: grid.len(),
        ..PlantedConfig::default()
    };
    let cfg = ExperimentConfig::from_json(&format!(
        r#"{{"schema_version": 1, "seed": 11,
            "model": {{"planted": {}}},
            "grid": {{"frames": 2, "rows": 8, "cols": 8}},
            "episodes": {{"generate": {{"count": {METRIC_EPISODES}}}}}}}"#,
        serde_json::to_string(&planted).map_err(err)?
    ))
    .map_err(err)?;
    let model = cfg.build_model().map_err(err)?;
    let episodes = cfg.load_episodes(&model).map_err(err)?;
    let mut worst_cr = 0.0f64;
    let mut worst_ap = 0.0f64;
    let mut cells = 0usize;
    for ep in &episodes {
        let input = InputSequence::new(ep.visual.clone(), Vec::new());
        let positions = ep.grid.all_tokens();
        let label = ep.label_token();
        let rec = lens::trace(&model, &input, &positions, 5, Some(label)).map_err(err)?;
        let fwd = model.forward(&input, None).map_err(err)?;
        for layer in 0..=model.n_layers() {
            let cr = lens::correspondence_rate(&rec, layer, label, &positions).map_err(err)?;
            let ap = lens::answer_probability(&rec, layer, label, &positions).map_err(err)?;
            let (mut hits, mut mass) = (0usize, 0.0f64);
            for p in positions.iter() {
                let (top, prob) = brute_force_readout(&model, fwd.hidden(layer, p), label as usize);
                hits += usize::from(top == label as usize);
                mass += prob;
            }
            let n = positions.len() as f64;
            worst_cr = worst_cr.max((cr - hits as f64 / n).abs());
            worst_ap = worst_ap.max((ap - mass / n).abs());
            cells += 1;
        }
    }
    if worst_cr > METRIC_TOLERANCE || worst_ap > METRIC_TOLERANCE {
        return Err(format!(
            "max |dC_R| = {worst_cr:.3e}, max |dA_P| = {worst_ap:.3e} > {METRIC_TOLERANCE:e}"
        ));
    }
    Ok(format!(
        "{} episodes x {} layer boundaries ({cells} series points): max |dC_R| = {worst_cr:.1e}, max |dA_P| = {worst_ap:.1e} <= {METRIC_TOLERANCE:e}",
        episodes.len(),
        model.n_layers() + 1
    ))
}

fn geometry_oracles() -> Verdict {
    // Dilation composes on every singleton of a 5x5 grid.
    let grid = FrameGrid::new(1, 5, 5).map_err(err)?;
    for i in 0..grid.len() {
        let s = TokenSet::new([i]);
        if dilate(&grid, &dilate(&grid, &s, 1), 1) != dilate(&grid, &s, 2) {
            return Err(format!(
                "dilate(dilate({{{i}}}, 1), 1) != dilate({{{i}}}, 2)"
            ));
        }
    }

    // Boxes against a direct cell enumeration.
    let mut r = rng(0xB0C5);
    for case in 0..BBOX_CASES {
        let g = FrameGrid::new(
            r.random_range(1..=3),
            r.random_range(1..=16),
            r.random_range(1..=16),
        )
        .map_err(err)?;
        let (a, b) = (r.random_range(0.0..1.0), r.random_range(0.0..1.0));
        let (c, d) = (r.random_range(0.0..1.0), r.random_range(0.0..1.0));
        if a == b || c == d {
            continue;
        }
        let frame = r.random_range(0..g.frames);
        let bbox = BBox::new(
            frame,
            f64::min(a, b),
            f64::min(c, d),
            f64::max(a, b),
            f64::max(c, d),
        )
        .map_err(err)?;
        let mut expected = BTreeSet::new();
        for row in 0..g.rows {
            for col in 0..g.cols {
                let (cx0, cx1) = (col as f64 / g.cols as f64, (col + 1) as f64 / g.cols as f64);
                let (cy0, cy1) = (row as f64 / g.rows as f64, (row + 1) as f64 / g.rows as f64);
                if bbox.x0 < cx1 && cx0 < bbox.x1 && bbox.y0 < cy1 && cy0 < bbox.y1 {
                    expected.insert(frame * g.rows * g.cols + row * g.cols + col);
                }
            }
        }
        let got: BTreeSet<usize> = bbox_to_tokens(&g, &bbox).map_err(err)?.iter().collect();
        if got != expected {
            return Err(format!("box case {case}: {bbox:?} on {g:?}"));
        }
    }

    // Registers: 15 unit-norm tokens and one of norm 10 in a 16-token frame.
    let norms: Vec<f64> = (0..16).map(|i| if i == 9 { 10.0 } else { 1.0 }).collect();
    let mu = norms.iter().sum::<f64>() / 16.0;
    let sigma = (norms.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 16.0).sqrt();
    if mu != 1.5625 || (sigma - 2.179).abs() > 5e-4 {
        return Err(format!("outlier pattern gives mu = {mu}, sigma = {sigma}"));
    }
    let rows: Vec<Vec<f32>> = norms.iter().map(|&n| vec![0.0, n as f32, 0.0]).collect();
    let found = detect_registers(
        &EmbeddingSet::from_rows(3, &rows).map_err(err)?,
        &FrameGrid::new(1, 4, 4).map_err(err)?,
    )
    .map_err(err)?;
    if found != TokenSet::new([9]) {
        return Err(format!("outlier frame flagged {found:?}, expected [9]"));
    }
    // Further crafted frames checked against the same arithmetic.
    let mut r = rng(0x4E6);
    for case in 0..200 {
        let g = FrameGrid::new(r.random_range(1..=3), 3, 3).map_err(err)?;
        let norms: Vec<f32> = (0..g.len())
            .map(|_| {
                if r.random_bool(0.15) {
                    r.random_range(4.0..12.0)
                } else {
                    r.random_range(0.5..1.5)
                }
            })
            .collect();
        let rows: Vec<Vec<f32>> = norms.iter().map(|&n| vec![n, 0.0]).collect();
        let mut expected = Vec::new();
        for (f, frame) in norms.chunks(9).enumerate() {
            let mu = frame.iter().map(|&v| f64::from(v)).sum::<f64>() / 9.0;
            let var = frame
                .iter()
                .map(|&v| (f64::from(v) - mu).powi(2))
                .sum::<f64>()
                / 9.0;
            expected.extend(
                (0..9)
                    .filter(|&i| f64::from(frame[i]) > mu + 2.0 * var.sqrt())
                    .map(|i| f * 9 + i),
            );
        }
        let found =
            detect_registers(&EmbeddingSet::from_rows(2, &rows).map_err(err)?, &g).map_err(err)?;
        if found != TokenSet::new(expected) {
            return Err(format!(
                "crafted register frame {case} disagrees with mu + 2 sigma"
            ));
        }
    }
    Ok(format!(
        "25 singletons, {BBOX_CASES} boxes, outlier case mu = {mu}, sigma = {sigma:.4} flags token 9, 200 crafted frames"
    ))
}

fn object_ablation_direction() -> Verdict {
    let mut cfg = ExperimentConfig::load(config_dir().join("planted.json")).map_err(err)?;
    // Two frames keep the gate fast; the planted circuit is wired per position.
    cfg.grid = FrameGrid::new(2, 8, 8).map_err(err)?;
    if let ModelSource::Planted(p) = &mut cfg.model {
        p.n_visual = cfg.grid.len();
    }
    // Random rows need at least twice as many tokens as the object rows.
    cfg.circuit1.random_budgets = Some(vec![8, 24, 64, 80, 96]);
    let session = Session::prepare(&cfg).map_err(err)?;
    let bundle = session.run(Circuit::One).map_err(err)?;
    let ablation = bundle
        .grid(circuit1::ABLATION_GRID)
        .ok_or("missing ablation grid")?;
    let injection = bundle
        .grid(circuit1::INJECTION_GRID)
        .ok_or("missing injection grid")?;

    let object = ablation.row("Object").ok_or("missing Object row")?;
    let object_size: f64 = object
        .detail
        .as_deref()
        .unwrap_or("")
        .parse()
        .map_err(err)?;
    let random: Vec<_> = ablation
        .rows
        .iter()
        .filter(|r| r.label == "Random")
        .filter(|r| {
            r.detail
                .as_deref()
                .and_then(|d| d.parse::<f64>().ok())
                .unwrap_or(0.0)
                >= RANDOM_TO_OBJECT_RATIO * object_size
        })
        .collect();
    if random.is_empty() {
        return Err(format!(
            "no random row with >= {RANDOM_TO_OBJECT_RATIO}x the {object_size:.1} object tokens"
        ));
    }
    let mut summary = Vec::new();
    for (col, name) in ablation.columns.iter().enumerate() {
        let obj = object.cells[col]
            .value
            .ok_or(format!("{name}: object drop undefined"))?;
        for row in &random {
            let rnd = row.cells[col]
                .value
                .ok_or(format!("{name}: random drop undefined"))?;
            if obj <= rnd {
                return Err(format!(
                    "{name}: object drop {obj:.1} not above random({}) drop {rnd:.1}",
                    row.detail.as_deref().unwrap_or("?")
                ));
            }
        }
        let max_rnd = random
            .iter()
            .filter_map(|r| r.cells[col].value)
            .fold(f64::MIN, f64::max);
        summary.push(format!("{name} object {obj:.1} vs random {max_rnd:.1}"));
    }
    // A non-positive drop means accuracy at or above the unablated baseline.
    for row in &injection.rows {
        for (col, name) in injection
            .columns
            .iter()
            .enumerate()
            .filter(|(_, n)| n.ends_with("injected"))
        {
            let drop = row.cells[col]
                .value
                .ok_or(format!("{} {name}: undefined", row.label))?;
            if drop > 0.0 {
                return Err(format!(
                    "{} {name}: accuracy {drop:.1}% below baseline",
                    row.label
                ));
            }
        }
    }
    Ok(format!(
        "{} curated episodes, {object_size:.1} object tokens vs random >= {:.0}: {}; injection drop <= 0 on {} rows",
        session.episodes.len(),
        RANDOM_TO_OBJECT_RATIO * object_size,
        summary.join(", "),
        injection.rows.len()
    ))
}

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn campaign(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, String> {
    let mut written = Vec::new();
    for c in Circuit::ALL {
        written.extend(run_and_emit(cfg, c, out).map_err(err)?);
    }
    Ok(written)
}

fn determinism(first: &Path) -> Verdict {
    let cfg = ExperimentConfig::load(config_dir().join("toy_random.json")).map_err(err)?;
    let m = cfg.model_config().map_err(err)?;
    let start = Instant::now();
    let files = campaign(&cfg, first)?;
    let elapsed = start.elapsed();

    let second = tempfile::tempdir().map_err(err)?;
    campaign(&cfg, second.path())?;
    for f in &files {
        let name = f.file_name().ok_or("unnamed report")?;
        let a = fs::read(f).map_err(err)?;
        let b = fs::read(second.path().join(name)).map_err(err)?;
        if a != b {
            return Err(format!("{} differs between runs", name.to_string_lossy()));
        }
    }
    if elapsed > CAMPAIGN_BUDGET {
        return Err(format!(
            "campaign took {elapsed:.1?}, budget {CAMPAIGN_BUDGET:?}"
        ));
    }
    Ok(format!(
        "{} report files byte-identical; campaign ({} layers, d_model {}, vocab {}, {} episodes) in {elapsed:.1?} < {CAMPAIGN_BUDGET:?}",
        files.len(),
        m.n_layers,
        m.d_model,
        m.vocab_size,
        match cfg.episodes {
            EpisodeSource::Generate { count } => count.to_string(),
            _ => "?".into(),
        }
    ))
}

fn grid_structure(dir: &Path) -> Verdict {
    let c3 = ResultsBundle::load(dir.join("circuit3_results.json")).map_err(err)?;
    let windows: Vec<&str> = Window::ALL_COLUMNS.iter().map(|w| w.title()).collect();
    let conditions: Vec<String> = MaskCondition::TABLE_ROWS
        .iter()
        .map(|c| c.label())
        .collect();
    if windows
        != [
            "Early",
            "Early-Mid",
            "Mid",
            "Mid-Late",
            "Late",
            "All Layers",
        ]
    {
        return Err(format!("window titles {windows:?}"));
    }
    if conditions != ["O", "O+1", "O+2", "V-O", "V-(O+1)", "V-(O+2)"] {
        return Err(format!("condition labels {conditions:?}"));
    }
    for name in [circuit3::ACCURACY_GRID, circuit3::PROBABILITY_DROP_GRID] {
        let g = c3.grid(name).ok_or(format!("missing {name}"))?;
        let rows: Vec<&str> = g.rows.iter().map(|r| r.label.as_str()).collect();
        if g.shape() != (6, 6) || rows != conditions || g.columns != windows {
            return Err(format!(
                "{name}: {:?} rows {rows:?} columns {:?}",
                g.shape(),
                g.columns
            ));
        }
        if g.rows
            .iter()
            .flat_map(|r| &r.cells)
            .any(|c| c.value.is_none())
        {
            return Err(format!("{name}: empty cell"));
        }
    }

    let c1 = ResultsBundle::load(dir.join("circuit1_results.json")).map_err(err)?;
    let g = c1
        .grid(circuit1::ABLATION_GRID)
        .ok_or("missing circuit1 grid")?;
    let rows: Vec<&str> = g.rows.iter().map(|r| r.label.as_str()).collect();
    let expected = [
        "Baseline", "Register", "Object", "Object+1", "Object+2", "Random", "Random", "Random",
        "Random", "Random",
    ];
    if rows != expected || g.columns != ["Open", "Close"] {
        return Err(format!("circuit1 rows {rows:?} columns {:?}", g.columns));
    }
    let budgets: Vec<usize> = g.rows[5..]
        .iter()
        .map(|r| r.detail.as_deref().unwrap_or("").parse().map_err(err))
        .collect::<Result<_, _>>()?;
    if budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(format!("random budgets not increasing: {budgets:?}"));
    }
    Ok(format!(
        "circuit3 6x6 {conditions:?} x {windows:?}; circuit1 Baseline/Register/Object x3/Random x5 {budgets:?} x [Open, Close]"
    ))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    // Under `cargo test` extra harness flags may be passed; `--list` must
    // print nothing so test discovery tools do not hang on the gate.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let campaign_dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<Criterion> = vec![
        ("causal-locality", Box::new(causal_locality)),
        ("knockout-locality", Box::new(knockout_locality)),
        ("lens-identity", Box::new(lens_identity)),
        ("metric-oracle", Box::new(metric_oracle)),
        ("geometry-oracles", Box::new(geometry_oracles)),
        (
            "object-ablation-direction",
            Box::new(object_ablation_direction),
        ),
        ("determinism", Box::new(|| determinism(campaign_dir.path()))),
        (
            "grid-structure",
            Box::new(|| grid_structure(campaign_dir.path())),
        ),
    ];
    // Positional arguments select criteria by substring, like test filters.
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let verdict = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()));
        match verdict {
            Ok(detail) => println!("PASS {name}: {detail} [{:.1?}]", start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{:.1?}]", start.elapsed());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
