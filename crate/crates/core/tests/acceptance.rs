//! Acceptance suite: ten verifiable criteria covering advantage
//! normalization, ratio segmentation, gradient correctness, clipping
//! semantics, reward-oracle equivalence, the format table, learning
//! dynamics, dual-objective ablations, and bit-exact reproducibility.
//!
//! Each criterion prints one `criterion N (...): PASS` line, visible with
//! `cargo test --test acceptance -- --nocapture`. Criteria 7-10 share five
//! full 1000-iteration training runs and ten 300-iteration ablation runs
//! computed once; expect the whole suite to take roughly 20-25 minutes on
//! one commodity core.

use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use tempfile::TempDir;

use dogrpo_core::grpo::{
    clipped_term, clipped_term_dratio, compute_advantages, dual_objective, dual_objective_grad,
    token_ratios, GroupAdvantages, HyperParams, StepReport,
};
use dogrpo_core::harness::{evaluate, train, EvalReport, RunConfig};
use dogrpo_core::policy::{
    derive_rng, greedy_rollout, logprob_eval, sample_group, GenConfig, PolicyBundle, PolicyConfig,
    PolicyParams,
};
use dogrpo_core::renderer::GridDims;
use dogrpo_core::rewards::{format_reward, score_rollout, RewardBreakdown};
use dogrpo_core::toyscene::{
    generate_prompt, surface_for, ObjectSpec, Prompt, RelationSpec, SceneSpec, DIFFICULTIES,
};
use dogrpo_core::vocab::{
    cell_content, count_from_token, parse_reasoning, phase_mask, Color, Phase, Relation, Rollout,
    Shape, TokenId, A, AND, DESC_CLOSE, DESC_OPEN, EMPTY_CELL, END_TEXT, GREEN, RED,
    THOUGHT_CLOSE, THOUGHT_OPEN,
};

fn pass(n: usize, name: &str, detail: String) {
    println!("criterion {n} ({name}): PASS — {detail}");
}

// ---------------------------------------------------------------------------
// Criterion 1: advantage identity on 1000 random groups.

#[test]
fn criterion_01_advantage_identity() {
    let start = Instant::now();
    let mut rng = derive_rng(1001, "groups", 0);
    let sizes = [2usize, 4, 8];
    let (mut max_mean, mut max_std_err) = (0.0f64, 0.0f64);
    let mut degenerate_groups = 0usize;

    for i in 0..1000usize {
        let g = sizes[i % sizes.len()];
        let make_degenerate = i % 10 == 9;
        let base: (f64, f64, f64) = (
            rng.gen_range(0.0..2.0),
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..3.0),
        );
        let bs: Vec<RewardBreakdown> = (0..g)
            .map(|_| {
                let (r_sa, r_sp, r_ha) = if make_degenerate {
                    base
                } else {
                    (
                        rng.gen_range(0.0..2.0),
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(0.0..3.0),
                    )
                };
                RewardBreakdown {
                    r_format: 0.0,
                    r_prop: 0.0,
                    r_sa,
                    r_sp,
                    r_vqa: 0.0,
                    r_det: 0.0,
                    r_align: 0.0,
                    r_ha,
                }
            })
            .collect();
        let adv = compute_advantages(&bs, 1e-6);

        let raw_text: Vec<f64> = bs.iter().map(|b| b.r_sa + b.r_ha).collect();
        let raw_img: Vec<f64> = bs.iter().map(|b| b.r_sp + b.r_ha).collect();
        for (raw, a) in [(&raw_text, &adv.a_text), (&raw_img, &adv.a_img)] {
            let n = raw.len() as f64;
            let mean = raw.iter().sum::<f64>() / n;
            let raw_std =
                (raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
            if raw_std >= 1e-6 {
                let a_mean = a.iter().sum::<f64>() / n;
                let a_std = (a
                    .iter()
                    .map(|v| (v - a_mean) * (v - a_mean))
                    .sum::<f64>()
                    / n)
                    .sqrt();
                assert!(a_mean.abs() <= 1e-9, "group {i}: mean {a_mean}");
                assert!((a_std - 1.0).abs() <= 1e-9, "group {i}: std {a_std}");
                max_mean = max_mean.max(a_mean.abs());
                max_std_err = max_std_err.max((a_std - 1.0).abs());
            } else {
                assert!(a.iter().all(|&v| v == 0.0), "group {i}: degenerate not zero");
                degenerate_groups += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}, budget 1 s");
    pass(
        1,
        "advantage identity",
        format!(
            "1000 groups (G in {{2,4,8}}), max |mean| {max_mean:.2e}, max |std-1| \
             {max_std_err:.2e}, {degenerate_groups} degenerate vectors all-zero, {elapsed:?}"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: segmented-ratio conditioning boundary, 200 random cases.

fn other_text_token(t: TokenId) -> TokenId {
    if t == RED {
        GREEN
    } else {
        RED
    }
}

#[test]
fn criterion_02_ratio_segmentation() {
    let start = Instant::now();
    let gen = GenConfig {
        max_text_len: 8,
        grid: GridDims { rows: 2, cols: 2 },
    };
    let image_ids = phase_mask(Phase::Image);
    let mut dependence_cases = 0usize;

    for case in 0..200u64 {
        let mut rng = derive_rng(1002, "case", case);
        let mut bundle =
            PolicyBundle::new(PolicyParams::init(PolicyConfig::default(), &mut rng));
        for v in bundle.current.data.iter_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
        let prompt = generate_prompt(rng.gen(), DIFFICULTIES[(case % 3) as usize]);
        let rollout = sample_group(&bundle, &prompt, 1, rng.gen(), &gen).remove(0);
        let (base_text, base_img) = token_ratios(&bundle, &rollout, &gen);

        // Perturbing the image tokens must leave every text-branch ratio
        // bitwise unchanged: text token j conditions only on (p, s_{<j}).
        let mut img_mod = rollout.clone();
        for t in img_mod.image_seq.iter_mut() {
            *t = image_ids[rng.gen_range(0..image_ids.len())];
        }
        if img_mod.image_seq == rollout.image_seq {
            img_mod.image_seq[0] = if rollout.image_seq[0] == EMPTY_CELL {
                image_ids[1]
            } else {
                EMPTY_CELL
            };
        }
        let (text_after, _) = token_ratios(&bundle, &img_mod, &gen);
        assert_eq!(base_text, text_after, "case {case}: text ratios moved with the image");

        // Perturbing text tokens at positions >= j must leave ratios at
        // positions < j bitwise unchanged.
        if rollout.text_seq.len() >= 2 {
            let j = rng.gen_range(1..rollout.text_seq.len());
            let mut txt_mod = rollout.clone();
            for p in j..txt_mod.text_seq.len() {
                txt_mod.text_seq[p] = other_text_token(txt_mod.text_seq[p]);
            }
            let (text_suffix, _) = token_ratios(&bundle, &txt_mod, &gen);
            assert_eq!(
                &base_text[..j],
                &text_suffix[..j],
                "case {case}: prefix ratios moved with the suffix"
            );
        }

        // Image-branch ratios condition on all of the text: changing the
        // final text token (inside the context window of the first image
        // position) must move the first image ratio.
        let mut last_mod = rollout.clone();
        let last = last_mod.text_seq.len() - 1;
        last_mod.text_seq[last] = other_text_token(last_mod.text_seq[last]);
        let (_, img_after) = token_ratios(&bundle, &last_mod, &gen);
        assert_ne!(
            base_img[0], img_after[0],
            "case {case}: image ratio ignored the text"
        );
        dependence_cases += 1;
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, budget 5 s");
    pass(
        2,
        "ratio conditioning boundary",
        format!("200 cases, zero violations, {dependence_cases} image-dependence checks, {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: analytic gradient vs central finite differences.

#[test]
fn criterion_03_gradient_correctness() {
    let start = Instant::now();
    let config = PolicyConfig {
        vocab_size: dogrpo_core::VOCAB_SIZE,
        embed_dim: 8,
        hidden_dim: 16,
        context_len: 6,
    };
    let gen = GenConfig {
        max_text_len: 4,
        grid: GridDims { rows: 2, cols: 1 },
    };
    let hp = HyperParams::default();
    let step = 1e-5;
    let mut max_rel = 0.0f64;

    for inst in 0..50u64 {
        let mut rng = derive_rng(1003, "instance", inst);
        let mut bundle = PolicyBundle::new(PolicyParams::init(config, &mut rng));
        let prompt = generate_prompt(rng.gen(), DIFFICULTIES[(inst % 3) as usize]);
        let group = sample_group(&bundle, &prompt, 3, rng.gen(), &gen);
        // Move the current policy off the sampling snapshot; small steps
        // keep every ratio well inside the clip range (no min kinks).
        for v in bundle.current.data.iter_mut() {
            *v += rng.gen_range(-0.02..0.02);
        }
        let breakdowns: Vec<RewardBreakdown> =
            group.iter().map(|r| score_rollout(r, gen.grid)).collect();
        let adv = compute_advantages(&breakdowns, 1e-6);
        let (_, grad) = dual_objective_grad(&bundle, &group, &adv, &hp, &gen);

        for i in 0..config.param_count() {
            let mut plus = bundle.clone();
            plus.current.data[i] += step;
            let mut minus = bundle.clone();
            minus.current.data[i] -= step;
            let fd = (dual_objective(&plus, &group, &adv, &hp, &gen)
                - dual_objective(&minus, &group, &adv, &hp, &gen))
                / (2.0 * step);
            let denom = grad[i].abs().max(fd.abs()).max(1e-3);
            max_rel = max_rel.max((grad[i] - fd).abs() / denom);
        }
    }
    let elapsed = start.elapsed();
    assert!(max_rel < 1e-4, "max relative error {max_rel}");
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}, budget 60 s");
    pass(
        3,
        "gradient correctness",
        format!("50 instances (E=8, H=16), max relative error {max_rel:.2e}, {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: clipping semantics on constructed single-token cases.

#[test]
fn criterion_04_clipping_semantics() {
    let eps = 0.2;
    // Exact min/clip outcomes for all four (ratio side, advantage sign)
    // quadrants of the per-token term.
    assert_eq!(clipped_term(1.5, 2.0, eps), 1.2 * 2.0);
    assert_eq!(clipped_term(0.5, 2.0, eps), 0.5 * 2.0);
    assert_eq!(clipped_term(0.5, -2.0, eps), 0.8 * -2.0);
    assert_eq!(clipped_term(1.5, -2.0, eps), 1.5 * -2.0);
    assert_eq!(clipped_term_dratio(1.5, 2.0, eps), 0.0);
    assert_eq!(clipped_term_dratio(0.5, 2.0, eps), 2.0);
    assert_eq!(clipped_term_dratio(0.5, -2.0, eps), 0.0);
    assert_eq!(clipped_term_dratio(1.5, -2.0, eps), -2.0);

    // End-to-end: a rollout with one text and one image token, old
    // log-probs fabricated so the image ratio is exactly controlled.
    let gen = GenConfig {
        max_text_len: 1,
        grid: GridDims { rows: 1, cols: 1 },
    };
    let mut rng = derive_rng(1004, "init", 0);
    let bundle = PolicyBundle::new(PolicyParams::init(PolicyConfig::default(), &mut rng));
    let prompt = generate_prompt(1, DIFFICULTIES[0]);
    let hp = HyperParams {
        kl_beta: 0.0,
        ..HyperParams::default()
    };
    let base = greedy_rollout(&bundle.current, &prompt, &gen);
    let (lt, li) = logprob_eval(&bundle.current, &base, &gen);
    let make = |ratio: f64| -> Rollout {
        let mut r = base.clone();
        r.logp_old_text = vec![lt[0]]; // text ratio exactly 1
        r.logp_old_img = vec![li[0] - ratio.ln()];
        r
    };

    // (ratio, advantage, expected objective, surrogate gradient saturated?)
    let cases = [
        (1.5, 1.0, 1.2, true),   // out of range, positive: clipped branch
        (0.5, 1.0, 0.5, false),  // below range, positive: unclipped branch
        (0.5, -1.0, -0.8, true), // below range, negative: clipped branch
        (1.5, -1.0, -1.5, false),
    ];
    for &(ratio, a, expected, saturated) in &cases {
        let group = vec![make(ratio)];
        let adv = GroupAdvantages {
            a_text: vec![0.0],
            a_img: vec![a],
        };
        let (value, grad) = dual_objective_grad(&bundle, &group, &adv, &hp, &gen);
        assert!(
            (value - expected).abs() < 1e-12,
            "ratio {ratio}, A {a}: objective {value}, expected {expected}"
        );
        let zero_grad = grad.iter().all(|&g| g == 0.0);
        assert_eq!(
            zero_grad, saturated,
            "ratio {ratio}, A {a}: zero-gradient {zero_grad}, saturated {saturated}"
        );
    }
    pass(
        4,
        "clipping semantics",
        "four quadrants exact; out-of-range positive-advantage case has an \
         identically zero surrogate gradient"
            .to_string(),
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: reward-oracle equivalence against an independent brute force.

/// Independent reimplementation of the reward definitions, written against
/// the equations directly (no calls into the library scorers).
mod brute {
    use super::*;

    pub struct Comp {
        pub shape: Shape,
        pub color: Color,
        pub cells: Vec<(usize, usize)>,
    }

    impl Comp {
        fn sums(&self) -> (i64, i64, i64) {
            let r: i64 = self.cells.iter().map(|&(r, _)| r as i64).sum();
            let c: i64 = self.cells.iter().map(|&(_, c)| c as i64).sum();
            (r, c, self.cells.len() as i64)
        }
    }

    pub enum Q {
        Color { shape: Shape, answer: Color },
        Count { color: Color, shape: Shape, answer: u8 },
        Rel { s: (Color, Shape), o: (Color, Shape), answer: Relation },
    }

    pub fn questions(scene: &SceneSpec) -> Vec<Q> {
        let mut out = Vec::new();
        for obj in &scene.objects {
            out.push(Q::Color { shape: obj.shape, answer: obj.color });
            out.push(Q::Count { color: obj.color, shape: obj.shape, answer: obj.count });
        }
        for rel in &scene.relations {
            let s = &scene.objects[rel.subject];
            let o = &scene.objects[rel.object];
            out.push(Q::Rel {
                s: (s.color, s.shape),
                o: (o.color, o.shape),
                answer: rel.relation,
            });
        }
        out
    }

    /// First tag pair binds; an empty span is absent with no re-scan.
    fn span(text: &[TokenId], open: TokenId, close: TokenId, from: usize) -> Option<(usize, Vec<TokenId>)> {
        let o = (from..text.len()).find(|&i| text[i] == open)?;
        let c = (o + 1..text.len()).find(|&i| text[i] == close)?;
        if c == o + 1 {
            return None;
        }
        Some((c + 1, text[o + 1..c].to_vec()))
    }

    pub fn parse_spans(text: &[TokenId]) -> (Option<Vec<TokenId>>, Option<Vec<TokenId>>) {
        let thought = span(text, THOUGHT_OPEN, THOUGHT_CLOSE, 0);
        let from = thought.as_ref().map(|(end, _)| *end).unwrap_or(0);
        let desc = span(text, DESC_OPEN, DESC_CLOSE, from);
        (thought.map(|(_, s)| s), desc.map(|(_, s)| s))
    }

    fn parse_np(t: &[TokenId], pos: &mut usize) -> Option<ObjectSpec> {
        let head = *t.get(*pos)?;
        let (count, plural) = if head == A {
            (1u8, false)
        } else {
            (count_from_token(head).filter(|&c| c > 1)?, true)
        };
        let color = Color::from_token(*t.get(*pos + 1)?)?;
        let st = *t.get(*pos + 2)?;
        let shape = if plural {
            if Shape::from_token(st).is_some() {
                return None;
            }
            Shape::from_token_any(st)?
        } else {
            Shape::from_token(st)?
        };
        *pos += 3;
        Some(ObjectSpec { count, color, shape })
    }

    pub fn parse_surface(t: &[TokenId]) -> Option<SceneSpec> {
        let mut pos = 0;
        let first = parse_np(t, &mut pos)?;
        if pos == t.len() {
            return Some(SceneSpec { objects: vec![first], relations: vec![] });
        }
        let conn = *t.get(pos)?;
        pos += 1;
        let second = parse_np(t, &mut pos)?;
        if pos != t.len() {
            return None;
        }
        if first.color == second.color && first.shape == second.shape {
            return None; // duplicate (color, shape) pair is invalid
        }
        let relations = if conn == AND {
            vec![]
        } else {
            vec![RelationSpec {
                subject: 0,
                relation: Relation::from_token(conn)?,
                object: 1,
            }]
        };
        Some(SceneSpec { objects: vec![first, second], relations })
    }

    fn find_mention(d: &[TokenId], color: Option<Color>, shape: Shape) -> Option<usize> {
        (0..d.len()).find(|&i| {
            Shape::from_token_any(d[i]) == Some(shape)
                && match color {
                    None => true,
                    Some(c) => i > 0 && Color::from_token(d[i - 1]) == Some(c),
                }
        })
    }

    pub fn text_answer_matches(d: &[TokenId], q: &Q) -> bool {
        match *q {
            Q::Color { shape, answer } => {
                let Some(i) = find_mention(d, None, shape) else { return false };
                i > 0 && Color::from_token(d[i - 1]) == Some(answer)
            }
            Q::Count { color, shape, answer } => {
                let Some(i) = find_mention(d, Some(color), shape) else { return false };
                let Some(det_idx) = i.checked_sub(2) else { return false };
                let det = d[det_idx];
                let got = if det == A { Some(1) } else { count_from_token(det) };
                got == Some(answer)
            }
            Q::Rel { s, o, answer } => {
                let Some(i0) = find_mention(d, Some(s.0), s.1) else { return false };
                let rest = &d[i0 + 1..];
                let Some(i1_rel) = find_mention(rest, Some(o.0), o.1) else { return false };
                let i1 = i0 + 1 + i1_rel;
                d[i0 + 1..i1]
                    .iter()
                    .find_map(|&t| Relation::from_token(t))
                    == Some(answer)
            }
        }
    }

    pub fn components(cells: &[Option<(Shape, Color)>], dims: GridDims) -> Vec<Comp> {
        let (rows, cols) = (dims.rows, dims.cols);
        let mut seen = vec![false; rows * cols];
        let mut out = Vec::new();
        for start in 0..rows * cols {
            if seen[start] {
                continue;
            }
            let Some((shape, color)) = cells[start] else { continue };
            let mut comp = Vec::new();
            let mut queue = vec![start];
            seen[start] = true;
            while let Some(idx) = queue.pop() {
                let (r, c) = (idx / cols, idx % cols);
                comp.push((r, c));
                let neighbors = [
                    (r.wrapping_sub(1), c),
                    (r + 1, c),
                    (r, c.wrapping_sub(1)),
                    (r, c + 1),
                ];
                for (nr, nc) in neighbors {
                    if nr < rows && nc < cols {
                        let nidx = nr * cols + nc;
                        if !seen[nidx] && cells[nidx] == Some((shape, color)) {
                            seen[nidx] = true;
                            queue.push(nidx);
                        }
                    }
                }
            }
            out.push(Comp { shape, color, cells: comp });
        }
        out
    }

    /// Dominant-axis centroid relation in exact integer arithmetic.
    fn rel_between(a: &Comp, b: &Comp) -> Option<Relation> {
        let (ar, ac, an) = a.sums();
        let (br, bc, bn) = b.sums();
        let dc = bc * an - ac * bn;
        let dr = br * an - ar * bn;
        if dc.abs() > dr.abs() {
            Some(if dc > 0 { Relation::LeftOf } else { Relation::RightOf })
        } else if dr.abs() > dc.abs() {
            Some(if dr > 0 { Relation::Above } else { Relation::Below })
        } else {
            None
        }
    }

    fn matching<'a>(
        comps: &'a [Comp],
        color: Color,
        shape: Shape,
    ) -> impl Iterator<Item = &'a Comp> {
        comps.iter().filter(move |c| c.color == color && c.shape == shape)
    }

    pub fn image_answer_matches(comps: &[Comp], q: &Q) -> bool {
        match *q {
            Q::Color { shape, answer } => {
                let mut colors = comps.iter().filter(|c| c.shape == shape).map(|c| c.color);
                match colors.next() {
                    None => false,
                    Some(first) => colors.all(|c| c == first) && first == answer,
                }
            }
            Q::Count { color, shape, answer } => {
                matching(comps, color, shape).count() == answer as usize
            }
            Q::Rel { s, o, answer } => {
                let (Some(a), Some(b)) =
                    (matching(comps, s.0, s.1).next(), matching(comps, o.0, o.1).next())
                else {
                    return false;
                };
                rel_between(a, b) == Some(answer)
            }
        }
    }

    pub fn vqa(comps: &[Comp], qs: &[Q]) -> f64 {
        if qs.is_empty() {
            return 0.0;
        }
        let hits = qs.iter().filter(|q| image_answer_matches(comps, q)).count();
        hits as f64 / qs.len() as f64
    }

    pub fn detection(scene: &SceneSpec, comps: &[Comp]) -> f64 {
        let mut total = 0.0;
        for (idx, obj) in scene.objects.iter().enumerate() {
            let n = matching(comps, obj.color, obj.shape).count();
            let presence = (n >= 1) as u8 as f64;
            let count_ok = (n == obj.count as usize) as u8 as f64;
            let involved: Vec<_> = scene
                .relations
                .iter()
                .filter(|r| r.subject == idx || r.object == idx)
                .collect();
            let rel_ok = if involved.is_empty() {
                1.0
            } else if involved.iter().all(|r| {
                let s = &scene.objects[r.subject];
                let o = &scene.objects[r.object];
                matching(comps, s.color, s.shape).any(|a| {
                    matching(comps, o.color, o.shape)
                        .any(|b| rel_between(a, b) == Some(r.relation))
                })
            }) {
                1.0
            } else {
                0.0
            };
            total += (presence + count_ok + rel_ok) / 3.0;
        }
        total / scene.objects.len() as f64
    }

    fn aesthetic(cells: &[Option<(Shape, Color)>], dims: GridDims, demanded: usize) -> f64 {
        let (rows, cols) = (dims.rows, dims.cols);
        let (mut filled, mut cohesive) = (0usize, 0usize);
        for r in 0..rows {
            for c in 0..cols {
                let Some(content) = cells[r * cols + c] else { continue };
                filled += 1;
                let neighbors = [
                    (r.wrapping_sub(1), c),
                    (r + 1, c),
                    (r, c.wrapping_sub(1)),
                    (r, c + 1),
                ];
                if neighbors.iter().any(|&(nr, nc)| {
                    nr < rows && nc < cols && cells[nr * cols + nc] == Some(content)
                }) {
                    cohesive += 1;
                }
            }
        }
        if filled == 0 {
            if demanded == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            cohesive as f64 / filled as f64
        }
    }

    pub fn hpm(
        span: Option<&[TokenId]>,
        comps: &[Comp],
        cells: &[Option<(Shape, Color)>],
        dims: GridDims,
    ) -> f64 {
        let scene = span.and_then(parse_surface);
        let semantic = scene
            .as_ref()
            .map(|s| vqa(comps, &questions(s)))
            .unwrap_or(0.0);
        let demanded = scene.map(|s| s.objects.len()).unwrap_or(1);
        0.8 * semantic + 0.2 * aesthetic(cells, dims, demanded)
    }

    pub fn score(
        truth: &SceneSpec,
        surface: &[TokenId],
        text_seq: &[TokenId],
        image_seq: &[TokenId],
        dims: GridDims,
    ) -> RewardBreakdown {
        let cells: Vec<Option<(Shape, Color)>> = image_seq
            .iter()
            .map(|&t| cell_content(t).expect("image token"))
            .collect();
        let comps = components(&cells, dims);
        let (thought, desc) = parse_spans(text_seq);

        let r_format =
            0.5 * (thought.is_some() as u8 as f64) + 0.5 * (desc.is_some() as u8 as f64);
        let qs = questions(truth);
        let r_prop = match &desc {
            Some(d) => {
                qs.iter().filter(|q| text_answer_matches(d, q)).count() as f64 / qs.len() as f64
            }
            None => 0.0,
        };
        let r_sp = match &desc {
            Some(d) => hpm(Some(d), &comps, &cells, dims),
            None => 0.0,
        };
        let r_vqa = vqa(&comps, &qs);
        let r_det = detection(truth, &comps);
        let r_align = hpm(Some(surface), &comps, &cells, dims);
        RewardBreakdown {
            r_format,
            r_prop,
            r_sa: r_format + r_prop,
            r_sp,
            r_vqa,
            r_det,
            r_align,
            r_ha: r_vqa + r_det + r_align,
        }
    }
}

fn fixed_scenes() -> Vec<SceneSpec> {
    let obj = |count, color, shape| ObjectSpec { count, color, shape };
    vec![
        SceneSpec {
            objects: vec![obj(1, Color::Red, Shape::Circle)],
            relations: vec![],
        },
        SceneSpec {
            objects: vec![obj(2, Color::Green, Shape::Triangle)],
            relations: vec![],
        },
        SceneSpec {
            objects: vec![obj(1, Color::Red, Shape::Circle), obj(1, Color::Blue, Shape::Square)],
            relations: vec![],
        },
        SceneSpec {
            objects: vec![
                obj(1, Color::Yellow, Shape::Triangle),
                obj(1, Color::Green, Shape::Circle),
            ],
            relations: vec![RelationSpec { subject: 0, relation: Relation::LeftOf, object: 1 }],
        },
        SceneSpec {
            objects: vec![obj(3, Color::Blue, Shape::Square)],
            relations: vec![],
        },
    ]
}

fn canonical_text(surface: &[TokenId]) -> Vec<TokenId> {
    let mut text = vec![THOUGHT_OPEN];
    text.extend_from_slice(surface);
    text.push(THOUGHT_CLOSE);
    text.push(DESC_OPEN);
    text.extend_from_slice(surface);
    text.push(DESC_CLOSE);
    text.push(END_TEXT);
    text
}

#[test]
fn criterion_05_reward_oracle_equivalence() {
    let start = Instant::now();
    let dims = GridDims { rows: 2, cols: 2 };
    let image_ids = phase_mask(Phase::Image);
    assert_eq!(image_ids.len(), 13);
    let total = 13usize.pow(4);
    let mut compared = 0usize;

    let compare = |truth: &SceneSpec, surface: &[TokenId], text: &[TokenId], image: &[TokenId]| {
        let rollout = Rollout {
            prompt: Prompt { surface: surface.to_vec(), truth: truth.clone() },
            text_seq: text.to_vec(),
            image_seq: image.to_vec(),
            logp_old_text: vec![0.0; text.len()],
            logp_old_img: vec![0.0; image.len()],
        };
        let lib = score_rollout(&rollout, dims);
        let bf = brute::score(truth, surface, text, image, dims);
        for (name, a, b) in [
            ("r_format", lib.r_format, bf.r_format),
            ("r_prop", lib.r_prop, bf.r_prop),
            ("r_sa", lib.r_sa, bf.r_sa),
            ("r_sp", lib.r_sp, bf.r_sp),
            ("r_vqa", lib.r_vqa, bf.r_vqa),
            ("r_det", lib.r_det, bf.r_det),
            ("r_align", lib.r_align, bf.r_align),
            ("r_ha", lib.r_ha, bf.r_ha),
        ] {
            assert!(
                (a - b).abs() <= 1e-12,
                "{name}: library {a} vs brute force {b} on image {image:?}"
            );
        }
    };

    for truth in fixed_scenes() {
        let surface = surface_for(&truth);
        let canonical = canonical_text(&surface);
        // Degenerate text variants exercise the format/propagation paths on
        // a thinned subsample of the image space.
        let mut tagless = surface.clone();
        tagless.push(END_TEXT);
        let mut thought_only = vec![THOUGHT_OPEN];
        thought_only.extend_from_slice(&surface);
        thought_only.extend([THOUGHT_CLOSE, END_TEXT]);

        let mut image = vec![EMPTY_CELL; 4];
        for idx in 0..total {
            let mut rem = idx;
            for cell in image.iter_mut() {
                *cell = image_ids[rem % 13];
                rem /= 13;
            }
            compare(&truth, &surface, &canonical, &image);
            compared += 1;
            if idx % 101 == 0 {
                compare(&truth, &surface, &tagless, &image);
                compare(&truth, &surface, &thought_only, &image);
                compared += 2;
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}, budget 2 min");
    pass(
        5,
        "reward-oracle equivalence",
        format!(
            "{compared} rollouts (13^4 sequences x 5 scenes, plus degenerate-text \
             subsamples), zero discrepancies, {elapsed:?}"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: format-reward table.

#[test]
fn criterion_06_format_table() {
    let surface = surface_for(&fixed_scenes()[0]);
    let both = canonical_text(&surface);
    let mut thought_only = vec![THOUGHT_OPEN];
    thought_only.extend_from_slice(&surface);
    thought_only.extend([THOUGHT_CLOSE, END_TEXT]);
    let mut desc_only = vec![DESC_OPEN];
    desc_only.extend_from_slice(&surface);
    desc_only.extend([DESC_CLOSE, END_TEXT]);
    let mut neither = surface.clone();
    neither.push(END_TEXT);

    for (text, expected) in [
        (&both, 1.0),
        (&thought_only, 0.5),
        (&desc_only, 0.5),
        (&neither, 0.0),
    ] {
        assert_eq!(format_reward(&parse_reasoning(text)), expected);
    }
    pass(
        6,
        "format-reward table",
        "{both, thought-only, description-only, neither} -> {1.0, 0.5, 0.5, 0.0} exactly"
            .to_string(),
    );
}

// ---------------------------------------------------------------------------
// Criteria 7-10: shared training runs.

/// The five fixed seeds for the learning criteria; the first is the
/// default-config seed pinned by the structure criterion.
const SEEDS: [u64; 5] = [17, 3, 4, 9, 12];
const EVAL_N: usize = 50;
const EVAL_SEED: u64 = 99;
const ABLATION_ITERS: usize = 300;
const TAIL: usize = 50;

struct FullRun {
    seed: u64,
    reports: Vec<StepReport>,
    init_eval: EvalReport,
    final_eval: EvalReport,
    train_secs: f64,
}

struct AblationRun {
    metrics_bytes: Vec<u8>,
    reports: Vec<StepReport>,
}

struct Shared {
    full: Vec<FullRun>,
    sar_off: Vec<AblationRun>,
    spr_off: Vec<AblationRun>,
}

fn read_reports(path: &std::path::Path) -> Vec<StepReport> {
    std::fs::read_to_string(path)
        .expect("metrics readable")
        .lines()
        .map(|l| serde_json::from_str(l).expect("metrics line parses"))
        .collect()
}

fn run_full(seed: u64) -> FullRun {
    let dir = TempDir::new().expect("tempdir");
    let mut config = RunConfig::defaults(dir.path().to_path_buf());
    config.seed = seed;
    let t0 = Instant::now();
    let outcome = train(&config).expect("training run succeeds");
    let train_secs = t0.elapsed().as_secs_f64();
    let reports = read_reports(&outcome.metrics_path);

    let mut init_rng = derive_rng(seed, "init", 0);
    let init_bundle = PolicyBundle::new(PolicyParams::init(config.policy, &mut init_rng));
    let init_eval = evaluate(&init_bundle, &config.gen, EVAL_N, EVAL_SEED);
    let final_eval = evaluate(&outcome.bundle, &config.gen, EVAL_N, EVAL_SEED);
    FullRun { seed, reports, init_eval, final_eval, train_secs }
}

fn run_ablation(seed: u64, use_sar: bool, use_spr: bool) -> AblationRun {
    let dir = TempDir::new().expect("tempdir");
    let mut config = RunConfig::defaults(dir.path().to_path_buf());
    config.seed = seed;
    config.iterations = ABLATION_ITERS;
    config.hyperparams.use_sar = use_sar;
    config.hyperparams.use_spr = use_spr;
    let outcome = train(&config).expect("ablation run succeeds");
    let metrics_bytes = std::fs::read(&outcome.metrics_path).expect("metrics readable");
    let reports = read_reports(&outcome.metrics_path);
    AblationRun { metrics_bytes, reports }
}

fn shared() -> &'static Shared {
    static CELL: OnceLock<Shared> = OnceLock::new();
    CELL.get_or_init(|| Shared {
        full: SEEDS.iter().map(|&s| run_full(s)).collect(),
        sar_off: SEEDS.iter().map(|&s| run_ablation(s, false, true)).collect(),
        spr_off: SEEDS.iter().map(|&s| run_ablation(s, true, false)).collect(),
    })
}

/// Mean of a metric over the last `TAIL` of the first `ABLATION_ITERS`
/// iterations. The harness derives per-iteration seeds by index and reads
/// the corpus stream sequentially, so a longer run's prefix is identical to
/// a shorter run's; full runs are compared at the matched window.
fn tail_mean(reports: &[StepReport], f: impl Fn(&StepReport) -> f64) -> f64 {
    let window = &reports[ABLATION_ITERS - TAIL..ABLATION_ITERS];
    window.iter().map(&f).sum::<f64>() / window.len() as f64
}

#[test]
fn criterion_07_learning_structure() {
    let run = &shared().full[0];
    assert_eq!(run.seed, 17);
    let initial = run.reports.first().expect("metrics nonempty").format_valid_frac;
    let crossing = run
        .reports
        .iter()
        .find(|r| r.format_valid_frac >= 0.9)
        .map(|r| r.iteration);
    let crossed_at = crossing.expect("format-valid fraction never reached 0.9");
    assert!(
        crossed_at <= 500,
        "format threshold first crossed at iteration {crossed_at}"
    );
    assert!(
        run.train_secs <= 600.0,
        "default run took {:.0} s, budget 600 s",
        run.train_secs
    );
    pass(
        7,
        "learning, structure",
        format!(
            "default config (G=8, beta=0.01, batch 8, seed 17): format-valid fraction \
             {initial:.2} -> >=0.9 at iteration {crossed_at} (<=500), run took {:.0} s",
            run.train_secs
        ),
    );
}

#[test]
fn criterion_08_learning_alignment() {
    let mut passes = 0usize;
    let mut lines = Vec::new();
    for run in &shared().full {
        let single0 = run.init_eval.mean_r_ha.single;
        let single1 = run.final_eval.mean_r_ha.single;
        let rel0 = run.init_eval.mean_r_ha.relational;
        let rel1 = run.final_eval.mean_r_ha.relational;
        let ok = single1 >= 1.5 * single0 && rel1 > rel0;
        passes += ok as usize;
        lines.push(format!(
            "seed {}: single {single0:.3}->{single1:.3} ({:+.0}%), relational \
             {rel0:.3}->{rel1:.3} [{}]",
            run.seed,
            100.0 * (single1 / single0 - 1.0),
            if ok { "pass" } else { "fail" }
        ));
    }
    assert!(passes >= 4, "only {passes}/5 seeds passed: {lines:?}");
    pass(
        8,
        "learning, alignment",
        format!("{passes}/5 seeds (need >=4): {}", lines.join("; ")),
    );
}

#[test]
fn criterion_09_ablation_echo() {
    let s = shared();
    let (mut sar_passes, mut spr_passes) = (0usize, 0usize);
    let mut lines = Vec::new();
    for i in 0..SEEDS.len() {
        let full_fv = tail_mean(&s.full[i].reports, |r| r.format_valid_frac);
        let sar_fv = tail_mean(&s.sar_off[i].reports, |r| r.format_valid_frac);
        let full_sp = tail_mean(&s.full[i].reports, |r| r.mean_r_sp);
        let spr_sp = tail_mean(&s.spr_off[i].reports, |r| r.mean_r_sp);
        let sar_ok = sar_fv < full_fv;
        let spr_ok = spr_sp < full_sp;
        sar_passes += sar_ok as usize;
        spr_passes += spr_ok as usize;
        lines.push(format!(
            "seed {}: format {full_fv:.3} vs SAR-off {sar_fv:.3} [{}], R_SP {full_sp:.3} vs \
             SPR-off {spr_sp:.3} [{}]",
            SEEDS[i],
            if sar_ok { "pass" } else { "fail" },
            if spr_ok { "pass" } else { "fail" }
        ));
    }
    assert!(sar_passes >= 4, "SAR ablation: {sar_passes}/5: {lines:?}");
    assert!(spr_passes >= 4, "SPR ablation: {spr_passes}/5: {lines:?}");
    pass(
        9,
        "dual-objective ablation echo",
        format!(
            "SAR-off lowers format on {sar_passes}/5 seeds, SPR-off lowers R_SP on \
             {spr_passes}/5 seeds (need >=4; last-{TAIL}-iteration means at matched \
             iteration {ABLATION_ITERS}): {}",
            lines.join("; ")
        ),
    );
}

#[test]
fn criterion_10_reproducibility() {
    let reference = &shared().sar_off[0];
    let rerun = run_ablation(SEEDS[0], false, true);
    assert_eq!(
        reference.metrics_bytes, rerun.metrics_bytes,
        "metrics logs differ between identical-config executions"
    );
    pass(
        10,
        "reproducibility",
        format!(
            "two executions of the seed-{} ablation run produced byte-identical \
             metrics logs ({} bytes)",
            SEEDS[0],
            rerun.metrics_bytes.len()
        ),
    );
}
