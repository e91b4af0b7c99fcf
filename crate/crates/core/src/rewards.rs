//! The three-part reward stack: semantic anchoring on the reasoning text,
//! semantic projection of the description into the grid, and holistic
//! alignment between prompt and grid. Every scorer is a deterministic
//! oracle, so rewards are exactly reproducible and brute-force checkable.

use serde::{Deserialize, Serialize};

use crate::renderer::{render, Grid, GridDims};
use crate::toyscene::{derive_questions, extract_elements, QAItem, QATarget, SceneSpec};
use crate::vocab::{
    count_from_token, count_token, parse_reasoning, Color, ParsedReasoning, Relation, Rollout,
    Shape, TokenId, HOW, WHAT, WHERE, A,
};

/// All scalar reward components for one rollout.
///
/// Identities: `r_sa = r_format + r_prop` and `r_ha = r_vqa + r_det + r_align`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_format: f64,
    pub r_prop: f64,
    pub r_sa: f64,
    pub r_sp: f64,
    pub r_vqa: f64,
    pub r_det: f64,
    pub r_align: f64,
    pub r_ha: f64,
}

/// Format reward: 0.5 per present tag span.
pub fn format_reward(parsed: &ParsedReasoning) -> f64 {
    const W_THOUGHT: f64 = 0.5;
    const W_DESCRIPTION: f64 = 0.5;
    W_THOUGHT * (parsed.thought.is_some() as u8 as f64)
        + W_DESCRIPTION * (parsed.description.is_some() as u8 as f64)
}

enum Question {
    Color { shape: Shape },
    Count { color: Color, shape: Shape },
    Relation { subject: (Color, Shape), object: (Color, Shape) },
}

fn classify(q: &QAItem) -> Option<Question> {
    match *q.question.first()? {
        WHAT => Some(Question::Color {
            shape: Shape::from_token(*q.question.get(4)?)?,
        }),
        HOW => Some(Question::Count {
            color: Color::from_token(*q.question.get(2)?)?,
            shape: Shape::from_token_any(*q.question.get(3)?)?,
        }),
        WHERE => Some(Question::Relation {
            subject: (
                Color::from_token(*q.question.get(3)?)?,
                Shape::from_token(*q.question.get(4)?)?,
            ),
            object: (
                Color::from_token(*q.question.get(8)?)?,
                Shape::from_token(*q.question.get(9)?)?,
            ),
        }),
        _ => None,
    }
}

/// First index in `d` where `shape` is mentioned (singular or plural),
/// optionally requiring the immediately preceding token to be `color`.
fn find_mention(d: &[TokenId], color: Option<Color>, shape: Shape) -> Option<usize> {
    d.iter().enumerate().position(|(i, &t)| {
        Shape::from_token_any(t) == Some(shape)
            && match color {
                None => true,
                Some(c) => i > 0 && Color::from_token(d[i - 1]) == Some(c),
            }
    })
}

/// Answers a text-target question against a description span.
pub fn answer_from_text(description: &[TokenId], q: &QAItem) -> Option<TokenId> {
    let d = description;
    match classify(q)? {
        Question::Color { shape } => {
            let i = find_mention(d, None, shape)?;
            (i > 0).then(|| Color::from_token(d[i - 1])).flatten().map(Color::token)
        }
        Question::Count { color, shape } => {
            let i = find_mention(d, Some(color), shape)?;
            // Mention is [article-or-count, color, shape]; the color sits at i-1.
            let det = *d.get(i.checked_sub(2)?)?;
            if det == A {
                Some(count_token(1).unwrap())
            } else {
                count_from_token(det).map(|_| det)
            }
        }
        Question::Relation { subject, object } => {
            let i0 = find_mention(d, Some(subject.0), subject.1)?;
            let rest = &d[i0 + 1..];
            let i1 = i0 + 1 + find_mention(rest, Some(object.0), object.1)?;
            d[i0 + 1..i1]
                .iter()
                .find_map(|&t| Relation::from_token(t))
                .map(Relation::token)
        }
    }
}

/// Mean exact-match of text answers against references; an absent
/// description scores 0.
pub fn propagation_reward(description: Option<&[TokenId]>, questions: &[QAItem]) -> f64 {
    let Some(d) = description else { return 0.0 };
    if questions.is_empty() {
        return 0.0;
    }
    let hits = questions
        .iter()
        .filter(|q| answer_from_text(d, q) == Some(q.reference_answer))
        .count();
    hits as f64 / questions.len() as f64
}

/// One 4-connected component of identically-filled cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectedObject {
    pub shape: Shape,
    pub color: Color,
    pub cells: Vec<(usize, usize)>,
    /// Exact centroid as (sum of rows, sum of cols, cell count).
    pub row_sum: i64,
    pub col_sum: i64,
}

impl DetectedObject {
    pub fn len(&self) -> i64 {
        self.cells.len() as i64
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn centroid(&self) -> (f64, f64) {
        let n = self.cells.len() as f64;
        (self.row_sum as f64 / n, self.col_sum as f64 / n)
    }
}

/// Labels 4-connected components of identical non-empty content, ordered
/// by their top-left (row-major first) cell.
pub fn detect(grid: &Grid) -> Vec<DetectedObject> {
    let (rows, cols) = (grid.dims.rows, grid.dims.cols);
    let mut seen = vec![false; rows * cols];
    let mut out = Vec::new();
    for start in 0..rows * cols {
        if seen[start] {
            continue;
        }
        let Some((shape, color)) = grid.cells[start] else { continue };
        let mut cells = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(idx) = stack.pop() {
            let (r, c) = (idx / cols, idx % cols);
            cells.push((r, c));
            let mut push = |nr: usize, nc: usize| {
                let nidx = nr * cols + nc;
                if !seen[nidx] && grid.cells[nidx] == Some((shape, color)) {
                    seen[nidx] = true;
                    stack.push(nidx);
                }
            };
            if r > 0 {
                push(r - 1, c);
            }
            if r + 1 < rows {
                push(r + 1, c);
            }
            if c > 0 {
                push(r, c - 1);
            }
            if c + 1 < cols {
                push(r, c + 1);
            }
        }
        cells.sort_unstable();
        let row_sum = cells.iter().map(|&(r, _)| r as i64).sum();
        let col_sum = cells.iter().map(|&(_, c)| c as i64).sum();
        out.push(DetectedObject { shape, color, cells, row_sum, col_sum });
    }
    out
}

/// The dominant-direction relation between two component centroids, or
/// `None` on a tie. Exact integer arithmetic: centroid differences are
/// compared after cross-multiplying by the component sizes.
pub fn relation_between(a: &DetectedObject, b: &DetectedObject) -> Option<Relation> {
    let dc = b.col_sum * a.len() - a.col_sum * b.len();
    let dr = b.row_sum * a.len() - a.row_sum * b.len();
    if dc.abs() > dr.abs() {
        Some(if dc > 0 { Relation::LeftOf } else { Relation::RightOf })
    } else if dr.abs() > dc.abs() {
        Some(if dr > 0 { Relation::Above } else { Relation::Below })
    } else {
        None
    }
}

fn components_of<'a>(
    detections: &'a [DetectedObject],
    color: Color,
    shape: Shape,
) -> impl Iterator<Item = &'a DetectedObject> {
    detections
        .iter()
        .filter(move |d| d.color == color && d.shape == shape)
}

/// Whether some component pair realizes the relation (existential match).
fn relation_holds(
    detections: &[DetectedObject],
    subject: (Color, Shape),
    object: (Color, Shape),
    relation: Relation,
) -> bool {
    components_of(detections, subject.0, subject.1).any(|a| {
        components_of(detections, object.0, object.1)
            .any(|b| relation_between(a, b) == Some(relation))
    })
}

/// Per-object mean of presence, count correctness, and relation
/// correctness, averaged over objects.
pub fn detection_reward(scene: &SceneSpec, grid: &Grid) -> f64 {
    let detections = detect(grid);
    let mut total = 0.0;
    for (idx, obj) in scene.objects.iter().enumerate() {
        let n = components_of(&detections, obj.color, obj.shape).count();
        let presence = (n >= 1) as u8 as f64;
        let count_ok = (n == obj.count as usize) as u8 as f64;
        let involved: Vec<_> = scene
            .relations
            .iter()
            .filter(|r| r.subject == idx || r.object == idx)
            .collect();
        let rel_ok = if involved.is_empty() {
            1.0
        } else {
            involved
                .iter()
                .all(|r| {
                    let s = &scene.objects[r.subject];
                    let o = &scene.objects[r.object];
                    relation_holds(
                        &detections,
                        (s.color, s.shape),
                        (o.color, o.shape),
                        r.relation,
                    )
                })
                .then_some(1.0)
                .unwrap_or(0.0)
        };
        total += (presence + count_ok + rel_ok) / 3.0;
    }
    total / scene.objects.len() as f64
}

/// Answers an image-target question against detected components.
pub fn answer_from_image(detections: &[DetectedObject], q: &QAItem) -> Option<TokenId> {
    match classify(q)? {
        Question::Color { shape } => {
            let mut colors = detections.iter().filter(|d| d.shape == shape).map(|d| d.color);
            let first = colors.next()?;
            colors.all(|c| c == first).then(|| first.token())
        }
        Question::Count { color, shape } => {
            let n = components_of(detections, color, shape).count();
            count_token(u8::try_from(n).ok()?)
        }
        Question::Relation { subject, object } => {
            let a = components_of(detections, subject.0, subject.1).next()?;
            let b = components_of(detections, object.0, object.1).next()?;
            relation_between(a, b).map(Relation::token)
        }
    }
}

/// Mean exact-match of image answers against references.
pub fn vqa_reward(grid: &Grid, questions: &[QAItem]) -> f64 {
    if questions.is_empty() {
        return 0.0;
    }
    let detections = detect(grid);
    let hits = questions
        .iter()
        .filter(|q| answer_from_image(&detections, q) == Some(q.reference_answer))
        .count();
    hits as f64 / questions.len() as f64
}

/// Fraction of non-empty cells with at least one identical 4-neighbor.
/// An empty grid scores 1 only when nothing was demanded.
fn aesthetic_score(grid: &Grid, demanded_objects: usize) -> f64 {
    let (rows, cols) = (grid.dims.rows, grid.dims.cols);
    let mut filled = 0usize;
    let mut cohesive = 0usize;
    for r in 0..rows {
        for c in 0..cols {
            let Some(content) = grid.get(r, c) else { continue };
            filled += 1;
            let neighbors = [
                (r.wrapping_sub(1), c),
                (r + 1, c),
                (r, c.wrapping_sub(1)),
                (r, c + 1),
            ];
            if neighbors
                .iter()
                .any(|&(nr, nc)| nr < rows && nc < cols && grid.get(nr, nc) == Some(content))
            {
                cohesive += 1;
            }
        }
    }
    if filled == 0 {
        if demanded_objects == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        cohesive as f64 / filled as f64
    }
}

/// Preference-model stand-in: 0.8 semantic + 0.2 aesthetic. The semantic
/// part scores the grid against questions derived from parsing the text
/// span; an absent or unparseable span scores 0 semantically.
pub fn hpm_score(text: Option<&[TokenId]>, grid: &Grid) -> f64 {
    let scene = text.and_then(|t| extract_elements(t).ok());
    let semantic = match &scene {
        Some(s) => {
            let questions: Vec<QAItem> = derive_questions(s)
                .into_iter()
                .filter(|q| q.target == QATarget::Image)
                .collect();
            vqa_reward(grid, &questions)
        }
        None => 0.0,
    };
    // Unparseable or absent text still demands content; only a text that
    // parses to an empty scene would excuse an empty grid.
    let demanded = scene.map(|s| s.objects.len()).unwrap_or(1);
    0.8 * semantic + 0.2 * aesthetic_score(grid, demanded)
}

/// The description-vs-image preference score; absent description scores 0.
pub fn semantic_projection_reward(parsed: &ParsedReasoning, grid: &Grid) -> f64 {
    match &parsed.description {
        Some(d) => hpm_score(Some(d), grid),
        None => 0.0,
    }
}

/// Unweighted sum of VQA, detection, and prompt-level alignment scores.
pub fn holistic_alignment_reward(
    truth: &SceneSpec,
    surface: &[TokenId],
    grid: &Grid,
) -> (f64, f64, f64) {
    let questions: Vec<QAItem> = derive_questions(truth)
        .into_iter()
        .filter(|q| q.target == QATarget::Image)
        .collect();
    let r_vqa = vqa_reward(grid, &questions);
    let r_det = detection_reward(truth, grid);
    let r_align = hpm_score(Some(surface), grid);
    (r_vqa, r_det, r_align)
}

/// Computes every reward component for one rollout.
pub fn score_rollout(rollout: &Rollout, dims: GridDims) -> RewardBreakdown {
    let parsed = parse_reasoning(&rollout.text_seq);
    let grid = render(&rollout.image_seq, dims).expect("rollout image length matches grid");

    let r_format = format_reward(&parsed);
    let text_questions: Vec<QAItem> = derive_questions(&rollout.prompt.truth)
        .into_iter()
        .filter(|q| q.target == QATarget::Text)
        .collect();
    let r_prop = propagation_reward(parsed.description.as_deref(), &text_questions);
    let r_sp = semantic_projection_reward(&parsed, &grid);
    let (r_vqa, r_det, r_align) =
        holistic_alignment_reward(&rollout.prompt.truth, &rollout.prompt.surface, &grid);

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
