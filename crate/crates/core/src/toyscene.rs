//! The toy prompt language and its deterministic ground truth.
//!
//! Prompts are produced from a fixed template grammar over 4 colors,
//! 3 shapes, counts 1..=3 and 4 spatial relations:
//!
//! ```text
//! NP      := "a" color shape            (count 1)
//!          | ("two"|"three") color shape-plural
//! surface := NP                         (single)
//!          | NP "and" NP                (pair)
//!          | NP relation NP             (relational)
//! ```
//!
//! `extract_elements` inverts the grammar exactly, standing in for the
//! element-extraction model of the full-scale pipeline.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::vocab::{
    self, count_from_token, count_token, tokens_from_string, tokens_to_string, Color, Relation,
    Shape, TokenId, A, AND, COLORS, HOW, IS, MANY, QMARK, RELATIVE, SHAPES, THE, TO, WHAT,
    COLOR_WORD, WHERE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub count: u8,
    pub color: Color,
    pub shape: Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub subject: usize,
    pub relation: Relation,
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<ObjectSpec>,
    pub relations: Vec<RelationSpec>,
}

impl SceneSpec {
    /// Checks all structural invariants: object count bounds, distinct
    /// (color, shape) pairs, valid relation indices, at most one relation
    /// per ordered pair, and no contradictory relation (directly or via
    /// the opposite relation).
    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() || self.objects.len() > 3 {
            return Err(Error::MalformedPrompt("object count out of range".into()));
        }
        if self.relations.len() > 2 {
            return Err(Error::MalformedPrompt("too many relations".into()));
        }
        for (i, a) in self.objects.iter().enumerate() {
            if !(1..=3).contains(&a.count) {
                return Err(Error::MalformedPrompt("count out of range".into()));
            }
            for b in &self.objects[i + 1..] {
                if a.color == b.color && a.shape == b.shape {
                    return Err(Error::MalformedPrompt("duplicate (color, shape) pair".into()));
                }
            }
        }
        let mut seen_pairs = Vec::new();
        // Normalized (lesser index first) directed facts for conflict checks.
        let mut facts: Vec<(usize, usize, Relation)> = Vec::new();
        for r in &self.relations {
            if r.subject == r.object
                || r.subject >= self.objects.len()
                || r.object >= self.objects.len()
            {
                return Err(Error::MalformedPrompt("bad relation indices".into()));
            }
            if seen_pairs.contains(&(r.subject, r.object)) {
                return Err(Error::MalformedPrompt("duplicate relation pair".into()));
            }
            seen_pairs.push((r.subject, r.object));
            let fact = if r.subject < r.object {
                (r.subject, r.object, r.relation)
            } else {
                (r.object, r.subject, r.relation.inverse())
            };
            for &(a, b, rel) in &facts {
                if a == fact.0 && b == fact.1 && rel != fact.2 {
                    return Err(Error::MalformedPrompt("contradictory relations".into()));
                }
            }
            facts.push(fact);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub surface: Vec<TokenId>,
    pub truth: SceneSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Single,
    Pair,
    Relational,
}

pub const DIFFICULTIES: [Difficulty; 3] =
    [Difficulty::Single, Difficulty::Pair, Difficulty::Relational];

impl std::str::FromStr for Difficulty {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "single" => Ok(Difficulty::Single),
            "pair" => Ok(Difficulty::Pair),
            "relational" => Ok(Difficulty::Relational),
            other => Err(format!("unknown difficulty: {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QATarget {
    Text,
    Image,
}

/// One question with its reference answer, asked either against the
/// description span or against the rendered grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub question: Vec<TokenId>,
    pub reference_answer: TokenId,
    pub target: QATarget,
}

fn noun_phrase(obj: &ObjectSpec) -> Vec<TokenId> {
    if obj.count == 1 {
        vec![A, obj.color.token(), obj.shape.token()]
    } else {
        vec![
            count_token(obj.count).expect("count in range"),
            obj.color.token(),
            obj.shape.plural_token(),
        ]
    }
}

fn random_object(rng: &mut impl Rng, count: u8, exclude_shape: Option<Shape>) -> ObjectSpec {
    let shape = loop {
        let s = SHAPES[rng.gen_range(0..SHAPES.len())];
        if Some(s) != exclude_shape {
            break s;
        }
    };
    let color = COLORS[rng.gen_range(0..COLORS.len())];
    ObjectSpec { count, color, shape }
}

/// Deterministically generates a prompt of the requested difficulty.
///
/// Generated scenes use pairwise-distinct shapes so every question the
/// scene induces is answerable from a faithful rendering.
pub fn generate_prompt(rng_seed: u64, difficulty: Difficulty) -> Prompt {
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    let truth = match difficulty {
        Difficulty::Single => {
            let count = rng.gen_range(1..=3u8);
            SceneSpec {
                objects: vec![random_object(&mut rng, count, None)],
                relations: vec![],
            }
        }
        Difficulty::Pair => {
            let c0 = rng.gen_range(1..=3u8);
            let c1 = rng.gen_range(1..=3u8);
            let o0 = random_object(&mut rng, c0, None);
            let o1 = random_object(&mut rng, c1, Some(o0.shape));
            SceneSpec {
                objects: vec![o0, o1],
                relations: vec![],
            }
        }
        Difficulty::Relational => {
            let o0 = random_object(&mut rng, 1, None);
            let o1 = random_object(&mut rng, 1, Some(o0.shape));
            let relation = vocab::RELATIONS[rng.gen_range(0..4)];
            SceneSpec {
                objects: vec![o0, o1],
                relations: vec![RelationSpec {
                    subject: 0,
                    relation,
                    object: 1,
                }],
            }
        }
    };
    let surface = surface_for(&truth);
    Prompt { surface, truth }
}

/// The canonical surface form of a scene under the template grammar.
pub fn surface_for(scene: &SceneSpec) -> Vec<TokenId> {
    let mut out = noun_phrase(&scene.objects[0]);
    if let Some(rel) = scene.relations.first() {
        out.push(rel.relation.token());
        out.extend(noun_phrase(&scene.objects[rel.object]));
    } else if scene.objects.len() == 2 {
        out.push(AND);
        out.extend(noun_phrase(&scene.objects[1]));
    }
    out
}

fn parse_noun_phrase(tokens: &[TokenId], pos: &mut usize) -> Result<ObjectSpec> {
    let err = || Error::MalformedPrompt(format!("bad noun phrase: {}", tokens_to_string(tokens)));
    let head = *tokens.get(*pos).ok_or_else(err)?;
    let (count, plural) = if head == A {
        (1u8, false)
    } else if let Some(c) = count_from_token(head) {
        if c == 1 {
            return Err(err());
        }
        (c, true)
    } else {
        return Err(err());
    };
    let color = Color::from_token(*tokens.get(*pos + 1).ok_or_else(err)?).ok_or_else(err)?;
    let shape_tok = *tokens.get(*pos + 2).ok_or_else(err)?;
    let shape = if plural {
        Shape::from_token_any(shape_tok)
            .filter(|_| Shape::from_token(shape_tok).is_none())
            .ok_or_else(err)?
    } else {
        Shape::from_token(shape_tok).ok_or_else(err)?
    };
    *pos += 3;
    Ok(ObjectSpec { count, color, shape })
}

/// Parses a grammatical surface into its unique scene; total on outputs
/// of the template grammar, `MalformedPrompt` otherwise.
pub fn extract_elements(surface: &[TokenId]) -> Result<SceneSpec> {
    let mut pos = 0;
    let first = parse_noun_phrase(surface, &mut pos)?;
    if pos == surface.len() {
        let scene = SceneSpec {
            objects: vec![first],
            relations: vec![],
        };
        scene.validate()?;
        return Ok(scene);
    }
    let connective = surface[pos];
    pos += 1;
    let second = parse_noun_phrase(surface, &mut pos)?;
    if pos != surface.len() {
        return Err(Error::MalformedPrompt(format!(
            "trailing tokens: {}",
            tokens_to_string(surface)
        )));
    }
    let relations = if connective == AND {
        vec![]
    } else if let Some(rel) = Relation::from_token(connective) {
        vec![RelationSpec {
            subject: 0,
            relation: rel,
            object: 1,
        }]
    } else {
        return Err(Error::MalformedPrompt(format!(
            "bad connective: {}",
            tokens_to_string(surface)
        )));
    };
    let scene = SceneSpec {
        objects: vec![first, second],
        relations,
    };
    scene.validate()?;
    Ok(scene)
}

/// Questions induced by a scene: one color and one count question per
/// object, one relation question per relation, each emitted for both the
/// text and image targets. Object questions come first, in index order.
pub fn derive_questions(scene: &SceneSpec) -> Vec<QAItem> {
    let mut out = Vec::new();
    let mut push_both = |question: Vec<TokenId>, answer: TokenId| {
        out.push(QAItem {
            question: question.clone(),
            reference_answer: answer,
            target: QATarget::Text,
        });
        out.push(QAItem {
            question,
            reference_answer: answer,
            target: QATarget::Image,
        });
    };
    for obj in &scene.objects {
        push_both(
            vec![WHAT, COLOR_WORD, IS, THE, obj.shape.token(), QMARK],
            obj.color.token(),
        );
        push_both(
            vec![HOW, MANY, obj.color.token(), obj.shape.plural_token(), QMARK],
            count_token(obj.count).expect("count in range"),
        );
    }
    for rel in &scene.relations {
        let s = &scene.objects[rel.subject];
        let o = &scene.objects[rel.object];
        push_both(
            vec![
                WHERE,
                IS,
                THE,
                s.color.token(),
                s.shape.token(),
                RELATIVE,
                TO,
                THE,
                o.color.token(),
                o.shape.token(),
                QMARK,
            ],
            rel.relation.token(),
        );
    }
    out
}

/// One corpus line: surface tokens, a tab, then the scene as JSON.
pub fn corpus_line(prompt: &Prompt) -> String {
    format!(
        "{}\t{}",
        tokens_to_string(&prompt.surface),
        serde_json::to_string(&prompt.truth).expect("scene serializes")
    )
}

pub fn parse_corpus_line(line: &str) -> Result<Prompt> {
    let (surface_str, scene_json) = line
        .split_once('\t')
        .ok_or_else(|| Error::Format(format!("corpus line missing tab: {line}")))?;
    let surface = tokens_from_string(surface_str)
        .ok_or_else(|| Error::Format(format!("unknown token in: {surface_str}")))?;
    let truth: SceneSpec = serde_json::from_str(scene_json)?;
    truth.validate()?;
    Ok(Prompt { surface, truth })
}

pub fn write_corpus<W: Write>(prompts: &[Prompt], mut w: W) -> Result<()> {
    for p in prompts {
        writeln!(w, "{}", corpus_line(p))?;
    }
    Ok(())
}

pub fn read_corpus<R: BufRead>(r: R) -> Result<Vec<Prompt>> {
    r.lines()
        .filter(|l| l.as_ref().map(|l| !l.trim().is_empty()).unwrap_or(true))
        .map(|l| parse_corpus_line(&l?))
        .collect()
}
