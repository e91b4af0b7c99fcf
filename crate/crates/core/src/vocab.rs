//! Token vocabulary, the tagged reasoning format, and parsing of sampled
//! sequences into thought/description spans.
//!
//! The token space is a single contiguous id range with three disjoint
//! regions: text tokens, control tokens, and image (grid cell) tokens.
//! Image generation starts at the `<img_start>` control token, which is
//! appended deterministically when the text phase ends and is never sampled.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type TokenId = usize;

// Token id layout. The flat ordering below is load-bearing: embeddings,
// checkpoints, and the vocabulary hash all depend on it.
pub const PAD: TokenId = 0;

pub const RED: TokenId = 1;
pub const GREEN: TokenId = 2;
pub const BLUE: TokenId = 3;
pub const YELLOW: TokenId = 4;

pub const CIRCLE: TokenId = 5;
pub const SQUARE: TokenId = 6;
pub const TRIANGLE: TokenId = 7;
pub const CIRCLES: TokenId = 8;
pub const SQUARES: TokenId = 9;
pub const TRIANGLES: TokenId = 10;

pub const ONE: TokenId = 11;
pub const TWO: TokenId = 12;
pub const THREE: TokenId = 13;

pub const LEFT_OF: TokenId = 14;
pub const RIGHT_OF: TokenId = 15;
pub const ABOVE: TokenId = 16;
pub const BELOW: TokenId = 17;

pub const A: TokenId = 18;
pub const AND: TokenId = 19;
pub const THE: TokenId = 20;
pub const WHAT: TokenId = 21;
pub const COLOR_WORD: TokenId = 22;
pub const IS: TokenId = 23;
pub const HOW: TokenId = 24;
pub const MANY: TokenId = 25;
pub const WHERE: TokenId = 26;
pub const RELATIVE: TokenId = 27;
pub const TO: TokenId = 28;
pub const QMARK: TokenId = 29;

pub const END_TEXT: TokenId = 30;

pub const THOUGHT_OPEN: TokenId = 31;
pub const THOUGHT_CLOSE: TokenId = 32;
pub const DESC_OPEN: TokenId = 33;
pub const DESC_CLOSE: TokenId = 34;
pub const IMG_START: TokenId = 35;

pub const EMPTY_CELL: TokenId = 36;
const FIRST_CELL: TokenId = 37;

pub const TEXT_RANGE: std::ops::RangeInclusive<TokenId> = 1..=30;
pub const CONTROL_RANGE: std::ops::RangeInclusive<TokenId> = 31..=35;
pub const IMAGE_RANGE: std::ops::RangeInclusive<TokenId> = 36..=48;

pub const VOCAB_SIZE: usize = 49;

const TOKEN_NAMES: [&str; VOCAB_SIZE] = [
    "<pad>",
    "red",
    "green",
    "blue",
    "yellow",
    "circle",
    "square",
    "triangle",
    "circles",
    "squares",
    "triangles",
    "one",
    "two",
    "three",
    "left-of",
    "right-of",
    "above",
    "below",
    "a",
    "and",
    "the",
    "what",
    "color",
    "is",
    "how",
    "many",
    "where",
    "relative",
    "to",
    "?",
    "<end_text>",
    "<thought>",
    "</thought>",
    "<description>",
    "</description>",
    "<img_start>",
    "<empty>",
    "<cell:circle:red>",
    "<cell:circle:green>",
    "<cell:circle:blue>",
    "<cell:circle:yellow>",
    "<cell:square:red>",
    "<cell:square:green>",
    "<cell:square:blue>",
    "<cell:square:yellow>",
    "<cell:triangle:red>",
    "<cell:triangle:green>",
    "<cell:triangle:blue>",
    "<cell:triangle:yellow>",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

pub const COLORS: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];

impl Color {
    pub fn token(self) -> TokenId {
        RED + self as usize
    }

    pub fn from_token(t: TokenId) -> Option<Color> {
        match t {
            RED => Some(Color::Red),
            GREEN => Some(Color::Green),
            BLUE => Some(Color::Blue),
            YELLOW => Some(Color::Yellow),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

pub const SHAPES: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

impl Shape {
    pub fn token(self) -> TokenId {
        CIRCLE + self as usize
    }

    pub fn plural_token(self) -> TokenId {
        CIRCLES + self as usize
    }

    pub fn from_token(t: TokenId) -> Option<Shape> {
        match t {
            CIRCLE => Some(Shape::Circle),
            SQUARE => Some(Shape::Square),
            TRIANGLE => Some(Shape::Triangle),
            _ => None,
        }
    }

    /// Accepts both the singular and plural surface forms.
    pub fn from_token_any(t: TokenId) -> Option<Shape> {
        Shape::from_token(t).or(match t {
            CIRCLES => Some(Shape::Circle),
            SQUARES => Some(Shape::Square),
            TRIANGLES => Some(Shape::Triangle),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

pub const RELATIONS: [Relation; 4] = [
    Relation::LeftOf,
    Relation::RightOf,
    Relation::Above,
    Relation::Below,
];

impl Relation {
    pub fn token(self) -> TokenId {
        LEFT_OF + self as usize
    }

    pub fn from_token(t: TokenId) -> Option<Relation> {
        match t {
            LEFT_OF => Some(Relation::LeftOf),
            RIGHT_OF => Some(Relation::RightOf),
            ABOVE => Some(Relation::Above),
            BELOW => Some(Relation::Below),
            _ => None,
        }
    }

    pub fn inverse(self) -> Relation {
        match self {
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
            Relation::Above => Relation::Below,
            Relation::Below => Relation::Above,
        }
    }
}

/// Count words map counts 1..=3 to their spelled tokens.
pub fn count_token(count: u8) -> Option<TokenId> {
    match count {
        1 => Some(ONE),
        2 => Some(TWO),
        3 => Some(THREE),
        _ => None,
    }
}

pub fn count_from_token(t: TokenId) -> Option<u8> {
    match t {
        ONE => Some(1),
        TWO => Some(2),
        THREE => Some(3),
        _ => None,
    }
}

/// Token id of the grid cell holding the given shape/color combination.
pub fn cell_token(shape: Shape, color: Color) -> TokenId {
    FIRST_CELL + (shape as usize) * 4 + color as usize
}

/// Contents of a grid cell token: `None` for `<empty>`, otherwise shape/color.
/// Returns `None` outermost if the token is not an image token.
pub fn cell_content(t: TokenId) -> Option<Option<(Shape, Color)>> {
    if t == EMPTY_CELL {
        Some(None)
    } else if IMAGE_RANGE.contains(&t) {
        let off = t - FIRST_CELL;
        Some(Some((SHAPES[off / 4], COLORS[off % 4])))
    } else {
        None
    }
}

pub fn is_text_token(t: TokenId) -> bool {
    TEXT_RANGE.contains(&t)
}

pub fn is_control_token(t: TokenId) -> bool {
    CONTROL_RANGE.contains(&t)
}

pub fn is_image_token(t: TokenId) -> bool {
    IMAGE_RANGE.contains(&t)
}

pub fn token_name(t: TokenId) -> &'static str {
    TOKEN_NAMES[t]
}

pub fn token_from_name(name: &str) -> Option<TokenId> {
    TOKEN_NAMES.iter().position(|n| *n == name)
}

pub fn tokens_to_string(tokens: &[TokenId]) -> String {
    tokens
        .iter()
        .map(|&t| token_name(t))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn tokens_from_string(s: &str) -> Option<Vec<TokenId>> {
    s.split_whitespace().map(token_from_name).collect()
}

/// Canonical serialization: one `id<TAB>name` line per token, in id order.
pub fn vocab_serialization() -> String {
    let mut out = String::new();
    for (id, name) in TOKEN_NAMES.iter().enumerate() {
        out.push_str(&format!("{id}\t{name}\n"));
    }
    out
}

/// SHA-256 of the canonical serialization, hex-encoded. Checkpoints embed
/// this so loads against a different vocabulary are rejected.
pub fn vocab_hash() -> String {
    let digest = Sha256::digest(vocab_serialization().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Text,
    Image,
}

/// Admissible token ids for a sampling phase, in ascending id order.
///
/// The text phase admits text and control tokens except `<img_start>`
/// (which is appended deterministically, never sampled). The image phase
/// admits exactly the 13 cell tokens. `<pad>` is never admissible.
pub fn phase_mask(phase: Phase) -> &'static [TokenId] {
    const TEXT_ADMISSIBLE: [TokenId; 34] = {
        let mut out = [0; 34];
        let mut i = 0;
        let mut t = 1;
        while t <= 34 {
            out[i] = t;
            i += 1;
            t += 1;
        }
        out
    };
    const IMAGE_ADMISSIBLE: [TokenId; 13] = {
        let mut out = [0; 13];
        let mut i = 0;
        while i < 13 {
            out[i] = EMPTY_CELL + i;
            i += 1;
        }
        out
    };
    match phase {
        Phase::Text => &TEXT_ADMISSIBLE,
        Phase::Image => &IMAGE_ADMISSIBLE,
    }
}

/// One sampled response: the prompt, the text-phase sequence, the fixed
/// length image-phase sequence, and per-token log-probabilities under the
/// sampling-time policy snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub prompt: crate::toyscene::Prompt,
    pub text_seq: Vec<TokenId>,
    pub image_seq: Vec<TokenId>,
    pub logp_old_text: Vec<f64>,
    pub logp_old_img: Vec<f64>,
}

impl Rollout {
    pub fn token_count(&self) -> usize {
        self.text_seq.len() + self.image_seq.len()
    }
}

/// Thought/description spans extracted from a text-phase sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedReasoning {
    pub thought: Option<Vec<TokenId>>,
    pub description: Option<Vec<TokenId>>,
}

impl ParsedReasoning {
    /// Re-emits the canonical tagged form of the present spans.
    pub fn to_canonical_tokens(&self) -> Vec<TokenId> {
        let mut out = Vec::new();
        if let Some(t) = &self.thought {
            out.push(THOUGHT_OPEN);
            out.extend_from_slice(t);
            out.push(THOUGHT_CLOSE);
        }
        if let Some(d) = &self.description {
            out.push(DESC_OPEN);
            out.extend_from_slice(d);
            out.push(DESC_CLOSE);
        }
        out.push(END_TEXT);
        out
    }
}

fn span_between(seq: &[TokenId], open: TokenId, close: TokenId, from: usize) -> Option<(usize, Vec<TokenId>)> {
    let start = seq.iter().skip(from).position(|&t| t == open)? + from;
    let end = seq.iter().skip(start + 1).position(|&t| t == close)? + start + 1;
    if end == start + 1 {
        // Empty span counts as absent; the first open tag is binding, so
        // later pairs are never considered.
        return None;
    }
    Some((end + 1, seq[start + 1..end].to_vec()))
}

/// Extracts the earliest well-formed thought and description spans.
///
/// Malformed or misordered tags yield absent spans rather than errors; the
/// format reward penalizes them. The description is searched after the
/// thought span when one exists, otherwise anywhere.
pub fn parse_reasoning(text_seq: &[TokenId]) -> ParsedReasoning {
    let thought = span_between(text_seq, THOUGHT_OPEN, THOUGHT_CLOSE, 0);
    let desc_from = thought.as_ref().map(|(end, _)| *end).unwrap_or(0);
    let description = span_between(text_seq, DESC_OPEN, DESC_CLOSE, desc_from);
    ParsedReasoning {
        thought: thought.map(|(_, s)| s),
        description: description.map(|(_, s)| s),
    }
}
