//! Tokenization, sentence segmentation and BIO encoding with character-offset
//! bookkeeping. All offsets are Unicode scalar-value indices into the text.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::EntityAnnotation;
use crate::schema::{from_file_name, to_file_name};

/// Maps char offsets to byte offsets for one text.
#[derive(Debug, Clone)]
pub struct CharIndex<'a> {
    text: &'a str,
    bytes: Vec<usize>,
}

impl<'a> CharIndex<'a> {
    pub fn new(text: &'a str) -> Self {
        let mut bytes: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        bytes.push(text.len());
        CharIndex { text, bytes }
    }

    pub fn char_len(&self) -> usize {
        self.bytes.len() - 1
    }

    /// Substring over the half-open char range, or `None` when out of bounds.
    pub fn slice(&self, start: usize, end: usize) -> Option<&'a str> {
        if start > end || end > self.char_len() {
            return None;
        }
        Some(&self.text[self.bytes[start]..self.bytes[end]])
    }
}

pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub sentence_index: usize,
}

/// Splits text into tokens: maximal alphanumeric runs, single punctuation
/// characters, whitespace as separator. A new sentence starts after `.`, `!`
/// or `?` when followed by whitespace and an uppercase letter, and after any
/// newline.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut sentence = 0usize;
    let mut i = 0usize;
    let mut pending_break = false;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            if c == '\n' && !tokens.is_empty() {
                pending_break = true;
            }
            i += 1;
            continue;
        }
        let start = i;
        if c.is_alphanumeric() {
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
        } else {
            i += 1;
        }
        if let Some(prev) = tokens.last() {
            let prev: &Token = prev;
            if pending_break || ends_sentence(prev, &chars, start) {
                sentence += 1;
            }
        }
        pending_break = false;
        tokens.push(Token {
            text: chars[start..i].iter().collect(),
            start,
            end: i,
            sentence_index: sentence,
        });
    }
    tokens
}

fn ends_sentence(prev: &Token, chars: &[char], next_start: usize) -> bool {
    matches!(prev.text.as_str(), "." | "!" | "?")
        && next_start > prev.end
        && chars[prev.end..next_start].iter().all(|c| c.is_whitespace())
        && chars[next_start].is_uppercase()
}

/// Groups token index ranges by sentence.
pub fn sentence_ranges(tokens: &[Token]) -> Vec<std::ops::Range<usize>> {
    let mut ranges = Vec::new();
    let mut start = 0;
    for i in 1..=tokens.len() {
        if i == tokens.len() || tokens[i].sentence_index != tokens[start].sentence_index {
            if i > start {
                ranges.push(start..i);
            }
            start = i;
        }
    }
    ranges
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    B,
    I,
    O,
}

/// A BIO label; the category is in display form and absent for `O`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BioLabel {
    O,
    B(String),
    I(String),
}

impl BioLabel {
    pub fn tag(&self) -> Tag {
        match self {
            BioLabel::O => Tag::O,
            BioLabel::B(_) => Tag::B,
            BioLabel::I(_) => Tag::I,
        }
    }

    pub fn category(&self) -> Option<&str> {
        match self {
            BioLabel::O => None,
            BioLabel::B(c) | BioLabel::I(c) => Some(c),
        }
    }

    /// `I-X` may only follow `B-X` or `I-X`.
    pub fn may_follow(&self, prev: Option<&BioLabel>) -> bool {
        match self {
            BioLabel::I(cat) => matches!(prev, Some(BioLabel::B(p)) | Some(BioLabel::I(p)) if p == cat),
            _ => true,
        }
    }
}

impl fmt::Display for BioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioLabel::O => f.write_str("O"),
            BioLabel::B(c) => write!(f, "B-{}", to_file_name(c)),
            BioLabel::I(c) => write!(f, "I-{}", to_file_name(c)),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid BIO label `{0}`")]
pub struct LabelParseError(pub String);

impl FromStr for BioLabel {
    type Err = LabelParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(BioLabel::O);
        }
        match s.split_once('-') {
            Some(("B", cat)) if !cat.is_empty() => Ok(BioLabel::B(from_file_name(cat))),
            Some(("I", cat)) if !cat.is_empty() => Ok(BioLabel::I(from_file_name(cat))),
            _ => Err(LabelParseError(s.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BioError {
    #[error("entities `{first}` and `{second}` overlap after snapping to token boundaries")]
    OverlappingEntities { first: String, second: String },
    #[error("entity `{0}` covers no token")]
    EntityOutsideText(String),
    #[error("{tokens} tokens but {labels} labels")]
    LengthMismatch { tokens: usize, labels: usize },
}

/// Token index range `[first, last]` covered by the half-open char span.
pub fn covering_tokens(tokens: &[Token], start: usize, end: usize) -> Option<(usize, usize)> {
    let first = tokens.partition_point(|t| t.end <= start);
    if first >= tokens.len() || tokens[first].start >= end {
        return None;
    }
    let last = tokens.partition_point(|t| t.start < end) - 1;
    Some((first, last))
}

/// Entity whose boundaries have been extended to the enclosing tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnappedSpan {
    pub first_token: usize,
    pub last_token: usize,
    pub start: usize,
    pub end: usize,
    /// True when the original boundaries fell inside a token.
    pub moved: bool,
}

pub fn snap(tokens: &[Token], entity: &EntityAnnotation) -> Result<SnappedSpan, BioError> {
    let (first, last) = covering_tokens(tokens, entity.start, entity.end)
        .ok_or_else(|| BioError::EntityOutsideText(entity.entity_id.clone()))?;
    let start = tokens[first].start;
    let end = tokens[last].end;
    Ok(SnappedSpan {
        first_token: first,
        last_token: last,
        start,
        end,
        moved: start != entity.start || end != entity.end,
    })
}

/// Entities with spans snapped outward to token boundaries and surfaces
/// recomputed from `text`.
pub fn snap_entities(
    text: &str,
    tokens: &[Token],
    entities: &[EntityAnnotation],
) -> Result<Vec<EntityAnnotation>, BioError> {
    let index = CharIndex::new(text);
    entities
        .iter()
        .map(|e| {
            let s = snap(tokens, e)?;
            Ok(EntityAnnotation {
                entity_id: e.entity_id.clone(),
                category: e.category.clone(),
                start: s.start,
                end: s.end,
                surface: index.slice(s.start, s.end).unwrap_or_default().to_string(),
            })
        })
        .collect()
}

pub fn encode_bio(
    tokens: &[Token],
    entities: &[EntityAnnotation],
) -> Result<Vec<BioLabel>, BioError> {
    let mut labels = vec![BioLabel::O; tokens.len()];
    let mut owner: Vec<Option<usize>> = vec![None; tokens.len()];
    for (k, entity) in entities.iter().enumerate() {
        let span = snap(tokens, entity)?;
        for t in span.first_token..=span.last_token {
            if let Some(other) = owner[t] {
                return Err(BioError::OverlappingEntities {
                    first: entities[other].entity_id.clone(),
                    second: entity.entity_id.clone(),
                });
            }
            owner[t] = Some(k);
            labels[t] = if t == span.first_token {
                BioLabel::B(entity.category.clone())
            } else {
                BioLabel::I(entity.category.clone())
            };
        }
    }
    Ok(labels)
}

/// Turns a label sequence back into entities. An `I-X` that cannot continue
/// the previous label is read as `B-X`. Entity ids are assigned `T1`, `T2`, ...
/// in text order.
pub fn decode_bio(
    text: &str,
    tokens: &[Token],
    labels: &[BioLabel],
) -> Result<Vec<EntityAnnotation>, BioError> {
    if tokens.len() != labels.len() {
        return Err(BioError::LengthMismatch {
            tokens: tokens.len(),
            labels: labels.len(),
        });
    }
    let index = CharIndex::new(text);
    let mut spans: Vec<(String, usize, usize)> = Vec::new();
    let mut open: Option<(String, usize, usize)> = None;
    let mut prev: Option<&BioLabel> = None;
    for (t, label) in labels.iter().enumerate() {
        let continues = matches!(label, BioLabel::I(_))
            && label.may_follow(prev)
            && tokens[t].sentence_index == tokens[t.saturating_sub(1)].sentence_index;
        match label {
            BioLabel::O => {
                spans.extend(open.take());
            }
            BioLabel::I(_) if continues => {
                if let Some(span) = open.as_mut() {
                    span.2 = t;
                }
            }
            BioLabel::B(cat) | BioLabel::I(cat) => {
                spans.extend(open.take());
                open = Some((cat.clone(), t, t));
            }
        }
        prev = Some(label);
    }
    spans.extend(open);
    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(k, (category, first, last))| {
            let start = tokens[first].start;
            let end = tokens[last].end;
            EntityAnnotation {
                entity_id: format!("T{}", k + 1),
                category,
                start,
                end,
                surface: index.slice(start, end).unwrap_or_default().to_string(),
            }
        })
        .collect())
}

/// CoNLL-style export: `<surface>\t<start>\t<end>\t<label>` per token with a
/// blank line between sentences.
pub fn to_conll(tokens: &[Token], labels: &[BioLabel]) -> Result<String, BioError> {
    if tokens.len() != labels.len() {
        return Err(BioError::LengthMismatch {
            tokens: tokens.len(),
            labels: labels.len(),
        });
    }
    let mut out = String::new();
    for (i, (tok, label)) in tokens.iter().zip(labels).enumerate() {
        if i > 0 && tokens[i - 1].sentence_index != tok.sentence_index {
            out.push('\n');
        }
        out.push_str(&format!("{}\t{}\t{}\t{}\n", tok.text, tok.start, tok.end, label));
    }
    Ok(out)
}
