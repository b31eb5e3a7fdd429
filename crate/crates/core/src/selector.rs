//! Keyword-driven note selection, snowball keyword expansion and stratified
//! sampling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedDoc, Document};
use crate::textproc::tokenize;

const EXAMPLE_LEXICON: &str = include_str!("../data/example_lexicon.txt");

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("min_unique must be at least 1")]
    InvalidMinUnique,
    #[error("sample of {requested} requested from {available} items")]
    SampleTooLarge { requested: usize, available: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Seed,
    Snowball,
    Manual,
}

/// Lowercase, whitespace-collapsed form used for lexicon phrases.
pub fn normalize_phrase(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KeywordLexicon {
    provenance: BTreeMap<String, Provenance>,
    pub version: String,
}

impl KeywordLexicon {
    pub fn new(version: impl Into<String>) -> Self {
        KeywordLexicon {
            provenance: BTreeMap::new(),
            version: version.into(),
        }
    }

    /// Small built-in lexicon for tests and demos. It is not the keyword
    /// list behind any published corpus.
    pub fn example() -> Self {
        Self::from_lines(EXAMPLE_LEXICON, "example (non-canonical)").expect("example lexicon parses")
    }

    /// Parses one phrase per line; blank lines and `#` comments are skipped.
    pub fn from_lines(content: &str, version: impl Into<String>) -> Result<Self, SelectorError> {
        let mut lex = Self::new(version);
        for line in content.lines() {
            let phrase = line.split('#').next().unwrap_or("");
            if phrase.trim().is_empty() {
                continue;
            }
            lex.insert(phrase, Provenance::Seed);
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SelectorError> {
        let path = path.as_ref();
        Self::from_lines(&fs::read_to_string(path)?, path.display().to_string())
    }

    pub fn to_lines(&self) -> String {
        self.provenance.keys().map(|k| format!("{k}\n")).collect()
    }

    /// Adds a phrase after normalization. Returns false for blank phrases
    /// and for phrases already present (whose provenance is kept).
    pub fn insert(&mut self, phrase: &str, provenance: Provenance) -> bool {
        let p = normalize_phrase(phrase);
        if p.is_empty() || self.provenance.contains_key(&p) {
            return false;
        }
        self.provenance.insert(p, provenance);
        true
    }

    pub fn contains(&self, phrase: &str) -> bool {
        self.provenance.contains_key(&normalize_phrase(phrase))
    }

    pub fn keywords(&self) -> impl Iterator<Item = &str> {
        self.provenance.keys().map(String::as_str)
    }

    pub fn provenance(&self, phrase: &str) -> Option<Provenance> {
        self.provenance.get(&normalize_phrase(phrase)).copied()
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// Phrase tokens must equal a run of text tokens.
    #[default]
    WholeToken,
    /// Plain case-insensitive substring search.
    Substring,
}

impl FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whole-token" => Ok(MatchMode::WholeToken),
            "substring" => Ok(MatchMode::Substring),
            other => Err(format!("unknown match mode `{other}`")),
        }
    }
}

/// What counts as one unique mention when selecting notes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Uniqueness {
    /// Distinct lexicon phrases.
    #[default]
    Phrase,
    /// Distinct matched spans.
    Offset,
}

impl FromStr for Uniqueness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "phrase" => Ok(Uniqueness::Phrase),
            "offset" => Ok(Uniqueness::Offset),
            other => Err(format!("unknown uniqueness `{other}`")),
        }
    }
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchMode::WholeToken => "whole-token",
            MatchMode::Substring => "substring",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct KeywordMatch {
    pub start: usize,
    pub end: usize,
    pub phrase: String,
}

/// Whole-token, case-insensitive matches ordered by offset.
pub fn match_keywords(text: &str, lexicon: &KeywordLexicon) -> Vec<KeywordMatch> {
    match_keywords_with(text, lexicon, MatchMode::WholeToken)
}

pub fn match_keywords_with(text: &str, lexicon: &KeywordLexicon, mode: MatchMode) -> Vec<KeywordMatch> {
    let mut out = match mode {
        MatchMode::WholeToken => whole_token_matches(text, lexicon),
        MatchMode::Substring => substring_matches(text, lexicon),
    };
    out.sort();
    out
}

fn whole_token_matches(text: &str, lexicon: &KeywordLexicon) -> Vec<KeywordMatch> {
    let tokens = tokenize(text);
    let lower: Vec<String> = tokens.iter().map(|t| t.text.to_lowercase()).collect();
    let mut out = Vec::new();
    for phrase in lexicon.keywords() {
        let pt: Vec<String> = tokenize(phrase).into_iter().map(|t| t.text).collect();
        if pt.is_empty() || pt.len() > lower.len() {
            continue;
        }
        for i in 0..=lower.len() - pt.len() {
            if lower[i..i + pt.len()] == pt[..] {
                out.push(KeywordMatch {
                    start: tokens[i].start,
                    end: tokens[i + pt.len() - 1].end,
                    phrase: phrase.to_string(),
                });
            }
        }
    }
    out
}

fn fold(c: char) -> char {
    let mut l = c.to_lowercase();
    match (l.next(), l.next()) {
        (Some(x), None) => x,
        _ => c,
    }
}

fn substring_matches(text: &str, lexicon: &KeywordLexicon) -> Vec<KeywordMatch> {
    let chars: Vec<char> = text.chars().map(fold).collect();
    let mut out = Vec::new();
    for phrase in lexicon.keywords() {
        let pc: Vec<char> = phrase.chars().map(fold).collect();
        if pc.is_empty() || pc.len() > chars.len() {
            continue;
        }
        for i in 0..=chars.len() - pc.len() {
            if chars[i..i + pc.len()] == pc[..] {
                out.push(KeywordMatch {
                    start: i,
                    end: i + pc.len(),
                    phrase: phrase.to_string(),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectOptions {
    pub mode: MatchMode,
    pub uniqueness: Uniqueness,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NoteSelection {
    pub doc_id: String,
    pub unique_mentions: usize,
    pub total_matches: usize,
    pub phrases: Vec<String>,
}

/// Match summary for one note.
pub fn summarize_note(doc: &Document, lexicon: &KeywordLexicon, opts: SelectOptions) -> NoteSelection {
    let matches = match_keywords_with(&doc.text, lexicon, opts.mode);
    let phrases: BTreeSet<&str> = matches.iter().map(|m| m.phrase.as_str()).collect();
    let unique_mentions = match opts.uniqueness {
        Uniqueness::Phrase => phrases.len(),
        Uniqueness::Offset => matches.iter().map(|m| (m.start, m.end)).collect::<BTreeSet<_>>().len(),
    };
    NoteSelection {
        doc_id: doc.doc_id.clone(),
        unique_mentions,
        total_matches: matches.len(),
        phrases: phrases.into_iter().map(str::to_string).collect(),
    }
}

/// Notes with at least `min_unique` unique keyword mentions, in input order.
pub fn select_notes(
    notes: &[Document],
    lexicon: &KeywordLexicon,
    min_unique: usize,
    opts: SelectOptions,
) -> Result<Vec<NoteSelection>, SelectorError> {
    if min_unique == 0 {
        return Err(SelectorError::InvalidMinUnique);
    }
    Ok(notes
        .iter()
        .map(|d| summarize_note(d, lexicon, opts))
        .filter(|s| s.unique_mentions >= min_unique)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SnowballCandidate {
    pub phrase: String,
    pub frequency: usize,
}

/// Normalized gold-entity surfaces that no lexicon phrase matches, most
/// frequent first (ties alphabetical). Accepting them is left to a human.
pub fn snowball_expand(lexicon: &KeywordLexicon, docs: &[AnnotatedDoc]) -> Vec<SnowballCandidate> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for doc in docs {
        for e in &doc.entities {
            let phrase = normalize_phrase(&e.surface);
            if phrase.is_empty() {
                continue;
            }
            if let Some(c) = counts.get_mut(&phrase) {
                *c += 1;
            } else if match_keywords(&phrase, lexicon).is_empty() {
                counts.insert(phrase, 1);
            }
        }
    }
    let mut out: Vec<SnowballCandidate> = counts
        .into_iter()
        .map(|(phrase, frequency)| SnowballCandidate { phrase, frequency })
        .collect();
    out.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.phrase.cmp(&b.phrase)));
    out
}

/// Per-stratum quotas proportional to stratum size, rounded by largest
/// remainder (ties go to the stratum that sorts first).
pub fn stratum_quotas(sizes: &BTreeMap<String, usize>, n: usize) -> Result<BTreeMap<String, usize>, SelectorError> {
    let total: usize = sizes.values().sum();
    if n > total {
        return Err(SelectorError::SampleTooLarge {
            requested: n,
            available: total,
        });
    }
    if total == 0 {
        return Ok(sizes.keys().map(|k| (k.clone(), 0)).collect());
    }
    let mut quotas: BTreeMap<String, usize> = BTreeMap::new();
    let mut remainders: Vec<(usize, &String)> = Vec::new();
    for (k, &size) in sizes {
        let exact = n as u128 * size as u128;
        quotas.insert(k.clone(), (exact / total as u128) as usize);
        remainders.push(((exact % total as u128) as usize, k));
    }
    let assigned: usize = quotas.values().sum();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    for (_, k) in remainders.into_iter().take(n - assigned) {
        *quotas.get_mut(k).expect("known stratum") += 1;
    }
    Ok(quotas)
}

/// Draws `n` items with proportional per-stratum quotas. Output keeps the
/// input order.
pub fn stratified_sample<T: Clone>(items: &[(T, String)], n: usize, seed: u64) -> Result<Vec<T>, SelectorError> {
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, (_, s)) in items.iter().enumerate() {
        strata.entry(s.clone()).or_default().push(i);
    }
    let sizes = strata.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    let quotas = stratum_quotas(&sizes, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n);
    for (k, mut idx) in strata {
        idx.shuffle(&mut rng);
        chosen.extend_from_slice(&idx[..quotas[&k]]);
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| items[i].0.clone()).collect())
}
