//! Seeded synthetic corpora with exact gold annotations.
//!
//! Each document is 1 to 5 carrier sentences. A carrier holds one
//! `{trigger}` placeholder for the concept and optional attribute
//! placeholders such as `{Duration}`; every attribute rendered in a sentence
//! is linked to that sentence's concept. With probability `shift` each
//! phrase is drawn from the alternate lexicon instead of the primary one,
//! which changes surfaces while keeping the annotation structure.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedDoc, Document, Domain, EntityAnnotation, RelationAnnotation};
use crate::par;
use crate::schema::{Role, Schema};

const DEFAULT_TEMPLATES: &str = include_str!("../data/templates.json");
const TRIGGER: &str = "trigger";
pub const MAX_SENTENCES: usize = 5;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no template for concept categories: {}", .0.join(", "))]
    TemplateCoverageGap(Vec<String>),
    #[error("template `{category}`, carrier `{carrier}`: {reason}")]
    PlaceholderMismatch {
        category: String,
        carrier: String,
        reason: String,
    },
    #[error("template `{category}`: {reason}")]
    InvalidTemplate { category: String, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("templates: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhrasePool {
    pub primary: Vec<String>,
    pub alternate: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub category: String,
    pub triggers: PhrasePool,
    #[serde(default)]
    pub slots: BTreeMap<String, PhrasePool>,
    pub carriers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub version: String,
    pub templates: Vec<TemplateSpec>,
}

impl TemplateSet {
    /// The shipped templates: invented phrases for all 19 concept categories.
    pub fn default_sdoh() -> Self {
        Self::from_json(DEFAULT_TEMPLATES).expect("shipped templates parse")
    }

    pub fn from_json(json: &str) -> Result<Self, SynthError> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Trigger,
    Slot(String),
}

fn parse_carrier(t: &TemplateSpec, carrier: &str) -> Result<Vec<Segment>, SynthError> {
    let err = |reason: String| SynthError::PlaceholderMismatch {
        category: t.category.clone(),
        carrier: carrier.to_string(),
        reason,
    };
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut rest = carrier;
    while let Some(open) = rest.find(['{', '}']) {
        if rest[open..].starts_with('}') {
            return Err(err("unmatched `}`".into()));
        }
        let close = rest[open..]
            .find('}')
            .map(|c| open + c)
            .ok_or_else(|| err("unclosed `{`".into()))?;
        if open > 0 {
            out.push(Segment::Text(rest[..open].to_string()));
        }
        let name = &rest[open + 1..close];
        if !seen.insert(name.to_string()) {
            return Err(err(format!("placeholder `{{{name}}}` used twice")));
        }
        if name == TRIGGER {
            out.push(Segment::Trigger);
        } else if t.slots.contains_key(name) {
            out.push(Segment::Slot(name.to_string()));
        } else {
            return Err(err(format!("placeholder `{{{name}}}` has no slot")));
        }
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        out.push(Segment::Text(rest.to_string()));
    }
    if !seen.contains(TRIGGER) {
        return Err(err("missing `{trigger}`".into()));
    }
    if !carrier.starts_with(|c: char| c.is_uppercase()) {
        return Err(err("carrier must start with an uppercase letter".into()));
    }
    Ok(out)
}

struct Compiled<'a> {
    spec: &'a TemplateSpec,
    carriers: Vec<Vec<Segment>>,
    rel_types: BTreeMap<&'a str, String>,
}

fn check_pool(category: &str, what: &str, pool: &PhrasePool) -> Result<(), SynthError> {
    for (side, list) in [("primary", &pool.primary), ("alternate", &pool.alternate)] {
        if list.is_empty() {
            return Err(SynthError::InvalidTemplate {
                category: category.to_string(),
                reason: format!("{what} {side} pool is empty"),
            });
        }
        if let Some(p) = list.iter().find(|p| p.trim().is_empty() || p.trim() != p.as_str() || p.contains(['\n', '\t', '{', '}'])) {
            return Err(SynthError::InvalidTemplate {
                category: category.to_string(),
                reason: format!("{what} {side} phrase `{p}` is blank, padded or contains a reserved character"),
            });
        }
    }
    Ok(())
}

fn compile<'a>(schema: &Schema, templates: &'a TemplateSet) -> Result<Vec<Compiled<'a>>, SynthError> {
    let mut out = Vec::new();
    let mut covered = BTreeSet::new();
    for t in &templates.templates {
        if schema.role(&t.category) != Some(Role::Concept) {
            return Err(SynthError::InvalidTemplate {
                category: t.category.clone(),
                reason: "not a concept category of the schema".into(),
            });
        }
        if !covered.insert(t.category.as_str()) {
            return Err(SynthError::InvalidTemplate {
                category: t.category.clone(),
                reason: "duplicate template".into(),
            });
        }
        if t.carriers.is_empty() {
            return Err(SynthError::InvalidTemplate {
                category: t.category.clone(),
                reason: "no carrier sentences".into(),
            });
        }
        check_pool(&t.category, "trigger", &t.triggers)?;
        let mut rel_types = BTreeMap::new();
        for (attr, pool) in &t.slots {
            check_pool(&t.category, attr, pool)?;
            let rel = schema.rel_types_for(attr, &t.category);
            let Some(rel) = rel.first() else {
                return Err(SynthError::InvalidTemplate {
                    category: t.category.clone(),
                    reason: format!("slot `{attr}` is not an attribute compatible with this category"),
                });
            };
            rel_types.insert(attr.as_str(), rel.to_string());
        }
        let carriers = t
            .carriers
            .iter()
            .map(|c| parse_carrier(t, c))
            .collect::<Result<_, _>>()?;
        out.push(Compiled {
            spec: t,
            carriers,
            rel_types,
        });
    }
    let missing: Vec<String> = schema
        .concepts()
        .filter(|c| !covered.contains(c))
        .map(str::to_string)
        .collect();
    if !missing.is_empty() {
        return Err(SynthError::TemplateCoverageGap(missing));
    }
    Ok(out)
}

/// Checks templates against a schema without generating anything.
pub fn check_templates(schema: &Schema, templates: &TemplateSet) -> Result<(), SynthError> {
    compile(schema, templates).map(|_| ())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthOptions {
    pub id_prefix: String,
    pub domain: Domain,
    pub docs_per_patient: usize,
    /// Worker threads: 0 uses the global pool, 1 runs sequentially.
    pub threads: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            id_prefix: "doc".into(),
            domain: Domain::Other("synthetic".into()),
            docs_per_patient: 1,
            threads: 0,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for document `index`, independent of how many other documents are
/// generated.
pub fn document_seed(seed: u64, index: usize) -> u64 {
    splitmix64(splitmix64(seed) ^ index as u64)
}

fn pick<'p>(rng: &mut ChaCha8Rng, pool: &'p PhrasePool, shift: f64) -> &'p str {
    let alternate = rng.gen::<f64>() < shift;
    let list = if alternate { &pool.alternate } else { &pool.primary };
    list.choose(rng).expect("pools checked non-empty")
}

fn render(compiled: &[Compiled<'_>], index: usize, seed: u64, shift: f64, opts: &SynthOptions) -> AnnotatedDoc {
    let mut rng = ChaCha8Rng::seed_from_u64(document_seed(seed, index));
    let n_sentences = rng.gen_range(1..=MAX_SENTENCES);
    let mut text = String::new();
    let mut chars = 0usize;
    let mut entities = Vec::new();
    let mut relations = Vec::new();
    let mut append = |text: &mut String, s: &str| -> (usize, usize) {
        let start = chars;
        text.push_str(s);
        chars += s.chars().count();
        (start, chars)
    };
    for k in 0..n_sentences {
        if k > 0 {
            append(&mut text, " ");
        }
        let t = compiled.choose(&mut rng).expect("templates non-empty");
        let carrier = t.carriers.choose(&mut rng).expect("carriers non-empty");
        let mut trigger_id = String::new();
        let mut attrs: Vec<(String, String)> = Vec::new();
        for seg in carrier {
            match seg {
                Segment::Text(s) => {
                    append(&mut text, s);
                }
                Segment::Trigger => {
                    let phrase = pick(&mut rng, &t.spec.triggers, shift);
                    let (start, end) = append(&mut text, phrase);
                    trigger_id = format!("T{}", entities.len() + 1);
                    entities.push(EntityAnnotation {
                        entity_id: trigger_id.clone(),
                        category: t.spec.category.clone(),
                        start,
                        end,
                        surface: phrase.to_string(),
                    });
                }
                Segment::Slot(attr) => {
                    let phrase = pick(&mut rng, &t.spec.slots[attr], shift);
                    let (start, end) = append(&mut text, phrase);
                    let id = format!("T{}", entities.len() + 1);
                    entities.push(EntityAnnotation {
                        entity_id: id.clone(),
                        category: attr.clone(),
                        start,
                        end,
                        surface: phrase.to_string(),
                    });
                    attrs.push((id, attr.clone()));
                }
            }
        }
        for (id, attr) in attrs {
            relations.push(RelationAnnotation {
                relation_id: format!("R{}", relations.len() + 1),
                rel_type: t.rel_types[attr.as_str()].clone(),
                head: id,
                tail: trigger_id.clone(),
            });
        }
    }
    let doc_id = format!("{}{:05}", opts.id_prefix, index);
    let patient_id = format!("{}-pt{:05}", opts.id_prefix, index / opts.docs_per_patient.max(1));
    AnnotatedDoc {
        document: Document {
            doc_id,
            patient_id,
            domain: opts.domain.clone(),
            text,
        },
        entities,
        relations,
    }
}

/// Generates `n_docs` annotated documents. Output depends only on
/// (`schema`, `templates`, `n_docs`, `seed`, `shift`, `opts`).
pub fn generate_corpus(
    schema: &Schema,
    templates: &TemplateSet,
    n_docs: usize,
    seed: u64,
    shift: f64,
    opts: &SynthOptions,
) -> Result<Vec<AnnotatedDoc>, SynthError> {
    if n_docs == 0 {
        return Err(SynthError::InvalidArgument("n_docs must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&shift) {
        return Err(SynthError::InvalidArgument(format!("shift {shift} is outside [0, 1]")));
    }
    if opts.docs_per_patient == 0 {
        return Err(SynthError::InvalidArgument("docs_per_patient must be at least 1".into()));
    }
    let compiled = compile(schema, templates)?;
    let indices: Vec<usize> = (0..n_docs).collect();
    Ok(par::map_ordered(&indices, opts.threads, |&i| render(&compiled, i, seed, shift, opts)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Collision {
    pub phrase: String,
    pub first: String,
    pub second: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SeparabilityReport {
    pub collisions: Vec<Collision>,
}

impl SeparabilityReport {
    pub fn is_clean(&self) -> bool {
        self.collisions.is_empty()
    }
}

/// Lists phrases shared between lexicons that must be disjoint: triggers of
/// different categories, attribute pools of different attribute categories,
/// any trigger and any attribute phrase, and the primary and alternate side
/// of the same lexicon. Comparison is case-insensitive.
pub fn separability_check(templates: &TemplateSet) -> SeparabilityReport {
    // lexicon name -> phrases; attribute pools are pooled across templates
    let mut lexicons: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut add = |name: String, phrases: &[String]| {
        lexicons
            .entry(name)
            .or_default()
            .extend(phrases.iter().map(|p| p.to_lowercase()));
    };
    for t in &templates.templates {
        add(format!("{} (primary)", t.category), &t.triggers.primary);
        add(format!("{} (alternate)", t.category), &t.triggers.alternate);
        for (attr, pool) in &t.slots {
            add(format!("{attr} (primary)"), &pool.primary);
            add(format!("{attr} (alternate)"), &pool.alternate);
        }
    }
    let names: Vec<&String> = lexicons.keys().collect();
    let mut collisions = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            for phrase in lexicons[*a].intersection(&lexicons[*b]) {
                collisions.push(Collision {
                    phrase: phrase.clone(),
                    first: (*a).clone(),
                    second: (*b).clone(),
                });
            }
        }
    }
    SeparabilityReport { collisions }
}

/// Every phrase of the primary (`alternate == false`) or alternate lexicon,
/// triggers and attribute pools alike, lowercased.
pub fn lexicon_phrases(templates: &TemplateSet, alternate: bool) -> BTreeSet<String> {
    let side = |p: &PhrasePool| if alternate { p.alternate.clone() } else { p.primary.clone() };
    templates
        .templates
        .iter()
        .flat_map(|t| {
            std::iter::once(side(&t.triggers))
                .chain(t.slots.values().map(side))
                .flatten()
        })
        .map(|p| p.to_lowercase())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_corpus;
    use crate::textproc::CharIndex;

    fn corpus(n: usize, seed: u64, shift: f64) -> Vec<AnnotatedDoc> {
        generate_corpus(
            &Schema::default_sdoh(),
            &TemplateSet::default_sdoh(),
            n,
            seed,
            shift,
            &SynthOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn shipped_templates_are_separable_and_cover_schema() {
        let report = separability_check(&TemplateSet::default_sdoh());
        assert!(report.is_clean(), "{:?}", report.collisions);
        check_templates(&Schema::default_sdoh(), &TemplateSet::default_sdoh()).unwrap();
    }

    #[test]
    fn shared_phrase_is_a_collision() {
        let mut set = TemplateSet::default_sdoh();
        set.templates[0].triggers.primary.push("Daily".into());
        let report = separability_check(&set);
        assert!(report.collisions.iter().any(|c| c.phrase == "daily"));
        let empty = TemplateSet {
            version: String::new(),
            templates: vec![],
        };
        assert!(separability_check(&empty).is_clean());
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        assert_eq!(corpus(100, 5, 0.0), corpus(100, 5, 0.0));
        assert_ne!(corpus(20, 5, 0.0), corpus(20, 6, 0.0));
        // prefix of a longer run is the shorter run
        assert_eq!(corpus(10, 5, 0.3)[..], corpus(30, 5, 0.3)[..10]);
        let sequential = SynthOptions {
            threads: 1,
            ..Default::default()
        };
        let s = Schema::default_sdoh();
        let t = TemplateSet::default_sdoh();
        assert_eq!(
            generate_corpus(&s, &t, 60, 5, 0.3, &sequential).unwrap(),
            generate_corpus(&s, &t, 60, 5, 0.3, &SynthOptions::default()).unwrap()
        );
    }

    #[test]
    fn offsets_and_validation() {
        let docs = corpus(200, 11, 0.5);
        for d in &docs {
            let idx = CharIndex::new(&d.document.text);
            for e in &d.entities {
                assert_eq!(idx.slice(e.start, e.end), Some(e.surface.as_str()));
            }
            let n = crate::textproc::sentence_ranges(&crate::textproc::tokenize(&d.document.text)).len();
            assert!((1..=MAX_SENTENCES).contains(&n), "{n} sentences in {:?}", d.document.text);
        }
        let report = validate_corpus(&docs, &Schema::default_sdoh());
        assert!(report.is_clean(), "{:?}", report.violations);
        assert!(report.warnings.is_empty(), "{:?}", report.warnings);
    }

    #[test]
    fn shift_extremes() {
        let primary = lexicon_phrases(&TemplateSet::default_sdoh(), false);
        let alternate = lexicon_phrases(&TemplateSet::default_sdoh(), true);
        for d in corpus(100, 3, 0.0) {
            assert!(d.entities.iter().all(|e| primary.contains(&e.surface.to_lowercase())));
        }
        for d in corpus(100, 3, 1.0) {
            assert!(d.entities.iter().all(|e| alternate.contains(&e.surface.to_lowercase())));
        }
    }

    #[test]
    fn placeholder_errors() {
        let schema = Schema::default_sdoh();
        let mut set = TemplateSet::default_sdoh();
        set.templates[0].carriers = vec!["Pt is {Amount}.".into()];
        assert!(matches!(check_templates(&schema, &set), Err(SynthError::PlaceholderMismatch { .. })));
        set.templates[0].carriers = vec!["Pt {trigger} {trigger}.".into()];
        assert!(matches!(check_templates(&schema, &set), Err(SynthError::PlaceholderMismatch { .. })));
        set.templates[0].carriers = vec!["Pt {trigger".into()];
        assert!(matches!(check_templates(&schema, &set), Err(SynthError::PlaceholderMismatch { .. })));

        let mut set = TemplateSet::default_sdoh();
        set.templates.retain(|t| t.category != "Race");
        match check_templates(&schema, &set) {
            Err(SynthError::TemplateCoverageGap(m)) => assert_eq!(m, vec!["Race".to_string()]),
            other => panic!("{other:?}"),
        }

        let mut set = TemplateSet::default_sdoh();
        let pool = set.templates[0].slots["Duration"].clone();
        set.templates.iter_mut().find(|t| t.category == "Race").unwrap().slots.insert("Duration".into(), pool);
        assert!(matches!(check_templates(&schema, &set), Err(SynthError::InvalidTemplate { .. })));
    }

    #[test]
    fn relations_point_from_attribute_to_sentence_concept() {
        let schema = Schema::default_sdoh();
        for d in corpus(50, 9, 0.0) {
            for r in &d.relations {
                let head = d.entity(&r.head).unwrap();
                let tail = d.entity(&r.tail).unwrap();
                assert!(schema.permits(&head.category, &tail.category, &r.rel_type));
            }
            let attrs = d
                .entities
                .iter()
                .filter(|e| schema.role(&e.category) == Some(Role::Attribute))
                .count();
            assert_eq!(attrs, d.relations.len());
        }
    }
}
