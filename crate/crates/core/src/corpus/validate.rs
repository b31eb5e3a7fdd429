use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::standoff::check_relation;
use super::AnnotatedDoc;
use crate::schema::{Role, Schema};
use crate::textproc::{snap, tokenize, CharIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    EmptyDocId,
    DuplicateDocId,
    DuplicateEntityId,
    SpanOutOfBounds,
    SurfaceMismatch,
    UnknownCategory,
    OverlappingEntities,
    EntityCoversNoToken,
    DanglingRelation,
    HeadMustBeAttribute,
    TailMustBeConcept,
    IncompatibleRelation,
    /// Warning only: boundary falls inside a token and will be snapped.
    MidTokenBoundary,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::EmptyDocId => "doc_id must be non-empty",
            Rule::DuplicateDocId => "doc_id must be unique",
            Rule::DuplicateEntityId => "annotation id must be unique",
            Rule::SpanOutOfBounds => "span out of bounds",
            Rule::SurfaceMismatch => "surface must equal text[start..end)",
            Rule::UnknownCategory => "category not in schema",
            Rule::OverlappingEntities => "entities must not overlap",
            Rule::EntityCoversNoToken => "entity covers no token",
            Rule::DanglingRelation => "relation endpoint missing",
            Rule::HeadMustBeAttribute => "head must be attribute",
            Rule::TailMustBeConcept => "tail must be concept",
            Rule::IncompatibleRelation => "relation not permitted by compat matrix",
            Rule::MidTokenBoundary => "boundary inside a token (snapped outward)",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub doc_id: String,
    pub rule: Rule,
    pub location: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.doc_id, self.location, self.rule)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every annotation invariant and compat rule. Violations are data:
/// this never fails.
pub fn validate_corpus(docs: &[AnnotatedDoc], schema: &Schema) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut doc_ids = HashSet::new();
    for doc in docs {
        let doc_id = doc.doc_id().to_string();
        let mut push = |rule: Rule, location: String| {
            let v = Violation {
                doc_id: doc_id.clone(),
                rule,
                location,
            };
            if rule == Rule::MidTokenBoundary {
                report.warnings.push(v);
            } else {
                report.violations.push(v);
            }
        };
        if doc.doc_id().is_empty() {
            push(Rule::EmptyDocId, String::new());
        } else if !doc_ids.insert(doc.doc_id()) {
            push(Rule::DuplicateDocId, String::new());
        }

        let index = CharIndex::new(&doc.document.text);
        let tokens = tokenize(&doc.document.text);
        let mut ids = HashSet::new();
        let mut snapped: Vec<(usize, usize, &str)> = Vec::new();
        for e in &doc.entities {
            let loc = e.entity_id.clone();
            if !ids.insert(e.entity_id.as_str()) {
                push(Rule::DuplicateEntityId, loc.clone());
            }
            if schema.role(&e.category).is_none() {
                push(Rule::UnknownCategory, format!("{loc} ({})", e.category));
            }
            if e.start >= e.end || e.end > index.char_len() {
                push(Rule::SpanOutOfBounds, format!("{loc} [{}, {})", e.start, e.end));
                continue;
            }
            if index.slice(e.start, e.end) != Some(e.surface.as_str()) {
                push(Rule::SurfaceMismatch, loc.clone());
            }
            match snap(&tokens, e) {
                Ok(span) => {
                    if span.moved {
                        push(Rule::MidTokenBoundary, loc.clone());
                    }
                    snapped.push((span.start, span.end, e.entity_id.as_str()));
                }
                Err(_) => push(Rule::EntityCoversNoToken, loc.clone()),
            }
        }
        snapped.sort();
        for pair in snapped.windows(2) {
            if pair[1].0 < pair[0].1 {
                push(Rule::OverlappingEntities, format!("{} / {}", pair[0].2, pair[1].2));
            }
        }

        let by_id: HashMap<&str, _> = doc.entities.iter().map(|e| (e.entity_id.as_str(), e)).collect();
        for r in &doc.relations {
            let loc = r.relation_id.clone();
            if !ids.insert(r.relation_id.as_str()) {
                push(Rule::DuplicateEntityId, loc.clone());
            }
            let (head, tail) = match (by_id.get(r.head.as_str()), by_id.get(r.tail.as_str())) {
                (Some(h), Some(t)) => (*h, *t),
                _ => {
                    push(Rule::DanglingRelation, loc);
                    continue;
                }
            };
            if check_relation(schema, r, head, tail).is_ok() {
                continue;
            }
            if schema.role(&head.category) != Some(Role::Attribute) {
                push(Rule::HeadMustBeAttribute, loc.clone());
            }
            if schema.role(&tail.category) != Some(Role::Concept) {
                push(Rule::TailMustBeConcept, loc.clone());
            }
            if schema.role(&head.category) == Some(Role::Attribute)
                && schema.role(&tail.category) == Some(Role::Concept)
            {
                push(Rule::IncompatibleRelation, loc);
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, EntityAnnotation, RelationAnnotation};

    const TEXT: &str = "Pt is an everyday smoker, 1 packs/day. Has a college degree.";

    fn ent(id: &str, cat: &str, start: usize, end: usize) -> EntityAnnotation {
        EntityAnnotation {
            entity_id: id.into(),
            category: cat.into(),
            start,
            end,
            surface: CharIndex::new(TEXT).slice(start, end).unwrap_or("?").into(),
        }
    }

    fn rel(id: &str, head: &str, tail: &str) -> RelationAnnotation {
        RelationAnnotation {
            relation_id: id.into(),
            rel_type: "Attr-of".into(),
            head: head.into(),
            tail: tail.into(),
        }
    }

    fn doc(entities: Vec<EntityAnnotation>, relations: Vec<RelationAnnotation>) -> AnnotatedDoc {
        AnnotatedDoc {
            document: Document::new("d1", TEXT),
            entities,
            relations,
        }
    }

    fn rules(report: &ValidationReport) -> Vec<Rule> {
        report.violations.iter().map(|v| v.rule).collect()
    }

    #[test]
    fn valid_document_is_clean() {
        let d = doc(
            vec![ent("T1", "Tobacco use", 9, 24), ent("T2", "Pack per day", 26, 37)],
            vec![rel("R1", "T2", "T1")],
        );
        let report = validate_corpus(&[d], &Schema::default_sdoh());
        assert!(report.is_clean(), "{report:?}");
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn head_must_be_attribute() {
        let d = doc(
            vec![ent("T1", "Tobacco use", 9, 24), ent("T2", "Education", 45, 59)],
            vec![rel("R1", "T1", "T2")],
        );
        let report = validate_corpus(&[d], &Schema::default_sdoh());
        assert!(rules(&report).contains(&Rule::HeadMustBeAttribute));
        assert_eq!(report.violations[0].to_string(), "d1\tR1\thead must be attribute");
    }

    #[test]
    fn compat_miss() {
        let d = doc(
            vec![ent("T1", "Pack per day", 26, 37), ent("T2", "Education", 45, 59)],
            vec![rel("R1", "T1", "T2")],
        );
        let report = validate_corpus(&[d], &Schema::default_sdoh());
        assert_eq!(rules(&report), vec![Rule::IncompatibleRelation]);
    }

    #[test]
    fn span_and_overlap_problems() {
        let mut bad_surface = ent("T3", "Race", 0, 2);
        bad_surface.surface = "zz".into();
        let d = doc(
            vec![
                ent("T1", "Tobacco use", 9, 24),
                ent("T2", "Drug use", 18, 24),
                bad_surface,
                ent("T4", "Race", 50, 99),
                ent("T5", "Martian", 0, 2),
            ],
            vec![rel("R1", "T9", "T1")],
        );
        let report = validate_corpus(&[d.clone(), d], &Schema::default_sdoh());
        let r = rules(&report);
        for expected in [
            Rule::OverlappingEntities,
            Rule::SurfaceMismatch,
            Rule::SpanOutOfBounds,
            Rule::UnknownCategory,
            Rule::DanglingRelation,
            Rule::DuplicateDocId,
        ] {
            assert!(r.contains(&expected), "missing {expected:?} in {r:?}");
        }
    }

    #[test]
    fn mid_token_boundary_is_a_warning() {
        let d = doc(vec![ent("T1", "Tobacco use", 11, 24)], vec![]);
        let report = validate_corpus(&[d], &Schema::default_sdoh());
        assert!(report.is_clean());
        assert_eq!(report.warnings[0].rule, Rule::MidTokenBoundary);
    }
}
