use std::collections::HashSet;
use std::fmt::Write as _;

use thiserror::Error;

use super::{AnnotatedDoc, Document, EntityAnnotation, RelationAnnotation};
use crate::schema::{from_file_name, to_file_name, Role, Schema};
use crate::textproc::CharIndex;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StandoffError {
    #[error("line {line}: malformed annotation: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: span [{start}, {end}) is outside the text ({len} chars)")]
    SpanOutOfBounds { line: usize, start: usize, end: usize, len: usize },
    #[error("line {line}: surface `{surface}` does not match text `{actual}`")]
    SurfaceMismatch { line: usize, surface: String, actual: String },
    #[error("line {line}: unknown category `{category}`")]
    UnknownCategory { line: usize, category: String },
    #[error("line {line}: relation references missing entity `{id}`")]
    DanglingRelation { line: usize, id: String },
    #[error("line {line}: discontinuous spans are not supported")]
    DiscontinuousSpanUnsupported { line: usize },
    #[error("line {line}: duplicate annotation id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: relation {reason}")]
    InvalidRelation { line: usize, reason: String },
    #[error("annotation violates invariants: {0}")]
    InvariantViolation(String),
}

/// Parses a brat `.ann` file against its text. Supports `T` entity lines and
/// binary `R` relation lines; the relation's `Arg1` is the attribute and
/// `Arg2` the concept.
pub fn parse_standoff(
    document: Document,
    ann: &str,
    schema: &Schema,
) -> Result<AnnotatedDoc, StandoffError> {
    let index = CharIndex::new(&document.text);
    let mut entities: Vec<EntityAnnotation> = Vec::new();
    let mut relations = Vec::new();
    let mut ids = HashSet::new();
    let mut pending_rel = Vec::new();

    for (k, raw) in ann.lines().enumerate() {
        let line = k + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let malformed = |reason: &str| StandoffError::MalformedLine {
            line,
            reason: reason.to_string(),
        };
        let mut fields = raw.splitn(3, '\t');
        let id = fields.next().unwrap_or_default();
        let body = fields.next().ok_or_else(|| malformed("missing tab after id"))?;
        if !ids.insert(id.to_string()) {
            return Err(StandoffError::DuplicateId { line, id: id.to_string() });
        }
        match id.chars().next() {
            Some('T') => {
                let surface = fields.next().ok_or_else(|| malformed("missing surface text"))?;
                if body.contains(';') {
                    return Err(StandoffError::DiscontinuousSpanUnsupported { line });
                }
                let parts: Vec<&str> = body.split(' ').collect();
                if parts.len() != 3 {
                    return Err(malformed("expected `<Category> <start> <end>`"));
                }
                let start: usize = parts[1].parse().map_err(|_| malformed("bad start offset"))?;
                let end: usize = parts[2].parse().map_err(|_| malformed("bad end offset"))?;
                let category = from_file_name(parts[0]);
                if schema.role(&category).is_none() {
                    return Err(StandoffError::UnknownCategory {
                        line,
                        category: parts[0].to_string(),
                    });
                }
                if start >= end || end > index.char_len() {
                    return Err(StandoffError::SpanOutOfBounds {
                        line,
                        start,
                        end,
                        len: index.char_len(),
                    });
                }
                let actual = index.slice(start, end).unwrap_or_default();
                if actual != surface {
                    return Err(StandoffError::SurfaceMismatch {
                        line,
                        surface: surface.to_string(),
                        actual: actual.to_string(),
                    });
                }
                entities.push(EntityAnnotation {
                    entity_id: id.to_string(),
                    category,
                    start,
                    end,
                    surface: surface.to_string(),
                });
            }
            Some('R') => {
                let parts: Vec<&str> = body.split_whitespace().collect();
                let (rel_type, arg1, arg2) = match parts.as_slice() {
                    [t, a, b] => (*t, *a, *b),
                    _ => return Err(malformed("expected `<Type> Arg1:<id> Arg2:<id>`")),
                };
                let head = arg1.strip_prefix("Arg1:").ok_or_else(|| malformed("missing Arg1"))?;
                let tail = arg2.strip_prefix("Arg2:").ok_or_else(|| malformed("missing Arg2"))?;
                pending_rel.push((
                    line,
                    RelationAnnotation {
                        relation_id: id.to_string(),
                        rel_type: rel_type.to_string(),
                        head: head.to_string(),
                        tail: tail.to_string(),
                    },
                ));
            }
            _ => return Err(malformed("unsupported annotation kind")),
        }
    }

    // relations may precede the entities they reference in hand-edited files
    for (line, rel) in pending_rel {
        let find = |id: &str| entities.iter().find(|e| e.entity_id == id);
        let head = find(&rel.head).ok_or_else(|| StandoffError::DanglingRelation {
            line,
            id: rel.head.clone(),
        })?;
        let tail = find(&rel.tail).ok_or_else(|| StandoffError::DanglingRelation {
            line,
            id: rel.tail.clone(),
        })?;
        check_relation(schema, &rel, head, tail).map_err(|reason| StandoffError::InvalidRelation {
            line,
            reason,
        })?;
        relations.push(rel);
    }

    Ok(AnnotatedDoc {
        document,
        entities,
        relations,
    })
}

pub(crate) fn check_relation(
    schema: &Schema,
    rel: &RelationAnnotation,
    head: &EntityAnnotation,
    tail: &EntityAnnotation,
) -> Result<(), String> {
    if schema.role(&head.category) != Some(Role::Attribute) {
        return Err(format!("head `{}` must be an attribute", head.entity_id));
    }
    if schema.role(&tail.category) != Some(Role::Concept) {
        return Err(format!("tail `{}` must be a concept", tail.entity_id));
    }
    if !schema.permits(&head.category, &tail.category, &rel.rel_type) {
        return Err(format!(
            "`{}` from {} to {} is not permitted by the schema",
            rel.rel_type, head.category, tail.category
        ));
    }
    Ok(())
}

/// Writes entities then relations in brat standoff layout.
pub fn serialize_standoff(
    document: &Document,
    entities: &[EntityAnnotation],
    relations: &[RelationAnnotation],
) -> Result<String, StandoffError> {
    let index = CharIndex::new(&document.text);
    let mut out = String::new();
    let mut ids = HashSet::new();
    for e in entities {
        let bad = |why: &str| StandoffError::InvariantViolation(format!("{}: {why}", e.entity_id));
        if !e.entity_id.starts_with('T') || !ids.insert(e.entity_id.as_str()) {
            return Err(bad("entity id must be unique and start with `T`"));
        }
        if e.start >= e.end || index.slice(e.start, e.end) != Some(e.surface.as_str()) {
            return Err(bad("span does not match the text"));
        }
        if e.surface.contains(['\n', '\t']) || e.entity_id.contains(char::is_whitespace) {
            return Err(bad("line breaks or tabs cannot be written"));
        }
        writeln!(
            out,
            "{}\t{} {} {}\t{}",
            e.entity_id,
            to_file_name(&e.category),
            e.start,
            e.end,
            e.surface
        )
        .unwrap();
    }
    for r in relations {
        let bad = |why: &str| StandoffError::InvariantViolation(format!("{}: {why}", r.relation_id));
        if !r.relation_id.starts_with('R') || !ids.insert(r.relation_id.as_str()) {
            return Err(bad("relation id must be unique and start with `R`"));
        }
        if !entities.iter().any(|e| e.entity_id == r.head)
            || !entities.iter().any(|e| e.entity_id == r.tail)
        {
            return Err(bad("dangling endpoint"));
        }
        if r.rel_type.is_empty() || r.rel_type.contains(char::is_whitespace) {
            return Err(bad("relation type must be a single word"));
        }
        writeln!(out, "{}\t{} Arg1:{} Arg2:{}", r.relation_id, r.rel_type, r.head, r.tail).unwrap();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> Document {
        Document::new("d1", text)
    }

    fn parse(text: &str, ann: &str) -> Result<AnnotatedDoc, StandoffError> {
        parse_standoff(doc(text), ann, &Schema::default_sdoh())
    }

    const SMOKER: &str = "Pt is an everyday smoker, 1 packs/day.";

    #[test]
    fn parses_entity_line() {
        let parsed = parse("everyday smoker", "T1\tTobacco_use 0 15\teveryday smoker\n").unwrap();
        assert_eq!(parsed.entities.len(), 1);
        let e = &parsed.entities[0];
        assert_eq!((e.category.as_str(), e.start, e.end), ("Tobacco use", 0, 15));
        assert!(parsed.relations.is_empty());
    }

    #[test]
    fn empty_annotation_file() {
        let parsed = parse("everyday smoker", "").unwrap();
        assert!(parsed.entities.is_empty() && parsed.relations.is_empty());
        assert_eq!(parsed.document.text, "everyday smoker");
    }

    #[test]
    fn surface_mismatch() {
        let err = parse("everyday smoker", "T1\tTobacco_use 0 15\tsmoker").unwrap_err();
        assert!(matches!(err, StandoffError::SurfaceMismatch { line: 1, .. }));
    }

    #[test]
    fn error_paths() {
        let schema_err = |ann: &str| parse(SMOKER, ann).unwrap_err();
        assert!(matches!(
            schema_err("T1\tTobacco_use 9 99\tx"),
            StandoffError::SpanOutOfBounds { .. }
        ));
        assert!(matches!(
            schema_err("T1\tWeather 9 24\teveryday smoker"),
            StandoffError::UnknownCategory { .. }
        ));
        assert!(matches!(
            schema_err("T1\tTobacco_use 9 17;18 24\teveryday smoker"),
            StandoffError::DiscontinuousSpanUnsupported { line: 1 }
        ));
        assert!(matches!(
            schema_err("T1\tTobacco_use 9 24\teveryday smoker\nR1\tAttr-of Arg1:T2 Arg2:T1"),
            StandoffError::DanglingRelation { line: 2, .. }
        ));
        assert!(matches!(schema_err("garbage"), StandoffError::MalformedLine { line: 1, .. }));
        assert!(matches!(
            schema_err("T1\tTobacco_use nine 24\teveryday smoker"),
            StandoffError::MalformedLine { .. }
        ));
        assert!(matches!(
            schema_err("E1\tTobacco_use:T1"),
            StandoffError::MalformedLine { .. }
        ));
        assert!(matches!(
            schema_err("T1\tTobacco_use 9 24\teveryday smoker\nT1\tTobacco_use 9 24\teveryday smoker"),
            StandoffError::DuplicateId { line: 2, .. }
        ));
        // relation pointing the wrong way
        assert!(matches!(
            schema_err(
                "T1\tTobacco_use 9 24\teveryday smoker\nT2\tPack_per_day 26 37\t1 packs/day\nR1\tAttr-of Arg1:T1 Arg2:T2"
            ),
            StandoffError::InvalidRelation { line: 3, .. }
        ));
    }

    #[test]
    fn relation_round_trip() {
        let ann = "T1\tTobacco_use 9 24\teveryday smoker\nT2\tPack_per_day 26 37\t1 packs/day\nR1\tAttr-of Arg1:T2 Arg2:T1\n";
        let parsed = parse(SMOKER, ann).unwrap();
        assert_eq!(parsed.relations[0].head, "T2");
        let out = serialize_standoff(&parsed.document, &parsed.entities, &parsed.relations).unwrap();
        assert_eq!(out, ann);
    }

    #[test]
    fn trailing_tab_on_relation_is_accepted() {
        let ann = "T1\tTobacco_use 9 24\teveryday smoker\nT2\tPack_per_day 26 37\t1 packs/day\nR1\tAttr-of Arg1:T2 Arg2:T1\t\n";
        assert_eq!(parse(SMOKER, ann).unwrap().relations.len(), 1);
    }

    #[test]
    fn serialize_empty_and_invalid() {
        let d = doc(SMOKER);
        assert_eq!(serialize_standoff(&d, &[], &[]).unwrap(), "");
        let bad = EntityAnnotation {
            entity_id: "T1".into(),
            category: "Tobacco use".into(),
            start: 0,
            end: 3,
            surface: "xyz".into(),
        };
        assert!(matches!(
            serialize_standoff(&d, &[bad], &[]),
            Err(StandoffError::InvariantViolation(_))
        ));
    }

    #[test]
    fn multibyte_offsets() {
        let text = "Café owner, smokes cigars";
        let parsed = parse(text, "T1\tTobacco_use 12 18\tsmokes").unwrap();
        assert_eq!(parsed.entities[0].surface, "smokes");
    }
}
