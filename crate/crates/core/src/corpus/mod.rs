//! Annotated documents in brat standoff form, corpus splitting, validation
//! and annotator agreement.

mod io;
mod kappa;
mod split;
mod standoff;
mod validate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use io::{
    load_corpus, read_manifest, write_corpus, write_manifest, CorpusIoError, ManifestRow, MANIFEST_FILE,
};
pub use kappa::{compute_kappa, KappaError, KappaReport};
pub use split::{split_corpus, CorpusSplit, SplitError, SplitRatios};
pub use standoff::{parse_standoff, serialize_standoff, StandoffError};
pub use validate::{validate_corpus, Rule, ValidationReport, Violation};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Cancer,
    Opioid,
    Other(String),
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Cancer => f.write_str("cancer"),
            Domain::Opioid => f.write_str("opioid"),
            Domain::Other(s) => f.write_str(s),
        }
    }
}

impl FromStr for Domain {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "cancer" => Domain::Cancer,
            "opioid" => Domain::Opioid,
            other => Domain::Other(other.to_string()),
        })
    }
}

impl Serialize for Domain {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Domain {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub patient_id: String,
    pub domain: Domain,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        let doc_id = doc_id.into();
        Document {
            patient_id: doc_id.clone(),
            doc_id,
            domain: Domain::Other("unspecified".into()),
            text: text.into(),
        }
    }
}

/// A typed character span. `category` is in display form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub entity_id: String,
    pub category: String,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

impl EntityAnnotation {
    pub fn overlaps(&self, other: &EntityAnnotation) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn overlap_len(&self, other: &EntityAnnotation) -> usize {
        self.end.min(other.end).saturating_sub(self.start.max(other.start))
    }
}

/// Directed link from an attribute (`head`) to a concept (`tail`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationAnnotation {
    pub relation_id: String,
    pub rel_type: String,
    pub head: String,
    pub tail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedDoc {
    pub document: Document,
    pub entities: Vec<EntityAnnotation>,
    pub relations: Vec<RelationAnnotation>,
}

impl AnnotatedDoc {
    pub fn doc_id(&self) -> &str {
        &self.document.doc_id
    }

    pub fn entity(&self, id: &str) -> Option<&EntityAnnotation> {
        self.entities.iter().find(|e| e.entity_id == id)
    }

    /// Copy with relations removed, e.g. as input for linking.
    pub fn without_relations(&self) -> AnnotatedDoc {
        AnnotatedDoc {
            document: self.document.clone(),
            entities: self.entities.clone(),
            relations: Vec::new(),
        }
    }
}

/// Selects documents by id, preserving the order of `ids`. Unknown ids are
/// skipped.
pub fn select_docs<'a>(docs: &'a [AnnotatedDoc], ids: &[String]) -> Vec<&'a AnnotatedDoc> {
    let by_id: std::collections::HashMap<&str, &AnnotatedDoc> =
        docs.iter().map(|d| (d.doc_id(), d)).collect();
    ids.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect()
}
