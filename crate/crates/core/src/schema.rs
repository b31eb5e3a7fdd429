//! SDoH category taxonomy: classes, concept subclasses, attributes and the
//! attribute/concept compatibility matrix.
//!
//! Category names are stored in display form ("Tobacco use"). Annotation
//! files and BIO labels use the file form with underscores ("Tobacco_use")
//! since brat type names cannot contain spaces.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_SCHEMA_JSON: &str = include_str!("../data/schema.json");

/// Generic relation type used when the schema file does not refine it.
pub const DEFAULT_REL_TYPE: &str = "Attr-of";

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("failed to read schema file: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("category `{0}` is declared more than once")]
    DuplicateCategory(String),
    #[error("subclass `{subclass}` references undeclared class `{class}`")]
    UnknownClass { subclass: String, class: String },
    #[error("compat triple references undeclared {role} category `{name}`")]
    UnknownCompatCategory { role: &'static str, name: String },
    #[error("category name `{0}` is not representable in annotation files")]
    BadCategoryName(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Concept,
    Attribute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subclass {
    pub name: String,
    pub class: String,
}

/// One permitted (attribute, concept, relation type) combination.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CompatRule {
    pub attribute: String,
    pub concept: String,
    pub rel_type: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemaFile {
    version: String,
    classes: Vec<String>,
    subclasses: Vec<Subclass>,
    attributes: Vec<String>,
    compat: Vec<CompatRule>,
}

#[derive(Debug, Clone)]
pub struct Schema {
    version: String,
    classes: Vec<String>,
    subclasses: Vec<Subclass>,
    attributes: Vec<String>,
    compat: BTreeSet<CompatRule>,
    roles: HashMap<String, Role>,
}

impl Schema {
    /// The shipped schema: 19 concept subclasses under 6 classes plus a
    /// provisional attribute inventory.
    pub fn default_sdoh() -> Self {
        Self::from_json(DEFAULT_SCHEMA_JSON).expect("bundled schema is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, SchemaError> {
        let file: SchemaFile = serde_json::from_str(json)?;
        Self::build(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let file = SchemaFile {
            version: self.version.clone(),
            classes: self.classes.clone(),
            subclasses: self.subclasses.clone(),
            attributes: self.attributes.clone(),
            compat: self.compat.iter().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).expect("schema serializes")
    }

    fn build(file: SchemaFile) -> Result<Self, SchemaError> {
        let mut roles = HashMap::new();
        for name in &file.classes {
            check_name(name)?;
        }
        for sub in &file.subclasses {
            check_name(&sub.name)?;
            if !file.classes.contains(&sub.class) {
                return Err(SchemaError::UnknownClass {
                    subclass: sub.name.clone(),
                    class: sub.class.clone(),
                });
            }
            if roles.insert(sub.name.clone(), Role::Concept).is_some() {
                return Err(SchemaError::DuplicateCategory(sub.name.clone()));
            }
        }
        for attr in &file.attributes {
            check_name(attr)?;
            if roles.insert(attr.clone(), Role::Attribute).is_some() {
                return Err(SchemaError::DuplicateCategory(attr.clone()));
            }
        }
        for rule in &file.compat {
            if roles.get(&rule.attribute) != Some(&Role::Attribute) {
                return Err(SchemaError::UnknownCompatCategory {
                    role: "attribute",
                    name: rule.attribute.clone(),
                });
            }
            if roles.get(&rule.concept) != Some(&Role::Concept) {
                return Err(SchemaError::UnknownCompatCategory {
                    role: "concept",
                    name: rule.concept.clone(),
                });
            }
            check_name(&rule.rel_type)?;
        }
        Ok(Schema {
            version: file.version,
            classes: file.classes,
            subclasses: file.subclasses,
            attributes: file.attributes,
            compat: file.compat.into_iter().collect(),
            roles,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn subclasses(&self) -> &[Subclass] {
        &self.subclasses
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn compat(&self) -> impl Iterator<Item = &CompatRule> {
        self.compat.iter()
    }

    /// Concept subclass names in declaration order.
    pub fn concepts(&self) -> impl Iterator<Item = &str> {
        self.subclasses.iter().map(|s| s.name.as_str())
    }

    /// All categories: concepts first, then attributes.
    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.concepts()
            .chain(self.attributes.iter().map(String::as_str))
    }

    pub fn role(&self, category: &str) -> Option<Role> {
        self.roles.get(category).copied()
    }

    pub fn class_of(&self, concept: &str) -> Option<&str> {
        self.subclasses
            .iter()
            .find(|s| s.name == concept)
            .map(|s| s.class.as_str())
    }

    pub fn permits(&self, attribute: &str, concept: &str, rel_type: &str) -> bool {
        self.compat.contains(&CompatRule {
            attribute: attribute.to_string(),
            concept: concept.to_string(),
            rel_type: rel_type.to_string(),
        })
    }

    /// True when any relation type links the two categories.
    pub fn compatible(&self, attribute: &str, concept: &str) -> bool {
        self.compat
            .iter()
            .any(|r| r.attribute == attribute && r.concept == concept)
    }

    /// Relation types allowed between the two categories, sorted.
    pub fn rel_types_for(&self, attribute: &str, concept: &str) -> Vec<&str> {
        self.compat
            .iter()
            .filter(|r| r.attribute == attribute && r.concept == concept)
            .map(|r| r.rel_type.as_str())
            .collect()
    }

    /// Every relation type mentioned in the compat matrix, sorted and unique.
    pub fn rel_types(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.compat.iter().map(|r| r.rel_type.as_str()).collect();
        set.into_iter().collect()
    }
}

fn check_name(name: &str) -> Result<(), SchemaError> {
    if name.is_empty()
        || name.contains('_')
        || name.chars().any(|c| c.is_whitespace() && c != ' ')
        || name.starts_with(' ')
        || name.ends_with(' ')
        || name.contains("  ")
    {
        return Err(SchemaError::BadCategoryName(name.to_string()));
    }
    Ok(())
}

/// "Tobacco use" -> "Tobacco_use"
pub fn to_file_name(display: &str) -> String {
    display.replace(' ', "_")
}

/// "Tobacco_use" -> "Tobacco use"
pub fn from_file_name(file: &str) -> String {
    file.replace('_', " ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_has_nineteen_subclasses_under_six_classes() {
        let schema = Schema::default_sdoh();
        assert_eq!(schema.subclasses().len(), 19);
        assert_eq!(schema.classes().len(), 6);
        assert_eq!(schema.role("Tobacco use"), Some(Role::Concept));
        assert_eq!(schema.role("Pack per day"), Some(Role::Attribute));
        assert_eq!(schema.class_of("Tobacco use"), Some("Health and Health care"));
        assert_eq!(schema.class_of("Ethnicity"), Some("Gender, Race, and Ethnicity"));
    }

    #[test]
    fn compat_lookup() {
        let schema = Schema::default_sdoh();
        assert!(schema.permits("Pack per day", "Tobacco use", DEFAULT_REL_TYPE));
        assert!(!schema.compatible("Pack per day", "Education"));
        assert!(schema.compatible("Frequency", "Alcohol use"));
        assert_eq!(schema.rel_types(), vec![DEFAULT_REL_TYPE]);
    }

    #[test]
    fn json_round_trip() {
        let schema = Schema::default_sdoh();
        let again = Schema::from_json(&schema.to_json()).unwrap();
        assert_eq!(again.version(), schema.version());
        assert_eq!(again.subclasses(), schema.subclasses());
        assert_eq!(again.compat().count(), schema.compat().count());
    }

    #[test]
    fn rejects_duplicates_and_dangling_compat() {
        let dup = r#"{"version":"x","classes":["C"],"subclasses":[{"name":"A","class":"C"}],
            "attributes":["A"],"compat":[]}"#;
        assert!(matches!(
            Schema::from_json(dup),
            Err(SchemaError::DuplicateCategory(_))
        ));
        let dangling = r#"{"version":"x","classes":["C"],"subclasses":[{"name":"A","class":"C"}],
            "attributes":["F"],"compat":[{"attribute":"F","concept":"Z","rel_type":"R"}]}"#;
        assert!(matches!(
            Schema::from_json(dangling),
            Err(SchemaError::UnknownCompatCategory { .. })
        ));
    }

    #[test]
    fn file_names() {
        assert_eq!(to_file_name("Abuse (physical or mental)"), "Abuse_(physical_or_mental)");
        assert_eq!(from_file_name("Tobacco_use"), "Tobacco use");
    }
}
