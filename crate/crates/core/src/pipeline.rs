//! End-to-end extraction, domain adaptation strategies, batch processing and
//! patient-level extraction rates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{AnnotatedDoc, Document, Domain, EntityAnnotation};
use crate::linker::{fine_tune_linker, train_linker, LinkerConfig, LinkerError, LinkerWarning, PairClassifierModel};
use crate::par;
use crate::schema::{Role, Schema};
use crate::scorer::{score_concepts, score_end_to_end, EvalReport, Mode, ScoreError};
use crate::tagger::{fine_tune_tagger, train_tagger, TaggerError, TokenClassifierModel, TrainConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("schema version mismatch: {0}")]
    SchemaVersionMismatch(String),
    #[error("{0} model has no trained weights")]
    UntrainedModel(&'static str),
    #[error("strategy `{0}` needs non-empty target training and validation sets")]
    MissingTargetData(Strategy),
    #[error("record for patient `{0}` is not in the roster")]
    UnknownPatient(String),
    #[error("patient roster is empty")]
    EmptyRoster,
    #[error("malformed record line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error(transparent)]
    Tagger(#[from] TaggerError),
    #[error(transparent)]
    Linker(#[from] LinkerError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

/// Short content hash of a serialized model.
pub fn model_fingerprint(model_file: &str) -> String {
    let digest = Sha256::digest(model_file.as_bytes());
    digest[..6].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelVersions {
    pub ner: String,
    pub re: String,
}

/// A trained tagger and linker checked against one schema.
#[derive(Debug, Clone)]
pub struct Models {
    pub ner: TokenClassifierModel,
    pub re: PairClassifierModel,
    pub schema: Schema,
    versions: ModelVersions,
}

impl Models {
    pub fn new(ner: TokenClassifierModel, re: PairClassifierModel, schema: Schema) -> Result<Self, PipelineError> {
        for (name, v) in [("ner", ner.schema_version()), ("re", re.schema_version())] {
            if v != schema.version() {
                return Err(PipelineError::SchemaVersionMismatch(format!(
                    "{name} model was trained on `{v}`, schema is `{}`",
                    schema.version()
                )));
            }
        }
        if !ner.is_trained() {
            return Err(PipelineError::UntrainedModel("ner"));
        }
        if !re.is_trained() {
            return Err(PipelineError::UntrainedModel("re"));
        }
        let versions = ModelVersions {
            ner: model_fingerprint(&ner.to_model_file()),
            re: model_fingerprint(&re.to_model_file()),
        };
        Ok(Models {
            ner,
            re,
            schema,
            versions,
        })
    }

    pub fn versions(&self) -> &ModelVersions {
        &self.versions
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinkedAttribute {
    pub rel_type: String,
    pub entity: EntityAnnotation,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SDoHRecord {
    pub doc_id: String,
    pub patient_id: String,
    pub concept: EntityAnnotation,
    pub attributes: Vec<LinkedAttribute>,
    pub model_versions: ModelVersions,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum DiagnosticKind {
    /// A predicted attribute that was not linked to any concept.
    OrphanAttribute { entity_id: String, category: String, start: usize, end: usize },
    /// The document could not be processed.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Diagnostic {
    pub doc_id: String,
    pub kind: DiagnosticKind,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            DiagnosticKind::OrphanAttribute {
                entity_id,
                category,
                start,
                end,
            } => write!(f, "{}\torphan attribute\t{entity_id} {category} {start} {end}", self.doc_id),
            DiagnosticKind::Failed(reason) => write!(f, "{}\tfailed\t{reason}", self.doc_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub records: Vec<SDoHRecord>,
    pub diagnostics: Vec<Diagnostic>,
    /// Predicted entities and relations, e.g. for standoff export.
    pub annotations: AnnotatedDoc,
}

/// Tags, links and groups one document into concept records ordered by
/// concept offset. Attributes are listed in text order.
pub fn extract(models: &Models, doc: &Document) -> Result<Extraction, PipelineError> {
    let entities = models.ner.extract_entities(&doc.text)?;
    let relations = models.re.link(&doc.text, &entities, &models.schema)?;
    let by_id: BTreeMap<&str, &EntityAnnotation> = entities.iter().map(|e| (e.entity_id.as_str(), e)).collect();
    let mut records = Vec::new();
    for concept in entities
        .iter()
        .filter(|e| models.schema.role(&e.category) == Some(Role::Concept))
    {
        let mut attributes: Vec<LinkedAttribute> = relations
            .iter()
            .filter(|r| r.tail == concept.entity_id)
            .map(|r| LinkedAttribute {
                rel_type: r.rel_type.clone(),
                entity: by_id[r.head.as_str()].clone(),
            })
            .collect();
        attributes.sort_by_key(|a| (a.entity.start, a.entity.end));
        records.push(SDoHRecord {
            doc_id: doc.doc_id.clone(),
            patient_id: doc.patient_id.clone(),
            concept: concept.clone(),
            attributes,
            model_versions: models.versions.clone(),
        });
    }
    let linked: BTreeSet<&str> = relations.iter().map(|r| r.head.as_str()).collect();
    let diagnostics = entities
        .iter()
        .filter(|e| models.schema.role(&e.category) == Some(Role::Attribute) && !linked.contains(e.entity_id.as_str()))
        .map(|e| Diagnostic {
            doc_id: doc.doc_id.clone(),
            kind: DiagnosticKind::OrphanAttribute {
                entity_id: e.entity_id.clone(),
                category: e.category.clone(),
                start: e.start,
                end: e.end,
            },
        })
        .collect();
    Ok(Extraction {
        records,
        diagnostics,
        annotations: AnnotatedDoc {
            document: doc.clone(),
            entities,
            relations,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Direct,
    MergeRetrain,
    FineTune,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Direct, Strategy::FineTune, Strategy::MergeRetrain];

    /// Row label used in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Direct => "Direct evaluation",
            Strategy::FineTune => "Fine-tuning",
            Strategy::MergeRetrain => "Merge and retrain",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Direct => "direct",
            Strategy::MergeRetrain => "merge-retrain",
            Strategy::FineTune => "fine-tune",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('_', "-").as_str() {
            "direct" => Ok(Strategy::Direct),
            "merge-retrain" => Ok(Strategy::MergeRetrain),
            "fine-tune" => Ok(Strategy::FineTune),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub ner: TrainConfig,
    pub re: LinkerConfig,
}

#[derive(Debug, Clone)]
pub struct Adapted {
    pub ner: TokenClassifierModel,
    pub re: PairClassifierModel,
    pub warnings: Vec<LinkerWarning>,
}

/// Moves source-domain models to a target domain. `Direct` returns the
/// source models unchanged; `MergeRetrain` trains from scratch on source
/// plus target training data; `FineTune` continues from the source weights
/// on target training data. Both non-direct strategies validate on
/// `target_val`.
#[allow(clippy::too_many_arguments)]
pub fn adapt(
    source_ner: &TokenClassifierModel,
    source_re: &PairClassifierModel,
    strategy: Strategy,
    source_corpus: &[AnnotatedDoc],
    target_train: &[AnnotatedDoc],
    target_val: &[AnnotatedDoc],
    schema: &Schema,
    config: &AdaptConfig,
) -> Result<Adapted, PipelineError> {
    if strategy != Strategy::Direct && (target_train.is_empty() || target_val.is_empty()) {
        return Err(PipelineError::MissingTargetData(strategy));
    }
    match strategy {
        Strategy::Direct => Ok(Adapted {
            ner: source_ner.clone(),
            re: source_re.clone(),
            warnings: Vec::new(),
        }),
        Strategy::MergeRetrain => {
            let merged: Vec<AnnotatedDoc> = source_corpus.iter().chain(target_train).cloned().collect();
            let ner = train_tagger(&merged, target_val, schema, &config.ner)?;
            let fit = train_linker(&merged, target_val, schema, &config.re)?;
            Ok(Adapted {
                ner,
                re: fit.model,
                warnings: fit.warnings,
            })
        }
        Strategy::FineTune => {
            let ner = fine_tune_tagger(source_ner, target_train, target_val, &config.ner)?;
            let fit = fine_tune_linker(source_re, target_train, target_val, schema, &config.re.train)?;
            Ok(Adapted {
                ner,
                re: fit.model,
                warnings: fit.warnings,
            })
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategyResult {
    pub strategy: Strategy,
    pub concept_strict: EvalReport,
    pub concept_lenient: EvalReport,
    pub end_to_end_strict: EvalReport,
    pub end_to_end_lenient: EvalReport,
}

/// Concept and end-to-end reports of a model pair on annotated documents.
pub fn evaluate(
    ner: &TokenClassifierModel,
    re: &PairClassifierModel,
    gold: &[AnnotatedDoc],
    schema: &Schema,
) -> Result<[EvalReport; 4], PipelineError> {
    let tagged = ner.predict_docs(gold)?;
    let linked = re.link_docs(&tagged, schema)?;
    let (cs, es) = score_end_to_end(gold, &linked, Mode::Strict)?;
    let (cl, el) = score_end_to_end(gold, &linked, Mode::Lenient)?;
    Ok([cs, cl, es, el])
}

/// Runs all three strategies and scores each on the target test set.
#[allow(clippy::too_many_arguments)]
pub fn compare_strategies(
    source_ner: &TokenClassifierModel,
    source_re: &PairClassifierModel,
    source_corpus: &[AnnotatedDoc],
    target_train: &[AnnotatedDoc],
    target_val: &[AnnotatedDoc],
    target_test: &[AnnotatedDoc],
    schema: &Schema,
    config: &AdaptConfig,
) -> Result<Vec<StrategyResult>, PipelineError> {
    Strategy::ALL
        .iter()
        .map(|&strategy| {
            let m = adapt(source_ner, source_re, strategy, source_corpus, target_train, target_val, schema, config)?;
            let [concept_strict, concept_lenient, end_to_end_strict, end_to_end_lenient] =
                evaluate(&m.ner, &m.re, target_test, schema)?;
            Ok(StrategyResult {
                strategy,
                concept_strict,
                concept_lenient,
                end_to_end_strict,
                end_to_end_lenient,
            })
        })
        .collect()
}

/// Strict concept F1 of a tagger alone, the quantity compared across
/// strategies.
pub fn concept_f1(ner: &TokenClassifierModel, gold: &[AnnotatedDoc], mode: Mode) -> Result<f64, PipelineError> {
    Ok(score_concepts(gold, &ner.predict_docs(gold)?, mode)?.micro.f1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RateRow {
    pub category: String,
    pub concept_count: usize,
    pub patients_with_category: usize,
}

impl RateRow {
    pub fn rate(&self, total_patients: usize) -> f64 {
        self.patients_with_category as f64 / total_patients as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExtractionRateTable {
    /// One row per schema concept category, in schema order.
    pub rows: Vec<RateRow>,
    pub total_patients: usize,
}

impl ExtractionRateTable {
    pub fn row(&self, category: &str) -> Option<&RateRow> {
        self.rows.iter().find(|r| r.category == category)
    }
}

/// Per concept category: number of records, number of distinct roster
/// patients with at least one record, and their share of the roster.
pub fn aggregate_rates(
    records: &[SDoHRecord],
    roster: &BTreeSet<String>,
    schema: &Schema,
) -> Result<ExtractionRateTable, PipelineError> {
    if roster.is_empty() {
        return Err(PipelineError::EmptyRoster);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut patients: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        if !roster.contains(&r.patient_id) {
            return Err(PipelineError::UnknownPatient(r.patient_id.clone()));
        }
        *counts.entry(&r.concept.category).or_default() += 1;
        patients.entry(&r.concept.category).or_default().insert(&r.patient_id);
    }
    let rows = schema
        .concepts()
        .map(|c| RateRow {
            category: c.to_string(),
            concept_count: counts.get(c).copied().unwrap_or(0),
            patients_with_category: patients.get(c).map_or(0, BTreeSet::len),
        })
        .collect();
    Ok(ExtractionRateTable {
        rows,
        total_patients: roster.len(),
    })
}

/// `num / den` rounded half-up to 4 decimals, computed exactly.
pub fn format_ratio(num: usize, den: usize) -> String {
    let (num, den) = (num as u128, den as u128);
    let scaled = (num * 20_000 + den) / (2 * den);
    format!("{}.{:04}", scaled / 10_000, scaled % 10_000)
}

fn thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Tab-separated table with one `# Concepts`/`Rate` column pair per cohort
/// and categories in alphabetical order.
pub fn render_rate_tables(cohorts: &[(String, &ExtractionRateTable)]) -> String {
    let mut out = String::from("SDoH");
    for (name, _) in cohorts {
        out.push_str(&format!("\t{name}\t"));
    }
    out.push('\n');
    for _ in cohorts {
        out.push_str("\t# Concepts\tRate");
    }
    out.push('\n');
    let categories: BTreeSet<&str> = cohorts
        .iter()
        .flat_map(|(_, t)| t.rows.iter().map(|r| r.category.as_str()))
        .collect();
    for c in categories {
        out.push_str(c);
        for (_, t) in cohorts {
            let (count, with) = t.row(c).map_or((0, 0), |r| (r.concept_count, r.patients_with_category));
            out.push_str(&format!("\t{}\t{}", thousands(count), format_ratio(with, t.total_patients)));
        }
        out.push('\n');
    }
    out
}

/// Document as submitted to a batch run; the text is decoded inside the
/// run so that undecodable input fails per document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    pub doc_id: String,
    pub patient_id: String,
    pub domain: Domain,
    pub bytes: Vec<u8>,
}

impl From<&Document> for RawDocument {
    fn from(d: &Document) -> Self {
        RawDocument {
            doc_id: d.doc_id.clone(),
            patient_id: d.patient_id.clone(),
            domain: d.domain.clone(),
            bytes: d.text.clone().into_bytes(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchTiming {
    pub wall: Duration,
    pub documents: usize,
    pub failed: usize,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub records: Vec<SDoHRecord>,
    pub diagnostics: Vec<Diagnostic>,
    pub annotations: Vec<AnnotatedDoc>,
    pub timing: BatchTiming,
}

fn process(models: &Models, raw: &RawDocument) -> Result<Extraction, String> {
    if raw.doc_id.trim().is_empty() {
        return Err("empty doc_id".into());
    }
    let text = std::str::from_utf8(&raw.bytes).map_err(|e| format!("text is not valid UTF-8: {e}"))?;
    let doc = Document {
        doc_id: raw.doc_id.clone(),
        patient_id: raw.patient_id.clone(),
        domain: raw.domain.clone(),
        text: text.to_string(),
    };
    extract(models, &doc).map_err(|e| e.to_string())
}

fn record_key(r: &SDoHRecord) -> (&str, usize, usize, &str, &str, &str) {
    (
        &r.doc_id,
        r.concept.start,
        r.concept.end,
        &r.concept.category,
        &r.patient_id,
        &r.concept.entity_id,
    )
}

/// Extracts every document on `parallelism` threads (0 = all cores).
/// Failing documents become diagnostics. Outputs are sorted by doc_id, so
/// they do not depend on the thread count or on submission order.
pub fn run_batch(models: &Models, documents: &[RawDocument], parallelism: usize) -> BatchOutput {
    let t0 = Instant::now();
    let results = par::map_ordered(documents, parallelism, |raw| (raw.doc_id.clone(), process(models, raw)));
    let mut out = BatchOutput {
        records: Vec::new(),
        diagnostics: Vec::new(),
        annotations: Vec::new(),
        timing: BatchTiming {
            wall: Duration::ZERO,
            documents: documents.len(),
            failed: 0,
            threads: if par::is_parallel() { parallelism } else { 1 },
        },
    };
    for (doc_id, r) in results {
        match r {
            Ok(x) => {
                out.records.extend(x.records);
                out.diagnostics.extend(x.diagnostics);
                out.annotations.push(x.annotations);
            }
            Err(reason) => {
                out.timing.failed += 1;
                out.diagnostics.push(Diagnostic {
                    doc_id,
                    kind: DiagnosticKind::Failed(reason),
                });
            }
        }
    }
    out.records.sort_by(|a, b| record_key(a).cmp(&record_key(b)));
    out.diagnostics.sort();
    out.annotations
        .sort_by(|a, b| (a.doc_id(), &a.document.text).cmp(&(b.doc_id(), &b.document.text)));
    out.timing.wall = t0.elapsed();
    out
}

pub const RECORD_HEADER: &str = "doc_id\tpatient_id\tcategory\tstart\tend\tsurface\tattributes\tner_model\tre_model\tconcept_id";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match it.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(format!("bad escape `\\{}`", other.map(String::from).unwrap_or_default())),
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct AttrCell {
    rel_type: String,
    id: String,
    category: String,
    start: usize,
    end: usize,
    surface: String,
}

/// One tab-separated line per record; the attribute list is a JSON array.
pub fn write_records(records: &[SDoHRecord]) -> String {
    let mut out = format!("{RECORD_HEADER}\n");
    for r in records {
        let attrs: Vec<AttrCell> = r
            .attributes
            .iter()
            .map(|a| AttrCell {
                rel_type: a.rel_type.clone(),
                id: a.entity.entity_id.clone(),
                category: a.entity.category.clone(),
                start: a.entity.start,
                end: a.entity.end,
                surface: a.entity.surface.clone(),
            })
            .collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            escape(&r.doc_id),
            escape(&r.patient_id),
            escape(&r.concept.category),
            r.concept.start,
            r.concept.end,
            escape(&r.concept.surface),
            serde_json::to_string(&attrs).expect("plain data serializes"),
            escape(&r.model_versions.ner),
            escape(&r.model_versions.re),
            escape(&r.concept.entity_id),
        ));
    }
    out
}

/// Inverse of [`write_records`].
pub fn read_records(content: &str) -> Result<Vec<SDoHRecord>, PipelineError> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let n = i + 1;
        if n == 1 && line.starts_with("doc_id\t") || line.is_empty() {
            continue;
        }
        let bad = |reason: String| PipelineError::MalformedRecord { line: n, reason };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 10 {
            return Err(bad(format!("expected 10 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad offset `{s}`")));
        let attrs: Vec<AttrCell> = serde_json::from_str(f[6]).map_err(|e| bad(e.to_string()))?;
        out.push(SDoHRecord {
            doc_id: unescape(f[0]).map_err(bad)?,
            patient_id: unescape(f[1]).map_err(bad)?,
            concept: EntityAnnotation {
                entity_id: unescape(f[9]).map_err(bad)?,
                category: unescape(f[2]).map_err(bad)?,
                start: num(f[3])?,
                end: num(f[4])?,
                surface: unescape(f[5]).map_err(bad)?,
            },
            attributes: attrs
                .into_iter()
                .map(|a| LinkedAttribute {
                    rel_type: a.rel_type,
                    entity: EntityAnnotation {
                        entity_id: a.id,
                        category: a.category,
                        start: a.start,
                        end: a.end,
                        surface: a.surface,
                    },
                })
                .collect(),
            model_versions: ModelVersions {
                ner: unescape(f[7]).map_err(bad)?,
                re: unescape(f[8]).map_err(bad)?,
            },
        });
    }
    Ok(out)
}
