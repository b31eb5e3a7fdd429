//! Relation stage: pair every attribute with the compatible concepts near it
//! and classify each pair into a relation type or `NONE`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedDoc, EntityAnnotation, RelationAnnotation};
use crate::linear::{
    argmax_allowed, read_model_file, softmax, write_model_file, AveragedTrainer, LinearModel,
    ModelFile, ModelFileError,
};
use crate::schema::{Role, Schema};
use crate::scorer::{score_relations, EndpointAlignment, Mode, ScoreError};
use crate::tagger::{TaggerError, TrainConfig, TrainingMeta};
use crate::textproc::{covering_tokens, tokenize, Token};

pub const RE_COMPONENT: &str = "re";
pub const NONE_LABEL: &str = "NONE";
pub const DEFAULT_MAX_SENTENCE_DISTANCE: usize = 1;
const MAX_BETWEEN_WORDS: usize = 20;

#[derive(Debug, Error)]
pub enum LinkerError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("validation set is empty")]
    EmptyValidationSet,
    #[error("entity `{0}` does not align to any token")]
    AlignmentFailure(String),
    #[error("model has no trained weights")]
    UntrainedModel,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    ModelFile(#[from] ModelFileError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<TaggerError> for LinkerError {
    fn from(e: TaggerError) -> Self {
        LinkerError::InvalidConfig(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinkerWarning {
    /// No candidate pair matched a gold relation: the model always predicts
    /// `NONE`.
    NoPositiveExamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkerConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub max_sentence_distance: usize,
}

impl Default for LinkerConfig {
    fn default() -> Self {
        LinkerConfig {
            train: TrainConfig::default(),
            max_sentence_distance: DEFAULT_MAX_SENTENCE_DISTANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePair {
    pub doc_id: String,
    pub attribute: EntityAnnotation,
    pub concept: EntityAnnotation,
    pub sentence_distance: usize,
    /// Tokens strictly between the two spans.
    pub token_distance: usize,
}

#[derive(Debug, Clone, Copy)]
struct Aligned {
    first: usize,
    last: usize,
    sentence: usize,
}

fn align(tokens: &[Token], e: &EntityAnnotation) -> Option<Aligned> {
    covering_tokens(tokens, e.start, e.end).map(|(first, last)| Aligned {
        first,
        last,
        sentence: tokens[first].sentence_index,
    })
}

fn gap(a: Aligned, b: Aligned) -> usize {
    if a.last < b.first {
        b.first - a.last - 1
    } else if b.last < a.first {
        a.first - b.last - 1
    } else {
        0
    }
}

/// All schema-compatible (attribute, concept) pairs within
/// `max_sentence_distance` sentences, ordered by attribute start then
/// concept start. Entities that cover no token are skipped.
pub fn generate_candidates(
    doc_id: &str,
    entities: &[EntityAnnotation],
    tokens: &[Token],
    schema: &Schema,
    max_sentence_distance: usize,
) -> Vec<CandidatePair> {
    let aligned: Vec<(&EntityAnnotation, Aligned)> = entities
        .iter()
        .filter_map(|e| align(tokens, e).map(|a| (e, a)))
        .collect();
    let mut attrs: Vec<_> = aligned
        .iter()
        .filter(|(e, _)| schema.role(&e.category) == Some(Role::Attribute))
        .collect();
    let mut concepts: Vec<_> = aligned
        .iter()
        .filter(|(e, _)| schema.role(&e.category) == Some(Role::Concept))
        .collect();
    attrs.sort_by_key(|(e, _)| (e.start, e.end));
    concepts.sort_by_key(|(e, _)| (e.start, e.end));
    let mut out = Vec::new();
    for (attr, aa) in &attrs {
        for (conc, ca) in &concepts {
            let sentence_distance = aa.sentence.abs_diff(ca.sentence);
            if sentence_distance > max_sentence_distance
                || !schema.compatible(&attr.category, &conc.category)
            {
                continue;
            }
            out.push(CandidatePair {
                doc_id: doc_id.to_string(),
                attribute: (*attr).clone(),
                concept: (*conc).clone(),
                sentence_distance,
                token_distance: gap(*aa, *ca),
            });
        }
    }
    out
}

fn distance_bucket(d: usize) -> &'static str {
    match d {
        0..=3 => "0-3",
        4..=7 => "4-7",
        8..=15 => "8-15",
        _ => "16+",
    }
}

/// Pair feature template: both categories, bagged words of each entity,
/// bagged words between them (at most 20), token-distance bucket, sentence
/// distance, which entity comes first, and the word right before and after
/// each entity (the analog of four entity boundary markers).
pub fn featurize_pair(pair: &CandidatePair, tokens: &[Token]) -> Result<Vec<String>, LinkerError> {
    let a = align(tokens, &pair.attribute)
        .ok_or_else(|| LinkerError::AlignmentFailure(pair.attribute.entity_id.clone()))?;
    let c = align(tokens, &pair.concept)
        .ok_or_else(|| LinkerError::AlignmentFailure(pair.concept.entity_id.clone()))?;
    let word = |i: usize| tokens[i].text.to_lowercase();
    let before = |x: Aligned| if x.first == 0 { "<s>".to_string() } else { word(x.first - 1) };
    let after = |x: Aligned| {
        if x.last + 1 >= tokens.len() {
            "</s>".to_string()
        } else {
            word(x.last + 1)
        }
    };
    let order = if c.first < a.first { "concept-first" } else { "attribute-first" };
    let bucket = distance_bucket(pair.token_distance);
    let ac = &pair.attribute.category;
    let cc = &pair.concept.category;

    let mut f = vec![
        "bias".to_string(),
        format!("attr_cat={ac}"),
        format!("conc_cat={cc}"),
        format!("cats={ac}|{cc}"),
        format!("dist={bucket}"),
        format!("sent_dist={}", pair.sentence_distance),
        format!("order={order}"),
        format!("order|sent_dist={order}|{}", pair.sentence_distance),
        format!("dist|sent_dist={bucket}|{}", pair.sentence_distance),
        format!("cats|sent_dist={ac}|{cc}|{}", pair.sentence_distance),
        format!("attr_before={}", before(a)),
        format!("attr_after={}", after(a)),
        format!("conc_before={}", before(c)),
        format!("conc_after={}", after(c)),
    ];
    for i in a.first..=a.last {
        f.push(format!("attr_w={}", word(i)));
    }
    for i in c.first..=c.last {
        f.push(format!("conc_w={}", word(i)));
    }
    let (lo, hi) = if a.last < c.first {
        (a.last + 1, c.first)
    } else if c.last < a.first {
        (c.last + 1, a.first)
    } else {
        (0, 0)
    };
    for i in (lo..hi).take(MAX_BETWEEN_WORDS) {
        f.push(format!("between_w={}", word(i)));
    }
    Ok(f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairClassifierModel {
    linear: LinearModel,
    schema_version: String,
    max_sentence_distance: usize,
    meta: TrainingMeta,
}

/// Result of training: the model plus anything worth telling the caller.
#[derive(Debug, Clone)]
pub struct LinkerFit {
    pub model: PairClassifierModel,
    pub warnings: Vec<LinkerWarning>,
}

struct Example {
    features: Vec<String>,
    label: usize,
}

impl PairClassifierModel {
    /// `NONE` first, then the schema's relation types in sorted order.
    fn labels_for(schema: &Schema) -> Vec<String> {
        std::iter::once(NONE_LABEL.to_string())
            .chain(schema.rel_types().into_iter().map(str::to_string))
            .collect()
    }

    pub fn labels(&self) -> &[String] {
        self.linear.labels()
    }

    pub fn schema_version(&self) -> &str {
        &self.schema_version
    }

    pub fn max_sentence_distance(&self) -> usize {
        self.max_sentence_distance
    }

    pub fn training_meta(&self) -> TrainingMeta {
        self.meta
    }

    pub fn is_trained(&self) -> bool {
        !self.linear.is_empty()
    }

    pub fn all_weights_finite(&self) -> bool {
        self.linear.all_finite()
    }

    /// Softmax distribution over `labels()` for one candidate.
    pub fn score_pair(&self, pair: &CandidatePair, tokens: &[Token]) -> Result<Vec<f64>, LinkerError> {
        Ok(softmax(&self.linear.scores(&featurize_pair(pair, tokens)?)))
    }

    /// Links attributes to concepts in one document. Each candidate takes the
    /// best label among `NONE` and the relation types the schema allows for
    /// its categories; `NONE` candidates are dropped, and each attribute
    /// keeps only its highest-scoring link (ties: fewer tokens apart, then
    /// the earlier concept). Relation ids are `R1`, `R2`, ... in attribute
    /// order.
    pub fn link(
        &self,
        text: &str,
        entities: &[EntityAnnotation],
        schema: &Schema,
    ) -> Result<Vec<RelationAnnotation>, LinkerError> {
        if self.linear.is_empty() {
            return Err(LinkerError::UntrainedModel);
        }
        let tokens = tokenize(text);
        let candidates = generate_candidates("", entities, &tokens, schema, self.max_sentence_distance);
        let labels = self.linear.labels();
        // per attribute id: (prob, token_distance, concept start, concept id, rel_type)
        let mut best: Vec<(String, f64, usize, usize, String, String)> = Vec::new();
        for pair in &candidates {
            let probs = self.score_pair(pair, &tokens)?;
            let allowed = schema.rel_types_for(&pair.attribute.category, &pair.concept.category);
            let Some(choice) =
                argmax_allowed(&probs, |l| l == 0 || allowed.contains(&labels[l].as_str()))
            else {
                continue;
            };
            if choice == 0 {
                continue;
            }
            let entry = (
                pair.attribute.entity_id.clone(),
                probs[choice],
                pair.token_distance,
                pair.concept.start,
                pair.concept.entity_id.clone(),
                labels[choice].clone(),
            );
            match best.iter_mut().find(|b| b.0 == entry.0) {
                Some(cur) => {
                    let better = entry.1 > cur.1
                        || (entry.1 == cur.1
                            && (entry.2, entry.3) < (cur.2, cur.3));
                    if better {
                        *cur = entry;
                    }
                }
                None => best.push(entry),
            }
        }
        Ok(best
            .into_iter()
            .enumerate()
            .map(|(k, (head, _, _, _, tail, rel_type))| RelationAnnotation {
                relation_id: format!("R{}", k + 1),
                rel_type,
                head,
                tail,
            })
            .collect())
    }

    /// Documents with the given entities and the model's relations.
    pub fn link_docs(&self, docs: &[AnnotatedDoc], schema: &Schema) -> Result<Vec<AnnotatedDoc>, LinkerError> {
        docs.iter()
            .map(|d| {
                Ok(AnnotatedDoc {
                    document: d.document.clone(),
                    entities: d.entities.clone(),
                    relations: self.link(&d.document.text, &d.entities, schema)?,
                })
            })
            .collect()
    }

    /// Strict relation F1 when linking over gold entities.
    pub fn strict_f1(&self, gold: &[AnnotatedDoc], schema: &Schema) -> Result<f64, LinkerError> {
        let pred = self.link_docs(gold, schema)?;
        Ok(score_relations(gold, &pred, Mode::Strict, EndpointAlignment::Matching)?.micro.f1)
    }

    pub fn to_model_file(&self) -> String {
        write_model_file(&ModelFile {
            component: RE_COMPONENT.to_string(),
            schema_version: self.schema_version.clone(),
            meta: self.meta.to_meta(&[(
                "max_sentence_distance",
                self.max_sentence_distance.to_string(),
            )]),
            model: self.linear.clone(),
        })
    }

    pub fn from_model_file(content: &str) -> Result<Self, LinkerError> {
        let file = read_model_file(content, RE_COMPONENT)?;
        if file.model.labels().first().map(String::as_str) != Some(NONE_LABEL) {
            return Err(LinkerError::SchemaMismatch("label list must start with NONE".into()));
        }
        let max_sentence_distance = file
            .meta
            .get("max_sentence_distance")
            .and_then(|v| v.parse().ok())
            .unwrap_or(DEFAULT_MAX_SENTENCE_DISTANCE);
        Ok(PairClassifierModel {
            meta: TrainingMeta::from_meta(&file.meta),
            linear: file.model,
            schema_version: file.schema_version,
            max_sentence_distance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LinkerError> {
        Ok(fs::write(path, self.to_model_file())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LinkerError> {
        Self::from_model_file(&fs::read_to_string(path)?)
    }
}

fn examples(
    docs: &[AnnotatedDoc],
    schema: &Schema,
    labels: &[String],
    max_sentence_distance: usize,
) -> Result<Vec<Example>, LinkerError> {
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut out = Vec::new();
    for doc in docs {
        let tokens = tokenize(&doc.document.text);
        for pair in generate_candidates(doc.doc_id(), &doc.entities, &tokens, schema, max_sentence_distance) {
            let gold = doc
                .relations
                .iter()
                .find(|r| r.head == pair.attribute.entity_id && r.tail == pair.concept.entity_id);
            let label = match gold {
                Some(r) => *index.get(r.rel_type.as_str()).ok_or_else(|| {
                    LinkerError::SchemaMismatch(format!("unknown relation type `{}`", r.rel_type))
                })?,
                None => 0,
            };
            out.push(Example {
                features: featurize_pair(&pair, &tokens)?,
                label,
            });
        }
    }
    Ok(out)
}

fn run_training(
    mut trainer: AveragedTrainer,
    baseline: Option<(LinearModel, f64)>,
    template: &PairClassifierModel,
    train: &[AnnotatedDoc],
    val: &[AnnotatedDoc],
    schema: &Schema,
    config: &TrainConfig,
) -> Result<LinkerFit, LinkerError> {
    let labels = template.linear.labels().to_vec();
    let data = examples(train, schema, &labels, template.max_sentence_distance)?;
    let mut warnings = Vec::new();
    if !data.iter().any(|e| e.label != 0) {
        warnings.push(LinkerWarning::NoPositiveExamples);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best = baseline;
    let mut since_best = 0;
    let mut epochs_run = 0;
    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            trainer.update(&data[i].features, data[i].label, config.learning_rate);
        }
        epochs_run += 1;
        let candidate = PairClassifierModel {
            linear: trainer.averaged(),
            ..template.clone()
        };
        let f1 = if candidate.linear.is_empty() {
            0.0
        } else {
            candidate.strict_f1(val, schema)?
        };
        // ties keep the later, longer-trained epoch but do not reset patience
        let prev = best.as_ref().map(|(_, b)| *b);
        if prev.is_none_or(|b| f1 >= b) {
            best = Some((candidate.linear, f1));
        }
        if prev.is_none_or(|b| f1 > b) {
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (linear, best_val_f1) = best.expect("at least one epoch or a baseline");
    Ok(LinkerFit {
        model: PairClassifierModel {
            linear,
            meta: TrainingMeta {
                epochs_run,
                best_val_f1,
                seed: config.seed,
            },
            ..template.clone()
        },
        warnings,
    })
}

fn check_inputs(train: &[AnnotatedDoc], val: &[AnnotatedDoc]) -> Result<(), LinkerError> {
    if train.is_empty() {
        return Err(LinkerError::EmptyTrainingSet);
    }
    if val.is_empty() {
        return Err(LinkerError::EmptyValidationSet);
    }
    Ok(())
}

/// Trains a pair classifier on candidates generated from gold entities;
/// candidates matching a gold relation are positives of its type, the rest
/// are `NONE`.
pub fn train_linker(
    train: &[AnnotatedDoc],
    val: &[AnnotatedDoc],
    schema: &Schema,
    config: &LinkerConfig,
) -> Result<LinkerFit, LinkerError> {
    config.train.check(false)?;
    check_inputs(train, val)?;
    let labels = PairClassifierModel::labels_for(schema);
    let template = PairClassifierModel {
        linear: LinearModel::new(labels.clone()),
        schema_version: schema.version().to_string(),
        max_sentence_distance: config.max_sentence_distance,
        meta: TrainingMeta::default(),
    };
    run_training(AveragedTrainer::new(labels), None, &template, train, val, schema, &config.train)
}

/// Continues training from the model's weights; see
/// [`crate::tagger::fine_tune_tagger`] for the early-stopping baseline.
pub fn fine_tune_linker(
    model: &PairClassifierModel,
    train: &[AnnotatedDoc],
    val: &[AnnotatedDoc],
    schema: &Schema,
    config: &TrainConfig,
) -> Result<LinkerFit, LinkerError> {
    config.check(true)?;
    if model.linear.is_empty() {
        return Err(LinkerError::UntrainedModel);
    }
    check_inputs(train, val)?;
    if config.max_epochs == 0 {
        return Ok(LinkerFit {
            model: model.clone(),
            warnings: Vec::new(),
        });
    }
    let baseline = model.strict_f1(val, schema)?;
    run_training(
        AveragedTrainer::from_model(&model.linear),
        Some((model.linear.clone(), baseline)),
        model,
        train,
        val,
        schema,
        config,
    )
}
