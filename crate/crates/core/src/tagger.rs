//! Concept extraction stage: a linear token classifier over hand-built
//! features that assigns BIO labels, with softmax scores per token.
//!
//! Training runs averaged SGD on the cross-entropy loss, one example per
//! token, with the gold previous label as a feature. Decoding is left to
//! right and never emits `I-X` unless the previous label is `B-X` or `I-X`.
//! After each epoch the averaged weights are scored on the validation
//! documents (strict concept F1); the best epoch wins and training stops
//! after `patience` epochs without improvement.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedDoc, EntityAnnotation};
use crate::linear::{
    argmax_allowed, log_softmax, read_model_file, softmax, write_model_file, AveragedTrainer,
    LinearModel, ModelFile, ModelFileError,
};
use crate::schema::Schema;
use crate::scorer::{score_concepts, Mode, ScoreError};
use crate::textproc::{decode_bio, encode_bio, sentence_ranges, tokenize, BioError, BioLabel, Token};

pub const NER_COMPONENT: &str = "ner";

const BOS: &str = "<s>";
const EOS: &str = "</s>";

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("validation set is empty")]
    EmptyValidationSet,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("document `{doc_id}`: {source}")]
    Encoding { doc_id: String, source: BioError },
    #[error("token index {index} out of range for {len} tokens")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("model has no trained weights")]
    UntrainedModel,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    ModelFile(#[from] ModelFileError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub feature_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 30,
            patience: 5,
            seed: 13,
            learning_rate: 0.5,
            feature_window: 2,
        }
    }
}

impl TrainConfig {
    fn window(&self) -> usize {
        self.feature_window
    }

    pub(crate) fn check(&self, allow_zero_epochs: bool) -> Result<(), TaggerError> {
        if self.patience < 1 {
            return Err(TaggerError::InvalidConfig("patience must be at least 1".into()));
        }
        if self.max_epochs < 1 && !allow_zero_epochs {
            return Err(TaggerError::InvalidConfig("max_epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TaggerError::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub best_val_f1: f64,
    pub seed: u64,
}

impl TrainingMeta {
    pub(crate) fn to_meta(self, extra: &[(&str, String)]) -> BTreeMap<String, String> {
        let mut meta: BTreeMap<String, String> = [
            ("epochs_run".to_string(), self.epochs_run.to_string()),
            ("best_val_f1".to_string(), format!("{:?}", self.best_val_f1)),
            ("seed".to_string(), self.seed.to_string()),
        ]
        .into_iter()
        .collect();
        for (k, v) in extra {
            meta.insert(k.to_string(), v.clone());
        }
        meta
    }

    pub(crate) fn from_meta(meta: &BTreeMap<String, String>) -> Self {
        let get = |k: &str| meta.get(k).map(String::as_str).unwrap_or("0");
        TrainingMeta {
            epochs_run: get("epochs_run").parse().unwrap_or(0),
            best_val_f1: get("best_val_f1").parse().unwrap_or(0.0),
            seed: get("seed").parse().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoding {
    #[default]
    Greedy,
    Viterbi,
}

/// BIO labels for one token sequence with the softmax distribution over the
/// label set at each position.
#[derive(Debug, Clone, PartialEq)]
pub struct Tagging {
    pub labels: Vec<BioLabel>,
    pub probabilities: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenClassifierModel {
    label_set: Vec<BioLabel>,
    label_index: HashMap<BioLabel, usize>,
    schema_version: String,
    window: usize,
    linear: LinearModel,
    meta: TrainingMeta,
}

/// `O` first, then `B-`/`I-` for every schema category in order.
pub fn label_set_for(schema: &Schema) -> Vec<BioLabel> {
    let mut labels = vec![BioLabel::O];
    for cat in schema.categories() {
        labels.push(BioLabel::B(cat.to_string()));
        labels.push(BioLabel::I(cat.to_string()));
    }
    labels
}

fn shape(word: &str) -> String {
    let mut out = String::new();
    let mut last: Option<char> = None;
    let mut repeated = false;
    for c in word.chars() {
        let s = if c.is_uppercase() {
            'X'
        } else if c.is_lowercase() {
            'x'
        } else if c.is_numeric() {
            '9'
        } else {
            c
        };
        if Some(s) == last {
            if !repeated {
                out.push('+');
                repeated = true;
            }
        } else {
            out.push(s);
            last = Some(s);
            repeated = false;
        }
    }
    out
}

fn affix(word: &str, n: usize, prefix: bool) -> String {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() <= n {
        return word.to_string();
    }
    if prefix {
        chars[..n].iter().collect()
    } else {
        chars[chars.len() - n..].iter().collect()
    }
}

/// Context-independent features of one token. Neighbors are taken from the
/// same sentence; positions outside it render as `<s>` / `</s>`.
fn static_features(tokens: &[Token], index: usize, window: usize) -> Vec<String> {
    let tok = &tokens[index];
    let lower = tok.text.to_lowercase();
    let mut f = Vec::with_capacity(10 + 2 * window);
    f.push("bias".to_string());
    f.push(format!("w0={}", tok.text));
    f.push(format!("lw0={lower}"));
    f.push(format!("shape0={}", shape(&tok.text)));
    f.push(format!("pre3={}", affix(&lower, 3, true)));
    f.push(format!("suf3={}", affix(&lower, 3, false)));
    let sent = tok.sentence_index;
    let neighbor = |offset: isize| -> String {
        let j = index as isize + offset;
        if j < 0 || j as usize >= tokens.len() || tokens[j as usize].sentence_index != sent {
            if offset < 0 { BOS } else { EOS }.to_string()
        } else {
            tokens[j as usize].text.to_lowercase()
        }
    };
    for d in 1..=window as isize {
        f.push(format!("w-{d}={}", neighbor(-d)));
        f.push(format!("w+{d}={}", neighbor(d)));
    }
    if window >= 1 {
        f.push(format!("w-1|w0={}|{lower}", neighbor(-1)));
        f.push(format!("w0|w+1={lower}|{}", neighbor(1)));
    }
    if index == 0 || tokens[index - 1].sentence_index != sent {
        f.push("first_in_sentence".to_string());
    }
    if index + 1 == tokens.len() || tokens[index + 1].sentence_index != sent {
        f.push("last_in_sentence".to_string());
    }
    f
}

fn prev_feature(prev: Option<&BioLabel>) -> String {
    match prev {
        Some(label) => format!("prev={label}"),
        None => format!("prev={BOS}"),
    }
}

/// Feature template for one token: word, lowercase, shape, 3-char prefix and
/// suffix, lowercase neighbors within `window`, neighbor bigrams, sentence
/// position flags and the previous label.
pub fn featurize_token(
    tokens: &[Token],
    index: usize,
    window: usize,
    prev: Option<&BioLabel>,
) -> Result<Vec<String>, TaggerError> {
    if index >= tokens.len() {
        return Err(TaggerError::IndexOutOfRange {
            index,
            len: tokens.len(),
        });
    }
    let mut f = static_features(tokens, index, window);
    f.push(prev_feature(prev));
    Ok(f)
}

struct Sentence {
    features: Vec<Vec<String>>,
    gold: Vec<usize>,
}

fn prepare(
    docs: &[AnnotatedDoc],
    label_index: &HashMap<BioLabel, usize>,
    window: usize,
) -> Result<Vec<Sentence>, TaggerError> {
    let mut out = Vec::new();
    for doc in docs {
        let tokens = tokenize(&doc.document.text);
        let labels = encode_bio(&tokens, &doc.entities).map_err(|source| TaggerError::Encoding {
            doc_id: doc.doc_id().to_string(),
            source,
        })?;
        for range in sentence_ranges(&tokens) {
            let mut features = Vec::with_capacity(range.len());
            let mut gold = Vec::with_capacity(range.len());
            for i in range {
                let idx = *label_index.get(&labels[i]).ok_or_else(|| {
                    TaggerError::SchemaMismatch(format!(
                        "document `{}` uses label {} outside the model's label set",
                        doc.doc_id(),
                        labels[i]
                    ))
                })?;
                features.push(static_features(&tokens, i, window));
                gold.push(idx);
            }
            out.push(Sentence { features, gold });
        }
    }
    Ok(out)
}

impl TokenClassifierModel {
    fn from_parts(
        label_set: Vec<BioLabel>,
        schema_version: String,
        window: usize,
        linear: LinearModel,
        meta: TrainingMeta,
    ) -> Self {
        let label_index = label_set.iter().cloned().enumerate().map(|(i, l)| (l, i)).collect();
        TokenClassifierModel {
            label_set,
            label_index,
            schema_version,
            window,
            linear,
            meta,
        }
    }

    pub fn label_set(&self) -> &[BioLabel] {
        &self.label_set
    }

    pub fn schema_version(&self) -> &str {
        &self.schema_version
    }

    pub fn training_meta(&self) -> TrainingMeta {
        self.meta
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn weight(&self, feature: &str, label: &BioLabel) -> f64 {
        self.label_index
            .get(label)
            .map_or(0.0, |&l| self.linear.weight(feature, l))
    }

    pub fn is_trained(&self) -> bool {
        !self.linear.is_empty()
    }

    pub fn all_weights_finite(&self) -> bool {
        self.linear.all_finite()
    }

    fn allowed(&self, label: usize, prev: Option<usize>) -> bool {
        self.label_set[label].may_follow(prev.map(|p| &self.label_set[p]))
    }

    fn sentence_scores(&self, statics: &[Vec<String>], prev: Option<usize>, t: usize) -> Vec<f64> {
        let mut scores = self.linear.scores(&statics[t]);
        let pf = prev_feature(prev.map(|p| &self.label_set[p]));
        self.linear.add_scores(&[pf], &mut scores);
        scores
    }

    fn decode_sentence(&self, statics: &[Vec<String>], decoding: Decoding) -> (Vec<usize>, Vec<Vec<f64>>) {
        match decoding {
            Decoding::Greedy => {
                let mut labels = Vec::with_capacity(statics.len());
                let mut probs = Vec::with_capacity(statics.len());
                let mut prev = None;
                for t in 0..statics.len() {
                    let scores = self.sentence_scores(statics, prev, t);
                    // O is always legal, so a label always exists
                    let best = argmax_allowed(&scores, |l| self.allowed(l, prev)).unwrap_or(0);
                    probs.push(softmax(&scores));
                    labels.push(best);
                    prev = Some(best);
                }
                (labels, probs)
            }
            Decoding::Viterbi => self.viterbi(statics),
        }
    }

    /// Exact search over legal label sequences maximizing the sum of
    /// per-token log-probabilities, where each token's distribution is
    /// conditioned on the previous label.
    fn viterbi(&self, statics: &[Vec<String>]) -> (Vec<usize>, Vec<Vec<f64>>) {
        let k = self.label_set.len();
        let n = statics.len();
        if n == 0 {
            return (Vec::new(), Vec::new());
        }
        let prev_w: Vec<Vec<f64>> = (0..=k)
            .map(|p| {
                let prev = (p < k).then_some(p);
                self.linear.scores(&[prev_feature(prev.map(|x| &self.label_set[x]))])
            })
            .collect();
        let cond = |t: usize, prev: Option<usize>| -> Vec<f64> {
            let mut s = self.linear.scores(&statics[t]);
            for (a, b) in s.iter_mut().zip(&prev_w[prev.unwrap_or(k)]) {
                *a += b;
            }
            s
        };
        let mut best = vec![vec![f64::NEG_INFINITY; k]; n];
        let mut back = vec![vec![0usize; k]; n];
        let first = log_softmax(&cond(0, None));
        for l in 0..k {
            if self.allowed(l, None) {
                best[0][l] = first[l];
            }
        }
        for t in 1..n {
            let statics_scores = self.linear.scores(&statics[t]);
            for p in 0..k {
                if best[t - 1][p] == f64::NEG_INFINITY {
                    continue;
                }
                let mut s = statics_scores.clone();
                for (a, b) in s.iter_mut().zip(&prev_w[p]) {
                    *a += b;
                }
                let lp = log_softmax(&s);
                for l in 0..k {
                    if !self.allowed(l, Some(p)) {
                        continue;
                    }
                    let cand = best[t - 1][p] + lp[l];
                    if cand > best[t][l] {
                        best[t][l] = cand;
                        back[t][l] = p;
                    }
                }
            }
        }
        let mut last = argmax_allowed(&best[n - 1], |_| true).unwrap_or(0);
        let mut labels = vec![0; n];
        for t in (0..n).rev() {
            labels[t] = last;
            last = back[t][last];
        }
        let probs = (0..n)
            .map(|t| softmax(&cond(t, (t > 0).then(|| labels[t - 1]))))
            .collect();
        (labels, probs)
    }

    pub fn predict_tags(&self, tokens: &[Token]) -> Result<Tagging, TaggerError> {
        self.predict_tags_with(tokens, Decoding::Greedy)
    }

    pub fn predict_tags_with(&self, tokens: &[Token], decoding: Decoding) -> Result<Tagging, TaggerError> {
        if self.linear.is_empty() {
            return Err(TaggerError::UntrainedModel);
        }
        let mut labels = Vec::with_capacity(tokens.len());
        let mut probabilities = Vec::with_capacity(tokens.len());
        for range in sentence_ranges(tokens) {
            let statics: Vec<Vec<String>> =
                range.clone().map(|i| static_features(tokens, i, self.window)).collect();
            let (idx, probs) = self.decode_sentence(&statics, decoding);
            labels.extend(idx.into_iter().map(|i| self.label_set[i].clone()));
            probabilities.extend(probs);
        }
        Ok(Tagging {
            labels,
            probabilities,
        })
    }

    /// Tokenize, tag and decode a text into entity annotations.
    pub fn extract_entities(&self, text: &str) -> Result<Vec<EntityAnnotation>, TaggerError> {
        let tokens = tokenize(text);
        let tagging = self.predict_tags(&tokens)?;
        decode_bio(text, &tokens, &tagging.labels).map_err(|source| TaggerError::Encoding {
            doc_id: String::new(),
            source,
        })
    }

    /// Predicted entities (no relations) for each document.
    pub fn predict_docs(&self, docs: &[AnnotatedDoc]) -> Result<Vec<AnnotatedDoc>, TaggerError> {
        docs.iter()
            .map(|d| {
                Ok(AnnotatedDoc {
                    document: d.document.clone(),
                    entities: self.extract_entities(&d.document.text)?,
                    relations: Vec::new(),
                })
            })
            .collect()
    }

    /// Strict micro F1 of this model's concepts on gold documents.
    pub fn strict_f1(&self, gold: &[AnnotatedDoc]) -> Result<f64, TaggerError> {
        let pred = self.predict_docs(gold)?;
        Ok(score_concepts(gold, &pred, Mode::Strict)?.micro.f1)
    }

    pub fn to_model_file(&self) -> String {
        write_model_file(&ModelFile {
            component: NER_COMPONENT.to_string(),
            schema_version: self.schema_version.clone(),
            meta: self.meta.to_meta(&[("window", self.window.to_string())]),
            model: self.linear.clone(),
        })
    }

    pub fn from_model_file(content: &str) -> Result<Self, TaggerError> {
        let file = read_model_file(content, NER_COMPONENT)?;
        let label_set = file
            .model
            .labels()
            .iter()
            .map(|l| l.parse::<BioLabel>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| TaggerError::SchemaMismatch(e.to_string()))?;
        if label_set.first() != Some(&BioLabel::O) {
            return Err(TaggerError::SchemaMismatch("label set must start with O".into()));
        }
        let window = file.meta.get("window").and_then(|w| w.parse().ok()).unwrap_or(2);
        Ok(Self::from_parts(
            label_set,
            file.schema_version,
            window,
            file.model,
            TrainingMeta::from_meta(&file.meta),
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TaggerError> {
        Ok(fs::write(path, self.to_model_file())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaggerError> {
        Self::from_model_file(&fs::read_to_string(path)?)
    }
}

fn run_training(
    mut trainer: AveragedTrainer,
    baseline: Option<(LinearModel, f64)>,
    train: &[AnnotatedDoc],
    val: &[AnnotatedDoc],
    template: &TokenClassifierModel,
    config: &TrainConfig,
) -> Result<TokenClassifierModel, TaggerError> {
    let sentences = prepare(train, &template.label_index, config.window())?;
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(LinearModel, f64)> = baseline;
    let mut since_best = 0usize;
    let mut epochs_run = 0usize;
    let prev_features: Vec<String> = (0..=template.label_set.len())
        .map(|p| prev_feature(template.label_set.get(p)))
        .collect();
    let start_feature = prev_features.len() - 1;

    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for &s in &order {
            let sentence = &sentences[s];
            for t in 0..sentence.gold.len() {
                let prev = if t == 0 { start_feature } else { sentence.gold[t - 1] };
                let mut feats: Vec<&str> = sentence.features[t].iter().map(String::as_str).collect();
                feats.push(&prev_features[prev]);
                trainer.update(&feats, sentence.gold[t], config.learning_rate);
            }
        }
        epochs_run += 1;
        let candidate = TokenClassifierModel {
            linear: trainer.averaged(),
            ..template.clone()
        };
        let f1 = candidate.strict_f1(val)?;
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
    Ok(TokenClassifierModel {
        linear,
        meta: TrainingMeta {
            epochs_run,
            best_val_f1,
            seed: config.seed,
        },
        ..template.clone()
    })
}

fn check_docs(train: &[AnnotatedDoc], val: &[AnnotatedDoc], labels: &HashMap<BioLabel, usize>) -> Result<(), TaggerError> {
    if train.is_empty() {
        return Err(TaggerError::EmptyTrainingSet);
    }
    if val.is_empty() {
        return Err(TaggerError::EmptyValidationSet);
    }
    for doc in train.iter().chain(val) {
        for e in &doc.entities {
            if !labels.contains_key(&BioLabel::B(e.category.clone())) {
                return Err(TaggerError::SchemaMismatch(format!(
                    "document `{}` uses unknown category `{}`",
                    doc.doc_id(),
                    e.category
                )));
            }
        }
    }
    Ok(())
}

/// Trains a fresh tagger over the schema's label set.
pub fn train_tagger(
    train: &[AnnotatedDoc],
    val: &[AnnotatedDoc],
    schema: &Schema,
    config: &TrainConfig,
) -> Result<TokenClassifierModel, TaggerError> {
    config.check(false)?;
    let label_set = label_set_for(schema);
    let template = TokenClassifierModel::from_parts(
        label_set,
        schema.version().to_string(),
        config.feature_window,
        LinearModel::new(Vec::new()),
        TrainingMeta::default(),
    );
    check_docs(train, val, &template.label_index)?;
    let labels: Vec<String> = template.label_set.iter().map(|l| l.to_string()).collect();
    run_training(AveragedTrainer::new(labels), None, train, val, &template, config)
}

/// Continues training from the model's current weights on new data. The
/// input model's own validation score is the starting point for early
/// stopping, so the result never scores below it on `val`. With
/// `max_epochs == 0` the model is returned unchanged.
pub fn fine_tune_tagger(
    model: &TokenClassifierModel,
    train: &[AnnotatedDoc],
    val: &[AnnotatedDoc],
    config: &TrainConfig,
) -> Result<TokenClassifierModel, TaggerError> {
    config.check(true)?;
    if model.linear.is_empty() {
        return Err(TaggerError::UntrainedModel);
    }
    check_docs(train, val, &model.label_index)?;
    if config.max_epochs == 0 {
        return Ok(model.clone());
    }
    let baseline = model.strict_f1(val)?;
    // the feature window is part of the model, not the new config
    let config = TrainConfig {
        feature_window: model.window,
        ..*config
    };
    run_training(
        AveragedTrainer::from_model(&model.linear),
        Some((model.linear.clone(), baseline)),
        train,
        val,
        model,
        &config,
    )
}
