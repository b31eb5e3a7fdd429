//! Sparse multi-class linear classifier with a softmax output layer, trained
//! by averaged stochastic gradient descent on the cross-entropy loss, plus the
//! text model-file format shared by the tagger and the linker.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

pub const MODEL_MAGIC: &str = "#sdoh-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    labels: Vec<String>,
    weights: HashMap<String, Vec<f64>>,
}

impl LinearModel {
    pub fn new(labels: Vec<String>) -> Self {
        LinearModel {
            labels,
            weights: HashMap::new(),
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_features(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, feature: &str, label: usize) -> f64 {
        self.weights.get(feature).map_or(0.0, |w| w[label])
    }

    /// Raw per-label scores; unknown features contribute nothing.
    pub fn scores<S: AsRef<str>>(&self, features: &[S]) -> Vec<f64> {
        let mut out = vec![0.0; self.labels.len()];
        self.add_scores(features, &mut out);
        out
    }

    pub fn add_scores<S: AsRef<str>>(&self, features: &[S], out: &mut [f64]) {
        for f in features {
            if let Some(w) = self.weights.get(f.as_ref()) {
                for (o, x) in out.iter_mut().zip(w) {
                    *o += x;
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.weights.values().flatten().all(|w| w.is_finite())
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

/// Index of the highest score among `allowed` labels; ties go to the lowest
/// index.
pub fn argmax_allowed(scores: &[f64], allowed: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if !allowed(i) {
            continue;
        }
        if best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

const ADAGRAD_EPS: f64 = 1e-8;

/// Online trainer keeping a running average of the weights.
///
/// Steps are scaled per weight by the root of its summed squared gradients
/// (AdaGrad), so rare features move as fast as frequent ones.
///
/// Uses the usual lazy averaging identity: with `c` the step counter and
/// `acc += c * delta` on every update, the average is `w - acc / c`.

#[derive(Debug, Clone)]
pub struct AveragedTrainer {
    labels: Vec<String>,
    weights: HashMap<String, Vec<f64>>,
    acc: HashMap<String, Vec<f64>>,
    sq: HashMap<String, Vec<f64>>,
    step: f64,
}

impl AveragedTrainer {
    pub fn new(labels: Vec<String>) -> Self {
        Self::from_model(&LinearModel::new(labels))
    }

    /// Continues from existing weights; the running average restarts.
    pub fn from_model(model: &LinearModel) -> Self {
        AveragedTrainer {
            labels: model.labels.clone(),
            weights: model.weights.clone(),
            acc: HashMap::new(),
            sq: HashMap::new(),
            step: 1.0,
        }
    }

    /// One cross-entropy gradient step on a single example. Returns the loss.
    pub fn update<S: AsRef<str>>(&mut self, features: &[S], gold: usize, learning_rate: f64) -> f64 {
        let k = self.labels.len();
        let mut scores = vec![0.0; k];
        for f in features {
            if let Some(w) = self.weights.get(f.as_ref()) {
                for (o, x) in scores.iter_mut().zip(w) {
                    *o += x;
                }
            }
        }
        let probs = softmax(&scores);
        let loss = -probs[gold].max(f64::MIN_POSITIVE).ln();
        let grad: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(l, p)| p - if l == gold { 1.0 } else { 0.0 })
            .collect();
        for f in features {
            let f = f.as_ref();
            let w = self
                .weights
                .entry(f.to_string())
                .or_insert_with(|| vec![0.0; k]);
            let a = self.acc.entry(f.to_string()).or_insert_with(|| vec![0.0; k]);
            let g2 = self.sq.entry(f.to_string()).or_insert_with(|| vec![0.0; k]);
            for l in 0..k {
                if grad[l] == 0.0 {
                    continue;
                }
                g2[l] += grad[l] * grad[l];
                let delta = -learning_rate * grad[l] / (ADAGRAD_EPS + g2[l]).sqrt();
                w[l] += delta;
                a[l] += self.step * delta;
            }
        }
        self.step += 1.0;
        loss
    }

    pub fn averaged(&self) -> LinearModel {
        let weights = self
            .weights
            .iter()
            .map(|(f, w)| {
                let avg = match self.acc.get(f) {
                    Some(a) => w.iter().zip(a).map(|(w, a)| w - a / self.step).collect(),
                    None => w.clone(),
                };
                (f.clone(), avg)
            })
            .collect();
        LinearModel {
            labels: self.labels.clone(),
            weights,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelFileError {
    #[error("not a model file (missing `{MODEL_MAGIC}` header)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(String),
    #[error("model file is for component `{found}`, expected `{expected}`")]
    WrongComponent { expected: String, found: String },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Header and weights of a model file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub component: String,
    pub schema_version: String,
    pub meta: BTreeMap<String, String>,
    pub model: LinearModel,
}

/// Layout:
///
/// ```text
/// #sdoh-model<TAB>1
/// component<TAB>ner
/// schema_version<TAB>...
/// labels<TAB>O<TAB>B-Tobacco_use<TAB>...
/// meta<TAB>key<TAB>value          (zero or more)
/// weights
/// feature<TAB>label<TAB>weight    (one row per non-zero weight)
/// ```
///
/// Rows are sorted by feature, then label order, so identical models give
/// identical files. Weights use Rust's shortest round-trip float formatting.
pub fn write_model_file(file: &ModelFile) -> String {
    let mut out = String::new();
    writeln!(out, "{MODEL_MAGIC}\t{MODEL_FORMAT_VERSION}").unwrap();
    writeln!(out, "component\t{}", file.component).unwrap();
    writeln!(out, "schema_version\t{}", file.schema_version).unwrap();
    writeln!(out, "labels\t{}", file.model.labels.join("\t")).unwrap();
    for (k, v) in &file.meta {
        writeln!(out, "meta\t{k}\t{v}").unwrap();
    }
    out.push_str("weights\n");
    let mut features: Vec<&String> = file.model.weights.keys().collect();
    features.sort();
    for f in features {
        for (l, w) in file.model.weights[f].iter().enumerate() {
            if *w != 0.0 {
                writeln!(out, "{f}\t{}\t{w:?}", file.model.labels[l]).unwrap();
            }
        }
    }
    out
}

pub fn read_model_file(content: &str, expected_component: &str) -> Result<ModelFile, ModelFileError> {
    let mut lines = content.lines().enumerate();
    let malformed = |line: usize, reason: &str| ModelFileError::Malformed {
        line: line + 1,
        reason: reason.to_string(),
    };
    let mut header = |key: &str| -> Result<(usize, Vec<String>), ModelFileError> {
        let (n, line) = lines.next().ok_or_else(|| malformed(0, "truncated header"))?;
        let mut cols = line.split('\t');
        if cols.next() != Some(key) {
            return Err(malformed(n, &format!("expected `{key}`")));
        }
        Ok((n, cols.map(str::to_string).collect()))
    };
    let (_, version) = header(MODEL_MAGIC).map_err(|_| ModelFileError::BadMagic)?;
    if version != [MODEL_FORMAT_VERSION.to_string()] {
        return Err(ModelFileError::UnsupportedVersion(version.join(" ")));
    }
    let (_, component) = header("component")?;
    let component = component.join("\t");
    if component != expected_component {
        return Err(ModelFileError::WrongComponent {
            expected: expected_component.to_string(),
            found: component,
        });
    }
    let (_, schema_version) = header("schema_version")?;
    let (n, labels) = header("labels")?;
    if labels.is_empty() {
        return Err(malformed(n, "empty label list"));
    }
    let label_index: HashMap<&str, usize> =
        labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();

    let mut meta = BTreeMap::new();
    loop {
        let (n, line) = lines.next().ok_or_else(|| malformed(n, "missing `weights` line"))?;
        if line == "weights" {
            break;
        }
        match line.split('\t').collect::<Vec<_>>().as_slice() {
            ["meta", k, v] => {
                meta.insert(k.to_string(), v.to_string());
            }
            _ => return Err(malformed(n, "expected `meta<TAB>key<TAB>value` or `weights`")),
        }
    }

    let mut weights: HashMap<String, Vec<f64>> = HashMap::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [feature, label, value] = cols.as_slice() else {
            return Err(malformed(n, "expected `feature<TAB>label<TAB>weight`"));
        };
        let l = *label_index
            .get(label)
            .ok_or_else(|| malformed(n, &format!("unknown label `{label}`")))?;
        let w: f64 = value.parse().map_err(|_| malformed(n, "bad weight"))?;
        if !w.is_finite() {
            return Err(malformed(n, "weight is not finite"));
        }
        weights
            .entry(feature.to_string())
            .or_insert_with(|| vec![0.0; labels.len()])[l] = w;
    }
    Ok(ModelFile {
        component,
        schema_version: schema_version.join("\t"),
        meta,
        model: LinearModel { labels, weights },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<String> {
        vec!["O".into(), "B-X".into(), "I-X".into()]
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0, 2.0, 3.0, -1000.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let lp = log_softmax(&[1.0, 2.0, 3.0]);
        let q = softmax(&[1.0, 2.0, 3.0]);
        for (a, b) in lp.iter().zip(q) {
            assert!((a.exp() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        assert_eq!(argmax_allowed(&[1.0, 1.0, 0.5], |_| true), Some(0));
        assert_eq!(argmax_allowed(&[1.0, 1.0, 0.5], |i| i != 0), Some(1));
        assert_eq!(argmax_allowed(&[1.0], |_| false), None);
    }

    #[test]
    fn learns_separable_problem() {
        let mut t = AveragedTrainer::new(labels());
        let data = [(vec!["w=a"], 0), (vec!["w=b"], 1), (vec!["w=c"], 2)];
        for _ in 0..50 {
            for (f, g) in &data {
                t.update(f, *g, 0.5);
            }
        }
        let m = t.averaged();
        for (f, g) in &data {
            assert_eq!(argmax_allowed(&m.scores(f), |_| true), Some(*g));
        }
        assert!(m.all_finite());
    }

    #[test]
    fn average_of_constant_weights_is_the_weights() {
        let mut t = AveragedTrainer::new(labels());
        t.update(&["f"], 1, 1.0);
        let w_after_one = t.weights["f"].clone();
        // snapshots before and after the update: (0 + w) / 2
        let avg = t.averaged();
        for (a, w) in avg.weights["f"].iter().zip(&w_after_one) {
            assert!((a - w / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn model_file_round_trip() {
        let mut t = AveragedTrainer::new(labels());
        t.update(&["w=a", "bias"], 1, 0.3);
        t.update(&["w=b", "bias"], 2, 0.3);
        let file = ModelFile {
            component: "ner".into(),
            schema_version: "v1".into(),
            meta: [("seed".to_string(), "7".to_string())].into_iter().collect(),
            model: t.averaged(),
        };
        let text = write_model_file(&file);
        let back = read_model_file(&text, "ner").unwrap();
        assert_eq!(back, file);
        assert_eq!(write_model_file(&back), text);
        assert!(matches!(
            read_model_file(&text, "re"),
            Err(ModelFileError::WrongComponent { .. })
        ));
        assert_eq!(read_model_file("hello", "ner"), Err(ModelFileError::BadMagic));
        let broken = text.replace("\t7\n", "\t7\nbogus\n");
        assert!(read_model_file(&broken, "ner").is_err());
    }
}
