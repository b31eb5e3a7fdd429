//! Strict and lenient micro-averaged precision, recall and F1 (beta = 1) for
//! concepts, relations and end-to-end output.
//!
//! Strict: same category and identical span. Lenient: same category and
//! overlapping half-open spans. Entity matching is one-to-one and maximizes
//! the number of matched pairs; among maximum matchings the total character
//! overlap is maximized, then earlier gold entities are preferred.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedDoc, EntityAnnotation, RelationAnnotation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Strict,
    Lenient,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Strict => "strict",
            Mode::Lenient => "lenient",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Concept,
    Relation,
    EndToEnd,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Concept => "Concept extraction",
            Task::Relation => "Relation classification",
            Task::EndToEnd => "End-to-end",
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoreError {
    #[error("gold and predicted document ids differ (e.g. `{0}`)")]
    DocIdMismatch(String),
    #[error("document `{doc_id}`: relation `{relation_id}` references missing entity `{entity_id}`")]
    DanglingRelation {
        doc_id: String,
        relation_id: String,
        entity_id: String,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Score {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Score {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub mode: Mode,
    pub per_class: BTreeMap<String, Score>,
    pub micro: Score,
}

#[derive(Default)]
struct Tally(BTreeMap<String, (usize, usize, usize)>);

impl Tally {
    fn tp(&mut self, key: &str) {
        self.0.entry(key.to_string()).or_default().0 += 1;
    }
    fn fp(&mut self, key: &str) {
        self.0.entry(key.to_string()).or_default().1 += 1;
    }
    fn fn_(&mut self, key: &str) {
        self.0.entry(key.to_string()).or_default().2 += 1;
    }

    fn report(self, task: Task, mode: Mode) -> EvalReport {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        let per_class = self
            .0
            .into_iter()
            .map(|(k, (a, b, c))| {
                tp += a;
                fp += b;
                fn_ += c;
                (k, Score::from_counts(a, b, c))
            })
            .collect();
        EvalReport {
            task,
            mode,
            per_class,
            micro: Score::from_counts(tp, fp, fn_),
        }
    }
}

fn spans_match(gold: &EntityAnnotation, pred: &EntityAnnotation, mode: Mode) -> bool {
    gold.category == pred.category
        && match mode {
            Mode::Strict => gold.start == pred.start && gold.end == pred.end,
            Mode::Lenient => gold.overlaps(pred),
        }
}

/// One-to-one matching of gold and predicted entities as `(gold_idx,
/// pred_idx)` pairs sorted by gold index.
pub fn match_entities(
    gold: &[EntityAnnotation],
    pred: &[EntityAnnotation],
    mode: Mode,
) -> Vec<(usize, usize)> {
    let mut categories: Vec<&str> = gold.iter().map(|e| e.category.as_str()).collect();
    categories.sort();
    categories.dedup();
    let mut pairs = Vec::new();
    for cat in categories {
        let mut g: Vec<usize> = (0..gold.len()).filter(|&i| gold[i].category == cat).collect();
        g.sort_by_key(|&i| (gold[i].start, gold[i].end, i));
        let p: Vec<usize> = (0..pred.len()).filter(|&j| pred[j].category == cat).collect();
        if p.is_empty() {
            continue;
        }
        let n_g = g.len() as i128;
        let overlap = |i: usize, j: usize| -> Option<i128> {
            spans_match(&gold[i], &pred[j], mode).then(|| gold[i].overlap_len(&pred[j]) as i128)
        };
        // lexicographic weight: cardinality, then overlap, then gold order
        let total_overlap: i128 = g
            .iter()
            .map(|&i| p.iter().filter_map(|&j| overlap(i, j)).max().unwrap_or(0))
            .sum();
        let rank_scale = n_g * n_g + 1;
        let pair_scale = (total_overlap + 1) * rank_scale + rank_scale;
        let weights: Vec<Vec<i128>> = g
            .iter()
            .enumerate()
            .map(|(rank, &i)| {
                p.iter()
                    .map(|&j| match overlap(i, j) {
                        Some(ov) => pair_scale + ov * rank_scale + (n_g - rank as i128),
                        None => 0,
                    })
                    .collect()
            })
            .collect();
        for (r, c) in max_weight_assignment(&weights) {
            if weights[r][c] > 0 {
                pairs.push((g[r], p[c]));
            }
        }
    }
    pairs.sort();
    pairs
}

/// Hungarian algorithm on a rectangular non-negative weight matrix. Returns
/// `(row, col)` for each assigned row.
fn max_weight_assignment(weights: &[Vec<i128>]) -> Vec<(usize, usize)> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    let max_w = weights.iter().flatten().copied().max().unwrap_or(0);
    // square cost matrix, 1-indexed as in the classic potentials formulation
    let cost = |i: usize, j: usize| -> i128 {
        if i <= rows && j <= cols {
            max_w - weights[i - 1][j - 1]
        } else {
            max_w
        }
    };
    let inf = i128::MAX / 4;
    let mut u = vec![0i128; n + 1];
    let mut v = vec![0i128; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n)
        .filter(|&j| p[j] >= 1 && p[j] <= rows && j <= cols)
        .map(|j| (p[j] - 1, j - 1))
        .collect()
}

fn paired<'a>(
    gold: &'a [AnnotatedDoc],
    pred: &'a [AnnotatedDoc],
) -> Result<Vec<(&'a AnnotatedDoc, &'a AnnotatedDoc)>, ScoreError> {
    let by_id: HashMap<&str, &AnnotatedDoc> = pred.iter().map(|d| (d.doc_id(), d)).collect();
    if by_id.len() != pred.len() || gold.len() != pred.len() {
        let gold_ids: HashSet<&str> = gold.iter().map(|d| d.doc_id()).collect();
        let odd = pred
            .iter()
            .map(|d| d.doc_id())
            .find(|id| !gold_ids.contains(id))
            .or_else(|| gold.iter().map(|d| d.doc_id()).find(|id| !by_id.contains_key(id)))
            .unwrap_or_default();
        return Err(ScoreError::DocIdMismatch(odd.to_string()));
    }
    gold.iter()
        .map(|g| {
            by_id
                .get(g.doc_id())
                .map(|p| (g, *p))
                .ok_or_else(|| ScoreError::DocIdMismatch(g.doc_id().to_string()))
        })
        .collect()
}

pub fn score_concepts(
    gold: &[AnnotatedDoc],
    pred: &[AnnotatedDoc],
    mode: Mode,
) -> Result<EvalReport, ScoreError> {
    let mut tally = Tally::default();
    for (g, p) in paired(gold, pred)? {
        let matching = match_entities(&g.entities, &p.entities, mode);
        let matched_g: HashSet<usize> = matching.iter().map(|m| m.0).collect();
        let matched_p: HashSet<usize> = matching.iter().map(|m| m.1).collect();
        for &(gi, _) in &matching {
            tally.tp(&g.entities[gi].category);
        }
        for (j, e) in p.entities.iter().enumerate() {
            if !matched_p.contains(&j) {
                tally.fp(&e.category);
            }
        }
        for (i, e) in g.entities.iter().enumerate() {
            if !matched_g.contains(&i) {
                tally.fn_(&e.category);
            }
        }
    }
    Ok(tally.report(Task::Concept, mode))
}

/// How predicted relation endpoints are compared with gold endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EndpointAlignment {
    /// Endpoints must be paired by the one-to-one entity matching.
    #[default]
    Matching,
    /// Each endpoint is compared with the gold endpoint directly under the
    /// mode's span rule.
    Direct,
}

fn relation_key(rel: &RelationAnnotation, tail: &EntityAnnotation) -> String {
    format!("{}:{}", rel.rel_type, tail.category)
}

fn endpoints(
    doc: &AnnotatedDoc,
    rel: &RelationAnnotation,
) -> Result<(usize, usize), ScoreError> {
    let find = |id: &str| {
        doc.entities
            .iter()
            .position(|e| e.entity_id == id)
            .ok_or_else(|| ScoreError::DanglingRelation {
                doc_id: doc.doc_id().to_string(),
                relation_id: rel.relation_id.clone(),
                entity_id: id.to_string(),
            })
    };
    Ok((find(&rel.head)?, find(&rel.tail)?))
}

pub fn score_relations(
    gold: &[AnnotatedDoc],
    pred: &[AnnotatedDoc],
    mode: Mode,
    alignment: EndpointAlignment,
) -> Result<EvalReport, ScoreError> {
    let mut tally = Tally::default();
    for (g, p) in paired(gold, pred)? {
        let gold_rels: Vec<(usize, usize)> = g
            .relations
            .iter()
            .map(|r| endpoints(g, r))
            .collect::<Result<_, _>>()?;
        let pred_rels: Vec<(usize, usize)> = p
            .relations
            .iter()
            .map(|r| endpoints(p, r))
            .collect::<Result<_, _>>()?;
        let pred_to_gold: HashMap<usize, usize> = match alignment {
            EndpointAlignment::Matching => match_entities(&g.entities, &p.entities, mode)
                .into_iter()
                .map(|(gi, pj)| (pj, gi))
                .collect(),
            EndpointAlignment::Direct => HashMap::new(),
        };
        let same = |pj: usize, gi: usize| match alignment {
            EndpointAlignment::Matching => pred_to_gold.get(&pj) == Some(&gi),
            EndpointAlignment::Direct => spans_match(&g.entities[gi], &p.entities[pj], mode),
        };
        let mut consumed = vec![false; g.relations.len()];
        for (k, rel) in p.relations.iter().enumerate() {
            let (ph, pt) = pred_rels[k];
            let hit = (0..g.relations.len()).find(|&m| {
                let (gh, gt) = gold_rels[m];
                !consumed[m] && g.relations[m].rel_type == rel.rel_type && same(ph, gh) && same(pt, gt)
            });
            match hit {
                Some(m) => {
                    consumed[m] = true;
                    tally.tp(&relation_key(&g.relations[m], &g.entities[gold_rels[m].1]));
                }
                None => tally.fp(&relation_key(rel, &p.entities[pt])),
            }
        }
        for (m, rel) in g.relations.iter().enumerate() {
            if !consumed[m] {
                tally.fn_(&relation_key(rel, &g.entities[gold_rels[m].1]));
            }
        }
    }
    Ok(tally.report(Task::Relation, mode))
}

/// Scores a full pipeline output: predicted concepts, and relations over the
/// predicted concepts aligned to gold through the concept matching.
pub fn score_end_to_end(
    gold: &[AnnotatedDoc],
    pred: &[AnnotatedDoc],
    mode: Mode,
) -> Result<(EvalReport, EvalReport), ScoreError> {
    let concepts = score_concepts(gold, pred, mode)?;
    let mut relations = score_relations(gold, pred, mode, EndpointAlignment::Matching)?;
    relations.task = Task::EndToEnd;
    Ok((concepts, relations))
}

/// Aligned text table: one row per (label, strict, lenient) triple with
/// strict P/R/F followed by lenient P/R/F.
pub fn render_table(rows: &[(String, &EvalReport, &EvalReport)]) -> String {
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(4).max(4);
    let mut out = String::new();
    writeln!(
        out,
        "{:<width$}  {:>27}  {:>27}",
        "",
        "Strict            ",
        "Lenient           "
    )
    .unwrap();
    writeln!(
        out,
        "{:<width$}  {:>8} {:>8} {:>9}  {:>8} {:>8} {:>9}",
        "Task", "Prec.", "Rec.", "F(b=1)", "Prec.", "Rec.", "F(b=1)"
    )
    .unwrap();
    for (label, strict, lenient) in rows {
        let s = strict.micro;
        let l = lenient.micro;
        writeln!(
            out,
            "{label:<width$}  {:>8.4} {:>8.4} {:>9.4}  {:>8.4} {:>8.4} {:>9.4}",
            s.precision, s.recall, s.f1, l.precision, l.recall, l.f1
        )
        .unwrap();
    }
    out
}
