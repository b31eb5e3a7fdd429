#![allow(dead_code)]

use std::sync::OnceLock;

use sdoh_core::corpus::AnnotatedDoc;
use sdoh_core::linker::{train_linker, LinkerConfig, PairClassifierModel};
use sdoh_core::pipeline::Models;
use sdoh_core::schema::Schema;
use sdoh_core::synth::{generate_corpus, SynthOptions, TemplateSet};
use sdoh_core::tagger::{train_tagger, TokenClassifierModel, TrainConfig};

pub fn schema() -> Schema {
    Schema::default_sdoh()
}

pub fn synth(n: usize, seed: u64, shift: f64) -> Vec<AnnotatedDoc> {
    synth_with(n, seed, shift, &SynthOptions::default())
}

pub fn synth_with(n: usize, seed: u64, shift: f64, opts: &SynthOptions) -> Vec<AnnotatedDoc> {
    generate_corpus(&schema(), &TemplateSet::default_sdoh(), n, seed, shift, opts).unwrap()
}

pub struct Fixture {
    pub train: Vec<AnnotatedDoc>,
    pub val: Vec<AnnotatedDoc>,
    pub test: Vec<AnnotatedDoc>,
    pub ner: TokenClassifierModel,
    pub re: PairClassifierModel,
}

impl Fixture {
    pub fn models(&self) -> Models {
        Models::new(self.ner.clone(), self.re.clone(), schema()).unwrap()
    }
}

/// Models trained once per test binary on a separable corpus.
pub fn separable() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let docs = synth(280, 21, 0.0);
        let train = docs[..200].to_vec();
        let val = docs[200..220].to_vec();
        let test = docs[220..].to_vec();
        let ner = train_tagger(&train, &val, &schema(), &TrainConfig::default()).unwrap();
        let re = train_linker(&train, &val, &schema(), &LinkerConfig::default()).unwrap().model;
        Fixture {
            train,
            val,
            test,
            ner,
            re,
        }
    })
}

/// Documents whose gold surfaces all occur somewhere in `train`.
pub fn covered_by(train: &[AnnotatedDoc], docs: &[AnnotatedDoc]) -> Vec<AnnotatedDoc> {
    let seen: std::collections::HashSet<&str> =
        train.iter().flat_map(|d| d.entities.iter().map(|e| e.surface.as_str())).collect();
    docs.iter()
        .filter(|d| d.entities.iter().all(|e| seen.contains(e.surface.as_str())))
        .cloned()
        .collect()
}
