//! Two-stage extraction of social determinants of health (SDoH) from
//! clinical text: a BIO token tagger finds concepts and attributes, and a
//! pair classifier links each attribute to its concept.

pub mod corpus;
pub mod linker;
pub mod linear;
pub mod par;
pub mod pipeline;
pub mod schema;
pub mod selector;
pub mod scorer;
pub mod synth;
pub mod tagger;
pub mod textproc;
