use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KappaError {
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no units to compare")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    pub kappa: f64,
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    pub unit_count: usize,
}

/// Cohen's kappa over paired unit labels. The CLI feeds per-token BIO labels.
///
/// When chance agreement is 1 (both annotators used one identical label
/// throughout) kappa is defined as 1.
pub fn compute_kappa<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<KappaReport, KappaError> {
    if a.len() != b.len() {
        return Err(KappaError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(KappaError::EmptyInput);
    }
    let n = a.len() as u128;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as u128;
    let mut counts: HashMap<&T, (u128, u128)> = HashMap::new();
    for x in a {
        counts.entry(x).or_default().0 += 1;
    }
    for y in b {
        counts.entry(y).or_default().1 += 1;
    }
    // chance agreement numerator over n^2, summed exactly
    let chance: u128 = counts.values().map(|(ca, cb)| ca * cb).sum();
    let n2 = n * n;
    let kappa = if chance == n2 {
        1.0
    } else {
        ((agree * n) as i128 - chance as i128) as f64 / (n2 - chance) as f64
    };
    Ok(KappaReport {
        kappa,
        observed_agreement: agree as f64 / n as f64,
        expected_agreement: chance as f64 / n2 as f64,
        unit_count: a.len(),
    })
}
