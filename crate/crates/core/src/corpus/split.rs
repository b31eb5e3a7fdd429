use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
}

/// `train_frac + test_frac = 1`; `val_of_train` is carved out of the
/// training pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub test: f64,
    pub val_of_train: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val_of_train: f64) -> Self {
        SplitRatios {
            train,
            test: 1.0 - train,
            val_of_train,
        }
    }

    fn check(&self) -> Result<(), SplitError> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !unit(self.train) || !unit(self.test) || !unit(self.val_of_train) {
            return Err(SplitError::InvalidRatios(format!(
                "fractions must lie in (0, 1): {self:?}"
            )));
        }
        if (self.train + self.test - 1.0).abs() > 1e-9 {
            return Err(SplitError::InvalidRatios(format!(
                "train + test must equal 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// `(train, validation, test)` sizes for a corpus of `n` documents.
    ///
    /// test = round(n * test); validation = ceil(pool * val_of_train) with
    /// pool = n - test; the remainder is train. This reproduces 629 ->
    /// 452/51/126 and 200 -> 90/10/100.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let test = ((n as f64) * self.test).round() as usize;
        let pool = n - test.min(n);
        let val = ((pool as f64) * self.val_of_train - 1e-9).ceil().max(0.0) as usize;
        let val = val.min(pool);
        (pool - val, val, test.min(n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

/// Seeded random partition. Each list keeps the input order of `doc_ids`.
pub fn split_corpus(
    doc_ids: &[String],
    ratios: SplitRatios,
    seed: u64,
) -> Result<CorpusSplit, SplitError> {
    if doc_ids.is_empty() {
        return Err(SplitError::EmptyCorpus);
    }
    ratios.check()?;
    let mut seen = std::collections::HashSet::new();
    for id in doc_ids {
        if !seen.insert(id) {
            return Err(SplitError::DuplicateDocId(id.clone()));
        }
    }
    let (_, n_val, n_test) = ratios.sizes(doc_ids.len());
    let mut order: Vec<usize> = (0..doc_ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    // 0 = train, 1 = validation, 2 = test
    let mut part = vec![0u8; doc_ids.len()];
    for &i in &order[..n_test] {
        part[i] = 2;
    }
    for &i in &order[n_test..n_test + n_val] {
        part[i] = 1;
    }
    let pick = |p: u8| -> Vec<String> {
        doc_ids
            .iter()
            .zip(&part)
            .filter(|(_, &q)| q == p)
            .map(|(id, _)| id.clone())
            .collect()
    };
    Ok(CorpusSplit {
        train: pick(0),
        validation: pick(1),
        test: pick(2),
        seed,
        ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("doc{i:04}")).collect()
    }

    fn sizes(s: &CorpusSplit) -> (usize, usize, usize) {
        (s.train.len(), s.validation.len(), s.test.len())
    }

    #[test]
    fn reproduces_reported_split_sizes() {
        for seed in [0, 7, 12345] {
            let s = split_corpus(&ids(629), SplitRatios::new(0.8, 0.10), seed).unwrap();
            assert_eq!(sizes(&s), (452, 51, 126));
            let s = split_corpus(&ids(200), SplitRatios::new(0.5, 0.10), seed).unwrap();
            assert_eq!(sizes(&s), (90, 10, 100));
        }
    }

    #[test]
    fn seeds_change_membership_not_sizes() {
        let a = split_corpus(&ids(10), SplitRatios::new(0.8, 0.10), 1).unwrap();
        let b = split_corpus(&ids(10), SplitRatios::new(0.8, 0.10), 2).unwrap();
        assert_eq!(sizes(&a), sizes(&b));
        assert_ne!(a.test, b.test);
    }

    #[test]
    fn errors() {
        assert_eq!(
            split_corpus(&[], SplitRatios::new(0.8, 0.1), 0),
            Err(SplitError::EmptyCorpus)
        );
        let bad = SplitRatios {
            train: 0.8,
            test: 0.3,
            val_of_train: 0.1,
        };
        assert!(matches!(
            split_corpus(&ids(5), bad, 0),
            Err(SplitError::InvalidRatios(_))
        ));
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(matches!(
            split_corpus(&dup, SplitRatios::new(0.5, 0.5), 0),
            Err(SplitError::DuplicateDocId(_))
        ));
    }

    proptest! {
        #[test]
        fn partitions_and_is_deterministic(
            n in 1usize..300,
            train in 0.05f64..0.95,
            val in 0.01f64..0.99,
            seed in any::<u64>(),
        ) {
            let ratios = SplitRatios::new(train, val);
            let docs = ids(n);
            let s = split_corpus(&docs, ratios, seed).unwrap();
            let all: HashSet<&String> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
            prop_assert_eq!(all.len(), n);
            prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), n);
            prop_assert_eq!(sizes(&s), ratios.sizes(n));
            prop_assert_eq!(&s, &split_corpus(&docs, ratios, seed).unwrap());
        }
    }
}
