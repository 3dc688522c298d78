//! Overlap between a training corpus and a test corpus of function-name
//! sequences.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsp_sampler::Fsp;

pub type Sequence = Vec<String>;

/// Function names of an FSP read left to right.
pub fn fsp_tokens(fsp: &Fsp) -> Sequence {
    fsp.flat_functions().into_iter().map(str::to_string).collect()
}

/// Percentage of test sequences found verbatim in the training corpus.
pub fn exact_match_rate(train: &[Sequence], test: &[Sequence]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Precondition("test corpus is empty".into()));
    }
    let seen: HashSet<&Sequence> = train.iter().collect();
    let hits = test.iter().filter(|s| seen.contains(s)).count();
    Ok(100.0 * hits as f64 / test.len() as f64)
}

fn ngrams(corpus: &[Sequence], n: usize) -> BTreeSet<&[String]> {
    corpus.iter().flat_map(|s| s.windows(n)).collect()
}

/// Share of distinct test n-grams that also occur in the training corpus.
pub fn ngram_overlap(train: &[Sequence], test: &[Sequence], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Precondition("n must be at least 1".into()));
    }
    let test_grams = ngrams(test, n);
    if test_grams.is_empty() {
        return Err(Error::Precondition(format!("no test sequence has {n} or more tokens")));
    }
    let train_grams = ngrams(train, n);
    let shared = test_grams.iter().filter(|g| train_grams.contains(*g)).count();
    Ok(100.0 * shared as f64 / test_grams.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationReport {
    pub exact_match_pct: f64,
    pub ngram_pct: f64,
    pub n: usize,
}

pub fn report(train: &[Sequence], test: &[Sequence], n: usize) -> Result<ContaminationReport> {
    Ok(ContaminationReport {
        exact_match_pct: exact_match_rate(train, test)?,
        ngram_pct: ngram_overlap(train, test, n)?,
        n,
    })
}
