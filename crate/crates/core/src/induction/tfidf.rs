use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::InductionError;
use crate::text;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfModel {
    /// Token to column index; columns follow sorted token order.
    pub vocabulary: BTreeMap<String, usize>,
    /// Indexed by column.
    pub doc_freq: Vec<usize>,
    pub n_docs: usize,
    /// Weight multipliers; tokens absent here use factor 1.
    pub scale: BTreeMap<String, f64>,
}

/// An embedded question. `degenerate` marks the all-zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

pub fn fit_tfidf<S: AsRef<str>>(bleached: &[S], scale: &BTreeMap<String, f64>) -> Result<TfIdfModel, InductionError> {
    if bleached.is_empty() {
        return Err(InductionError::EmptyCorpus);
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for q in bleached {
        let distinct: BTreeSet<String> = text::tokenize(q.as_ref()).into_iter().collect();
        for t in distinct {
            *df.entry(t).or_default() += 1;
        }
    }
    let vocabulary = df.keys().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    let doc_freq = df.values().copied().collect();
    Ok(TfIdfModel { vocabulary, doc_freq, n_docs: bleached.len(), scale: scale.clone() })
}

impl TfIdfModel {
    pub fn dim(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn idf(&self, token: &str) -> Option<f64> {
        let col = *self.vocabulary.get(token)?;
        Some(1.0 + ((1.0 + self.n_docs as f64) / (1.0 + self.doc_freq[col] as f64)).ln())
    }

    pub fn scale_of(&self, token: &str) -> f64 {
        self.scale.get(token).copied().unwrap_or(1.0)
    }

    /// Un-normalized tf·idf·scale weights.
    pub fn raw_weights(&self, bleached: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for t in text::tokenize(bleached) {
            if let Some(&col) = self.vocabulary.get(&t) {
                v[col] += 1.0;
            }
        }
        for (t, &col) in &self.vocabulary {
            if v[col] != 0.0 {
                v[col] *= self.idf(t).unwrap_or(0.0) * self.scale_of(t);
            }
        }
        v
    }

    pub fn embed(&self, bleached: &str) -> Embedding {
        let mut values = self.raw_weights(bleached);
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Embedding { values, degenerate: true };
        }
        for x in &mut values {
            *x /= norm;
        }
        Embedding { values, degenerate: false }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; 0 when either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}
