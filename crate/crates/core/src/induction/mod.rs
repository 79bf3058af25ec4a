//! The AI-only pipeline: bleach, embed, cluster, pick representatives.

mod bleach;
mod kmeans;
mod pipeline;
mod reps;
mod tfidf;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ConfigError;
use crate::providers::ProviderError;

pub use bleach::bleach;
pub use kmeans::{
    kmeans, kmeans_best, nearest, random_clustering, unit_mean, ClusterModel, KMeansRun, MAX_ITERATIONS,
    SHIFT_TOLERANCE,
};
pub use pipeline::{build_session, embedding_text, generate, run_induction, ClusterSource, Generated};
pub use reps::{document_representatives, global_representatives, RankedQuestion, RepresentativeSet};
pub use tfidf::{cosine, dot, fit_tfidf, norm, Embedding, TfIdfModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InductionError {
    #[error("cannot fit on an empty question list")]
    EmptyCorpus,
    #[error("k = {k} is invalid with {available} non-degenerate question(s)")]
    BadK { k: usize, available: usize },
    #[error("no questions generated")]
    NoQuestions,
    #[error("no documents")]
    NoDocuments,
    #[error("k is unset and the corpus has no gold slots")]
    NoSlots,
    #[error("question {0} has no cluster")]
    Unassigned(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Corpus,
    Ner,
    Qgen,
    Embed,
    Cluster,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Corpus => "corpus",
            Stage::Ner => "ner",
            Stage::Qgen => "qgen",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: InductionError,
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<InductionError>) -> Self {
        PipelineError { stage, source: source.into() }
    }
}

/// Per-stage counts recorded by a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub documents: usize,
    pub mentions: usize,
    pub questions: usize,
    pub skipped_mentions: usize,
    pub degenerate_embeddings: usize,
    pub clusters: usize,
}
