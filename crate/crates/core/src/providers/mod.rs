//! The three model roles the pipeline depends on: entity recognition,
//! question generation and extractive reading.
//!
//! Each role is a trait with a deterministic built-in implementation and a
//! remote implementation that speaks the JSON wire format over HTTP or replays
//! recorded request/response fixtures.

mod external;
mod ner;
mod qgen;
mod reader;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Document};
use crate::text::Span;

pub use external::{
    call_external, canonical_json, ExternalResponse, FixtureStore, HttpTransport, ProviderEndpoint, RemoteProvider,
    RetryPolicy, Transport,
};
pub use ner::{identify_entities, GazetteerEntry, GazetteerRecognizer, PatternRule};
pub use qgen::{QgOutput, TemplateQuestionGenerator, WhTemplates};
pub use reader::{LexicalReader, ReaderAnswer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("bad response after {attempts} attempt(s): {message}")]
    BadResponse { attempts: u32, message: String },
    #[error("no recorded fixture for request {0}")]
    FixtureMiss(String),
    #[error("invalid provider configuration: {0}")]
    Config(String),
}

impl ProviderError {
    pub fn attempts(&self) -> u32 {
        match self {
            ProviderError::Timeout { attempts }
            | ProviderError::Transport { attempts, .. }
            | ProviderError::BadResponse { attempts, .. } => *attempts,
            ProviderError::FixtureMiss(_) | ProviderError::Config(_) => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionSource {
    Gazetteer,
    Pattern,
    External,
    GoldHint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub surface: String,
    pub span: Span,
    pub label: String,
    pub source: MentionSource,
}

/// A factoid question pivoting on one entity mention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedQuestion {
    pub id: String,
    pub doc_id: String,
    pub text: String,
    pub pivot: EntityMention,
    pub answer_text: String,
    pub bleached: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub embedding: Vec<f64>,
    pub cluster_id: Option<usize>,
    pub representative: bool,
}

pub trait EntityRecognizer: Send + Sync {
    fn identify(&self, doc: &Document) -> Result<Vec<EntityMention>, ProviderError>;
}

pub trait QuestionGenerator: Send + Sync {
    fn generate(&self, doc: &Document, mentions: &[EntityMention]) -> Result<QgOutput, ProviderError>;
}

pub trait Reader: Send + Sync {
    fn answer(
        &self,
        question: &str,
        doc: &Document,
        mentions: &[EntityMention],
    ) -> Result<Option<ReaderAnswer>, ProviderError>;
}

/// One implementation per role, as used by the induction pipeline.
pub struct Providers {
    pub ner: Box<dyn EntityRecognizer>,
    pub qg: Box<dyn QuestionGenerator>,
    pub reader: Box<dyn Reader>,
}

impl Providers {
    /// Built-in providers: shipped gazetteer and patterns plus every entity
    /// hint carried by the corpus, shipped wh-templates, lexical reader.
    pub fn builtin_for(corpus: &Corpus) -> Self {
        Providers {
            ner: Box::new(GazetteerRecognizer::shipped().with_corpus_hints(corpus)),
            qg: Box::new(TemplateQuestionGenerator::new(WhTemplates::shipped())),
            reader: Box::new(LexicalReader::default()),
        }
    }

    /// All three roles served by one remote transport.
    pub fn remote(transport: std::sync::Arc<dyn Transport>) -> Self {
        let provider = RemoteProvider::new(transport);
        Providers { ner: Box::new(provider.clone()), qg: Box::new(provider.clone()), reader: Box::new(provider) }
    }
}

/// Parses a provider spec: `builtin` (or nothing) for the built-ins, an
/// `http(s)://` endpoint, or a fixture file or directory of `*.jsonl`
/// recordings. Returns the transport for the remote cases.
pub fn transport_from_spec(spec: Option<&str>) -> Result<Option<std::sync::Arc<dyn Transport>>, ProviderError> {
    match spec.map(str::trim) {
        None | Some("") | Some("builtin") => Ok(None),
        Some(url) if url.starts_with("http://") || url.starts_with("https://") => {
            Ok(Some(std::sync::Arc::new(HttpTransport::new(ProviderEndpoint::new(url), 4)?)))
        }
        Some(path) => Ok(Some(std::sync::Arc::new(FixtureStore::load(std::path::Path::new(path))?))),
    }
}

impl Providers {
    /// Built-ins when `transport` is `None`, otherwise remote.
    pub fn from_transport(transport: Option<std::sync::Arc<dyn Transport>>, corpus: &Corpus) -> Self {
        match transport {
            Some(t) => Providers::remote(t),
            None => Providers::builtin_for(corpus),
        }
    }
}

/// Wire request shared by all three roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub role: ProviderRole,
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderRole {
    Ner,
    Qg,
    Reader,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMention {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub label: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProviderResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mentions: Option<Vec<WireMention>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}
