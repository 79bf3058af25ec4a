//! Sessions assembled from hand-written questions rather than the providers.
//!
//! A fixture file is one JSON object:
//!
//! ```json
//! {
//!   "documents": [{"id": "d1", "text": "...", "gold": [...], "entities": [...]}],
//!   "questions": [{"id": "q0", "doc_id": "d1", "text": "...?", "answer": "..."}],
//!   "assignment": {"q0": 0}
//! }
//! ```
//!
//! Documents use the corpus jsonl record shape. Each document's mentions are
//! its entity hints. `assignment` is optional and fixes the initial clusters.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use serde_json::Value;

use crate::config::InductionConfig;
use crate::corpus::{load_corpus, parse_corpus, Corpus, CorpusFormat, Document};
use crate::induction::{build_session, generate, ClusterSource, PipelineError};
use crate::providers::{EntityMention, GeneratedQuestion, MentionSource, Providers};
use crate::session::SessionState;
use crate::slotmap::gold_slot;
use crate::text::{self, Span};

#[derive(Debug, Clone, Deserialize)]
pub struct QuestionSpec {
    pub id: String,
    pub doc_id: String,
    pub text: String,
    pub answer: String,
}

#[derive(Deserialize)]
struct RawFixture {
    documents: Vec<Value>,
    questions: Vec<QuestionSpec>,
    #[serde(default)]
    assignment: Option<BTreeMap<String, usize>>,
}

#[derive(Debug, Clone)]
pub struct SessionFixture {
    pub corpus: Corpus,
    pub mentions: BTreeMap<String, Vec<EntityMention>>,
    pub questions: Vec<GeneratedQuestion>,
    pub assignment: Option<BTreeMap<String, usize>>,
}

/// Locates `surface` in the document, case-insensitively.
fn locate(doc: &Document, surface: &str) -> Option<(String, Span)> {
    let (start, end) = text::find_ignore_case(&doc.text, surface)?;
    Some((doc.text[start..end].to_string(), text::byte_range_to_span(&doc.text, start, end)))
}

/// Entity hints of `doc` as mentions, in text order. Hints that do not occur
/// in the text are dropped.
pub fn hint_mentions(doc: &Document) -> Vec<EntityMention> {
    let mut out: Vec<EntityMention> = doc
        .entity_hints
        .iter()
        .filter_map(|h| {
            let (surface, span) = match (h.start, h.end) {
                (Some(s), Some(e)) => (text::slice(&doc.text, Span::new(s, e))?.to_string(), Span::new(s, e)),
                _ => locate(doc, &h.surface)?,
            };
            Some(EntityMention { surface, span, label: h.label.clone(), source: MentionSource::GoldHint })
        })
        .collect();
    out.sort_by_key(|m| m.span);
    out
}

/// A question with `answer` as its pivot, located in `doc`.
pub fn question_from_spec(
    doc: &Document,
    mentions: &[EntityMention],
    spec: &QuestionSpec,
) -> Result<GeneratedQuestion, String> {
    let (surface, span) = locate(doc, spec.answer.trim())
        .ok_or_else(|| format!("answer {:?} of {} not in {}", spec.answer, spec.id, doc.id))?;
    let label = mentions.iter().find(|m| m.span == span).map_or_else(|| "ANSWER".to_string(), |m| m.label.clone());
    Ok(GeneratedQuestion {
        id: spec.id.clone(),
        doc_id: doc.id.clone(),
        text: text::collapse_whitespace(&spec.text),
        answer_text: surface.clone(),
        pivot: EntityMention { surface, span, label, source: MentionSource::GoldHint },
        bleached: String::new(),
        embedding: Vec::new(),
        cluster_id: None,
        representative: false,
    })
}

/// Assigns every question to the cluster numbered by its gold slot's
/// position in the slot inventory. Fails on a question matching no gold
/// answer at `theta`.
pub fn gold_assignment(
    corpus: &Corpus,
    questions: &[GeneratedQuestion],
    theta: f64,
) -> Result<BTreeMap<String, usize>, String> {
    let slots: Vec<&String> = corpus.slot_inventory.iter().collect();
    questions
        .iter()
        .map(|q| {
            let (slot, _) = gold_slot(corpus, &q.doc_id, &q.answer_text, theta)
                .ok_or_else(|| format!("{} answers no gold slot", q.id))?;
            let idx = slots.iter().position(|s| **s == slot).expect("gold slot is in the inventory");
            Ok((q.id.clone(), idx))
        })
        .collect()
}

impl SessionFixture {
    pub fn from_json(raw: &str) -> Result<Self, String> {
        let raw: RawFixture = serde_json::from_str(raw).map_err(|e| e.to_string())?;
        let lines: Vec<String> = raw.documents.iter().map(Value::to_string).collect();
        let corpus = parse_corpus(&lines.join("\n"), CorpusFormat::Jsonl).map_err(|e| e.to_string())?;
        let mentions: BTreeMap<String, Vec<EntityMention>> =
            corpus.documents.iter().map(|d| (d.id.clone(), hint_mentions(d))).collect();
        let mut questions = Vec::new();
        for spec in &raw.questions {
            let doc = corpus.document(&spec.doc_id).ok_or_else(|| format!("unknown document {}", spec.doc_id))?;
            questions.push(question_from_spec(doc, &mentions[&doc.id], spec)?);
        }
        Ok(SessionFixture { corpus, mentions, questions, assignment: raw.assignment })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let raw = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&raw)
    }

    /// Builds the session, using the fixture's assignment when it has one.
    pub fn build(&self, config: &InductionConfig) -> Result<SessionState, PipelineError> {
        let source = match &self.assignment {
            Some(a) => ClusterSource::Explicit(a.clone()),
            None => ClusterSource::Induce,
        };
        build_session(Arc::new(self.corpus.clone()), config, self.mentions.clone(), self.questions.clone(), source)
    }
}

/// A corpus with every generated question in its gold cluster except the
/// listed ones, which are placed in the cluster of another slot:
/// `{"corpus": "synthetic.jsonl", "misplaced": {"s01:q1": "Drug"}}`. The
/// corpus path is relative to the fixture file.
#[derive(Debug, Clone, Deserialize)]
pub struct MisplacedFixture {
    pub corpus: String,
    pub misplaced: BTreeMap<String, String>,
}

impl MisplacedFixture {
    pub fn load(path: &Path) -> Result<Self, String> {
        let raw = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut f: MisplacedFixture = serde_json::from_str(&raw).map_err(|e| format!("{}: {e}", path.display()))?;
        if let Some(dir) = path.parent() {
            f.corpus = dir.join(&f.corpus).to_string_lossy().into_owned();
        }
        Ok(f)
    }

    /// Generates questions with the built-in providers and clusters them by
    /// gold slot, then applies the misplacements.
    pub fn build(&self, config: &InductionConfig) -> Result<SessionState, String> {
        let corpus = Arc::new(load_corpus(Path::new(&self.corpus), CorpusFormat::Jsonl).map_err(|e| e.to_string())?);
        let generated = generate(&corpus, &Providers::builtin_for(&corpus)).map_err(|e| e.to_string())?;
        let mut assignment = gold_assignment(&corpus, &generated.questions, config.theta)?;
        let slots: Vec<&String> = corpus.slot_inventory.iter().collect();
        for (qid, slot) in &self.misplaced {
            let idx = slots.iter().position(|s| *s == slot).ok_or_else(|| format!("unknown slot {slot}"))?;
            *assignment.get_mut(qid).ok_or_else(|| format!("unknown question {qid}"))? = idx;
        }
        build_session(corpus, config, generated.mentions, generated.questions, ClusterSource::Explicit(assignment))
            .map_err(|e| e.to_string())
    }
}
