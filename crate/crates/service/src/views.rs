//! Read-only JSON views of a session.

use serde::Serialize;

use slotforge_core::session::{Event, SessionState};
use slotforge_core::slotmap::{render_report, EvaluationReport, UNMAPPED};

#[derive(Debug, Serialize)]
pub struct QuestionView {
    pub id: String,
    pub doc_id: String,
    pub text: String,
    pub answer: String,
    /// Average similarity to the cluster, for globally ranked questions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct ClusterView {
    pub id: usize,
    pub slot: String,
    pub mapping_score: f64,
    pub size: usize,
    pub representative: Vec<QuestionView>,
    pub non_representative: Vec<QuestionView>,
}

#[derive(Debug, Serialize)]
pub struct ClustersView {
    pub session_id: String,
    pub revision: u64,
    pub clusters: Vec<ClusterView>,
}

fn question_view(state: &SessionState, id: &str, score: Option<f64>) -> QuestionView {
    let q = &state.questions[id];
    QuestionView {
        id: q.id.clone(),
        doc_id: q.doc_id.clone(),
        text: q.text.clone(),
        answer: q.answer_text.clone(),
        score,
    }
}

/// Representatives come first in global rank order, then by id; the
/// remaining members follow by id.
pub fn clusters(session_id: &str, state: &SessionState) -> ClustersView {
    let clusters = (0..state.clusters.k)
        .map(|c| {
            let members: Vec<&String> =
                state.clusters.assignment.iter().filter(|(_, &k)| k == c).map(|(id, _)| id).collect();
            let ranked = state.reps.global_reps.get(&c).map(Vec::as_slice).unwrap_or_default();
            let mut representative: Vec<QuestionView> = ranked
                .iter()
                .filter(|r| state.is_representative(&r.id))
                .map(|r| question_view(state, &r.id, Some(r.score)))
                .collect();
            let mut non_representative = Vec::new();
            for id in &members {
                if ranked.iter().any(|r| &r.id == *id) && state.is_representative(id) {
                    continue;
                }
                if state.is_representative(id) {
                    representative.push(question_view(state, id, None));
                } else {
                    non_representative.push(question_view(state, id, None));
                }
            }
            ClusterView {
                id: c,
                slot: state.mapping.slot_of(c).unwrap_or(UNMAPPED).to_string(),
                mapping_score: state.mapping.scores.get(&c).copied().unwrap_or(0.0),
                size: members.len(),
                representative,
                non_representative,
            }
        })
        .collect();
    ClustersView { session_id: session_id.to_string(), revision: state.revision(), clusters }
}

#[derive(Debug, Serialize)]
pub struct Highlight {
    pub question_id: String,
    pub question: String,
    pub answer: String,
    /// Character offsets into the document text, end exclusive.
    pub start: usize,
    pub end: usize,
    pub cluster: usize,
    pub slot: String,
    pub representative: bool,
}

#[derive(Debug, Serialize)]
pub struct DocumentView {
    pub session_id: String,
    pub revision: u64,
    pub doc_id: String,
    pub text: String,
    pub highlights: Vec<Highlight>,
}

/// `None` when the document is not in the corpus.
pub fn document(session_id: &str, state: &SessionState, doc_id: &str) -> Option<DocumentView> {
    let doc = state.corpus.document(doc_id)?;
    let mut highlights: Vec<Highlight> = state
        .questions
        .values()
        .filter(|q| q.doc_id == doc_id)
        .filter_map(|q| {
            let cluster = state.cluster_of(&q.id)?;
            Some(Highlight {
                question_id: q.id.clone(),
                question: q.text.clone(),
                answer: q.answer_text.clone(),
                start: q.pivot.span.start,
                end: q.pivot.span.end,
                cluster,
                slot: state.mapping.slot_of(cluster).unwrap_or(UNMAPPED).to_string(),
                representative: state.is_representative(&q.id),
            })
        })
        .collect();
    highlights.sort_by(|a, b| (a.start, a.end, &a.question_id).cmp(&(b.start, b.end, &b.question_id)));
    Some(DocumentView {
        session_id: session_id.to_string(),
        revision: state.revision(),
        doc_id: doc_id.to_string(),
        text: doc.text.clone(),
        highlights,
    })
}

#[derive(Debug, Serialize)]
pub struct EvaluationView<'a> {
    pub session_id: String,
    pub revision: u64,
    pub report: &'a EvaluationReport,
    /// Cluster id (as a string key) to slot name.
    pub mapping: std::collections::BTreeMap<String, String>,
    pub table: String,
}

pub fn evaluation<'a>(session_id: &str, state: &'a SessionState) -> EvaluationView<'a> {
    EvaluationView {
        session_id: session_id.to_string(),
        revision: state.revision(),
        report: &state.report,
        mapping: state.mapping.cluster_to_slot.iter().map(|(c, s)| (c.to_string(), s.clone())).collect(),
        table: render_report(&state.report),
    }
}

#[derive(Debug, Serialize)]
pub struct EventsView<'a> {
    pub session_id: String,
    pub revision: u64,
    pub events: &'a [Event],
}

/// Events with `seq > since`.
pub fn events<'a>(session_id: &str, state: &'a SessionState, since: u64) -> EventsView<'a> {
    let start = state.event_log.partition_point(|e| e.seq <= since);
    EventsView { session_id: session_id.to_string(), revision: state.revision(), events: &state.event_log[start..] }
}
