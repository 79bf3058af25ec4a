use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Event, OutcomeDigest, SessionError, SessionState};
use crate::config::Method;
use crate::induction::{embedding_text, fit_tfidf, kmeans_best, random_clustering, ClusterModel};
use crate::providers::{EntityMention, GeneratedQuestion, MentionSource, Reader};
use crate::text;

/// The edit vocabulary shared by people and proxy agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Operation {
    UpweightWords {
        words: Vec<String>,
        factor: f64,
    },
    MergeClusters {
        ids: Vec<usize>,
    },
    MoveQuestion {
        qid: String,
        to_cluster: usize,
    },
    DeleteQuestion {
        qid: String,
    },
    DemoteQuestion {
        qid: String,
    },
    PromoteQuestion {
        qid: String,
    },
    EditQuestion {
        qid: String,
        new_text: String,
    },
    /// With `doc_id` only that document is asked; with `answer` as well the
    /// reader is skipped and the answer is located in the document text.
    AddQuestion {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_cluster: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        doc_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        answer: Option<String>,
    },
}

impl Operation {
    pub fn name(&self) -> &'static str {
        match self {
            Operation::UpweightWords { .. } => "UpweightWords",
            Operation::MergeClusters { .. } => "MergeClusters",
            Operation::MoveQuestion { .. } => "MoveQuestion",
            Operation::DeleteQuestion { .. } => "DeleteQuestion",
            Operation::DemoteQuestion { .. } => "DemoteQuestion",
            Operation::PromoteQuestion { .. } => "PromoteQuestion",
            Operation::EditQuestion { .. } => "EditQuestion",
            Operation::AddQuestion { .. } => "AddQuestion",
        }
    }
}

/// What an apply needs from outside the state.
#[derive(Clone, Copy)]
pub struct ApplyContext<'a> {
    pub reader: &'a dyn Reader,
    /// Event timestamp, milliseconds since the epoch.
    pub now_ms: u64,
}

#[derive(Default)]
struct AddOutcome {
    added: Vec<String>,
    unanswered: Vec<String>,
    errors: Vec<String>,
}

fn unknown(kind: &'static str, id: impl ToString) -> SessionError {
    SessionError::UnknownId { kind, id: id.to_string() }
}

fn invalid(msg: impl Into<String>) -> SessionError {
    SessionError::InvalidOp(msg.into())
}

/// Maps each new cluster label to an old one by greedy maximum overlap;
/// unmatched new labels take the unused old labels in ascending order.
pub fn relabel_by_overlap(
    old: &BTreeMap<String, usize>,
    new: &BTreeMap<String, usize>,
    k_new: usize,
    k_old: usize,
) -> Vec<usize> {
    let mut overlap = vec![vec![0usize; k_old]; k_new];
    for (id, &n) in new {
        if let Some(&o) = old.get(id) {
            if n < k_new && o < k_old {
                overlap[n][o] += 1;
            }
        }
    }
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (n, row) in overlap.iter().enumerate() {
        for (o, &count) in row.iter().enumerate() {
            if count > 0 {
                pairs.push((count, n, o));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut label: Vec<Option<usize>> = vec![None; k_new];
    let mut used = BTreeSet::new();
    for (_, n, o) in pairs {
        if label[n].is_none() && !used.contains(&o) {
            label[n] = Some(o);
            used.insert(o);
        }
    }
    let mut spare = (0..).filter(|o| !used.contains(o));
    label.into_iter().map(|l| l.unwrap_or_else(|| spare.next().expect("unbounded"))).collect()
}

impl SessionState {
    /// Applies `op` and returns the successor state with one more event.
    pub fn apply(&self, op: Operation, ctx: &ApplyContext<'_>) -> Result<(SessionState, OutcomeDigest), SessionError> {
        let mut next = self.clone();
        let outcome = next.apply_in_place(&op, ctx)?;
        next.report.timestamp = ctx.now_ms;
        next.report.action_count = self.event_log.len() + 1;
        let digest = OutcomeDigest {
            revision: self.revision() + 1,
            cluster_count: next.clusters.k,
            question_count: next.questions.len(),
            changed_clusters: changed_clusters(self, &next),
            added_questions: outcome.added,
            unanswered_documents: outcome.unanswered,
            reader_errors: outcome.errors,
            micro_f1: next.report.micro.f1,
            macro_f1: next.report.macro_avg.f1,
            state_hash: next.state_hash(),
        };
        next.event_log.push(Event { seq: self.event_log.len() as u64 + 1, ts: ctx.now_ms, op, digest: digest.clone() });
        Ok((next, digest))
    }

    /// [`SessionState::apply`] guarded by the caller's revision token.
    pub fn apply_at(
        &self,
        revision: u64,
        op: Operation,
        ctx: &ApplyContext<'_>,
    ) -> Result<(SessionState, OutcomeDigest), SessionError> {
        if revision != self.revision() {
            return Err(SessionError::StaleState { submitted: revision, current: self.revision() });
        }
        self.apply(op, ctx)
    }

    /// Re-applies every event of `events` on top of this state, reusing the
    /// recorded timestamps.
    pub fn replay(&self, events: &[Event], reader: &dyn Reader) -> Result<SessionState, SessionError> {
        let mut state = self.clone();
        for e in events {
            let ctx = ApplyContext { reader, now_ms: e.ts };
            state = state.apply(e.op.clone(), &ctx)?.0;
        }
        Ok(state)
    }

    fn question_cluster(&self, qid: &str) -> Result<usize, SessionError> {
        self.cluster_of(qid).ok_or_else(|| unknown("question", qid))
    }

    fn check_cluster(&self, c: usize) -> Result<(), SessionError> {
        if c < self.clusters.k {
            Ok(())
        } else {
            Err(unknown("cluster", c))
        }
    }

    fn apply_in_place(&mut self, op: &Operation, ctx: &ApplyContext<'_>) -> Result<AddOutcome, SessionError> {
        match op {
            Operation::UpweightWords { words, factor } => {
                if !(factor.is_finite() && *factor > 0.0) {
                    return Err(invalid("factor must be positive"));
                }
                let words: Vec<String> = words.iter().map(|w| text::normalize(w)).filter(|w| !w.is_empty()).collect();
                if words.is_empty() {
                    return Err(invalid("no words to upweight"));
                }
                for w in words {
                    self.tfidf.scale.insert(w, *factor);
                }
                self.feedback()?;
            }
            Operation::MergeClusters { ids } => {
                let distinct: BTreeSet<usize> = ids.iter().copied().collect();
                if distinct.len() < 2 {
                    return Err(invalid("merge needs at least two distinct clusters"));
                }
                for &c in &distinct {
                    self.check_cluster(c)?;
                }
                let target = *distinct.first().expect("non-empty");
                for c in self.clusters.assignment.values_mut().chain(self.pins.values_mut()) {
                    if distinct.contains(c) {
                        *c = target;
                    }
                }
                self.renumber();
                self.recompute();
            }
            Operation::MoveQuestion { qid, to_cluster } => {
                self.question_cluster(qid)?;
                self.check_cluster(*to_cluster)?;
                self.clusters.assignment.insert(qid.clone(), *to_cluster);
                self.pins.insert(qid.clone(), *to_cluster);
                self.renumber();
                self.recompute();
            }
            Operation::DeleteQuestion { qid } => {
                self.question_cluster(qid)?;
                if self.questions.len() == 1 {
                    return Err(invalid("cannot delete the last question"));
                }
                self.questions.remove(qid);
                self.clusters.assignment.remove(qid);
                self.pins.remove(qid);
                self.rep_overrides.remove(qid);
                self.renumber();
                self.recompute();
            }
            Operation::DemoteQuestion { qid } => {
                self.question_cluster(qid)?;
                if !self.is_representative(qid) {
                    return Err(invalid(format!("{qid} is not representative")));
                }
                self.set_representative(qid, false);
            }
            Operation::PromoteQuestion { qid } => {
                self.question_cluster(qid)?;
                if self.is_representative(qid) {
                    return Err(invalid(format!("{qid} is already representative")));
                }
                self.set_representative(qid, true);
            }
            Operation::EditQuestion { qid, new_text } => {
                self.question_cluster(qid)?;
                let new_text = text::collapse_whitespace(new_text);
                if new_text.is_empty() {
                    return Err(invalid("question text is empty"));
                }
                let doc_id = self.questions[qid].doc_id.clone();
                let bleached = embedding_text(self.config.method, &new_text, self.mentions_of(&doc_id));
                let embedding = self.tfidf.embed(&bleached).values;
                let target = match self.pins.get(qid) {
                    Some(&c) => c,
                    None => self.clusters.nearest_centroid(&embedding),
                };
                let q = self.questions.get_mut(qid).expect("checked");
                q.text = new_text;
                q.bleached = bleached;
                q.embedding = embedding;
                self.clusters.assignment.insert(qid.clone(), target);
                self.renumber();
                self.recompute();
            }
            Operation::AddQuestion { text, target_cluster, doc_id, answer } => {
                return self.add_question(text, *target_cluster, doc_id.as_deref(), answer.as_deref(), ctx.reader);
            }
        }
        Ok(AddOutcome::default())
    }

    /// Forces the question's representative flag, dropping a contrary
    /// override first so demote then promote returns to the computed set.
    fn set_representative(&mut self, qid: &str, value: bool) {
        if self.rep_overrides.get(qid) == Some(&!value) {
            self.rep_overrides.remove(qid);
            self.recompute();
            if self.is_representative(qid) == value {
                return;
            }
        }
        self.rep_overrides.insert(qid.to_string(), value);
        self.recompute();
    }

    /// Re-embeds every question, re-clusters with the session seed, keeps
    /// pinned questions in place, then recomputes everything downstream.
    pub fn feedback(&mut self) -> Result<(), SessionError> {
        let bleached: Vec<&str> = self.questions.values().map(|q| q.bleached.as_str()).collect();
        let tfidf = fit_tfidf(&bleached, &self.tfidf.scale)?;
        for q in self.questions.values_mut() {
            q.embedding = tfidf.embed(&q.bleached).values;
        }
        self.tfidf = tfidf;

        let ids: Vec<String> = self.questions.keys().cloned().collect();
        let vectors: Vec<Vec<f64>> = self.questions.values().map(|q| q.embedding.clone()).collect();
        let k = self.clusters.k;
        let assignment = if self.config.method == Method::Random {
            random_clustering(ids.len(), k, self.config.seed)?
        } else {
            let seeds = (0..self.config.restarts as u64).map(|i| self.config.seed.wrapping_add(i));
            kmeans_best(&vectors, k, seeds)?.assignment
        };
        let fresh: BTreeMap<String, usize> = ids.iter().cloned().zip(assignment).collect();
        let label = relabel_by_overlap(&self.clusters.assignment, &fresh, k, k);
        let mut assignment: BTreeMap<String, usize> = fresh.into_iter().map(|(id, c)| (id, label[c])).collect();
        for (id, &c) in &self.pins {
            assignment.insert(id.clone(), c);
        }
        self.clusters = ClusterModel {
            k,
            centroids: Vec::new(),
            degenerate: Vec::new(),
            assignment,
            inertia: 0.0,
            seed: self.config.seed,
        };
        self.renumber();
        self.recompute();
        Ok(())
    }

    fn relevant_documents(&self, question: &str) -> Vec<String> {
        let padded = format!(" {} ", text::tokenize(question).join(" "));
        self.corpus
            .documents
            .iter()
            .filter(|d| {
                self.mentions_of(&d.id).iter().any(|m| {
                    let surface = text::tokenize(&m.surface).join(" ");
                    !surface.is_empty() && padded.contains(&format!(" {surface} "))
                })
            })
            .map(|d| d.id.clone())
            .collect()
    }

    fn add_question(
        &mut self,
        question: &str,
        target: Option<usize>,
        doc_id: Option<&str>,
        answer: Option<&str>,
        reader: &dyn Reader,
    ) -> Result<AddOutcome, SessionError> {
        let question = text::collapse_whitespace(question);
        if question.is_empty() {
            return Err(invalid("question text is empty"));
        }
        if let Some(c) = target {
            self.check_cluster(c)?;
        }
        let mut outcome = AddOutcome::default();
        let mut tuples: Vec<(String, EntityMention)> = Vec::new();
        match (doc_id, answer) {
            (Some(doc_id), Some(answer)) => {
                let doc = self.corpus.document(doc_id).ok_or_else(|| unknown("document", doc_id))?;
                let (start, end) = text::find_ignore_case(&doc.text, answer.trim())
                    .ok_or_else(|| invalid(format!("answer {answer:?} does not occur in {doc_id}")))?;
                let surface = doc.text[start..end].to_string();
                let label = self
                    .mentions_of(doc_id)
                    .iter()
                    .find(|m| m.surface.eq_ignore_ascii_case(&surface))
                    .map_or_else(|| "ANSWER".to_string(), |m| m.label.clone());
                let span = text::byte_range_to_span(&doc.text, start, end);
                tuples.push((
                    doc_id.to_string(),
                    EntityMention { surface, span, label, source: MentionSource::External },
                ));
            }
            (doc_id, _) => {
                let docs = match doc_id {
                    Some(d) => {
                        self.corpus.document(d).ok_or_else(|| unknown("document", d))?;
                        vec![d.to_string()]
                    }
                    None => self.relevant_documents(&question),
                };
                if docs.is_empty() {
                    return Err(SessionError::NoRelevantDocument(question));
                }
                let mut first_error = None;
                for d in docs {
                    let doc = self.corpus.document(&d).expect("listed");
                    match reader.answer(&question, doc, self.mentions_of(&d)) {
                        Ok(Some(a)) => {
                            let label = self
                                .mentions_of(&d)
                                .iter()
                                .find(|m| m.span == a.span)
                                .map_or_else(|| "ANSWER".to_string(), |m| m.label.clone());
                            let mention =
                                EntityMention { surface: a.text, span: a.span, label, source: MentionSource::External };
                            tuples.push((d, mention));
                        }
                        Ok(None) => outcome.unanswered.push(d),
                        Err(e) => {
                            outcome.errors.push(format!("{d}: {e}"));
                            first_error.get_or_insert(e);
                        }
                    }
                }
                if tuples.is_empty() {
                    if let Some(e) = first_error {
                        return Err(SessionError::Reader(e));
                    }
                }
            }
        }

        for (doc_id, pivot) in tuples {
            self.added += 1;
            let id = format!("{doc_id}:a{}", self.added);
            let bleached = embedding_text(self.config.method, &question, self.mentions_of(&doc_id));
            let embedding = self.tfidf.embed(&bleached).values;
            let cluster = target.unwrap_or_else(|| self.clusters.nearest_centroid(&embedding));
            self.questions.insert(
                id.clone(),
                GeneratedQuestion {
                    id: id.clone(),
                    doc_id,
                    text: question.clone(),
                    answer_text: pivot.surface.clone(),
                    pivot,
                    bleached,
                    embedding,
                    cluster_id: Some(cluster),
                    representative: true,
                },
            );
            self.clusters.assignment.insert(id.clone(), cluster);
            if target.is_some() {
                self.pins.insert(id.clone(), cluster);
            }
            self.rep_overrides.insert(id.clone(), true);
            outcome.added.push(id);
        }
        self.recompute();
        Ok(outcome)
    }
}

fn changed_clusters(before: &SessionState, after: &SessionState) -> Vec<usize> {
    let (b, a) = (members(before), members(after));
    a.iter().filter(|(c, set)| b.get(*c) != Some(*set)).map(|(c, _)| *c).collect()
}

fn members(s: &SessionState) -> BTreeMap<usize, BTreeSet<&str>> {
    let mut m: BTreeMap<usize, BTreeSet<&str>> = BTreeMap::new();
    for (id, &c) in &s.clusters.assignment {
        m.entry(c).or_default().insert(id.as_str());
    }
    m
}
