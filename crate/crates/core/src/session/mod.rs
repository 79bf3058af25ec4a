//! Live session state and the operations that edit it.

mod ops;
mod snapshot;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::InductionConfig;
use crate::corpus::Corpus;
use crate::induction::{
    document_representatives, global_representatives, unit_mean, ClusterModel, InductionError, PipelineError,
    RepresentativeSet, StageCounts, TfIdfModel,
};
use crate::providers::{EntityMention, GeneratedQuestion, ProviderError};
use crate::slotmap::{self, Candidate, EvaluationReport, Prediction, SlotMapping, UNMAPPED};

pub use ops::{relabel_by_overlap, ApplyContext, Operation};
pub use snapshot::{from_snapshot_json, restore, snapshot, to_snapshot_json, SNAPSHOT_FORMAT, SNAPSHOT_VERSION};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown {kind} `{id}`")]
    UnknownId { kind: &'static str, id: String },
    #[error("invalid operation: {0}")]
    InvalidOp(String),
    #[error("stale revision {submitted}; current revision is {current}")]
    StaleState { submitted: u64, current: u64 },
    #[error("no document contains an entity mentioned in `{0}`")]
    NoRelevantDocument(String),
    #[error("reader failed: {0}")]
    Reader(#[from] ProviderError),
    #[error(transparent)]
    Induction(#[from] InductionError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("snapshot version {found} is newer than supported version {supported}")]
    Version { found: u64, supported: u64 },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
}

/// Summary of what one applied operation changed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDigest {
    pub revision: u64,
    pub cluster_count: usize,
    pub question_count: usize,
    /// Cluster ids (after the operation) whose membership differs.
    pub changed_clusters: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub added_questions: Vec<String>,
    /// Relevant documents the reader could not answer.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unanswered_documents: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reader_errors: Vec<String>,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub state_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub ts: u64,
    pub op: Operation,
    pub digest: OutcomeDigest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub config: InductionConfig,
    pub corpus: Arc<Corpus>,
    /// Entity mentions per document, as found at induction time.
    pub mentions: BTreeMap<String, Vec<EntityMention>>,
    pub questions: BTreeMap<String, GeneratedQuestion>,
    pub tfidf: TfIdfModel,
    pub clusters: ClusterModel,
    pub reps: RepresentativeSet,
    pub mapping: SlotMapping,
    pub report: EvaluationReport,
    /// Questions placed by the user, with the cluster they must stay in.
    pub pins: BTreeMap<String, usize>,
    /// Representative flags forced by demote/promote.
    pub rep_overrides: BTreeMap<String, bool>,
    pub stage_counts: StageCounts,
    /// Counter behind ids of added questions.
    pub added: usize,
    pub event_log: Vec<Event>,
}

impl SessionState {
    /// A state with empty representatives, mapping and report; call
    /// [`SessionState::recompute`] before use.
    pub fn assemble(
        corpus: Arc<Corpus>,
        config: InductionConfig,
        mentions: BTreeMap<String, Vec<EntityMention>>,
        questions: BTreeMap<String, GeneratedQuestion>,
        tfidf: TfIdfModel,
        clusters: ClusterModel,
    ) -> Self {
        let reps = RepresentativeSet {
            global_reps: BTreeMap::new(),
            doc_reps: BTreeMap::new(),
            tau: config.tau,
            top_k: config.top_k,
        };
        SessionState {
            config,
            corpus,
            mentions,
            questions,
            tfidf,
            clusters,
            reps,
            mapping: SlotMapping { cluster_to_slot: BTreeMap::new(), scores: BTreeMap::new() },
            report: EvaluationReport::default(),
            pins: BTreeMap::new(),
            rep_overrides: BTreeMap::new(),
            stage_counts: StageCounts::default(),
            added: 0,
            event_log: Vec::new(),
        }
    }

    /// Optimistic-concurrency token: 1 for a fresh session, +1 per event.
    pub fn revision(&self) -> u64 {
        1 + self.event_log.len() as u64
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.k
    }

    pub fn cluster_of(&self, qid: &str) -> Option<usize> {
        self.clusters.assignment.get(qid).copied()
    }

    pub fn mentions_of(&self, doc_id: &str) -> &[EntityMention] {
        self.mentions.get(doc_id).map(Vec::as_slice).unwrap_or_default()
    }

    fn embedding(&self, qid: &str) -> Option<&[f64]> {
        self.questions.get(qid).map(|q| q.embedding.as_slice())
    }

    /// Drops empty clusters and renumbers the rest densely, keeping order.
    pub fn renumber(&mut self) {
        let sizes = self.clusters.sizes();
        let mut remap = BTreeMap::new();
        for (old, &n) in sizes.iter().enumerate() {
            if n > 0 {
                remap.insert(old, remap.len());
            }
        }
        if remap.len() == self.clusters.k {
            return;
        }
        for c in self.clusters.assignment.values_mut() {
            *c = remap[c];
        }
        for c in self.pins.values_mut() {
            *c = remap[c];
        }
        self.clusters.k = remap.len();
    }

    /// Centroids, representatives, slot mapping and evaluation from the
    /// current assignment. Keeps `report.timestamp` and `action_count`.
    pub fn recompute(&mut self) {
        let mut clusters = self.clusters.clone();
        clusters.refresh(|id| self.embedding(id));
        self.clusters = clusters;
        self.reps = self.representatives();

        let rep_ids: BTreeSet<&String> = self.reps.doc_reps.values().flat_map(|m| m.values().flatten()).collect();
        let flags: Vec<(String, Option<usize>, bool)> =
            self.questions.keys().map(|id| (id.clone(), self.cluster_of(id), rep_ids.contains(id))).collect();
        for (id, cluster, rep) in flags {
            let q = self.questions.get_mut(&id).expect("known id");
            q.cluster_id = cluster;
            q.representative = rep;
        }

        let mut candidates: BTreeMap<usize, Vec<Candidate>> = (0..self.clusters.k).map(|c| (c, Vec::new())).collect();
        for (doc_id, by_cluster) in &self.reps.doc_reps {
            for (c, ids) in by_cluster {
                for id in ids {
                    candidates
                        .entry(*c)
                        .or_default()
                        .push(Candidate { doc_id: doc_id.clone(), answer: self.questions[id].answer_text.clone() });
                }
            }
        }
        self.mapping = slotmap::map_clusters(&candidates, &self.corpus);
        let (timestamp, action_count) = (self.report.timestamp, self.report.action_count);
        self.report = slotmap::evaluate(&self.predictions(), &self.corpus, self.config.theta);
        self.report.timestamp = timestamp;
        self.report.action_count = action_count;
    }

    /// Demoted questions are left out of both rankings and of the cluster
    /// mean; promoted ones are kept whatever their similarity.
    fn representatives(&self) -> RepresentativeSet {
        let mut global_reps = BTreeMap::new();
        let mut doc_reps: BTreeMap<String, BTreeMap<usize, Vec<String>>> = BTreeMap::new();
        for c in 0..self.clusters.k {
            let members = self.clusters.members(c);
            let eligible: Vec<(&str, &[f64])> = members
                .iter()
                .filter(|id| self.rep_overrides.get(**id) != Some(&false))
                .filter_map(|id| self.embedding(id).map(|v| (*id, v)))
                .collect();
            global_reps.insert(c, global_representatives(&eligible, self.config.top_k));
            let dim = self.tfidf.dim();
            let mean = unit_mean(eligible.iter().map(|(_, v)| *v), dim).unwrap_or_else(|| vec![0.0; dim]);

            let mut by_doc: BTreeMap<&str, Vec<(&str, &[f64])>> = BTreeMap::new();
            for id in &members {
                let q = &self.questions[*id];
                by_doc.entry(q.doc_id.as_str()).or_default().push((id, q.embedding.as_slice()));
            }
            for (doc, qs) in by_doc {
                let kept: Vec<(&str, &[f64])> =
                    qs.into_iter().filter(|(id, _)| self.rep_overrides.get(*id) != Some(&false)).collect();
                let mut chosen = document_representatives(&kept, &mean, self.config.tau);
                for (id, _) in &kept {
                    if self.rep_overrides.get(*id) == Some(&true) && !chosen.iter().any(|c| c == id) {
                        chosen.push(id.to_string());
                    }
                }
                if !chosen.is_empty() {
                    doc_reps.entry(doc.to_string()).or_default().insert(c, chosen);
                }
            }
        }
        RepresentativeSet { global_reps, doc_reps, tau: self.config.tau, top_k: self.config.top_k }
    }

    /// One prediction per representative question in a mapped cluster.
    pub fn predictions(&self) -> Vec<Prediction> {
        let mut out = Vec::new();
        for (doc_id, by_cluster) in &self.reps.doc_reps {
            for (c, ids) in by_cluster {
                let Some(slot) = self.mapping.slot_of(*c).filter(|s| *s != UNMAPPED) else {
                    continue;
                };
                for id in ids {
                    out.push(Prediction {
                        doc_id: doc_id.clone(),
                        slot: slot.to_string(),
                        answer: self.questions[id].answer_text.clone(),
                    });
                }
            }
        }
        out
    }

    pub fn is_representative(&self, qid: &str) -> bool {
        self.questions.get(qid).is_some_and(|q| q.representative)
    }

    /// Representative question ids per document and cluster, flattened.
    pub fn representative_ids(&self) -> BTreeSet<String> {
        self.questions.values().filter(|q| q.representative).map(|q| q.id.clone()).collect()
    }

    /// SHA-256 over the serialized state, event log excluded.
    pub fn state_hash(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            config: &'a InductionConfig,
            questions: &'a BTreeMap<String, GeneratedQuestion>,
            tfidf: &'a TfIdfModel,
            clusters: &'a ClusterModel,
            reps: &'a RepresentativeSet,
            mapping: &'a SlotMapping,
            report: &'a EvaluationReport,
            pins: &'a BTreeMap<String, usize>,
            rep_overrides: &'a BTreeMap<String, bool>,
            added: usize,
        }
        let view = View {
            config: &self.config,
            questions: &self.questions,
            tfidf: &self.tfidf,
            clusters: &self.clusters,
            reps: &self.reps,
            mapping: &self.mapping,
            report: &self.report,
            pins: &self.pins,
            rep_overrides: &self.rep_overrides,
            added: self.added,
        };
        let bytes = serde_json::to_vec(&view).expect("state serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Checks the structural invariants; returns the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let k = self.clusters.k;
        if self.questions.len() != self.clusters.assignment.len() {
            return Err(format!(
                "{} questions but {} assignments",
                self.questions.len(),
                self.clusters.assignment.len()
            ));
        }
        for (id, &c) in &self.clusters.assignment {
            if !self.questions.contains_key(id) {
                return Err(format!("assignment for unknown question {id}"));
            }
            if c >= k {
                return Err(format!("question {id} in cluster {c} outside [0, {k})"));
            }
        }
        if self.clusters.sizes().contains(&0) {
            return Err("cluster ids are not dense".into());
        }
        for (id, &c) in &self.pins {
            if self.cluster_of(id) != Some(c) {
                return Err(format!("pinned question {id} is not in cluster {c}"));
            }
        }
        for w in self.event_log.windows(2) {
            if w[1].seq <= w[0].seq {
                return Err("event sequence numbers not increasing".into());
            }
        }
        if self.report.action_count != self.event_log.len() {
            return Err("report action count does not match the event log".into());
        }
        Ok(())
    }
}
