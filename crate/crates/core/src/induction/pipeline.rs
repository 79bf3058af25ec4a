use std::collections::BTreeMap;
use std::sync::Arc;

use tracing::debug;

use super::{
    bleach, fit_tfidf, kmeans_best, random_clustering, ClusterModel, InductionError, PipelineError, Stage, StageCounts,
};
use crate::config::{InductionConfig, Method};
use crate::corpus::Corpus;
use crate::providers::{EntityMention, GeneratedQuestion, Providers};
use crate::session::SessionState;
use crate::text;

/// Where the initial clustering comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ClusterSource {
    /// k-means, or uniform random ids for [`Method::Random`].
    Induce,
    /// A fixed question-id to cluster-id map covering every question.
    Explicit(BTreeMap<String, usize>),
}

/// The text a question is embedded from under `method`.
pub fn embedding_text(method: Method, question: &str, mentions: &[EntityMention]) -> String {
    if method.bleaches() {
        let surfaces: Vec<&str> = mentions.iter().map(|m| m.surface.as_str()).collect();
        bleach(question, &surfaces)
    } else {
        text::normalize(question)
    }
}

/// Entity mentions per document and the questions generated from them.
pub struct Generated {
    pub mentions: BTreeMap<String, Vec<EntityMention>>,
    pub questions: Vec<GeneratedQuestion>,
    /// Mentions the generator could not place in a sentence.
    pub skipped: usize,
}

/// Runs entity recognition and question generation over every document.
pub fn generate(corpus: &Corpus, providers: &Providers) -> Result<Generated, PipelineError> {
    let mut mentions = BTreeMap::new();
    for doc in &corpus.documents {
        let found = providers.ner.identify(doc).map_err(|e| PipelineError::new(Stage::Ner, e))?;
        mentions.insert(doc.id.clone(), found);
    }
    let mut questions = Vec::new();
    let mut skipped = 0;
    for doc in &corpus.documents {
        let out = providers.qg.generate(doc, &mentions[&doc.id]).map_err(|e| PipelineError::new(Stage::Qgen, e))?;
        skipped += out.skipped;
        questions.extend(out.questions);
    }
    Ok(Generated { mentions, questions, skipped })
}

/// [`generate`], then [`build_session`] with induced clusters.
pub fn run_induction(
    corpus: Arc<Corpus>,
    config: &InductionConfig,
    providers: &Providers,
) -> Result<SessionState, PipelineError> {
    config.validate().map_err(|e| PipelineError::new(Stage::Config, e))?;
    if corpus.is_empty() {
        return Err(PipelineError::new(Stage::Corpus, InductionError::NoDocuments));
    }
    let generated = generate(&corpus, providers)?;
    let mut state = build_session(corpus, config, generated.mentions, generated.questions, ClusterSource::Induce)?;
    state.stage_counts.skipped_mentions = generated.skipped;
    Ok(state)
}

/// bleach, embed, cluster, then representatives, mapping and evaluation.
pub fn build_session(
    corpus: Arc<Corpus>,
    config: &InductionConfig,
    mentions: BTreeMap<String, Vec<EntityMention>>,
    questions: Vec<GeneratedQuestion>,
    source: ClusterSource,
) -> Result<SessionState, PipelineError> {
    config.validate().map_err(|e| PipelineError::new(Stage::Config, e))?;
    if questions.is_empty() {
        return Err(PipelineError::new(Stage::Qgen, InductionError::NoQuestions));
    }
    let mut questions = questions;
    for q in &mut questions {
        let doc_mentions = mentions.get(&q.doc_id).map(Vec::as_slice).unwrap_or_default();
        q.bleached = embedding_text(config.method, &q.text, doc_mentions);
    }
    let bleached: Vec<&str> = questions.iter().map(|q| q.bleached.as_str()).collect();
    let tfidf = fit_tfidf(&bleached, &config.effective_scale()).map_err(|e| PipelineError::new(Stage::Embed, e))?;
    let mut degenerate = 0;
    for q in &mut questions {
        let e = tfidf.embed(&q.bleached);
        degenerate += usize::from(e.degenerate);
        q.embedding = e.values;
    }

    let ids: Vec<String> = questions.iter().map(|q| q.id.clone()).collect();
    let vectors: Vec<Vec<f64>> = questions.iter().map(|q| q.embedding.clone()).collect();
    let k = match (config.k, &source) {
        (_, ClusterSource::Explicit(map)) => map.values().max().map_or(1, |m| m + 1),
        (Some(k), _) => k,
        (None, _) if corpus.slot_inventory.is_empty() => {
            return Err(PipelineError::new(Stage::Cluster, InductionError::NoSlots))
        }
        (None, _) => corpus.slot_inventory.len(),
    };
    let assignment: Vec<usize> = match source {
        ClusterSource::Explicit(map) => ids
            .iter()
            .map(|id| map.get(id).copied().ok_or_else(|| InductionError::Unassigned(id.clone())))
            .collect::<Result<_, _>>()
            .map_err(|e| PipelineError::new(Stage::Cluster, e))?,
        ClusterSource::Induce if config.method == Method::Random => {
            random_clustering(ids.len(), k, config.seed).map_err(|e| PipelineError::new(Stage::Cluster, e))?
        }
        ClusterSource::Induce => {
            let seeds = (0..config.restarts as u64).map(|i| config.seed.wrapping_add(i));
            let run = kmeans_best(&vectors, k, seeds).map_err(|e| PipelineError::new(Stage::Cluster, e))?;
            debug!(k, inertia = run.inertia, iterations = run.iterations, "k-means done");
            run.assignment
        }
    };
    let clusters = ClusterModel::from_assignment(&ids, &vectors, &assignment, k, config.seed);

    let counts = StageCounts {
        documents: corpus.len(),
        mentions: mentions.values().map(Vec::len).sum(),
        questions: questions.len(),
        skipped_mentions: 0,
        degenerate_embeddings: degenerate,
        clusters: 0,
    };
    let questions = questions.into_iter().map(|q| (q.id.clone(), q)).collect();
    let mut state = SessionState::assemble(corpus, config.clone(), mentions, questions, tfidf, clusters);
    state.stage_counts = counts;
    state.renumber();
    state.recompute();
    state.stage_counts.clusters = state.clusters.k;
    Ok(state)
}
