//! Proxy operators: the two expert prompts, agents that answer them, and the
//! budgeted episode runner that turns verdicts into session operations.

mod agents;
mod episode;
mod parse;
mod prompts;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::providers::ProviderError;
use crate::session::{SessionError, SessionState};
use crate::slotmap::gold_slot;

pub use agents::{Agent, AgentRequest, LlmAgent, NoisyAgent, RandomAgent, ScriptedGoldAgent, Task};
pub use episode::{
    decide, run_episode, Episode, EpisodeConfig, EpisodeError, Policy, Trajectory, TrajectoryPoint, EXAMPLES_PER_SLOT,
};
pub use parse::{first_json_object, parse_expert_json, parse_qa_json, DEFAULT_CONFIDENCE};
pub use prompts::{build_addq_prompt, build_recluster_prompt};

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error("no JSON object in response")]
    NoJson,
    #[error("no allowed slot among response keys {0:?}")]
    NoSlotKey(Vec<String>),
    #[error("agent failed: {0}")]
    Agent(#[from] ProviderError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("invalid proxy configuration: {0}")]
    Config(String),
}

/// A question known to belong to a slot, shown to the expert as guidance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InContextExample {
    pub slot: String,
    pub question: String,
    pub answer: String,
    pub doc_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertVerdict {
    pub slot: String,
    pub confidence: f64,
    pub raw: String,
}

/// Questions of a session whose answer matches a gold fill of their own
/// document, labelled with that slot. Ordered by question id.
pub fn gold_examples(state: &SessionState) -> Vec<InContextExample> {
    state
        .questions
        .values()
        .filter_map(|q| {
            let (slot, _) = gold_slot(&state.corpus, &q.doc_id, &q.answer_text, state.config.theta)?;
            Some(InContextExample {
                slot,
                question: q.text.clone(),
                answer: q.answer_text.clone(),
                doc_id: q.doc_id.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub examples: Vec<InContextExample>,
    /// Slots with fewer than the requested number of examples, and how many
    /// they had.
    pub short: BTreeMap<String, usize>,
}

/// Seeded uniform sample of `per_slot` examples for every slot of `slots`.
/// Slots with too few examples contribute all they have. Output is grouped by
/// slot in the given order, pool order within a slot.
pub fn sample_incontext(pool: &[InContextExample], slots: &[String], per_slot: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::new();
    let mut short = BTreeMap::new();
    for slot in slots {
        let idx: Vec<usize> = (0..pool.len()).filter(|&i| &pool[i].slot == slot).collect();
        if idx.len() < per_slot {
            warn!(slot = %slot, available = idx.len(), wanted = per_slot, "too few in-context examples");
            short.insert(slot.clone(), idx.len());
        }
        let mut chosen: Vec<usize> = idx.choose_multiple(&mut rng, per_slot.min(idx.len())).copied().collect();
        chosen.sort_unstable();
        examples.extend(chosen.into_iter().map(|i| pool[i].clone()));
    }
    Sample { examples, short }
}
