use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::corpus::Corpus;
use crate::providers::{
    EntityMention, FixtureStore, HttpTransport, MentionSource, ProviderEndpoint, ProviderError,
    TemplateQuestionGenerator, Transport, WhTemplates,
};
use crate::slotmap::{fuzzy_score, gold_slot};
use crate::text;

/// What the agent is being asked, alongside the prompt text. Prompt-driven
/// agents read only the prompt; scripted ones read the task.
#[derive(Debug, Clone, Copy)]
pub enum Task<'a> {
    Recluster {
        doc_id: &'a str,
        question: &'a str,
        answer: &'a str,
        slots: &'a [String],
    },
    /// `covered` holds answers the session already predicts for the document.
    AddQuestions {
        doc_id: &'a str,
        covered: &'a [String],
    },
}

#[derive(Debug, Clone, Copy)]
pub struct AgentRequest<'a> {
    pub prompt: &'a str,
    pub task: Task<'a>,
}

/// Something that answers expert prompts with free text.
pub trait Agent: Send {
    fn name(&self) -> &str;
    fn respond(&mut self, request: &AgentRequest<'_>) -> Result<String, ProviderError>;
}

/// Posts `{prompt}` and reads `{text}` through a transport: a live endpoint
/// or recorded fixtures.
pub struct LlmAgent {
    transport: Arc<dyn Transport>,
    name: String,
}

impl LlmAgent {
    pub fn new(transport: Arc<dyn Transport>, name: impl Into<String>) -> Self {
        LlmAgent { transport, name: name.into() }
    }

    /// Live endpoint; the endpoint's retry policy applies per call.
    pub fn http(endpoint: ProviderEndpoint) -> Result<Self, ProviderError> {
        Ok(Self::new(Arc::new(HttpTransport::new(endpoint, 1)?), "llm"))
    }

    /// Replays `{request: {prompt}, response: {text}}` pairs from jsonl.
    pub fn fixtures(path: &Path) -> Result<Self, ProviderError> {
        Ok(Self::new(Arc::new(FixtureStore::load(path)?), "fixture"))
    }

    pub fn request_body(prompt: &str) -> Value {
        json!({ "prompt": prompt })
    }
}

impl Agent for LlmAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn respond(&mut self, request: &AgentRequest<'_>) -> Result<String, ProviderError> {
        let body = self.transport.call(&Self::request_body(request.prompt))?;
        body.get("text")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProviderError::BadResponse { attempts: 1, message: "response has no text field".into() })
    }
}

/// Answers from the gold annotations: the slot whose gold fill matches the
/// question's answer, with confidence 1, or confidence 0 when none does; for
/// add requests, one question per gold answer not yet covered.
pub struct ScriptedGoldAgent {
    corpus: Arc<Corpus>,
    theta: f64,
    generator: TemplateQuestionGenerator,
}

impl ScriptedGoldAgent {
    pub fn new(corpus: Arc<Corpus>, theta: f64) -> Self {
        ScriptedGoldAgent { corpus, theta, generator: TemplateQuestionGenerator::new(WhTemplates::shipped()) }
    }

    fn recluster(&self, doc_id: &str, answer: &str, slots: &[String]) -> String {
        match gold_slot(&self.corpus, doc_id, answer, self.theta).filter(|(s, _)| slots.contains(s)) {
            Some((slot, _)) => verdict(&slot, answer, 1.0),
            None => verdict(slots.first().map_or("", String::as_str), answer, 0.0),
        }
    }

    fn add_questions(&self, doc_id: &str, covered: &[String]) -> String {
        let mut pairs: IndexMap<String, String> = IndexMap::new();
        let Some(doc) = self.corpus.document(doc_id) else {
            return "{}".into();
        };
        for slot in &self.corpus.slot_inventory {
            for answer in doc.gold_answers(slot) {
                if covered.iter().any(|c| fuzzy_score(c, &answer) >= self.theta) {
                    continue;
                }
                let Some((start, end)) = text::find_ignore_case(&doc.text, &answer) else {
                    continue;
                };
                let span = text::byte_range_to_span(&doc.text, start, end);
                let label = doc
                    .entity_hints
                    .iter()
                    .find(|h| h.surface.eq_ignore_ascii_case(&answer))
                    .map_or_else(|| "ANSWER".to_string(), |h| h.label.clone());
                let pivot = EntityMention { surface: answer.clone(), span, label, source: MentionSource::GoldHint };
                let Some(sentence) = doc.sentence_of(span) else {
                    continue;
                };
                if let Some(q) = self.generator.question_for(&doc.text, doc.sentences[sentence], &pivot) {
                    pairs.insert(q, answer);
                }
            }
        }
        serde_json::to_string(&pairs).expect("strings serialize")
    }
}

fn verdict(slot: &str, answer: &str, confidence: f64) -> String {
    let mut m: IndexMap<&str, Value> = IndexMap::new();
    m.insert(slot, Value::from(answer));
    m.insert("confidence", Value::from(confidence));
    serde_json::to_string(&m).expect("verdict serializes")
}

impl Agent for ScriptedGoldAgent {
    fn name(&self) -> &str {
        "gold"
    }

    fn respond(&mut self, request: &AgentRequest<'_>) -> Result<String, ProviderError> {
        Ok(match request.task {
            Task::Recluster { doc_id, answer, slots, .. } => self.recluster(doc_id, answer, slots),
            Task::AddQuestions { doc_id, covered } => self.add_questions(doc_id, covered),
        })
    }
}

/// Uniformly random slot and confidence; proposes no new questions.
pub struct RandomAgent {
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        RandomAgent { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Agent for RandomAgent {
    fn name(&self) -> &str {
        "random"
    }

    fn respond(&mut self, request: &AgentRequest<'_>) -> Result<String, ProviderError> {
        Ok(match request.task {
            Task::Recluster { answer, slots, .. } if !slots.is_empty() => {
                let slot = &slots[self.rng.gen_range(0..slots.len())];
                let confidence = (self.rng.gen::<f64>() * 100.0).round() / 100.0;
                verdict(slot, answer, confidence)
            }
            _ => "{}".into(),
        })
    }
}

/// The gold agent, except that with probability `epsilon` a recluster verdict
/// names a uniformly random slot with full confidence.
pub struct NoisyAgent {
    gold: ScriptedGoldAgent,
    epsilon: f64,
    rng: ChaCha8Rng,
}

impl NoisyAgent {
    pub fn new(gold: ScriptedGoldAgent, epsilon: f64, seed: u64) -> Self {
        NoisyAgent { gold, epsilon: epsilon.clamp(0.0, 1.0), rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Agent for NoisyAgent {
    fn name(&self) -> &str {
        "noisy"
    }

    fn respond(&mut self, request: &AgentRequest<'_>) -> Result<String, ProviderError> {
        match request.task {
            Task::Recluster { answer, slots, .. } if !slots.is_empty() && self.rng.gen_bool(self.epsilon) => {
                let slot = &slots[self.rng.gen_range(0..slots.len())];
                Ok(verdict(slot, answer, 1.0))
            }
            _ => self.gold.respond(request),
        }
    }
}
