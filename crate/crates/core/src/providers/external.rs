use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    EntityMention, EntityRecognizer, GeneratedQuestion, MentionSource, ProviderError, ProviderRequest,
    ProviderResponse, ProviderRole, QgOutput, QuestionGenerator, Reader, ReaderAnswer,
};
use crate::corpus::Document;
use crate::text::{self, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles on every further attempt.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, backoff_ms: 200 }
    }
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderEndpoint {
    pub url: String,
    pub timeout_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl fmt::Debug for ProviderEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderEndpoint")
            .field("url", &self.url)
            .field("timeout_ms", &self.timeout_ms)
            .field("auth_token", &self.auth_token.as_ref().map(|_| "<redacted>"))
            .field("retry", &self.retry)
            .finish()
    }
}

impl ProviderEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        ProviderEndpoint { url: url.into(), timeout_ms: 30_000, auth_token: None, retry: RetryPolicy::default() }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.timeout_ms == 0 {
            return Err(ProviderError::Config("timeout must be positive".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(ProviderError::Config("retry policy needs at least one attempt".into()));
        }
        if !(self.url.starts_with("http://") || self.url.starts_with("https://")) {
            return Err(ProviderError::Config(format!("not an http(s) url: {}", self.url)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalResponse {
    pub body: Value,
    pub attempts: u32,
}

/// Serializes with object keys sorted at every level.
pub fn canonical_json(value: &Value) -> String {
    fn sort(v: &Value) -> Value {
        match v {
            Value::Object(map) => {
                let sorted: BTreeMap<String, Value> = map.iter().map(|(k, v)| (k.clone(), sort(v))).collect();
                Value::Object(sorted.into_iter().collect())
            }
            Value::Array(items) => Value::Array(items.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    serde_json::to_string(&sort(value)).expect("json value serializes")
}

enum AttemptError {
    Retryable(ProviderError),
    Fatal(ProviderError),
}

/// POSTs the canonical form of `payload`, retrying transport failures,
/// timeouts and 5xx responses according to the endpoint's retry policy.
pub fn call_external(endpoint: &ProviderEndpoint, payload: &Value) -> Result<ExternalResponse, ProviderError> {
    endpoint.validate()?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
        .http_status_as_error(false)
        .build()
        .into();
    let body = canonical_json(payload);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match attempt_once(&agent, endpoint, &body, attempt) {
            Ok(body) => return Ok(ExternalResponse { body, attempts: attempt }),
            Err(AttemptError::Fatal(e)) => return Err(e),
            Err(AttemptError::Retryable(e)) if attempt >= endpoint.retry.max_attempts => return Err(e),
            Err(AttemptError::Retryable(_)) => {
                let delay = endpoint.retry.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                if delay > 0 {
                    thread::sleep(Duration::from_millis(delay));
                }
            }
        }
    }
}

fn attempt_once(
    agent: &ureq::Agent,
    endpoint: &ProviderEndpoint,
    body: &str,
    attempts: u32,
) -> Result<Value, AttemptError> {
    let mut req = agent.post(&endpoint.url).header("content-type", "application/json");
    if let Some(token) = &endpoint.auth_token {
        req = req.header("authorization", format!("Bearer {token}"));
    }
    let mut resp = match req.send(body) {
        Ok(r) => r,
        Err(ureq::Error::Timeout(_)) => return Err(AttemptError::Retryable(ProviderError::Timeout { attempts })),
        Err(e) => return Err(AttemptError::Retryable(ProviderError::Transport { attempts, message: e.to_string() })),
    };
    let status = resp.status().as_u16();
    let text = match resp.body_mut().read_to_string() {
        Ok(t) => t,
        Err(ureq::Error::Timeout(_)) => return Err(AttemptError::Retryable(ProviderError::Timeout { attempts })),
        Err(e) => return Err(AttemptError::Retryable(ProviderError::Transport { attempts, message: e.to_string() })),
    };
    if status >= 500 {
        return Err(AttemptError::Retryable(ProviderError::Transport { attempts, message: format!("HTTP {status}") }));
    }
    if status >= 400 {
        return Err(AttemptError::Fatal(ProviderError::BadResponse {
            attempts,
            message: format!("HTTP {status}: {text}"),
        }));
    }
    serde_json::from_str(&text).map_err(|e| {
        AttemptError::Fatal(ProviderError::BadResponse { attempts, message: format!("unparseable body: {e}") })
    })
}

/// Anything that turns a JSON request into a JSON response.
pub trait Transport: Send + Sync {
    fn call(&self, request: &Value) -> Result<Value, ProviderError>;
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    limit: usize,
    busy: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut busy = self.busy.lock().expect("in-flight lock");
        while *busy >= self.limit {
            busy = self.freed.wait(busy).expect("in-flight lock");
        }
        *busy += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.busy.lock().expect("in-flight lock") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpTransport {
    endpoint: ProviderEndpoint,
    in_flight: InFlight,
}

impl HttpTransport {
    pub fn new(endpoint: ProviderEndpoint, max_in_flight: usize) -> Result<Self, ProviderError> {
        endpoint.validate()?;
        Ok(HttpTransport {
            endpoint,
            in_flight: InFlight { limit: max_in_flight.max(1), busy: Mutex::new(0), freed: Condvar::new() },
        })
    }
}

impl Transport for HttpTransport {
    fn call(&self, request: &Value) -> Result<Value, ProviderError> {
        let _slot = self.in_flight.acquire();
        call_external(&self.endpoint, request).map(|r| r.body)
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct FixturePair {
    request: Value,
    response: Value,
}

/// Recorded request/response pairs, matched on the canonical request text.
#[derive(Debug, Clone, Default)]
pub struct FixtureStore {
    pairs: BTreeMap<String, Value>,
}

impl FixtureStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, request: &Value, response: Value) {
        self.pairs.insert(canonical_json(request), response);
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn parse_jsonl(&mut self, raw: &str) -> Result<(), ProviderError> {
        for (i, line) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let pair: FixturePair = serde_json::from_str(line)
                .map_err(|e| ProviderError::Config(format!("fixture line {}: {e}", i + 1)))?;
            self.insert(&pair.request, pair.response);
        }
        Ok(())
    }

    /// Loads a single jsonl file, or every `*.jsonl` file in a directory in
    /// name order.
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let mut store = FixtureStore::new();
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| ProviderError::Config(format!("{}: {e}", p.display())));
        if path.is_dir() {
            let mut files: Vec<_> = fs::read_dir(path)
                .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            files.sort();
            for f in files {
                store.parse_jsonl(&read(&f)?)?;
            }
        } else {
            store.parse_jsonl(&read(path)?)?;
        }
        Ok(store)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (req, resp) in &self.pairs {
            let request: Value = serde_json::from_str(req).expect("stored canonical json");
            let pair = FixturePair { request, response: resp.clone() };
            out.push_str(&canonical_json(&serde_json::to_value(pair).expect("pair serializes")));
            out.push('\n');
        }
        out
    }
}

impl Transport for FixtureStore {
    fn call(&self, request: &Value) -> Result<Value, ProviderError> {
        let key = canonical_json(request);
        self.pairs.get(&key).cloned().ok_or(ProviderError::FixtureMiss(key))
    }
}

/// Serves all three provider roles through one transport.
#[derive(Clone)]
pub struct RemoteProvider {
    transport: Arc<dyn Transport>,
}

impl RemoteProvider {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        RemoteProvider { transport }
    }

    fn exchange(&self, request: ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let value = serde_json::to_value(&request).expect("request serializes");
        let body = self.transport.call(&value)?;
        serde_json::from_value(body).map_err(|e| ProviderError::BadResponse { attempts: 1, message: e.to_string() })
    }
}

fn bad(message: impl Into<String>) -> ProviderError {
    ProviderError::BadResponse { attempts: 1, message: message.into() }
}

impl EntityRecognizer for RemoteProvider {
    fn identify(&self, doc: &Document) -> Result<Vec<EntityMention>, ProviderError> {
        let resp = self.exchange(ProviderRequest {
            role: ProviderRole::Ner,
            doc_id: doc.id.clone(),
            text: doc.text.clone(),
            answer: None,
            question: None,
        })?;
        let mut mentions = Vec::new();
        for m in resp.mentions.unwrap_or_default() {
            let span = Span::new(m.start.min(m.end), m.end);
            let surface = text::slice(&doc.text, span)
                .ok_or_else(|| bad(format!("mention [{}, {}) outside document {}", m.start, m.end, doc.id)))?;
            mentions.push(EntityMention {
                surface: surface.to_string(),
                span,
                label: m.label,
                source: MentionSource::External,
            });
        }
        mentions.sort_by_key(|m| (m.span.start, std::cmp::Reverse(m.span.end)));
        let mut kept: Vec<EntityMention> = Vec::new();
        for m in mentions {
            if kept.last().is_none_or(|k| k.span.end <= m.span.start) {
                kept.push(m);
            }
        }
        Ok(kept)
    }
}

impl QuestionGenerator for RemoteProvider {
    fn generate(&self, doc: &Document, mentions: &[EntityMention]) -> Result<QgOutput, ProviderError> {
        let mut out = QgOutput::default();
        for mention in mentions {
            let Some(idx) = doc.sentence_of(mention.span) else {
                out.skipped += 1;
                continue;
            };
            let sentence = text::slice(&doc.text, doc.sentences[idx]).unwrap_or_default();
            let resp = self.exchange(ProviderRequest {
                role: ProviderRole::Qg,
                doc_id: doc.id.clone(),
                text: sentence.to_string(),
                answer: Some(mention.surface.clone()),
                question: None,
            })?;
            let mut question = resp.question.filter(|q| !q.trim().is_empty()).ok_or_else(|| bad("missing question"))?;
            if !question.ends_with('?') {
                question.push('?');
            }
            out.questions.push(GeneratedQuestion {
                id: format!("{}:q{}", doc.id, out.questions.len() + 1),
                doc_id: doc.id.clone(),
                text: question,
                pivot: mention.clone(),
                answer_text: mention.surface.clone(),
                bleached: String::new(),
                embedding: Vec::new(),
                cluster_id: None,
                representative: false,
            });
        }
        Ok(out)
    }
}

impl Reader for RemoteProvider {
    fn answer(
        &self,
        question: &str,
        doc: &Document,
        _mentions: &[EntityMention],
    ) -> Result<Option<ReaderAnswer>, ProviderError> {
        let resp = self.exchange(ProviderRequest {
            role: ProviderRole::Reader,
            doc_id: doc.id.clone(),
            text: doc.text.clone(),
            answer: None,
            question: Some(question.to_string()),
        })?;
        let Some(answer) = resp.answer.filter(|a| !a.is_empty()) else {
            return Ok(None);
        };
        let (start, end) = text::find_ignore_case(&doc.text, &answer)
            .ok_or_else(|| bad(format!("answer {answer:?} not found in document {}", doc.id)))?;
        Ok(Some(ReaderAnswer {
            text: doc.text[start..end].to_string(),
            span: text::byte_range_to_span(&doc.text, start, end),
            score: resp.score.unwrap_or(1.0).clamp(0.0, 1.0),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_form_sorts_keys() {
        let v = json!({"b": 1, "a": {"d": [ {"z": 1, "y": 2} ], "c": null}});
        assert_eq!(canonical_json(&v), r#"{"a":{"c":null,"d":[{"y":2,"z":1}]},"b":1}"#);
    }

    #[test]
    fn endpoint_validation() {
        let mut e = ProviderEndpoint::new("http://localhost:1");
        assert!(e.validate().is_ok());
        e.timeout_ms = 0;
        assert!(matches!(e.validate(), Err(ProviderError::Config(_))));
        let mut e = ProviderEndpoint::new("http://localhost:1");
        e.retry.max_attempts = 0;
        assert!(e.validate().is_err());
        assert!(ProviderEndpoint::new("ftp://x").validate().is_err());
    }

    #[test]
    fn token_is_redacted_in_debug() {
        let mut e = ProviderEndpoint::new("http://localhost:1");
        e.auth_token = Some("sekrit".into());
        assert!(!format!("{e:?}").contains("sekrit"));
    }

    #[test]
    fn fixture_roundtrip_and_miss() {
        let mut store = FixtureStore::new();
        store.insert(&json!({"role": "qg", "text": "x"}), json!({"question": "what?"}));
        assert_eq!(store.call(&json!({"text": "x", "role": "qg"})).unwrap(), json!({"question": "what?"}));
        assert!(matches!(store.call(&json!({"role": "qg"})), Err(ProviderError::FixtureMiss(_))));
        let mut again = FixtureStore::new();
        again.parse_jsonl(&store.to_jsonl()).unwrap();
        assert_eq!(again.to_jsonl(), store.to_jsonl());
    }
}
