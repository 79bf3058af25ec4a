//! HTTP API over slotforge sessions.
//!
//! Sessions live in memory behind a per-session lock and are persisted under
//! a data directory after every committed change. Mutations carry the
//! revision they were made against and fail with 409 when it is stale.

mod error;
mod store;
pub mod views;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Map, Value};
use tracing::info;

use slotforge_core::config::InductionConfig;
use slotforge_core::corpus::{load_corpus, parse_corpus, Corpus, CorpusFormat};
use slotforge_core::induction::run_induction;
use slotforge_core::providers::{
    transport_from_spec, LexicalReader, ProviderEndpoint, Providers, Reader, RemoteProvider, RetryPolicy, Transport,
};
use slotforge_core::proxy::{
    run_episode, Agent, EpisodeConfig, LlmAgent, NoisyAgent, Policy, RandomAgent, ScriptedGoldAgent, EXAMPLES_PER_SLOT,
};
use slotforge_core::session::{ApplyContext, Operation, SessionState};

pub use error::ApiError;
pub use store::{valid_id, ApiSession, CorpusSummary, Store, API_VERSION};

/// Where entity recognition, question generation and reading come from.
#[derive(Clone, Default)]
pub enum ProviderSource {
    #[default]
    Builtin,
    Remote(Arc<dyn Transport>),
}

impl ProviderSource {
    fn providers(&self, corpus: &Corpus) -> Providers {
        match self {
            ProviderSource::Builtin => Providers::from_transport(None, corpus),
            ProviderSource::Remote(t) => Providers::from_transport(Some(Arc::clone(t)), corpus),
        }
    }

    fn reader(&self) -> Box<dyn Reader> {
        match self {
            ProviderSource::Builtin => Box::new(LexicalReader::default()),
            ProviderSource::Remote(t) => Box::new(RemoteProvider::new(Arc::clone(t))),
        }
    }
}

pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Directory that corpus and agent-fixture paths in requests resolve
    /// against; paths are refused when unset.
    pub file_root: Option<PathBuf>,
    pub providers: ProviderSource,
    /// Starting point for per-session configuration.
    pub defaults: InductionConfig,
}

struct Entry {
    meta: ApiSession,
    state: Arc<SessionState>,
}

type Slot = Arc<tokio::sync::Mutex<Entry>>;

pub struct AppState {
    store: Store,
    file_root: Option<PathBuf>,
    providers: ProviderSource,
    defaults: InductionConfig,
    sessions: Mutex<HashMap<String, Slot>>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl AppState {
    pub fn open(config: ServiceConfig) -> Result<Arc<Self>, String> {
        let store = Store::open(&config.data_dir).map_err(|e| format!("{}: {e}", config.data_dir.display()))?;
        let file_root = match config.file_root {
            Some(r) => Some(r.canonicalize().map_err(|e| format!("{}: {e}", r.display()))?),
            None => None,
        };
        Ok(Arc::new(AppState {
            store,
            file_root,
            providers: config.providers,
            defaults: config.defaults,
            sessions: Mutex::new(HashMap::new()),
        }))
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    /// The session's slot, loading it from disk on first use.
    fn slot(&self, id: &str) -> Result<Slot, ApiError> {
        if let Some(s) = self.sessions.lock().expect("session map").get(id) {
            return Ok(Arc::clone(s));
        }
        let (meta, state) =
            self.store.load(id).map_err(ApiError::storage)?.ok_or_else(|| ApiError::session_not_found(id))?;
        let mut map = self.sessions.lock().expect("session map");
        let slot = map
            .entry(id.to_string())
            .or_insert_with(|| Arc::new(tokio::sync::Mutex::new(Entry { meta, state: Arc::new(state) })));
        Ok(Arc::clone(slot))
    }

    async fn read(&self, id: &str) -> Result<Arc<SessionState>, ApiError> {
        let slot = self.slot(id)?;
        let entry = slot.lock().await;
        Ok(Arc::clone(&entry.state))
    }

    /// Resolves a request path inside the file root.
    fn resolve(&self, raw: &str) -> Result<PathBuf, ApiError> {
        let root =
            self.file_root.as_ref().ok_or_else(|| ApiError::bad_request("file paths are disabled on this server"))?;
        let path = root.join(raw);
        let canon = path
            .canonicalize()
            .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "file_not_found", format!("{raw}: {e}")))?;
        if !canon.starts_with(root) {
            return Err(ApiError::bad_request(format!("{raw} is outside the file root")));
        }
        Ok(canon)
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum CorpusRef {
    /// A file under the server's file root.
    Path(String),
    /// Inline corpus text in `format`.
    Inline(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    corpus: CorpusRef,
    #[serde(default)]
    format: Option<String>,
    #[serde(default)]
    config: Map<String, Value>,
}

/// Flat config keys as accepted by the config file; arrays and objects are
/// accepted for `scale`.
fn apply_config(base: &InductionConfig, values: &Map<String, Value>) -> Result<InductionConfig, ApiError> {
    let mut config = base.clone();
    for (key, value) in values {
        let text = match value {
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            Value::Null => "auto".to_string(),
            Value::Array(items) => items
                .iter()
                .map(|v| v.as_str().map_or_else(|| v.to_string(), str::to_string))
                .collect::<Vec<_>>()
                .join(","),
            Value::Object(m) => m.iter().map(|(w, f)| format!("{w}={f}")).collect::<Vec<_>>().join(","),
            Value::Bool(_) => return Err(ApiError::bad_request(format!("config key `{key}` cannot be a boolean"))),
        };
        config.set(key, &text)?;
    }
    config.validate()?;
    Ok(config)
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = parse_body(&body)?;
    let format: CorpusFormat = match req.format.as_deref() {
        Some(f) => f.parse().map_err(ApiError::bad_request)?,
        None => CorpusFormat::Jsonl,
    };
    let config = apply_config(&app.defaults, &req.config)?;
    let path = match &req.corpus {
        CorpusRef::Path(p) => Some(app.resolve(p)?),
        CorpusRef::Inline(_) => None,
    };
    let inline = match req.corpus {
        CorpusRef::Inline(text) => Some(text),
        CorpusRef::Path(_) => None,
    };
    let providers = app.providers.clone();
    let state = blocking(move || -> Result<SessionState, ApiError> {
        let corpus = match (path, inline) {
            (Some(p), _) => load_corpus(&p, format)?,
            (None, Some(text)) => parse_corpus(&text, format)?,
            (None, None) => unreachable!("one corpus source"),
        };
        let providers = providers.providers(&corpus);
        Ok(run_induction(Arc::new(corpus), &config, &providers)?)
    })
    .await??;

    let id = uuid::Uuid::new_v4().simple().to_string();
    let meta = ApiSession::new(id.clone(), &state, now_ms());
    let store = app.store.clone();
    let (meta, state) =
        blocking(move || store.save(&meta, &state, &[]).map(|_| (meta, state))).await?.map_err(ApiError::storage)?;
    info!(session = %id, questions = state.questions.len(), "session created");
    let body = json!({ "session": meta, "evaluation": state.report });
    app.sessions
        .lock()
        .expect("session map")
        .insert(id, Arc::new(tokio::sync::Mutex::new(Entry { meta, state: Arc::new(state) })));
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<ApiSession>, ApiError> {
    let slot = app.slot(&id)?;
    let entry = slot.lock().await;
    Ok(Json(entry.meta.clone()))
}

async fn get_clusters(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let state = app.read(&id).await?;
    Ok(Json(views::clusters(&id, &state)).into_response())
}

async fn get_document(
    State(app): State<Arc<AppState>>,
    UrlPath((id, doc)): UrlPath<(String, String)>,
) -> Result<Response, ApiError> {
    let state = app.read(&id).await?;
    let view = views::document(&id, &state, &doc).ok_or_else(|| {
        ApiError::new(StatusCode::NOT_FOUND, "document_not_found", format!("no document `{doc}`"))
            .with_details(json!({ "doc_id": doc }))
    })?;
    Ok(Json(view).into_response())
}

async fn get_evaluation(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let state = app.read(&id).await?;
    Ok(Json(views::evaluation(&id, &state)).into_response())
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    since: u64,
}

async fn get_events(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Response, ApiError> {
    let state = app.read(&id).await?;
    Ok(Json(views::events(&id, &state, q.since)).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PostOperation {
    revision: u64,
    operation: Operation,
}

/// Stores `next` as the session's committed state; on a storage failure the
/// in-memory and on-disk states stay as they were.
async fn commit(app: &AppState, entry: &mut Entry, next: SessionState) -> Result<(), ApiError> {
    let new_events = next.event_log[entry.state.event_log.len()..].to_vec();
    let mut meta = entry.meta.clone();
    meta.revision = next.revision();
    meta.updated_ms = now_ms();
    let store = app.store.clone();
    let next = blocking(move || store.save(&meta, &next, &new_events).map(|_| (meta, next)))
        .await?
        .map_err(ApiError::storage)?;
    entry.meta = next.0;
    entry.state = Arc::new(next.1);
    Ok(())
}

async fn post_operation(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: PostOperation = parse_body(&body)?;
    let slot = app.slot(&id)?;
    let mut entry = slot.lock().await;
    let state = Arc::clone(&entry.state);
    let reader = app.providers.reader();
    let ts = now_ms();
    let (next, digest) = blocking(move || {
        let ctx = ApplyContext { reader: reader.as_ref(), now_ms: ts };
        state.apply_at(req.revision, req.operation, &ctx)
    })
    .await??;
    commit(&app, &mut entry, next).await?;
    Ok(Json(json!({ "session_id": id, "revision": digest.revision, "digest": digest })).into_response())
}

/// Which agent plays the proxy human.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AgentSpec {
    Gold,
    Random {
        #[serde(default)]
        seed: u64,
    },
    Noisy {
        epsilon: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Recorded `{prompt}` → `{text}` exchanges.
    Fixture {
        path: String,
    },
    /// A live endpoint speaking `{prompt}` → `{text}`.
    Http {
        url: String,
        #[serde(default)]
        timeout_ms: Option<u64>,
        #[serde(default)]
        max_attempts: Option<u32>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PostEpisode {
    agent: AgentSpec,
    budgets: Vec<usize>,
    #[serde(default)]
    policy: Option<String>,
    #[serde(default)]
    commit: bool,
    /// Required when committing.
    #[serde(default)]
    revision: Option<u64>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    rho: Option<f64>,
    #[serde(default)]
    examples_per_slot: Option<usize>,
    #[serde(default)]
    max_passes: Option<usize>,
}

fn build_agent(app: &AppState, spec: &AgentSpec, state: &SessionState) -> Result<Box<dyn Agent>, ApiError> {
    let gold = || ScriptedGoldAgent::new(Arc::clone(&state.corpus), state.config.theta);
    let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, "invalid_agent_config", m);
    Ok(match spec {
        AgentSpec::Gold => Box::new(gold()),
        AgentSpec::Random { seed } => Box::new(RandomAgent::new(*seed)),
        AgentSpec::Noisy { epsilon, seed } => {
            if !(0.0..=1.0).contains(epsilon) {
                return Err(bad(format!("epsilon {epsilon} is outside [0, 1]")));
            }
            Box::new(NoisyAgent::new(gold(), *epsilon, *seed))
        }
        AgentSpec::Fixture { path } => {
            Box::new(LlmAgent::fixtures(&app.resolve(path)?).map_err(|e| bad(e.to_string()))?)
        }
        AgentSpec::Http { url, timeout_ms, max_attempts } => {
            let mut endpoint = ProviderEndpoint::new(url.clone());
            if let Some(t) = timeout_ms {
                endpoint.timeout_ms = *t;
            }
            if let Some(n) = max_attempts {
                endpoint.retry = RetryPolicy { max_attempts: *n, ..endpoint.retry };
            }
            Box::new(LlmAgent::http(endpoint).map_err(|e| bad(e.to_string()))?)
        }
    })
}

async fn post_episode(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: PostEpisode = parse_body(&body)?;
    let policy: Policy = match req.policy.as_deref() {
        Some(p) => p.parse().map_err(|m| ApiError::new(StatusCode::BAD_REQUEST, "invalid_agent_config", m))?,
        None => Policy::ReclusterOnly,
    };
    let slot = app.slot(&id)?;
    let mut entry = slot.lock().await;
    let state = Arc::clone(&entry.state);
    if req.commit {
        let submitted = req.revision.ok_or_else(|| ApiError::bad_request("`revision` is required when committing"))?;
        if submitted != state.revision() {
            return Err(
                slotforge_core::session::SessionError::StaleState { submitted, current: state.revision() }.into()
            );
        }
    }
    let mut agent = build_agent(&app, &req.agent, &state)?;
    let mut config = EpisodeConfig::for_session(&state, req.budgets, policy);
    if let Some(seed) = req.seed {
        config.seed = seed;
    }
    if let Some(rho) = req.rho {
        config.rho = rho;
    }
    if let Some(n) = req.examples_per_slot.filter(|n| *n != EXAMPLES_PER_SLOT) {
        let pool = slotforge_core::proxy::gold_examples(&state);
        config.examples = slotforge_core::proxy::sample_incontext(&pool, &config.slot_names, n, config.seed).examples;
    }
    if let Some(p) = req.max_passes {
        config.max_passes = p;
    }
    config.start_ms = now_ms();
    let reader = app.providers.reader();
    let run_state = Arc::clone(&state);
    let episode = blocking(move || run_episode(&run_state, agent.as_mut(), &config, reader.as_ref())).await??;
    let committed = req.commit && episode.actions > 0;
    if committed {
        commit(&app, &mut entry, episode.state).await?;
    }
    Ok(Json(json!({
        "session_id": id,
        "revision": entry.state.revision(),
        "committed": committed,
        "actions": episode.actions,
        "skipped": episode.skipped,
        "trajectory": episode.trajectory,
    }))
    .into_response())
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "route_not_found", "no such endpoint")
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/clusters", get(get_clusters))
        .route("/sessions/{id}/documents/{doc}", get(get_document))
        .route("/sessions/{id}/evaluation", get(get_evaluation))
        .route("/sessions/{id}/events", get(get_events))
        .route("/sessions/{id}/operations", post(post_operation))
        .route("/sessions/{id}/proxy-episodes", post(post_episode))
        .fallback(not_found)
        .with_state(app)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, app: Arc<AppState>) -> std::io::Result<()> {
    info!(addr = ?listener.local_addr().ok(), sessions = app.store.list().len(), "serving");
    axum::serve(listener, router(app)).await
}

/// Builds the provider source for a `--providers` value: `builtin`, a
/// fixture file or directory of `*.jsonl` recordings, or an `http(s)://`
/// endpoint.
pub fn provider_source(spec: Option<&str>) -> Result<ProviderSource, String> {
    Ok(match transport_from_spec(spec).map_err(|e| e.to_string())? {
        Some(t) => ProviderSource::Remote(t),
        None => ProviderSource::Builtin,
    })
}
