//! The `slotforge` command line: induce, evaluate, serve and proxy-run.
//!
//! Settings come from defaults, then the config file named by `--config` or
//! `SLOTFORGE_CONFIG`, then flags. Exit status is 0 on success, 1 for usage
//! errors and 2 for runtime errors.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use slotforge_core::config::{parse_scale, InductionConfig, Method};
use slotforge_core::corpus::{load_corpus, CorpusFormat};
use slotforge_core::induction::run_induction;
use slotforge_core::providers::ProviderEndpoint;
use slotforge_core::providers::{transport_from_spec, LexicalReader, Providers, Reader, RemoteProvider};
use slotforge_core::proxy::{
    gold_examples, run_episode, sample_incontext, Agent, EpisodeConfig, LlmAgent, NoisyAgent, Policy, RandomAgent,
    ScriptedGoldAgent, EXAMPLES_PER_SLOT,
};
use slotforge_core::session::{restore, snapshot, SessionState};
use slotforge_core::slotmap::{render_matrix, render_report, EvaluationReport};

pub const CONFIG_ENV: &str = "SLOTFORGE_CONFIG";

#[derive(Parser, Debug)]
#[command(name = "slotforge", version, about = "Question-driven template induction")]
struct Cli {
    /// Key-value config file; overrides SLOTFORGE_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Induce clusters and slots for a corpus and print the evaluation.
    Induce(InduceArgs),
    /// Run the method matrix over seeds and print mean per-slot F1.
    Evaluate(EvaluateArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Run a proxy-human episode on a snapshot and write the trajectory CSV.
    ProxyRun(ProxyArgs),
}

#[derive(Args, Debug)]
struct CorpusArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// jsonl or triples.
    #[arg(long, default_value = "jsonl")]
    format: String,
    /// Cluster count, or `auto` for one per gold slot.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long = "top-k")]
    top_k: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// `word=factor` (or `word` for factor 10); repeatable.
    #[arg(long)]
    scale: Vec<String>,
    /// builtin, a fixture file or directory, or an http(s) endpoint.
    #[arg(long)]
    providers: Option<String>,
}

#[derive(Args, Debug)]
struct InduceArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<String>,
    /// Snapshot path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Leave embeddings out of the snapshot; they are rebuilt on restore.
    #[arg(long)]
    no_embeddings: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// `a..b` (inclusive), a comma list, or one seed.
    #[arg(long, default_value = "1")]
    seeds: String,
    #[arg(long, default_value = "random,ai-only,ai-only+bleach,ai-only+bleach+scale")]
    methods: String,
    /// Also write the table here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value = "slotforge-data")]
    data_dir: PathBuf,
    /// Directory that corpus paths in requests resolve against.
    #[arg(long, default_value = ".")]
    root: PathBuf,
    #[arg(long)]
    providers: Option<String>,
}

#[derive(Args, Debug)]
struct ProxyArgs {
    #[arg(long)]
    snapshot: PathBuf,
    /// gold, random[:seed], noisy:epsilon[:seed], fixture:path, or an
    /// http(s) endpoint.
    #[arg(long)]
    agent: String,
    #[arg(long, default_value = "0,5,10,15,20")]
    budgets: String,
    /// recluster or recluster+add.
    #[arg(long, default_value = "recluster")]
    policy: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value_t = EXAMPLES_PER_SLOT)]
    examples_per_slot: usize,
    /// Sample in-context examples from this (training) snapshot instead.
    #[arg(long)]
    examples_from: Option<PathBuf>,
    #[arg(long)]
    max_passes: Option<usize>,
    /// Reader for added questions; as for induce.
    #[arg(long)]
    providers: Option<String>,
    /// CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the session after the episode.
    #[arg(long)]
    out_snapshot: Option<PathBuf>,
}

/// A failure after argument parsing: a bad flag value (exit 1) or a
/// runtime error (exit 2).
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn runtime(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure { code: 1, message: e.to_string() }
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// Logs go to stderr, filtered by `RUST_LOG` (default `warn`).
pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into());
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).with_env_filter(filter).try_init();
}

pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = write!(out, "{}", e.render());
            return 0;
        }
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return 1;
        }
    };
    let config_path = cli.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let result = match cli.command {
        Command::Induce(a) => induce(a, config_path.as_deref(), out),
        Command::Evaluate(a) => evaluate(a, config_path.as_deref(), out),
        Command::Serve(a) => serve(a, config_path.as_deref(), err),
        Command::ProxyRun(a) => proxy_run(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(Failure { code, message }) => {
            let _ = writeln!(err, "error: {message}");
            code
        }
    }
}

fn base_config(path: Option<&Path>) -> Result<InductionConfig, Failure> {
    let mut config = InductionConfig::default();
    if let Some(p) = path {
        let raw =
            fs::read_to_string(p).map_err(|e| Failure::runtime(format!("cannot read config {}: {e}", p.display())))?;
        config.apply_file(&raw).map_err(|e| Failure::runtime(format!("{}: {e}", p.display())))?;
    }
    Ok(config)
}

fn apply_flags(config: &mut InductionConfig, a: &CorpusArgs) -> Outcome {
    if let Some(k) = &a.k {
        config.set("k", k).map_err(usage)?;
    }
    if let Some(v) = a.restarts {
        config.restarts = v;
    }
    if let Some(v) = a.top_k {
        config.top_k = v;
    }
    if let Some(v) = a.tau {
        config.tau = v;
    }
    if let Some(v) = a.theta {
        config.theta = v;
    }
    if let Some(v) = a.rho {
        config.rho = v;
    }
    if !a.scale.is_empty() {
        config.scale.clear();
        for item in &a.scale {
            let (word, factor) = parse_scale(item).map_err(usage)?;
            config.scale.insert(word, factor);
        }
    }
    Ok(())
}

fn load(a: &CorpusArgs) -> Result<(Arc<slotforge_core::corpus::Corpus>, Providers), Failure> {
    let format: CorpusFormat = a.format.parse().map_err(usage)?;
    let corpus = Arc::new(load_corpus(&a.corpus, format)?);
    let transport = transport_from_spec(a.providers.as_deref())?;
    let providers = Providers::from_transport(transport, &corpus);
    Ok((corpus, providers))
}

fn induce(a: InduceArgs, config_path: Option<&Path>, out: &mut dyn Write) -> Outcome {
    let mut config = base_config(config_path)?;
    apply_flags(&mut config, &a.corpus)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(m) = &a.method {
        config.method = m.parse().map_err(usage)?;
    }
    config.validate().map_err(usage)?;
    let (corpus, providers) = load(&a.corpus)?;
    let state = run_induction(corpus, &config, &providers)?;
    if let Some(path) = &a.out {
        snapshot(&state, path, !a.no_embeddings)?;
    }
    write!(out, "{}", render_report(&state.report))?;
    Ok(())
}

/// `a..b` inclusive, `a,b,c`, or a single seed.
pub fn parse_seeds(raw: &str) -> Result<Vec<u64>, String> {
    let bad = || format!("bad seed list `{raw}`");
    if let Some((a, b)) = raw.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    let seeds: Vec<u64> = raw.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn evaluate(a: EvaluateArgs, config_path: Option<&Path>, out: &mut dyn Write) -> Outcome {
    let mut config = base_config(config_path)?;
    apply_flags(&mut config, &a.corpus)?;
    config.validate().map_err(usage)?;
    let seeds = parse_seeds(&a.seeds).map_err(usage)?;
    let methods: Vec<Method> = a.methods.split(',').map(str::parse).collect::<Result<_, _>>().map_err(usage)?;
    let (corpus, providers) = load(&a.corpus)?;
    let mut rows = Vec::new();
    for method in methods {
        let mut reports = Vec::new();
        for &seed in &seeds {
            let mut c = config.clone();
            c.method = method;
            c.seed = seed;
            reports.push(run_induction(Arc::clone(&corpus), &c, &providers)?.report);
        }
        rows.push((method.label().to_string(), EvaluationReport::mean(&reports)));
    }
    let table = render_matrix(&rows);
    if let Some(path) = &a.out {
        fs::write(path, &table).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    }
    write!(out, "{table}")?;
    Ok(())
}

fn serve(a: ServeArgs, config_path: Option<&Path>, err: &mut dyn Write) -> Outcome {
    let defaults = base_config(config_path)?;
    let app = slotforge_service::AppState::open(slotforge_service::ServiceConfig {
        data_dir: a.data_dir.clone(),
        file_root: Some(a.root.clone()),
        providers: slotforge_service::provider_source(a.providers.as_deref())?,
        defaults,
    })?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.addr).await?;
        writeln!(err, "listening on http://{}", listener.local_addr()?)?;
        slotforge_service::serve(listener, app).await?;
        Ok(())
    })
}

fn parse_budgets(raw: &str) -> Result<Vec<usize>, Failure> {
    raw.split(',').map(|b| b.trim().parse().map_err(|_| usage(format!("bad budget list `{raw}`")))).collect()
}

fn agent_for(spec: &str, state: &SessionState) -> Result<Box<dyn Agent>, Failure> {
    let gold = || ScriptedGoldAgent::new(Arc::clone(&state.corpus), state.config.theta);
    let num = |s: Option<&str>| -> Result<u64, Failure> {
        s.map_or(Ok(0), |s| s.parse().map_err(|_| usage(format!("bad agent `{spec}`"))))
    };
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return Ok(Box::new(LlmAgent::http(ProviderEndpoint::new(spec))?));
    }
    let mut parts = spec.splitn(3, ':');
    Ok(match parts.next().unwrap_or("") {
        "gold" => Box::new(gold()),
        "random" => Box::new(RandomAgent::new(num(parts.next())?)),
        "noisy" => {
            let eps: f64 =
                parts.next().and_then(|e| e.parse().ok()).ok_or_else(|| usage(format!("bad agent `{spec}`")))?;
            if !(0.0..=1.0).contains(&eps) {
                return Err(usage(format!("epsilon {eps} is outside [0, 1]")));
            }
            Box::new(NoisyAgent::new(gold(), eps, num(parts.next())?))
        }
        "fixture" => {
            let path = spec.split_once(':').map(|(_, p)| p).unwrap_or_default();
            Box::new(LlmAgent::fixtures(Path::new(path))?)
        }
        _ => return Err(usage(format!("unknown agent `{spec}`"))),
    })
}

fn proxy_run(a: ProxyArgs, out: &mut dyn Write) -> Outcome {
    let state = restore(&a.snapshot)?;
    let policy: Policy = a.policy.parse().map_err(usage)?;
    let mut config = EpisodeConfig::for_session(&state, parse_budgets(&a.budgets)?, policy);
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(rho) = a.rho {
        config.rho = rho;
    }
    if let Some(p) = a.max_passes {
        config.max_passes = p;
    }
    let pool = match &a.examples_from {
        Some(p) => gold_examples(&restore(p)?),
        None => gold_examples(&state),
    };
    config.examples = sample_incontext(&pool, &config.slot_names, a.examples_per_slot, config.seed).examples;
    config.addq_examples = config.examples.iter().take(3).map(|e| (e.question.clone(), e.answer.clone())).collect();
    config.validate().map_err(usage)?;
    let reader: Box<dyn Reader> = match transport_from_spec(a.providers.as_deref())? {
        Some(t) => Box::new(RemoteProvider::new(t)),
        None => Box::new(LexicalReader::default()),
    };
    let mut agent = agent_for(&a.agent, &state)?;
    let episode = run_episode(&state, agent.as_mut(), &config, reader.as_ref())?;
    let csv = episode.trajectory.to_csv();
    match &a.out {
        Some(path) => fs::write(path, &csv).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?,
        None => write!(out, "{csv}")?,
    }
    if let Some(path) = &a.out_snapshot {
        snapshot(&episode.state, path, true)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1..10").unwrap(), (1..=10).collect::<Vec<_>>());
        assert_eq!(parse_seeds("1..=3").unwrap(), [1, 2, 3]);
        assert_eq!(parse_seeds("4, 2").unwrap(), [4, 2]);
        assert_eq!(parse_seeds("7").unwrap(), [7]);
        for bad in ["", "3..1", "a", "1,,2"] {
            assert!(parse_seeds(bad).is_err(), "{bad}");
        }
    }
}
