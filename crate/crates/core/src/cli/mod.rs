//! The `malr` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 provider error.

mod config;

pub use config::{require, ChatEndpoint, Mode, RunConfig, CHAT_TOKEN_VAR, EMBED_TOKEN_VAR};

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;
use tracing::{info, warn};

use crate::agents::{
    read_fixtures, AgentError, Agents, CachingClient, ChatClient, HttpChatClient, PlannerAction, PromptSet,
    ReplayClient,
};
use crate::corpus::{compute_stats, load_corpus, load_queries, Corpus, CorpusError, LabelMode, Query};
use crate::grpo::{
    reward_trajectories, single_correct_env, train_toy, two_strategy_env, SimEnv, TrainConfig, COVERAGE_BUCKETS,
    N_ACTIONS,
};
use crate::metrics::{categorize, evaluate, variability, MetricReport, MissMode, RankedList, RolloutMatrix};
use crate::orchestrator::{
    load_trajectory_log, BudgetReport, MasRunner, OrchestratorError, RunMode, Termination, Trajectory,
    TrajectoryLogWriter,
};
use crate::reranker::{rerank, RerankError};
use crate::retrieval::{
    EmbeddingProvider, EmbeddingStore, HttpEmbeddingProvider, PassThroughScorer, RetrievalError, Retriever,
    TableProvider, BINARY_MAGIC,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Provider(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Provider(_) => 3,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::ProviderUnavailable(_) | RetrievalError::ScorerUnavailable(_) => {
                Self::Provider(e.to_string())
            }
            RetrievalError::InvalidConfig(_) => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<OrchestratorError> for CliError {
    fn from(e: OrchestratorError) -> Self {
        let provider = match &e {
            OrchestratorError::Agent {
                source: AgentError::Chat(_),
                ..
            } => true,
            OrchestratorError::Retrieval { source, .. } => {
                matches!(
                    source,
                    RetrievalError::ProviderUnavailable(_) | RetrievalError::ScorerUnavailable(_)
                )
            }
            _ => false,
        };
        if provider {
            Self::Provider(e.to_string())
        } else {
            Self::Data(e.to_string())
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(
    name = "malr",
    version,
    about = "Statute retrieval with planner-driven query reformulation"
)]
pub struct Cli {
    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for query-level parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Master seed, recorded in every report.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Dataset summary statistics.
    Stats {
        #[command(flatten)]
        data: DataArgs,
        /// Row label.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Single-shot dense retrieval baseline.
    Retrieve {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        /// Ranked-list JSONL output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Planner-driven reformulation runs.
    Mas {
        #[command(subcommand)]
        command: MasCommand,
    },
    /// Final listwise reranking of candidate pools.
    Rerank {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        rerank: RerankArgs,
        /// Trajectory log from `mas run`.
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recall, MRR, nDCG and HitRate at k.
    Eval {
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Ranked-list JSONL.
        #[arg(long)]
        ranked: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Recall variability and categories across repeated rollouts.
    RolloutVariability {
        #[arg(long)]
        queries: Option<PathBuf>,
        /// One or more trajectory logs holding R rollouts per query.
        #[arg(long, num_args = 1.., required = true)]
        trajectories: Vec<PathBuf>,
        #[arg(long)]
        full_recall: Option<f64>,
        #[arg(long)]
        stability_tolerance: Option<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the toy policy in a simulated retrieval environment.
    GrpoSim {
        /// Environment JSON; a built-in preset otherwise.
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::TwoStrategy)]
        preset: Preset,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        step_penalty: Option<f64>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Training curve CSV; stdout when omitted.
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Final policy JSON.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Score training-mode trajectory logs.
    Reward {
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        trajectories: PathBuf,
        /// Group-normalize per query.
        #[arg(long)]
        normalize: bool,
        #[arg(long, allow_hyphen_values = true)]
        alpha: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        step_penalty: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// mas run, then rerank, then eval.
    Pipeline {
        /// Directory with corpus.jsonl, queries.jsonl, embeddings.jsonl,
        /// text_embeddings.jsonl and chat.replay.jsonl (optionally
        /// rerank.replay.jsonl and config.json).
        #[arg(long)]
        mock_fixtures: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[command(flatten)]
        chat: ChatArgs,
        #[command(flatten)]
        rerank: RerankArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum MasCommand {
    Run {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[command(flatten)]
        chat: ChatArgs,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Trajectories per query.
        #[arg(long)]
        rollouts: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    SingleCorrect,
    TwoStrategy,
}

#[derive(Args, Debug, Default)]
pub struct DataArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
}

impl DataArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.corpus, &self.corpus);
        set(&mut c.queries, &self.queries);
    }
}

#[derive(Args, Debug, Default)]
pub struct RetrievalArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub query_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub embed_endpoint: Option<String>,
    #[arg(long)]
    pub dense_k: Option<usize>,
    #[arg(long)]
    pub pruned_k: Option<usize>,
    #[arg(long)]
    pub baseline_k: Option<usize>,
}

impl RetrievalArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.embeddings, &self.embeddings);
        set(&mut c.query_embeddings, &self.query_embeddings);
        set(&mut c.embed_endpoint, &self.embed_endpoint);
        set_val(&mut c.retrieval.dense_k, self.dense_k);
        set_val(&mut c.retrieval.pruned_k, self.pruned_k);
        set_val(&mut c.retrieval.baseline_k, self.baseline_k);
    }
}

#[derive(Args, Debug, Default)]
pub struct ChatArgs {
    #[arg(long)]
    pub chat_endpoint: Option<String>,
    #[arg(long)]
    pub chat_model: Option<String>,
    /// Serve MAS chat calls from a fixture file.
    #[arg(long)]
    pub chat_replay: Option<PathBuf>,
    /// Cache MAS chat calls in a fixture file.
    #[arg(long)]
    pub chat_cache: Option<PathBuf>,
    #[arg(long)]
    pub planner_temperature: Option<f64>,
    #[arg(long)]
    pub rewrite_temperature: Option<f64>,
    #[arg(long)]
    pub prompts_dir: Option<PathBuf>,
}

impl ChatArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.chat.endpoint, &self.chat_endpoint);
        set(&mut c.chat.model, &self.chat_model);
        set(&mut c.chat.replay, &self.chat_replay);
        set(&mut c.chat.cache, &self.chat_cache);
        set_val(&mut c.agents.planner_temperature, self.planner_temperature);
        set_val(&mut c.agents.rewrite_temperature, self.rewrite_temperature);
        set(&mut c.prompts_dir, &self.prompts_dir);
    }
}

#[derive(Args, Debug, Default)]
pub struct RerankArgs {
    #[arg(long)]
    pub rerank_endpoint: Option<String>,
    #[arg(long)]
    pub rerank_model: Option<String>,
    #[arg(long)]
    pub rerank_replay: Option<PathBuf>,
    #[arg(long)]
    pub rerank_cache: Option<PathBuf>,
    #[arg(long)]
    pub final_k: Option<usize>,
}

impl RerankArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.reranker.endpoint, &self.rerank_endpoint);
        set(&mut c.reranker.model, &self.rerank_model);
        set(&mut c.reranker.replay, &self.rerank_replay);
        set(&mut c.reranker.cache, &self.rerank_cache);
        set_val(&mut c.rerank.final_k, self.final_k);
    }
}

#[derive(Args, Debug, Default)]
pub struct EvalArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub mrr_mode: Option<MissMode>,
}

impl EvalArgs {
    fn apply(&self, c: &mut RunConfig) {
        set_val(&mut c.k, self.k);
        set_val(&mut c.mrr_mode, self.mrr_mode);
    }
}

fn set<T: Clone>(slot: &mut Option<T>, flag: &Option<T>) {
    if flag.is_some() {
        slot.clone_from(flag);
    }
}

fn set_val<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// Parse `args`, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Merge the config file, then global flags, into a validated config.
pub fn resolve_config(
    cli: &Cli,
    base: Option<&Path>,
    apply: impl FnOnce(&mut RunConfig),
) -> Result<RunConfig, CliError> {
    let mut c = match cli.config.as_deref() {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::load_or_default(base)?,
    };
    apply(&mut c);
    set_val(&mut c.jobs, cli.jobs);
    set_val(&mut c.seed, cli.seed);
    c.validate()?;
    Ok(c)
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Stats { data, name, report } => {
            let c = resolve_config(&cli, None, |c| data.apply(c))?;
            cmd_stats(&c, name.as_deref(), report.as_deref())
        }
        Command::Retrieve { data, retrieval, out } => {
            let c = resolve_config(&cli, None, |c| {
                data.apply(c);
                retrieval.apply(c);
            })?;
            cmd_retrieve(&c, out)
        }
        Command::Mas {
            command:
                MasCommand::Run {
                    data,
                    retrieval,
                    chat,
                    mode,
                    rollouts,
                    out_dir,
                },
        } => {
            let c = resolve_config(&cli, None, |c| {
                data.apply(c);
                retrieval.apply(c);
                chat.apply(c);
                set_val(&mut c.mode, *mode);
                set_val(&mut c.rollouts, *rollouts);
            })?;
            let summary = cmd_mas_run(&c, out_dir)?;
            print!("{}", summary.table());
            Ok(())
        }
        Command::Rerank {
            data,
            rerank,
            trajectories,
            out,
        } => {
            let c = resolve_config(&cli, None, |c| {
                data.apply(c);
                rerank.apply(c);
            })?;
            let lists = cmd_rerank(&c, trajectories, out)?;
            println!("reranked {} queries -> {}", lists.len(), out.display());
            Ok(())
        }
        Command::Eval {
            queries,
            ranked,
            eval,
            report,
        } => {
            let c = resolve_config(&cli, None, |c| {
                set(&mut c.queries, queries);
                eval.apply(c);
            })?;
            let r = cmd_eval(&c, ranked)?;
            print!("{}", metric_table(&r));
            write_json_opt(report.as_deref(), &r)
        }
        Command::RolloutVariability {
            queries,
            trajectories,
            full_recall,
            stability_tolerance,
            report,
        } => {
            let c = resolve_config(&cli, None, |c| {
                set(&mut c.queries, queries);
                set_val(&mut c.categories.full_recall, *full_recall);
                set_val(&mut c.categories.stability_tolerance, *stability_tolerance);
            })?;
            cmd_variability(&c, trajectories, report.as_deref())
        }
        Command::GrpoSim {
            env,
            preset,
            iterations,
            alpha,
            step_penalty,
            learning_rate,
            curve,
            policy,
        } => {
            let c = resolve_config(&cli, None, |c| {
                set_val(&mut c.reward.alpha, *alpha);
                set_val(&mut c.reward.step_penalty, *step_penalty);
            })?;
            let env = match env {
                Some(p) => {
                    let f = File::open(p).map_err(|e| io_err(p, e))?;
                    serde_json::from_reader(BufReader::new(f)).map_err(|e| io_err(p, e))?
                }
                None => match preset {
                    Preset::SingleCorrect => single_correct_env(PlannerAction::SupportiveLaw),
                    Preset::TwoStrategy => two_strategy_env(),
                },
            };
            let mut tc = TrainConfig {
                seed: c.seed,
                reward: c.reward.clone(),
                ..Default::default()
            };
            set_val(&mut tc.iterations, *iterations);
            set_val(&mut tc.learning_rate, *learning_rate);
            cmd_grpo_sim(&env, &tc, curve.as_deref(), policy.as_deref())
        }
        Command::Reward {
            queries,
            trajectories,
            normalize,
            alpha,
            step_penalty,
            out,
        } => {
            let c = resolve_config(&cli, None, |c| {
                set(&mut c.queries, queries);
                set_val(&mut c.reward.alpha, *alpha);
                set_val(&mut c.reward.step_penalty, *step_penalty);
            })?;
            cmd_reward(&c, trajectories, *normalize, out)
        }
        Command::Pipeline {
            mock_fixtures,
            data,
            retrieval,
            chat,
            rerank,
            eval,
            out_dir,
        } => {
            let base = mock_fixtures
                .as_ref()
                .map(|d| d.join("config.json"))
                .filter(|p| p.exists());
            let c = resolve_config(&cli, base.as_deref(), |c| {
                if let Some(dir) = mock_fixtures {
                    mock_defaults(c, dir);
                }
                data.apply(c);
                retrieval.apply(c);
                chat.apply(c);
                rerank.apply(c);
                eval.apply(c);
            })?;
            let r = cmd_pipeline(&c, out_dir)?;
            print!("{}", metric_table(&r));
            Ok(())
        }
    }
}

/// File layout expected under `--mock-fixtures`.
fn mock_defaults(c: &mut RunConfig, dir: &Path) {
    c.corpus = Some(dir.join("corpus.jsonl"));
    c.queries = Some(dir.join("queries.jsonl"));
    c.embeddings = Some(dir.join("embeddings.jsonl"));
    c.query_embeddings = Some(dir.join("text_embeddings.jsonl"));
    c.chat.replay = Some(dir.join("chat.replay.jsonl"));
    let rerank = dir.join("rerank.replay.jsonl");
    c.reranker.replay = Some(if rerank.exists() {
        rerank
    } else {
        dir.join("chat.replay.jsonl")
    });
}

fn load_corpus_cfg(c: &RunConfig) -> Result<Corpus, CliError> {
    Ok(load_corpus(require(&c.corpus, "corpus")?)?)
}

fn load_queries_cfg(c: &RunConfig, mode: LabelMode) -> Result<Vec<Query>, CliError> {
    Ok(load_queries(require(&c.queries, "queries")?, mode)?)
}

/// JSONL or the binary format, chosen by the file's leading bytes.
pub fn load_store(path: &Path) -> Result<EmbeddingStore, CliError> {
    let mut f = File::open(path).map_err(|e| io_err(path, e))?;
    let mut head = [0u8; 9];
    let n = f.read(&mut head).map_err(|e| io_err(path, e))?;
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    let store = if n == head.len() && &head == BINARY_MAGIC {
        EmbeddingStore::read_binary(BufReader::new(f))
    } else {
        EmbeddingStore::read_jsonl(BufReader::new(f))
    };
    store.map_err(|e| io_err(path, e))
}

fn build_provider(c: &RunConfig, dim: usize) -> Result<Box<dyn EmbeddingProvider>, CliError> {
    if c.query_embeddings.is_some() {
        let p = require(&c.query_embeddings, "query embedding table")?;
        let f = File::open(p).map_err(|e| io_err(p, e))?;
        let table = TableProvider::read_jsonl(BufReader::new(f)).map_err(|e| io_err(p, e))?;
        return Ok(Box::new(table));
    }
    if let Some(url) = &c.embed_endpoint {
        let p = HttpEmbeddingProvider::new(url.clone(), config::token(EMBED_TOKEN_VAR), Duration::from_secs(60))
            .with_dim(dim);
        return Ok(Box::new(p));
    }
    Err(CliError::Usage(
        "no query embeddings: pass --query-embeddings or --embed-endpoint".into(),
    ))
}

/// A chat client, possibly fronted by a cache file that is appended to
/// when the run finishes.
pub enum ChatStack {
    Direct(Box<dyn ChatClient>),
    Cached(CachingClient<Box<dyn ChatClient>>, PathBuf),
}

impl ChatStack {
    pub fn build(ep: &ChatEndpoint, role: &str) -> Result<Self, CliError> {
        if ep.replay.is_some() {
            let p = require(&ep.replay, &format!("{role} replay file"))?;
            let replay = ReplayClient::load(p).map_err(|e| io_err(p, e))?;
            return Ok(Self::Direct(Box::new(replay)));
        }
        let (Some(url), Some(model)) = (&ep.endpoint, &ep.model) else {
            return Err(CliError::Usage(format!(
                "{role}: need an endpoint and model, or a replay file"
            )));
        };
        let http: Box<dyn ChatClient> = Box::new(
            HttpChatClient::with_timeout(
                url.clone(),
                model.clone(),
                config::token(CHAT_TOKEN_VAR),
                Duration::from_secs(ep.timeout_secs.max(1)),
            )
            .retries(ep.retries),
        );
        match &ep.cache {
            Some(path) => {
                let records = if path.exists() {
                    read_fixtures(path).map_err(|e| io_err(path, e))?
                } else {
                    Vec::new()
                };
                Ok(Self::Cached(CachingClient::new(http, records), path.clone()))
            }
            None => Ok(Self::Direct(http)),
        }
    }

    pub fn client(&self) -> &dyn ChatClient {
        match self {
            Self::Direct(c) => c.as_ref(),
            Self::Cached(c, _) => c,
        }
    }

    pub fn finish(&self) -> Result<(), CliError> {
        if let Self::Cached(c, path) = self {
            c.persist(path).map_err(|e| io_err(path, e))?;
        }
        Ok(())
    }
}

fn prompts(c: &RunConfig) -> Result<PromptSet, CliError> {
    match &c.prompts_dir {
        Some(d) => PromptSet::with_overrides(d).map_err(|e| io_err(d, e)),
        None => Ok(PromptSet::default()),
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

fn write_json_opt(path: Option<&Path>, value: &impl Serialize) -> Result<(), CliError> {
    path.map_or(Ok(()), |p| write_json(p, value))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| io_err(path, e))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_ranked_lists(path: &Path) -> Result<Vec<RankedList>, CliError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn load_log(path: &Path) -> Result<Vec<Trajectory>, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!("trajectory log not found: {}", path.display())));
    }
    load_trajectory_log(path).map_err(|e| io_err(path, e))
}

/// Left-aligned first column, right-aligned rest.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let pad = w - c.chars().count();
            if i == 0 {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(rule.iter().map(String::as_str).collect()));
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

fn cmd_stats(c: &RunConfig, name: Option<&str>, report: Option<&Path>) -> Result<(), CliError> {
    let corpus = load_corpus_cfg(c)?;
    let queries = load_queries_cfg(c, LabelMode::Unlabeled)?;
    let stats = compute_stats(&queries, &corpus)?;
    let label = name.map(str::to_string).unwrap_or_else(|| {
        c.queries
            .as_deref()
            .and_then(Path::file_stem)
            .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
    });
    print!(
        "{}",
        render_table(
            &[
                "dataset",
                "queries",
                "avg query len",
                "avg statute len",
                "corpus size",
                "avg relevant"
            ],
            &[vec![
                label.clone(),
                stats.n_queries.to_string(),
                format!("{:.2}", stats.avg_query_len),
                format!("{:.2}", stats.avg_statute_len),
                stats.corpus_size.to_string(),
                format!("{:.2}", stats.avg_relevant),
            ]],
        )
    );
    #[derive(Serialize)]
    struct Out<'a> {
        dataset: &'a str,
        #[serde(flatten)]
        stats: &'a crate::corpus::CorpusStats,
    }
    write_json_opt(
        report,
        &Out {
            dataset: &label,
            stats: &stats,
        },
    )
}

fn cmd_retrieve(c: &RunConfig, out: &Path) -> Result<(), CliError> {
    let corpus = load_corpus_cfg(c)?;
    let queries = load_queries_cfg(c, LabelMode::Unlabeled)?;
    let store = load_store(require(&c.embeddings, "embedding store")?)?;
    store.check_against(&corpus)?;
    let provider = build_provider(c, store.dim())?;
    let retriever = Retriever::new(&store, provider.as_ref(), &PassThroughScorer, c.retrieval)?;
    let lists: Result<Vec<RankedList>, CliError> = thread_pool(c.jobs)?.install(|| {
        queries
            .par_iter()
            .map(|q| {
                Ok(RankedList {
                    query_id: q.id.clone(),
                    ids: retriever.baseline(&q.text)?.into_iter().map(|h| h.statute_id).collect(),
                })
            })
            .collect()
    });
    let lists = lists?;
    write_jsonl(out, &lists)?;
    println!("retrieved {} queries -> {}", lists.len(), out.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct MasSummary {
    pub seed: u64,
    pub mode: Mode,
    pub queries: usize,
    pub trajectories: usize,
    pub mean_retrieval_calls: f64,
    pub mean_embedding_candidates: f64,
    pub mean_pool_size: f64,
    pub exit_action: usize,
    pub iteration_cap: usize,
    pub invalid_early_exit: usize,
    pub aborted: usize,
}

impl MasSummary {
    fn new(seed: u64, mode: Mode, queries: usize, runs: &[(Trajectory, BudgetReport)]) -> Self {
        let n = runs.len().max(1) as f64;
        let count = |t: Termination| runs.iter().filter(|(r, _)| r.terminated_by == t).count();
        Self {
            seed,
            mode,
            queries,
            trajectories: runs.len(),
            mean_retrieval_calls: runs.iter().map(|(_, b)| b.retrieval_calls as f64).sum::<f64>() / n,
            mean_embedding_candidates: runs.iter().map(|(_, b)| b.embedding_candidates as f64).sum::<f64>() / n,
            mean_pool_size: runs.iter().map(|(_, b)| b.pool_size as f64).sum::<f64>() / n,
            exit_action: count(Termination::ExitAction),
            iteration_cap: count(Termination::IterationCap),
            invalid_early_exit: count(Termination::InvalidEarlyExit),
            aborted: count(Termination::Aborted),
        }
    }

    pub fn table(&self) -> String {
        render_table(
            &[
                "trajectories",
                "calls/run",
                "candidates/run",
                "pool/run",
                "exit",
                "cap",
                "early exit",
                "aborted",
            ],
            &[vec![
                self.trajectories.to_string(),
                format!("{:.2}", self.mean_retrieval_calls),
                format!("{:.2}", self.mean_embedding_candidates),
                format!("{:.2}", self.mean_pool_size),
                self.exit_action.to_string(),
                self.iteration_cap.to_string(),
                self.invalid_early_exit.to_string(),
                self.aborted.to_string(),
            ]],
        )
    }
}

/// Run the MAS over every query and write `trajectories.jsonl` and
/// `mas_summary.json` under `out_dir`.
pub fn cmd_mas_run(c: &RunConfig, out_dir: &Path) -> Result<MasSummary, CliError> {
    let corpus = load_corpus_cfg(c)?;
    let label_mode = match c.mode {
        Mode::Training => LabelMode::Labeled,
        Mode::Inference => LabelMode::Unlabeled,
    };
    let mut queries = load_queries_cfg(c, label_mode)?;
    if c.mode == Mode::Inference {
        for q in &mut queries {
            q.gold = None;
        }
    }
    let store = load_store(require(&c.embeddings, "embedding store")?)?;
    store.check_against(&corpus)?;
    let provider = build_provider(c, store.dim())?;
    let retriever = Retriever::new(&store, provider.as_ref(), &PassThroughScorer, c.retrieval)?;
    let chat = ChatStack::build(&c.chat, "chat")?;
    let prompts = prompts(c)?;
    let agents = Agents::new(chat.client(), &prompts, c.agents.clone());
    let runner = MasRunner::new(&agents, retriever, &corpus, c.mas);
    info!(queries = queries.len(), rollouts = c.rollouts, seed = c.seed, "mas run");

    let results: Vec<Result<Vec<(Trajectory, BudgetReport)>, OrchestratorError>> = thread_pool(c.jobs)?.install(|| {
        queries
            .par_iter()
            .map(|q| {
                (0..c.rollouts)
                    .map(|r| {
                        let mode = match &q.gold {
                            Some(g) if c.mode == Mode::Training => RunMode::Training(g),
                            _ => RunMode::Inference,
                        };
                        let run = runner.run_with_id(&q.id, &format!("{}#{r}", q.id), &q.text, mode)?;
                        Ok((run.trajectory, run.budget))
                    })
                    .collect()
            })
            .collect()
    });
    chat.finish()?;

    let mut runs = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(v) => runs.extend(v),
            Err(e) => {
                warn!("{e}");
                first_err.get_or_insert(e);
            }
        }
    }
    for (t, _) in &runs {
        if let Some(err) = &t.error {
            warn!(trajectory = %t.trajectory_id, "run aborted: {err}");
        }
    }

    let log = out_dir.join("trajectories.jsonl");
    let mut w = TrajectoryLogWriter::new(create(&log)?);
    for (t, b) in &runs {
        w.write(t, Some(b)).map_err(|e| io_err(&log, e))?;
    }
    w.flush().map_err(|e| io_err(&log, e))?;
    let summary = MasSummary::new(c.seed, c.mode, queries.len(), &runs);
    write_json(&out_dir.join("mas_summary.json"), &summary)?;
    match first_err {
        Some(e) => Err(e.into()),
        None => Ok(summary),
    }
}

/// Rerank the first trajectory of each query.
pub fn cmd_rerank(c: &RunConfig, trajectories: &Path, out: &Path) -> Result<Vec<RankedList>, CliError> {
    let corpus = load_corpus_cfg(c)?;
    let queries = load_queries_cfg(c, LabelMode::Unlabeled)?;
    let trajs = load_log(trajectories)?;
    let mut firsts: Vec<&Trajectory> = Vec::new();
    for t in &trajs {
        if !firsts.iter().any(|f| f.query_id == t.query_id) {
            firsts.push(t);
        }
    }
    if firsts.len() < trajs.len() {
        info!("several trajectories per query; reranking the first of each");
    }
    let text: std::collections::HashMap<&str, &str> =
        queries.iter().map(|q| (q.id.as_str(), q.text.as_str())).collect();
    let chat = ChatStack::build(&c.reranker, "reranker")?;
    let prompts = prompts(c)?;
    let lists: Result<Vec<RankedList>, CliError> = thread_pool(c.jobs)?.install(|| {
        firsts
            .par_iter()
            .map(|t| {
                let q = text
                    .get(t.query_id.as_str())
                    .ok_or_else(|| CliError::Data(format!("query {:?} is not in the query file", t.query_id)))?;
                let ids = match rerank(&t.pool, &corpus, q, chat.client(), &prompts, &c.rerank) {
                    Ok(r) => {
                        if r.used_fallback {
                            warn!(query = %t.query_id, "reranker output unusable, kept score order");
                        }
                        r.ranked_ids
                    }
                    Err(RerankError::EmptyPool) => {
                        warn!(query = %t.query_id, "empty candidate pool");
                        Vec::new()
                    }
                };
                Ok(RankedList {
                    query_id: t.query_id.clone(),
                    ids,
                })
            })
            .collect()
    });
    chat.finish()?;
    let lists = lists?;
    write_jsonl(out, &lists)?;
    Ok(lists)
}

pub fn cmd_eval(c: &RunConfig, ranked: &Path) -> Result<MetricReport, CliError> {
    let queries = load_queries_cfg(c, LabelMode::Labeled)?;
    if !ranked.exists() {
        return Err(CliError::Data(format!("ranked lists not found: {}", ranked.display())));
    }
    let lists = read_ranked_lists(ranked)?;
    evaluate(&lists, &queries, c.k, c.mrr_mode).map_err(|e| CliError::Data(e.to_string()))
}

pub fn metric_table(r: &MetricReport) -> String {
    let k = r.k;
    let mut s = render_table(
        &[
            "queries",
            &format!("Recall@{k}"),
            &format!("MRR@{k}"),
            &format!("nDCG@{k}"),
            &format!("HitRate@{k}"),
        ],
        &[vec![
            r.n_queries.to_string(),
            format!("{:.4}", r.recall),
            format!("{:.4}", r.mrr),
            format!("{:.4}", r.ndcg),
            format!("{:.4}", r.hitrate),
        ]],
    );
    if r.missing_lists > 0 {
        s.push_str(&format!(
            "({} queries had no ranked list and scored as empty)\n",
            r.missing_lists
        ));
    }
    s.push_str(&format!("MRR miss mode: {}\n", r.miss_mode));
    s
}

fn cmd_variability(c: &RunConfig, logs: &[PathBuf], report: Option<&Path>) -> Result<(), CliError> {
    let queries = load_queries_cfg(c, LabelMode::Labeled)?;
    let mut trajs = Vec::new();
    for p in logs {
        trajs.extend(load_log(p)?);
    }
    let matrix = RolloutMatrix::from_trajectories(&trajs, &queries).map_err(|e| CliError::Data(e.to_string()))?;
    let v = variability(&matrix);
    let cats = categorize(&matrix, &c.categories);
    print!(
        "{}",
        render_table(
            &["queries", "rollouts", "avg max", "avg mean", "avg min"],
            &[vec![
                matrix.n_queries().to_string(),
                matrix.rollouts().to_string(),
                format!("{:.4}", v.avg_max),
                format!("{:.4}", v.avg_mean),
                format!("{:.4}", v.avg_min),
            ]],
        )
    );
    let rows: Vec<Vec<String>> = cats
        .counts
        .iter()
        .enumerate()
        .map(|(i, n)| vec![format!("{}", i + 1), n.to_string()])
        .collect();
    print!("{}", render_table(&["category", "queries"], &rows));
    #[derive(Serialize)]
    struct Out<'a> {
        variability: crate::metrics::Variability,
        categories: &'a crate::metrics::CategoryReport,
        thresholds: crate::metrics::CategoryThresholds,
    }
    write_json_opt(
        report,
        &Out {
            variability: v,
            categories: &cats,
            thresholds: c.categories,
        },
    )
}

fn cmd_grpo_sim(env: &SimEnv, tc: &TrainConfig, curve: Option<&Path>, policy: Option<&Path>) -> Result<(), CliError> {
    let out = train_toy(env, tc).map_err(|e| CliError::Usage(e.to_string()))?;
    let write_curve = |w: &mut dyn Write| -> Result<(), CliError> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["update", "mean_reward", "loss", "grad_norm", "seed"])
            .map_err(|e| CliError::Data(e.to_string()))?;
        for p in &out.curve {
            csv.write_record([
                p.update.to_string(),
                p.mean_reward.to_string(),
                p.loss.to_string(),
                p.grad_norm.to_string(),
                tc.seed.to_string(),
            ])
            .map_err(|e| CliError::Data(e.to_string()))?;
        }
        csv.flush().map_err(|e| CliError::Data(e.to_string()))
    };
    match curve {
        Some(p) => {
            let mut w = create(p)?;
            write_curve(&mut w)?;
        }
        None => write_curve(&mut std::io::stdout().lock())?,
    }
    write_json_opt(policy, &out.policy)?;

    let max_iter = env.mas_config().max_planner_iterations();
    let mut headers = vec!["archetype", "iteration", "coverage"];
    let names: Vec<String> = PlannerAction::ALL.iter().map(|a| a.as_str().to_string()).collect();
    headers.extend(names.iter().map(String::as_str));
    let mut rows = Vec::new();
    for (a, arch) in env.archetypes.iter().enumerate() {
        // The final iteration is always a forced exit.
        for it in 1..max_iter {
            for bucket in 0..COVERAGE_BUCKETS {
                let s = (a * max_iter + (it - 1)) * COVERAGE_BUCKETS + bucket;
                let p = out.policy.probs(s);
                let mut row = vec![
                    arch.name.clone(),
                    it.to_string(),
                    ["none", "<half", "partial", "full"][bucket].to_string(),
                ];
                row.extend((0..N_ACTIONS).map(|i| format!("{:.3}", p[i])));
                rows.push(row);
            }
        }
    }
    eprint!("{}", render_table(&headers, &rows));
    Ok(())
}

fn cmd_reward(c: &RunConfig, trajectories: &Path, normalize: bool, out: &Path) -> Result<(), CliError> {
    let queries = load_queries_cfg(c, LabelMode::Labeled)?;
    let trajs = load_log(trajectories)?;
    let records =
        reward_trajectories(&trajs, &queries, &c.reward, normalize).map_err(|e| CliError::Data(e.to_string()))?;
    write_jsonl(out, &records)?;
    println!("scored {} trajectories -> {}", records.len(), out.display());
    Ok(())
}

/// Inference MAS run, rerank, eval. Writes `trajectories.jsonl`,
/// `ranked.jsonl` and `report.json` under `out_dir`.
pub fn cmd_pipeline(c: &RunConfig, out_dir: &Path) -> Result<MetricReport, CliError> {
    let mut mas = c.clone();
    mas.mode = Mode::Inference;
    mas.rollouts = 1;
    let summary = cmd_mas_run(&mas, out_dir)?;
    let ranked = out_dir.join("ranked.jsonl");
    cmd_rerank(c, &out_dir.join("trajectories.jsonl"), &ranked)?;
    let report = cmd_eval(c, &ranked)?;
    #[derive(Serialize)]
    struct Out<'a> {
        seed: u64,
        mas: &'a MasSummary,
        metrics: &'a MetricReport,
    }
    write_json(
        &out_dir.join("report.json"),
        &Out {
            seed: c.seed,
            mas: &summary,
            metrics: &report,
        },
    )?;
    Ok(report)
}
