//! `cabq run | render | eval`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 systemic failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cabq_core::engine::{BackchasePool, SearchConfig};
use cabq_core::extraction::{ConstraintSuggester, DictionaryLinker, KeywordSuggester, MentionDict};
use cabq_core::metrics::{average, score_answers};
use cabq_core::oracle::{Oracle, Retry};
use cabq_core::render::{render, IdStyle, RenderDialect, Target};
use cabq_core::QueryPlan;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Deserialize;
use thiserror::Error;

use crate::cache::Cache;
use crate::io::{self, QuestionRecord};
use crate::oracles::{FixtureFile, FixtureOracle, GoldOracle, HttpConfig, HttpOracle, Recording, ReferenceStrategy};
use crate::pipeline::{run_benchmark, trace_lines, Deps, PipelineConfig};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SYSTEMIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Systemic(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Systemic(_) => EXIT_SYSTEMIC,
        }
    }
}

impl From<io::InputError> for CliError {
    fn from(e: io::InputError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "cabq", version, about = "Constraint-guided query generation over a knowledge graph")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate, refine and score queries for a file of questions.
    Run(Box<RunArgs>),
    /// Render a plan (JSON) as query text.
    Render(RenderArgs),
    /// Score predicted answers against gold answers.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleKind {
    /// Gold answers from the questions file.
    Exact,
    /// Replay a recorded fixture (`--fixture`).
    Fixture,
    /// Completion endpoint from CAB_ORACLE_* variables.
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Single,
    Cautious,
    Majority,
    Experts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolArg {
    Universal,
    Reintroduce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DialectArg {
    Cypher,
    Sparql,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IdStyleArg {
    Plain,
    Url,
}

#[derive(Debug, Clone, Args)]
pub struct DialectArgs {
    #[arg(long, value_enum, default_value = "cypher")]
    pub dialect: DialectArg,
    #[arg(long, value_enum, default_value = "plain")]
    pub id_style: IdStyleArg,
    /// Mapping-set JSON replacing the built-in templates.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
}

impl DialectArgs {
    fn build(&self) -> Result<RenderDialect, CliError> {
        let target = match self.dialect {
            DialectArg::Cypher => Target::Cypher,
            DialectArg::Sparql => Target::Sparql,
        };
        let style = match self.id_style {
            IdStyleArg::Plain => IdStyle::Plain,
            IdStyleArg::Url => IdStyle::Url,
        };
        let mut d = RenderDialect::new(target, style);
        if let Some(path) = &self.mapping {
            d.mappings = io::read_mapping(path)?;
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub questions: PathBuf,
    #[arg(long)]
    pub dict: PathBuf,
    /// Scripted suggester fixture; the keyword suggester is used otherwise.
    #[arg(long)]
    pub suggester: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "exact")]
    pub oracle: OracleKind,
    /// Recording to replay with `--oracle fixture`.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Write every oracle answer of this run to a fixture file.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "single")]
    pub reference_strategy: StrategyArg,
    /// Runs for `--reference-strategy majority`.
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 5)]
    pub beam_width: usize,
    #[arg(long, default_value_t = 5)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 0.99)]
    pub score_threshold: f64,
    #[arg(long, default_value_t = cabq_core::ctable::DEFAULT_MATCH_CAP)]
    pub match_cap: u64,
    #[arg(long, default_value_t = cabq_core::extraction::DEFAULT_K)]
    pub k: usize,
    /// Skip the completeness gate in the chase.
    #[arg(long)]
    pub no_completeness_gate: bool,
    /// Keep the full depth budget after the first complete candidate.
    #[arg(long)]
    pub no_adaptive_depth: bool,
    #[arg(long, value_enum, default_value = "reintroduce")]
    pub pool: PoolArg,
    #[command(flatten)]
    pub dialect: DialectArgs,
    #[arg(long, default_value = ".cabq-cache")]
    pub cache_dir: PathBuf,
    #[arg(long)]
    pub no_cache: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = 60_000)]
    pub timeout_ms: u64,
    /// Halve the beam width for later questions once this many oracle
    /// calls have been made.
    #[arg(long)]
    pub oracle_budget: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[command(flatten)]
    pub dialect: DialectArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
}

pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("cabq: {e}");
            e.exit_code()
        }
    }
}

/// Runs a command and returns what it prints on success.
pub fn execute(cmd: &Command) -> Result<String, CliError> {
    match cmd {
        Command::Run(a) => run(a),
        Command::Render(a) => render_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    }
}

impl RunArgs {
    pub fn pipeline_config(&self) -> Result<PipelineConfig, CliError> {
        let search = SearchConfig {
            alpha: self.alpha,
            beam_width: self.beam_width,
            max_depth: self.max_depth,
            score_threshold: self.score_threshold,
            completeness_gate: !self.no_completeness_gate,
            adaptive_depth: !self.no_adaptive_depth,
            pool: match self.pool {
                PoolArg::Universal => BackchasePool::Universal,
                PoolArg::Reintroduce => BackchasePool::Reintroduce,
            },
        };
        search.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.k == 0 || self.match_cap == 0 || self.jobs == 0 {
            return Err(CliError::Config("--k, --match-cap and --jobs must be positive".into()));
        }
        Ok(PipelineConfig {
            search,
            dialect: self.dialect.build()?,
            k: self.k,
            match_cap: self.match_cap,
            jobs: self.jobs,
            timeout_ms: self.timeout_ms,
            oracle_budget: self.oracle_budget,
        })
    }
}

fn base_oracle(
    a: &RunArgs,
    graph: &Arc<cabq_core::Graph>,
    dict: &MentionDict,
    questions: &[QuestionRecord],
) -> Result<Box<dyn Oracle>, CliError> {
    Ok(match a.oracle {
        OracleKind::Exact => {
            let gold: Vec<(&str, &[String])> = questions
                .iter()
                .filter_map(|q| q.answers.as_deref().map(|ans| (q.id.as_str(), ans)))
                .collect();
            Box::new(GoldOracle::new(graph, dict, gold))
        }
        OracleKind::Fixture => {
            let path = a.fixture.as_ref().ok_or_else(|| CliError::Config("--oracle fixture needs --fixture".into()))?;
            Box::new(FixtureOracle::new(FixtureFile::load(path)?, graph.clone(), dict.clone()))
        }
        OracleKind::Http => {
            let cfg = HttpConfig::from_env().map_err(CliError::Config)?;
            let strategy = match a.reference_strategy {
                StrategyArg::Single => ReferenceStrategy::Single,
                StrategyArg::Cautious => ReferenceStrategy::Cautious,
                StrategyArg::Majority => ReferenceStrategy::Majority(a.runs),
                StrategyArg::Experts => ReferenceStrategy::Experts,
            };
            Box::new(Retry(HttpOracle::new(cfg, strategy, graph.clone(), dict.clone())))
        }
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Systemic(format!("{}: {e}", path.display())))
}

fn run(a: &RunArgs) -> Result<String, CliError> {
    let cfg = a.pipeline_config()?;
    let loaded = io::read_graph(&a.graph)?;
    let dict = io::read_dict(&a.dict)?;
    let questions = io::read_questions(&a.questions)?;
    let suggester: Box<dyn ConstraintSuggester> = match &a.suggester {
        Some(p) => Box::new(io::read_suggester(p)?),
        None => Box::new(KeywordSuggester),
    };
    let graph = Arc::new(loaded.graph);
    let base = base_oracle(a, &graph, &dict, &questions)?;
    let recorder = a.record.as_ref().map(|_| Recording::new(&*base));
    let oracle: &dyn Oracle = match &recorder {
        Some(r) => r,
        None => &*base,
    };
    let cache = if a.no_cache { Cache::disabled() } else { Cache::new(&a.cache_dir, &loaded.hash) };
    let linker = DictionaryLinker::new(dict.clone());
    let deps = Deps { graph: &graph, linker: &linker, suggester: &*suggester, oracle, cache: &cache };

    let report = run_benchmark(&questions, &cfg, &deps);

    fs::create_dir_all(&a.out).map_err(|e| CliError::Systemic(format!("{}: {e}", a.out.display())))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write(&a.out.join("report.json"), &(json + "\n"))?;
    write(&a.out.join("traces.jsonl"), &trace_lines(&report))?;
    if let (Some(path), Some(r)) = (&a.record, &recorder) {
        let text = serde_json::to_string_pretty(&r.fixture()).expect("fixture serializes");
        write(path, &(text + "\n"))?;
    }
    info!("wrote {}", a.out.display());

    let agg = &report.aggregate;
    let mut out = format!(
        "questions {}  scored {}  EM {:.3}  P {:.3}  R {:.3}  F1 {:.3}\n",
        report.per_question.len(),
        agg.scored,
        agg.em,
        agg.p,
        agg.r,
        agg.f1
    );
    if let Some(l) = &report.latency {
        out.push_str(&format!(
            "latency ms  total p50 {:.1} p95 {:.1}  generation p50 {:.1} p95 {:.1}  execution p50 {:.1} p95 {:.1}\n",
            l.p50_ms, l.p95_ms, l.generation.p50_ms, l.generation.p95_ms, l.execution.p50_ms, l.execution.p95_ms
        ));
    }
    let c = &report.counters;
    out.push_str(&format!(
        "oracle reference calls {}  evaluate calls {}  graph executions {}\n",
        c.reference_calls, c.evaluate_calls, c.graph_executions
    ));
    Ok(out)
}

fn render_cmd(a: &RenderArgs) -> Result<String, CliError> {
    let plan: QueryPlan = io::read_json(&a.plan)?;
    let dialect = a.dialect.build()?;
    let r = render(&plan, &dialect).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(r.text + "\n")
}

/// A single answer list, or answer lists keyed by question id.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum AnswerFile {
    One(Vec<String>),
    Many(BTreeMap<String, Vec<String>>),
}

impl AnswerFile {
    fn into_map(self) -> BTreeMap<String, Vec<String>> {
        match self {
            AnswerFile::One(v) => [(String::new(), v)].into_iter().collect(),
            AnswerFile::Many(m) => m,
        }
    }
}

fn eval_cmd(a: &EvalArgs) -> Result<String, CliError> {
    let pred = io::read_json::<AnswerFile>(&a.pred)?.into_map();
    let gold = io::read_json::<AnswerFile>(&a.gold)?.into_map();
    let mut per = BTreeMap::new();
    for (id, g) in &gold {
        let p = pred.get(id).cloned().unwrap_or_default();
        per.insert(id.clone(), score_answers(&p.into_iter().collect(), &g.iter().cloned().collect()));
    }
    let scores: Vec<_> = per.values().copied().collect();
    let out = serde_json::json!({ "per_question": per, "aggregate": average(&scores) });
    Ok(serde_json::to_string_pretty(&out).expect("scores serialize") + "\n")
}
