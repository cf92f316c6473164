//! Per-question orchestration and the batch runner.
//!
//! One question: link, induce the subgraph, build the constraint table,
//! chase and backchase, render both plans, post-validate deferred
//! constraints, and score against gold answers when present.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use cabq_core::ctable::CTableError;
use cabq_core::engine::{refine, Choice, Deadline, PhaseOutcome, PlanExecutor, SearchConfig, SearchContext, TraceRecord};
use cabq_core::eval::EvalError;
use cabq_core::extraction::{extract_in, ConstraintSuggester, EntityLinker, ExtractionError, LinkedEntities, NLQuery};
use cabq_core::metrics::{average, score_answers, summarize_latency, QualityScores};
use cabq_core::oracle::{Counting, Oracle};
use cabq_core::post::apply_post_constraints;
use cabq_core::render::{render, RenderDialect};
use cabq_core::{evaluate, load_graph, AnswerSet, Graph, QueryPlan, Value};
use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::Cache;
use crate::io::QuestionRecord;
use crate::oracles::Cached;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub search: SearchConfig,
    pub dialect: RenderDialect,
    pub k: usize,
    pub match_cap: u64,
    /// Worker threads for questions and for candidate execution.
    pub jobs: usize,
    pub timeout_ms: u64,
    /// Once the run has made more oracle calls than this, later questions
    /// use half the beam width.
    pub oracle_budget: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            search: SearchConfig::default(),
            dialect: RenderDialect::cypher(Default::default()),
            k: cabq_core::extraction::DEFAULT_K,
            match_cap: cabq_core::ctable::DEFAULT_MATCH_CAP,
            jobs: 1,
            timeout_ms: 60_000,
            oracle_budget: None,
        }
    }
}

/// Shared, read-only inputs of a run.
pub struct Deps<'a> {
    pub graph: &'a Graph,
    pub linker: &'a dyn EntityLinker,
    pub suggester: &'a dyn ConstraintSuggester,
    pub oracle: &'a dyn Oracle,
    pub cache: &'a Cache,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    /// Short-circuited before search; `detail` says why.
    Degenerate,
    /// The deadline hit; plans are the best found so far.
    Timeout,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub constraints: Vec<u32>,
    pub query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render_error: Option<String>,
    /// Display names after post-validation, sorted.
    pub answers: Vec<String>,
    pub p: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub universal: QualityScores,
    pub minimal: QualityScores,
    pub optimal: QualityScores,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub generation_ms: f64,
    pub execution_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Reference requests that reached the oracle (cache misses).
    pub reference_calls: usize,
    /// Batched evaluation calls made by the search, one per beam iteration.
    pub evaluate_calls: usize,
    /// Evaluation requests that reached the oracle (cache misses).
    pub upstream_evaluate_calls: usize,
    pub graph_executions: usize,
    pub chase_iterations: usize,
    pub backchase_iterations: usize,
    pub beam_width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub id: String,
    pub question: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub universal: Option<PlanReport>,
    pub minimal: Option<PlanReport>,
    pub optimal: Option<Choice>,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreReport>,
    pub timings: Timings,
    pub counters: Counters,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
}

/// Runs candidate plans, in parallel when asked, and accumulates the time
/// spent executing.
pub struct TimedExecutor {
    parallel: bool,
    nanos: AtomicU64,
    runs: AtomicUsize,
}

impl TimedExecutor {
    pub fn new(parallel: bool) -> Self {
        TimedExecutor { parallel, nanos: AtomicU64::new(0), runs: AtomicUsize::new(0) }
    }

    pub fn elapsed(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::Relaxed))
    }

    pub fn runs(&self) -> usize {
        self.runs.load(Ordering::Relaxed)
    }

    fn timed<T>(&self, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.nanos.fetch_add(start.elapsed().as_nanos() as u64, Ordering::Relaxed);
        out
    }
}

impl PlanExecutor for TimedExecutor {
    fn execute(&self, g: &Graph, plans: &[QueryPlan]) -> Vec<Result<AnswerSet, EvalError>> {
        self.runs.fetch_add(plans.len(), Ordering::Relaxed);
        self.timed(|| {
            if self.parallel && plans.len() > 1 {
                plans.par_iter().map(|p| evaluate(g, p)).collect()
            } else {
                plans.iter().map(|p| evaluate(g, p)).collect()
            }
        })
    }
}

pub struct InstantDeadline(pub Instant);

impl Deadline for InstantDeadline {
    fn expired(&self) -> bool {
        Instant::now() >= self.0
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

fn names(g: &Graph, values: &BTreeSet<Value>) -> Vec<String> {
    let set: BTreeSet<String> = values.iter().map(|v| g.display_name(v)).collect();
    set.into_iter().collect()
}

/// Universal and minimal reports, the choice, its answers and scores.
type Body = (PlanReport, PlanReport, Choice, Vec<String>, Option<ScoreReport>);

struct Run<'a> {
    q: &'a QuestionRecord,
    start: Instant,
    executor: TimedExecutor,
    counters: Counters,
}

impl Run<'_> {
    fn finish(
        mut self,
        status: Status,
        detail: Option<String>,
        body: Option<Body>,
        trace: Vec<TraceRecord>,
        oracle: Option<&Counting<&dyn Oracle>>,
    ) -> QuestionResult {
        let total = self.start.elapsed();
        let execution = self.executor.elapsed().min(total);
        if let Some(o) = oracle {
            self.counters.reference_calls = o.reference_calls();
            self.counters.upstream_evaluate_calls = o.evaluate_calls();
        }
        self.counters.graph_executions = self.executor.runs();
        let (universal, minimal, optimal, answers, scores) = match body {
            Some((u, m, c, a, s)) => (Some(u), Some(m), Some(c), a, s),
            None => (None, None, None, Vec::new(), None),
        };
        QuestionResult {
            id: self.q.id.clone(),
            question: self.q.question.clone(),
            status,
            detail,
            universal,
            minimal,
            optimal,
            answers,
            scores,
            timings: Timings {
                generation_ms: ms(total - execution),
                execution_ms: ms(execution),
                total_ms: ms(total),
            },
            counters: self.counters,
            trace,
        }
    }
}

fn link(q: &QuestionRecord, nlq: &NLQuery, deps: &Deps<'_>) -> Result<LinkedEntities, String> {
    if let Some(hints) = &q.entities {
        if let Some(bad) = hints.iter().find(|id| !deps.graph.contains(id)) {
            return Err(format!("entity hint `{bad}` is not in the graph"));
        }
        return Ok(LinkedEntities::from_ids(hints.iter().cloned()));
    }
    if let Some(l) = deps.cache.get("links", &q.question) {
        return Ok(l);
    }
    let l = deps.linker.link(nlq, deps.graph);
    deps.cache.put("links", &q.question, &l);
    Ok(l)
}

fn subgraph(linked: &LinkedEntities, k: usize, deps: &Deps<'_>) -> Result<Graph, String> {
    let key = format!("{k}:{}", linked.ids.iter().cloned().collect::<Vec<_>>().join("\u{1f}"));
    if let Some(text) = deps.cache.get::<String>("subgraphs", &key) {
        match load_graph(&text) {
            Ok(g) => return Ok(g),
            Err(e) => warn!("ignoring unreadable cached subgraph: {e}"),
        }
    }
    let g = deps.graph.k_hop_subgraph(&linked.ids, k).map_err(|e| e.to_string())?;
    deps.cache.put("subgraphs", &key, &g.to_graph_file());
    Ok(g)
}

fn plan_report(
    g: &Graph,
    outcome: &PhaseOutcome,
    dialect: &RenderDialect,
) -> (PlanReport, Result<BTreeSet<Value>, String>) {
    let plan = outcome.plan();
    let (query, render_error) = match render(plan, dialect) {
        Ok(r) => (Some(r.text), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let post = apply_post_constraints(&outcome.best.answers, &plan.table.deferred, g, &plan.answer_var)
        .map(|p| p.answers.projected)
        .map_err(|e| e.to_string());
    let answers = post.as_ref().map(|v| names(g, v)).unwrap_or_default();
    let report = PlanReport {
        constraints: outcome.best.ids.iter().map(|c| c.0).collect(),
        query,
        render_error,
        answers,
        p: outcome.best.p,
        flagged: outcome.flagged,
    };
    (report, post)
}

/// Runs one question end to end. Errors are recorded in the result, never
/// raised.
pub fn run_question(q: &QuestionRecord, cfg: &PipelineConfig, deps: &Deps<'_>) -> QuestionResult {
    let start = Instant::now();
    let deadline = InstantDeadline(start + Duration::from_millis(cfg.timeout_ms));
    let mut run = Run {
        q,
        start,
        executor: TimedExecutor::new(cfg.jobs > 1),
        counters: Counters { beam_width: cfg.search.beam_width, ..Counters::default() },
    };
    let nlq = NLQuery::with_id(&q.id, &q.question);

    let linked = match link(q, &nlq, deps) {
        Ok(l) => l,
        Err(e) => return run.finish(Status::Error, Some(e), None, Vec::new(), None),
    };
    if linked.ids.is_empty() {
        return run.finish(Status::Degenerate, Some("no linked entities".into()), None, Vec::new(), None);
    }
    let sub = match subgraph(&linked, cfg.k.max(1), deps) {
        Ok(s) => s,
        Err(e) => return run.finish(Status::Error, Some(e), None, Vec::new(), None),
    };
    let extraction = match extract_in(&nlq, deps.graph, linked, sub, deps.suggester, cfg.match_cap) {
        Ok(x) => x,
        Err(ExtractionError::Table(CTableError::EmptyAfterPruning)) => {
            return run.finish(Status::Degenerate, Some("every constraint was pruned".into()), None, Vec::new(), None)
        }
        Err(e) => return run.finish(Status::Error, Some(e.to_string()), None, Vec::new(), None),
    };
    let c0 = QueryPlan::new(extraction.table, &extraction.answer.var, extraction.answer.ty.as_deref());

    let relaxed = c0.restrict(&BTreeSet::new());
    match run.executor.execute(deps.graph, std::slice::from_ref(&relaxed)).pop().expect("one result") {
        Ok(a) if a.is_empty() => {
            return run.finish(Status::Degenerate, Some("the fully relaxed plan has no answers".into()), None, Vec::new(), None)
        }
        Ok(_) => {}
        Err(e) => return run.finish(Status::Error, Some(e.to_string()), None, Vec::new(), None),
    }

    let counted = Counting::new(deps.oracle);
    let oracle = Cached::new(&counted, deps.cache.clone());
    let reference = match oracle.reference(&nlq) {
        Ok(r) => r,
        Err(e) => return run.finish(Status::Error, Some(e.to_string()), None, Vec::new(), Some(&counted)),
    };
    let ctx = SearchContext {
        graph: deps.graph,
        question: &nlq,
        reference: &reference,
        oracle: &oracle,
        executor: &run.executor,
        deadline: &deadline,
    };
    let result = match refine(&ctx, &c0, &cfg.search) {
        Ok(r) => r,
        Err(e) => return run.finish(Status::Error, Some(e.to_string()), None, Vec::new(), Some(&counted)),
    };
    run.counters.evaluate_calls = result.universal.oracle_calls + result.minimal.oracle_calls;
    run.counters.chase_iterations = result.universal.iterations;
    run.counters.backchase_iterations = result.minimal.iterations;
    debug!("{}: chase {} iterations, backchase {}", q.id, result.universal.iterations, result.minimal.iterations);

    let (u_report, u_post) = plan_report(deps.graph, &result.universal, &cfg.dialect);
    let (m_report, m_post) = plan_report(deps.graph, &result.minimal, &cfg.dialect);
    let chosen = match result.optimal {
        Choice::Universal => &u_post,
        Choice::Minimal => &m_post,
    };
    let answers = chosen.as_ref().map(|v| names(deps.graph, v)).unwrap_or_default();
    let scores = q.answers.as_ref().map(|gold| {
        let gold: BTreeSet<String> = gold.iter().cloned().collect();
        let set = |v: &[String]| v.iter().cloned().collect::<BTreeSet<_>>();
        ScoreReport {
            universal: score_answers(&set(&u_report.answers), &gold),
            minimal: score_answers(&set(&m_report.answers), &gold),
            optimal: score_answers(&set(&answers), &gold),
        }
    });
    let post_error = [&u_post, &m_post].into_iter().find_map(|p| p.as_ref().err().cloned());
    let timed_out = result.universal.timed_out || result.minimal.timed_out;
    let status = if timed_out { Status::Timeout } else { Status::Ok };
    let detail = if timed_out { Some("deadline reached; best plans so far".to_string()) } else { post_error };
    let mut trace = result.universal.trace.clone();
    trace.extend(result.minimal.trace.iter().cloned());
    run.finish(status, detail, Some((u_report, m_report, result.optimal, answers, scores)), trace, Some(&counted))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub em: f64,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    /// Questions with gold answers.
    pub scored: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub generation: Percentiles,
    pub execution: Percentiles,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub per_question: Vec<QuestionResult>,
    pub aggregate: Aggregate,
    pub latency: Option<Latency>,
    pub counters: Counters,
}

fn percentiles(samples: &[f64]) -> Option<Percentiles> {
    // nearest-rank over microsecond ticks
    let ticks: Vec<u64> = samples.iter().map(|s| (s * 1000.0).round() as u64).collect();
    summarize_latency(&ticks).ok().map(|l| Percentiles {
        p50_ms: l.p50 as f64 / 1000.0,
        p95_ms: l.p95 as f64 / 1000.0,
    })
}

pub fn summarize(mut per_question: Vec<QuestionResult>) -> Report {
    per_question.sort_by(|a, b| a.id.cmp(&b.id));
    let scored: Vec<QualityScores> = per_question.iter().filter_map(|r| r.scores.as_ref().map(|s| s.optimal)).collect();
    let avg = average(&scored);
    let aggregate = Aggregate { em: avg.em, p: avg.precision, r: avg.recall, f1: avg.f1, scored: scored.len() };
    let col = |f: fn(&Timings) -> f64| per_question.iter().map(|r| f(&r.timings)).collect::<Vec<_>>();
    let latency = percentiles(&col(|t| t.total_ms)).map(|total| Latency {
        p50_ms: total.p50_ms,
        p95_ms: total.p95_ms,
        generation: percentiles(&col(|t| t.generation_ms)).expect("same sample count"),
        execution: percentiles(&col(|t| t.execution_ms)).expect("same sample count"),
        count: per_question.len(),
    });
    let mut counters = Counters::default();
    for r in &per_question {
        let c = &r.counters;
        counters.reference_calls += c.reference_calls;
        counters.evaluate_calls += c.evaluate_calls;
        counters.upstream_evaluate_calls += c.upstream_evaluate_calls;
        counters.graph_executions += c.graph_executions;
        counters.chase_iterations += c.chase_iterations;
        counters.backchase_iterations += c.backchase_iterations;
    }
    Report { per_question, aggregate, latency, counters }
}

/// Runs every question on a pool of `cfg.jobs` workers.
pub fn run_benchmark(questions: &[QuestionRecord], cfg: &PipelineConfig, deps: &Deps<'_>) -> Report {
    let spent = AtomicUsize::new(0);
    let one = |q: &QuestionRecord| {
        let mut local = cfg.clone();
        if let Some(budget) = cfg.oracle_budget {
            if spent.load(Ordering::SeqCst) > budget {
                local.search.beam_width = (cfg.search.beam_width / 2).max(1);
            }
        }
        let r = run_question(q, &local, deps);
        spent.fetch_add(r.counters.reference_calls + r.counters.upstream_evaluate_calls, Ordering::SeqCst);
        r
    };
    let results: Vec<QuestionResult> = if cfg.jobs > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build() {
            Ok(pool) => pool.install(|| questions.par_iter().map(one).collect()),
            Err(e) => {
                warn!("falling back to one worker: {e}");
                questions.iter().map(one).collect()
            }
        }
    } else {
        questions.iter().map(one).collect()
    };
    summarize(results)
}

/// The report with timings, counters and latency zeroed, for comparing
/// runs that should agree on everything else.
pub fn stable_view(report: &Report) -> Report {
    let mut r = report.clone();
    for q in &mut r.per_question {
        q.timings = Timings::default();
        q.counters = Counters::default();
    }
    r.latency = None;
    r.counters = Counters::default();
    r
}

#[derive(Serialize)]
pub struct TraceLine<'a> {
    pub question: &'a str,
    #[serde(flatten)]
    pub record: &'a TraceRecord,
}

/// One JSON line per candidate record, grouped by question.
pub fn trace_lines(report: &Report) -> String {
    let mut out = String::new();
    for q in &report.per_question {
        for t in &q.trace {
            out.push_str(&serde_json::to_string(&TraceLine { question: &q.id, record: t }).expect("trace serializes"));
            out.push('\n');
        }
    }
    out
}
