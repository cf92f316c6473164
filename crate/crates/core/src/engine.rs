//! Chase and backchase beam search over constraint subsets.
//!
//! The chase starts from the full table and relaxes one constraint per
//! step until the answers cover the grounded reference set (completeness).
//! The backchase grows subsets of the chase result one constraint at a time
//! until the answers stay inside the reference set (soundness). Each beam
//! iteration issues exactly one batched oracle call.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctable::ConstraintId;
use crate::eval::{evaluate, AnswerSet, EvalError};
use crate::extraction::NLQuery;
use crate::graph::Graph;
use crate::oracle::{EvalCandidate, EvalRequest, Oracle, OracleError, ReferenceSet};
use crate::plan::QueryPlan;

/// Which constraints the backchase may add.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackchasePool {
    /// Only constraints of the universal plan.
    Universal,
    /// The universal plan's constraints plus every constraint the chase
    /// dropped whose addition keeps the universal plan complete.
    #[default]
    Reintroduce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub alpha: f64,
    pub beam_width: usize,
    /// Evaluated beam iterations per phase.
    pub max_depth: usize,
    pub score_threshold: f64,
    pub completeness_gate: bool,
    /// Halve the remaining depth once some candidate passes the gate.
    pub adaptive_depth: bool,
    pub pool: BackchasePool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            alpha: 0.5,
            beam_width: 5,
            max_depth: 5,
            score_threshold: 0.99,
            completeness_gate: true,
            adaptive_depth: true,
            pool: BackchasePool::Reintroduce,
        }
    }
}

impl SearchConfig {
    /// Settings under which the search visits every subset level by level.
    pub fn exhaustive(table_len: usize) -> Self {
        SearchConfig {
            beam_width: usize::MAX,
            max_depth: table_len + 1,
            score_threshold: 1.0,
            adaptive_depth: false,
            ..SearchConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |what: &str| Err(EngineError::InvalidConfig(String::from(what)));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if self.beam_width == 0 {
            return bad("beam width must be at least 1");
        }
        if self.max_depth == 0 {
            return bad("max depth must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return bad("score threshold must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// `alpha * (1 - u) + (1 - alpha) * parent_p`.
pub fn beam_score(u: f64, parent_p: f64, alpha: f64) -> f64 {
    alpha * (1.0 - u) + (1.0 - alpha) * parent_p
}

/// Runs candidate plans against the graph. Implementations may run them
/// concurrently; results must come back in input order.
pub trait PlanExecutor: Send + Sync {
    fn execute(&self, g: &Graph, plans: &[QueryPlan]) -> Vec<Result<AnswerSet, EvalError>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SequentialExecutor;

impl PlanExecutor for SequentialExecutor {
    fn execute(&self, g: &Graph, plans: &[QueryPlan]) -> Vec<Result<AnswerSet, EvalError>> {
        plans.iter().map(|p| evaluate(g, p)).collect()
    }
}

/// Wall-clock budget, checked between beam iterations.
pub trait Deadline: Sync {
    fn expired(&self) -> bool;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoDeadline;

impl Deadline for NoDeadline {
    fn expired(&self) -> bool {
        false
    }
}

/// Everything a search phase reads.
pub struct SearchContext<'a> {
    pub graph: &'a Graph,
    pub question: &'a NLQuery,
    pub reference: &'a ReferenceSet,
    pub oracle: &'a dyn Oracle,
    pub executor: &'a dyn PlanExecutor,
    pub deadline: &'a dyn Deadline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Chase,
    Backchase,
}

/// One evaluated node of the search tree.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub ids: BTreeSet<ConstraintId>,
    pub plan: QueryPlan,
    pub answers: AnswerSet,
    pub p: f64,
    pub s: f64,
    pub complete: bool,
    pub sound: bool,
    pub iteration: usize,
}

impl CandidateRecord {
    fn sorted_ids(&self) -> Vec<ConstraintId> {
        self.ids.iter().copied().collect()
    }
}

/// One line of the JSON-lines trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub phase: Phase,
    pub iteration: usize,
    pub ids: Vec<u32>,
    pub answers: usize,
    pub p: f64,
    pub s: f64,
    pub gate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<Vec<u32>>,
    /// The constraint removed (chase) or added (backchase).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOutcome {
    pub best: CandidateRecord,
    /// No candidate passed the gate; `best` is a fallback.
    pub flagged: bool,
    pub timed_out: bool,
    pub iterations: usize,
    pub oracle_calls: usize,
    pub executions: usize,
    pub trace: Vec<TraceRecord>,
}

impl PhaseOutcome {
    pub fn plan(&self) -> &QueryPlan {
        &self.best.plan
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Universal,
    Minimal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementResult {
    pub universal: PhaseOutcome,
    pub minimal: PhaseOutcome,
    pub optimal: Choice,
}

impl RefinementResult {
    pub fn optimal_outcome(&self) -> &PhaseOutcome {
        match self.optimal {
            Choice::Universal => &self.universal,
            Choice::Minimal => &self.minimal,
        }
    }
}

fn ids_u32(ids: &BTreeSet<ConstraintId>) -> Vec<u32> {
    ids.iter().map(|c| c.0).collect()
}

pub fn is_complete(reference: &ReferenceSet, answers: &AnswerSet) -> bool {
    let got = answers.entity_ids();
    reference.grounded.iter().all(|id| got.contains(id))
}

pub fn is_sound(reference: &ReferenceSet, answers: &AnswerSet) -> bool {
    answers
        .projected
        .iter()
        .all(|v| v.as_entity().is_some_and(|id| reference.grounded.contains(id)))
}

struct Pending {
    ids: BTreeSet<ConstraintId>,
    s: f64,
    parent: Option<(BTreeSet<ConstraintId>, f64)>,
    delta: Option<(ConstraintId, f64)>,
}

/// Beam order: score descending, then size (larger first when
/// `larger_first`), then lexicographically smallest id list.
fn beam_order(a: &Pending, b: &Pending, larger_first: bool) -> Ordering {
    let size = if larger_first { b.ids.len().cmp(&a.ids.len()) } else { a.ids.len().cmp(&b.ids.len()) };
    b.s.total_cmp(&a.s)
        .then(size)
        .then_with(|| a.ids.iter().cmp(b.ids.iter()))
}

/// Selection order for the returned plan: p descending, then size, then ids.
fn best_order(a: &CandidateRecord, b: &CandidateRecord, larger_first: bool) -> Ordering {
    let size = if larger_first { b.ids.len().cmp(&a.ids.len()) } else { a.ids.len().cmp(&b.ids.len()) };
    b.p.total_cmp(&a.p)
        .then(size)
        .then_with(|| a.sorted_ids().cmp(&b.sorted_ids()))
}

struct Search<'a, 'c> {
    ctx: &'c SearchContext<'a>,
    cfg: &'c SearchConfig,
    base: &'c QueryPlan,
    phase: Phase,
    trace: Vec<TraceRecord>,
    oracle_calls: usize,
    executions: usize,
}

impl Search<'_, '_> {
    fn larger_first(&self) -> bool {
        self.phase == Phase::Chase
    }

    fn gate(&self, r: &CandidateRecord) -> bool {
        match self.phase {
            Phase::Chase => !self.cfg.completeness_gate || r.complete,
            Phase::Backchase => r.sound && (!self.cfg.completeness_gate || r.complete),
        }
    }

    fn u_of(&self, id: ConstraintId) -> f64 {
        self.base.table.get(id).map(|c| c.u).unwrap_or(0.0)
    }

    /// Executes and scores one beam level with a single oracle call.
    fn evaluate_level(&mut self, level: &[Pending], iteration: usize) -> Result<Vec<CandidateRecord>, EngineError> {
        let plans: Vec<QueryPlan> = level.iter().map(|p| self.base.restrict(&p.ids)).collect();
        let results = self.ctx.executor.execute(self.ctx.graph, &plans);
        self.executions += plans.len();
        let mut answers = Vec::with_capacity(results.len());
        for r in results {
            answers.push(r?);
        }
        let request = EvalRequest {
            question: self.ctx.question.clone(),
            candidates: answers
                .iter()
                .enumerate()
                .map(|(i, a)| EvalCandidate::from_projection(self.ctx.graph, i, &a.projected))
                .collect(),
        };
        self.oracle_calls += 1;
        let response = self.ctx.oracle.evaluate(&request)?;
        if response.per_candidate.len() != level.len() {
            return Err(OracleError::MalformedResponse(alloc::format!(
                "expected {} scores, got {}",
                level.len(),
                response.per_candidate.len()
            ))
            .into());
        }
        let mut out = Vec::with_capacity(level.len());
        for ((pending, plan), (answers, score)) in level.iter().zip(plans).zip(answers.into_iter().zip(response.per_candidate)) {
            let record = CandidateRecord {
                ids: pending.ids.clone(),
                complete: is_complete(self.ctx.reference, &answers),
                sound: is_sound(self.ctx.reference, &answers),
                plan,
                answers,
                p: score.p,
                s: pending.s,
                iteration,
            };
            self.trace.push(TraceRecord {
                phase: self.phase,
                iteration,
                ids: ids_u32(&record.ids),
                answers: record.answers.len(),
                p: record.p,
                s: record.s,
                gate: self.gate(&record),
                parent: pending.parent.as_ref().map(|(ids, _)| ids_u32(ids)),
                delta: pending.delta.map(|(id, _)| id.0),
                delta_u: pending.delta.map(|(_, u)| u),
                parent_p: pending.parent.as_ref().map(|(_, p)| *p),
            });
            out.push(record);
        }
        Ok(out)
    }

    fn spawn(&self, parent: &CandidateRecord, pool: &BTreeSet<ConstraintId>, out: &mut BTreeMap<Vec<ConstraintId>, Pending>) {
        let steps: Vec<ConstraintId> = match self.phase {
            Phase::Chase => parent.ids.iter().copied().collect(),
            Phase::Backchase => pool.difference(&parent.ids).copied().collect(),
        };
        for c in steps {
            let mut ids = parent.ids.clone();
            match self.phase {
                Phase::Chase => ids.remove(&c),
                Phase::Backchase => ids.insert(c),
            };
            let u = self.u_of(c);
            let s = beam_score(u, parent.p, self.cfg.alpha);
            let key: Vec<ConstraintId> = ids.iter().copied().collect();
            let better = out.get(&key).is_none_or(|old| s > old.s);
            if better {
                out.insert(
                    key,
                    Pending {
                        ids,
                        s,
                        parent: Some((parent.ids.clone(), parent.p)),
                        delta: Some((c, u)),
                    },
                );
            }
        }
    }

    fn run(mut self, initial: Vec<Pending>, pool: BTreeSet<ConstraintId>) -> Result<PhaseOutcome, EngineError> {
        let mut visited: BTreeSet<Vec<ConstraintId>> = initial.iter().map(|p| p.ids.iter().copied().collect()).collect();
        let mut beam = initial;
        let mut all: Vec<CandidateRecord> = Vec::new();
        let mut best_pass: Option<CandidateRecord> = None;
        let mut budget = self.cfg.max_depth;
        let mut iteration = 0;
        let mut timed_out = false;

        while iteration < budget && !beam.is_empty() {
            if self.ctx.deadline.expired() {
                timed_out = true;
                break;
            }
            let level = self.evaluate_level(&beam, iteration)?;
            let had_pass = best_pass.is_some();
            let mut level_best: Option<&CandidateRecord> = None;
            for r in level.iter().filter(|r| self.gate(r)) {
                if level_best.is_none_or(|b| best_order(r, b, self.larger_first()) == Ordering::Less) {
                    level_best = Some(r);
                }
            }
            if let Some(lb) = level_best {
                if best_pass.as_ref().is_none_or(|b| best_order(lb, b, self.larger_first()) == Ordering::Less) {
                    best_pass = Some(lb.clone());
                }
            }
            iteration += 1;
            if level_best.is_some_and(|b| b.p >= self.cfg.score_threshold) {
                all.extend(level);
                break;
            }
            if self.cfg.adaptive_depth && !had_pass && best_pass.is_some() {
                budget = iteration + (budget - iteration) / 2;
            }

            let mut children: BTreeMap<Vec<ConstraintId>, Pending> = BTreeMap::new();
            for parent in &level {
                // incomplete backchase candidates only get less complete
                if self.phase == Phase::Backchase && self.cfg.completeness_gate && !parent.complete {
                    continue;
                }
                self.spawn(parent, &pool, &mut children);
            }
            let mut next: Vec<Pending> = children.into_values().filter(|p| !visited.contains(&p.ids.iter().copied().collect::<Vec<_>>())).collect();
            let larger_first = self.larger_first();
            next.sort_by(|a, b| beam_order(a, b, larger_first));
            next.truncate(self.cfg.beam_width);
            for p in &next {
                visited.insert(p.ids.iter().copied().collect());
            }
            all.extend(level);
            beam = next;
        }

        let larger_first = self.larger_first();
        let (best, flagged) = match best_pass {
            Some(b) => (b, false),
            None => {
                let pool_for_fallback: Vec<&CandidateRecord> = match self.phase {
                    Phase::Backchase if all.iter().any(|r| r.complete) => all.iter().filter(|r| r.complete).collect(),
                    _ => all.iter().collect(),
                };
                let best = pool_for_fallback
                    .into_iter()
                    .min_by(|a, b| best_order(a, b, larger_first))
                    .cloned();
                match best {
                    Some(b) => (b, true),
                    None => {
                        // deadline hit before anything ran: fall back to the base plan
                        let answers = evaluate(self.ctx.graph, self.base)?;
                        self.executions += 1;
                        let record = CandidateRecord {
                            ids: self.base.ids(),
                            complete: is_complete(self.ctx.reference, &answers),
                            sound: is_sound(self.ctx.reference, &answers),
                            plan: self.base.clone(),
                            answers,
                            p: 0.0,
                            s: 0.0,
                            iteration: 0,
                        };
                        (record, true)
                    }
                }
            }
        };
        Ok(PhaseOutcome {
            best,
            flagged,
            timed_out,
            iterations: iteration,
            oracle_calls: self.oracle_calls,
            executions: self.executions,
            trace: self.trace,
        })
    }
}

/// Relaxes `c0` (a scored plan) toward a complete plan. Returns the
/// universal plan's outcome.
pub fn qchase(ctx: &SearchContext<'_>, c0: &QueryPlan, cfg: &SearchConfig) -> Result<PhaseOutcome, EngineError> {
    cfg.validate()?;
    let search = Search {
        ctx,
        cfg,
        base: c0,
        phase: Phase::Chase,
        trace: Vec::new(),
        oracle_calls: 0,
        executions: 0,
    };
    let root = Pending {
        ids: c0.ids(),
        s: 0.0,
        parent: None,
        delta: None,
    };
    search.run(alloc::vec![root], BTreeSet::new())
}

/// Constraint ids the backchase may draw from.
pub fn backchase_pool(
    ctx: &SearchContext<'_>,
    c0: &QueryPlan,
    universal: &BTreeSet<ConstraintId>,
    mode: BackchasePool,
    executions: &mut usize,
) -> Result<BTreeSet<ConstraintId>, EngineError> {
    let mut pool = universal.clone();
    if mode == BackchasePool::Reintroduce {
        let dropped: Vec<ConstraintId> = c0.ids().difference(universal).copied().collect();
        let plans: Vec<QueryPlan> = dropped
            .iter()
            .map(|c| {
                let mut ids = universal.clone();
                ids.insert(*c);
                c0.restrict(&ids)
            })
            .collect();
        let results = ctx.executor.execute(ctx.graph, &plans);
        *executions += plans.len();
        for (c, r) in dropped.into_iter().zip(results) {
            if is_complete(ctx.reference, &r?) {
                pool.insert(c);
            }
        }
    }
    Ok(pool)
}

/// Tightens toward a sound plan by growing subsets of the pool, starting
/// from single constraints. `c0` supplies scores and the answer spec.
pub fn qbackchase(
    ctx: &SearchContext<'_>,
    c0: &QueryPlan,
    universal: &BTreeSet<ConstraintId>,
    cfg: &SearchConfig,
) -> Result<PhaseOutcome, EngineError> {
    cfg.validate()?;
    let mut pre_executions = 0;
    let pool = backchase_pool(ctx, c0, universal, cfg.pool, &mut pre_executions)?;
    let search = Search {
        ctx,
        cfg,
        base: c0,
        phase: Phase::Backchase,
        trace: Vec::new(),
        oracle_calls: 0,
        executions: pre_executions,
    };
    let initial: Vec<Pending> = if pool.is_empty() {
        alloc::vec![Pending { ids: BTreeSet::new(), s: 0.0, parent: None, delta: None }]
    } else {
        pool.iter()
            .map(|c| Pending {
                ids: [*c].into_iter().collect(),
                s: 0.0,
                parent: None,
                delta: None,
            })
            .collect()
    };
    search.run(initial, pool)
}

/// Higher recorded p wins; ties go to the minimal plan.
pub fn select_optimal(universal: &PhaseOutcome, minimal: &PhaseOutcome) -> Choice {
    if universal.best.p > minimal.best.p {
        Choice::Universal
    } else {
        Choice::Minimal
    }
}

/// Chase, backchase and selection in one call.
pub fn refine(ctx: &SearchContext<'_>, c0: &QueryPlan, cfg: &SearchConfig) -> Result<RefinementResult, EngineError> {
    let universal = qchase(ctx, c0, cfg)?;
    let minimal = if universal.timed_out {
        universal.clone()
    } else {
        qbackchase(ctx, c0, &universal.best.ids, cfg)?
    };
    let optimal = select_optimal(&universal, &minimal);
    Ok(RefinementResult { universal, minimal, optimal })
}
