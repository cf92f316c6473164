//! Reference answers and candidate scoring: the oracle interface, the
//! exact (ground-truth) oracle, answer grounding, the text protocol used by
//! LLM-backed oracles and the multi-run aggregation strategies.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::{MentionDict, NLQuery};
use crate::graph::Graph;
use crate::literal::Value;
use crate::metrics::{normalize_answer, score_sets};

/// Top of the evaluator rubric.
pub const RAW_SCALE: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("oracle unavailable: {0}")]
    Unavailable(String),
    #[error("malformed oracle response: {0}")]
    MalformedResponse(String),
    #[error("no recording for {0}")]
    MissingRecording(String),
    #[error("aggregation eliminated every answer")]
    EmptyAggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceSource {
    Exact,
    Fixture,
    Http,
    Aggregated,
}

/// A reference answer set and its grounding in the graph.
///
/// `links` maps each resolvable (normalized) answer to its entity id;
/// answers without a link are listed in `unresolved` and excluded from
/// `grounded`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub answers: BTreeSet<String>,
    pub grounded: BTreeSet<String>,
    #[serde(default)]
    pub unresolved: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub links: BTreeMap<String, String>,
    pub source: ReferenceSource,
    #[serde(default)]
    pub uncertain: bool,
}

impl ReferenceSet {
    /// Grounds `answers` with `resolve` (answer text to entity id).
    pub fn ground<'a, I, F>(answers: I, resolve: F, source: ReferenceSource) -> Self
    where
        I: IntoIterator<Item = &'a str>,
        F: Fn(&str) -> Option<String>,
    {
        let mut out = ReferenceSet {
            answers: BTreeSet::new(),
            grounded: BTreeSet::new(),
            unresolved: BTreeSet::new(),
            links: BTreeMap::new(),
            source,
            uncertain: false,
        };
        for a in answers {
            let a = a.trim();
            if a.is_empty() {
                continue;
            }
            out.answers.insert(a.to_string());
            match resolve(a) {
                Some(id) => {
                    out.links.insert(normalize_answer(a), id.clone());
                    out.grounded.insert(id);
                }
                None => {
                    out.unresolved.insert(a.to_string());
                }
            }
        }
        out
    }

    /// A reference built from known entity ids; answers are display names.
    pub fn from_entities<'a, I: IntoIterator<Item = &'a str>>(g: &Graph, ids: I, source: ReferenceSource) -> Self {
        let ids: Vec<&str> = ids.into_iter().collect();
        let names: BTreeMap<String, String> = ids
            .iter()
            .map(|id| (g.display_name(&Value::entity(*id)), id.to_string()))
            .collect();
        Self::ground(names.keys().map(String::as_str), |a| names.get(a).cloned(), source)
    }

    pub fn unknown(source: ReferenceSource) -> Self {
        let mut r = Self::ground(core::iter::empty(), |_| None, source);
        r.uncertain = true;
        r
    }
}

/// Resolves answer text to an entity id: mention dictionary first, then
/// case-folded `name` property, then the raw id.
pub fn resolve_answer(g: &Graph, dict: &MentionDict, answer: &str) -> Option<String> {
    let key = normalize_answer(answer);
    if let Some(id) = dict.get(&key) {
        if g.contains(id) {
            return Some(id.clone());
        }
    }
    let by_name = g.entities().find(|e| {
        e.properties
            .get("name")
            .is_some_and(|n| normalize_answer(&n.to_string()) == key)
    });
    if let Some(e) = by_name {
        return Some(e.id.clone());
    }
    g.entity(answer.trim()).map(|e| e.id.clone())
}

pub fn ground_answers<'a, I: IntoIterator<Item = &'a str>>(
    g: &Graph,
    dict: &MentionDict,
    answers: I,
    source: ReferenceSource,
) -> ReferenceSet {
    ReferenceSet::ground(answers, |a| resolve_answer(g, dict, a), source)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCandidate {
    pub index: usize,
    /// Display names shown to text oracles.
    pub answers: BTreeSet<String>,
    /// Entity ids, used by oracles that score against the grounding.
    pub entities: BTreeSet<String>,
}

impl EvalCandidate {
    pub fn from_projection(g: &Graph, index: usize, projected: &BTreeSet<Value>) -> Self {
        EvalCandidate {
            index,
            answers: projected.iter().map(|v| g.display_name(v)).collect(),
            entities: projected.iter().filter_map(|v| v.as_entity().map(str::to_string)).collect(),
        }
    }
}

/// All candidates of one beam step, scored in one call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub question: NLQuery,
    pub candidates: Vec<EvalCandidate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub raw: f64,
    pub p: f64,
}

impl CandidateScore {
    pub fn from_raw(raw: f64) -> Self {
        CandidateScore { raw, p: raw / RAW_SCALE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    pub per_candidate: Vec<CandidateScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSet>,
}

pub trait Oracle: Send + Sync {
    fn reference(&self, q: &NLQuery) -> Result<ReferenceSet, OracleError>;
    fn evaluate(&self, req: &EvalRequest) -> Result<EvalResponse, OracleError>;
}

impl<O: Oracle + ?Sized> Oracle for &O {
    fn reference(&self, q: &NLQuery) -> Result<ReferenceSet, OracleError> {
        (**self).reference(q)
    }
    fn evaluate(&self, req: &EvalRequest) -> Result<EvalResponse, OracleError> {
        (**self).evaluate(req)
    }
}

impl<O: Oracle + ?Sized> Oracle for alloc::boxed::Box<O> {
    fn reference(&self, q: &NLQuery) -> Result<ReferenceSet, OracleError> {
        (**self).reference(q)
    }
    fn evaluate(&self, req: &EvalRequest) -> Result<EvalResponse, OracleError> {
        (**self).evaluate(req)
    }
}

impl<O: Oracle + ?Sized> Oracle for alloc::sync::Arc<O> {
    fn reference(&self, q: &NLQuery) -> Result<ReferenceSet, OracleError> {
        (**self).reference(q)
    }
    fn evaluate(&self, req: &EvalRequest) -> Result<EvalResponse, OracleError> {
        (**self).evaluate(req)
    }
}

/// Scores candidates by F1 of their entities against a known grounding.
#[derive(Debug, Clone)]
pub struct ExactOracle {
    pub truth: ReferenceSet,
}

impl ExactOracle {
    pub fn new(truth: ReferenceSet) -> Self {
        ExactOracle { truth }
    }
}

impl Oracle for ExactOracle {
    fn reference(&self, _q: &NLQuery) -> Result<ReferenceSet, OracleError> {
        Ok(self.truth.clone())
    }

    fn evaluate(&self, req: &EvalRequest) -> Result<EvalResponse, OracleError> {
        let per_candidate = req
            .candidates
            .iter()
            .map(|c| {
                let f1 = score_sets(&c.entities, &self.truth.grounded).f1;
                CandidateScore { raw: f1 * RAW_SCALE, p: f1 }
            })
            .collect();
        Ok(EvalResponse { per_candidate, reference: None })
    }
}

/// Retries once when the inner oracle is unavailable.
pub struct Retry<O>(pub O);

impl<O: Oracle> Oracle for Retry<O> {
    fn reference(&self, q: &NLQuery) -> Result<ReferenceSet, OracleError> {
        match self.0.reference(q) {
            Err(OracleError::Unavailable(_)) => self.0.reference(q),
            other => other,
        }
    }

    fn evaluate(&self, req: &EvalRequest) -> Result<EvalResponse, OracleError> {
        match self.0.evaluate(req) {
            Err(OracleError::Unavailable(_)) => self.0.evaluate(req),
            other => other,
        }
    }
}

/// Counts calls reaching the inner oracle.
#[derive(Default)]
pub struct Counting<O> {
    pub inner: O,
    references: AtomicUsize,
    evaluations: AtomicUsize,
}

impl<O> Counting<O> {
    pub fn new(inner: O) -> Self {
        Counting {
            inner,
            references: AtomicUsize::new(0),
            evaluations: AtomicUsize::new(0),
        }
    }

    pub fn reference_calls(&self) -> usize {
        self.references.load(Ordering::SeqCst)
    }

    pub fn evaluate_calls(&self) -> usize {
        self.evaluations.load(Ordering::SeqCst)
    }
}

impl<O: Oracle> Oracle for Counting<O> {
    fn reference(&self, q: &NLQuery) -> Result<ReferenceSet, OracleError> {
        self.references.fetch_add(1, Ordering::SeqCst);
        self.inner.reference(q)
    }

    fn evaluate(&self, req: &EvalRequest) -> Result<EvalResponse, OracleError> {
        self.evaluations.fetch_add(1, Ordering::SeqCst);
        self.inner.evaluate(req)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Keep answers present in at least ceil(K/2) of K runs.
    Majority,
    Intersection,
    /// Recall run and precision run: intersect, fall back to the union when
    /// the intersection is empty, then apply the verifier.
    Moe,
}

pub fn aggregate_references(
    runs: &[ReferenceSet],
    strategy: Aggregation,
    verifier: Option<&dyn Fn(&str) -> bool>,
) -> Result<ReferenceSet, OracleError> {
    if runs.is_empty() {
        return Err(OracleError::EmptyAggregate);
    }
    // normalized answer -> (first surface form seen, number of runs)
    let mut seen: BTreeMap<String, (String, usize)> = BTreeMap::new();
    for run in runs {
        let keys: BTreeSet<String> = run.answers.iter().map(|a| normalize_answer(a)).collect();
        for a in &run.answers {
            seen.entry(normalize_answer(a)).or_insert_with(|| (a.clone(), 0));
        }
        for k in keys {
            seen.get_mut(&k).expect("inserted above").1 += 1;
        }
    }
    let k = runs.len();
    let keep = |need: usize| -> Vec<String> {
        seen.iter()
            .filter(|(_, (_, n))| *n >= need)
            .map(|(key, _)| key.clone())
            .collect()
    };
    let mut kept = match strategy {
        Aggregation::Majority => keep(k.div_ceil(2)),
        Aggregation::Intersection => keep(k),
        Aggregation::Moe => {
            let both = keep(k);
            if both.is_empty() {
                keep(1)
            } else {
                both
            }
        }
    };
    if let Some(verify) = verifier {
        kept.retain(|key| verify(&seen[key].0));
    }
    if kept.is_empty() {
        return Err(OracleError::EmptyAggregate);
    }
    let links: BTreeMap<String, String> = runs.iter().flat_map(|r| r.links.clone()).collect();
    let surfaces: Vec<&str> = kept.iter().map(|key| seen[key].0.as_str()).collect();
    Ok(ReferenceSet::ground(
        surfaces,
        |a| links.get(&normalize_answer(a)).cloned(),
        ReferenceSource::Aggregated,
    ))
}

/// Splits a `;`-separated answer list. `UNKNOWN` yields an empty list
/// flagged uncertain.
pub fn parse_answer_list(body: &str) -> (Vec<String>, bool) {
    let trimmed = body.trim().trim_start_matches('{').trim_end_matches('}').trim();
    if trimmed.eq_ignore_ascii_case("unknown") {
        return (Vec::new(), true);
    }
    let mut out = Vec::new();
    for part in trimmed.split([';', '\n']) {
        let part = part.trim().trim_matches('"').trim();
        if !part.is_empty() && !out.iter().any(|x: &String| x == part) {
            out.push(part.to_string());
        }
    }
    (out, false)
}

/// Parses evaluator output: one `<index>: <score>` line per candidate,
/// score in 0..=20.
pub fn parse_scores(body: &str, expected: &[usize]) -> Result<Vec<CandidateScore>, OracleError> {
    let excerpt = || body.chars().take(120).collect::<String>();
    let mut found: BTreeMap<usize, f64> = BTreeMap::new();
    for line in body.lines() {
        let line = line.trim().trim_start_matches(['#', '-', '*', ' ']);
        let Some((idx, score)) = line.split_once(':') else {
            continue;
        };
        let Ok(idx) = idx.trim().trim_start_matches("candidate").trim().parse::<usize>() else {
            continue;
        };
        let score_text = score.trim().split(|c: char| c.is_whitespace() || c == '/').next().unwrap_or("");
        let Ok(raw) = score_text.parse::<f64>() else {
            return Err(OracleError::MalformedResponse(excerpt()));
        };
        if !(0.0..=RAW_SCALE).contains(&raw) {
            return Err(OracleError::MalformedResponse(excerpt()));
        }
        found.insert(idx, raw);
    }
    expected
        .iter()
        .map(|i| {
            found
                .get(i)
                .map(|raw| CandidateScore::from_raw(*raw))
                .ok_or_else(|| OracleError::MalformedResponse(excerpt()))
        })
        .collect()
}

/// Reference-answer prompt variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptStyle {
    /// Plain answer list.
    Plain,
    /// Answer list with an explicit UNKNOWN escape.
    Cautious,
    /// Err on the side of listing every plausible answer.
    Recall,
    /// List only answers you are sure of.
    Precision,
}

pub fn reference_prompt(question: &str, style: PromptStyle) -> String {
    let guidance = match style {
        PromptStyle::Plain => "",
        PromptStyle::Cautious => "If you do not know, reply with the single word UNKNOWN.\n",
        PromptStyle::Recall => "Include every entity that could reasonably qualify.\n",
        PromptStyle::Precision => "Include only entities you are confident qualify.\n",
    };
    format!(
        "Answer the question with entity names only.\n\
         Separate names with a semicolon and add no other text.\n\
         {guidance}Question: {question}\n"
    )
}

pub fn verifier_prompt(question: &str, candidate: &str) -> String {
    format!(
        "Does the entity \"{candidate}\" answer the question below? Reply YES or NO.\n\
         Question: {question}\n"
    )
}

pub fn evaluator_prompt(question: &str, reference: &ReferenceSet, candidates: &[EvalCandidate]) -> String {
    let mut out = format!(
        "Rate how well each candidate answer list matches the expected answers for the question.\n\
         Use an integer from 0 (no overlap) to 20 (identical sets). Penalize both missing and extra entities.\n\
         Reply with one line per candidate formatted as <index>: <score>.\n\
         Question: {question}\n\
         Expected: {}\n",
        join(&reference.answers)
    );
    for c in candidates {
        out.push_str(&format!("{}: {}\n", c.index, join(&c.answers)));
    }
    out
}

fn join(items: &BTreeSet<String>) -> String {
    items.iter().map(String::as_str).collect::<Vec<_>>().join("; ")
}
