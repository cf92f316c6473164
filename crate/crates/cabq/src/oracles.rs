//! Oracle adapters: per-question gold answers, record/replay fixtures, an
//! HTTP completion endpoint, and a caching wrapper.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use cabq_core::extraction::{MentionDict, NLQuery};
use cabq_core::oracle::{
    aggregate_references, evaluator_prompt, ground_answers, parse_answer_list, parse_scores, reference_prompt,
    verifier_prompt, Aggregation, CandidateScore, EvalRequest, EvalResponse, ExactOracle, Oracle, OracleError,
    PromptStyle, ReferenceSet, ReferenceSource,
};
use cabq_core::Graph;
use serde::{Deserialize, Serialize};

use crate::cache::Cache;
use crate::io::sha256_hex;

/// Key of a question: its id, or its text when it has none.
pub fn question_key(q: &NLQuery) -> String {
    q.id.clone().unwrap_or_else(|| q.text.clone())
}

/// Content hash of a batched evaluation request.
pub fn request_key(req: &EvalRequest) -> String {
    sha256_hex(serde_json::to_string(req).expect("requests serialize").as_bytes())
}

/// Exact oracle per question, keyed by question id.
pub struct GoldOracle {
    truths: BTreeMap<String, ExactOracle>,
}

impl GoldOracle {
    /// Grounds each question's gold answers against `g` through `dict`.
    pub fn new<'a, I>(g: &Graph, dict: &MentionDict, gold: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a [String])>,
    {
        let truths = gold
            .into_iter()
            .map(|(id, answers)| {
                let r = ground_answers(g, dict, answers.iter().map(String::as_str), ReferenceSource::Exact);
                (id.to_string(), ExactOracle::new(r))
            })
            .collect();
        GoldOracle { truths }
    }

    fn get(&self, q: &NLQuery) -> Result<&ExactOracle, OracleError> {
        self.truths
            .get(&question_key(q))
            .ok_or_else(|| OracleError::MissingRecording(format!("gold answers for {}", question_key(q))))
    }
}

impl Oracle for GoldOracle {
    fn reference(&self, q: &NLQuery) -> Result<ReferenceSet, OracleError> {
        self.get(q)?.reference(q)
    }

    fn evaluate(&self, req: &EvalRequest) -> Result<EvalResponse, OracleError> {
        self.get(&req.question)?.evaluate(req)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecordedReference {
    Answers(Vec<String>),
    Flagged { answers: Vec<String>, #[serde(default)] uncertain: bool },
}

/// Record/replay file: reference answers by question key, raw evaluator
/// scores by request hash.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureFile {
    #[serde(default)]
    pub references: BTreeMap<String, RecordedReference>,
    #[serde(default)]
    pub evaluations: BTreeMap<String, Vec<f64>>,
}

impl FixtureFile {
    pub fn load(path: &Path) -> Result<Self, crate::io::InputError> {
        crate::io::read_json(path)
    }
}

pub struct FixtureOracle {
    file: FixtureFile,
    graph: Arc<Graph>,
    dict: MentionDict,
}

impl FixtureOracle {
    pub fn new(file: FixtureFile, graph: Arc<Graph>, dict: MentionDict) -> Self {
        FixtureOracle { file, graph, dict }
    }
}

impl Oracle for FixtureOracle {
    fn reference(&self, q: &NLQuery) -> Result<ReferenceSet, OracleError> {
        let key = question_key(q);
        let rec = self
            .file
            .references
            .get(&key)
            .ok_or_else(|| OracleError::MissingRecording(format!("reference for {key}")))?;
        let (answers, uncertain) = match rec {
            RecordedReference::Answers(a) => (a, false),
            RecordedReference::Flagged { answers, uncertain } => (answers, *uncertain),
        };
        let mut r = ground_answers(&self.graph, &self.dict, answers.iter().map(String::as_str), ReferenceSource::Fixture);
        r.uncertain = uncertain;
        Ok(r)
    }

    fn evaluate(&self, req: &EvalRequest) -> Result<EvalResponse, OracleError> {
        let key = request_key(req);
        let raw = self
            .file
            .evaluations
            .get(&key)
            .ok_or_else(|| OracleError::MissingRecording(format!("evaluation {key}")))?;
        if raw.len() != req.candidates.len() {
            return Err(OracleError::MalformedResponse(format!("recording {key} has {} scores", raw.len())));
        }
        Ok(EvalResponse {
            per_candidate: raw.iter().map(|r| CandidateScore::from_raw(*r)).collect(),
            reference: None,
        })
    }
}

/// Captures every answer of the inner oracle into a [`FixtureFile`].
pub struct Recording<O> {
    pub inner: O,
    file: Mutex<FixtureFile>,
}

impl<O> Recording<O> {
    pub fn new(inner: O) -> Self {
        Recording { inner, file: Mutex::new(FixtureFile::default()) }
    }

    pub fn fixture(&self) -> FixtureFile {
        self.file.lock().expect("recording lock").clone()
    }
}

impl<O: Oracle> Oracle for Recording<O> {
    fn reference(&self, q: &NLQuery) -> Result<ReferenceSet, OracleError> {
        let r = self.inner.reference(q)?;
        let answers = r.answers.iter().cloned().collect();
        let rec = if r.uncertain {
            RecordedReference::Flagged { answers, uncertain: true }
        } else {
            RecordedReference::Answers(answers)
        };
        self.file.lock().expect("recording lock").references.insert(question_key(q), rec);
        Ok(r)
    }

    fn evaluate(&self, req: &EvalRequest) -> Result<EvalResponse, OracleError> {
        let resp = self.inner.evaluate(req)?;
        let raw = resp.per_candidate.iter().map(|c| c.raw).collect();
        self.file.lock().expect("recording lock").evaluations.insert(request_key(req), raw);
        Ok(resp)
    }
}

/// Serves references and evaluations from the on-disk cache when present.
pub struct Cached<O> {
    pub inner: O,
    cache: Cache,
}

impl<O> Cached<O> {
    pub fn new(inner: O, cache: Cache) -> Self {
        Cached { inner, cache }
    }
}

impl<O: Oracle> Oracle for Cached<O> {
    fn reference(&self, q: &NLQuery) -> Result<ReferenceSet, OracleError> {
        let key = question_key(q);
        if let Some(r) = self.cache.get("references", &key) {
            return Ok(r);
        }
        let r = self.inner.reference(q)?;
        self.cache.put("references", &key, &r);
        Ok(r)
    }

    fn evaluate(&self, req: &EvalRequest) -> Result<EvalResponse, OracleError> {
        let key = request_key(req);
        if let Some(r) = self.cache.get("evaluations", &key) {
            return Ok(r);
        }
        let r = self.inner.evaluate(req)?;
        self.cache.put("evaluations", &key, &r);
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpConfig {
    pub url: String,
    pub key: Option<String>,
    pub timeout_ms: u64,
}

pub const DEFAULT_TIMEOUT_MS: u64 = 60_000;

impl HttpConfig {
    /// Reads `CAB_ORACLE_URL`, `CAB_ORACLE_KEY` and `CAB_ORACLE_TIMEOUT_MS`.
    pub fn from_env() -> Result<Self, String> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let url = get("CAB_ORACLE_URL").ok_or("CAB_ORACLE_URL is not set")?;
        let timeout_ms = match get("CAB_ORACLE_TIMEOUT_MS") {
            Some(v) => v.parse().map_err(|_| format!("CAB_ORACLE_TIMEOUT_MS is not an integer: {v}"))?,
            None => DEFAULT_TIMEOUT_MS,
        };
        Ok(HttpConfig { url, key: get("CAB_ORACLE_KEY"), timeout_ms })
    }
}

/// How the HTTP oracle builds a reference set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceStrategy {
    /// One plain prompt.
    Single,
    /// One prompt allowing an UNKNOWN reply.
    Cautious,
    /// K plain runs, majority vote.
    Majority(usize),
    /// Recall and precision runs, intersected, then verified per answer.
    Experts,
}

#[derive(Serialize)]
struct Payload<'a> {
    prompt: &'a str,
    max_tokens: u32,
}

pub struct HttpOracle {
    cfg: HttpConfig,
    agent: ureq::Agent,
    strategy: ReferenceStrategy,
    graph: Arc<Graph>,
    dict: MentionDict,
    references: Mutex<HashMap<String, ReferenceSet>>,
}

impl HttpOracle {
    pub fn new(cfg: HttpConfig, strategy: ReferenceStrategy, graph: Arc<Graph>, dict: MentionDict) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_millis(cfg.timeout_ms)).build();
        HttpOracle {
            cfg,
            agent,
            strategy,
            graph,
            dict,
            references: Mutex::new(HashMap::new()),
        }
    }

    fn complete(&self, prompt: &str) -> Result<String, OracleError> {
        let mut req = self.agent.post(&self.cfg.url);
        if let Some(key) = &self.cfg.key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(Payload { prompt, max_tokens: 1024 }) {
            Ok(resp) => resp.into_string().map_err(|e| OracleError::Unavailable(e.to_string())),
            Err(ureq::Error::Status(code, _)) => Err(OracleError::Unavailable(format!("HTTP {code}"))),
            Err(e) => Err(OracleError::Unavailable(e.to_string())),
        }
    }

    fn run(&self, q: &NLQuery, style: PromptStyle) -> Result<ReferenceSet, OracleError> {
        let body = self.complete(&reference_prompt(&q.text, style))?;
        let (answers, uncertain) = parse_answer_list(&body);
        let mut r = ground_answers(&self.graph, &self.dict, answers.iter().map(String::as_str), ReferenceSource::Http);
        r.uncertain = uncertain;
        Ok(r)
    }

    fn build_reference(&self, q: &NLQuery) -> Result<ReferenceSet, OracleError> {
        let aggregated = |runs: Vec<ReferenceSet>, how, verify: Option<&dyn Fn(&str) -> bool>| {
            let r = aggregate_references(&runs, how, verify)?;
            let mut g = ground_answers(&self.graph, &self.dict, r.answers.iter().map(String::as_str), ReferenceSource::Aggregated);
            g.uncertain = r.uncertain;
            Ok::<_, OracleError>(g)
        };
        match self.strategy {
            ReferenceStrategy::Single => self.run(q, PromptStyle::Plain),
            ReferenceStrategy::Cautious => self.run(q, PromptStyle::Cautious),
            ReferenceStrategy::Majority(k) => {
                let runs = (0..k.max(1)).map(|_| self.run(q, PromptStyle::Plain)).collect::<Result<Vec<_>, _>>()?;
                aggregated(runs, Aggregation::Majority, None)
            }
            ReferenceStrategy::Experts => {
                let runs = vec![self.run(q, PromptStyle::Recall)?, self.run(q, PromptStyle::Precision)?];
                let verify = |a: &str| {
                    self.complete(&verifier_prompt(&q.text, a))
                        .map(|body| body.trim_start().to_ascii_lowercase().starts_with("yes"))
                        .unwrap_or(true)
                };
                aggregated(runs, Aggregation::Moe, Some(&verify))
            }
        }
    }
}

impl Oracle for HttpOracle {
    fn reference(&self, q: &NLQuery) -> Result<ReferenceSet, OracleError> {
        let r = self.build_reference(q)?;
        self.references.lock().expect("reference lock").insert(q.text.clone(), r.clone());
        Ok(r)
    }

    fn evaluate(&self, req: &EvalRequest) -> Result<EvalResponse, OracleError> {
        let known = self.references.lock().expect("reference lock").get(&req.question.text).cloned();
        let reference = match known {
            Some(r) => r,
            None => self.reference(&req.question)?,
        };
        let body = self.complete(&evaluator_prompt(&req.question.text, &reference, &req.candidates))?;
        let expected: Vec<usize> = req.candidates.iter().map(|c| c.index).collect();
        Ok(EvalResponse { per_candidate: parse_scores(&body, &expected)?, reference: None })
    }
}
