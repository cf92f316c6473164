//! Question-centric fact extraction: entity linking, subgraph induction,
//! triple parameterization and constraint-table construction.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctable::{normalize, score, CTable, CTableError, Constraint, Predicate, Term, TriplePattern, ValueConstraint};
use crate::graph::{Graph, GraphError};
use crate::literal::{CompareOp, Value};

/// Lowercase surface form to entity id.
pub type MentionDict = BTreeMap<String, String>;

pub const DEFAULT_K: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NLQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub text: String,
}

impl NLQuery {
    pub fn new(text: &str) -> Self {
        NLQuery { id: None, text: text.to_string() }
    }

    pub fn with_id(id: &str, text: &str) -> Self {
        NLQuery {
            id: Some(id.to_string()),
            text: text.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkedEntities {
    pub mentions: Vec<Mention>,
    pub ids: BTreeSet<String>,
}

impl LinkedEntities {
    /// Links supplied directly (entity hints), without mentions.
    pub fn from_ids<I: IntoIterator<Item = S>, S: Into<String>>(ids: I) -> Self {
        LinkedEntities {
            mentions: Vec::new(),
            ids: ids.into_iter().map(Into::into).collect(),
        }
    }
}

pub trait EntityLinker: Send + Sync {
    fn link(&self, q: &NLQuery, g: &Graph) -> LinkedEntities;
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Longest-match, case-insensitive scan. Matches must start and end on
/// word boundaries; ids missing from the graph are skipped.
pub fn link_entities(q: &NLQuery, g: &Graph, dict: &MentionDict) -> LinkedEntities {
    let text: Vec<char> = q.text.chars().collect();
    let lower: Vec<char> = q.text.chars().map(|c| c.to_lowercase().next().unwrap_or(c)).collect();
    let mut surfaces: Vec<(Vec<char>, &String)> = dict
        .iter()
        .filter(|(k, _)| !k.is_empty())
        .map(|(k, v)| (k.chars().map(|c| c.to_lowercase().next().unwrap_or(c)).collect(), v))
        .collect();
    surfaces.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));

    let mut out = LinkedEntities::default();
    let mut i = 0;
    while i < lower.len() {
        let at_boundary = i == 0 || !is_word_char(lower[i - 1]);
        let mut matched = None;
        if at_boundary {
            for (s, id) in &surfaces {
                let end = i + s.len();
                if end <= lower.len()
                    && lower[i..end] == s[..]
                    && (end == lower.len() || !is_word_char(lower[end]) || !is_word_char(s[s.len() - 1]))
                {
                    matched = Some((end, *id));
                    break;
                }
            }
        }
        match matched {
            Some((end, id)) => {
                if g.contains(id) {
                    out.mentions.push(Mention {
                        surface: text[i..end].iter().collect(),
                        start: i,
                        end,
                        id: id.clone(),
                    });
                    out.ids.insert(id.clone());
                }
                i = end;
            }
            None => i += 1,
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct DictionaryLinker {
    pub dict: MentionDict,
}

impl DictionaryLinker {
    pub fn new(dict: MentionDict) -> Self {
        DictionaryLinker { dict }
    }
}

impl EntityLinker for DictionaryLinker {
    fn link(&self, q: &NLQuery, g: &Graph) -> LinkedEntities {
        link_entities(q, g, &self.dict)
    }
}

/// Which variable a question asks for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSpec {
    pub var: String,
    #[serde(default, rename = "type", skip_serializing_if = "Option::is_none")]
    pub ty: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    /// Chosen candidates, in candidate order.
    pub selected: Vec<Constraint>,
    /// Implicit constraints not present in the subgraph.
    pub inject: Vec<Constraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<AnswerSpec>,
}

pub trait ConstraintSuggester: Send + Sync {
    fn suggest(&self, q: &NLQuery, subgraph: &Graph, candidates: &[Constraint]) -> Suggestion;
}

fn stem(word: &str) -> String {
    let w = word.to_lowercase();
    let n = w.chars().count();
    if let Some(s) = w.strip_suffix("ies").filter(|_| n > 4) {
        return format!("{s}y");
    }
    for (suffix, min) in [("ing", 6), ("ed", 5), ("es", 5), ("s", 4)] {
        if n >= min {
            if let Some(s) = w.strip_suffix(suffix) {
                if suffix == "es" && !(s.ends_with("sh") || s.ends_with("ch") || s.ends_with('x')) {
                    continue;
                }
                if suffix == "s" && s.ends_with('s') {
                    continue;
                }
                return s.to_string();
            }
        }
    }
    w
}

/// Stemmed lowercase tokens; camel case and `_` split words.
pub fn tokens(text: &str) -> BTreeSet<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    let mut prev_lower = false;
    for c in text.chars() {
        if !c.is_alphanumeric() {
            if !cur.is_empty() {
                words.push(core::mem::take(&mut cur));
            }
            prev_lower = false;
            continue;
        }
        if c.is_uppercase() && prev_lower && !cur.is_empty() {
            words.push(core::mem::take(&mut cur));
        }
        prev_lower = c.is_lowercase() || c.is_numeric();
        cur.push(c);
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words.iter().filter(|w| w.chars().count() > 1).map(|w| stem(w)).collect()
}

/// Keeps candidates whose predicate or type labels share a token with the
/// question. Injects nothing. The answer variable is the first type named
/// in the question, else the subject of the first kept pattern.
#[derive(Debug, Clone, Default)]
pub struct KeywordSuggester;

fn labels_of(c: &Constraint) -> Vec<&str> {
    match c {
        Constraint::Triple(t) => {
            let mut out = Vec::new();
            if let Predicate::Label(p) = &t.predicate {
                out.push(p.as_str());
            }
            out.extend(t.subject_type.as_deref());
            out.extend(t.object_type.as_deref());
            out
        }
        Constraint::Value(v) => alloc::vec![v.property.as_str()],
        Constraint::Path(p) => alloc::vec![p.predicate.as_str()],
        _ => Vec::new(),
    }
}

impl ConstraintSuggester for KeywordSuggester {
    fn suggest(&self, q: &NLQuery, _subgraph: &Graph, candidates: &[Constraint]) -> Suggestion {
        let words = tokens(&q.text);
        let selected: Vec<Constraint> = candidates
            .iter()
            .filter(|c| labels_of(c).iter().any(|l| !tokens(l).is_disjoint(&words)))
            .cloned()
            .collect();
        let mut answer = None;
        'outer: for c in &selected {
            if let Constraint::Triple(t) = c {
                for (term, ty) in [(&t.subject, &t.subject_type), (&t.object, &t.object_type)] {
                    if let (Term::Var(v), Some(ty)) = (term, ty) {
                        if !tokens(ty).is_disjoint(&words) {
                            answer = Some(AnswerSpec { var: v.clone(), ty: Some(ty.clone()) });
                            break 'outer;
                        }
                    }
                }
            }
        }
        Suggestion {
            selected,
            inject: Vec::new(),
            answer,
        }
    }
}

/// Per-question scripted choice: 1-based candidate positions plus
/// injected constraints.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedEntry {
    #[serde(default)]
    pub select: Vec<usize>,
    #[serde(default)]
    pub inject: Vec<Constraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<AnswerSpec>,
}

/// Replays [`ScriptedEntry`] values keyed by question id. Unknown
/// questions select nothing.
#[derive(Debug, Clone, Default)]
pub struct ScriptedSuggester {
    pub entries: BTreeMap<String, ScriptedEntry>,
}

impl ScriptedSuggester {
    pub fn new(entries: BTreeMap<String, ScriptedEntry>) -> Self {
        ScriptedSuggester { entries }
    }
}

impl ConstraintSuggester for ScriptedSuggester {
    fn suggest(&self, q: &NLQuery, _subgraph: &Graph, candidates: &[Constraint]) -> Suggestion {
        let Some(entry) = q.id.as_ref().and_then(|id| self.entries.get(id)) else {
            return Suggestion::default();
        };
        let picks: BTreeSet<usize> = entry.select.iter().copied().collect();
        Suggestion {
            selected: picks
                .iter()
                .filter_map(|i| i.checked_sub(1).and_then(|i| candidates.get(i)).cloned())
                .collect(),
            inject: entry.inject.clone(),
            answer: entry.answer.clone(),
        }
    }
}

fn primary_type(g: &Graph, id: &str) -> Option<String> {
    g.entity(id).and_then(|e| e.types.iter().next().cloned())
}

/// Turns subgraph triples into patterns. Linked entities stay constants;
/// other entities become `x0, x1, ...`, one variable per type label in
/// discovery order (a second one when both ends share a type). Literal
/// objects become `=` filters on the subject variable. Output is
/// deduplicated and in triple order.
pub fn parameterize_triples(g: &Graph, linked: &LinkedEntities) -> Vec<Constraint> {
    let mut vars: BTreeMap<(Option<String>, u8), String> = BTreeMap::new();
    let fresh = |key: (Option<String>, u8), vars: &mut BTreeMap<(Option<String>, u8), String>| -> String {
        let n = vars.len();
        vars.entry(key).or_insert_with(|| format!("x{n}")).clone()
    };
    let mut out: Vec<Constraint> = Vec::new();
    for t in g.triples() {
        let s_linked = linked.ids.contains(&t.subject);
        let s_type = primary_type(g, &t.subject);
        let (subject, subject_type) = if s_linked {
            (Term::Entity(t.subject.clone()), None)
        } else {
            (Term::Var(fresh((s_type.clone(), 0), &mut vars)), s_type.clone())
        };
        let c = match &t.object {
            Value::Literal(l) => {
                let Term::Var(anchor) = &subject else { continue };
                Constraint::Value(ValueConstraint::new(anchor, &t.predicate, CompareOp::Eq, l.clone()))
            }
            Value::Entity(o) => {
                let (object, object_type) = if linked.ids.contains(o) {
                    (Term::Entity(o.clone()), None)
                } else {
                    let o_type = primary_type(g, o);
                    let slot = if !s_linked && o_type == s_type { 1 } else { 0 };
                    (Term::Var(fresh((o_type.clone(), slot), &mut vars)), o_type)
                };
                Constraint::Triple(TriplePattern {
                    subject,
                    predicate: Predicate::Label(t.predicate.clone()),
                    object,
                    subject_type,
                    object_type,
                })
            }
        };
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractionError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Table(#[from] CTableError),
}

/// Everything extraction produces for one question.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub linked: LinkedEntities,
    pub subgraph: Graph,
    pub candidates: Vec<Constraint>,
    pub table: CTable,
    pub answer: AnswerSpec,
}

/// Fallback answer variable: the first variable of the table, typed by the
/// first pattern position it occupies.
fn infer_answer(table: &CTable) -> AnswerSpec {
    for sc in &table.constraints {
        if let Constraint::Triple(t) = &sc.constraint {
            if let Term::Var(v) = &t.subject {
                return AnswerSpec { var: v.clone(), ty: t.subject_type.clone() };
            }
            if let Term::Var(v) = &t.object {
                return AnswerSpec { var: v.clone(), ty: t.object_type.clone() };
            }
        }
    }
    let var = table
        .constraints
        .iter()
        .flat_map(|sc| sc.constraint.variables())
        .next()
        .unwrap_or("x0")
        .to_string();
    AnswerSpec { var, ty: None }
}

/// Link (or take `linked` as given), induce the k-hop subgraph, parameterize,
/// let the suggester select and inject, normalize and score over `g`.
pub fn extract(
    q: &NLQuery,
    g: &Graph,
    linked: LinkedEntities,
    suggester: &dyn ConstraintSuggester,
    k: usize,
    match_cap: u64,
) -> Result<Extraction, ExtractionError> {
    let subgraph = g.k_hop_subgraph(&linked.ids, k.max(1))?;
    extract_in(q, g, linked, subgraph, suggester, match_cap)
}

/// [`extract`] over an already induced subgraph.
pub fn extract_in(
    q: &NLQuery,
    g: &Graph,
    linked: LinkedEntities,
    subgraph: Graph,
    suggester: &dyn ConstraintSuggester,
    match_cap: u64,
) -> Result<Extraction, ExtractionError> {
    let candidates = parameterize_triples(&subgraph, &linked);
    let suggestion = suggester.suggest(q, &subgraph, &candidates);
    let mut raw = suggestion.selected;
    for c in suggestion.inject {
        if !raw.contains(&c) {
            raw.push(c);
        }
    }
    let table = score(g, &normalize(&raw)?, match_cap)?;
    let answer = suggestion.answer.unwrap_or_else(|| infer_answer(&table));
    Ok(Extraction {
        linked,
        subgraph,
        candidates,
        table,
        answer,
    })
}

pub fn build_ctable(
    q: &NLQuery,
    g: &Graph,
    linker: &dyn EntityLinker,
    suggester: &dyn ConstraintSuggester,
    k: usize,
    match_cap: u64,
) -> Result<CTable, ExtractionError> {
    let linked = linker.link(q, g);
    extract(q, g, linked, suggester, k, match_cap).map(|e| e.table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctable::{ConstraintId, DEFAULT_MATCH_CAP};
    use crate::fixtures;
    use crate::graph::Triple;
    use crate::literal::Literal;
    use alloc::vec;

    fn dict() -> MentionDict {
        serde_json::from_str(fixtures::OLYMPIC_DICT).unwrap()
    }

    #[test]
    fn links_olympic_question() {
        let g = fixtures::olympic_graph();
        let l = link_entities(&NLQuery::new(fixtures::OLYMPIC_QUESTION), &g, &dict());
        assert_eq!(l.ids, fixtures::entity_ids(&["OlympicGames", "USA"]));
        assert_eq!(l.mentions[0].surface, "USA");
    }

    #[test]
    fn longest_match_and_boundaries() {
        let mut g = Graph::new();
        g.add_entity("NYC", ["City"]);
        g.add_entity("NY", ["State"]);
        g.add_entity("York", ["City"]);
        let d: MentionDict = [("new york city", "NYC"), ("new york", "NY"), ("york", "York")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let l = link_entities(&NLQuery::new("Flights to New York City from Yorkshire"), &g, &d);
        assert_eq!(l.ids, fixtures::entity_ids(&["NYC"]));
        assert!(link_entities(&NLQuery::new("nothing here"), &g, &d).ids.is_empty());
    }

    #[test]
    fn tokenizer_stems() {
        let t = tokens("Which cities hosted the Olympics?");
        assert!(t.contains("city") && t.contains("host") && t.contains("olympic"));
        assert!(tokens("OlympicGames").contains("game"));
        assert!(tokens("instance_of").contains("instance"));
    }

    #[test]
    fn parameterize_groups_templates() {
        let g = fixtures::olympic_graph();
        let seeds = fixtures::entity_ids(&["StLouis", "LakePlacid"]);
        let sub = g.k_hop_subgraph(&seeds, 1).unwrap();
        let hosted: Vec<Constraint> = parameterize_triples(&sub, &LinkedEntities::default())
            .into_iter()
            .filter(|c| matches!(c, Constraint::Triple(t) if t.predicate == Predicate::Label("hosted".into())))
            .collect();
        assert_eq!(hosted.len(), 1);
        let Constraint::Triple(t) = &hosted[0] else { unreachable!() };
        assert!(matches!((&t.subject, &t.object), (Term::Var(_), Term::Var(_))));
        assert_eq!((t.subject_type.as_deref(), t.object_type.as_deref()), (Some("City"), Some("OlympicGames")));

        let linked = LinkedEntities::from_ids(["USA"]);
        let sub = g.k_hop_subgraph(&linked.ids, 1).unwrap();
        let cs = parameterize_triples(&sub, &linked);
        assert!(cs.contains(&Constraint::Triple(
            TriplePattern::new(Term::var("x0"), "country", Term::entity("USA")).typed(Some("City"), None)
        )));
        assert!(parameterize_triples(&Graph::new(), &linked).is_empty());
    }

    #[test]
    fn literal_triples_become_filters() {
        let mut g = Graph::new();
        g.add_entity("a", ["T"]);
        g.add_triple(Triple {
            subject: "a".into(),
            predicate: "size".into(),
            object: Value::Literal(Literal::Int(3)),
        })
        .unwrap();
        let cs = parameterize_triples(&g, &LinkedEntities::default());
        assert_eq!(cs, vec![Constraint::Value(ValueConstraint::new("x0", "size", CompareOp::Eq, Literal::Int(3)))]);
    }

    fn scripted() -> ScriptedSuggester {
        let entry = ScriptedEntry {
            select: vec![],
            inject: fixtures::olympic_constraints(),
            answer: Some(AnswerSpec { var: "c".into(), ty: Some("City".into()) }),
        };
        ScriptedSuggester::new([("olympic".to_string(), entry)].into_iter().collect())
    }

    #[test]
    fn olympic_table_from_scripted_suggester() {
        let g = fixtures::olympic_graph();
        let q = NLQuery::with_id("olympic", fixtures::OLYMPIC_QUESTION);
        let t = build_ctable(&q, &g, &DictionaryLinker::new(dict()), &scripted(), DEFAULT_K, DEFAULT_MATCH_CAP).unwrap();
        assert_eq!(t.ids(), (1..=5).map(ConstraintId).collect());
        let raw: Vec<Constraint> = t.constraints.iter().map(|c| c.constraint.clone()).collect();
        assert_eq!(raw, fixtures::olympic_constraints());
        let again = build_ctable(&q, &g, &DictionaryLinker::new(dict()), &scripted(), DEFAULT_K, DEFAULT_MATCH_CAP).unwrap();
        assert_eq!(serde_json::to_string(&t).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn degenerate_suggestions() {
        let g = fixtures::olympic_graph();
        let q = NLQuery::with_id("other", fixtures::OLYMPIC_QUESTION);
        let r = build_ctable(&q, &g, &DictionaryLinker::new(dict()), &scripted(), 2, DEFAULT_MATCH_CAP);
        assert_eq!(r, Err(ExtractionError::Table(CTableError::EmptyAfterPruning)));

        let mut s = scripted();
        let zero = Constraint::Value(ValueConstraint::new("e", "type", CompareOp::Eq, Literal::str("Spring")));
        s.entries.get_mut("olympic").unwrap().inject.push(zero.clone());
        let q = NLQuery::with_id("olympic", fixtures::OLYMPIC_QUESTION);
        let t = build_ctable(&q, &g, &DictionaryLinker::new(dict()), &s, 2, DEFAULT_MATCH_CAP).unwrap();
        assert_eq!(t.len(), 5);
        assert!(t.constraints.iter().all(|c| c.constraint != zero));
    }

    #[test]
    fn keyword_suggester_keeps_relevant_templates() {
        let g = fixtures::olympic_graph();
        let q = NLQuery::new(fixtures::OLYMPIC_QUESTION);
        let linked = link_entities(&q, &g, &dict());
        let e = extract(&q, &g, linked.clone(), &KeywordSuggester, 2, DEFAULT_MATCH_CAP).unwrap();
        assert_eq!(e.answer.ty.as_deref(), Some("City"));
        // constants come only from the linked entities
        for sc in &e.table.constraints {
            if let Constraint::Triple(t) = &sc.constraint {
                for term in [&t.subject, &t.object] {
                    if let Term::Entity(id) = term {
                        assert!(linked.ids.contains(id));
                    }
                }
            }
        }
        assert!(e.table.constraints.iter().any(|c| matches!(&c.constraint,
            Constraint::Triple(t) if t.predicate == Predicate::Label("hosted".into()))));
    }
}
