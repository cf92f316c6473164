//! The constraint table (CTable): constraint variants, monotone-core
//! normalization, match-count scoring and persistent add/remove.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::eval::count_matches;
use crate::graph::Graph;
use crate::literal::{CompareOp, Literal};

/// Default match cap used when normalising match counts.
pub const DEFAULT_MATCH_CAP: u64 = 10_000;

/// Longest bounded path accepted by the IR.
pub const MAX_PATH_LEN: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CTableError {
    #[error("constraint {id}: {reason}")]
    MalformedConstraint { id: usize, reason: String },
    #[error("every constraint has zero matches")]
    EmptyAfterPruning,
    #[error("unknown constraint {0}")]
    UnknownConstraint(ConstraintId),
    #[error("constraint {0} already present")]
    DuplicateConstraint(ConstraintId),
}

/// Stable identifier: 1-based position in extraction order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConstraintId(pub u32);

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

pub fn is_var_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Subject/object position of a pattern.
///
/// JSON form: `"?x"` for a variable, a bare string for an entity id, and a
/// tagged literal object (`{"str": "USA"}`) for a literal constant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Var(String),
    Entity(String),
    Lit(Literal),
}

impl Term {
    pub fn var(name: &str) -> Self {
        Term::Var(name.to_string())
    }

    pub fn entity(id: &str) -> Self {
        Term::Entity(id.to_string())
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "?{v}"),
            Term::Entity(id) => f.write_str(id),
            Term::Lit(l) => f.write_str(&l.to_tagged()),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TermRepr {
    Name(String),
    Lit(Literal),
}

impl Serialize for Term {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Term::Var(v) => s.serialize_str(&format!("?{v}")),
            Term::Entity(id) => s.serialize_str(id),
            Term::Lit(l) => l.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match TermRepr::deserialize(d)? {
            TermRepr::Name(n) => match n.strip_prefix('?') {
                Some(v) => Term::Var(v.to_string()),
                None => Term::Entity(n),
            },
            TermRepr::Lit(l) => Term::Lit(l),
        })
    }
}

/// Relation label or predicate variable (`"?p"` in JSON).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Predicate {
    Label(String),
    Var(String),
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Label(l) => f.write_str(l),
            Predicate::Var(v) => write!(f, "?{v}"),
        }
    }
}

impl Serialize for Predicate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Predicate::Label(l) => s.serialize_str(l),
            Predicate::Var(v) => s.serialize_str(&format!("?{v}")),
        }
    }
}

impl<'de> Deserialize<'de> for Predicate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(match s.strip_prefix('?') {
            Some(v) => Predicate::Var(v.to_string()),
            None => Predicate::Label(s),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TriplePattern {
    pub subject: Term,
    pub predicate: Predicate,
    pub object: Term,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_type: Option<String>,
}

impl TriplePattern {
    pub fn new(subject: Term, predicate: &str, object: Term) -> Self {
        TriplePattern {
            subject,
            predicate: Predicate::Label(predicate.to_string()),
            object,
            subject_type: None,
            object_type: None,
        }
    }

    pub fn typed(mut self, subject_type: Option<&str>, object_type: Option<&str>) -> Self {
        self.subject_type = subject_type.map(str::to_string);
        self.object_type = object_type.map(str::to_string);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ValueConstraint {
    pub anchor: String,
    pub property: String,
    pub op: CompareOp,
    pub value: Literal,
}

impl ValueConstraint {
    pub fn new(anchor: &str, property: &str, op: CompareOp, value: Literal) -> Self {
        ValueConstraint {
            anchor: anchor.to_string(),
            property: property.to_string(),
            op,
            value,
        }
    }
}

/// Existence of a directed `predicate` path of length `1..=max_len`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BoundedPath {
    pub subject: Term,
    pub predicate: String,
    pub object: Term,
    pub max_len: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CardinalityMode {
    AtMost,
    Exactly,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OrderSpec {
    pub var: String,
    pub property: String,
    #[serde(default)]
    pub descending: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AggregateSpec {
    pub function: String,
}

/// One row of a constraint table.
///
/// `Optional` and `Union` only appear in raw extraction output; normalization
/// rewrites them into branches. `Negation`, `Cardinality`, `Aggregate` and
/// `OrderLimit` are non-monotone and always deferred to post-validation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    Triple(TriplePattern),
    Value(ValueConstraint),
    Path(BoundedPath),
    Optional { constraints: Vec<Constraint> },
    Union { branches: Vec<Vec<Constraint>> },
    Negation { inner: Box<Constraint> },
    Cardinality { mode: CardinalityMode, k: usize },
    Aggregate(AggregateSpec),
    OrderLimit(OrderSpec),
}

impl Constraint {
    pub fn is_monotone(&self) -> bool {
        matches!(self, Constraint::Triple(_) | Constraint::Value(_) | Constraint::Path(_))
    }

    pub fn is_deferred(&self) -> bool {
        matches!(
            self,
            Constraint::Negation { .. }
                | Constraint::Cardinality { .. }
                | Constraint::Aggregate(_)
                | Constraint::OrderLimit(_)
        )
    }

    pub fn kind(&self) -> ConstraintKind {
        match self {
            Constraint::Triple(_) => ConstraintKind::Triple,
            Constraint::Value(_) => ConstraintKind::Value,
            Constraint::Path(_) => ConstraintKind::Path,
            Constraint::Optional { .. } => ConstraintKind::Optional,
            Constraint::Union { .. } => ConstraintKind::Union,
            Constraint::Negation { .. } => ConstraintKind::Negation,
            Constraint::Cardinality { .. } => ConstraintKind::Cardinality,
            Constraint::Aggregate(_) => ConstraintKind::Aggregate,
            Constraint::OrderLimit(_) => ConstraintKind::OrderLimit,
        }
    }

    /// Variables mentioned by a monotone constraint.
    pub fn variables(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        match self {
            Constraint::Triple(t) => {
                out.extend(t.subject.as_var());
                if let Predicate::Var(v) = &t.predicate {
                    out.insert(v.as_str());
                }
                out.extend(t.object.as_var());
            }
            Constraint::Value(v) => {
                out.insert(v.anchor.as_str());
            }
            Constraint::Path(p) => {
                out.extend(p.subject.as_var());
                out.extend(p.object.as_var());
            }
            Constraint::Negation { inner } => out.extend(inner.variables()),
            _ => {}
        }
        out
    }

    fn validate(&self, id: usize) -> Result<(), CTableError> {
        let bad = |reason: String| Err(CTableError::MalformedConstraint { id, reason });
        let check_term = |t: &Term| -> Result<(), CTableError> {
            match t {
                Term::Var(v) if !is_var_name(v) => bad(format!("invalid variable name {v:?}")),
                Term::Entity(e) if e.is_empty() => bad("empty entity id".into()),
                _ => Ok(()),
            }
        };
        match self {
            Constraint::Triple(t) => {
                check_term(&t.subject)?;
                check_term(&t.object)?;
                match &t.predicate {
                    Predicate::Label(l) if l.is_empty() => bad("empty predicate".into()),
                    Predicate::Var(v) if !is_var_name(v) => bad(format!("invalid variable name {v:?}")),
                    _ => Ok(()),
                }
            }
            Constraint::Value(v) => {
                if !is_var_name(&v.anchor) {
                    return bad(format!("invalid anchor variable {:?}", v.anchor));
                }
                if v.property.is_empty() {
                    return bad("empty property name".into());
                }
                Ok(())
            }
            Constraint::Path(p) => {
                check_term(&p.subject)?;
                check_term(&p.object)?;
                if p.predicate.is_empty() {
                    return bad("empty predicate".into());
                }
                if p.max_len == 0 || p.max_len > MAX_PATH_LEN {
                    return bad(format!("path bound {} outside 1..={MAX_PATH_LEN}", p.max_len));
                }
                Ok(())
            }
            Constraint::Optional { constraints } => {
                if constraints.is_empty() {
                    return bad("empty OPTIONAL block".into());
                }
                constraints.iter().try_for_each(|c| c.validate(id))
            }
            Constraint::Union { branches } => {
                if branches.is_empty() {
                    return bad("UNION without branches".into());
                }
                branches.iter().flatten().try_for_each(|c| c.validate(id))
            }
            Constraint::Negation { inner } => {
                if !inner.is_monotone() {
                    return bad("negation must wrap a monotone atom".into());
                }
                inner.validate(id)
            }
            Constraint::OrderLimit(o) => {
                if !is_var_name(&o.var) {
                    return bad(format!("invalid order variable {:?}", o.var));
                }
                Ok(())
            }
            Constraint::Cardinality { .. } | Constraint::Aggregate(_) => Ok(()),
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn node(f: &mut fmt::Formatter<'_>, t: &Term, ty: &Option<String>) -> fmt::Result {
            match ty {
                Some(ty) => write!(f, "({t}:{ty})"),
                None => write!(f, "({t})"),
            }
        }
        match self {
            Constraint::Triple(t) => {
                node(f, &t.subject, &t.subject_type)?;
                write!(f, "-[{}]->", t.predicate)?;
                node(f, &t.object, &t.object_type)
            }
            Constraint::Value(v) => write!(f, "?{}.{} {} {}", v.anchor, v.property, v.op.symbol(), v.value.to_tagged()),
            Constraint::Path(p) => write!(f, "({})-[{}*1..{}]->({})", p.subject, p.predicate, p.max_len, p.object),
            Constraint::Optional { constraints } => {
                f.write_str("OPTIONAL {")?;
                for (i, c) in constraints.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str("}")
            }
            Constraint::Union { branches } => write!(f, "UNION of {} branches", branches.len()),
            Constraint::Negation { inner } => write!(f, "NOT {inner}"),
            Constraint::Cardinality { mode, k } => match mode {
                CardinalityMode::AtMost => write!(f, "at most {k}"),
                CardinalityMode::Exactly => write!(f, "exactly {k}"),
            },
            Constraint::Aggregate(a) => write!(f, "aggregate {}", a.function),
            Constraint::OrderLimit(o) => {
                write!(f, "order by ?{}.{} {}", o.var, o.property, if o.descending { "desc" } else { "asc" })?;
                if let Some(l) = o.limit {
                    write!(f, " limit {l}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Triple,
    Value,
    Path,
    Optional,
    Union,
    Negation,
    Cardinality,
    Aggregate,
    OrderLimit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredConstraint {
    pub id: ConstraintId,
    #[serde(flatten)]
    pub constraint: Constraint,
    pub n: u64,
    pub u: f64,
}

impl ScoredConstraint {
    pub fn unscored(id: ConstraintId, constraint: Constraint) -> Self {
        ScoredConstraint { id, constraint, n: 0, u: 0.0 }
    }
}

impl PartialEq for ScoredConstraint {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.constraint == other.constraint
            && self.n == other.n
            && self.u.to_bits() == other.u.to_bits()
    }
}

/// A normalized constraint table. Values are immutable; every operation
/// returns a new table.
///
/// `branches` lists the UNION branches as sets of constraint ids. A
/// constraint shared by several branches (the common part of an OPTIONAL
/// rewrite) appears in each of them. `m` is the match-count normalizer and
/// is 0 until the table has been scored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CTable {
    pub constraints: Vec<ScoredConstraint>,
    pub branches: Vec<Vec<ConstraintId>>,
    pub deferred: Vec<Constraint>,
    pub m: u64,
}

impl Default for CTable {
    fn default() -> Self {
        CTable {
            constraints: Vec::new(),
            branches: vec![Vec::new()],
            deferred: Vec::new(),
            m: 0,
        }
    }
}

/// Equality ignores the order of constraints and of branches.
impl PartialEq for CTable {
    fn eq(&self, other: &Self) -> bool {
        let mine: BTreeMap<ConstraintId, &ScoredConstraint> = self.constraints.iter().map(|c| (c.id, c)).collect();
        let theirs: BTreeMap<ConstraintId, &ScoredConstraint> = other.constraints.iter().map(|c| (c.id, c)).collect();
        let branch_set = |t: &CTable| -> BTreeSet<BTreeSet<ConstraintId>> {
            t.branches.iter().map(|b| b.iter().copied().collect()).collect()
        };
        mine == theirs && branch_set(self) == branch_set(other) && self.deferred == other.deferred && self.m == other.m
    }
}

impl CTable {
    /// A single-branch table from already monotone constraints, numbered
    /// from 1 in order.
    pub fn from_monotone(constraints: Vec<Constraint>) -> Result<CTable, CTableError> {
        normalize(&constraints)
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn ids(&self) -> BTreeSet<ConstraintId> {
        self.constraints.iter().map(|c| c.id).collect()
    }

    pub fn get(&self, id: ConstraintId) -> Option<&ScoredConstraint> {
        self.constraints.iter().find(|c| c.id == id)
    }

    pub fn is_scored(&self) -> bool {
        self.m > 0
    }

    /// Constraints of one branch, ascending by id.
    pub fn branch(&self, idx: usize) -> Vec<&ScoredConstraint> {
        let mut out: Vec<&ScoredConstraint> = self.branches[idx]
            .iter()
            .filter_map(|id| self.get(*id))
            .collect();
        out.sort_by_key(|c| c.id);
        out
    }

    /// Keeps only `keep`, preserving branch structure (branches may become
    /// empty, which relaxes them to a type-only match).
    pub fn restrict(&self, keep: &BTreeSet<ConstraintId>) -> CTable {
        CTable {
            constraints: self
                .constraints
                .iter()
                .filter(|c| keep.contains(&c.id))
                .cloned()
                .collect(),
            branches: self
                .branches
                .iter()
                .map(|b| b.iter().copied().filter(|id| keep.contains(id)).collect())
                .collect(),
            deferred: self.deferred.clone(),
            m: self.m,
        }
    }

    pub fn remove(&self, id: ConstraintId) -> Result<CTable, CTableError> {
        if self.get(id).is_none() {
            return Err(CTableError::UnknownConstraint(id));
        }
        let mut keep = self.ids();
        keep.remove(&id);
        Ok(self.restrict(&keep))
    }

    /// Adds a constraint to every branch.
    pub fn add(&self, sc: ScoredConstraint) -> Result<CTable, CTableError> {
        let all: Vec<usize> = (0..self.branches.len()).collect();
        self.add_to_branches(sc, &all)
    }

    pub fn add_to_branches(&self, sc: ScoredConstraint, branches: &[usize]) -> Result<CTable, CTableError> {
        if self.get(sc.id).is_some() {
            return Err(CTableError::DuplicateConstraint(sc.id));
        }
        if !sc.constraint.is_monotone() {
            return Err(CTableError::MalformedConstraint {
                id: sc.id.0 as usize,
                reason: "only monotone constraints belong to the core".into(),
            });
        }
        let mut out = self.clone();
        if out.branches.is_empty() {
            out.branches.push(Vec::new());
        }
        for &b in branches {
            if let Some(branch) = out.branches.get_mut(b) {
                branch.push(sc.id);
                branch.sort();
            }
        }
        out.constraints.push(sc);
        out.constraints.sort_by_key(|c| c.id);
        Ok(out)
    }

    /// Raw constraint list that normalizes back to an equivalent table.
    pub fn to_raw(&self) -> Vec<Constraint> {
        let mut raw = Vec::new();
        let sets: Vec<BTreeSet<ConstraintId>> = self.branches.iter().map(|b| b.iter().copied().collect()).collect();
        let common: BTreeSet<ConstraintId> = match sets.split_first() {
            Some((first, rest)) => rest.iter().fold(first.clone(), |acc, s| acc.intersection(s).copied().collect()),
            None => BTreeSet::new(),
        };
        for id in &common {
            raw.push(self.get(*id).expect("branch id present").constraint.clone());
        }
        if sets.len() > 1 {
            let branches = sets
                .iter()
                .map(|s| {
                    s.difference(&common)
                        .map(|id| self.get(*id).expect("branch id present").constraint.clone())
                        .collect()
                })
                .collect();
            raw.push(Constraint::Union { branches });
        }
        raw.extend(self.deferred.iter().cloned());
        raw
    }

    /// Same branch contents and deferred list, ignoring id numbering.
    pub fn equivalent(&self, other: &CTable) -> bool {
        let contents = |t: &CTable| -> BTreeSet<BTreeSet<Constraint>> {
            t.branches
                .iter()
                .map(|b| b.iter().filter_map(|id| t.get(*id)).map(|c| c.constraint.clone()).collect())
                .collect()
        };
        contents(self) == contents(other) && self.deferred == other.deferred
    }

    /// Markdown table with columns ID | subject | predicate | object | filter.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| ID | subject | predicate | object | filter |\n|---|---|---|---|---|\n");
        let node = |t: &Term, ty: &Option<String>| match ty {
            Some(ty) => format!("{t}:{ty}"),
            None => t.to_string(),
        };
        for sc in &self.constraints {
            let row = match &sc.constraint {
                Constraint::Triple(t) => [
                    node(&t.subject, &t.subject_type),
                    t.predicate.to_string(),
                    node(&t.object, &t.object_type),
                    String::new(),
                ],
                Constraint::Value(v) => [
                    format!("?{}", v.anchor),
                    v.property.clone(),
                    String::new(),
                    format!("{} {}", v.op.symbol(), v.value.to_tagged()),
                ],
                Constraint::Path(p) => [
                    p.subject.to_string(),
                    format!("{}*1..{}", p.predicate, p.max_len),
                    p.object.to_string(),
                    String::new(),
                ],
                other => [String::new(), String::new(), String::new(), other.to_string()],
            };
            out.push_str(&format!("| {} | {} | {} | {} | {} |\n", sc.id, row[0], row[1], row[2], row[3]));
        }
        for (i, d) in self.deferred.iter().enumerate() {
            out.push_str(&format!("| d{} |  |  |  | {} |\n", i + 1, d));
        }
        out
    }
}

type Alternative = Vec<Constraint>;

fn expand(items: &[Constraint], alternatives: Vec<Alternative>, deferred: &mut Vec<Constraint>) -> Vec<Alternative> {
    let mut alts = alternatives;
    for item in items {
        match item {
            c if c.is_monotone() => {
                for alt in &mut alts {
                    if !alt.contains(c) {
                        alt.push(c.clone());
                    }
                }
            }
            Constraint::Optional { constraints } => {
                let with = expand(constraints, alts.clone(), deferred);
                let mut next = with;
                for alt in alts {
                    if !next.contains(&alt) {
                        next.push(alt);
                    }
                }
                alts = next;
            }
            Constraint::Union { branches } => {
                let mut next = Vec::new();
                for branch in branches {
                    for alt in expand(branch, alts.clone(), deferred) {
                        if !next.contains(&alt) {
                            next.push(alt);
                        }
                    }
                }
                alts = next;
            }
            other => {
                if !deferred.contains(other) {
                    deferred.push(other.clone());
                }
            }
        }
    }
    alts
}

/// Rewrites a raw constraint list into a monotone-core table: OPTIONAL
/// blocks become a with/without branch pair, UNION stays as branches and
/// non-monotone constraints move to `deferred`. Identical atoms share one
/// id. The result is unscored.
pub fn normalize(raw: &[Constraint]) -> Result<CTable, CTableError> {
    for (i, c) in raw.iter().enumerate() {
        c.validate(i + 1)?;
    }
    let mut deferred = Vec::new();
    let alternatives = expand(raw, vec![Vec::new()], &mut deferred);

    let mut ids: BTreeMap<&Constraint, ConstraintId> = BTreeMap::new();
    let mut constraints = Vec::new();
    for alt in &alternatives {
        for c in alt {
            if !ids.contains_key(c) {
                let id = ConstraintId(constraints.len() as u32 + 1);
                ids.insert(c, id);
                constraints.push(ScoredConstraint::unscored(id, c.clone()));
            }
        }
    }
    let mut branches: Vec<Vec<ConstraintId>> = Vec::new();
    for alt in &alternatives {
        let mut b: Vec<ConstraintId> = alt.iter().map(|c| ids[c]).collect();
        b.sort();
        if !branches.contains(&b) {
            branches.push(b);
        }
    }
    Ok(CTable {
        constraints,
        branches,
        deferred,
        m: 0,
    })
}

/// Scores every constraint by its match count: `m = min(max n, cap)`,
/// `u = min(n / m, 1)`; zero-match constraints are pruned.
pub fn score(g: &Graph, table: &CTable, match_cap: u64) -> Result<CTable, CTableError> {
    let counts: Vec<u64> = table
        .constraints
        .iter()
        .map(|sc| count_matches(g, &sc.constraint) as u64)
        .collect();
    score_with_counts(table, &counts, match_cap)
}

/// The scoring arithmetic given precomputed match counts (one per
/// constraint, in table order).
pub fn score_with_counts(table: &CTable, counts: &[u64], match_cap: u64) -> Result<CTable, CTableError> {
    assert_eq!(counts.len(), table.constraints.len());
    let max_n = counts.iter().copied().max().unwrap_or(0);
    if max_n == 0 {
        return Err(CTableError::EmptyAfterPruning);
    }
    let m = max_n.min(match_cap.max(1));
    let mut kept = Vec::new();
    let mut keep_ids = BTreeSet::new();
    for (sc, &n) in table.constraints.iter().zip(counts) {
        if n == 0 {
            continue;
        }
        let u = (n as f64 / m as f64).min(1.0);
        keep_ids.insert(sc.id);
        kept.push(ScoredConstraint {
            id: sc.id,
            constraint: sc.constraint.clone(),
            n,
            u,
        });
    }
    let mut branches: Vec<Vec<ConstraintId>> = Vec::new();
    for b in &table.branches {
        let pruned: Vec<ConstraintId> = b.iter().copied().filter(|id| keep_ids.contains(id)).collect();
        // a branch emptied by pruning was unsatisfiable; drop it
        if (pruned.is_empty() && !b.is_empty()) || branches.contains(&pruned) {
            continue;
        }
        branches.push(pruned);
    }
    if branches.is_empty() {
        branches.push(Vec::new());
    }
    Ok(CTable {
        constraints: kept,
        branches,
        deferred: table.deferred.clone(),
        m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn triple(s: &str, p: &str, o: &str) -> Constraint {
        Constraint::Triple(TriplePattern::new(Term::var(s), p, Term::var(o)))
    }

    #[test]
    fn negation_is_deferred() {
        let a = triple("c", "hosted", "e");
        let b = triple("c", "boycotted", "e");
        let t = normalize(&[a.clone(), Constraint::Negation { inner: Box::new(b.clone()) }]).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.constraints[0].constraint, a);
        assert_eq!(t.deferred, vec![Constraint::Negation { inner: Box::new(b) }]);
    }

    #[test]
    fn optional_becomes_two_branches() {
        let a = triple("c", "hosted", "e");
        let b = triple("c", "country", "k");
        let t = normalize(&[a.clone(), Constraint::Optional { constraints: vec![b.clone()] }]).unwrap();
        let contents: BTreeSet<BTreeSet<Constraint>> = t
            .branches
            .iter()
            .map(|br| br.iter().map(|id| t.get(*id).unwrap().constraint.clone()).collect())
            .collect();
        let expected: BTreeSet<BTreeSet<Constraint>> = [
            [a.clone(), b.clone()].into_iter().collect(),
            [a.clone()].into_iter().collect(),
        ]
        .into_iter()
        .collect();
        assert_eq!(contents, expected);
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn union_keeps_branches() {
        let a = triple("c", "hosted", "e");
        let b = triple("c", "bid_for", "e");
        let t = normalize(&[Constraint::Union { branches: vec![vec![a], vec![b]] }]).unwrap();
        assert_eq!(t.branches, vec![vec![ConstraintId(1)], vec![ConstraintId(2)]]);
    }

    #[test]
    fn monotone_list_unchanged_and_idempotent() {
        let raw = fixtures::olympic_constraints();
        let t = normalize(&raw).unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!(t.branches.len(), 1);
        let again = normalize(&t.to_raw()).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn malformed_constraints_rejected() {
        let bad = Constraint::Triple(TriplePattern::new(Term::var("Bad"), "p", Term::var("x")));
        assert!(matches!(normalize(&[bad]), Err(CTableError::MalformedConstraint { id: 1, .. })));
        let path = Constraint::Path(BoundedPath {
            subject: Term::var("a"),
            predicate: "next".into(),
            object: Term::var("b"),
            max_len: 4,
        });
        assert!(normalize(&[path]).is_err());
        assert!(normalize(&[Constraint::Optional { constraints: vec![] }]).is_err());
    }

    #[test]
    fn scoring_formula_examples() {
        let raw = vec![triple("a", "p", "b"), triple("a", "q", "b"), triple("a", "r", "b")];
        let t = normalize(&raw).unwrap();
        let s = score_with_counts(&t, &[10, 5, 0], 100).unwrap();
        assert_eq!(s.m, 10);
        assert_eq!(s.constraints.iter().map(|c| c.u).collect::<Vec<_>>(), vec![1.0, 0.5]);
        assert_eq!(s.branches, vec![vec![ConstraintId(1), ConstraintId(2)]]);

        let t2 = normalize(&raw[..2]).unwrap();
        let s2 = score_with_counts(&t2, &[200, 50], 100).unwrap();
        assert_eq!(s2.m, 100);
        assert_eq!(s2.constraints.iter().map(|c| c.u).collect::<Vec<_>>(), vec![1.0, 0.5]);

        assert_eq!(score_with_counts(&t2, &[0, 0], 100), Err(CTableError::EmptyAfterPruning));
        assert_eq!(score_with_counts(&CTable::default(), &[], 100), Err(CTableError::EmptyAfterPruning));
    }

    #[test]
    fn olympic_scores_order_season_filters() {
        let g = fixtures::olympic_graph();
        let t = score(&g, &normalize(&fixtures::olympic_constraints()).unwrap(), DEFAULT_MATCH_CAP).unwrap();
        let n: Vec<u64> = t.constraints.iter().map(|c| c.n).collect();
        assert_eq!(n, vec![9, 14, 10, 5, 6]);
        assert_eq!(t.m, 14);
        let u = |i: usize| t.constraints[i].u;
        assert!(u(3) < u(4), "winter must be more specific than summer");
        assert!(u(4) < u(0) && u(4) < u(1) && u(4) < u(2));
    }

    #[test]
    fn remove_and_add_are_inverse() {
        let g = fixtures::olympic_graph();
        let t = score(&g, &normalize(&fixtures::olympic_constraints()).unwrap(), DEFAULT_MATCH_CAP).unwrap();
        let season = t.get(ConstraintId(4)).unwrap().clone();
        let removed = t.remove(ConstraintId(4)).unwrap();
        assert_eq!(removed.len(), 4);
        assert_eq!(t.len(), 5, "original untouched");
        assert_eq!(removed.add(season.clone()).unwrap(), t);
        assert_eq!(t.remove(ConstraintId(9)), Err(CTableError::UnknownConstraint(ConstraintId(9))));
        assert_eq!(t.add(season), Err(CTableError::DuplicateConstraint(ConstraintId(4))));

        let single = normalize(&[triple("a", "p", "b")]).unwrap();
        let empty = single.remove(ConstraintId(1)).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.branches, vec![Vec::<ConstraintId>::new()]);
    }

    #[test]
    fn json_shape() {
        let t = normalize(&fixtures::olympic_constraints()).unwrap();
        let v = serde_json::to_value(&t).unwrap();
        let first = &v["constraints"][0];
        assert_eq!(first["id"], 1);
        assert_eq!(first["kind"], "triple");
        assert_eq!(first["subject"], "?c");
        assert_eq!(first["subject_type"], "City");
        assert!(v.get("branches").is_some() && v.get("deferred").is_some() && v.get("m").is_some());
        let second = &v["constraints"][1];
        assert_eq!(second["kind"], "value");
        assert_eq!(second["op"], "=");
        let back: CTable = serde_json::from_value(v).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn markdown_has_header_and_rows() {
        let t = normalize(&fixtures::olympic_constraints()).unwrap();
        let md = t.to_markdown();
        assert!(md.starts_with("| ID | subject | predicate | object | filter |"));
        assert!(md.contains("| c1 | ?c:City | hosted | ?e:OlympicGames |  |"));
        assert!(md.contains("| c2 | ?c | country |  | = \"USA\" |"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn atom() -> impl Strategy<Value = Constraint> {
            (0..3usize, 0..3usize, 0..3usize).prop_map(|(s, p, o)| {
                let vars = ["a", "b", "c"];
                let preds = ["p", "q", "r"];
                triple(vars[s], preds[p], vars[o])
            })
        }

        fn raw_item() -> impl Strategy<Value = Constraint> {
            prop_oneof![
                4 => atom(),
                1 => proptest::collection::vec(atom(), 1..3).prop_map(|cs| Constraint::Optional { constraints: cs }),
                1 => proptest::collection::vec(proptest::collection::vec(atom(), 1..3), 1..3)
                    .prop_map(|bs| Constraint::Union { branches: bs }),
                1 => atom().prop_map(|a| Constraint::Negation { inner: Box::new(a) }),
            ]
        }

        proptest! {
            #[test]
            fn normalize_is_idempotent(raw in proptest::collection::vec(raw_item(), 0..6)) {
                let once = normalize(&raw).unwrap();
                let twice = normalize(&once.to_raw()).unwrap();
                prop_assert!(twice.equivalent(&once));
                prop_assert!(once.constraints.iter().all(|c| c.constraint.is_monotone()));
                prop_assert!(once.deferred.iter().all(|c| c.is_deferred()));
                let covered: BTreeSet<ConstraintId> = once.branches.iter().flatten().copied().collect();
                prop_assert_eq!(covered, once.ids());
            }

            #[test]
            fn scores_in_unit_interval(counts in proptest::collection::vec(0u64..500, 1..7), cap in 1u64..300) {
                let raw: Vec<Constraint> = (0..counts.len()).map(|i| triple("a", &format!("p{i}"), "b")).collect();
                let t = normalize(&raw).unwrap();
                match score_with_counts(&t, &counts, cap) {
                    Ok(s) => {
                        prop_assert!(s.constraints.iter().all(|c| c.u > 0.0 && c.u <= 1.0));
                        let max_n = *counts.iter().max().unwrap();
                        if max_n <= cap {
                            let top = s.constraints.iter().map(|c| c.u).fold(0.0, f64::max);
                            prop_assert_eq!(top, 1.0);
                        }
                    }
                    Err(e) => {
                        prop_assert_eq!(e, CTableError::EmptyAfterPruning);
                        prop_assert!(counts.iter().all(|&n| n == 0));
                    }
                }
            }
        }
    }
}
