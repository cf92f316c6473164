//! Plan to query text: Cypher and SPARQL emitters driven by a mapping set,
//! plus answer-validated fallback generation for unmapped constraints.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctable::{BoundedPath, Constraint, ConstraintId, ConstraintKind, Predicate, Term, TriplePattern, ValueConstraint};
use crate::eval::{evaluate, EvalError};
use crate::graph::Graph;
use crate::literal::{decimal_text, CompareOp, Literal};
use crate::plan::QueryPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    #[default]
    Cypher,
    Sparql,
}

/// How entity ids and predicates are spelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdStyle {
    /// `({id: 'USA'})` and `[:hosted]`.
    #[default]
    Plain,
    /// ``({`~id`: "USA"})`` and ``[:`hosted`]``.
    Url,
}

/// Per-kind templates. Placeholders: `{subject}`, `{predicate}`,
/// `{object}`, `{max}`, `{anchor}`, `{property}`, `{op}`, `{value}`.
/// A `triple:<predicate>` key overrides the triple template for one
/// predicate. Kinds without a template are unmapped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingSet {
    pub templates: BTreeMap<String, String>,
}

impl MappingSet {
    pub fn cypher() -> Self {
        MappingSet {
            templates: [
                ("triple", "{subject}-[{predicate}]->{object}"),
                ("path", "{subject}-[{predicate}*1..{max}]->{object}"),
                ("value", "{anchor}.{property} {op} {value}"),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
        }
    }

    pub fn sparql() -> Self {
        MappingSet {
            templates: [
                ("triple", "{subject} {predicate} {object} ."),
                ("path", "{subject} {predicate} {object} ."),
                ("value", "{anchor} {property} {var} . FILTER({var} {op} {value})"),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
        }
    }

    fn template(&self, c: &Constraint) -> Option<&str> {
        let kind = match c {
            Constraint::Triple(t) => {
                if let Predicate::Label(p) = &t.predicate {
                    if let Some(tpl) = self.templates.get(&format!("triple:{p}")) {
                        return Some(tpl);
                    }
                }
                "triple"
            }
            Constraint::Path(_) => "path",
            Constraint::Value(_) => "value",
            _ => return None,
        };
        self.templates.get(kind).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderDialect {
    pub target: Target,
    pub id_style: IdStyle,
    pub mappings: MappingSet,
    /// Unmapped constraints go to the fallback generator instead of failing.
    #[serde(default)]
    pub fallback: bool,
}

impl RenderDialect {
    pub fn cypher(id_style: IdStyle) -> Self {
        RenderDialect {
            target: Target::Cypher,
            id_style,
            mappings: MappingSet::cypher(),
            fallback: false,
        }
    }

    pub fn sparql(id_style: IdStyle) -> Self {
        RenderDialect {
            target: Target::Sparql,
            id_style,
            mappings: MappingSet::sparql(),
            fallback: false,
        }
    }

    pub fn new(target: Target, id_style: IdStyle) -> Self {
        match target {
            Target::Cypher => Self::cypher(id_style),
            Target::Sparql => Self::sparql(id_style),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedQuery {
    pub text: String,
    pub dialect: RenderDialect,
    pub plan: QueryPlan,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("constraint {0} has no mapping in this dialect")]
    UnmappedConstraint(ConstraintId),
    #[error("fallback query rejected: {0}")]
    FallbackRejected(String),
    #[error("fallback generator failed: {0}")]
    Hook(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// A label or property name, backticked unless it is a plain identifier.
pub fn cypher_name(s: &str) -> String {
    if is_ident(s) {
        s.to_string()
    } else {
        format!("`{}`", s.replace('`', "``"))
    }
}

fn backticked(s: &str) -> String {
    format!("`{}`", s.replace('`', "``"))
}

pub fn cypher_string(s: &str) -> String {
    format!("'{}'", s.replace('\\', "\\\\").replace('\'', "''"))
}

fn double_quoted(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

pub fn cypher_literal(l: &Literal) -> String {
    match l {
        Literal::Str(s) => cypher_string(s),
        Literal::Int(i) => format!("{i}"),
        Literal::Dec(d) => decimal_text(*d),
        Literal::Bool(b) => format!("{b}"),
    }
}

pub fn cypher_op(op: CompareOp) -> &'static str {
    match op {
        CompareOp::Ne => "<>",
        other => other.symbol(),
    }
}

fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in slots {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

/// Answer-variable typing for one branch: whether a pattern in the branch
/// already types the answer variable with `ty`.
fn branch_types_answer(constraints: &[&Constraint], var: &str, ty: &str) -> bool {
    constraints.iter().any(|c| match c {
        Constraint::Triple(t) => {
            (t.subject.as_var() == Some(var) && t.subject_type.as_deref() == Some(ty))
                || (t.object.as_var() == Some(var) && t.object_type.as_deref() == Some(ty))
        }
        _ => false,
    })
}

fn pattern_vars<'a>(constraints: &[&'a Constraint]) -> BTreeSet<&'a str> {
    constraints
        .iter()
        .filter(|c| matches!(c, Constraint::Triple(_) | Constraint::Path(_)))
        .flat_map(|c| c.variables())
        .collect()
}

struct Emitter<'d> {
    dialect: &'d RenderDialect,
}

impl Emitter<'_> {
    fn cypher_node(&self, t: &Term, ty: &Option<String>) -> Option<String> {
        let label = ty.as_ref().map(|l| format!(":{}", cypher_name(l))).unwrap_or_default();
        Some(match t {
            Term::Var(v) => format!("({v}{label})"),
            Term::Entity(id) => match self.dialect.id_style {
                IdStyle::Plain => format!("({label}{}{{id: {}}})", if label.is_empty() { "" } else { " " }, cypher_string(id)),
                IdStyle::Url => format!("({label}{}{{`~id`: {}}})", if label.is_empty() { "" } else { " " }, double_quoted(id)),
            },
            Term::Lit(_) => return None,
        })
    }

    fn cypher_rel(&self, p: &str) -> String {
        match self.dialect.id_style {
            IdStyle::Plain => format!(":{}", cypher_name(p)),
            IdStyle::Url => format!(":{}", backticked(p)),
        }
    }

    fn cypher_pattern(&self, c: &Constraint, tpl: &str) -> Option<String> {
        match c {
            Constraint::Triple(t) => {
                let Predicate::Label(p) = &t.predicate else { return None };
                let s = self.cypher_node(&t.subject, &t.subject_type)?;
                let o = self.cypher_node(&t.object, &t.object_type)?;
                Some(fill(tpl, &[("subject", &s), ("predicate", &self.cypher_rel(p)), ("object", &o)]))
            }
            Constraint::Path(bp) => {
                let s = self.cypher_node(&bp.subject, &None)?;
                let o = self.cypher_node(&bp.object, &None)?;
                let max = format!("{}", bp.max_len);
                Some(fill(tpl, &[("subject", &s), ("predicate", &self.cypher_rel(&bp.predicate)), ("object", &o), ("max", &max)]))
            }
            Constraint::Value(v) => {
                let value = cypher_literal(&v.value);
                Some(fill(
                    tpl,
                    &[("anchor", &v.anchor), ("property", &cypher_name(&v.property)), ("op", cypher_op(v.op)), ("value", &value)],
                ))
            }
            _ => None,
        }
    }

    fn cypher_branch(&self, plan: &QueryPlan, idx: usize) -> Result<String, RenderError> {
        let members = plan.table.branch(idx);
        let constraints: Vec<&Constraint> = members.iter().map(|sc| &sc.constraint).collect();
        let mut matches = Vec::new();
        let mut filters = Vec::new();
        for sc in &members {
            let tpl = self.dialect.mappings.template(&sc.constraint).ok_or(RenderError::UnmappedConstraint(sc.id))?;
            let text = self.cypher_pattern(&sc.constraint, tpl).ok_or(RenderError::UnmappedConstraint(sc.id))?;
            match sc.constraint {
                Constraint::Value(_) => filters.push(text),
                _ => matches.push(text),
            }
        }
        let bound = pattern_vars(&constraints);
        let answer = plan.answer_var.as_str();
        let needs_answer_node = match &plan.answer_type {
            Some(ty) => !branch_types_answer(&constraints, answer, ty),
            None => !bound.contains(answer),
        };
        if needs_answer_node {
            let label = plan.answer_type.as_ref().map(|l| format!(":{}", cypher_name(l))).unwrap_or_default();
            matches.push(format!("({answer}{label})"));
        }
        let mut declared: BTreeSet<&str> = bound.clone();
        declared.insert(answer);
        for c in &constraints {
            if let Constraint::Value(v) = c {
                if declared.insert(v.anchor.as_str()) {
                    matches.push(format!("({})", v.anchor));
                }
            }
        }
        let mut out = String::new();
        for m in matches {
            out.push_str("MATCH ");
            out.push_str(&m);
            out.push('\n');
        }
        if !filters.is_empty() {
            out.push_str("WHERE ");
            out.push_str(&filters.join(" AND "));
            out.push('\n');
        }
        out.push_str("RETURN ");
        out.push_str(answer);
        if let Some(p) = &plan.answer_property {
            out.push('.');
            out.push_str(&cypher_name(p));
        }
        Ok(out)
    }

    fn cypher(&self, plan: &QueryPlan) -> Result<String, RenderError> {
        let mut parts = Vec::new();
        for i in 0..plan.table.branches.len().max(1) {
            if plan.table.branches.is_empty() {
                let mut p = plan.clone();
                p.table.branches.push(Vec::new());
                parts.push(self.cypher_branch(&p, 0)?);
            } else {
                parts.push(self.cypher_branch(plan, i)?);
            }
        }
        let mut out = parts.join("\nUNION\n");
        for d in &plan.table.deferred {
            out.push_str("\n// deferred: ");
            out.push_str(&serde_json::to_string(d).expect("constraints serialize"));
        }
        Ok(out)
    }

    fn sparql_term(&self, t: &Term) -> String {
        match t {
            Term::Var(v) => format!("?{v}"),
            Term::Entity(id) => self.sparql_iri(id),
            Term::Lit(l) => sparql_literal(l),
        }
    }

    fn sparql_iri(&self, name: &str) -> String {
        match self.dialect.id_style {
            IdStyle::Plain if is_ident(name) => format!("kg:{name}"),
            _ => format!("<urn:kg:{}>", iri_escape(name)),
        }
    }

    fn sparql_branch(&self, plan: &QueryPlan, idx: usize, indent: &str) -> Result<Vec<String>, RenderError> {
        let members = plan.table.branch(idx);
        let constraints: Vec<&Constraint> = members.iter().map(|sc| &sc.constraint).collect();
        let mut lines = Vec::new();
        let mut filters = Vec::new();
        for sc in &members {
            let tpl = self.dialect.mappings.template(&sc.constraint).ok_or(RenderError::UnmappedConstraint(sc.id))?;
            match &sc.constraint {
                Constraint::Triple(TriplePattern { subject, predicate, object, subject_type, object_type }) => {
                    let Predicate::Label(p) = predicate else {
                        return Err(RenderError::UnmappedConstraint(sc.id));
                    };
                    let s = self.sparql_term(subject);
                    let o = self.sparql_term(object);
                    lines.push(fill(tpl, &[("subject", &s), ("predicate", &self.sparql_iri(p)), ("object", &o)]));
                    if let Some(ty) = subject_type {
                        lines.push(format!("{s} a {} .", self.sparql_iri(ty)));
                    }
                    if let Some(ty) = object_type {
                        lines.push(format!("{o} a {} .", self.sparql_iri(ty)));
                    }
                }
                Constraint::Path(BoundedPath { subject, predicate, object, max_len }) => {
                    let step = self.sparql_iri(predicate);
                    let alternatives: Vec<String> = (1..=*max_len)
                        .map(|n| (0..n).map(|_| step.clone()).collect::<Vec<_>>().join("/"))
                        .collect();
                    let path = format!("({})", alternatives.join("|"));
                    lines.push(fill(tpl, &[("subject", &self.sparql_term(subject)), ("predicate", &path), ("object", &self.sparql_term(object))]));
                }
                Constraint::Value(ValueConstraint { anchor, property, op, value }) => {
                    let var = format!("?v{}", sc.id.0);
                    let text = fill(
                        tpl,
                        &[
                            ("anchor", &format!("?{anchor}")),
                            ("property", &self.sparql_iri(property)),
                            ("var", &var),
                            ("op", op.symbol()),
                            ("value", &sparql_literal(value)),
                        ],
                    );
                    filters.push(text);
                }
                _ => return Err(RenderError::UnmappedConstraint(sc.id)),
            }
        }
        if let Some(ty) = &plan.answer_type {
            if !branch_types_answer(&constraints, &plan.answer_var, ty) {
                lines.push(format!("?{} a {} .", plan.answer_var, self.sparql_iri(ty)));
            }
        }
        lines.extend(filters);
        if lines.is_empty() {
            lines.push(format!("?{} ?any_p ?any_o .", plan.answer_var));
        }
        Ok(lines.into_iter().map(|l| format!("{indent}{l}")).collect())
    }

    fn sparql(&self, plan: &QueryPlan) -> Result<String, RenderError> {
        let mut out = String::from("PREFIX kg: <urn:kg:>\n");
        out.push_str(&format!("SELECT DISTINCT ?{} WHERE {{\n", plan.answer_var));
        let n = plan.table.branches.len();
        if n <= 1 {
            let lines = if n == 0 {
                let mut p = plan.clone();
                p.table.branches.push(Vec::new());
                self.sparql_branch(&p, 0, "  ")?
            } else {
                self.sparql_branch(plan, 0, "  ")?
            };
            for l in lines {
                out.push_str(&l);
                out.push('\n');
            }
        } else {
            for i in 0..n {
                out.push_str(if i == 0 { "  {\n" } else { "  UNION\n  {\n" });
                for l in self.sparql_branch(plan, i, "    ")? {
                    out.push_str(&l);
                    out.push('\n');
                }
                out.push_str("  }\n");
            }
        }
        out.push('}');
        for d in &plan.table.deferred {
            out.push_str("\n# deferred: ");
            out.push_str(&serde_json::to_string(d).expect("constraints serialize"));
        }
        Ok(out)
    }
}

fn iri_escape(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() || "-._~:/".contains(c) {
            out.push(c);
        } else {
            let mut buf = [0u8; 4];
            for b in c.encode_utf8(&mut buf).bytes() {
                out.push_str(&format!("%{b:02X}"));
            }
        }
    }
    out
}

pub fn sparql_literal(l: &Literal) -> String {
    match l {
        Literal::Str(s) => double_quoted(s),
        Literal::Int(i) => format!("{i}"),
        Literal::Dec(d) => decimal_text(*d),
        Literal::Bool(b) => format!("{b}"),
    }
}

/// Ids of constraints the dialect cannot express.
pub fn unmapped(plan: &QueryPlan, dialect: &RenderDialect) -> Vec<ConstraintId> {
    let e = Emitter { dialect };
    plan.table
        .constraints
        .iter()
        .filter(|sc| {
            let Some(tpl) = dialect.mappings.template(&sc.constraint) else { return true };
            match dialect.target {
                Target::Cypher => e.cypher_pattern(&sc.constraint, tpl).is_none(),
                Target::Sparql => matches!(&sc.constraint, Constraint::Triple(t) if matches!(t.predicate, Predicate::Var(_))),
            }
        })
        .map(|sc| sc.id)
        .collect()
}

/// Deterministic rendering: one part per branch, conjuncts in constraint-id
/// order, deferred constraints as trailing comments.
pub fn render(plan: &QueryPlan, dialect: &RenderDialect) -> Result<RenderedQuery, RenderError> {
    let e = Emitter { dialect };
    let text = match dialect.target {
        Target::Cypher => e.cypher(plan)?,
        Target::Sparql => e.sparql(plan)?,
    };
    Ok(RenderedQuery {
        text,
        dialect: dialect.clone(),
        plan: plan.clone(),
    })
}

/// Produces query text for plans the mapping set cannot express.
pub trait FallbackGenerator {
    fn generate(&self, plan: &QueryPlan, unmapped: &[ConstraintId], dialect: &RenderDialect) -> Result<String, String>;
}

impl<F> FallbackGenerator for F
where
    F: Fn(&QueryPlan, &[ConstraintId], &RenderDialect) -> Result<String, String>,
{
    fn generate(&self, plan: &QueryPlan, unmapped: &[ConstraintId], dialect: &RenderDialect) -> Result<String, String> {
        self(plan, unmapped, dialect)
    }
}

/// Accepts generated text only if it parses and returns exactly the plan's
/// answers on `g`. SPARQL output cannot be executed here and is rejected.
pub fn fallback_render(
    g: &Graph,
    plan: &QueryPlan,
    unmapped: &[ConstraintId],
    dialect: &RenderDialect,
    generator: &dyn FallbackGenerator,
) -> Result<RenderedQuery, RenderError> {
    let text = generator.generate(plan, unmapped, dialect).map_err(RenderError::Hook)?;
    if dialect.target != Target::Cypher {
        return Err(RenderError::FallbackRejected("only Cypher output can be validated".into()));
    }
    let parsed = crate::cypher::parse_cypher_subset(&text)
        .map_err(|e| RenderError::FallbackRejected(format!("parse failure: {e}")))?;
    let expected = evaluate(g, plan)?.projected;
    let got = evaluate(g, &parsed)
        .map_err(|e| RenderError::FallbackRejected(format!("execution failure: {e}")))?
        .projected;
    if got != expected {
        let missing = expected.difference(&got).count();
        let extra = got.difference(&expected).count();
        return Err(RenderError::FallbackRejected(format!("{missing} answers missing, {extra} unexpected")));
    }
    Ok(RenderedQuery {
        text,
        dialect: dialect.clone(),
        plan: plan.clone(),
    })
}

/// [`render`], routing unmapped plans through `generator` when the dialect
/// allows fallback.
pub fn render_or_fallback(
    g: &Graph,
    plan: &QueryPlan,
    dialect: &RenderDialect,
    generator: Option<&dyn FallbackGenerator>,
) -> Result<RenderedQuery, RenderError> {
    match render(plan, dialect) {
        Err(RenderError::UnmappedConstraint(id)) if dialect.fallback => match generator {
            Some(gen) => {
                let mut ids = unmapped(plan, dialect);
                if ids.is_empty() {
                    ids.push(id);
                }
                fallback_render(g, plan, &ids, dialect, gen)
            }
            None => Err(RenderError::UnmappedConstraint(id)),
        },
        other => other,
    }
}

/// Collapses whitespace runs to one space; used for golden comparisons.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Kinds with a template in the mapping set.
pub fn mapped_kinds(m: &MappingSet) -> BTreeSet<ConstraintKind> {
    let mut out = BTreeSet::new();
    for (k, kind) in [("triple", ConstraintKind::Triple), ("path", ConstraintKind::Path), ("value", ConstraintKind::Value)] {
        if m.templates.contains_key(k) {
            out.insert(kind);
        }
    }
    out
}
