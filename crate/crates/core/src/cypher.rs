//! Parser for the Cypher subset the renderer emits: MATCH lines of node and
//! relationship chains, one WHERE conjunction of property filters, RETURN of
//! the answer variable, UNION between parts, `// deferred:` annotations.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::ctable::{
    is_var_name, BoundedPath, CTable, Constraint, ConstraintId, Predicate, ScoredConstraint, Term, TriplePattern,
    ValueConstraint, MAX_PATH_LEN,
};
use crate::literal::{CompareOp, Literal};
use crate::plan::QueryPlan;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {position}: expected {expected}")]
    SyntaxError { position: usize, expected: String },
}

fn err<T>(position: usize, expected: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError::SyntaxError { position, expected: expected.into() })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
    Str(String),
    Num(String),
    Sym(&'static str),
    Eof,
}

struct Lexed {
    toks: Vec<(Tok, usize)>,
    deferred: Vec<Constraint>,
}

const SYMBOLS: [&str; 19] = [
    "<>", "!=", ">=", "<=", "..", "(", ")", "[", "]", "{", "}", ":", ",", ".", "-", ">", "<", "=", "*",
];

fn lex(text: &str) -> Result<Lexed, ParseError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut deferred = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = text[i..].chars().next().expect("in bounds");
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        if text[i..].starts_with("//") {
            let end = text[i..].find('\n').map(|n| i + n).unwrap_or(text.len());
            let body = text[i + 2..end].trim();
            if let Some(json) = body.strip_prefix("deferred:") {
                match serde_json::from_str::<Constraint>(json.trim()) {
                    Ok(c) if c.is_deferred() => deferred.push(c),
                    _ => return err(i, "deferred constraint JSON"),
                }
            }
            i = end;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            toks.push((Tok::Word(text[start..i].to_string()), start));
        } else if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'-' || bytes[j] == b'+') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            toks.push((Tok::Num(text[start..i].to_string()), start));
        } else if c == '`' {
            let mut out = String::new();
            i += 1;
            loop {
                let Some(ch) = text[i..].chars().next() else { return err(start, "closing backtick") };
                i += ch.len_utf8();
                if ch == '`' {
                    if text[i..].starts_with('`') {
                        out.push('`');
                        i += 1;
                    } else {
                        break;
                    }
                } else {
                    out.push(ch);
                }
            }
            toks.push((Tok::Quoted(out), start));
        } else if c == '\'' || c == '"' {
            let mut out = String::new();
            i += 1;
            loop {
                let Some(ch) = text[i..].chars().next() else { return err(start, "closing quote") };
                i += ch.len_utf8();
                if ch == c {
                    if c == '\'' && text[i..].starts_with('\'') {
                        out.push('\'');
                        i += 1;
                    } else {
                        break;
                    }
                } else if ch == '\\' {
                    let Some(esc) = text[i..].chars().next() else { return err(start, "closing quote") };
                    i += esc.len_utf8();
                    out.push(match esc {
                        'n' => '\n',
                        't' => '\t',
                        'r' => '\r',
                        other => other,
                    });
                } else {
                    out.push(ch);
                }
            }
            toks.push((Tok::Str(out), start));
        } else {
            let Some(sym) = SYMBOLS.iter().find(|s| text[i..].starts_with(**s)) else {
                return err(start, "a token");
            };
            i += sym.len();
            toks.push((Tok::Sym(sym), start));
        }
    }
    toks.push((Tok::Eof, text.len()));
    Ok(Lexed { toks, deferred })
}

#[derive(Debug, Clone)]
struct NodePat {
    var: Option<String>,
    label: Option<String>,
    id: Option<String>,
    pos: usize,
}

impl NodePat {
    fn term(&self) -> Term {
        match (&self.var, &self.id) {
            (Some(v), _) => Term::Var(v.clone()),
            (None, Some(id)) => Term::Entity(id.clone()),
            (None, None) => unreachable!("checked at parse time"),
        }
    }
}

struct RelPat {
    predicate: String,
    hops: Option<u8>,
    forward: bool,
}

#[derive(Default)]
struct Part {
    atoms: Vec<Constraint>,
    filters: Vec<Constraint>,
    /// Standalone node patterns: (variable, label, position).
    standalone: Vec<(String, Option<String>, usize)>,
    ret_var: String,
    ret_prop: Option<String>,
    start: usize,
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    i: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].0
    }

    fn pos(&self) -> usize {
        self.toks[self.i].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.i].0.clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.at_keyword(kw) {
            self.bump();
            Ok(())
        } else {
            err(self.pos(), kw)
        }
    }

    fn at_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.at_sym(s) {
            self.bump();
            Ok(())
        } else {
            err(self.pos(), format!("'{s}'"))
        }
    }

    fn variable(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Tok::Word(w) if is_var_name(w) => {
                let w = w.clone();
                self.bump();
                Ok(w)
            }
            _ => err(self.pos(), "variable"),
        }
    }

    fn name(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Word(w) | Tok::Quoted(w) => {
                self.bump();
                Ok(w)
            }
            _ => err(self.pos(), "name"),
        }
    }

    fn node(&mut self) -> Result<NodePat, ParseError> {
        let pos = self.pos();
        self.sym("(")?;
        let var = if matches!(self.peek(), Tok::Word(_)) { Some(self.variable()?) } else { None };
        let label = if self.at_sym(":") {
            self.bump();
            Some(self.name()?)
        } else {
            None
        };
        let id = if self.at_sym("{") {
            if var.is_some() {
                return err(self.pos(), "')'");
            }
            self.bump();
            let key_pos = self.pos();
            let key = self.name()?;
            if key != "id" && key != "~id" {
                return err(key_pos, "id key");
            }
            self.sym(":")?;
            let Tok::Str(id) = self.bump() else { return err(self.toks[self.i - 1].1, "quoted id") };
            self.sym("}")?;
            Some(id)
        } else {
            None
        };
        if var.is_none() && id.is_none() {
            return err(self.pos(), "variable or id map");
        }
        self.sym(")")?;
        Ok(NodePat { var, label, id, pos })
    }

    fn number(&mut self) -> Result<u64, ParseError> {
        let pos = self.pos();
        match self.bump() {
            Tok::Num(n) => n.parse().or_else(|_| err(pos, "integer")),
            _ => err(pos, "integer"),
        }
    }

    fn rel_body(&mut self) -> Result<(String, Option<u8>), ParseError> {
        self.sym("[")?;
        self.sym(":")?;
        let predicate = self.name()?;
        let hops = if self.at_sym("*") {
            self.bump();
            let lo_pos = self.pos();
            if self.number()? != 1 {
                return err(lo_pos, "lower bound 1");
            }
            self.sym("..")?;
            let hi_pos = self.pos();
            let hi = self.number()?;
            if hi == 0 || hi > MAX_PATH_LEN as u64 {
                return err(hi_pos, format!("upper bound between 1 and {MAX_PATH_LEN}"));
            }
            Some(hi as u8)
        } else {
            None
        };
        self.sym("]")?;
        Ok((predicate, hops))
    }

    fn rel(&mut self) -> Result<Option<RelPat>, ParseError> {
        if self.at_sym("-") {
            self.bump();
            let (predicate, hops) = self.rel_body()?;
            self.sym("-")?;
            self.sym(">")?;
            Ok(Some(RelPat { predicate, hops, forward: true }))
        } else if self.at_sym("<") {
            self.bump();
            self.sym("-")?;
            let (predicate, hops) = self.rel_body()?;
            self.sym("-")?;
            Ok(Some(RelPat { predicate, hops, forward: false }))
        } else {
            Ok(None)
        }
    }

    fn chain(&mut self, part: &mut Part) -> Result<(), ParseError> {
        let mut nodes = vec![self.node()?];
        let mut rels = Vec::new();
        while let Some(r) = self.rel()? {
            rels.push(r);
            nodes.push(self.node()?);
        }
        if rels.is_empty() {
            let n = nodes.pop().expect("one node");
            let Some(var) = n.var else { return err(n.pos, "variable in standalone node") };
            part.standalone.push((var, n.label, n.pos));
            return Ok(());
        }
        for (i, n) in nodes.iter().enumerate() {
            let typed = (i > 0 && rels[i - 1].hops.is_none()) || (i < rels.len() && rels[i].hops.is_none());
            if n.label.is_some() && !typed {
                return err(n.pos, "unlabelled node on a variable-length path");
            }
        }
        for (i, r) in rels.iter().enumerate() {
            let (s, o) = if r.forward { (&nodes[i], &nodes[i + 1]) } else { (&nodes[i + 1], &nodes[i]) };
            part.atoms.push(match r.hops {
                Some(max_len) => Constraint::Path(BoundedPath {
                    subject: s.term(),
                    predicate: r.predicate.clone(),
                    object: o.term(),
                    max_len,
                }),
                None => Constraint::Triple(TriplePattern {
                    subject: s.term(),
                    predicate: Predicate::Label(r.predicate.clone()),
                    object: o.term(),
                    subject_type: s.label.clone(),
                    object_type: o.label.clone(),
                }),
            });
        }
        Ok(())
    }

    fn op(&mut self) -> Result<CompareOp, ParseError> {
        let pos = self.pos();
        let op = match self.bump() {
            Tok::Sym("=") => CompareOp::Eq,
            Tok::Sym("<>") | Tok::Sym("!=") => CompareOp::Ne,
            Tok::Sym(">") => CompareOp::Gt,
            Tok::Sym("<") => CompareOp::Lt,
            Tok::Sym(">=") => CompareOp::Ge,
            Tok::Sym("<=") => CompareOp::Le,
            _ => return err(pos, "comparison operator"),
        };
        Ok(op)
    }

    fn literal(&mut self) -> Result<Literal, ParseError> {
        let pos = self.pos();
        let negative = self.at_sym("-");
        if negative {
            self.bump();
        }
        match self.bump() {
            Tok::Str(s) if !negative => Ok(Literal::Str(s)),
            Tok::Word(w) if !negative && w.eq_ignore_ascii_case("true") => Ok(Literal::Bool(true)),
            Tok::Word(w) if !negative && w.eq_ignore_ascii_case("false") => Ok(Literal::Bool(false)),
            Tok::Num(n) => {
                let text = if negative { format!("-{n}") } else { n };
                if text.contains(['.', 'e', 'E']) {
                    text.parse().map(Literal::Dec).or_else(|_| err(pos, "number"))
                } else {
                    text.parse().map(Literal::Int).or_else(|_| err(pos, "integer in range"))
                }
            }
            _ => err(pos, "literal"),
        }
    }

    fn condition(&mut self) -> Result<Constraint, ParseError> {
        let anchor = self.variable()?;
        self.sym(".")?;
        let property = self.name()?;
        let op = self.op()?;
        let value = self.literal()?;
        Ok(Constraint::Value(ValueConstraint { anchor, property, op, value }))
    }

    fn part(&mut self) -> Result<Part, ParseError> {
        let mut part = Part { start: self.pos(), ..Part::default() };
        self.keyword("MATCH")?;
        loop {
            self.chain(&mut part)?;
            if self.at_sym(",") {
                self.bump();
                continue;
            }
            if self.at_keyword("MATCH") {
                self.bump();
                continue;
            }
            break;
        }
        if self.at_keyword("WHERE") {
            self.bump();
            part.filters.push(self.condition()?);
            while self.at_keyword("AND") {
                self.bump();
                part.filters.push(self.condition()?);
            }
        }
        self.keyword("RETURN")?;
        part.ret_var = self.variable()?;
        if self.at_sym(".") {
            self.bump();
            part.ret_prop = Some(self.name()?);
        }
        Ok(part)
    }
}

/// Global constraint order consistent with every part's own order.
fn merge_orders(parts: &[Vec<&Constraint>]) -> Vec<Constraint> {
    let mut first_seen: BTreeMap<&Constraint, usize> = BTreeMap::new();
    let mut order: Vec<&Constraint> = Vec::new();
    let mut succ: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for seq in parts {
        for c in seq {
            if !first_seen.contains_key(c) {
                first_seen.insert(c, order.len());
                order.push(c);
            }
        }
        for w in seq.windows(2) {
            succ.entry(first_seen[w[0]]).or_default().insert(first_seen[w[1]]);
        }
    }
    let mut indeg = vec![0usize; order.len()];
    for targets in succ.values() {
        for t in targets {
            indeg[*t] += 1;
        }
    }
    let mut done = vec![false; order.len()];
    let mut out = Vec::new();
    for _ in 0..order.len() {
        let next = (0..order.len())
            .find(|i| !done[*i] && indeg[*i] == 0)
            .or_else(|| (0..order.len()).find(|i| !done[*i]))
            .expect("remaining node");
        done[next] = true;
        if let Some(targets) = succ.get(&next) {
            for t in targets {
                indeg[*t] = indeg[*t].saturating_sub(1);
            }
        }
        out.push(order[next].clone());
    }
    out
}

/// Parses text in the rendered Cypher subset back into a plan. Constraint
/// ids are renumbered from 1, preserving each part's clause order, and the
/// table is unscored.
pub fn parse_cypher_subset(text: &str) -> Result<QueryPlan, ParseError> {
    let Lexed { toks, deferred } = lex(text)?;
    let mut p = Parser { toks, i: 0 };
    let mut parts = vec![p.part()?];
    while p.at_keyword("UNION") {
        p.bump();
        parts.push(p.part()?);
    }
    if *p.peek() != Tok::Eof {
        return err(p.pos(), "UNION or end of input");
    }

    let answer_var = parts[0].ret_var.clone();
    let answer_property = parts[0].ret_prop.clone();
    for part in &parts[1..] {
        if part.ret_var != answer_var || part.ret_prop != answer_property {
            return err(part.start, "the same RETURN in every UNION part");
        }
    }

    let mut decl_labels: BTreeSet<Option<&str>> = BTreeSet::new();
    for part in &parts {
        for (var, label, pos) in &part.standalone {
            if *var == answer_var {
                decl_labels.insert(label.as_deref());
            } else if label.is_some() {
                return err(*pos, "unlabelled node for a filter variable");
            }
        }
    }
    let types_answer = |part: &Part, ty: &str| {
        part.atoms.iter().any(|c| match c {
            Constraint::Triple(t) => {
                (t.subject.as_var() == Some(&answer_var) && t.subject_type.as_deref() == Some(ty))
                    || (t.object.as_var() == Some(&answer_var) && t.object_type.as_deref() == Some(ty))
            }
            _ => false,
        })
    };
    let answer_type: Option<String> = match decl_labels.len() {
        0 => {
            let mut common: Option<BTreeSet<&str>> = None;
            for part in &parts {
                let mine: BTreeSet<&str> = part
                    .atoms
                    .iter()
                    .flat_map(|c| match c {
                        Constraint::Triple(t) => {
                            let mut v = Vec::new();
                            if t.subject.as_var() == Some(&answer_var) {
                                v.extend(t.subject_type.as_deref());
                            }
                            if t.object.as_var() == Some(&answer_var) {
                                v.extend(t.object_type.as_deref());
                            }
                            v
                        }
                        _ => Vec::new(),
                    })
                    .collect();
                common = Some(match common {
                    None => mine,
                    Some(prev) => prev.intersection(&mine).copied().collect(),
                });
            }
            common.and_then(|s| s.into_iter().next()).map(str::to_string)
        }
        1 => decl_labels.iter().next().copied().flatten().map(str::to_string),
        _ => return err(parts[0].start, "one consistent label for the answer node"),
    };
    if let Some(ty) = &answer_type {
        for part in &parts {
            let declared = part.standalone.iter().any(|(v, _, _)| *v == answer_var);
            if !declared && !types_answer(part, ty) {
                return err(part.start, format!("answer node labelled {ty}"));
            }
        }
    }

    let sequences: Vec<Vec<&Constraint>> = parts
        .iter()
        .flat_map(|part| [part.atoms.iter().collect(), part.filters.iter().collect()])
        .collect();
    let merged = merge_orders(&sequences);
    let ids: BTreeMap<&Constraint, ConstraintId> = merged
        .iter()
        .enumerate()
        .map(|(i, c)| (c, ConstraintId(i as u32 + 1)))
        .collect();
    let branches = parts
        .iter()
        .map(|part| {
            let set: BTreeSet<ConstraintId> = part.atoms.iter().chain(&part.filters).map(|c| ids[c]).collect();
            set.into_iter().collect()
        })
        .collect();
    let table = CTable {
        constraints: merged
            .iter()
            .map(|c| ScoredConstraint::unscored(ids[c], c.clone()))
            .collect(),
        branches,
        deferred,
        m: 0,
    };
    Ok(QueryPlan {
        table,
        answer_var: answer_var.clone(),
        answer_type,
        answer_property,
        return_vars: vec![answer_var],
    })
}
