//! Conjunctive evaluation of monotone constraint sets over a [`Graph`].
//!
//! Each branch is solved by backtracking: value filters run as soon as their
//! anchor is bound, then the pattern with the most bound positions is
//! expanded through the narrowest index. Branch results are unioned.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctable::{BoundedPath, Constraint, Predicate, Term, TriplePattern, ValueConstraint};
use crate::graph::Graph;
use crate::literal::{Literal, TypeMismatch, Value};
use crate::plan::QueryPlan;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("variable ?{0} is returned but never bound")]
    UnboundVariable(String),
    #[error(transparent)]
    TypeMismatch(#[from] TypeMismatch),
}

/// One satisfying assignment, tagged with the branch that produced it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Binding {
    pub branch: usize,
    pub values: BTreeMap<String, Value>,
}

impl Binding {
    pub fn get(&self, var: &str) -> Option<&Value> {
        self.values.get(var)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSet {
    pub bindings: BTreeSet<Binding>,
    pub projected: BTreeSet<Value>,
}

impl AnswerSet {
    pub fn len(&self) -> usize {
        self.projected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projected.is_empty()
    }

    /// Entity ids among the projected answers.
    pub fn entity_ids(&self) -> BTreeSet<String> {
        self.projected
            .iter()
            .filter_map(|v| v.as_entity().map(str::to_string))
            .collect()
    }

    pub fn display_names(&self, g: &Graph) -> BTreeSet<String> {
        self.projected.iter().map(|v| g.display_name(v)).collect()
    }
}

type Assignment = BTreeMap<String, Value>;

#[derive(Clone, Copy)]
enum Atom<'a> {
    Pattern(&'a TriplePattern),
    Path(&'a BoundedPath),
    Filter(&'a ValueConstraint),
    /// The answer variable: type check when bound, generator when free.
    Domain(&'a str, Option<&'a str>),
}

struct Solver<'g> {
    g: &'g Graph,
    /// Raise on incomparable literals instead of treating them as non-matches.
    strict: bool,
}

fn term_value(t: &Term, a: &Assignment) -> Option<Value> {
    match t {
        Term::Var(v) => a.get(v).cloned(),
        Term::Entity(e) => Some(Value::Entity(e.clone())),
        Term::Lit(l) => Some(Value::Literal(l.clone())),
    }
}

fn unify(t: &Term, v: &Value, a: &mut Assignment, newly: &mut Vec<String>) -> bool {
    match t {
        Term::Var(name) => match a.get(name) {
            Some(bound) => bound == v,
            None => {
                a.insert(name.clone(), v.clone());
                newly.push(name.clone());
                true
            }
        },
        Term::Entity(e) => v.as_entity() == Some(e.as_str()),
        Term::Lit(l) => matches!(v, Value::Literal(x) if x == l),
    }
}

fn pred_value(p: &str) -> Value {
    Value::Literal(Literal::Str(p.to_string()))
}

impl<'g> Solver<'g> {
    fn has_type(&self, v: &Value, ty: &Option<String>) -> bool {
        match ty {
            None => true,
            Some(ty) => v
                .as_entity()
                .and_then(|id| self.g.entity(id))
                .is_some_and(|e| e.has_type(ty)),
        }
    }

    fn filter_holds(&self, vc: &ValueConstraint, anchor: &Value) -> Result<bool, TypeMismatch> {
        let Some(id) = anchor.as_entity() else {
            return Ok(false);
        };
        for lit in self.g.values_of(id, &vc.property) {
            match vc.op.apply(lit, &vc.value) {
                Ok(true) => return Ok(true),
                Ok(false) => {}
                Err(e) if self.strict => return Err(e),
                Err(_) => {}
            }
        }
        Ok(false)
    }

    fn bound_count(&self, atom: &Atom<'_>, a: &Assignment) -> usize {
        match atom {
            Atom::Pattern(t) => {
                let p = match &t.predicate {
                    Predicate::Label(_) => true,
                    Predicate::Var(v) => a.contains_key(v),
                };
                term_value(&t.subject, a).is_some() as usize + p as usize + term_value(&t.object, a).is_some() as usize
            }
            Atom::Path(p) => 1 + term_value(&p.subject, a).is_some() as usize + term_value(&p.object, a).is_some() as usize,
            _ => 0,
        }
    }

    fn solve(&self, atoms: &mut Vec<Atom<'_>>, a: &mut Assignment, out: &mut Vec<Assignment>) -> Result<(), TypeMismatch> {
        // checks that need no new bindings
        let mut i = 0;
        while i < atoms.len() {
            let ready = match atoms[i] {
                Atom::Filter(vc) => match a.get(&vc.anchor) {
                    Some(v) => Some(self.filter_holds(vc, v)?),
                    None => None,
                },
                Atom::Domain(var, ty) => a
                    .get(var)
                    .map(|v| self.has_type(v, &ty.map(str::to_string))),
                _ => None,
            };
            match ready {
                Some(false) => return Ok(()),
                Some(true) => {
                    let atom = atoms.remove(i);
                    let r = self.solve(atoms, a, out);
                    atoms.insert(i, atom);
                    return r;
                }
                None => i += 1,
            }
        }
        if atoms.is_empty() {
            out.push(a.clone());
            return Ok(());
        }

        let pick = atoms
            .iter()
            .enumerate()
            .filter(|(_, at)| matches!(at, Atom::Pattern(_) | Atom::Path(_)))
            .max_by(|(i, x), (j, y)| self.bound_count(x, a).cmp(&self.bound_count(y, a)).then(j.cmp(i)))
            .map(|(i, _)| i);
        let idx = match pick {
            Some(i) => i,
            // only free filters and the free answer variable remain
            None => atoms
                .iter()
                .position(|at| matches!(at, Atom::Filter(_)))
                .unwrap_or(0),
        };
        let atom = atoms.remove(idx);
        let r = match atom {
            Atom::Pattern(t) => self.expand_pattern(t, atoms, a, out),
            Atom::Path(p) => self.expand_path(p, atoms, a, out),
            Atom::Filter(vc) => {
                // free anchor: range over entities holding the property
                let mut r = Ok(());
                for e in self.g.entities() {
                    if self.g.values_of(&e.id, &vc.property).next().is_none() {
                        continue;
                    }
                    let v = Value::Entity(e.id.clone());
                    if self.filter_holds(vc, &v)? {
                        a.insert(vc.anchor.clone(), v);
                        r = self.solve(atoms, a, out);
                        a.remove(&vc.anchor);
                        if r.is_err() {
                            break;
                        }
                    }
                }
                r
            }
            Atom::Domain(var, ty) => {
                let mut r = Ok(());
                let candidates: Vec<&str> = match ty {
                    Some(ty) => self.g.entities_of_type(ty).map(|e| e.id.as_str()).collect(),
                    None => self.g.entities().map(|e| e.id.as_str()).collect(),
                };
                for id in candidates {
                    a.insert(var.to_string(), Value::Entity(id.to_string()));
                    r = self.solve(atoms, a, out);
                    a.remove(var);
                    if r.is_err() {
                        break;
                    }
                }
                r
            }
        };
        atoms.insert(idx, atom);
        r
    }

    fn candidate_triples(&self, t: &TriplePattern, a: &Assignment) -> Vec<usize> {
        let mut options: Vec<&[usize]> = Vec::new();
        if let Some(Value::Entity(s)) = term_value(&t.subject, a) {
            options.push(self.g.with_subject(&s));
        }
        if let Some(o) = term_value(&t.object, a) {
            options.push(self.g.with_object(&o));
        }
        match &t.predicate {
            Predicate::Label(p) => options.push(self.g.with_predicate(p)),
            Predicate::Var(v) => {
                if let Some(Value::Literal(Literal::Str(p))) = a.get(v) {
                    options.push(self.g.with_predicate(p));
                }
            }
        }
        match options.into_iter().min_by_key(|o| o.len()) {
            Some(best) => best.to_vec(),
            None => (0..self.g.triple_count()).collect(),
        }
    }

    fn expand_pattern(
        &self,
        t: &TriplePattern,
        atoms: &mut Vec<Atom<'_>>,
        a: &mut Assignment,
        out: &mut Vec<Assignment>,
    ) -> Result<(), TypeMismatch> {
        // literal subjects never match stored triples
        if matches!(t.subject, Term::Lit(_)) {
            return Ok(());
        }
        for idx in self.candidate_triples(t, a) {
            let triple = self.g.triple(idx);
            let subject = Value::Entity(triple.subject.clone());
            if !self.has_type(&subject, &t.subject_type) || !self.has_type(&triple.object, &t.object_type) {
                continue;
            }
            let mut newly = Vec::new();
            let ok = unify(&t.subject, &subject, a, &mut newly)
                && match &t.predicate {
                    Predicate::Label(p) => *p == triple.predicate,
                    Predicate::Var(v) => unify(&Term::Var(v.clone()), &pred_value(&triple.predicate), a, &mut newly),
                }
                && unify(&t.object, &triple.object, a, &mut newly);
            let r = if ok { self.solve(atoms, a, out) } else { Ok(()) };
            for v in newly {
                a.remove(&v);
            }
            r?;
        }
        Ok(())
    }

    fn expand_path(
        &self,
        p: &BoundedPath,
        atoms: &mut Vec<Atom<'_>>,
        a: &mut Assignment,
        out: &mut Vec<Assignment>,
    ) -> Result<(), TypeMismatch> {
        let mut pairs: BTreeSet<(String, String)> = BTreeSet::new();
        match (term_value(&p.subject, a), term_value(&p.object, a)) {
            (Some(Value::Entity(s)), _) => {
                for o in reachable(self.g, &s, &p.predicate, p.max_len, true) {
                    pairs.insert((s.clone(), o));
                }
            }
            (Some(Value::Literal(_)), _) => {}
            (None, Some(Value::Entity(o))) => {
                for s in reachable(self.g, &o, &p.predicate, p.max_len, false) {
                    pairs.insert((s, o.clone()));
                }
            }
            (None, Some(Value::Literal(_))) => {}
            (None, None) => {
                let sources: BTreeSet<&str> = self
                    .g
                    .with_predicate(&p.predicate)
                    .iter()
                    .map(|&i| self.g.triple(i).subject.as_str())
                    .collect();
                for s in sources {
                    for o in reachable(self.g, s, &p.predicate, p.max_len, true) {
                        pairs.insert((s.to_string(), o));
                    }
                }
            }
        }
        for (s, o) in pairs {
            let mut newly = Vec::new();
            let ok = unify(&p.subject, &Value::Entity(s), a, &mut newly) && unify(&p.object, &Value::Entity(o), a, &mut newly);
            let r = if ok { self.solve(atoms, a, out) } else { Ok(()) };
            for v in newly {
                a.remove(&v);
            }
            r?;
        }
        Ok(())
    }
}

/// Entities reachable from `start` by 1..=max_len `predicate` edges
/// (reversed when `forward` is false). Literal objects are not traversed.
pub fn reachable(g: &Graph, start: &str, predicate: &str, max_len: u8, forward: bool) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    let mut frontier: BTreeSet<String> = [start.to_string()].into_iter().collect();
    for _ in 0..max_len {
        let mut next = BTreeSet::new();
        for node in &frontier {
            let edges: &[usize] = if forward {
                g.with_subject(node)
            } else {
                g.with_object(&Value::Entity(node.clone()))
            };
            for &i in edges {
                let t = g.triple(i);
                if t.predicate != predicate {
                    continue;
                }
                let other = if forward { t.object.as_entity() } else { Some(t.subject.as_str()) };
                if let Some(o) = other {
                    if seen.insert(o.to_string()) {
                        next.insert(o.to_string());
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    seen
}

fn atoms_of<'a>(constraints: &[&'a Constraint]) -> Vec<Atom<'a>> {
    constraints
        .iter()
        .filter_map(|c| match c {
            Constraint::Triple(t) => Some(Atom::Pattern(t)),
            Constraint::Path(p) => Some(Atom::Path(p)),
            Constraint::Value(v) => Some(Atom::Filter(v)),
            _ => None,
        })
        .collect()
}

/// Runs a plan: conjunctive within each branch, union across branches.
/// Deferred constraints are ignored here.
pub fn evaluate(g: &Graph, plan: &QueryPlan) -> Result<AnswerSet, EvalError> {
    let solver = Solver { g, strict: true };
    let mut result = AnswerSet::default();
    for (bi, _) in plan.table.branches.iter().enumerate() {
        let members = plan.table.branch(bi);
        let constraints: Vec<&Constraint> = members.iter().map(|sc| &sc.constraint).collect();
        let mut atoms = atoms_of(&constraints);
        atoms.push(Atom::Domain(&plan.answer_var, plan.answer_type.as_deref()));

        let mut bound_vars: BTreeSet<&str> = constraints.iter().flat_map(|c| c.variables()).collect();
        bound_vars.insert(&plan.answer_var);
        for rv in plan.returned() {
            if !bound_vars.contains(rv) {
                return Err(EvalError::UnboundVariable(rv.to_string()));
            }
        }

        let mut rows = Vec::new();
        solver.solve(&mut atoms, &mut Assignment::new(), &mut rows)?;
        for values in rows {
            if let Some(v) = values.get(&plan.answer_var) {
                result.projected.insert(v.clone());
            }
            result.bindings.insert(Binding { branch: bi, values });
        }
    }
    Ok(result)
}

/// Number of distinct satisfying assignments of the constraint's variables.
/// A value constraint counts distinct anchor entities. Incomparable literals
/// count as non-matches; non-monotone constraints count 0.
pub fn count_matches(g: &Graph, c: &Constraint) -> usize {
    match c {
        Constraint::Value(vc) => {
            let solver = Solver { g, strict: false };
            g.entities()
                .filter(|e| solver.filter_holds(vc, &Value::Entity(e.id.clone())).unwrap_or(false))
                .count()
        }
        Constraint::Triple(_) | Constraint::Path(_) => {
            let solver = Solver { g, strict: false };
            let mut rows = Vec::new();
            let mut atoms = atoms_of(&[c]);
            solver
                .solve(&mut atoms, &mut Assignment::new(), &mut rows)
                .expect("lenient solver never fails");
            rows.into_iter().collect::<BTreeSet<_>>().len()
        }
        _ => 0,
    }
}

/// Whether `c` holds under `binding` (all of c's variables must be bound).
pub fn satisfied(g: &Graph, c: &Constraint, binding: &BTreeMap<String, Value>) -> Result<bool, EvalError> {
    let vars = c.variables();
    if let Some(v) = vars.iter().find(|v| !binding.contains_key(**v)) {
        return Err(EvalError::UnboundVariable(v.to_string()));
    }
    let solver = Solver { g, strict: true };
    let mut a: Assignment = binding.clone();
    let mut rows = Vec::new();
    let mut atoms = atoms_of(&[c]);
    solver.solve(&mut atoms, &mut a, &mut rows)?;
    Ok(!rows.is_empty())
}

/// Whether `c` has a solution extending `binding`; unbound variables are
/// existentially quantified.
pub fn satisfiable(g: &Graph, c: &Constraint, binding: &BTreeMap<String, Value>) -> Result<bool, EvalError> {
    let solver = Solver { g, strict: true };
    let mut a: Assignment = binding.clone();
    let mut rows = Vec::new();
    let mut atoms = atoms_of(&[c]);
    solver.solve(&mut atoms, &mut a, &mut rows)?;
    Ok(!rows.is_empty())
}
