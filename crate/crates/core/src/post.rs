//! Post-validation of deferred (non-monotone) constraints over an answer set.
//!
//! Stages run in a fixed order: negations, ordering, cardinality, then
//! aggregation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use thiserror::Error;

use crate::ctable::{CardinalityMode, Constraint, OrderSpec};
use crate::eval::{satisfiable, AnswerSet, EvalError};
use crate::graph::Graph;
use crate::literal::{Literal, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PostError {
    #[error("unsupported aggregate `{0}`")]
    UnsupportedAggregate(String),
    #[error("negation of a non-monotone constraint is not supported")]
    NestedNonMonotone,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Post-validated answers. `ordered` lists the projection in result order
/// (an ORDER constraint's order, otherwise ascending).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostAnswers {
    pub answers: AnswerSet,
    pub ordered: Vec<Value>,
}

fn cmp_lit(a: &Literal, b: &Literal) -> Ordering {
    a.sem_cmp(b).unwrap_or_else(|_| a.cmp(b))
}

fn literal_values(g: &Graph, v: &Value, property: &str) -> Vec<Literal> {
    match v {
        Value::Entity(id) => g.values_of(id, property).cloned().collect(),
        Value::Literal(l) => vec![l.clone()],
    }
}

/// Sort key of each answer: the best value of `spec.property` on `spec.var`
/// over the answer's bindings (max when descending, min otherwise).
fn sort_keys(g: &Graph, answers: &AnswerSet, answer_var: &str, spec: &OrderSpec) -> BTreeMap<Value, Literal> {
    let mut keys: BTreeMap<Value, Literal> = BTreeMap::new();
    for b in &answers.bindings {
        let (Some(ans), Some(target)) = (b.get(answer_var), b.get(&spec.var)) else { continue };
        for l in literal_values(g, target, &spec.property) {
            let better = match keys.get(ans) {
                None => true,
                Some(cur) => {
                    let o = cmp_lit(&l, cur);
                    if spec.descending { o == Ordering::Greater } else { o == Ordering::Less }
                }
            };
            if better {
                keys.insert(ans.clone(), l);
            }
        }
    }
    keys
}

fn order_by(g: &Graph, answers: &AnswerSet, answer_var: &str, ordered: &mut [Value], spec: &OrderSpec) {
    let keys = sort_keys(g, answers, answer_var, spec);
    ordered.sort_by(|a, b| match (keys.get(a), keys.get(b)) {
        (Some(x), Some(y)) => {
            let o = cmp_lit(x, y);
            (if spec.descending { o.reverse() } else { o }).then_with(|| a.cmp(b))
        }
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.cmp(b),
    });
}

/// Applies `deferred` to `answers` (the evaluation of a plan whose answer
/// variable is `answer_var`).
///
/// Negation drops bindings for which the inner constraint has a solution.
/// At-most-k keeps the first k answers in result order; exactly-k yields the
/// empty set unless there are exactly k answers. An ORDER constraint sorts by
/// the named property and truncates to its limit. `count` replaces the
/// projection by the number of answers.
pub fn apply_post_constraints(
    answers: &AnswerSet,
    deferred: &[Constraint],
    g: &Graph,
    answer_var: &str,
) -> Result<PostAnswers, PostError> {
    let mut current = answers.clone();
    for c in deferred {
        if let Constraint::Negation { inner } = c {
            if !inner.is_monotone() {
                return Err(PostError::NestedNonMonotone);
            }
            let mut kept = BTreeSet::new();
            for b in &current.bindings {
                if !satisfiable(g, inner, &b.values)? {
                    kept.insert(b.clone());
                }
            }
            current.bindings = kept;
        }
    }
    current.projected = current.bindings.iter().filter_map(|b| b.get(answer_var).cloned()).collect();

    let mut ordered: Vec<Value> = current.projected.iter().cloned().collect();
    for c in deferred {
        if let Constraint::OrderLimit(spec) = c {
            order_by(g, &current, answer_var, &mut ordered, spec);
            if let Some(n) = spec.limit {
                ordered.truncate(n);
            }
        }
    }
    for c in deferred {
        if let Constraint::Cardinality { mode, k } = c {
            match mode {
                CardinalityMode::AtMost => ordered.truncate(*k),
                CardinalityMode::Exactly => {
                    if ordered.len() != *k {
                        ordered.clear();
                    }
                }
            }
        }
    }
    let kept: BTreeSet<Value> = ordered.iter().cloned().collect();
    current.bindings.retain(|b| b.get(answer_var).is_some_and(|v| kept.contains(v)));
    current.projected = kept;

    for c in deferred {
        if let Constraint::Aggregate(spec) = c {
            if !spec.function.eq_ignore_ascii_case("count") {
                return Err(PostError::UnsupportedAggregate(spec.function.to_string()));
            }
            let n = Value::Literal(Literal::Int(ordered.len() as i64));
            ordered = vec![n.clone()];
            current.projected = [n].into_iter().collect();
            current.bindings.clear();
        }
    }
    Ok(PostAnswers { answers: current, ordered })
}
