//! Constraint-guided query generation over a labeled property graph.
//!
//! The crate is `no_std` (with `alloc`). It holds the pure parts of the
//! pipeline: the in-memory graph and its conjunctive evaluator, the
//! constraint-table IR, the chase/backchase beam search, the Cypher and
//! SPARQL emitters with a parser for the emitted Cypher subset, the oracle
//! interface, and the answer-set metrics. File IO, HTTP, caching and the
//! command line live in the `cabq` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod ctable;
pub mod cypher;
pub mod engine;
pub mod eval;
pub mod extraction;
pub mod fixtures;
pub mod graph;
pub mod literal;
pub mod metrics;
pub mod oracle;
pub mod plan;
pub mod post;
pub mod render;


pub use ctable::{CTable, Constraint, ConstraintId, ScoredConstraint, Term};
pub use eval::{count_matches, evaluate, AnswerSet, Binding};
pub use graph::{load_graph, Entity, Graph, Triple};
pub use literal::{CompareOp, Literal, Value};
pub use plan::QueryPlan;
