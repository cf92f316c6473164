//! The bundled Olympic host-city example: graph, mention dictionary,
//! constraint set and reference answers. Shared by tests and the CLI.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::ctable::{Constraint, Term, TriplePattern, ValueConstraint};
use crate::graph::{load_graph, Graph};
use crate::literal::{CompareOp, Literal};

pub const OLYMPIC_GRAPH: &str = include_str!("../fixtures/olympic.graph");
pub const OLYMPIC_DICT: &str = include_str!("../fixtures/olympic.dict.json");

pub const OLYMPIC_QUESTION: &str = "Which cities in the USA have hosted the Olympics in February?";

/// Winter hosts in the USA, by display name.
pub const WINTER_US_HOSTS: [&str; 3] = ["Lake Placid", "Salt Lake City", "Squaw Valley"];

/// Every US host city, by display name.
pub const US_HOSTS: [&str; 6] = [
    "St.Louis",
    "Los Angeles",
    "Lake Placid",
    "Atlanta",
    "Salt Lake City",
    "Squaw Valley",
];

pub fn olympic_graph() -> Graph {
    load_graph(OLYMPIC_GRAPH).expect("bundled fixture parses")
}

/// c1..c5 in extraction order: hosted edge, country, year, Winter, Summer.
pub fn olympic_constraints() -> Vec<Constraint> {
    vec![
        Constraint::Triple(
            TriplePattern::new(Term::var("c"), "hosted", Term::var("e")).typed(Some("City"), Some("OlympicGames")),
        ),
        Constraint::Value(ValueConstraint::new("c", "country", CompareOp::Eq, Literal::str("USA"))),
        Constraint::Value(ValueConstraint::new("e", "year", CompareOp::Gt, Literal::Int(1896))),
        Constraint::Value(ValueConstraint::new("e", "type", CompareOp::Eq, Literal::str("Winter"))),
        Constraint::Value(ValueConstraint::new("e", "type", CompareOp::Eq, Literal::str("Summer"))),
    ]
}

pub fn entity_ids(ids: &[&str]) -> BTreeSet<String> {
    ids.iter().map(|s| String::from(*s)).collect()
}

pub const WINTER_US_HOST_IDS: [&str; 3] = ["LakePlacid", "SaltLakeCity", "SquawValley"];

pub const US_HOST_IDS: [&str; 6] = ["StLouis", "LosAngeles", "LakePlacid", "Atlanta", "SaltLakeCity", "SquawValley"];
