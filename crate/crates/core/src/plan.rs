use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ctable::{CTable, ConstraintId};

fn default_property() -> Option<String> {
    Some("name".to_string())
}

/// A constraint subset plus what to return. Rendered and executed as a unit.
///
/// `answer_type` restricts the answer variable; when no constraint binds
/// that variable the plan degenerates to a type-only match.
/// `answer_property` is the node property shown in the rendered RETURN
/// clause; the evaluator always projects entity ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub table: CTable,
    pub answer_var: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_type: Option<String>,
    #[serde(default = "default_property")]
    pub answer_property: Option<String>,
    #[serde(default)]
    pub return_vars: Vec<String>,
}

impl QueryPlan {
    pub fn new(table: CTable, answer_var: &str, answer_type: Option<&str>) -> Self {
        QueryPlan {
            table,
            answer_var: answer_var.to_string(),
            answer_type: answer_type.map(str::to_string),
            answer_property: default_property(),
            return_vars: vec![answer_var.to_string()],
        }
    }

    /// Same answer spec over a different constraint table.
    pub fn with_table(&self, table: CTable) -> Self {
        QueryPlan {
            table,
            ..self.clone()
        }
    }

    pub fn restrict(&self, keep: &BTreeSet<ConstraintId>) -> Self {
        self.with_table(self.table.restrict(keep))
    }

    pub fn ids(&self) -> BTreeSet<ConstraintId> {
        self.table.ids()
    }

    /// Return variables, falling back to the answer variable alone.
    pub fn returned(&self) -> Vec<&str> {
        if self.return_vars.is_empty() {
            vec![self.answer_var.as_str()]
        } else {
            self.return_vars.iter().map(String::as_str).collect()
        }
    }
}
