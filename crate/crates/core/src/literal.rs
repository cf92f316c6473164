//! Literal values and the comparison semantics used by value constraints.

use alloc::format;
use alloc::string::{String, ToString};
use core::cmp::Ordering;
use core::fmt;
use core::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A typed literal attached to a node property or a literal-object triple.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Literal {
    Str(String),
    Int(i64),
    Dec(f64),
    Bool(bool),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot order {left} against {right}")]
pub struct TypeMismatch {
    pub left: String,
    pub right: String,
}

impl Literal {
    pub fn str(s: impl Into<String>) -> Self {
        Literal::Str(s.into())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Literal::Str(_) => "string",
            Literal::Int(_) => "integer",
            Literal::Dec(_) => "decimal",
            Literal::Bool(_) => "boolean",
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Literal::Str(_) => 0,
            Literal::Int(_) => 1,
            Literal::Dec(_) => 2,
            Literal::Bool(_) => 3,
        }
    }

    fn as_number(&self) -> Option<f64> {
        match self {
            Literal::Int(i) => Some(*i as f64),
            Literal::Dec(d) => Some(*d),
            _ => None,
        }
    }

    /// Equality under filter semantics: integers and decimals compare
    /// numerically, any other cross-kind pair is unequal.
    pub fn sem_eq(&self, other: &Literal) -> bool {
        match (self, other) {
            (Literal::Str(a), Literal::Str(b)) => a == b,
            (Literal::Bool(a), Literal::Bool(b)) => a == b,
            (Literal::Int(a), Literal::Int(b)) => a == b,
            _ => match (self.as_number(), other.as_number()) {
                (Some(a), Some(b)) => a == b,
                _ => false,
            },
        }
    }

    /// Ordering under filter semantics. Cross-kind ordering (other than
    /// integer/decimal) is an error.
    pub fn sem_cmp(&self, other: &Literal) -> Result<Ordering, TypeMismatch> {
        let mismatch = || TypeMismatch {
            left: self.kind().to_string(),
            right: other.kind().to_string(),
        };
        match (self, other) {
            (Literal::Str(a), Literal::Str(b)) => Ok(a.cmp(b)),
            (Literal::Bool(a), Literal::Bool(b)) => Ok(a.cmp(b)),
            (Literal::Int(a), Literal::Int(b)) => Ok(a.cmp(b)),
            _ => match (self.as_number(), other.as_number()) {
                (Some(a), Some(b)) => a.partial_cmp(&b).ok_or_else(mismatch),
                _ => Err(mismatch()),
            },
        }
    }

    /// Parses the graph-file literal syntax: `"str"`, `i:42`, `d:3.5`, `b:true`.
    pub fn parse_tagged(text: &str) -> Result<Literal, String> {
        let text = text.trim();
        if let Some(rest) = text.strip_prefix('"') {
            return unescape_quoted(rest).map(Literal::Str);
        }
        if let Some(v) = text.strip_prefix("i:") {
            return v
                .parse::<i64>()
                .map(Literal::Int)
                .map_err(|e| format!("bad integer literal {v:?}: {e}"));
        }
        if let Some(v) = text.strip_prefix("d:") {
            return v
                .parse::<f64>()
                .map(Literal::Dec)
                .map_err(|e| format!("bad decimal literal {v:?}: {e}"));
        }
        if let Some(v) = text.strip_prefix("b:") {
            return match v {
                "true" => Ok(Literal::Bool(true)),
                "false" => Ok(Literal::Bool(false)),
                _ => Err(format!("bad boolean literal {v:?}")),
            };
        }
        Err(format!("unrecognised literal {text:?}"))
    }

    /// Inverse of [`Literal::parse_tagged`].
    pub fn to_tagged(&self) -> String {
        match self {
            Literal::Str(s) => {
                let mut out = String::with_capacity(s.len() + 2);
                out.push('"');
                for ch in s.chars() {
                    match ch {
                        '"' => out.push_str("\\\""),
                        '\\' => out.push_str("\\\\"),
                        '\n' => out.push_str("\\n"),
                        c => out.push(c),
                    }
                }
                out.push('"');
                out
            }
            Literal::Int(i) => format!("i:{i}"),
            Literal::Dec(d) => format!("d:{}", decimal_text(*d)),
            Literal::Bool(b) => format!("b:{b}"),
        }
    }
}

/// Decimal rendering that always keeps a fractional part or exponent, so the
/// text reads back as a decimal rather than an integer.
pub fn decimal_text(d: f64) -> String {
    let s = format!("{d:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

fn unescape_quoted(rest: &str) -> Result<String, String> {
    let mut out = String::new();
    let mut chars = rest.chars();
    while let Some(c) = chars.next() {
        match c {
            '"' => {
                if chars.as_str().trim().is_empty() {
                    return Ok(out);
                }
                return Err(format!("trailing text after string literal: {:?}", chars.as_str()));
            }
            '\\' => match chars.next() {
                Some('"') => out.push('"'),
                Some('\\') => out.push('\\'),
                Some('n') => out.push('\n'),
                Some(other) => return Err(format!("unknown escape \\{other}")),
                None => return Err("dangling escape".into()),
            },
            c => out.push(c),
        }
    }
    Err("unterminated string literal".into())
}

// Structural identity (used for sets and dedup): decimals by bit pattern.
impl PartialEq for Literal {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Literal {}

impl PartialOrd for Literal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Literal {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Literal::Str(a), Literal::Str(b)) => a.cmp(b),
            (Literal::Int(a), Literal::Int(b)) => a.cmp(b),
            (Literal::Dec(a), Literal::Dec(b)) => a.total_cmp(b),
            (Literal::Bool(a), Literal::Bool(b)) => a.cmp(b),
            _ => self.tag().cmp(&other.tag()),
        }
    }
}

impl Hash for Literal {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.tag().hash(state);
        match self {
            Literal::Str(s) => s.hash(state),
            Literal::Int(i) => i.hash(state),
            Literal::Dec(d) => d.to_bits().hash(state),
            Literal::Bool(b) => b.hash(state),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Str(s) => f.write_str(s),
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Dec(d) => f.write_str(&decimal_text(*d)),
            Literal::Bool(b) => write!(f, "{b}"),
        }
    }
}

/// Comparison operator of a value constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CompareOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
}

impl CompareOp {
    pub const ALL: [CompareOp; 6] = [
        CompareOp::Eq,
        CompareOp::Ne,
        CompareOp::Gt,
        CompareOp::Lt,
        CompareOp::Ge,
        CompareOp::Le,
    ];

    /// `lhs op rhs`.
    pub fn apply(self, lhs: &Literal, rhs: &Literal) -> Result<bool, TypeMismatch> {
        Ok(match self {
            CompareOp::Eq => lhs.sem_eq(rhs),
            CompareOp::Ne => !lhs.sem_eq(rhs),
            CompareOp::Gt => lhs.sem_cmp(rhs)? == Ordering::Greater,
            CompareOp::Lt => lhs.sem_cmp(rhs)? == Ordering::Less,
            CompareOp::Ge => lhs.sem_cmp(rhs)? != Ordering::Less,
            CompareOp::Le => lhs.sem_cmp(rhs)? != Ordering::Greater,
        })
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "!=",
            CompareOp::Gt => ">",
            CompareOp::Lt => "<",
            CompareOp::Ge => ">=",
            CompareOp::Le => "<=",
        }
    }
}

/// A value bound to a variable: an entity id or a literal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Value {
    Entity(String),
    Literal(Literal),
}

impl Value {
    pub fn entity(id: impl Into<String>) -> Self {
        Value::Entity(id.into())
    }

    pub fn as_entity(&self) -> Option<&str> {
        match self {
            Value::Entity(id) => Some(id),
            Value::Literal(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Entity(id) => f.write_str(id),
            Value::Literal(l) => write!(f, "{l}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_kinds_compare_across_tags() {
        assert!(Literal::Int(3).sem_eq(&Literal::Dec(3.0)));
        assert_eq!(
            Literal::Int(3).sem_cmp(&Literal::Dec(3.5)).unwrap(),
            Ordering::Less
        );
        assert!(CompareOp::Gt.apply(&Literal::Int(1900), &Literal::Int(1896)).unwrap());
    }

    #[test]
    fn cross_kind_equality_is_false_and_ordering_errors() {
        assert!(!Literal::str("5").sem_eq(&Literal::Int(5)));
        assert!(CompareOp::Ne.apply(&Literal::str("5"), &Literal::Int(5)).unwrap());
        assert!(CompareOp::Gt.apply(&Literal::str("5"), &Literal::Int(5)).is_err());
        assert!(Literal::Bool(true).sem_cmp(&Literal::Int(1)).is_err());
    }

    #[test]
    fn tagged_syntax() {
        assert_eq!(Literal::parse_tagged("i:42").unwrap(), Literal::Int(42));
        assert_eq!(Literal::parse_tagged("d:3.5").unwrap(), Literal::Dec(3.5));
        assert_eq!(Literal::parse_tagged("b:true").unwrap(), Literal::Bool(true));
        assert_eq!(
            Literal::parse_tagged(r#""Lake \"P\" Placid""#).unwrap(),
            Literal::str("Lake \"P\" Placid")
        );
        assert!(Literal::parse_tagged("x:1").is_err());
        assert!(Literal::parse_tagged("\"open").is_err());
        assert_eq!(Literal::Dec(2.0).to_tagged(), "d:2.0");
    }

    proptest::proptest! {
        #[test]
        fn tagged_roundtrip(s in "[ -~]{0,12}", i in proptest::num::i64::ANY, d in -1e9f64..1e9, b in proptest::bool::ANY) {
            for lit in [Literal::Str(s.clone()), Literal::Int(i), Literal::Dec(d), Literal::Bool(b)] {
                let back = Literal::parse_tagged(&lit.to_tagged()).unwrap();
                proptest::prop_assert_eq!(back, lit);
            }
        }
    }
}
