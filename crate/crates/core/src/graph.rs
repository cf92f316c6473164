//! In-memory labeled property graph with subject/predicate/object indexes.
//!
//! Graph file format, one record per line:
//!
//! ```text
//! # comment
//! N <id> <type>[,<type>...]
//! P <id> <key> <literal>
//! T <subject> <predicate> <object-id>
//! L <subject> <predicate> <literal>
//! ```
//!
//! Literals are `"str"`, `i:42`, `d:3.5` or `b:true`. Node declarations may
//! appear after the records that reference them.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::literal::{Literal, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("dangling reference to unknown entity {0:?}")]
    DanglingReference(String),
    #[error("unknown entity {0:?}")]
    UnknownEntity(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: String,
    pub types: BTreeSet<String>,
    pub properties: BTreeMap<String, Literal>,
}

impl Entity {
    pub fn new(id: impl Into<String>) -> Self {
        Entity {
            id: id.into(),
            types: BTreeSet::new(),
            properties: BTreeMap::new(),
        }
    }

    pub fn has_type(&self, label: &str) -> bool {
        self.types.contains(label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: Value,
}

/// Immutable once built; share it by reference across workers.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    entities: BTreeMap<String, Entity>,
    triples: Vec<Triple>,
    by_subject: BTreeMap<String, Vec<usize>>,
    by_predicate: BTreeMap<String, Vec<usize>>,
    by_object: BTreeMap<Value, Vec<usize>>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities && self.triples == other.triples
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares an entity, merging types if it already exists.
    pub fn add_entity<I, S>(&mut self, id: &str, types: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entity = self
            .entities
            .entry(id.to_string())
            .or_insert_with(|| Entity::new(id));
        entity.types.extend(types.into_iter().map(Into::into));
    }

    pub fn set_property(&mut self, id: &str, key: &str, value: Literal) -> Result<(), GraphError> {
        let entity = self
            .entities
            .get_mut(id)
            .ok_or_else(|| GraphError::DanglingReference(id.to_string()))?;
        entity.properties.insert(key.to_string(), value);
        Ok(())
    }

    pub fn add_triple(&mut self, triple: Triple) -> Result<(), GraphError> {
        if !self.entities.contains_key(&triple.subject) {
            return Err(GraphError::DanglingReference(triple.subject));
        }
        if let Value::Entity(o) = &triple.object {
            if !self.entities.contains_key(o) {
                return Err(GraphError::DanglingReference(o.clone()));
            }
        }
        let idx = self.triples.len();
        self.by_subject
            .entry(triple.subject.clone())
            .or_default()
            .push(idx);
        self.by_predicate
            .entry(triple.predicate.clone())
            .or_default()
            .push(idx);
        self.by_object
            .entry(triple.object.clone())
            .or_default()
            .push(idx);
        self.triples.push(triple);
        Ok(())
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entities.contains_key(id)
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn triple(&self, idx: usize) -> &Triple {
        &self.triples[idx]
    }

    pub fn with_subject(&self, id: &str) -> &[usize] {
        self.by_subject.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn with_predicate(&self, predicate: &str) -> &[usize] {
        self.by_predicate
            .get(predicate)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn with_object(&self, object: &Value) -> &[usize] {
        self.by_object.get(object).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn predicates(&self) -> impl Iterator<Item = &str> {
        self.by_predicate.keys().map(String::as_str)
    }

    pub fn entities_of_type<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a Entity> + 'a {
        self.entities.values().filter(move |e| e.has_type(label))
    }

    /// All literal values reachable from `id` under `key`: the node property
    /// plus any literal-object triples with that predicate.
    pub fn values_of<'a>(&'a self, id: &'a str, key: &'a str) -> impl Iterator<Item = &'a Literal> + 'a {
        let prop = self
            .entities
            .get(id)
            .and_then(|e| e.properties.get(key));
        let triples = self.with_subject(id).iter().filter_map(move |&i| {
            let t = &self.triples[i];
            match &t.object {
                Value::Literal(l) if t.predicate == key => Some(l),
                _ => None,
            }
        });
        prop.into_iter().chain(triples)
    }

    /// Human-facing label: the `name` property when present, else the id.
    pub fn display_name(&self, value: &Value) -> String {
        match value {
            Value::Entity(id) => match self.entities.get(id).and_then(|e| e.properties.get("name")) {
                Some(Literal::Str(name)) => name.clone(),
                _ => id.clone(),
            },
            Value::Literal(l) => l.to_string(),
        }
    }

    /// Index consistency check: every index entry points at a stored triple
    /// with the matching key and every index covers each triple exactly once.
    pub fn check_indexes(&self) -> bool {
        let n = self.triples.len();
        let total = |m: &dyn Fn() -> usize| m() == n;
        let subj_ok = self.by_subject.iter().all(|(k, v)| v.iter().all(|&i| &self.triples[i].subject == k));
        let pred_ok = self.by_predicate.iter().all(|(k, v)| v.iter().all(|&i| &self.triples[i].predicate == k));
        let obj_ok = self.by_object.iter().all(|(k, v)| v.iter().all(|&i| &self.triples[i].object == k));
        subj_ok
            && pred_ok
            && obj_ok
            && total(&|| self.by_subject.values().map(Vec::len).sum())
            && total(&|| self.by_predicate.values().map(Vec::len).sum())
            && total(&|| self.by_object.values().map(Vec::len).sum())
    }

    /// Undirected adjacency over entity-object triples.
    fn neighbours(&self, id: &str) -> impl Iterator<Item = &str> {
        let out = self
            .with_subject(id)
            .iter()
            .filter_map(move |&i| self.triples[i].object.as_entity());
        let key = Value::Entity(id.to_string());
        let inc: Vec<&str> = self
            .with_object(&key)
            .iter()
            .map(|&i| self.triples[i].subject.as_str())
            .collect();
        out.chain(inc)
    }

    /// Union of the subgraphs induced by the entities within undirected
    /// distance `k` of each seed.
    pub fn k_hop_subgraph(&self, seeds: &BTreeSet<String>, k: usize) -> Result<Graph, GraphError> {
        for s in seeds {
            if !self.contains(s) {
                return Err(GraphError::UnknownEntity(s.clone()));
            }
        }
        let mut dist: BTreeMap<&str, usize> = BTreeMap::new();
        let mut queue = VecDeque::new();
        for s in seeds {
            dist.insert(s.as_str(), 0);
            queue.push_back(s.as_str());
        }
        while let Some(v) = queue.pop_front() {
            let d = dist[v];
            if d == k {
                continue;
            }
            for n in self.neighbours(v) {
                if !dist.contains_key(n) {
                    dist.insert(n, d + 1);
                    queue.push_back(n);
                }
            }
        }
        let mut sub = Graph::new();
        for id in dist.keys() {
            sub.entities.insert(id.to_string(), self.entities[*id].clone());
        }
        for t in &self.triples {
            let inside = dist.contains_key(t.subject.as_str())
                && match &t.object {
                    Value::Entity(o) => dist.contains_key(o.as_str()),
                    Value::Literal(_) => true,
                };
            if inside {
                sub.add_triple(t.clone())?;
            }
        }
        Ok(sub)
    }

    /// Serialises back to the graph file format.
    pub fn to_graph_file(&self) -> String {
        let mut out = String::new();
        for e in self.entities.values() {
            let types: Vec<&str> = e.types.iter().map(String::as_str).collect();
            if types.is_empty() {
                out.push_str(&format!("N {}\n", e.id));
            } else {
                out.push_str(&format!("N {} {}\n", e.id, types.join(",")));
            }
        }
        for e in self.entities.values() {
            for (k, v) in &e.properties {
                out.push_str(&format!("P {} {} {}\n", e.id, k, v.to_tagged()));
            }
        }
        for t in &self.triples {
            match &t.object {
                Value::Entity(o) => out.push_str(&format!("T {} {} {}\n", t.subject, t.predicate, o)),
                Value::Literal(l) => {
                    out.push_str(&format!("L {} {} {}\n", t.subject, t.predicate, l.to_tagged()))
                }
            }
        }
        out
    }
}

enum Record<'a> {
    Prop(&'a str, &'a str, Literal),
    Edge(&'a str, &'a str, &'a str),
    Lit(&'a str, &'a str, Literal),
}

/// Parses graph-file content.
pub fn load_graph(source: &str) -> Result<Graph, GraphError> {
    let mut g = Graph::new();
    let mut records = Vec::new();
    for (i, raw) in source.lines().enumerate() {
        let line = i + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let err = |reason: &str| GraphError::Parse {
            line,
            reason: reason.to_string(),
        };
        let mut parts = text.splitn(2, char::is_whitespace);
        let tag = parts.next().unwrap_or("");
        let rest = parts.next().unwrap_or("").trim_start();
        match tag {
            "N" => {
                let mut f = rest.split_whitespace();
                let id = f.next().ok_or_else(|| err("node record without id"))?;
                let types: Vec<&str> = match f.next() {
                    Some(t) => t.split(',').filter(|s| !s.is_empty()).collect(),
                    None => Vec::new(),
                };
                if f.next().is_some() {
                    return Err(err("unexpected trailing fields in node record"));
                }
                g.add_entity(id, types);
            }
            "P" | "L" => {
                let mut f = rest.splitn(3, char::is_whitespace);
                let id = f.next().filter(|s| !s.is_empty()).ok_or_else(|| err("missing subject"))?;
                let key = f.next().filter(|s| !s.is_empty()).ok_or_else(|| err("missing key"))?;
                let lit_text = f.next().ok_or_else(|| err("missing literal"))?;
                let lit = Literal::parse_tagged(lit_text).map_err(|r| err(&r))?;
                records.push((line, if tag == "P" { Record::Prop(id, key, lit) } else { Record::Lit(id, key, lit) }));
            }
            "T" => {
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.len() != 3 {
                    return Err(err("triple record needs subject, predicate and object"));
                }
                records.push((line, Record::Edge(f[0], f[1], f[2])));
            }
            other => return Err(err(&format!("unknown record tag {other:?}"))),
        }
    }
    for (_, rec) in records {
        match rec {
            Record::Prop(id, key, lit) => g.set_property(id, key, lit)?,
            Record::Edge(s, p, o) => g.add_triple(Triple {
                subject: s.to_string(),
                predicate: p.to_string(),
                object: Value::entity(o),
            })?,
            Record::Lit(s, p, lit) => g.add_triple(Triple {
                subject: s.to_string(),
                predicate: p.to_string(),
                object: Value::Literal(lit),
            })?,
        }
    }
    Ok(g)
}
