//! Reading the on-disk inputs: graph files, mention dictionaries, question
//! files, scripted-suggester fixtures and mapping sets.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cabq_core::extraction::{MentionDict, ScriptedEntry, ScriptedSuggester};
use cabq_core::graph::GraphError;
use cabq_core::render::MappingSet;
use cabq_core::{load_graph, Graph};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Graph { path: PathBuf, source: GraphError },
    #[error("{path}:{line}: {source}")]
    Json { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("{path}: duplicate question id `{id}`")]
    DuplicateQuestion { path: PathBuf, id: String },
}

fn read(path: &Path) -> Result<String, InputError> {
    fs::read_to_string(path).map_err(|source| InputError::Io { path: path.to_path_buf(), source })
}

fn json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, InputError> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|source| InputError::Json { path: path.to_path_buf(), line: source.line(), source })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A loaded graph plus the hash of its source text (the cache namespace).
pub struct LoadedGraph {
    pub graph: Graph,
    pub hash: String,
}

pub fn read_graph(path: &Path) -> Result<LoadedGraph, InputError> {
    let text = read(path)?;
    let graph = load_graph(&text).map_err(|source| InputError::Graph { path: path.to_path_buf(), source })?;
    Ok(LoadedGraph { graph, hash: sha256_hex(text.as_bytes()) })
}

/// Surface forms are lowercased on load.
pub fn read_dict(path: &Path) -> Result<MentionDict, InputError> {
    let raw: BTreeMap<String, String> = json(path)?;
    Ok(raw.into_iter().map(|(k, v)| (k.to_lowercase(), v)).collect())
}

/// One line of a questions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    /// Entity-linking hints; when present they replace the linker.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Vec<String>>,
    /// Gold answers (display names).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<Vec<String>>,
}

pub fn parse_questions(text: &str, path: &Path) -> Result<Vec<QuestionRecord>, InputError> {
    let mut out: Vec<QuestionRecord> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: QuestionRecord = serde_json::from_str(line)
            .map_err(|source| InputError::Json { path: path.to_path_buf(), line: i + 1, source })?;
        if !seen.insert(q.id.clone()) {
            return Err(InputError::DuplicateQuestion { path: path.to_path_buf(), id: q.id });
        }
        out.push(q);
    }
    Ok(out)
}

pub fn read_questions(path: &Path) -> Result<Vec<QuestionRecord>, InputError> {
    parse_questions(&read(path)?, path)
}

/// JSON object keyed by question id, each value a `{select, inject, answer}`
/// entry.
pub fn read_suggester(path: &Path) -> Result<ScriptedSuggester, InputError> {
    let entries: BTreeMap<String, ScriptedEntry> = json(path)?;
    Ok(ScriptedSuggester::new(entries))
}

pub fn read_mapping(path: &Path) -> Result<MappingSet, InputError> {
    json(path)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, InputError> {
    json(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn questions_jsonl() {
        let text = "{\"id\":\"q1\",\"question\":\"a?\"}\n\n{\"id\":\"q2\",\"question\":\"b?\",\"entities\":[\"USA\"],\"answers\":[\"X\"]}\n";
        let qs = parse_questions(text, Path::new("q.jsonl")).unwrap();
        assert_eq!(qs.len(), 2);
        assert_eq!(qs[1].entities.as_deref(), Some(&["USA".to_string()][..]));
        let dup = "{\"id\":\"q1\",\"question\":\"a?\"}\n{\"id\":\"q1\",\"question\":\"b?\"}";
        assert!(matches!(parse_questions(dup, Path::new("q")), Err(InputError::DuplicateQuestion { .. })));
        match parse_questions("{\"id\":1}", Path::new("q")) {
            Err(InputError::Json { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }
}
