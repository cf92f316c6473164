//! Answer-set quality scores and latency percentiles.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub em: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Trim and case-fold before comparing answers.
pub fn normalize_answer(s: &str) -> String {
    s.trim().to_lowercase()
}

pub fn normalize_answers<'a, I: IntoIterator<Item = &'a String>>(items: I) -> BTreeSet<String> {
    items.into_iter().map(|s| normalize_answer(s)).collect()
}

/// Scores two already-normalized sets. Two empty sets count as a perfect
/// match so that `em == 1` and `f1 == 1` always coincide.
pub fn score_sets<T: Ord>(predicted: &BTreeSet<T>, gold: &BTreeSet<T>) -> QualityScores {
    if predicted.is_empty() && gold.is_empty() {
        return QualityScores { em: 1.0, precision: 1.0, recall: 1.0, f1: 1.0 };
    }
    let hit = predicted.intersection(gold).count() as f64;
    let precision = if predicted.is_empty() { 0.0 } else { hit / predicted.len() as f64 };
    let recall = if gold.is_empty() { 0.0 } else { hit / gold.len() as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    QualityScores {
        em: if predicted == gold { 1.0 } else { 0.0 },
        precision,
        recall,
        f1,
    }
}

/// Scores answer strings after trimming and case-folding.
pub fn score_answers(predicted: &BTreeSet<String>, gold: &BTreeSet<String>) -> QualityScores {
    score_sets(&normalize_answers(predicted), &normalize_answers(gold))
}

/// Per-question average of each score.
pub fn average(scores: &[QualityScores]) -> QualityScores {
    if scores.is_empty() {
        return QualityScores { em: 0.0, precision: 0.0, recall: 0.0, f1: 0.0 };
    }
    let n = scores.len() as f64;
    let sum = |f: fn(&QualityScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
    QualityScores {
        em: sum(|s| s.em),
        precision: sum(|s| s.precision),
        recall: sum(|s| s.recall),
        f1: sum(|s| s.f1),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no latency samples")]
pub struct EmptySamples;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub p50: u64,
    pub p95: u64,
    pub count: usize,
}

/// Nearest-rank percentile: the value at rank `ceil(pct/100 * N)`.
pub fn percentile(sorted: &[u64], pct: u32) -> u64 {
    let n = sorted.len();
    let rank = (pct as usize * n).div_ceil(100).max(1);
    sorted[rank.min(n) - 1]
}

pub fn summarize_latency(samples: &[u64]) -> Result<LatencySummary, EmptySamples> {
    if samples.is_empty() {
        return Err(EmptySamples);
    }
    let mut sorted: Vec<u64> = samples.to_vec();
    sorted.sort_unstable();
    Ok(LatencySummary {
        p50: percentile(&sorted, 50),
        p95: percentile(&sorted, 95),
        count: sorted.len(),
    })
}
