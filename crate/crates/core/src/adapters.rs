//! Pure nonconformity-score transforms over probability tables.
//!
//! These adapters turn stage outputs (tag probabilities, entity candidate
//! scores, type entailment tables) into scalar scores in [0, 1]. No model
//! runs here; callers supply the probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-position predicted-tag probabilities of a tagged sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTagProbs {
    pub positions: Vec<TagPosition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagPosition {
    /// Probability of the predicted tag at this position.
    pub prob: f64,
    /// Whether the position belongs to an entity span.
    pub in_entity_span: bool,
}

impl TokenTagProbs {
    pub fn new(positions: Vec<TagPosition>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyCalibrationSet);
        }
        for (index, p) in positions.iter().enumerate() {
            if !(p.prob.is_finite() && (0.0..=1.0).contains(&p.prob)) {
                return Err(Error::InvalidProbability {
                    index,
                    value: p.prob,
                });
            }
        }
        Ok(Self { positions })
    }
}

/// Top-ranked entity candidate score for a disambiguation stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntityScore {
    pub top_score: f64,
}

impl CandidateEntityScore {
    pub fn new(top_score: f64) -> Result<Self> {
        if !(top_score.is_finite() && (0.0..=1.0).contains(&top_score)) {
            return Err(Error::InvalidProbability {
                index: 0,
                value: top_score,
            });
        }
        Ok(Self { top_score })
    }
}

/// Types x spans grid of entailment probabilities for an entity-typing stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypingProbTable {
    pub types: Vec<String>,
    pub spans: Vec<String>,
    /// probs[t][s] = probability that span s has type t.
    pub probs: Vec<Vec<f64>>,
}

impl TypingProbTable {
    pub fn new(types: Vec<String>, spans: Vec<String>, probs: Vec<Vec<f64>>) -> Result<Self> {
        if types.is_empty() || spans.is_empty() {
            return Err(Error::EmptyCalibrationSet);
        }
        if probs.len() != types.len() {
            return Err(Error::StageCountMismatch {
                row: 0,
                found: probs.len(),
                expected: types.len(),
            });
        }
        for (t, row) in probs.iter().enumerate() {
            if row.len() != spans.len() {
                return Err(Error::StageCountMismatch {
                    row: t,
                    found: row.len(),
                    expected: spans.len(),
                });
            }
            for (s, &p) in row.iter().enumerate() {
                if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                    return Err(Error::InvalidProbability {
                        index: t * spans.len() + s,
                        value: p,
                    });
                }
            }
        }
        Ok(Self {
            types,
            spans,
            probs,
        })
    }
}

/// Tagging nonconformity: the largest 1 - p over entity-span positions.
/// Sentences without entity positions score 0 (trivially conformal), the
/// same convention [`ned_score`] uses for entity-free sentences.
pub fn ner_score(probs: &TokenTagProbs) -> f64 {
    probs
        .positions
        .iter()
        .filter(|p| p.in_entity_span)
        .map(|p| 1.0 - p.prob)
        .fold(0.0, f64::max)
}

/// Disambiguation nonconformity: 1 - top candidate score, or 0 when the
/// sentence has no entities to disambiguate.
pub fn ned_score(cand: &CandidateEntityScore, has_entities: bool) -> f64 {
    if has_entities {
        1.0 - cand.top_score
    } else {
        0.0
    }
}

/// Typing nonconformity: 1 - max over types of the min entailment
/// probability across the entity's spans.
pub fn typing_score(table: &TypingProbTable) -> f64 {
    let best = table
        .probs
        .iter()
        .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
        .fold(f64::NEG_INFINITY, f64::max);
    1.0 - best
}
