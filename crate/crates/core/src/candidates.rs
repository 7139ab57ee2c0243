//! Candidate label lists for prediction-set evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One candidate label with its nonconformity score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: String,
    pub score: f64,
}

/// Candidate list for one (sample, stage) pair, optionally with the ground
/// truth label for set-membership coverage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCandidates {
    pub candidates: Vec<Candidate>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub true_label: Option<String>,
}

impl StageCandidates {
    /// True when the ground-truth label is absent from the candidate list.
    /// Such samples can never be set-covered, whatever the threshold.
    #[must_use]
    pub fn true_label_out_of_set(&self) -> Option<bool> {
        self.true_label
            .as_ref()
            .map(|t| !self.candidates.iter().any(|c| &c.label == t))
    }
}

/// Per-sample, per-stage candidate lists. Stages without a label space hold
/// `None`; at least one entry must be present overall.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionCandidates {
    n_stages: usize,
    entries: Vec<Vec<Option<StageCandidates>>>,
}

impl PredictionCandidates {
    pub fn new(entries: Vec<Vec<Option<StageCandidates>>>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::NoCandidateEntries);
        }
        let n_stages = entries[0].len();
        let mut any = false;
        for (sample, row) in entries.iter().enumerate() {
            if row.len() != n_stages {
                return Err(Error::StageCountMismatch {
                    row: sample,
                    found: row.len(),
                    expected: n_stages,
                });
            }
            for (stage, entry) in row.iter().enumerate() {
                let Some(entry) = entry else { continue };
                any = true;
                if entry.candidates.is_empty() {
                    return Err(Error::EmptyCandidateList { sample, stage });
                }
                for cand in &entry.candidates {
                    if !cand.score.is_finite() {
                        return Err(Error::NonFiniteMatrixScore { row: sample, stage });
                    }
                }
            }
        }
        if !any {
            return Err(Error::NoCandidateEntries);
        }
        Ok(Self { n_stages, entries })
    }

    #[must_use]
    pub fn n_samples(&self) -> usize {
        self.entries.len()
    }

    #[must_use]
    pub fn n_stages(&self) -> usize {
        self.n_stages
    }

    #[must_use]
    pub fn entry(&self, sample: usize, stage: usize) -> Option<&StageCandidates> {
        self.entries[sample][stage].as_ref()
    }

    #[must_use]
    pub fn entries(&self) -> &[Vec<Option<StageCandidates>>] {
        &self.entries
    }

    /// Subset aligned with `ScoreMatrix::select_rows`.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.entries[i].clone()).collect())
    }
}

/// Aggregate set statistics for a threshold vector applied to candidates.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct SetStats {
    pub total_size: usize,
    pub pairs: usize,
    pub true_label_known: usize,
    pub true_label_covered: usize,
}

impl SetStats {
    pub fn avg_set_size(&self) -> f64 {
        self.total_size as f64 / self.pairs as f64
    }

    pub fn membership_coverage(&self) -> Option<f64> {
        if self.true_label_known == 0 {
            None
        } else {
            Some(self.true_label_covered as f64 / self.true_label_known as f64)
        }
    }
}

/// Shared counting pass: set sizes and true-label membership under the
/// inclusive `score <= q` rule. Used by both the tuned-search objective and
/// the prediction-set report so the two can never drift apart.
pub(crate) fn set_stats(cands: &PredictionCandidates, thresholds: &[f64]) -> Result<SetStats> {
    if cands.n_stages() > thresholds.len() {
        return Err(Error::MissingStageThreshold {
            stage: thresholds.len(),
            n_thresholds: thresholds.len(),
        });
    }
    let mut stats = SetStats::default();
    for row in cands.entries() {
        for (stage, entry) in row.iter().enumerate() {
            let Some(entry) = entry else { continue };
            let q = thresholds[stage];
            let mut size = 0usize;
            let mut covered = false;
            for cand in &entry.candidates {
                if cand.score <= q {
                    size += 1;
                    if Some(&cand.label) == entry.true_label.as_ref() {
                        covered = true;
                    }
                }
            }
            stats.total_size += size;
            stats.pairs += 1;
            if entry.true_label.is_some() {
                stats.true_label_known += 1;
                if covered {
                    stats.true_label_covered += 1;
                }
            }
        }
    }
    if stats.pairs == 0 {
        return Err(Error::NoCandidateEntries);
    }
    Ok(stats)
}
