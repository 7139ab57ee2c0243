//! Validity battery: permutation re-split test, mismatched-score negative
//! control, split-integrity audit, and the two-path acceptance audit.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::{AlphaLevel, ScoreMatrix};
use crate::quantile::conformal_quantile;
use crate::synthetic::mean_std;
use crate::threshold::{accept, CalibrationMethod, ThresholdVector};

/// Result of the permutation re-split test. Under exchangeability the
/// permutation mean tracks 1 - alpha.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub actual_coverage: f64,
    pub permutation_mean: f64,
    pub permutation_std: f64,
    pub n_permutations: usize,
    pub alpha: AlphaLevel,
}

fn coverage_fraction(scores: &[f64], threshold: f64) -> f64 {
    scores.iter().filter(|&&s| s <= threshold).count() as f64 / scores.len() as f64
}

/// Pool calibration and test scores, then repeatedly re-split at the
/// original sizes, recalibrate on the pseudo-calibration part and measure
/// coverage on the pseudo-test part.
pub fn permutation_test(
    cal_scores: &[f64],
    test_scores: &[f64],
    alpha: AlphaLevel,
    n_permutations: usize,
    seed: u64,
) -> Result<PermutationResult> {
    if cal_scores.is_empty() || test_scores.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    if n_permutations < 2 {
        return Err(Error::TooFewPermutations {
            value: n_permutations,
        });
    }
    if let Some(index) = test_scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore { index });
    }

    let actual_threshold = conformal_quantile(cal_scores, alpha)?;
    let actual_coverage = coverage_fraction(test_scores, actual_threshold);

    let n = cal_scores.len();
    let mut pool: Vec<f64> = cal_scores.iter().chain(test_scores).copied().collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut coverages = Vec::with_capacity(n_permutations);
    for _ in 0..n_permutations {
        pool.shuffle(&mut rng);
        let threshold = conformal_quantile(&pool[..n], alpha)?;
        coverages.push(coverage_fraction(&pool[n..], threshold));
    }
    let (permutation_mean, permutation_std) = mean_std(&coverages);
    Ok(PermutationResult {
        actual_coverage,
        permutation_mean,
        permutation_std,
        n_permutations,
        alpha,
    })
}

/// Calibrate a threshold on one stage's calibration scores and measure
/// coverage on another stage's test scores. With mismatched stages this is
/// the negative control: the guarantee must visibly fail when score
/// matching is broken. With equal stages it is ordinary per-stage CP.
pub fn negative_control(
    cal: &ScoreMatrix,
    test: &ScoreMatrix,
    calibrate_stage: usize,
    evaluate_stage: usize,
    alpha: AlphaLevel,
) -> Result<f64> {
    let threshold = conformal_quantile(&cal.column(calibrate_stage)?, alpha)?;
    Ok(coverage_fraction(&test.column(evaluate_stage)?, threshold))
}

/// One raw text record of a data split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub id: String,
    pub text: String,
}

/// A token sequence found in two or more splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateGroup {
    pub content_hash: String,
    pub token_count: usize,
    /// Token count at or below the trivial threshold: formatting noise
    /// rather than a substantive example.
    pub trivial: bool,
    /// Member record ids keyed by split name.
    pub members: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub cross_split_duplicates: usize,
    pub trivial_flagged: usize,
    pub groups: Vec<DuplicateGroup>,
}

fn content_hash(tokens: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for (i, token) in tokens.iter().enumerate() {
        if i > 0 {
            hasher.update([0x1f]);
        }
        hasher.update(token.as_bytes());
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(digest.len() * 2);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// Cross-split duplicate detection by whitespace-normalized token hash.
///
/// Records are trimmed and internal whitespace collapsed before hashing, so
/// formatting differences do not hide a duplicate. Groups with a token
/// count at or below `trivial_token_threshold` are flagged trivial.
pub fn split_audit(
    splits: &BTreeMap<String, Vec<SplitRecord>>,
    trivial_token_threshold: usize,
) -> Result<AuditResult> {
    if splits.len() < 2 {
        return Err(Error::TooFewSplits {
            value: splits.len(),
        });
    }
    struct Group {
        token_count: usize,
        members: BTreeMap<String, Vec<String>>,
    }
    let mut by_hash: BTreeMap<String, Group> = BTreeMap::new();
    for (split_name, records) in splits {
        for record in records {
            let tokens: Vec<&str> = record.text.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            let hash = content_hash(&tokens);
            let group = by_hash.entry(hash).or_insert_with(|| Group {
                token_count: tokens.len(),
                members: BTreeMap::new(),
            });
            group
                .members
                .entry(split_name.clone())
                .or_default()
                .push(record.id.clone());
        }
    }
    let groups: Vec<DuplicateGroup> = by_hash
        .into_iter()
        .filter(|(_, g)| g.members.len() >= 2)
        .map(|(content_hash, g)| DuplicateGroup {
            content_hash,
            token_count: g.token_count,
            trivial: g.token_count <= trivial_token_threshold,
            members: g.members,
        })
        .collect();
    Ok(AuditResult {
        cross_split_duplicates: groups.len(),
        trivial_flagged: groups.iter().filter(|g| g.trivial).count(),
        groups,
    })
}

/// Comparison used by the max-score path of the definition audit. `Strict`
/// exists purely as fault injection: the audit must catch a strict
/// comparison drifting from the inclusive acceptance rule on boundary rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxComparison {
    Inclusive,
    Strict,
}

/// One traced row of the definition audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub row: usize,
    pub max_score: f64,
    pub threshold: f64,
    pub per_stage_path: bool,
    pub max_path: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eAuditReport {
    pub n_traced: usize,
    pub all_matched: bool,
    pub trace: Vec<TraceRow>,
}

/// Verify, on randomly traced test rows, that "every stage is covered"
/// (per-stage comparisons) agrees with "the row maximum is at or below the
/// shared quantile" (a separate code path). Requires pasc thresholds.
pub fn e2e_definition_audit(
    test: &ScoreMatrix,
    thresholds: &ThresholdVector,
    n_samples_traced: usize,
    seed: u64,
) -> Result<E2eAuditReport> {
    e2e_definition_audit_with_comparison(
        test,
        thresholds,
        n_samples_traced,
        seed,
        MaxComparison::Inclusive,
    )
}

/// Same audit with an explicit comparison mode on the max-score path; see
/// [`MaxComparison`].
pub fn e2e_definition_audit_with_comparison(
    test: &ScoreMatrix,
    thresholds: &ThresholdVector,
    n_samples_traced: usize,
    seed: u64,
    comparison: MaxComparison,
) -> Result<E2eAuditReport> {
    if thresholds.method() != CalibrationMethod::Pasc {
        return Err(Error::AuditRequiresPasc {
            method: thresholds.method().name().into(),
        });
    }
    if n_samples_traced > test.n_samples() {
        return Err(Error::TraceCountExceedsRows {
            requested: n_samples_traced,
            available: test.n_samples(),
        });
    }
    let shared_q = thresholds.values()[0];

    let mut indices: Vec<usize> = (0..test.n_samples()).collect();
    indices.shuffle(&mut ChaCha12Rng::seed_from_u64(seed));
    indices.truncate(n_samples_traced);
    indices.sort_unstable();

    let mut trace = Vec::with_capacity(n_samples_traced);
    for row in indices {
        let scores = test.row(row);
        let per_stage_path = accept(scores, thresholds)?.e2e_covered;

        // Second path: recompute the maximum by explicit iteration and
        // compare it against the shared quantile on its own.
        let mut max_score = scores[0];
        for &s in &scores[1..] {
            if s > max_score {
                max_score = s;
            }
        }
        let max_path = match comparison {
            MaxComparison::Inclusive => max_score <= shared_q,
            MaxComparison::Strict => max_score < shared_q,
        };

        if per_stage_path != max_path {
            return Err(Error::E2eDefinitionMismatch {
                row,
                per_stage_path,
                max_path,
                max_score,
                threshold: shared_q,
            });
        }
        trace.push(TraceRow {
            row,
            max_score,
            threshold: shared_q,
            per_stage_path,
            max_path,
        });
    }
    Ok(E2eAuditReport {
        n_traced: trace.len(),
        all_matched: true,
        trace,
    })
}
