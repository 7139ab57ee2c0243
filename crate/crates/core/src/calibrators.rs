//! The four calibration strategies: independent per-stage CP, Bonferroni,
//! tuned Bonferroni (grid-searched allocation), and pasc (split CP on the
//! joint maximum score).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{set_stats, PredictionCandidates};
use crate::error::{Error, Result};
use crate::matrix::{AlphaLevel, ScoreMatrix};
use crate::quantile::{conformal_quantile, conformal_rank, joint_max_scores};
use crate::threshold::{CalibrationMethod, ThresholdVector};

/// What the tuned-allocation search optimizes on the held-out tuning set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TunedObjective {
    MinAvgSetSize,
    MaxE2eCoverage,
}

/// Configuration for the tuned Bonferroni grid search.
///
/// The grid enumerates allocations (a_1..a_K) with each a_k a positive
/// multiple of `grid_step`, a_k >= `min_per_stage`, and sum a_k = alpha
/// exactly on the grid. The tuning matrix must be disjoint from the
/// calibration data; overlap is detected through sample ids when present.
#[derive(Debug, Clone)]
pub struct TunedSearchSpec {
    pub grid_step: f64,
    pub min_per_stage: f64,
    pub objective: TunedObjective,
    pub tuning: ScoreMatrix,
    pub candidates: Option<PredictionCandidates>,
}

pub const DEFAULT_GRID_STEP: f64 = 0.005;

impl TunedSearchSpec {
    /// Spec with the default grid (step 0.005, minimum one step per stage)
    /// and the set-size objective.
    pub fn new(tuning: ScoreMatrix, candidates: Option<PredictionCandidates>) -> Self {
        Self {
            grid_step: DEFAULT_GRID_STEP,
            min_per_stage: DEFAULT_GRID_STEP,
            objective: TunedObjective::MinAvgSetSize,
            tuning,
            candidates,
        }
    }
}

/// Per-stage split CP at level alpha. No joint guarantee.
pub fn calibrate_independent(cal: &ScoreMatrix, alpha: AlphaLevel) -> Result<ThresholdVector> {
    let thresholds = per_stage_thresholds(cal, &vec![alpha.value(); cal.n_stages()])?;
    ThresholdVector::new(
        thresholds,
        CalibrationMethod::Independent,
        alpha,
        None,
        cal.n_samples(),
    )
}

/// Per-stage split CP at level alpha/K: uniform union-bound allocation.
pub fn calibrate_bonferroni(cal: &ScoreMatrix, alpha: AlphaLevel) -> Result<ThresholdVector> {
    let k = cal.n_stages();
    let per_stage = alpha.value() / k as f64;
    let allocation = vec![per_stage; k];
    let thresholds = per_stage_thresholds(cal, &allocation)?;
    ThresholdVector::new(
        thresholds,
        CalibrationMethod::Bonferroni,
        alpha,
        Some(allocation),
        cal.n_samples(),
    )
}

/// Split CP on the per-row maximum score: one quantile, shared by all
/// stages, certifying the joint acceptance event directly.
pub fn calibrate_pasc(cal: &ScoreMatrix, alpha: AlphaLevel) -> Result<ThresholdVector> {
    let maxes = joint_max_scores(cal);
    let q = conformal_quantile(&maxes, alpha)?;
    ThresholdVector::new(
        vec![q; cal.n_stages()],
        CalibrationMethod::Pasc,
        alpha,
        None,
        cal.n_samples(),
    )
}

/// Grid search over stage-wise allocations summing to alpha, scored on a
/// held-out tuning set. Ties break toward the lexicographically smallest
/// allocation, so the result does not depend on evaluation order.
pub fn calibrate_tuned_bonferroni(
    cal: &ScoreMatrix,
    alpha: AlphaLevel,
    spec: &TunedSearchSpec,
) -> Result<ThresholdVector> {
    if spec.tuning.n_stages() != cal.n_stages() {
        return Err(Error::MatrixStageMismatch {
            found: spec.tuning.n_stages(),
            expected: cal.n_stages(),
        });
    }
    check_tuning_leakage(cal, &spec.tuning)?;
    if let Some(cands) = &spec.candidates {
        if cands.n_samples() != spec.tuning.n_samples() {
            return Err(Error::CandidateCountMismatch {
                found: cands.n_samples(),
                expected: spec.tuning.n_samples(),
            });
        }
    }

    let k = cal.n_stages();
    let steps = allocation_grid_steps(alpha.value(), k, spec.grid_step, spec.min_per_stage)?;

    // All candidate a_k are multiples of the grid step, so every stage
    // threshold the search can use comes from a fixed set of order
    // statistics; sort each column once and index.
    let n = cal.n_samples();
    let mut sorted_columns = Vec::with_capacity(k);
    for stage in 0..k {
        let mut col = cal.column(stage)?;
        col.sort_by(f64::total_cmp);
        sorted_columns.push(col);
    }
    let threshold_at = |stage: usize, m: usize| -> f64 {
        let rank = conformal_rank(n, m as f64 * spec.grid_step);
        if rank > n {
            f64::INFINITY
        } else {
            sorted_columns[stage][rank - 1]
        }
    };

    let scored: Vec<f64> = steps
        .par_iter()
        .map(|alloc| {
            let thresholds: Vec<f64> = alloc
                .iter()
                .enumerate()
                .map(|(stage, &m)| threshold_at(stage, m))
                .collect();
            objective_value(spec, &thresholds)
        })
        .collect::<Result<_>>()?;

    // Lower is better for both objectives after sign normalization; the
    // first best in lexicographic grid order wins ties.
    let mut best = 0usize;
    for i in 1..scored.len() {
        if scored[i] < scored[best] {
            best = i;
        }
    }

    let allocation: Vec<f64> = steps[best]
        .iter()
        .map(|&m| m as f64 * spec.grid_step)
        .collect();
    let thresholds: Vec<f64> = steps[best]
        .iter()
        .enumerate()
        .map(|(stage, &m)| threshold_at(stage, m))
        .collect();
    ThresholdVector::new(
        thresholds,
        CalibrationMethod::TunedBonferroni,
        alpha,
        Some(allocation),
        cal.n_samples(),
    )
}

/// Dispatch by method name; tuned calibration needs its search spec.
pub fn calibrate(
    cal: &ScoreMatrix,
    alpha: AlphaLevel,
    method: CalibrationMethod,
    tuned: Option<&TunedSearchSpec>,
) -> Result<ThresholdVector> {
    match method {
        CalibrationMethod::Independent => calibrate_independent(cal, alpha),
        CalibrationMethod::Bonferroni => calibrate_bonferroni(cal, alpha),
        CalibrationMethod::Pasc => calibrate_pasc(cal, alpha),
        CalibrationMethod::TunedBonferroni => {
            let spec = tuned.ok_or(Error::MissingTunedSpec)?;
            calibrate_tuned_bonferroni(cal, alpha, spec)
        }
    }
}

/// The allocations a tuned search enumerates, as alpha values per stage.
pub fn allocation_grid(
    alpha: f64,
    n_stages: usize,
    grid_step: f64,
    min_per_stage: f64,
) -> Result<Vec<Vec<f64>>> {
    let steps = allocation_grid_steps(alpha, n_stages, grid_step, min_per_stage)?;
    Ok(steps
        .into_iter()
        .map(|alloc| alloc.into_iter().map(|m| m as f64 * grid_step).collect())
        .collect())
}

fn allocation_grid_steps(
    alpha: f64,
    n_stages: usize,
    grid_step: f64,
    min_per_stage: f64,
) -> Result<Vec<Vec<usize>>> {
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(Error::GridStepMismatch { grid_step, alpha });
    }
    let total = (alpha / grid_step).round();
    if total < 1.0 || (alpha - total * grid_step).abs() > 1e-9 {
        return Err(Error::GridStepMismatch { grid_step, alpha });
    }
    let total = total as usize;
    let min_steps = ((min_per_stage / grid_step) - 1e-9).ceil().max(1.0) as usize;
    if min_steps * n_stages > total {
        return Err(Error::EmptyAllocationGrid {
            min_per_stage,
            n_stages,
            alpha,
        });
    }
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(n_stages);
    compositions(total, n_stages, min_steps, &mut current, &mut out);
    Ok(out)
}

/// All ways to write `total` as `parts` addends, each >= `min`, emitted in
/// lexicographic order.
fn compositions(
    total: usize,
    parts: usize,
    min: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if parts == 1 {
        if total >= min {
            current.push(total);
            out.push(current.clone());
            current.pop();
        }
        return;
    }
    let max_here = total - min * (parts - 1);
    for m in min..=max_here {
        current.push(m);
        compositions(total - m, parts - 1, min, current, out);
        current.pop();
    }
}

/// Objective normalized so lower is better.
fn objective_value(spec: &TunedSearchSpec, thresholds: &[f64]) -> Result<f64> {
    match spec.objective {
        TunedObjective::MinAvgSetSize => {
            let cands = spec.candidates.as_ref().ok_or(Error::MissingTuningCandidates)?;
            Ok(set_stats(cands, thresholds)?.avg_set_size())
        }
        TunedObjective::MaxE2eCoverage => {
            let covered = spec
                .tuning
                .rows()
                .iter()
                .filter(|row| row.iter().zip(thresholds).all(|(&s, &q)| s <= q))
                .count();
            Ok(-(covered as f64 / spec.tuning.n_samples() as f64))
        }
    }
}

fn per_stage_thresholds(cal: &ScoreMatrix, levels: &[f64]) -> Result<Vec<f64>> {
    let mut thresholds = Vec::with_capacity(levels.len());
    for (stage, &level) in levels.iter().enumerate() {
        let col = cal.column(stage)?;
        thresholds.push(conformal_quantile(&col, AlphaLevel::new(level)?)?);
    }
    Ok(thresholds)
}

fn check_tuning_leakage(cal: &ScoreMatrix, tuning: &ScoreMatrix) -> Result<()> {
    let (Some(cal_ids), Some(tuning_ids)) = (cal.sample_ids(), tuning.sample_ids()) else {
        return Ok(());
    };
    let cal_set: std::collections::HashSet<&str> = cal_ids.iter().map(String::as_str).collect();
    for id in tuning_ids {
        if cal_set.contains(id.as_str()) {
            return Err(Error::TuningLeakage { id: id.clone() });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::{Candidate, StageCandidates};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn alpha(a: f64) -> AlphaLevel {
        AlphaLevel::new(a).unwrap()
    }

    fn ladder_matrix(n_stages: usize) -> ScoreMatrix {
        // Each column is 0.1..0.9.
        ScoreMatrix::new(
            (1..=9)
                .map(|i| vec![i as f64 / 10.0; n_stages])
                .collect::<Vec<_>>(),
        )
        .unwrap()
    }

    #[test]
    fn independent_hand_order_statistic() {
        let t = calibrate_independent(&ladder_matrix(2), alpha(0.1)).unwrap();
        assert_eq!(t.values(), [0.9, 0.9]);
        assert_eq!(t.method(), CalibrationMethod::Independent);
        assert!(t.allocation().is_none());
    }

    #[test]
    fn identical_columns_give_identical_thresholds() {
        let t = calibrate_independent(&ladder_matrix(3), alpha(0.2)).unwrap();
        assert!(t.values().windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn bonferroni_records_uniform_allocation() {
        let m = ScoreMatrix::new(
            (0..100)
                .map(|i| vec![i as f64 / 100.0; 3])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let t = calibrate_bonferroni(&m, alpha(0.1)).unwrap();
        let alloc = t.allocation().unwrap();
        assert_eq!(alloc.len(), 3);
        for &a in alloc {
            assert!((a - 0.1 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bonferroni_degenerates_to_infinity_when_rank_overflows() {
        // n=9, alpha/K = 0.0333..: rank = ceil(10 * 0.9667) = 10 > 9.
        let t = calibrate_bonferroni(&ladder_matrix(3), alpha(0.1)).unwrap();
        assert!(t.values().iter().all(|q| q.is_infinite()));
    }

    #[test]
    fn pasc_thresholds_are_bit_identical() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..4).map(|_| rng.random()).collect())
            .collect();
        let t = calibrate_pasc(&ScoreMatrix::new(rows).unwrap(), alpha(0.1)).unwrap();
        let first = t.values()[0].to_bits();
        assert!(t.values().iter().all(|q| q.to_bits() == first));
    }

    #[test]
    fn pasc_on_all_zero_matrix() {
        let m = ScoreMatrix::new(vec![vec![0.0; 3]; 100]).unwrap();
        let t = calibrate_pasc(&m, alpha(0.1)).unwrap();
        assert_eq!(t.values(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn pasc_equals_dominating_stage_threshold() {
        // Stage 2 dominates every row, so the max column is stage 2 and the
        // pasc quantile equals independent CP's stage-2 threshold.
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..150)
            .map(|_| {
                let dominant: f64 = rng.random_range(0.5..1.0);
                vec![rng.random_range(0.0..0.5), dominant]
            })
            .collect();
        let m = ScoreMatrix::new(rows).unwrap();
        let pasc = calibrate_pasc(&m, alpha(0.1)).unwrap();
        let indep = calibrate_independent(&m, alpha(0.1)).unwrap();
        assert_eq!(pasc.values()[0], indep.values()[1]);
    }

    #[test]
    fn k1_all_methods_coincide() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let col: Vec<f64> = (0..57).map(|_| rng.random()).collect();
        let cal = ScoreMatrix::from_column(col.clone()).unwrap();
        let a = alpha(0.1);

        let q = conformal_quantile(&col, a).unwrap();
        let independent = calibrate_independent(&cal, a).unwrap();
        let bonferroni = calibrate_bonferroni(&cal, a).unwrap();
        let pasc = calibrate_pasc(&cal, a).unwrap();
        let tuning = ScoreMatrix::from_column((0..31).map(|_| rng.random()).collect()).unwrap();
        let tuned = calibrate_tuned_bonferroni(
            &cal,
            a,
            &TunedSearchSpec {
                grid_step: 0.1,
                min_per_stage: 0.1,
                objective: TunedObjective::MaxE2eCoverage,
                tuning,
                candidates: None,
            },
        )
        .unwrap();

        for t in [&independent, &bonferroni, &pasc, &tuned] {
            assert_eq!(t.values()[0].to_bits(), q.to_bits());
        }
    }

    #[test]
    fn grid_contains_the_lopsided_allocation() {
        let grid = allocation_grid(0.1, 3, 0.005, 0.005).unwrap();
        assert!(grid
            .iter()
            .any(|a| (a[0] - 0.09).abs() < 1e-12
                && (a[1] - 0.005).abs() < 1e-12
                && (a[2] - 0.005).abs() < 1e-12));
        // Compositions of 20 steps into 3 positive parts.
        assert_eq!(grid.len(), 171);
    }

    #[test]
    fn grid_errors() {
        assert!(matches!(
            allocation_grid(0.1, 3, 0.03, 0.03),
            Err(Error::GridStepMismatch { .. })
        ));
        assert!(matches!(
            allocation_grid(0.1, 3, 0.005, 0.05),
            Err(Error::EmptyAllocationGrid { .. })
        ));
    }

    #[test]
    fn tuning_leakage_is_rejected() {
        let ids = |prefix: &str, n: usize| -> Vec<String> {
            (0..n).map(|i| format!("{prefix}{i}")).collect()
        };
        let cal = ladder_matrix(2).with_sample_ids(ids("a", 9)).unwrap();
        let mut tuning_ids = ids("b", 9);
        tuning_ids[4] = "a3".to_string();
        let tuning = ladder_matrix(2).with_sample_ids(tuning_ids).unwrap();
        let err = calibrate_tuned_bonferroni(
            &cal,
            alpha(0.1),
            &TunedSearchSpec {
                grid_step: 0.05,
                min_per_stage: 0.05,
                objective: TunedObjective::MaxE2eCoverage,
                tuning,
                candidates: None,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::TuningLeakage { .. }));
    }

    #[test]
    fn set_size_objective_requires_candidates() {
        let cal = ladder_matrix(2);
        let err = calibrate_tuned_bonferroni(
            &cal,
            alpha(0.1),
            &TunedSearchSpec {
                grid_step: 0.05,
                min_per_stage: 0.05,
                objective: TunedObjective::MinAvgSetSize,
                tuning: ladder_matrix(2),
                candidates: None,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingTuningCandidates));
    }

    #[test]
    fn symmetric_data_ties_break_lexicographically() {
        // Identical columns and a tuning set every allocation covers fully:
        // all grid points tie at coverage 1.0, so the search must return the
        // lexicographically smallest allocation; the uniform allocation is
        // among the optima by symmetry.
        let n = 199;
        let cal = ScoreMatrix::new(
            (1..=n)
                .map(|i| vec![i as f64 / (n + 1) as f64; 3])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let tuning = ScoreMatrix::new(vec![vec![0.01; 3]; 40]).unwrap();
        let spec = TunedSearchSpec {
            grid_step: 0.005,
            min_per_stage: 0.005,
            objective: TunedObjective::MaxE2eCoverage,
            tuning: tuning.clone(),
            candidates: None,
        };
        let chosen = calibrate_tuned_bonferroni(&cal, alpha(0.09), &spec).unwrap();

        // Brute force every allocation and compare.
        let grid = allocation_grid(0.09, 3, 0.005, 0.005).unwrap();
        let coverage_of = |alloc: &[f64]| -> f64 {
            let thresholds: Vec<f64> = (0..3)
                .map(|stage| {
                    let col = cal.column(stage).unwrap();
                    conformal_quantile(&col, AlphaLevel::new(alloc[stage]).unwrap()).unwrap()
                })
                .collect();
            tuning
                .rows()
                .iter()
                .filter(|row| row.iter().zip(&thresholds).all(|(&s, &q)| s <= q))
                .count() as f64
                / tuning.n_samples() as f64
        };
        let best_value = grid
            .iter()
            .map(|a| coverage_of(a))
            .fold(f64::NEG_INFINITY, f64::max);
        let optima: Vec<&Vec<f64>> = grid
            .iter()
            .filter(|a| coverage_of(a) == best_value)
            .collect();
        let uniform = vec![0.03; 3];
        assert!(optima
            .iter()
            .any(|a| a.iter().zip(&uniform).all(|(x, y)| (x - y).abs() < 1e-12)));
        // Lexicographically smallest optimum is the first in grid order.
        assert_eq!(chosen.allocation().unwrap(), optima[0].as_slice());
        assert_eq!(chosen.allocation().unwrap()[0], 0.005);
    }

    #[test]
    fn tuned_beats_or_matches_uniform_when_uniform_is_on_grid() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let mut gen = |n: usize| -> ScoreMatrix {
            ScoreMatrix::new(
                (0..n)
                    .map(|_| {
                        vec![
                            rng.random::<f64>(),
                            rng.random::<f64>() * 0.5,
                            rng.random::<f64>() * 0.2,
                        ]
                    })
                    .collect::<Vec<_>>(),
            )
            .unwrap()
        };
        let cal = gen(300);
        let tuning = gen(200);
        let spec = TunedSearchSpec {
            grid_step: 0.005,
            min_per_stage: 0.005,
            objective: TunedObjective::MaxE2eCoverage,
            tuning: tuning.clone(),
            candidates: None,
        };
        // alpha = 0.09 puts the uniform allocation (0.03 each) on the grid.
        let tuned = calibrate_tuned_bonferroni(&cal, alpha(0.09), &spec).unwrap();
        let uniform_thresholds: Vec<f64> = (0..3)
            .map(|stage| {
                let col = cal.column(stage).unwrap();
                conformal_quantile(&col, alpha(0.03)).unwrap()
            })
            .collect();
        let coverage = |thresholds: &[f64]| -> f64 {
            tuning
                .rows()
                .iter()
                .filter(|row| row.iter().zip(thresholds).all(|(&s, &q)| s <= q))
                .count() as f64
                / tuning.n_samples() as f64
        };
        assert!(coverage(tuned.values()) >= coverage(&uniform_thresholds));
    }

    #[test]
    fn tuned_set_size_objective_prefers_budget_on_the_spread_stage() {
        // Stage 0 calibration scores form a ladder with spacing 1/401, and
        // its candidates form a grid with spacing 1/1000, so every extra
        // grid step of budget on stage 0 strictly shrinks its sets. Stages
        // 1 and 2 contribute a constant, making the lopsided allocation the
        // unique optimum.
        let n = 400;
        let cal = ScoreMatrix::new(
            (1..=n)
                .map(|i| vec![i as f64 / (n + 1) as f64, 0.0, 0.0])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let tuning = ScoreMatrix::new(vec![vec![0.5, 0.0, 0.0]; 50]).unwrap();
        let entries = (0..50)
            .map(|_| {
                vec![
                    Some(StageCandidates {
                        candidates: (0..1000)
                            .map(|j| Candidate {
                                label: format!("c{j}"),
                                score: j as f64 / 1000.0,
                            })
                            .collect(),
                        true_label: Some("c0".into()),
                    }),
                    Some(StageCandidates {
                        candidates: vec![Candidate {
                            label: "only".into(),
                            score: 0.0,
                        }],
                        true_label: Some("only".into()),
                    }),
                    None,
                ]
            })
            .collect();
        let cands = PredictionCandidates::new(entries).unwrap();
        let spec = TunedSearchSpec {
            grid_step: 0.005,
            min_per_stage: 0.005,
            objective: TunedObjective::MinAvgSetSize,
            tuning,
            candidates: Some(cands),
        };
        let tuned = calibrate_tuned_bonferroni(&cal, alpha(0.1), &spec).unwrap();
        let alloc = tuned.allocation().unwrap();
        assert!((alloc[0] - 0.09).abs() < 1e-12, "allocation: {alloc:?}");
    }
}
