//! Coverage metrics, prediction-set construction, conditional slices,
//! parameter sweeps and the calibration cost probe.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrators::{calibrate, TunedObjective, TunedSearchSpec};
use crate::candidates::{set_stats, PredictionCandidates};
use crate::error::{Error, Result};
use crate::matrix::{AlphaLevel, ScoreMatrix};
use crate::rng::{derive_seed, stream_rng};
use crate::synthetic::{generate, mean_std, SyntheticSpec};
use crate::threshold::{CalibrationMethod, ThresholdVector};

/// How to partition a test set for conditional coverage analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SliceSpec {
    /// Equal-population bins of one stage's test scores (Q1 = lowest scores).
    QuantileBins { stage: usize, n_bins: usize },
    /// Group samples by an externally supplied label field.
    GroupLabel { field: String },
}

/// Coverage within one slice of the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceCoverage {
    pub label: String,
    pub n_samples: usize,
    pub e2e_coverage: f64,
    pub stage_coverage: Vec<f64>,
}

/// Coverage metrics for one evaluation.
///
/// `e2e_coverage` and `stage_coverage` are threshold coverage on the stored
/// scores; `set_membership_coverage`, when present, is the fraction of
/// candidate-bearing pairs whose true label lands inside the prediction set.
/// The two notions coincide when the stored score is the true label's score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n_samples: usize,
    pub e2e_coverage: f64,
    pub stage_coverage: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub avg_set_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub set_membership_coverage: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub slices: Vec<SliceCoverage>,
    /// Number of independent seeds aggregated into this report.
    pub seeds: usize,
    /// Population std of e2e coverage across seeds, when seeds > 1.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub e2e_dispersion: Option<f64>,
}

/// Threshold coverage of a test matrix: per-stage and end-to-end fractions
/// under the inclusive comparison.
pub fn evaluate_coverage(test: &ScoreMatrix, thresholds: &ThresholdVector) -> Result<CoverageReport> {
    if test.n_stages() != thresholds.n_stages() {
        return Err(Error::MatrixStageMismatch {
            found: test.n_stages(),
            expected: thresholds.n_stages(),
        });
    }
    let k = test.n_stages();
    let n = test.n_samples();
    let mut stage_hits = vec![0usize; k];
    let mut e2e_hits = 0usize;
    for row in test.rows() {
        let mut all = true;
        for (stage, (&s, &q)) in row.iter().zip(thresholds.values()).enumerate() {
            if s <= q {
                stage_hits[stage] += 1;
            } else {
                all = false;
            }
        }
        if all {
            e2e_hits += 1;
        }
    }
    Ok(CoverageReport {
        n_samples: n,
        e2e_coverage: e2e_hits as f64 / n as f64,
        stage_coverage: stage_hits.iter().map(|&h| h as f64 / n as f64).collect(),
        avg_set_size: None,
        set_membership_coverage: None,
        slices: Vec::new(),
        seeds: 1,
        e2e_dispersion: None,
    })
}

/// Prediction sets and their summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSetReport {
    /// Per sample, per stage: the labels whose score is at or below the
    /// stage threshold. `None` where no candidate list exists.
    pub sets: Vec<Vec<Option<Vec<String>>>>,
    /// Mean set size over (sample, stage) pairs that carry candidates.
    pub avg_set_size: f64,
    pub pairs_counted: usize,
    /// Fraction of truth-bearing pairs whose true label is in the set.
    pub set_membership_coverage: Option<f64>,
}

/// Build the prediction set for every candidate-bearing (sample, stage) pair.
pub fn prediction_sets(
    cands: &PredictionCandidates,
    thresholds: &ThresholdVector,
) -> Result<PredictionSetReport> {
    if cands.n_stages() > thresholds.n_stages() {
        return Err(Error::MissingStageThreshold {
            stage: thresholds.n_stages(),
            n_thresholds: thresholds.n_stages(),
        });
    }
    let stats = set_stats(cands, thresholds.values())?;
    let sets = cands
        .entries()
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(stage, entry)| {
                    entry.as_ref().map(|e| {
                        e.candidates
                            .iter()
                            .filter(|c| c.score <= thresholds.values()[stage])
                            .map(|c| c.label.clone())
                            .collect()
                    })
                })
                .collect()
        })
        .collect();
    Ok(PredictionSetReport {
        sets,
        avg_set_size: stats.avg_set_size(),
        pairs_counted: stats.pairs,
        set_membership_coverage: stats.membership_coverage(),
    })
}

/// Global coverage plus per-slice breakdown.
///
/// Quantile bins use the test set's own empirical quantiles of the
/// referenced stage score: bin edges sit at the j/n_bins quantiles and a
/// score equal to an edge goes to the lower bin.
pub fn slice_report(
    test: &ScoreMatrix,
    thresholds: &ThresholdVector,
    slice: &SliceSpec,
    group_labels: Option<&[String]>,
) -> Result<CoverageReport> {
    let mut report = evaluate_coverage(test, thresholds)?;
    let assignments: Vec<(String, Vec<usize>)> = match slice {
        SliceSpec::QuantileBins { stage, n_bins } => {
            if *n_bins < 2 {
                return Err(Error::TooFewBins { n_bins: *n_bins });
            }
            let column = test.column(*stage)?;
            let mut sorted = column.clone();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            let edges: Vec<f64> = (1..*n_bins)
                .map(|j| {
                    let rank = ((j as f64 / *n_bins as f64) * n as f64).ceil() as usize;
                    sorted[rank.clamp(1, n) - 1]
                })
                .collect();
            let mut bins: Vec<Vec<usize>> = vec![Vec::new(); *n_bins];
            for (i, &s) in column.iter().enumerate() {
                let bin = edges.iter().filter(|&&e| e < s).count();
                bins[bin].push(i);
            }
            bins.into_iter()
                .enumerate()
                .map(|(b, idx)| (format!("Q{}", b + 1), idx))
                .collect()
        }
        SliceSpec::GroupLabel { .. } => {
            let labels = group_labels.ok_or(Error::MissingGroupLabels)?;
            if labels.len() != test.n_samples() {
                return Err(Error::GroupLabelCountMismatch {
                    found: labels.len(),
                    expected: test.n_samples(),
                });
            }
            let mut groups: std::collections::BTreeMap<String, Vec<usize>> = Default::default();
            for (i, label) in labels.iter().enumerate() {
                groups.entry(label.clone()).or_default().push(i);
            }
            groups.into_iter().collect()
        }
    };

    let mut slices = Vec::with_capacity(assignments.len());
    let mut total = 0usize;
    for (label, indices) in assignments {
        total += indices.len();
        if indices.is_empty() {
            slices.push(SliceCoverage {
                label,
                n_samples: 0,
                e2e_coverage: 1.0,
                stage_coverage: vec![1.0; test.n_stages()],
            });
            continue;
        }
        let sub = test.select_rows(&indices)?;
        let sub_report = evaluate_coverage(&sub, thresholds)?;
        slices.push(SliceCoverage {
            label,
            n_samples: indices.len(),
            e2e_coverage: sub_report.e2e_coverage,
            stage_coverage: sub_report.stage_coverage,
        });
    }
    debug_assert_eq!(total, test.n_samples());
    report.slices = slices;
    Ok(report)
}

/// Mean/dispersion aggregation of per-seed coverage reports.
pub fn aggregate_reports(reports: &[CoverageReport]) -> Result<CoverageReport> {
    if reports.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    let k = reports[0].stage_coverage.len();
    for r in reports {
        if r.stage_coverage.len() != k {
            return Err(Error::MatrixStageMismatch {
                found: r.stage_coverage.len(),
                expected: k,
            });
        }
    }
    let e2e: Vec<f64> = reports.iter().map(|r| r.e2e_coverage).collect();
    let (mean_e2e, std_e2e) = mean_std(&e2e);
    let stage_coverage = (0..k)
        .map(|stage| {
            reports.iter().map(|r| r.stage_coverage[stage]).sum::<f64>() / reports.len() as f64
        })
        .collect();
    let sizes: Vec<f64> = reports.iter().filter_map(|r| r.avg_set_size).collect();
    let avg_set_size = if sizes.len() == reports.len() {
        Some(sizes.iter().sum::<f64>() / sizes.len() as f64)
    } else {
        None
    };
    Ok(CoverageReport {
        n_samples: reports.iter().map(|r| r.n_samples).sum(),
        e2e_coverage: mean_e2e,
        stage_coverage,
        avg_set_size,
        set_membership_coverage: None,
        slices: Vec::new(),
        seeds: reports.len(),
        e2e_dispersion: if reports.len() > 1 { Some(std_e2e) } else { None },
    })
}

/// Per-sample group label maps, keyed by field name.
pub type GroupLabels = Vec<std::collections::BTreeMap<String, String>>;

/// Where a sweep gets its per-seed calibration/test pairs.
#[derive(Debug, Clone)]
pub enum SweepData {
    /// Fresh synthetic draws per seed: calibration, test and (for tuned
    /// calibration) tuning matrices come from disjoint derived streams.
    Synthetic { spec: SyntheticSpec, n_test: usize },
    /// Resample a fixed pool per seed: shuffle rows, take n_cal for
    /// calibration, the next n_test for test, and leave the rest for tuning.
    SplitPool {
        pool: ScoreMatrix,
        candidates: Option<PredictionCandidates>,
        group_labels: Option<GroupLabels>,
        n_test: usize,
    },
    /// Fixed calibration/test files; seeds replicate the same cell.
    FixedPair {
        cal: ScoreMatrix,
        test: ScoreMatrix,
        candidates: Option<PredictionCandidates>,
        group_labels: Option<GroupLabels>,
    },
}

impl SweepData {
    #[must_use]
    pub fn n_test(&self) -> usize {
        match self {
            Self::Synthetic { n_test, .. } | Self::SplitPool { n_test, .. } => *n_test,
            Self::FixedPair { test, .. } => test.n_samples(),
        }
    }
}

struct SweepDraw {
    cal: ScoreMatrix,
    test: ScoreMatrix,
    test_candidates: Option<PredictionCandidates>,
    test_group_labels: Option<GroupLabels>,
    tuning: Option<ScoreMatrix>,
}

fn draw(data: &SweepData, seed: u64, n_cal: usize, needs_tuning: bool) -> Result<SweepDraw> {
    match data {
        SweepData::Synthetic { spec, n_test } => Ok(SweepDraw {
            cal: generate(&spec.with_samples(n_cal).with_seed(derive_seed(seed, 0)))?,
            test: generate(&spec.with_samples(*n_test).with_seed(derive_seed(seed, 1)))?,
            test_candidates: None,
            test_group_labels: None,
            tuning: if needs_tuning {
                Some(generate(
                    &spec.with_samples(n_cal).with_seed(derive_seed(seed, 2)),
                )?)
            } else {
                None
            },
        }),
        SweepData::SplitPool {
            pool,
            candidates,
            group_labels,
            n_test,
        } => {
            let needed = n_cal + n_test + if needs_tuning { 1 } else { 0 };
            if pool.n_samples() < needed {
                return Err(Error::PoolTooSmall {
                    pool: pool.n_samples(),
                    n_cal,
                    n_test: *n_test,
                });
            }
            let mut indices: Vec<usize> = (0..pool.n_samples()).collect();
            indices.shuffle(&mut stream_rng(seed, 0));
            let cal = pool.select_rows(&indices[..n_cal])?;
            let test_idx = &indices[n_cal..n_cal + n_test];
            let test = pool.select_rows(test_idx)?;
            let test_candidates = candidates
                .as_ref()
                .map(|c| c.select_rows(test_idx))
                .transpose()?;
            let test_group_labels = group_labels
                .as_ref()
                .map(|g| test_idx.iter().map(|&i| g[i].clone()).collect());
            let tuning = if needs_tuning {
                Some(pool.select_rows(&indices[n_cal + n_test..])?)
            } else {
                None
            };
            Ok(SweepDraw {
                cal,
                test,
                test_candidates,
                test_group_labels,
                tuning,
            })
        }
        SweepData::FixedPair {
            cal,
            test,
            candidates,
            group_labels,
        } => {
            if n_cal > cal.n_samples() {
                return Err(Error::PoolTooSmall {
                    pool: cal.n_samples(),
                    n_cal,
                    n_test: test.n_samples(),
                });
            }
            let head: Vec<usize> = (0..n_cal).collect();
            Ok(SweepDraw {
                cal: cal.select_rows(&head)?,
                test: test.clone(),
                test_candidates: candidates.clone(),
                test_group_labels: group_labels.clone(),
                tuning: None,
            })
        }
    }
}

/// Extract one label field per sample from group label maps.
pub fn labels_for_field(labels: &GroupLabels, field: &str) -> Result<Vec<String>> {
    labels
        .iter()
        .enumerate()
        .map(|(i, map)| {
            map.get(field).cloned().ok_or_else(|| Error::Config {
                reason: format!("sample {i} lacks group label field `{field}`"),
            })
        })
        .collect()
}

/// One (alpha, n_cal, method) cell of a sweep, aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub alpha: f64,
    pub n_cal: usize,
    pub method: CalibrationMethod,
    pub mean_e2e_coverage: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_e2e_coverage: Option<f64>,
    pub mean_stage_coverage: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_avg_set_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_avg_set_size: Option<f64>,
    pub n_seeds: usize,
}

/// Conditional coverage of one slice within one sweep cell, aggregated over
/// the seeds where the slice label occurred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSliceCell {
    pub alpha: f64,
    pub n_cal: usize,
    pub method: CalibrationMethod,
    pub slice: SliceSpec,
    pub label: String,
    pub mean_e2e_coverage: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_e2e_coverage: Option<f64>,
    pub mean_n_samples: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub n_test: usize,
    pub seeds: Vec<u64>,
    pub cells: Vec<SweepCell>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub slice_cells: Vec<SweepSliceCell>,
}

/// Cartesian sweep over alphas, calibration sizes and methods. Every cell is
/// the mean (and population std) over the seed list. Tuned calibration inside
/// a sweep uses the source's tuning split with the coverage objective and an
/// alpha/20 grid.
pub fn run_sweep(
    data: &SweepData,
    alphas: &[AlphaLevel],
    n_cals: &[usize],
    methods: &[CalibrationMethod],
    seeds: &[u64],
) -> Result<SweepReport> {
    run_sweep_with_slices(data, alphas, n_cals, methods, seeds, &[])
}

/// [`run_sweep`] plus per-slice conditional coverage for each cell.
pub fn run_sweep_with_slices(
    data: &SweepData,
    alphas: &[AlphaLevel],
    n_cals: &[usize],
    methods: &[CalibrationMethod],
    seeds: &[u64],
    slices: &[SliceSpec],
) -> Result<SweepReport> {
    if alphas.is_empty() || n_cals.is_empty() || methods.is_empty() || seeds.is_empty() {
        return Err(Error::Config {
            reason: "sweep requires non-empty alphas, n_cals, methods and seeds".into(),
        });
    }
    let needs_tuning = methods.contains(&CalibrationMethod::TunedBonferroni);

    // One draw per (seed, n_cal); cells share draws across alphas/methods.
    let mut cells = Vec::new();
    let mut slice_cells = Vec::new();
    for &n_cal in n_cals {
        let draws: Vec<SweepDraw> = seeds
            .par_iter()
            .map(|&seed| draw(data, seed, n_cal, needs_tuning))
            .collect::<Result<_>>()?;
        for &alpha in alphas {
            for &method in methods {
                let per_seed: Vec<(CoverageReport, Option<f64>, ThresholdVector)> = draws
                    .par_iter()
                    .map(|d| -> Result<(CoverageReport, Option<f64>, ThresholdVector)> {
                        let tuned_spec = if method == CalibrationMethod::TunedBonferroni {
                            let tuning = d.tuning.as_ref().ok_or(Error::MissingTunedSpec)?;
                            Some(TunedSearchSpec {
                                grid_step: alpha.value() / 20.0,
                                min_per_stage: alpha.value() / 20.0,
                                objective: TunedObjective::MaxE2eCoverage,
                                tuning: tuning.clone(),
                                candidates: None,
                            })
                        } else {
                            None
                        };
                        let thresholds = calibrate(&d.cal, alpha, method, tuned_spec.as_ref())?;
                        let report = evaluate_coverage(&d.test, &thresholds)?;
                        let size = d
                            .test_candidates
                            .as_ref()
                            .map(|c| prediction_sets(c, &thresholds).map(|r| r.avg_set_size))
                            .transpose()?;
                        Ok((report, size, thresholds))
                    })
                    .collect::<Result<_>>()?;

                let e2e: Vec<f64> = per_seed.iter().map(|c| c.0.e2e_coverage).collect();
                let (mean_e2e, std_e2e) = mean_std(&e2e);
                let k = per_seed[0].0.stage_coverage.len();
                let mean_stage_coverage = (0..k)
                    .map(|s| {
                        per_seed.iter().map(|c| c.0.stage_coverage[s]).sum::<f64>()
                            / e2e.len() as f64
                    })
                    .collect();
                let sizes: Vec<f64> = per_seed.iter().filter_map(|c| c.1).collect();
                let (mean_size, std_size) = if sizes.len() == per_seed.len() {
                    let (m, s) = mean_std(&sizes);
                    (Some(m), if seeds.len() > 1 { Some(s) } else { None })
                } else {
                    (None, None)
                };
                cells.push(SweepCell {
                    alpha: alpha.value(),
                    n_cal,
                    method,
                    mean_e2e_coverage: mean_e2e,
                    std_e2e_coverage: if seeds.len() > 1 { Some(std_e2e) } else { None },
                    mean_stage_coverage,
                    mean_avg_set_size: mean_size,
                    std_avg_set_size: std_size,
                    n_seeds: seeds.len(),
                });

                for slice in slices {
                    // label -> per-seed (coverage, n_samples)
                    let mut by_label: std::collections::BTreeMap<String, Vec<(f64, usize)>> =
                        Default::default();
                    for (d, (_, _, thresholds)) in draws.iter().zip(&per_seed) {
                        let labels = match slice {
                            SliceSpec::GroupLabel { field } => {
                                let maps = d
                                    .test_group_labels
                                    .as_ref()
                                    .ok_or(Error::MissingGroupLabels)?;
                                Some(labels_for_field(maps, field)?)
                            }
                            SliceSpec::QuantileBins { .. } => None,
                        };
                        let sliced = slice_report(&d.test, thresholds, slice, labels.as_deref())?;
                        for s in sliced.slices {
                            by_label
                                .entry(s.label)
                                .or_default()
                                .push((s.e2e_coverage, s.n_samples));
                        }
                    }
                    for (label, values) in by_label {
                        let covs: Vec<f64> = values.iter().map(|v| v.0).collect();
                        let (mean, std) = mean_std(&covs);
                        slice_cells.push(SweepSliceCell {
                            alpha: alpha.value(),
                            n_cal,
                            method,
                            slice: slice.clone(),
                            label,
                            mean_e2e_coverage: mean,
                            std_e2e_coverage: if covs.len() > 1 { Some(std) } else { None },
                            mean_n_samples: values.iter().map(|v| v.1 as f64).sum::<f64>()
                                / values.len() as f64,
                            n_seeds: covs.len(),
                        });
                    }
                }
            }
        }
    }
    Ok(SweepReport {
        n_test: data.n_test(),
        seeds: seeds.to_vec(),
        cells,
        slice_cells,
    })
}

/// Cost profile of one calibration call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub method: CalibrationMethod,
    pub n_samples: usize,
    pub n_stages: usize,
    /// pasc computes one quantile regardless of K; the per-stage baselines
    /// compute K.
    pub quantile_computations: usize,
    pub wall_clock: Duration,
}

/// Run one calibration and report its quantile count and wall-clock. The
/// tuned search is grid-shaped rather than per-stage and is out of scope
/// for this probe.
pub fn calibration_cost(
    matrix: &ScoreMatrix,
    alpha: AlphaLevel,
    method: CalibrationMethod,
) -> Result<CostRecord> {
    let quantile_computations = match method {
        CalibrationMethod::Pasc => 1,
        CalibrationMethod::Independent | CalibrationMethod::Bonferroni => matrix.n_stages(),
        CalibrationMethod::TunedBonferroni => {
            return Err(Error::UnsupportedCostMethod {
                method: method.name().into(),
            })
        }
    };
    let start = Instant::now();
    let _ = calibrate(matrix, alpha, method, None)?;
    let wall_clock = start.elapsed();
    Ok(CostRecord {
        method,
        n_samples: matrix.n_samples(),
        n_stages: matrix.n_stages(),
        quantile_computations,
        wall_clock,
    })
}
