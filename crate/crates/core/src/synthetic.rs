//! Synthetic K-stage score generators, score-level shift injection, and the
//! stage-scaling Monte Carlo experiment.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Normal};

use crate::calibrators::{calibrate_bonferroni, calibrate_independent, calibrate_pasc};
use crate::error::{Error, Result};
use crate::evaluate::evaluate_coverage;
use crate::matrix::{AlphaLevel, ScoreMatrix};
use crate::rng::{derive_seed, stream_rng, trial_stream};
use crate::threshold::{CalibrationMethod, ThresholdVector};

/// Per-stage marginal distribution of the generated scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Uniform01,
    Beta { a: f64, b: f64 },
    /// Empirical quantile function of a source score column, so generated
    /// stages preserve a real stage's score distribution.
    Empirical { values: Vec<f64> },
}

impl Marginal {
    fn validate(&self) -> Result<()> {
        match self {
            Self::Uniform01 => Ok(()),
            Self::Beta { a, b } => {
                if !(a.is_finite() && b.is_finite() && *a > 0.0 && *b > 0.0) {
                    Err(Error::InvalidBetaParams { a: *a, b: *b })
                } else {
                    Ok(())
                }
            }
            Self::Empirical { values } => {
                if values.is_empty() {
                    Err(Error::EmptyEmpiricalSource)
                } else if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                    Err(Error::NonFiniteScore { index: i })
                } else {
                    Ok(())
                }
            }
        }
    }

    fn prepare(&self) -> Result<PreparedMarginal> {
        self.validate()?;
        Ok(match self {
            Self::Uniform01 => PreparedMarginal::Uniform,
            Self::Beta { a, b } => PreparedMarginal::Beta(
                Beta::new(*a, *b).map_err(|_| Error::InvalidBetaParams { a: *a, b: *b })?,
            ),
            Self::Empirical { values } => {
                let mut sorted = values.clone();
                sorted.sort_by(f64::total_cmp);
                PreparedMarginal::Empirical(sorted)
            }
        })
    }
}

enum PreparedMarginal {
    Uniform,
    Beta(Beta),
    Empirical(Vec<f64>),
}

impl PreparedMarginal {
    fn inverse_cdf(&self, u: f64) -> f64 {
        match self {
            Self::Uniform => u,
            Self::Beta(beta) => beta.inverse_cdf(u),
            Self::Empirical(sorted) => {
                let n = sorted.len();
                let rank = ((u * n as f64).ceil() as usize).clamp(1, n);
                sorted[rank - 1]
            }
        }
    }
}

/// Cross-stage dependence of the generated score vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dependence {
    Independent,
    /// All stages share a single latent uniform: perfect positive dependence.
    Comonotone,
    /// Gaussian copula with constant off-diagonal correlation; adapts to any
    /// stage count, which the scaling experiment relies on.
    Equicorrelated { rho: f64 },
    /// Gaussian copula with an explicit K x K correlation matrix.
    GaussianCopula { correlation: Vec<Vec<f64>> },
}

/// Generator configuration: stage count, marginals, dependence and seed.
/// `marginals` holds either one entry (broadcast to all stages) or exactly
/// `n_stages` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_stages: usize,
    pub n_samples: usize,
    pub marginals: Vec<Marginal>,
    pub dependence: Dependence,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Independent uniform stages: the workhorse configuration.
    pub fn uniform(n_stages: usize, n_samples: usize, seed: u64) -> Self {
        Self {
            n_stages,
            n_samples,
            marginals: vec![Marginal::Uniform01],
            dependence: Dependence::Independent,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_stages == 0 || self.n_samples == 0 {
            return Err(Error::EmptyCalibrationSet);
        }
        if self.marginals.len() != 1 && self.marginals.len() != self.n_stages {
            return Err(Error::MarginalCountMismatch {
                found: self.marginals.len(),
                expected: self.n_stages,
            });
        }
        for m in &self.marginals {
            m.validate()?;
        }
        validate_dependence(&self.dependence, self.n_stages)?;
        Ok(())
    }

    /// The same generator resized to `n_stages` stages. Single marginals
    /// broadcast; per-stage marginal lists cycle. A full correlation matrix
    /// cannot be resized and is rejected when the stage count changes.
    pub fn with_stages(&self, n_stages: usize) -> Result<Self> {
        let marginals = if self.marginals.len() == 1 {
            self.marginals.clone()
        } else {
            (0..n_stages)
                .map(|k| self.marginals[k % self.marginals.len()].clone())
                .collect()
        };
        if let Dependence::GaussianCopula { correlation } = &self.dependence {
            if correlation.len() != n_stages {
                return Err(Error::InvalidCorrelation {
                    reason: format!(
                        "explicit {}x{} correlation matrix cannot be resized to {n_stages} stages",
                        correlation.len(),
                        correlation.len()
                    ),
                });
            }
        }
        Ok(Self {
            n_stages,
            marginals,
            ..self.clone()
        })
    }

    #[must_use]
    pub fn with_samples(&self, n_samples: usize) -> Self {
        Self {
            n_samples,
            ..self.clone()
        }
    }

    #[must_use]
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

fn validate_dependence(dep: &Dependence, k: usize) -> Result<()> {
    match dep {
        Dependence::Independent | Dependence::Comonotone => Ok(()),
        Dependence::Equicorrelated { rho } => {
            let lower = if k > 1 { -1.0 / (k as f64 - 1.0) } else { -1.0 };
            if !rho.is_finite() || *rho > 1.0 || *rho < lower {
                Err(Error::InvalidCorrelation {
                    reason: format!("equicorrelation {rho} outside [{lower}, 1] for K={k}"),
                })
            } else {
                Ok(())
            }
        }
        Dependence::GaussianCopula { correlation } => {
            correlation_factor(correlation, k).map(|_| ())
        }
    }
}

/// Validates a correlation matrix (square, symmetric, unit diagonal, PSD
/// within 1e-8) and returns a factor A with A A^T = correlation.
fn correlation_factor(correlation: &[Vec<f64>], k: usize) -> Result<Vec<Vec<f64>>> {
    if correlation.len() != k || correlation.iter().any(|row| row.len() != k) {
        return Err(Error::InvalidCorrelation {
            reason: format!("matrix must be {k}x{k}"),
        });
    }
    for i in 0..k {
        if (correlation[i][i] - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidCorrelation {
                reason: format!("diagonal entry [{i}][{i}] is {}, not 1", correlation[i][i]),
            });
        }
        for j in 0..k {
            let v = correlation[i][j];
            if !v.is_finite() {
                return Err(Error::InvalidCorrelation {
                    reason: format!("entry [{i}][{j}] is not finite"),
                });
            }
            if (v - correlation[j][i]).abs() > 1e-8 {
                return Err(Error::InvalidCorrelation {
                    reason: format!("matrix is not symmetric at [{i}][{j}]"),
                });
            }
        }
    }
    let m = DMatrix::from_fn(k, k, |i, j| correlation[i][j]);
    let eigen = m.symmetric_eigen();
    if let Some(min) = eigen
        .eigenvalues
        .iter()
        .copied()
        .reduce(f64::min)
        .filter(|&min| min < -1e-8)
    {
        return Err(Error::InvalidCorrelation {
            reason: format!("matrix is not positive semidefinite (min eigenvalue {min:.3e})"),
        });
    }
    // A = Q diag(sqrt(max(lambda, 0))).
    let sqrt_vals: Vec<f64> = eigen
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .collect();
    let mut factor = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            factor[i][j] = eigen.eigenvectors[(i, j)] * sqrt_vals[j];
        }
    }
    Ok(factor)
}

fn equicorrelation_matrix(k: usize, rho: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { rho }).collect())
        .collect()
}

/// Draw an n x K score matrix. Rows are i.i.d., hence exchangeable, and the
/// output is bit-identical for identical specs.
///
/// Sampling order is row-major: each row consumes its latent draws in stage
/// order before the next row starts.
pub fn generate(spec: &SyntheticSpec) -> Result<ScoreMatrix> {
    spec.validate()?;
    let k = spec.n_stages;
    let marginals: Vec<PreparedMarginal> = (0..k)
        .map(|stage| spec.marginals[stage % spec.marginals.len()].prepare())
        .collect::<Result<_>>()?;
    let mut rng = stream_rng(spec.seed, 0);
    let rows: Vec<Vec<f64>> = match &spec.dependence {
        Dependence::Independent => (0..spec.n_samples)
            .map(|_| {
                (0..k)
                    .map(|stage| marginals[stage].inverse_cdf(rng.random()))
                    .collect()
            })
            .collect(),
        Dependence::Comonotone => (0..spec.n_samples)
            .map(|_| {
                let u: f64 = rng.random();
                (0..k).map(|stage| marginals[stage].inverse_cdf(u)).collect()
            })
            .collect(),
        Dependence::Equicorrelated { rho } => {
            let factor = correlation_factor(&equicorrelation_matrix(k, *rho), k)?;
            copula_rows(spec.n_samples, &factor, &marginals, &mut rng)
        }
        Dependence::GaussianCopula { correlation } => {
            let factor = correlation_factor(correlation, k)?;
            copula_rows(spec.n_samples, &factor, &marginals, &mut rng)
        }
    };
    ScoreMatrix::new(rows)
}

fn copula_rows(
    n_samples: usize,
    factor: &[Vec<f64>],
    marginals: &[PreparedMarginal],
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    let k = factor.len();
    let std_normal = Normal::standard();
    let mut latent = vec![0.0f64; k];
    (0..n_samples)
        .map(|_| {
            for z in latent.iter_mut() {
                *z = rng.sample(StandardNormal);
            }
            (0..k)
                .map(|stage| {
                    let x: f64 = factor[stage]
                        .iter()
                        .zip(&latent)
                        .map(|(&a, &z)| a * z)
                        .sum();
                    marginals[stage].inverse_cdf(std_normal.cdf(x))
                })
                .collect()
        })
        .collect()
}

/// Score-level distribution shift applied to a test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftSpec {
    None,
    /// Adds `deltas[k]` to column k (one entry broadcasts to all stages).
    Location { deltas: Vec<f64> },
    /// Multiplies column k by `factors[k]` (one entry broadcasts).
    Scale { factors: Vec<f64> },
}

impl ShiftSpec {
    fn per_stage<'a>(values: &'a [f64], k: usize) -> Result<Vec<&'a f64>> {
        match values.len() {
            1 => Ok(vec![&values[0]; k]),
            len if len == k => Ok(values.iter().collect()),
            len => Err(Error::ShiftLengthMismatch {
                found: len,
                expected: k,
            }),
        }
    }
}

/// Apply a shift to every row of a matrix. Shifted scores are not clipped:
/// clipping would distort exactly the tail that determines coverage, so
/// out-of-range values are left intact (and counted by the matrix range
/// warning).
pub fn apply_shift(matrix: &ScoreMatrix, shift: &ShiftSpec) -> Result<ScoreMatrix> {
    let k = matrix.n_stages();
    let rows: Vec<Vec<f64>> = match shift {
        ShiftSpec::None => return Ok(matrix.clone()),
        ShiftSpec::Location { deltas } => {
            for (stage, d) in deltas.iter().enumerate() {
                if !d.is_finite() {
                    return Err(Error::InvalidShiftDelta {
                        stage,
                        value: *d,
                    });
                }
            }
            let per = ShiftSpec::per_stage(deltas, k)?;
            matrix
                .rows()
                .iter()
                .map(|row| row.iter().zip(&per).map(|(s, &&d)| s + d).collect())
                .collect()
        }
        ShiftSpec::Scale { factors } => {
            for (stage, f) in factors.iter().enumerate() {
                if !(f.is_finite() && *f > 0.0) {
                    return Err(Error::InvalidScaleFactor {
                        stage,
                        value: *f,
                    });
                }
            }
            let per = ShiftSpec::per_stage(factors, k)?;
            matrix
                .rows()
                .iter()
                .map(|row| row.iter().zip(&per).map(|(s, &&f)| s * f).collect())
                .collect()
        }
    };
    let shifted = ScoreMatrix::new(rows)?;
    match matrix.sample_ids() {
        Some(ids) => shifted.with_sample_ids(ids.to_vec()),
        None => Ok(shifted),
    }
}

/// Joint coverage of K independently calibrated stages under independence:
/// the (1 - alpha)^K collapse oracle.
#[must_use]
pub fn analytic_joint_coverage(alpha: AlphaLevel, k: usize) -> f64 {
    debug_assert!(k >= 1);
    (1.0 - alpha.value()).powi(k as i32)
}

/// One (stage count, method) cell of the scaling experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCell {
    pub n_stages: usize,
    pub method: CalibrationMethod,
    pub mean_e2e_coverage: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_e2e_coverage: Option<f64>,
    /// The (1 - alpha)^K oracle for independently calibrated stages.
    pub analytic_independent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub alpha: f64,
    pub n_cal: usize,
    pub n_test: usize,
    pub trials: usize,
    pub seed: u64,
    pub cells: Vec<ScalingCell>,
}

const SCALING_METHODS: [CalibrationMethod; 3] = [
    CalibrationMethod::Independent,
    CalibrationMethod::Bonferroni,
    CalibrationMethod::Pasc,
];

/// Monte Carlo scaling experiment: for each stage count, every trial draws
/// fresh calibration/test matrices from per-trial derived streams, runs the
/// three batch calibrators, and records end-to-end coverage on the test
/// split. Trials run in parallel and aggregate in trial order.
pub fn run_scaling_experiment(
    base: &SyntheticSpec,
    k_range: &[usize],
    alpha: AlphaLevel,
    n_cal: usize,
    n_test: usize,
    trials: usize,
) -> Result<ScalingReport> {
    if trials == 0 || n_cal == 0 || n_test == 0 || k_range.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    let mut cells = Vec::new();
    for &k in k_range {
        let spec_k = base.with_stages(k)?;
        let per_trial: Vec<[f64; 3]> = (0..trials)
            .into_par_iter()
            .map(|trial| trial_coverages(&spec_k, alpha, n_cal, n_test, trial))
            .collect::<Result<_>>()?;
        for (m, method) in SCALING_METHODS.iter().enumerate() {
            let values: Vec<f64> = per_trial.iter().map(|t| t[m]).collect();
            let (mean, std) = mean_std(&values);
            cells.push(ScalingCell {
                n_stages: k,
                method: *method,
                mean_e2e_coverage: mean,
                std_e2e_coverage: if trials > 1 { Some(std) } else { None },
                analytic_independent: analytic_joint_coverage(alpha, k),
            });
        }
    }
    Ok(ScalingReport {
        alpha: alpha.value(),
        n_cal,
        n_test,
        trials,
        seed: base.seed,
        cells,
    })
}

fn trial_coverages(
    spec_k: &SyntheticSpec,
    alpha: AlphaLevel,
    n_cal: usize,
    n_test: usize,
    trial: usize,
) -> Result<[f64; 3]> {
    let k = spec_k.n_stages;
    let cal = generate(
        &spec_k
            .with_samples(n_cal)
            .with_seed(derive_seed(spec_k.seed, trial_stream(k, trial, 0))),
    )?;
    let test = generate(
        &spec_k
            .with_samples(n_test)
            .with_seed(derive_seed(spec_k.seed, trial_stream(k, trial, 1))),
    )?;
    let mut out = [0.0; 3];
    for (m, method) in SCALING_METHODS.iter().enumerate() {
        let thresholds = match method {
            CalibrationMethod::Independent => calibrate_independent(&cal, alpha)?,
            CalibrationMethod::Bonferroni => calibrate_bonferroni(&cal, alpha)?,
            _ => calibrate_pasc(&cal, alpha)?,
        };
        out[m] = evaluate_coverage(&test, &thresholds)?.e2e_coverage;
    }
    Ok(out)
}

/// One (method, shifted?) cell of the shift experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftCell {
    pub method: CalibrationMethod,
    pub shifted: bool,
    pub mean_e2e_coverage: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_e2e_coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub alpha: f64,
    pub n_cal: usize,
    pub n_test: usize,
    pub trials: usize,
    pub seed: u64,
    pub shift: ShiftSpec,
    pub cells: Vec<ShiftCell>,
}

/// Shift stress test: thresholds are calibrated on unshifted data and
/// evaluated on both the unshifted and the shifted test split.
pub fn run_shift_experiment(
    base: &SyntheticSpec,
    shift: &ShiftSpec,
    alpha: AlphaLevel,
    n_cal: usize,
    n_test: usize,
    trials: usize,
    methods: &[CalibrationMethod],
) -> Result<ShiftReport> {
    if trials == 0 || methods.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    if methods.contains(&CalibrationMethod::TunedBonferroni) {
        return Err(Error::MissingTunedSpec);
    }
    let k = base.n_stages;
    let per_trial: Vec<Vec<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<Vec<(f64, f64)>> {
            let cal = generate(
                &base
                    .with_samples(n_cal)
                    .with_seed(derive_seed(base.seed, trial_stream(k, trial, 0))),
            )?;
            let test = generate(
                &base
                    .with_samples(n_test)
                    .with_seed(derive_seed(base.seed, trial_stream(k, trial, 1))),
            )?;
            let shifted = apply_shift(&test, shift)?;
            methods
                .iter()
                .map(|method| {
                    let thresholds = calibrate_baseline(&cal, alpha, *method)?;
                    Ok((
                        evaluate_coverage(&test, &thresholds)?.e2e_coverage,
                        evaluate_coverage(&shifted, &thresholds)?.e2e_coverage,
                    ))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for (m, method) in methods.iter().enumerate() {
        for shifted in [false, true] {
            let values: Vec<f64> = per_trial
                .iter()
                .map(|t| if shifted { t[m].1 } else { t[m].0 })
                .collect();
            let (mean, std) = mean_std(&values);
            cells.push(ShiftCell {
                method: *method,
                shifted,
                mean_e2e_coverage: mean,
                std_e2e_coverage: if trials > 1 { Some(std) } else { None },
            });
        }
    }
    Ok(ShiftReport {
        alpha: alpha.value(),
        n_cal,
        n_test,
        trials,
        seed: base.seed,
        shift: shift.clone(),
        cells,
    })
}

fn calibrate_baseline(
    cal: &ScoreMatrix,
    alpha: AlphaLevel,
    method: CalibrationMethod,
) -> Result<ThresholdVector> {
    match method {
        CalibrationMethod::Independent => calibrate_independent(cal, alpha),
        CalibrationMethod::Bonferroni => calibrate_bonferroni(cal, alpha),
        CalibrationMethod::Pasc => calibrate_pasc(cal, alpha),
        CalibrationMethod::TunedBonferroni => Err(Error::MissingTunedSpec),
    }
}

/// Mean and population standard deviation.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alpha(a: f64) -> AlphaLevel {
        AlphaLevel::new(a).unwrap()
    }

    /// Two-sample Kolmogorov-Smirnov test at level 0.01.
    fn ks_two_sample_rejects(xs: &[f64], ys: &[f64]) -> bool {
        let mut a = xs.to_vec();
        let mut b = ys.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (n, m) = (a.len() as f64, b.len() as f64);
        let mut d: f64 = 0.0;
        let (mut i, mut j) = (0usize, 0usize);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            let fa = i as f64 / n;
            let fb = j as f64 / m;
            d = d.max((fa - fb).abs());
        }
        // c(0.01) = sqrt(-ln(0.005) / 2) ~= 1.628
        let critical = 1.628 * ((n + m) / (n * m)).sqrt();
        d > critical
    }

    /// One-sample KS distance against an analytic CDF.
    fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
        let mut a = xs.to_vec();
        a.sort_by(f64::total_cmp);
        let n = a.len() as f64;
        a.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SyntheticSpec::uniform(3, 50, 99);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate(&spec.with_seed(100)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_mean_is_near_half() {
        let spec = SyntheticSpec::uniform(1, 10_000, 1);
        let m = generate(&spec).unwrap();
        let mean: f64 =
            m.rows().iter().map(|r| r[0]).sum::<f64>() / m.n_samples() as f64;
        assert!((mean - 0.5).abs() < 3.0 / (m.n_samples() as f64).sqrt());
    }

    #[test]
    fn comonotone_rows_share_their_quantile() {
        let spec = SyntheticSpec {
            n_stages: 3,
            n_samples: 200,
            marginals: vec![
                Marginal::Uniform01,
                Marginal::Uniform01,
                Marginal::Beta { a: 2.0, b: 5.0 },
            ],
            dependence: Dependence::Comonotone,
            seed: 5,
        };
        let m = generate(&spec).unwrap();
        for row in m.rows() {
            // Uniform stages expose the latent quantile directly.
            assert_eq!(row[0], row[1]);
            // The beta(2, 5) stage sits at the same quantile.
            let beta = Beta::new(2.0, 5.0).unwrap();
            assert!((beta.cdf(row[2]) - row[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_copula_matches_independent_distribution() {
        let n = 4000;
        let independent = generate(&SyntheticSpec::uniform(2, n, 3)).unwrap();
        let copula = generate(&SyntheticSpec {
            n_stages: 2,
            n_samples: n,
            marginals: vec![Marginal::Uniform01],
            dependence: Dependence::GaussianCopula {
                correlation: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            },
            seed: 3,
        })
        .unwrap();
        for stage in 0..2 {
            let xs = independent.column(stage).unwrap();
            let ys = copula.column(stage).unwrap();
            assert!(!ks_two_sample_rejects(&xs, &ys), "stage {stage}");
        }
    }

    #[test]
    fn copula_preserves_marginals() {
        let spec = SyntheticSpec {
            n_stages: 2,
            n_samples: 10_000,
            marginals: vec![Marginal::Uniform01, Marginal::Beta { a: 2.0, b: 3.0 }],
            dependence: Dependence::Equicorrelated { rho: 0.7 },
            seed: 11,
        };
        let m = generate(&spec).unwrap();
        let critical = 1.628 / (m.n_samples() as f64).sqrt();
        let u = ks_one_sample(&m.column(0).unwrap(), |x| x.clamp(0.0, 1.0));
        assert!(u < critical, "uniform KS {u} >= {critical}");
        let beta = Beta::new(2.0, 3.0).unwrap();
        let b = ks_one_sample(&m.column(1).unwrap(), |x| beta.cdf(x));
        assert!(b < critical, "beta KS {b} >= {critical}");
    }

    #[test]
    fn non_psd_correlation_is_rejected() {
        let spec = SyntheticSpec {
            n_stages: 3,
            n_samples: 10,
            marginals: vec![Marginal::Uniform01],
            dependence: Dependence::GaussianCopula {
                correlation: vec![
                    vec![1.0, 0.9, -0.9],
                    vec![0.9, 1.0, 0.9],
                    vec![-0.9, 0.9, 1.0],
                ],
            },
            seed: 0,
        };
        assert!(matches!(
            generate(&spec),
            Err(Error::InvalidCorrelation { .. })
        ));
    }

    #[test]
    fn empirical_marginal_requires_a_source() {
        let spec = SyntheticSpec {
            n_stages: 1,
            n_samples: 10,
            marginals: vec![Marginal::Empirical { values: vec![] }],
            dependence: Dependence::Independent,
            seed: 0,
        };
        assert!(matches!(
            generate(&spec),
            Err(Error::EmptyEmpiricalSource)
        ));
    }

    #[test]
    fn empirical_marginal_reuses_source_values() {
        let source = vec![0.2, 0.4, 0.6];
        let spec = SyntheticSpec {
            n_stages: 1,
            n_samples: 500,
            marginals: vec![Marginal::Empirical {
                values: source.clone(),
            }],
            dependence: Dependence::Independent,
            seed: 8,
        };
        let m = generate(&spec).unwrap();
        for row in m.rows() {
            assert!(source.contains(&row[0]));
        }
    }

    #[test]
    fn shift_none_is_identity() {
        let m = generate(&SyntheticSpec::uniform(2, 20, 1)).unwrap();
        assert_eq!(apply_shift(&m, &ShiftSpec::None).unwrap(), m);
    }

    #[test]
    fn location_shift_moves_one_column() {
        let m = ScoreMatrix::new(vec![vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let shifted = apply_shift(
            &m,
            &ShiftSpec::Location {
                deltas: vec![0.2, 0.0],
            },
        )
        .unwrap();
        assert_eq!(shifted.column(0).unwrap(), vec![0.2, 0.2]);
        assert_eq!(shifted.column(1).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn scale_shift_multiplies() {
        let m = ScoreMatrix::new(vec![vec![0.1], vec![0.3]]).unwrap();
        let shifted = apply_shift(&m, &ShiftSpec::Scale { factors: vec![2.0] }).unwrap();
        assert_eq!(shifted.column(0).unwrap(), vec![0.2, 0.6]);
        assert!(matches!(
            apply_shift(&m, &ShiftSpec::Scale { factors: vec![-1.0] }),
            Err(Error::InvalidScaleFactor { .. })
        ));
    }

    #[test]
    fn analytic_collapse_values() {
        assert!((analytic_joint_coverage(alpha(0.1), 3) - 0.729).abs() < 1e-12);
        assert!((analytic_joint_coverage(alpha(0.1), 6) - 0.531441).abs() < 1e-12);
        assert_eq!(analytic_joint_coverage(alpha(0.1), 1), 0.9);
    }

    #[test]
    fn scaling_k1_methods_coincide_per_trial() {
        let base = SyntheticSpec::uniform(1, 1, 42);
        let report = run_scaling_experiment(&base, &[1], alpha(0.1), 200, 200, 3).unwrap();
        let mean_of = |method: CalibrationMethod| {
            report
                .cells
                .iter()
                .find(|c| c.method == method)
                .unwrap()
                .mean_e2e_coverage
        };
        assert_eq!(
            mean_of(CalibrationMethod::Independent),
            mean_of(CalibrationMethod::Pasc)
        );
        assert_eq!(
            mean_of(CalibrationMethod::Independent),
            mean_of(CalibrationMethod::Bonferroni)
        );
    }

    #[test]
    fn scaling_report_is_deterministic() {
        let base = SyntheticSpec::uniform(1, 1, 9);
        let a = run_scaling_experiment(&base, &[2, 3], alpha(0.1), 100, 100, 4).unwrap();
        let b = run_scaling_experiment(&base, &[2, 3], alpha(0.1), 100, 100, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn row_permutation_leaves_thresholds_unchanged() {
        use rand::seq::SliceRandom;
        let m = generate(&SyntheticSpec::uniform(3, 300, 17)).unwrap();
        let mut indices: Vec<usize> = (0..m.n_samples()).collect();
        indices.shuffle(&mut crate::rng::stream_rng(1, 1));
        let permuted = m.select_rows(&indices).unwrap();
        for (a, b) in [
            (
                calibrate_pasc(&m, alpha(0.1)).unwrap(),
                calibrate_pasc(&permuted, alpha(0.1)).unwrap(),
            ),
            (
                calibrate_independent(&m, alpha(0.1)).unwrap(),
                calibrate_independent(&permuted, alpha(0.1)).unwrap(),
            ),
        ] {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn positive_location_shift_never_raises_coverage() {
        let base = SyntheticSpec::uniform(2, 1, 23);
        let report = run_shift_experiment(
            &base,
            &ShiftSpec::Location {
                deltas: vec![0.15],
            },
            alpha(0.1),
            400,
            400,
            5,
            &[CalibrationMethod::Independent, CalibrationMethod::Pasc],
        )
        .unwrap();
        for method in [CalibrationMethod::Independent, CalibrationMethod::Pasc] {
            let unshifted = report
                .cells
                .iter()
                .find(|c| c.method == method && !c.shifted)
                .unwrap()
                .mean_e2e_coverage;
            let shifted = report
                .cells
                .iter()
                .find(|c| c.method == method && c.shifted)
                .unwrap()
                .mean_e2e_coverage;
            assert!(shifted <= unshifted);
        }
    }
}
