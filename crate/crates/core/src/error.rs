//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by calibration, generation, evaluation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty calibration set")]
    EmptyCalibrationSet,

    #[error("non-finite score at index {index}")]
    NonFiniteScore { index: usize },

    #[error("non-finite score at row {row}, stage {stage}")]
    NonFiniteMatrixScore { row: usize, stage: usize },

    #[error("row {row} has {found} stages, expected {expected}")]
    StageCountMismatch {
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("duplicate sample id `{id}`")]
    DuplicateSampleId { id: String },

    #[error("sample id count {found} does not match row count {expected}")]
    SampleIdCountMismatch { found: usize, expected: usize },

    #[error("alpha must lie in (0, 1), got {value}")]
    InvalidAlpha { value: f64 },

    #[error("score row has {found} entries but thresholds cover {expected} stages")]
    ThresholdLengthMismatch { found: usize, expected: usize },

    #[error("threshold at stage {stage} is {value}; only finite values or +inf are allowed")]
    InvalidThreshold { stage: usize, value: f64 },

    #[error("pasc thresholds must be a single repeated quantile")]
    PascThresholdsNotUniform,

    #[error("allocation sums to {sum}, exceeding alpha {alpha}")]
    AllocationExceedsAlpha { sum: f64, alpha: f64 },

    #[error("allocation has {found} stages, expected {expected}")]
    AllocationLengthMismatch { found: usize, expected: usize },

    #[error("stage index {index} out of range for {n_stages} stages")]
    StageOutOfRange { index: usize, n_stages: usize },

    #[error("matrix has {found} stages, expected {expected}")]
    MatrixStageMismatch { found: usize, expected: usize },

    #[error("candidates cover stage {stage} but only {n_thresholds} thresholds are available")]
    MissingStageThreshold { stage: usize, n_thresholds: usize },

    #[error("method tuned_bonferroni requires a tuned search spec")]
    MissingTunedSpec,

    #[error("grid step {grid_step} does not divide alpha {alpha}")]
    GridStepMismatch { grid_step: f64, alpha: f64 },

    #[error("allocation grid is empty: min_per_stage {min_per_stage} x {n_stages} stages exceeds alpha {alpha}")]
    EmptyAllocationGrid {
        min_per_stage: f64,
        n_stages: usize,
        alpha: f64,
    },

    #[error("tuning leakage: sample id `{id}` appears in both calibration and tuning sets")]
    TuningLeakage { id: String },

    #[error("objective min_avg_set_size requires prediction candidates in the search spec")]
    MissingTuningCandidates,

    #[error("correlation matrix is not valid: {reason}")]
    InvalidCorrelation { reason: String },

    #[error("beta marginal requires positive shape parameters, got ({a}, {b})")]
    InvalidBetaParams { a: f64, b: f64 },

    #[error("empirical marginal has an empty source column")]
    EmptyEmpiricalSource,

    #[error("marginal count {found} must be 1 or match the stage count {expected}")]
    MarginalCountMismatch { found: usize, expected: usize },

    #[error("scale shift requires positive factors, got {value} at stage {stage}")]
    InvalidScaleFactor { stage: usize, value: f64 },

    #[error("location shift requires finite deltas, got {value} at stage {stage}")]
    InvalidShiftDelta { stage: usize, value: f64 },

    #[error("shift spec covers {found} stages but the matrix has {expected}")]
    ShiftLengthMismatch { found: usize, expected: usize },

    #[error("candidate list at sample {sample}, stage {stage} is empty")]
    EmptyCandidateList { sample: usize, stage: usize },

    #[error("prediction candidates carry no (sample, stage) entries")]
    NoCandidateEntries,

    #[error("candidate rows {found} do not match the matrix rows {expected}")]
    CandidateCountMismatch { found: usize, expected: usize },

    #[error("quantile slicing needs at least 2 bins, got {n_bins}")]
    TooFewBins { n_bins: usize },

    #[error("group slicing requested but no group labels were supplied")]
    MissingGroupLabels,

    #[error("group label count {found} does not match the test size {expected}")]
    GroupLabelCountMismatch { found: usize, expected: usize },

    #[error("probability {value} at index {index} is outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },

    #[error("permutation test requires at least 2 permutations, got {value}")]
    TooFewPermutations { value: usize },

    #[error("split audit requires at least 2 splits, got {value}")]
    TooFewSplits { value: usize },

    #[error("e2e definition audit requires pasc thresholds, got method `{method}`")]
    AuditRequiresPasc { method: String },

    #[error("cannot trace {requested} rows from a test set of {available}")]
    TraceCountExceedsRows { requested: usize, available: usize },

    #[error(
        "e2e definition mismatch at row {row}: per-stage path says {per_stage_path}, \
         max-score path says {max_path} (max_score={max_score}, threshold={threshold})"
    )]
    E2eDefinitionMismatch {
        row: usize,
        per_stage_path: bool,
        max_path: bool,
        max_score: f64,
        threshold: f64,
    },

    #[error("calibration cost probe supports independent, bonferroni and pasc, got `{method}`")]
    UnsupportedCostMethod { method: String },

    #[error("sweep pool of {pool} rows cannot supply {n_cal} calibration + {n_test} test rows")]
    PoolTooSmall {
        pool: usize,
        n_cal: usize,
        n_test: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Record {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("{path}: missing schema header; expected first line {expected:?}")]
    MissingSchemaHeader { path: String, expected: String },

    #[error("{path}: unsupported schema `{found}`, expected `{expected}`")]
    SchemaMismatch {
        path: String,
        found: String,
        expected: String,
    },

    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("config error: {reason}")]
    Config { reason: String },
}
