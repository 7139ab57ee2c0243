//! Joint-coverage conformal calibration for multi-stage prediction pipelines.
//!
//! A K-stage pipeline is covered end to end only when every stage's
//! nonconformity score stays within its threshold. This crate calibrates
//! that joint event with finite-sample guarantees:
//!
//! - [`calibrate_pasc`]: split conformal prediction on the per-sample
//!   maximum score. One shared threshold, joint coverage in
//!   [1 - alpha, 1 - alpha + 1/(n+1)] under exchangeability.
//! - [`calibrate_bonferroni`] / [`calibrate_tuned_bonferroni`]: union-bound
//!   baselines with uniform or grid-optimized stage budgets.
//! - [`calibrate_independent`]: per-stage calibration with no joint
//!   guarantee, for measuring the multiplicative coverage collapse.
//!
//! Around the calibrators: score adapters over probability tables
//! ([`adapters`]), synthetic generators with controllable dependence and
//! shift injection ([`synthetic`]), coverage/set-size/slice metrics and
//! sweeps ([`evaluate`]), a validity battery ([`diagnostics`]), and stable
//! file formats ([`io`]).

pub mod adapters;
pub mod calibrators;
pub mod candidates;
pub mod diagnostics;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod matrix;
pub mod quantile;
pub mod rng;
pub mod synthetic;
pub mod threshold;

pub use calibrators::{
    calibrate, calibrate_bonferroni, calibrate_independent, calibrate_pasc,
    calibrate_tuned_bonferroni, TunedObjective, TunedSearchSpec,
};
pub use candidates::{Candidate, PredictionCandidates, StageCandidates};
pub use error::{Error, Result};
pub use evaluate::{
    evaluate_coverage, prediction_sets, run_sweep, run_sweep_with_slices, slice_report,
    CoverageReport, SliceSpec, SweepData,
};
pub use matrix::{AlphaLevel, ScoreMatrix};
pub use quantile::{conformal_quantile, conformal_rank, joint_max_scores};
pub use synthetic::{
    analytic_joint_coverage, apply_shift, generate, run_scaling_experiment,
    run_shift_experiment, Dependence, Marginal, ShiftSpec, SyntheticSpec,
};
pub use threshold::{accept, AcceptanceOutcome, CalibrationMethod, ThresholdVector};
