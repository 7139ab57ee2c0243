//! Stable external contracts: the line-delimited score record format, the
//! structured/human report documents, and declarative experiment configs.

mod config;
mod records;
mod report;

pub use config::{load_config, DataSpec, ExperimentConfig, ScalingSettings};
pub use records::{
    load_scores, load_split_records, write_scores, LoadedScores, SCORES_SCHEMA,
};
pub use report::{
    load_report, render_human, render_structured, write_report, Document, PermutationReport,
    ReportFormat, ReportPayload, ThresholdsReport, REPORT_SCHEMA, TOOLKIT_VERSION,
};
