//! Structured report documents and their human-readable rendering.
//!
//! Structured reports are single JSON documents carrying a schema version,
//! the toolkit version, an echo of the resolved invocation, and one typed
//! payload. They round-trip exactly; the human format renders the paper-style
//! tables (method rows, coverage/set-size columns, three decimals).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{AuditResult, E2eAuditReport, PermutationResult};
use crate::error::{Error, Result};
use crate::evaluate::{CoverageReport, SweepReport};
use crate::synthetic::{ScalingReport, ShiftReport};
use crate::threshold::ThresholdVector;

/// Schema identifier embedded in every structured report.
pub const REPORT_SCHEMA: &str = "pasc.report.v1";

/// Toolkit version embedded in every structured report.
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Calibration output document: the thresholds plus how many quantile
/// computations producing them costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdsReport {
    pub thresholds: ThresholdVector,
    pub quantile_computations: usize,
}

/// Permutation-test document, optionally with a negative-control coverage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationReport {
    pub stage: usize,
    pub result: PermutationResult,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub control_stage: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub negative_control_coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportPayload {
    Thresholds(ThresholdsReport),
    Coverage(CoverageReport),
    Sweep(SweepReport),
    Scaling(ScalingReport),
    Shift(ShiftReport),
    Permutation(PermutationReport),
    SplitAudit(AuditResult),
    E2eAudit(E2eAuditReport),
}

/// A complete structured report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub schema: String,
    pub toolkit_version: String,
    /// Echo of the fully resolved invocation (paths, flags, seeds).
    #[serde(skip_serializing_if = "serde_json::Value::is_null", default)]
    pub config: serde_json::Value,
    pub payload: ReportPayload,
}

impl Document {
    #[must_use]
    pub fn new(payload: ReportPayload) -> Self {
        Self {
            schema: REPORT_SCHEMA.to_string(),
            toolkit_version: TOOLKIT_VERSION.to_string(),
            config: serde_json::Value::Null,
            payload,
        }
    }

    #[must_use]
    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = config;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Structured,
    HumanTable,
}

/// Structured rendering: pretty JSON with a trailing newline.
pub fn render_structured(doc: &Document) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("report documents always serialize");
    s.push('\n');
    s
}

pub fn write_report(doc: &Document, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let content = match format {
        ReportFormat::Structured => render_structured(doc),
        ReportFormat::HumanTable => render_human(doc),
    };
    fs::write(path, content).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_report(path: impl AsRef<Path>) -> Result<Document> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let doc: Document = serde_json::from_str(&content).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })?;
    if doc.schema != REPORT_SCHEMA {
        return Err(Error::SchemaMismatch {
            path: path.display().to_string(),
            found: doc.schema,
            expected: REPORT_SCHEMA.to_string(),
        });
    }
    Ok(doc)
}

fn num(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.3}")
    }
}

fn mean_std_cell(mean: f64, std: Option<f64>) -> String {
    match std {
        Some(s) => format!("{} ± {}", num(mean), num(s)),
        None => num(mean),
    }
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let render_row = |cells: &[String], out: &mut String| {
        let line = cells
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{:<width$}", c, width = widths[i]))
            .collect::<Vec<_>>()
            .join("  ");
        out.push_str(line.trim_end());
        out.push('\n');
    };
    render_row(
        &header.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        &mut out,
    );
    render_row(
        &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>(),
        &mut out,
    );
    for row in rows {
        render_row(row, &mut out);
    }
    out
}

/// Paper-style text tables.
pub fn render_human(doc: &Document) -> String {
    let mut out = String::new();
    match &doc.payload {
        ReportPayload::Thresholds(r) => {
            let t = &r.thresholds;
            let _ = writeln!(out, "method: {}", t.method());
            let _ = writeln!(out, "alpha: {}", t.alpha().value());
            let _ = writeln!(out, "n_cal: {}", t.n_cal());
            let _ = writeln!(out, "quantile_computations: {}", r.quantile_computations);
            if let Some(alloc) = t.allocation() {
                let cells: Vec<String> = alloc.iter().map(|a| format!("{a:.4}")).collect();
                let _ = writeln!(out, "allocation: ({})", cells.join(", "));
            }
            out.push('\n');
            let rows: Vec<Vec<String>> = t
                .values()
                .iter()
                .enumerate()
                .map(|(k, &q)| vec![format!("{}", k + 1), num(q)])
                .collect();
            out.push_str(&table(&["stage", "threshold"], &rows));
        }
        ReportPayload::Coverage(r) => {
            out.push_str(&coverage_table(r));
        }
        ReportPayload::Sweep(r) => {
            let rows: Vec<Vec<String>> = r
                .cells
                .iter()
                .map(|c| {
                    vec![
                        format!("{:.3}", c.alpha),
                        c.n_cal.to_string(),
                        c.method.to_string(),
                        mean_std_cell(c.mean_e2e_coverage, c.std_e2e_coverage),
                        c.mean_avg_set_size
                            .map(|m| mean_std_cell(m, c.std_avg_set_size))
                            .unwrap_or_else(|| "---".into()),
                    ]
                })
                .collect();
            out.push_str(&table(
                &["alpha", "n_cal", "method", "e2e_coverage", "avg_set_size"],
                &rows,
            ));
            if !r.slice_cells.is_empty() {
                out.push('\n');
                let rows: Vec<Vec<String>> = r
                    .slice_cells
                    .iter()
                    .map(|c| {
                        vec![
                            format!("{:.3}", c.alpha),
                            c.n_cal.to_string(),
                            c.method.to_string(),
                            c.label.clone(),
                            format!("{:.1}", c.mean_n_samples),
                            mean_std_cell(c.mean_e2e_coverage, c.std_e2e_coverage),
                        ]
                    })
                    .collect();
                out.push_str(&table(
                    &["alpha", "n_cal", "method", "slice", "n", "e2e_coverage"],
                    &rows,
                ));
            }
        }
        ReportPayload::Scaling(r) => {
            let _ = writeln!(
                out,
                "alpha: {}  n_cal: {}  n_test: {}  trials: {}",
                r.alpha, r.n_cal, r.n_test, r.trials
            );
            out.push('\n');
            let rows: Vec<Vec<String>> = r
                .cells
                .iter()
                .map(|c| {
                    vec![
                        c.n_stages.to_string(),
                        c.method.to_string(),
                        mean_std_cell(c.mean_e2e_coverage, c.std_e2e_coverage),
                        num(c.analytic_independent),
                    ]
                })
                .collect();
            out.push_str(&table(
                &["K", "method", "e2e_coverage", "analytic_independent"],
                &rows,
            ));
        }
        ReportPayload::Shift(r) => {
            let _ = writeln!(
                out,
                "alpha: {}  n_cal: {}  n_test: {}  trials: {}",
                r.alpha, r.n_cal, r.n_test, r.trials
            );
            out.push('\n');
            let rows: Vec<Vec<String>> = r
                .cells
                .iter()
                .map(|c| {
                    vec![
                        c.method.to_string(),
                        if c.shifted { "shifted" } else { "in-dist" }.to_string(),
                        mean_std_cell(c.mean_e2e_coverage, c.std_e2e_coverage),
                    ]
                })
                .collect();
            out.push_str(&table(&["method", "split", "e2e_coverage"], &rows));
        }
        ReportPayload::Permutation(r) => {
            let mut header = vec!["alpha", "stage", "actual_cov", "perm_mean", "perm_std"];
            let mut row = vec![
                format!("{:.2}", r.result.alpha.value()),
                r.stage.to_string(),
                num(r.result.actual_coverage),
                num(r.result.permutation_mean),
                num(r.result.permutation_std),
            ];
            if let Some(neg) = r.negative_control_coverage {
                header.push("neg_control");
                row.push(num(neg));
            }
            out.push_str(&table(&header, &[row]));
            let _ = writeln!(out, "\nn_permutations: {}", r.result.n_permutations);
        }
        ReportPayload::SplitAudit(r) => {
            let _ = writeln!(out, "cross_split_duplicates: {}", r.cross_split_duplicates);
            let _ = writeln!(out, "trivial_flagged: {}", r.trivial_flagged);
            if !r.groups.is_empty() {
                out.push('\n');
                let rows: Vec<Vec<String>> = r
                    .groups
                    .iter()
                    .map(|g| {
                        let members: Vec<String> = g
                            .members
                            .iter()
                            .map(|(split, ids)| format!("{split}: {}", ids.join(",")))
                            .collect();
                        vec![
                            g.content_hash[..12].to_string(),
                            g.token_count.to_string(),
                            if g.trivial { "yes" } else { "no" }.to_string(),
                            members.join("; "),
                        ]
                    })
                    .collect();
                out.push_str(&table(&["hash", "tokens", "trivial", "members"], &rows));
            }
        }
        ReportPayload::E2eAudit(r) => {
            let _ = writeln!(out, "n_traced: {}", r.n_traced);
            let _ = writeln!(
                out,
                "all_matched: {}",
                if r.all_matched { "yes" } else { "no" }
            );
        }
    }
    out
}

fn coverage_table(r: &CoverageReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "n_samples: {}", r.n_samples);
    let _ = writeln!(
        out,
        "e2e_coverage: {}",
        mean_std_cell(r.e2e_coverage, r.e2e_dispersion)
    );
    for (k, c) in r.stage_coverage.iter().enumerate() {
        let _ = writeln!(out, "stage_{}_coverage: {}", k + 1, num(*c));
    }
    if let Some(size) = r.avg_set_size {
        let _ = writeln!(out, "avg_set_size: {}", num(size));
    }
    if let Some(members) = r.set_membership_coverage {
        let _ = writeln!(out, "set_membership_coverage: {}", num(members));
    }
    if r.seeds > 1 {
        let _ = writeln!(out, "seeds: {}", r.seeds);
    }
    if !r.slices.is_empty() {
        out.push('\n');
        let rows: Vec<Vec<String>> = r
            .slices
            .iter()
            .map(|s| {
                vec![
                    s.label.clone(),
                    s.n_samples.to_string(),
                    num(s.e2e_coverage),
                ]
            })
            .collect();
        out.push_str(&table(&["slice", "n", "e2e_coverage"], &rows));
    }
    out
}
