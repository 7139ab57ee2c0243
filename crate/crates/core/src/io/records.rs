//! Line-delimited score records.
//!
//! A score file starts with a schema header line and continues with one JSON
//! record per line:
//!
//! ```text
//! {"schema":"pasc.scores.v1"}
//! {"sample_id":"s0","scores":[0.12,0.05,0.31],"group_labels":{"entity_type":"PER"}}
//! ```
//!
//! Every record must carry the same number of scores; the stage count is
//! inferred from the first record. Optional fields carry per-stage candidate
//! lists, per-stage true labels, group labels and raw text for audits.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::candidates::{Candidate, PredictionCandidates, StageCandidates};
use crate::diagnostics::SplitRecord;
use crate::error::{Error, Result};
use crate::evaluate::GroupLabels;
use crate::matrix::ScoreMatrix;

/// Schema identifier every score file must declare on its first line.
pub const SCORES_SCHEMA: &str = "pasc.scores.v1";

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    schema: String,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    sample_id: String,
    scores: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    group_labels: Option<BTreeMap<String, String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    candidates: Option<Vec<Option<Vec<Candidate>>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    true_labels: Option<Vec<Option<String>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    raw_text: Option<String>,
}

/// Everything a score file can carry.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScores {
    pub matrix: ScoreMatrix,
    pub candidates: Option<PredictionCandidates>,
    pub group_labels: Option<GroupLabels>,
    pub raw_texts: Option<Vec<Option<String>>>,
}

fn record_error(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Record {
        path: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

/// Parse a score file. Malformed records are reported with their line
/// number; the stage count of the first record is enforced on all others.
pub fn load_scores(path: impl AsRef<Path>) -> Result<LoadedScores> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let Some((header_no, header_text)) = lines.next() else {
        return Err(Error::EmptyCalibrationSet);
    };
    let header: HeaderLine = serde_json::from_str(header_text).map_err(|_| {
        Error::MissingSchemaHeader {
            path: path.display().to_string(),
            expected: format!("{{\"schema\":\"{SCORES_SCHEMA}\"}}"),
        }
    })?;
    if header.schema != SCORES_SCHEMA {
        return Err(Error::SchemaMismatch {
            path: path.display().to_string(),
            found: header.schema,
            expected: SCORES_SCHEMA.to_string(),
        });
    }
    let _ = header_no;

    let mut n_stages: Option<usize> = None;
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    let mut candidate_rows: Vec<Vec<Option<StageCandidates>>> = Vec::new();
    let mut any_candidates = false;
    let mut group_label_rows: GroupLabels = Vec::new();
    let mut any_group_labels = false;
    let mut raw_texts: Vec<Option<String>> = Vec::new();
    let mut any_raw_text = false;

    for (line_no, text) in lines {
        let record: RecordLine = serde_json::from_str(text)
            .map_err(|e| record_error(path, line_no, e.to_string()))?;
        let k = *n_stages.get_or_insert(record.scores.len());
        if k == 0 {
            return Err(record_error(path, line_no, "record carries no scores"));
        }
        if record.scores.len() != k {
            return Err(record_error(
                path,
                line_no,
                format!("expected {k} scores, found {}", record.scores.len()),
            ));
        }
        if let Some(stage) = record.scores.iter().position(|s| !s.is_finite()) {
            return Err(record_error(
                path,
                line_no,
                format!("non-finite score at stage {stage}"),
            ));
        }
        if !seen_ids.insert(record.sample_id.clone()) {
            return Err(record_error(
                path,
                line_no,
                format!("duplicate sample id `{}`", record.sample_id),
            ));
        }

        let mut cand_row: Vec<Option<StageCandidates>> = vec![None; k];
        if let Some(cands) = record.candidates {
            if cands.len() != k {
                return Err(record_error(
                    path,
                    line_no,
                    format!("candidates cover {} stages, expected {k}", cands.len()),
                ));
            }
            for (stage, entry) in cands.into_iter().enumerate() {
                if let Some(list) = entry {
                    any_candidates = true;
                    cand_row[stage] = Some(StageCandidates {
                        candidates: list,
                        true_label: None,
                    });
                }
            }
        }
        if let Some(truths) = record.true_labels {
            if truths.len() != k {
                return Err(record_error(
                    path,
                    line_no,
                    format!("true_labels cover {} stages, expected {k}", truths.len()),
                ));
            }
            for (stage, truth) in truths.into_iter().enumerate() {
                let Some(truth) = truth else { continue };
                match cand_row[stage].as_mut() {
                    Some(entry) => entry.true_label = Some(truth),
                    None => {
                        return Err(record_error(
                            path,
                            line_no,
                            format!("true label at stage {stage} has no candidate list"),
                        ))
                    }
                }
            }
        }

        if record.group_labels.is_some() {
            any_group_labels = true;
        }
        if record.raw_text.is_some() {
            any_raw_text = true;
        }
        group_label_rows.push(record.group_labels.unwrap_or_default());
        raw_texts.push(record.raw_text);
        candidate_rows.push(cand_row);
        ids.push(record.sample_id);
        rows.push(record.scores);
    }

    if rows.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    let matrix = ScoreMatrix::new(rows)?.with_sample_ids(ids)?;
    let candidates = if any_candidates {
        Some(PredictionCandidates::new(candidate_rows)?)
    } else {
        None
    };
    Ok(LoadedScores {
        matrix,
        candidates,
        group_labels: if any_group_labels {
            Some(group_label_rows)
        } else {
            None
        },
        raw_texts: if any_raw_text { Some(raw_texts) } else { None },
    })
}

/// Write scores in the record format. Matrices without sample ids get
/// generated ids `s0..s{n-1}`, so files always round-trip through
/// [`load_scores`].
pub fn write_scores(path: impl AsRef<Path>, scores: &LoadedScores) -> Result<()> {
    let path = path.as_ref();
    let n = scores.matrix.n_samples();
    let k = scores.matrix.n_stages();
    let ids: Vec<String> = match scores.matrix.sample_ids() {
        Some(ids) => ids.to_vec(),
        None => (0..n).map(|i| format!("s{i}")).collect(),
    };
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&HeaderLine {
        schema: SCORES_SCHEMA.to_string(),
    })
    .expect("header serializes"));
    out.push('\n');
    for i in 0..n {
        let (candidates, true_labels) = match &scores.candidates {
            Some(cands) => {
                let mut lists: Vec<Option<Vec<Candidate>>> = Vec::with_capacity(k);
                let mut truths: Vec<Option<String>> = Vec::with_capacity(k);
                let mut any_truth = false;
                for stage in 0..k {
                    match cands.entry(i, stage) {
                        Some(entry) => {
                            lists.push(Some(entry.candidates.clone()));
                            if entry.true_label.is_some() {
                                any_truth = true;
                            }
                            truths.push(entry.true_label.clone());
                        }
                        None => {
                            lists.push(None);
                            truths.push(None);
                        }
                    }
                }
                (Some(lists), if any_truth { Some(truths) } else { None })
            }
            None => (None, None),
        };
        let record = RecordLine {
            sample_id: ids[i].clone(),
            scores: scores.matrix.row(i).to_vec(),
            group_labels: scores
                .group_labels
                .as_ref()
                .map(|g| g[i].clone())
                .filter(|m| !m.is_empty()),
            candidates,
            true_labels,
            raw_text: scores.raw_texts.as_ref().and_then(|r| r[i].clone()),
        };
        out.push_str(
            &serde_json::to_string(&record).map_err(|source| Error::Json {
                path: path.display().to_string(),
                source,
            })?,
        );
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Read one split for the integrity audit. Score files (recognized by their
/// schema header) contribute their `raw_text` fields keyed by sample id;
/// any other file is treated as plain text with one record per line.
pub fn load_split_records(path: impl AsRef<Path>) -> Result<Vec<SplitRecord>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let is_scores_file = content
        .lines()
        .find(|l| !l.trim().is_empty())
        .and_then(|l| serde_json::from_str::<HeaderLine>(l).ok())
        .is_some_and(|h| h.schema == SCORES_SCHEMA);

    if is_scores_file {
        let loaded = load_scores(path)?;
        let ids = loaded
            .matrix
            .sample_ids()
            .expect("loaded score files always carry ids");
        let raw = loaded.raw_texts.ok_or_else(|| {
            record_error(path, 1, "score file has no raw_text fields to audit")
        })?;
        Ok(ids
            .iter()
            .zip(raw)
            .filter_map(|(id, text)| {
                text.map(|text| SplitRecord {
                    id: id.clone(),
                    text,
                })
            })
            .collect())
    } else {
        Ok(content
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| SplitRecord {
                id: format!("line{}", i + 1),
                text: l.to_string(),
            })
            .collect())
    }
}
