//! Score matrices and miscoverage levels, the inputs every calibrator shares.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Target miscoverage level, validated to lie strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AlphaLevel(f64);

impl AlphaLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
            return Err(Error::InvalidAlpha { value: alpha });
        }
        Ok(Self(alpha))
    }

    #[must_use]
    pub fn value(&self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for AlphaLevel {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<AlphaLevel> for f64 {
    fn from(alpha: AlphaLevel) -> f64 {
        alpha.0
    }
}

/// An n-samples x K-stages grid of nonconformity scores.
///
/// Scores are expected in `[0, 1]` (the stage adapters produce that range)
/// but the matrix does not clamp: out-of-range values are counted and a
/// warning is logged, since shifted test scores legitimately escape the
/// unit interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n_stages: usize,
    rows: Vec<Vec<f64>>,
    sample_ids: Option<Vec<String>>,
    out_of_range: usize,
}

impl ScoreMatrix {
    /// Build a matrix from row-major scores. Every row must have the same
    /// length and every score must be finite.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyCalibrationSet);
        }
        let n_stages = rows[0].len();
        if n_stages == 0 {
            return Err(Error::StageCountMismatch {
                row: 0,
                found: 0,
                expected: 1,
            });
        }
        let mut out_of_range = 0usize;
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n_stages {
                return Err(Error::StageCountMismatch {
                    row: r,
                    found: row.len(),
                    expected: n_stages,
                });
            }
            for (k, &s) in row.iter().enumerate() {
                if !s.is_finite() {
                    return Err(Error::NonFiniteMatrixScore { row: r, stage: k });
                }
                if !(0.0..=1.0).contains(&s) {
                    out_of_range += 1;
                }
            }
        }
        if out_of_range > 0 {
            log::warn!(
                "{out_of_range} of {} scores fall outside [0, 1]",
                rows.len() * n_stages
            );
        }
        Ok(Self {
            n_stages,
            rows,
            sample_ids: None,
            out_of_range,
        })
    }

    /// Attach per-sample identifiers. Ids must be unique and match the row count.
    pub fn with_sample_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.rows.len() {
            return Err(Error::SampleIdCountMismatch {
                found: ids.len(),
                expected: self.rows.len(),
            });
        }
        let mut seen = std::collections::HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateSampleId { id: id.clone() });
            }
        }
        self.sample_ids = Some(ids);
        Ok(self)
    }

    /// Single-column convenience constructor.
    pub fn from_column(scores: Vec<f64>) -> Result<Self> {
        Self::new(scores.into_iter().map(|s| vec![s]).collect())
    }

    #[must_use]
    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }

    #[must_use]
    pub fn n_stages(&self) -> usize {
        self.n_stages
    }

    #[must_use]
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    #[must_use]
    pub fn row(&self, index: usize) -> &[f64] {
        &self.rows[index]
    }

    /// Copy of column `stage`.
    pub fn column(&self, stage: usize) -> Result<Vec<f64>> {
        if stage >= self.n_stages {
            return Err(Error::StageOutOfRange {
                index: stage,
                n_stages: self.n_stages,
            });
        }
        Ok(self.rows.iter().map(|r| r[stage]).collect())
    }

    #[must_use]
    pub fn sample_ids(&self) -> Option<&[String]> {
        self.sample_ids.as_deref()
    }

    /// Number of scores outside `[0, 1]` observed at construction.
    #[must_use]
    pub fn out_of_range_count(&self) -> usize {
        self.out_of_range
    }

    /// New matrix containing the given rows (ids carried over when present).
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let rows = indices.iter().map(|&i| self.rows[i].clone()).collect();
        let matrix = Self::new(rows)?;
        match &self.sample_ids {
            Some(ids) => matrix.with_sample_ids(indices.iter().map(|&i| ids[i].clone()).collect()),
            None => Ok(matrix),
        }
    }
}
