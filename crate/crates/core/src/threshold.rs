//! Per-stage acceptance thresholds and the acceptance decision itself.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::AlphaLevel;

/// How a threshold vector was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    Independent,
    Bonferroni,
    TunedBonferroni,
    Pasc,
}

impl CalibrationMethod {
    #[must_use]
    pub fn name(&self) -> &'static str {
        match self {
            Self::Independent => "independent",
            Self::Bonferroni => "bonferroni",
            Self::TunedBonferroni => "tuned_bonferroni",
            Self::Pasc => "pasc",
        }
    }
}

impl fmt::Display for CalibrationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Serde helpers for threshold sequences: JSON has no infinity literal, so
/// +inf round-trips as the string "inf".
pub mod ext_real {
    use serde::de::{self, SeqAccess, Visitor};
    use serde::ser::SerializeSeq;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(values: &[f64], ser: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = ser.serialize_seq(Some(values.len()))?;
        for v in values {
            if v.is_infinite() && v.is_sign_positive() {
                seq.serialize_element("inf")?;
            } else {
                seq.serialize_element(v)?;
            }
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<Vec<f64>, D::Error> {
        struct ExtRealVisitor;

        impl<'de> Visitor<'de> for ExtRealVisitor {
            type Value = Vec<f64>;

            fn expecting(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str("a sequence of numbers or the string \"inf\"")
            }

            fn visit_seq<A: SeqAccess<'de>>(
                self,
                mut seq: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                #[derive(serde::Deserialize)]
                #[serde(untagged)]
                enum Entry {
                    Number(f64),
                    Text(String),
                }
                let mut out = Vec::new();
                while let Some(entry) = seq.next_element::<Entry>()? {
                    match entry {
                        Entry::Number(v) => out.push(v),
                        Entry::Text(s) if s == "inf" => out.push(f64::INFINITY),
                        Entry::Text(s) => {
                            return Err(de::Error::custom(format!(
                                "unexpected threshold literal `{s}`"
                            )))
                        }
                    }
                }
                Ok(out)
            }
        }

        de.deserialize_seq(ExtRealVisitor)
    }
}

#[derive(Serialize, Deserialize)]
struct ThresholdVectorWire {
    #[serde(with = "ext_real")]
    thresholds: Vec<f64>,
    method: CalibrationMethod,
    alpha: AlphaLevel,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    allocation: Option<Vec<f64>>,
    n_cal: usize,
}

/// Per-stage acceptance thresholds q_1..q_K with calibration provenance.
///
/// +inf is a legal threshold (the accept-everything degenerate case when the
/// conformal rank exceeds the calibration size); -inf and NaN are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThresholdVectorWire", into = "ThresholdVectorWire")]
pub struct ThresholdVector {
    thresholds: Vec<f64>,
    method: CalibrationMethod,
    alpha: AlphaLevel,
    allocation: Option<Vec<f64>>,
    n_cal: usize,
}

impl ThresholdVector {
    pub fn new(
        thresholds: Vec<f64>,
        method: CalibrationMethod,
        alpha: AlphaLevel,
        allocation: Option<Vec<f64>>,
        n_cal: usize,
    ) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::EmptyCalibrationSet);
        }
        for (stage, &q) in thresholds.iter().enumerate() {
            let plus_inf = q.is_infinite() && q.is_sign_positive();
            if !q.is_finite() && !plus_inf {
                return Err(Error::InvalidThreshold { stage, value: q });
            }
        }
        if method == CalibrationMethod::Pasc {
            let first = thresholds[0].to_bits();
            if thresholds.iter().any(|q| q.to_bits() != first) {
                return Err(Error::PascThresholdsNotUniform);
            }
        }
        if let Some(alloc) = &allocation {
            if alloc.len() != thresholds.len() {
                return Err(Error::AllocationLengthMismatch {
                    found: alloc.len(),
                    expected: thresholds.len(),
                });
            }
            let sum: f64 = alloc.iter().sum();
            if sum > alpha.value() + 1e-12 {
                return Err(Error::AllocationExceedsAlpha {
                    sum,
                    alpha: alpha.value(),
                });
            }
        }
        Ok(Self {
            thresholds,
            method,
            alpha,
            allocation,
            n_cal,
        })
    }

    #[must_use]
    pub fn values(&self) -> &[f64] {
        &self.thresholds
    }

    #[must_use]
    pub fn n_stages(&self) -> usize {
        self.thresholds.len()
    }

    #[must_use]
    pub fn method(&self) -> CalibrationMethod {
        self.method
    }

    #[must_use]
    pub fn alpha(&self) -> AlphaLevel {
        self.alpha
    }

    #[must_use]
    pub fn allocation(&self) -> Option<&[f64]> {
        self.allocation.as_deref()
    }

    #[must_use]
    pub fn n_cal(&self) -> usize {
        self.n_cal
    }
}

impl TryFrom<ThresholdVectorWire> for ThresholdVector {
    type Error = Error;

    fn try_from(wire: ThresholdVectorWire) -> Result<Self> {
        Self::new(
            wire.thresholds,
            wire.method,
            wire.alpha,
            wire.allocation,
            wire.n_cal,
        )
    }
}

impl From<ThresholdVector> for ThresholdVectorWire {
    fn from(tv: ThresholdVector) -> Self {
        Self {
            thresholds: tv.thresholds,
            method: tv.method,
            alpha: tv.alpha,
            allocation: tv.allocation,
            n_cal: tv.n_cal,
        }
    }
}

/// Outcome of the acceptance decision for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceOutcome {
    pub per_stage_covered: Vec<bool>,
    pub e2e_covered: bool,
    pub max_score: f64,
}

/// Per-stage inclusive comparison of one score row against its thresholds.
///
/// The end-to-end decision is the conjunction of the stage decisions; with a
/// shared threshold it coincides with thresholding the row maximum.
pub fn accept(row_scores: &[f64], thresholds: &ThresholdVector) -> Result<AcceptanceOutcome> {
    if row_scores.len() != thresholds.n_stages() {
        return Err(Error::ThresholdLengthMismatch {
            found: row_scores.len(),
            expected: thresholds.n_stages(),
        });
    }
    let per_stage_covered: Vec<bool> = row_scores
        .iter()
        .zip(thresholds.values())
        .map(|(&s, &q)| s <= q)
        .collect();
    let e2e_covered = per_stage_covered.iter().all(|&c| c);
    let max_score = row_scores
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(AcceptanceOutcome {
        per_stage_covered,
        e2e_covered,
        max_score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantile::joint_max_scores;
    use crate::ScoreMatrix;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn alpha(a: f64) -> AlphaLevel {
        AlphaLevel::new(a).unwrap()
    }

    fn thresholds(values: Vec<f64>) -> ThresholdVector {
        ThresholdVector::new(values, CalibrationMethod::Independent, alpha(0.1), None, 10).unwrap()
    }

    #[test]
    fn boundary_comparison_is_inclusive() {
        let t = thresholds(vec![0.5, 0.5]);
        let out = accept(&[0.2, 0.5], &t).unwrap();
        assert_eq!(out.per_stage_covered, vec![true, true]);
        assert!(out.e2e_covered);

        let out = accept(&[0.2, 0.51], &t).unwrap();
        assert_eq!(out.per_stage_covered, vec![true, false]);
        assert!(!out.e2e_covered);
        assert_eq!(out.max_score, 0.51);
    }

    #[test]
    fn infinite_thresholds_accept_everything() {
        let t = thresholds(vec![f64::INFINITY, f64::INFINITY]);
        let out = accept(&[123.0, -5.0], &t).unwrap();
        assert!(out.e2e_covered);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let t = thresholds(vec![0.5, 0.5]);
        assert!(matches!(
            accept(&[0.1], &t),
            Err(Error::ThresholdLengthMismatch { .. })
        ));
    }

    #[test]
    fn pasc_thresholds_must_be_uniform() {
        let err = ThresholdVector::new(
            vec![0.4, 0.5],
            CalibrationMethod::Pasc,
            alpha(0.1),
            None,
            10,
        )
        .unwrap_err();
        assert!(matches!(err, Error::PascThresholdsNotUniform));
    }

    #[test]
    fn rejects_nan_and_negative_infinity() {
        for bad in [f64::NAN, f64::NEG_INFINITY] {
            let err = ThresholdVector::new(
                vec![bad],
                CalibrationMethod::Independent,
                alpha(0.1),
                None,
                1,
            )
            .unwrap_err();
            assert!(matches!(err, Error::InvalidThreshold { stage: 0, .. }));
        }
    }

    #[test]
    fn allocation_must_stay_within_alpha() {
        let err = ThresholdVector::new(
            vec![0.5, 0.5],
            CalibrationMethod::Bonferroni,
            alpha(0.1),
            Some(vec![0.08, 0.08]),
            10,
        )
        .unwrap_err();
        assert!(matches!(err, Error::AllocationExceedsAlpha { .. }));
    }

    #[test]
    fn serde_round_trips_infinite_thresholds() {
        let t = ThresholdVector::new(
            vec![0.25, f64::INFINITY],
            CalibrationMethod::Bonferroni,
            alpha(0.1),
            Some(vec![0.05, 0.05]),
            9,
        )
        .unwrap();
        let json = serde_json::to_string(&t).unwrap();
        let back: ThresholdVector = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn mean_and_sum_events_are_not_the_conjunction() {
        // The max is the only monotone scalarization whose threshold event
        // reproduces the all-stages-covered conjunction; mean and sum both
        // disagree somewhere on random rows.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut mean_disagrees = 0usize;
        let mut sum_disagrees = 0usize;
        for _ in 0..1000 {
            let k = rng.random_range(2..=5);
            let row: Vec<f64> = (0..k).map(|_| rng.random()).collect();
            let q: f64 = rng.random();
            let conjunction = row.iter().all(|&s| s <= q);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = row.iter().sum::<f64>() / k as f64;
            let sum: f64 = row.iter().sum();
            assert_eq!(max <= q, conjunction);
            if (mean <= q) != conjunction {
                mean_disagrees += 1;
            }
            if (sum <= q) != conjunction {
                sum_disagrees += 1;
            }
        }
        assert!(mean_disagrees > 0);
        assert!(sum_disagrees > 0);
    }

    proptest! {
        #[test]
        fn shared_threshold_reduces_to_row_maximum(
            rows in proptest::collection::vec(
                proptest::collection::vec(0.0f64..1.0, 3),
                1..30,
            ),
            q in 0.0f64..1.0,
        ) {
            let t = ThresholdVector::new(
                vec![q; 3],
                CalibrationMethod::Pasc,
                AlphaLevel::new(0.1).unwrap(),
                None,
                rows.len(),
            ).unwrap();
            let matrix = ScoreMatrix::new(rows.clone()).unwrap();
            let maxes = joint_max_scores(&matrix);
            for (row, max) in rows.iter().zip(maxes) {
                let out = accept(row, &t).unwrap();
                prop_assert_eq!(out.e2e_covered, max <= q);
                prop_assert_eq!(out.max_score, max);
            }
        }
    }
}
