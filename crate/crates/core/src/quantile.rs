//! The split-conformal quantile and the joint maximum score reduction.

use crate::error::{Error, Result};
use crate::matrix::{AlphaLevel, ScoreMatrix};

/// Rank of the conformal quantile: the ceil((n+1)(1-alpha))-th order statistic.
#[must_use]
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    (((n as f64) + 1.0) * (1.0 - alpha)).ceil() as usize
}

/// Finite-sample conformal quantile of a calibration score sample.
///
/// Returns the r-th smallest score with r = ceil((n+1)(1-alpha)), or +inf
/// when r > n (alpha too small for the sample size to certify anything,
/// so every test point is accepted). Comparisons downstream are inclusive.
pub fn conformal_quantile(scores: &[f64], alpha: AlphaLevel) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore { index });
    }
    let n = scores.len();
    let rank = conformal_rank(n, alpha.value());
    if rank > n {
        return Ok(f64::INFINITY);
    }
    let mut work = scores.to_vec();
    let (_, selected, _) = work.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*selected)
}

/// Per-row maxima of a score matrix: the scalar statistic whose threshold
/// event equals the conjunction of all per-stage coverage events.
#[must_use]
pub fn joint_max_scores(matrix: &ScoreMatrix) -> Vec<f64> {
    matrix
        .rows()
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    /// Independent oracle: full sort, then index at ceil((n+1)(1-alpha)).
    fn sort_and_index_oracle(scores: &[f64], alpha: f64) -> f64 {
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = conformal_rank(scores.len(), alpha);
        if rank > scores.len() {
            f64::INFINITY
        } else {
            sorted[rank - 1]
        }
    }

    #[test]
    fn matches_hand_order_statistic() {
        // n=9 scores 0.1..0.9, alpha=0.1: r = ceil(10 * 0.9) = 9 -> 0.9.
        let scores: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let q = conformal_quantile(&scores, AlphaLevel::new(0.1).unwrap()).unwrap();
        assert_eq!(q, 0.9);
    }

    #[test]
    fn single_element_sample() {
        let q = conformal_quantile(&[0.5], AlphaLevel::new(0.5).unwrap()).unwrap();
        assert_eq!(q, 0.5);
    }

    #[test]
    fn rank_beyond_sample_size_returns_infinity() {
        // n=5, alpha=0.01: r = ceil(6 * 0.99) = 6 > 5.
        let scores = [0.2, 0.4, 0.6, 0.8, 1.0];
        let q = conformal_quantile(&scores, AlphaLevel::new(0.01).unwrap()).unwrap();
        assert!(q.is_infinite() && q.is_sign_positive());
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        let alpha = AlphaLevel::new(0.1).unwrap();
        assert!(matches!(
            conformal_quantile(&[], alpha),
            Err(Error::EmptyCalibrationSet)
        ));
        let err = conformal_quantile(&[0.1, f64::INFINITY, 0.2], alpha).unwrap_err();
        assert!(matches!(err, Error::NonFiniteScore { index: 1 }));
    }

    #[test]
    fn agrees_with_sort_oracle_on_random_inputs() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let n = rng.random_range(1..=150);
            let tie_heavy = rng.random_bool(0.5);
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    let u: f64 = rng.random();
                    if tie_heavy {
                        (u * 10.0).round() / 10.0
                    } else {
                        u
                    }
                })
                .collect();
            let alpha_raw = rng.random_range(0.001..0.999);
            let alpha = AlphaLevel::new(alpha_raw).unwrap();
            let got = conformal_quantile(&scores, alpha).unwrap();
            let want = sort_and_index_oracle(&scores, alpha_raw);
            assert_eq!(got.to_bits(), want.to_bits(), "n={n} alpha={alpha_raw}");
        }
    }

    #[test]
    fn hand_built_row_maxima() {
        let m = ScoreMatrix::new(vec![vec![0.1, 0.9], vec![0.4, 0.2], vec![0.7, 0.7]]).unwrap();
        assert_eq!(joint_max_scores(&m), vec![0.9, 0.4, 0.7]);
    }

    #[test]
    fn max_of_single_row() {
        let m = ScoreMatrix::new(vec![vec![0.2, 0.5, 0.3]]).unwrap();
        assert_eq!(joint_max_scores(&m), vec![0.5]);
        let z = ScoreMatrix::new(vec![vec![0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(joint_max_scores(&z), vec![0.0]);
    }

    proptest! {
        #[test]
        fn monotone_in_alpha(
            scores in proptest::collection::vec(0.0f64..1.0, 1..60),
            a1 in 0.01f64..0.98,
            bump in 0.001f64..0.01,
        ) {
            let a2 = (a1 + bump).min(0.99);
            let q1 = conformal_quantile(&scores, AlphaLevel::new(a1).unwrap()).unwrap();
            let q2 = conformal_quantile(&scores, AlphaLevel::new(a2).unwrap()).unwrap();
            prop_assert!(q1 >= q2);
        }

        #[test]
        fn permutation_invariant(
            scores in proptest::collection::vec(0.0f64..1.0, 1..60),
            seed in any::<u64>(),
            alpha in 0.01f64..0.99,
        ) {
            let mut shuffled = scores.clone();
            shuffled.shuffle(&mut ChaCha12Rng::seed_from_u64(seed));
            let alpha = AlphaLevel::new(alpha).unwrap();
            let q1 = conformal_quantile(&scores, alpha).unwrap();
            let q2 = conformal_quantile(&shuffled, alpha).unwrap();
            prop_assert_eq!(q1.to_bits(), q2.to_bits());
        }
    }
}
