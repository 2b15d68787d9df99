//! Evaluation metrics: RMSE for regression, precision@K and MAP@K for
//! ranking.
//!
//! MAP@K follows the KDD Cup 2012 convention: the average precision of one
//! query is `(1 / min(K, R)) * sum_{r=1..K} P@r * rel(r)` with `R` the
//! number of relevant targets, and queries without any relevant target are
//! excluded from the mean rather than counted as zero. MAP definitions vary;
//! this is the one used here throughout.

use std::collections::HashSet;

use crate::error::{Error, Result};

/// One query's scored ranking and its relevant targets.
///
/// Targets are sorted by descending score; ties break by ascending target id
/// so results are deterministic.
#[derive(Debug, Clone)]
pub struct RankedQueryResult {
    pub query: usize,
    pub ranked: Vec<(usize, f64)>,
    pub relevant: HashSet<usize>,
}

impl RankedQueryResult {
    pub fn new(query: usize, mut scored: Vec<(usize, f64)>, relevant: HashSet<usize>) -> Self {
        // total_cmp keeps NaN scores (a diverged model) from panicking
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        RankedQueryResult {
            query,
            ranked: scored,
            relevant,
        }
    }
}

/// Root mean square error of predictions against ground truth.
pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty { what: "rmse input" });
    }
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            what: "rmse inputs",
            expected: predictions.len(),
            got: truths.len(),
        });
    }
    let sum: f64 = predictions
        .iter()
        .zip(truths)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sum / predictions.len() as f64).sqrt())
}

/// Fraction of the top `k` ranked targets that are relevant.
pub fn precision_at_k(result: &RankedQueryResult, k: usize) -> Result<f64> {
    assert!(k >= 1);
    if result.ranked.is_empty() {
        return Err(Error::Empty {
            what: "ranking for precision",
        });
    }
    let hits = result
        .ranked
        .iter()
        .take(k)
        .filter(|(j, _)| result.relevant.contains(j))
        .count();
    Ok(hits as f64 / k as f64)
}

/// Average precision at `k` of a single query, or None when the query has no
/// relevant target.
fn average_precision_at_k(result: &RankedQueryResult, k: usize) -> Option<f64> {
    let total_relevant = result.relevant.len();
    if total_relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (rank, (j, _)) in result.ranked.iter().take(k).enumerate() {
        if result.relevant.contains(j) {
            hits += 1;
            acc += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(acc / total_relevant.min(k) as f64)
}

/// Mean of per-query average precision at `k` over queries with at least one
/// relevant target.
pub fn map_at_k(results: &[RankedQueryResult], k: usize) -> Result<f64> {
    assert!(k >= 1);
    let mut sum = 0.0;
    let mut counted = 0usize;
    for result in results {
        if let Some(ap) = average_precision_at_k(result, k) {
            sum += ap;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::NoRelevantTargets);
    }
    Ok(sum / counted as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Build a result whose ranking realizes the given relevance pattern in
    /// order (index r relevant iff pattern[r]).
    fn from_pattern(pattern: &[bool]) -> RankedQueryResult {
        let scored: Vec<(usize, f64)> = pattern
            .iter()
            .enumerate()
            .map(|(r, _)| (r, -(r as f64)))
            .collect();
        let relevant = pattern
            .iter()
            .enumerate()
            .filter(|(_, &rel)| rel)
            .map(|(r, _)| r)
            .collect();
        RankedQueryResult::new(0, scored, relevant)
    }

    #[test]
    fn rmse_cases() {
        assert!((rmse(&[1.0, 2.0], &[1.0, 4.0]).unwrap() - 2.0f64.sqrt()).abs() < 1e-12);
        assert_eq!(rmse(&[3.0, -1.0], &[3.0, -1.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0], &[3.0]).unwrap(), 3.0);
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn rmse_is_symmetric_and_scales() {
        let a = [1.0, 2.5, -3.0];
        let b = [0.5, 2.0, 1.0];
        assert_eq!(rmse(&a, &b).unwrap(), rmse(&b, &a).unwrap());
        let a2: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let b2: Vec<f64> = b.iter().map(|v| 2.0 * v).collect();
        assert!((rmse(&a2, &b2).unwrap() - 2.0 * rmse(&a, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn precision_cases() {
        let r = from_pattern(&[true, false, true]);
        assert_eq!(precision_at_k(&r, 1).unwrap(), 1.0);
        assert_eq!(precision_at_k(&r, 2).unwrap(), 0.5);
        let none = from_pattern(&[false, false, false]);
        for k in 1..=3 {
            assert_eq!(precision_at_k(&none, k).unwrap(), 0.0);
        }
    }

    #[test]
    fn map_hand_case() {
        // relevance [1, 0, 1], K=3, two relevant: (1/2)(1/1 + 2/3) = 5/6
        let r = from_pattern(&[true, false, true]);
        let got = map_at_k(&[r], 3).unwrap();
        assert!((got - 5.0 / 6.0).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn map_perfect_ranking_is_one() {
        let r = from_pattern(&[true, true, true, false]);
        assert_eq!(map_at_k(&[r], 3).unwrap(), 1.0);
    }

    #[test]
    fn map_averages_over_queries() {
        let a = from_pattern(&[true, true]); // AP = 1.0
        let b = from_pattern(&[false, true]); // AP@2 = (1/1)(1/2) = 0.5
        let got = map_at_k(&[a, b], 2).unwrap();
        assert!((got - 0.75).abs() < 1e-12);
    }

    #[test]
    fn queries_without_relevant_targets_are_excluded() {
        let a = from_pattern(&[true, false]);
        let empty = from_pattern(&[false, false]);
        let with = map_at_k(&[a.clone(), empty.clone()], 2).unwrap();
        let without = map_at_k(&[a], 2).unwrap();
        assert_eq!(with, without);
        assert!(map_at_k(&[empty], 2).is_err());
    }

    #[test]
    fn ties_break_by_ascending_target_id() {
        let r = RankedQueryResult::new(
            0,
            vec![(5, 1.0), (2, 1.0), (9, 2.0)],
            HashSet::from([2]),
        );
        let order: Vec<usize> = r.ranked.iter().map(|(j, _)| *j).collect();
        assert_eq!(order, vec![9, 2, 5]);
    }

    proptest! {
        /// Ranking metrics only see the order of scores, never their values.
        #[test]
        fn rank_metrics_are_argsort_invariant(
            scores in proptest::collection::vec(-10.0f64..10.0, 1..20),
            rel_bits in proptest::collection::vec(any::<bool>(), 20),
            k in 1usize..6,
        ) {
            let scored: Vec<(usize, f64)> =
                scores.iter().cloned().enumerate().collect();
            let relevant: HashSet<usize> = scored
                .iter()
                .filter(|(j, _)| rel_bits[*j])
                .map(|(j, _)| *j)
                .collect();
            let plain = RankedQueryResult::new(0, scored.clone(), relevant.clone());
            // strictly monotone transform: 3x + exp(x/20)
            let warped: Vec<(usize, f64)> = scored
                .iter()
                .map(|&(j, s)| (j, 3.0 * s + (s / 20.0).exp()))
                .collect();
            let warped = RankedQueryResult::new(0, warped, relevant.clone());
            prop_assert_eq!(
                precision_at_k(&plain, k).unwrap(),
                precision_at_k(&warped, k).unwrap()
            );
            if !relevant.is_empty() {
                let a = map_at_k(&[plain], k).unwrap();
                let b = map_at_k(&[warped], k).unwrap();
                prop_assert_eq!(a, b);
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }
    }
}
