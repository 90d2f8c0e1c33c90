//! Closed-form loss algebra that every sampler is measured against.
//!
//! For deterministic per-partition sample counts `n[i,k]`, the expected
//! squared Frobenius error of the fused shift estimate decomposes as
//! `sum p[i,k]^2 * score[i,k] / n[i,k]`; minimizing over real-valued counts
//! that sum to `N` gives `(sum p*sigma)^2 / N`, attained at counts
//! proportional to `p * sigma`.

use crate::error::{Error, Result};
use crate::types::{Allocation, PartitionWeights, ScoreGrid, ShiftMatrix, WeightMatrix};

/// Squared weighted Frobenius norm: `sum ((W[i,j] * delta[i,j])^2)`.
/// With all-ones `W` this is the plain squared Frobenius norm.
pub fn weighted_frobenius_sq(delta: &ShiftMatrix, weights: &WeightMatrix) -> Result<f64> {
    if delta.labels() != weights.labels() {
        return Err(Error::Dimension(format!(
            "shift is {0}x{0}, weights are {1}x{1}",
            delta.labels(),
            weights.labels()
        )));
    }
    let l = delta.labels();
    let mut total = 0.0;
    for i in 0..l {
        for j in 0..l {
            let v = weights.get(i, j) * delta.get(i, j);
            total += v * v;
        }
    }
    Ok(total)
}

/// Expected squared Frobenius error of a deterministic allocation:
/// `sum p^2 * score / n` over partitions.
///
/// Errors when a partition with positive `p * sigma` has no samples, since
/// the error there is then unbounded rather than zero.
pub fn expected_loss_closed_form(
    alloc: &Allocation,
    p: &PartitionWeights,
    scores: &ScoreGrid,
) -> Result<f64> {
    if alloc.dims() != p.dims() || scores.dims() != p.dims() {
        return Err(Error::Dimension(
            "allocation, weights and scores must share dimensions".into(),
        ));
    }
    let mut total = 0.0;
    for cell in p.active() {
        let mass = p.mass(cell);
        let score = scores.score(cell);
        if score == 0.0 {
            continue;
        }
        let n = alloc.count(cell);
        if n == 0 {
            return Err(Error::UndefinedLoss(cell));
        }
        total += mass * mass * score / n as f64;
    }
    Ok(total)
}

/// Loss of the best real-valued allocation of `n` samples:
/// `(sum p * sigma)^2 / n`.
pub fn optimal_loss(n: u64, p: &PartitionWeights, scores: &ScoreGrid) -> Result<f64> {
    if scores.dims() != p.dims() {
        return Err(Error::Dimension("weights and scores must share dimensions".into()));
    }
    if n == 0 {
        return Err(Error::Config("optimal loss needs at least 1 sample".into()));
    }
    let weighted: f64 = p.active().map(|c| p.mass(c) * scores.sigma(c)).sum();
    Ok(weighted * weighted / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Dimensions, PartitionId};

    fn two_cells(p: [f64; 2], scores: [f64; 2]) -> (PartitionWeights, ScoreGrid) {
        let dims = Dimensions::new(2, 1).unwrap();
        let w = PartitionWeights::from_grid(dims, vec![vec![p[0]], vec![p[1]]]).unwrap();
        let s = ScoreGrid::new(dims, scores.to_vec()).unwrap();
        (w, s)
    }

    #[test]
    fn frobenius_zero_shift() {
        let d = ShiftMatrix::zero(2);
        assert_eq!(weighted_frobenius_sq(&d, &WeightMatrix::ones(2)).unwrap(), 0.0);
    }

    #[test]
    fn frobenius_hand_sum() {
        let d = ShiftMatrix::from_rows(vec![vec![0.04, -0.04], vec![-0.02, 0.02]]).unwrap();
        let got = weighted_frobenius_sq(&d, &WeightMatrix::ones(2)).unwrap();
        assert!((got - 0.004).abs() < 1e-15);
    }

    #[test]
    fn frobenius_identity_weights_score_diagonal_only() {
        let d = ShiftMatrix::from_rows(vec![vec![0.04, -0.04], vec![-0.02, 0.02]]).unwrap();
        let got = weighted_frobenius_sq(&d, &WeightMatrix::identity(2)).unwrap();
        assert!((got - 0.002).abs() < 1e-15);
    }

    #[test]
    fn frobenius_dimension_mismatch() {
        let d = ShiftMatrix::zero(3);
        assert!(weighted_frobenius_sq(&d, &WeightMatrix::ones(2)).is_err());
    }

    #[test]
    fn expected_loss_zero_scores() {
        let (p, s) = two_cells([0.5, 0.5], [0.0, 0.0]);
        let alloc = Allocation::new(p.dims(), vec![3, 0]).unwrap();
        assert_eq!(expected_loss_closed_form(&alloc, &p, &s).unwrap(), 0.0);
    }

    #[test]
    fn expected_loss_hand_values() {
        // score = sigma^2, so sigma (0.3, 0.1) is scores (0.09, 0.01).
        let (p, s) = two_cells([0.5, 0.5], [0.09, 0.01]);
        let opt = Allocation::new(p.dims(), vec![75, 25]).unwrap();
        let even = Allocation::new(p.dims(), vec![50, 50]).unwrap();
        let at_opt = expected_loss_closed_form(&opt, &p, &s).unwrap();
        let at_even = expected_loss_closed_form(&even, &p, &s).unwrap();
        assert!((at_opt - 4.0e-4).abs() < 1e-15);
        assert!((at_even - 5.0e-4).abs() < 1e-15);
        assert!(at_even > at_opt);
    }

    #[test]
    fn expected_loss_rejects_starved_partition() {
        let (p, s) = two_cells([0.5, 0.5], [0.09, 0.01]);
        let alloc = Allocation::new(p.dims(), vec![100, 0]).unwrap();
        let err = expected_loss_closed_form(&alloc, &p, &s).unwrap_err();
        assert!(
            matches!(err, Error::UndefinedLoss(c) if c == PartitionId::new(1, 0)),
            "{err}"
        );
    }

    #[test]
    fn optimal_loss_hand_value_and_scaling() {
        let (p, s) = two_cells([0.5, 0.5], [0.09, 0.01]);
        let at_100 = optimal_loss(100, &p, &s).unwrap();
        assert!((at_100 - 4.0e-4).abs() < 1e-15);
        let at_200 = optimal_loss(200, &p, &s).unwrap();
        assert!((at_200 - at_100 / 2.0).abs() < 1e-18);
        let (p0, s0) = two_cells([0.5, 0.5], [0.0, 0.0]);
        assert_eq!(optimal_loss(7, &p0, &s0).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_at_real_optimum_matches_optimal_loss() {
        let (p, s) = two_cells([0.7, 0.3], [0.17, 0.42]);
        let n = 640u64;
        let weighted: f64 = p.active().map(|c| p.mass(c) * s.sigma(c)).sum();
        let mut by_hand = 0.0;
        for cell in p.active() {
            let real_count = p.mass(cell) * s.sigma(cell) / weighted * n as f64;
            by_hand += p.mass(cell).powi(2) * s.score(cell) / real_count;
        }
        let opt = optimal_loss(n, &p, &s).unwrap();
        assert!((by_hand - opt).abs() < 1e-12);
    }

    #[test]
    fn integer_allocations_never_beat_the_continuous_bound() {
        // Exhaustive enumeration on a 2-cell grid, N up to 16.
        let (p, s) = two_cells([0.6, 0.4], [0.25, 0.04]);
        for n in 2..=16u64 {
            let bound = optimal_loss(n, &p, &s).unwrap();
            for a in 1..n {
                let alloc = Allocation::new(p.dims(), vec![a, n - a]).unwrap();
                let loss = expected_loss_closed_form(&alloc, &p, &s).unwrap();
                assert!(loss >= bound - 1e-15, "n={n} a={a}: {loss} < {bound}");
            }
        }
    }
}
