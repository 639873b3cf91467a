//! Network-robust variance estimation for score-based estimators.
//!
//! The point estimators report per-unit scores whose sample mean equals the
//! estimate, so the estimate's sampling variance is the variance of that
//! mean. Under local interference, dependence between units decays with
//! network distance, and a spatial HAC estimator in the style of
//! Kojevnikov, Marmer, and Song (2021) applies: covariance terms are
//! accumulated for every ordered pair of retained units within graph
//! distance `b_n` of each other,
//!
//! ```text
//! sigma2 = (1 / m) sum_i sum_j (s_i - sbar)(s_j - sbar) 1{dist(i, j) <= b}
//! se     = sqrt(sigma2 / m)
//! ```
//!
//! At bandwidth zero only the diagonal survives and the estimator reduces
//! exactly, term for term, to the independence-based variance. Like other
//! truncated HAC estimators the variance estimate can come out negative in
//! unlucky samples; it is then flagged rather than floored, and the
//! standard error is reported as NaN.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::ScoreVector;
use crate::graph::Graph;

/// Variance estimate for one score vector.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    /// Long-run variance estimate `sigma2`.
    pub sigma2: f64,
    /// Standard error `sqrt(sigma2 / m)`; NaN when `sigma2 < 0`.
    pub se: f64,
    /// Truncation bandwidth used (0 for the independence estimator).
    pub bandwidth: usize,
    /// Ordered pairs accumulated, diagonal included.
    pub pairs: usize,
    /// Retained units.
    pub m_n: usize,
    /// True when `sigma2` came out negative.
    pub negative: bool,
}

/// Truncation bandwidth from the connectivity summaries of the graph:
///
/// ```text
/// b = ceil(L / (2 + gamma))     if L < 2 ln(n) / ln(dbar)
///     ceil(L^(1 / (2 + gamma))) otherwise
/// ```
///
/// where `L` is the average path length and `dbar` the average degree. The
/// first branch covers sparse graphs whose diameter grows like `log n`;
/// denser graphs (including any with `dbar <= 1`, where the threshold is
/// undefined) take the slower-growing root rule. The result is clamped to
/// at least 1.
pub fn bandwidth(avg_path_length: f64, n: usize, avg_degree: f64, gamma: f64) -> Result<usize> {
    if !(avg_path_length.is_finite() && avg_path_length > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "average path length must be positive, got {avg_path_length}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "bandwidth rule needs n >= 2, got {n}"
        )));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "gamma must be non-negative, got {gamma}"
        )));
    }
    let l = avg_path_length;
    let expand = avg_degree > 1.0 && l < 2.0 * (n as f64).ln() / avg_degree.ln();
    let b = if expand {
        (l / (2.0 + gamma)).ceil()
    } else {
        l.powf(1.0 / (2.0 + gamma)).ceil()
    };
    Ok((b as usize).max(1))
}

/// Network HAC variance of the score mean at truncation bandwidth `b`.
///
/// Every ordered pair of retained units within graph distance `b`
/// contributes its cross-product of deviations; pairs are found by one
/// truncated breadth-first search per retained unit.
pub fn hac_variance(scores: &ScoreVector, graph: &Graph, b: usize) -> Result<VarianceReport> {
    let set = scores.set();
    let m = set.len();
    if let Some(&max) = set.last() {
        if max >= graph.n() {
            return Err(Error::NodeOutOfRange {
                index: max,
                n: graph.n(),
            });
        }
    }
    let sbar = scores.mean();
    let dev: Vec<f64> = scores.scores().iter().map(|s| s - sbar).collect();
    let mut pos = vec![usize::MAX; graph.n()];
    for (a, &i) in set.iter().enumerate() {
        pos[i] = a;
    }
    let mut acc = 0.0;
    let mut pairs = 0usize;
    for (a, &i) in set.iter().enumerate() {
        for (node, _) in graph.bfs_within(i, b) {
            let bpos = pos[node];
            if bpos != usize::MAX {
                acc += dev[a] * dev[bpos];
                pairs += 1;
            }
        }
    }
    let sigma2 = acc / m as f64;
    Ok(finish(sigma2, b, pairs, m))
}

/// Independence-based variance of the score mean: the diagonal of the HAC
/// sum, accumulated in the same order as [`hac_variance`] at bandwidth 0.
pub fn iid_variance(scores: &ScoreVector) -> VarianceReport {
    let m = scores.m();
    let sbar = scores.mean();
    let mut acc = 0.0;
    for s in scores.scores() {
        let d = s - sbar;
        acc += d * d;
    }
    let sigma2 = acc / m as f64;
    finish(sigma2, 0, m, m)
}

fn finish(sigma2: f64, bandwidth: usize, pairs: usize, m: usize) -> VarianceReport {
    let negative = sigma2 < 0.0;
    let se = if negative {
        f64::NAN
    } else {
        (sigma2 / m as f64).sqrt()
    };
    VarianceReport {
        sigma2,
        se,
        bandwidth,
        pairs,
        m_n: m,
        negative,
    }
}

/// Two-sided normal confidence interval at miscoverage `alpha`.
pub fn confidence_interval(point: f64, se: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    let z = Normal::new(0.0, 1.0)
        .map_err(|_| Error::InvalidConfig("standard normal unavailable".into()))?
        .inverse_cdf(1.0 - alpha / 2.0);
    Ok((point - z * se, point + z * se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bandwidth_matches_worked_examples() {
        // Sparse branch: ceil(9 / 3) on a graph with average degree 2.
        assert_eq!(bandwidth(9.0, 2000, 2.0, 1.0).unwrap(), 3);
        // Long paths push into the root branch: ceil(100^(1/3)).
        assert_eq!(bandwidth(100.0, 2000, 2.0, 1.0).unwrap(), 5);
    }

    #[test]
    fn bandwidth_degenerate_degree_uses_root_branch() {
        // With average degree <= 1 the threshold is undefined; the root
        // rule gives ceil(8^(1/3)) = 2 where the sparse rule would give 3.
        assert_eq!(bandwidth(8.0, 2000, 1.0, 1.0).unwrap(), 2);
        assert_eq!(bandwidth(8.0, 2000, 0.5, 1.0).unwrap(), 2);
    }

    #[test]
    fn bandwidth_is_at_least_one() {
        assert_eq!(bandwidth(1.0, 50, 5.0, 1.0).unwrap(), 1);
        assert!(bandwidth(-1.0, 50, 5.0, 1.0).is_err());
        assert!(bandwidth(3.0, 1, 5.0, 1.0).is_err());
        assert!(bandwidth(3.0, 50, 5.0, -0.5).is_err());
    }

    #[test]
    fn hac_at_bandwidth_zero_equals_iid_bit_for_bit() {
        let graph = crate::graph::rgg_from_positions(
            &crate::graph::sample_positions(60, 11),
            0.2,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let set: Vec<usize> = (0..60).filter(|_| rng.gen::<f64>() < 0.7).collect();
        let vals: Vec<f64> = set.iter().map(|_| rng.gen::<f64>() * 3.0 - 1.0).collect();
        let sv = ScoreVector::new(vals, set).unwrap();
        let hac = hac_variance(&sv, &graph, 0).unwrap();
        let iid = iid_variance(&sv);
        assert_eq!(hac.sigma2.to_bits(), iid.sigma2.to_bits());
        assert_eq!(hac.se.to_bits(), iid.se.to_bits());
        assert_eq!(hac.pairs, iid.pairs);
    }

    #[test]
    fn hac_matches_dense_double_loop() {
        let graph = Graph::from_edges(
            7,
            &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (1, 5), (5, 6)],
        )
        .unwrap();
        let set: Vec<usize> = (0..7).collect();
        let vals = vec![1.0, -0.5, 2.0, 0.25, -1.5, 0.75, 3.0];
        let sv = ScoreVector::new(vals.clone(), set.clone()).unwrap();
        for b in 0..4 {
            let hac = hac_variance(&sv, &graph, b).unwrap();
            let sbar = vals.iter().sum::<f64>() / 7.0;
            let mut acc = 0.0;
            let mut pairs = 0;
            for &i in &set {
                for &j in &set {
                    let within = graph
                        .shortest_path_distance(i, j)
                        .unwrap()
                        .map(|d| d <= b)
                        .unwrap_or(false);
                    if within {
                        acc += (vals[i] - sbar) * (vals[j] - sbar);
                        pairs += 1;
                    }
                }
            }
            assert_relative_eq!(hac.sigma2, acc / 7.0, max_relative = 1e-12);
            assert_eq!(hac.pairs, pairs);
        }
    }

    #[test]
    fn negative_hac_is_flagged_not_floored() {
        let graph = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let sv = ScoreVector::new(vec![1.0, -1.0, 1.0], vec![0, 1, 2]).unwrap();
        let hac = hac_variance(&sv, &graph, 1).unwrap();
        assert_relative_eq!(hac.sigma2, -8.0 / 27.0, max_relative = 1e-14);
        assert!(hac.negative);
        assert!(hac.se.is_nan());
    }

    #[test]
    fn confidence_interval_uses_normal_quantile() {
        let (lo, hi) = confidence_interval(1.0, 2.0, 0.05).unwrap();
        assert_relative_eq!(lo, 1.0 - 1.959964 * 2.0, max_relative = 1e-6);
        assert_relative_eq!(hi, 1.0 + 1.959964 * 2.0, max_relative = 1e-6);
        assert!(confidence_interval(0.0, 1.0, 0.0).is_err());
    }
}
