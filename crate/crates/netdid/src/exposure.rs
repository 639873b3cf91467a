//! Exposure mappings: summaries of neighbors' treatments.
//!
//! An exposure mapping reduces the treatment vector of a unit's neighborhood
//! to a low-dimensional statistic `G_i = g(i, D_{-i}, A)` (Manski, 1993;
//! Aronow and Samii, 2017). Two mappings are supported:
//!
//! ```text
//! any:    G_i = 1{ sum_{j in N(i)} D_j > 0 }            levels {0, 1}
//! count:  G_i = min( sum_{j in N(i)} D_j , cap )        levels {0, ..., cap}
//! ```
//!
//! The count mapping is capped so its level set stays finite and every level
//! retains mass; the top level pools "cap or more" treated neighbors.
//! Isolated nodes always have exposure zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Default cap for the count exposure mapping.
pub const DEFAULT_COUNT_CAP: usize = 3;

/// Exposure mapping configuration, serialized as
/// `{"exposure": {"kind": "any"}}` or
/// `{"exposure": {"kind": "count", "cap": 3}}`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExposureConfig {
    /// Indicator of at least one treated neighbor.
    #[default]
    Any,
    /// Number of treated neighbors, truncated at `cap`.
    Count {
        #[serde(default = "default_cap")]
        cap: usize,
    },
}

fn default_cap() -> usize {
    DEFAULT_COUNT_CAP
}

impl ExposureConfig {
    /// Validates the configuration (a count cap of zero would collapse the
    /// level set to a single point).
    pub fn validate(&self) -> Result<()> {
        if let ExposureConfig::Count { cap } = self {
            if *cap == 0 {
                return Err(Error::InvalidConfig(
                    "count exposure cap must be at least 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// The mapping's level set, in increasing order.
    pub fn levels(&self) -> Vec<usize> {
        match self {
            ExposureConfig::Any => vec![0, 1],
            ExposureConfig::Count { cap } => (0..=*cap).collect(),
        }
    }

    /// Computes the exposure of every node under this mapping.
    pub fn compute(&self, graph: &Graph, d: &[u8]) -> Result<Vec<usize>> {
        self.validate()?;
        match self {
            ExposureConfig::Any => exposure_any(graph, d),
            ExposureConfig::Count { cap } => exposure_count(graph, d, *cap),
        }
    }
}

/// Number of treated neighbors truncated at `cap`, per node.
pub fn exposure_count(graph: &Graph, d: &[u8], cap: usize) -> Result<Vec<usize>> {
    check_d(graph, d)?;
    Ok((0..graph.n())
        .map(|i| {
            let treated = graph
                .neighbors(i)
                .iter()
                .filter(|&&j| d[j] == 1)
                .count();
            treated.min(cap)
        })
        .collect())
}

/// Indicator of at least one treated neighbor, per node.
pub fn exposure_any(graph: &Graph, d: &[u8]) -> Result<Vec<usize>> {
    check_d(graph, d)?;
    Ok((0..graph.n())
        .map(|i| usize::from(graph.neighbors(i).iter().any(|&j| d[j] == 1)))
        .collect())
}

/// Neighbor mean of a scalar per-node quantity; isolated nodes get zero.
pub fn neighbor_mean(graph: &Graph, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != graph.n() {
        return Err(Error::LengthMismatch {
            what: "per-node vector",
            got: v.len(),
            expected: graph.n(),
        });
    }
    Ok((0..graph.n())
        .map(|i| {
            let nbrs = graph.neighbors(i);
            if nbrs.is_empty() {
                0.0
            } else {
                nbrs.iter().map(|&j| v[j]).sum::<f64>() / nbrs.len() as f64
            }
        })
        .collect())
}

/// Neighbor means of each covariate column: row-major `n x p` output where
/// row `i` holds the mean of each column over `N(i)`, or zeros for isolated
/// nodes.
pub fn neighbor_mean_covariates(graph: &Graph, x: &[f64], p: usize) -> Result<Vec<f64>> {
    let n = graph.n();
    if x.len() != n * p {
        return Err(Error::LengthMismatch {
            what: "covariate matrix",
            got: x.len(),
            expected: n * p,
        });
    }
    let mut out = vec![0.0; n * p];
    for i in 0..n {
        let nbrs = graph.neighbors(i);
        if nbrs.is_empty() {
            continue;
        }
        let inv = 1.0 / nbrs.len() as f64;
        for &j in nbrs {
            for c in 0..p {
                out[i * p + c] += x[j * p + c];
            }
        }
        for c in 0..p {
            out[i * p + c] *= inv;
        }
    }
    Ok(out)
}

fn check_d(graph: &Graph, d: &[u8]) -> Result<()> {
    if d.len() != graph.n() {
        return Err(Error::LengthMismatch {
            what: "treatment vector",
            got: d.len(),
            expected: graph.n(),
        });
    }
    Ok(())
}
