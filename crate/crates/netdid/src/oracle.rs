//! Population-level bias diagnostics on small discrete instances, and
//! potential-outcome oracles for the simulated designs.
//!
//! The diagnostics quantify what a naive difference-in-differences
//! comparison picks up when exposure to treated neighbors shifts between
//! the treated and control groups (Manski, 1993; Forastiere, Airoldi, and
//! Mealli, 2021). On a fully tabulated discrete instance the bias has a
//! closed form ([`prop1_bias`], [`prop2_bias`]); the same quantity can be
//! computed directly from the definitions ([`naive_contrast`] minus
//! [`direct_att`]), which is how the formulas are verified.
//!
//! [`potential_outcome_att`] reads the effect off a simulated design's
//! counterfactual outcomes instead, giving the ground truth that Monte
//! Carlo bias is measured against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Estimand;
use crate::simulate::{simulate, DgpConfig};

/// Tolerance for probability tables summing to one.
const SUM_TOLERANCE: f64 = 1e-9;

/// A fully tabulated discrete population: finite supports for the
/// covariate cell `x`, the exposure level `g`, and the neighborhood
/// covariate `u`, with conditional outcome-change means and conditional
/// exposure distributions for both treatment arms.
///
/// Tables are indexed `[d][x][g]` or `[d][x][g][u]` with `d` the own
/// treatment in `{0, 1}`. `weights[x]` is the population share of
/// covariate cell `x`. A degenerate neighborhood covariate (`n_u = 1`,
/// every `p_u` entry equal to one) reduces the instance to the
/// covariate-and-exposure case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteSpec {
    /// Number of covariate cells.
    pub n_x: usize,
    /// Number of exposure levels.
    pub n_g: usize,
    /// Number of neighborhood-covariate values.
    pub n_u: usize,
    /// Population share of each covariate cell; sums to one.
    pub weights: Vec<f64>,
    /// Conditional mean outcome change `E[dY | d, x, g, u]`.
    pub mean: Vec<Vec<Vec<Vec<f64>>>>,
    /// Conditional exposure distribution `P(g | d, x)`; sums to one over
    /// `g`.
    pub p_g: Vec<Vec<Vec<f64>>>,
    /// Conditional neighborhood-covariate distribution `P(u | d, x, g)`;
    /// sums to one over `u`.
    pub p_u: Vec<Vec<Vec<Vec<f64>>>>,
}

fn check_shape(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::InvalidSpec(format!(
            "{what} has length {got}, expected {expected}"
        )));
    }
    Ok(())
}

fn check_distribution(what: &str, p: &[f64]) -> Result<()> {
    let mut sum = 0.0;
    for &v in p {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "{what} has a negative or non-finite entry {v}"
            )));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidSpec(format!(
            "{what} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

impl DiscreteSpec {
    /// Validates table shapes, probability normalization, and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 || self.n_g == 0 || self.n_u == 0 {
            return Err(Error::InvalidSpec(
                "supports must have at least one element".into(),
            ));
        }
        check_shape("weights", self.weights.len(), self.n_x)?;
        check_distribution("weights", &self.weights)?;
        check_shape("mean", self.mean.len(), 2)?;
        check_shape("p_g", self.p_g.len(), 2)?;
        check_shape("p_u", self.p_u.len(), 2)?;
        for d in 0..2 {
            check_shape("mean[d]", self.mean[d].len(), self.n_x)?;
            check_shape("p_g[d]", self.p_g[d].len(), self.n_x)?;
            check_shape("p_u[d]", self.p_u[d].len(), self.n_x)?;
            for x in 0..self.n_x {
                check_shape("mean[d][x]", self.mean[d][x].len(), self.n_g)?;
                check_shape("p_g[d][x]", self.p_g[d][x].len(), self.n_g)?;
                check_distribution("p_g[d][x]", &self.p_g[d][x])?;
                check_shape("p_u[d][x]", self.p_u[d][x].len(), self.n_g)?;
                for g in 0..self.n_g {
                    check_shape("mean[d][x][g]", self.mean[d][x][g].len(), self.n_u)?;
                    for &m in &self.mean[d][x][g] {
                        if !m.is_finite() {
                            return Err(Error::InvalidSpec(format!(
                                "mean table has non-finite entry {m}"
                            )));
                        }
                    }
                    check_shape("p_u[d][x][g]", self.p_u[d][x][g].len(), self.n_u)?;
                    check_distribution("p_u[d][x][g]", &self.p_u[d][x][g])?;
                }
            }
        }
        Ok(())
    }
}

/// The naive observational contrast `E[dY | D=1] - E[dY | D=0]`, computed
/// by marginalizing the tables over exposure and the neighborhood
/// covariate within each arm.
pub fn naive_contrast(spec: &DiscreteSpec) -> Result<f64> {
    spec.validate()?;
    let arm = |d: usize, x: usize| -> f64 {
        let mut total = 0.0;
        for g in 0..spec.n_g {
            for u in 0..spec.n_u {
                total += spec.p_g[d][x][g] * spec.p_u[d][x][g][u] * spec.mean[d][x][g][u];
            }
        }
        total
    };
    Ok((0..spec.n_x)
        .map(|x| spec.weights[x] * (arm(1, x) - arm(0, x)))
        .sum())
}

/// The direct treatment effect on the treated, weighting each treated
/// cell's treated-minus-control mean change by the treated arm's cell
/// distribution. This is the estimand the naive contrast is compared
/// against: under cell-level parallel trends the control mean change
/// identifies the treated cells' untreated trend.
pub fn direct_att(spec: &DiscreteSpec) -> Result<f64> {
    spec.validate()?;
    let mut total = 0.0;
    for x in 0..spec.n_x {
        let mut cell = 0.0;
        for g in 0..spec.n_g {
            for u in 0..spec.n_u {
                cell += spec.p_g[1][x][g]
                    * spec.p_u[1][x][g][u]
                    * (spec.mean[1][x][g][u] - spec.mean[0][x][g][u]);
            }
        }
        total += spec.weights[x] * cell;
    }
    Ok(total)
}

/// Bias of the naive contrast with a free reference level: the control
/// arm's mean changes, centered at exposure `g_ref`, weighted by the shift
/// in the exposure distribution between arms.
fn prop1_bias_at(spec: &DiscreteSpec, g_ref: usize) -> f64 {
    let mut total = 0.0;
    for x in 0..spec.n_x {
        let mut cell = 0.0;
        for g in 0..spec.n_g {
            cell += (spec.mean[0][x][g][0] - spec.mean[0][x][g_ref][0])
                * (spec.p_g[1][x][g] - spec.p_g[0][x][g]);
        }
        total += spec.weights[x] * cell;
    }
    total
}

/// Closed-form bias of the naive contrast when exposure alone shifts
/// between arms (no neighborhood covariate): for each covariate cell,
/// `sum_g [E(dY|0,g,x) - E(dY|0,g',x)] [P(g|1,x) - P(g|0,x)]` with the
/// reference level `g'` fixed to the smallest exposure value.
///
/// The reference term is a constant multiplied by a difference of two
/// distributions, so it sums to zero and any fixed reference gives the
/// same value; zero is chosen to make the output deterministic. The value
/// equals [`naive_contrast`] minus [`direct_att`] on the same tables.
pub fn prop1_bias(spec: &DiscreteSpec) -> Result<f64> {
    spec.validate()?;
    if spec.n_u != 1 {
        return Err(Error::InvalidSpec(format!(
            "exposure-only bias needs a degenerate neighborhood covariate, got n_u = {}",
            spec.n_u
        )));
    }
    Ok(prop1_bias_at(spec, 0))
}

/// General form with free reference levels `(g_ref, u_ref)`.
fn prop2_general_at(spec: &DiscreteSpec, g_ref: usize, u_ref: usize) -> f64 {
    let mut total = 0.0;
    for x in 0..spec.n_x {
        let mut cell = 0.0;
        for g in 0..spec.n_g {
            for u in 0..spec.n_u {
                let shift = spec.p_u[1][x][g][u] * spec.p_g[1][x][g]
                    - spec.p_u[0][x][g][u] * spec.p_g[0][x][g];
                cell += (spec.mean[0][x][g][u] - spec.mean[0][x][g_ref][u_ref]) * shift;
            }
        }
        total += spec.weights[x] * cell;
    }
    total
}

/// Simplified form with a free reference level `u_ref`, defined on the
/// marginal distribution of the neighborhood covariate within each arm.
fn prop2_simplified_at(spec: &DiscreteSpec, u_ref: usize) -> Result<f64> {
    let mut total = 0.0;
    for x in 0..spec.n_x {
        // Marginals P(u | d, x) and the control-arm mean given u alone.
        let marginal = |d: usize, u: usize| -> f64 {
            (0..spec.n_g)
                .map(|g| spec.p_g[d][x][g] * spec.p_u[d][x][g][u])
                .sum()
        };
        let mut mean_u = vec![0.0; spec.n_u];
        for (u, slot) in mean_u.iter_mut().enumerate() {
            let p0 = marginal(0, u);
            if p0 <= 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "P(u={u} | D=0, x={x}) is zero; the simplified bias is undefined"
                )));
            }
            *slot = (0..spec.n_g)
                .map(|g| spec.p_g[0][x][g] * spec.p_u[0][x][g][u] * spec.mean[0][x][g][u])
                .sum::<f64>()
                / p0;
        }
        let mut cell = 0.0;
        for u in 0..spec.n_u {
            cell += (mean_u[u] - mean_u[u_ref]) * (marginal(1, u) - marginal(0, u));
        }
        total += spec.weights[x] * cell;
    }
    Ok(total)
}

/// Closed-form bias of the naive contrast when both exposure and a
/// neighborhood covariate shift between arms.
///
/// The general form weights the control arm's mean changes, centered at
/// the reference cell `(g', u') = (0, 0)`, by the shift in the joint
/// `(g, u)` distribution; it equals [`naive_contrast`] minus
/// [`direct_att`] on the same tables. With `assume_dg_independent` set,
/// the formula instead marginalizes to the neighborhood covariate alone:
/// `sum_u [E(dY|0,u,x) - E(dY|0,u',x)] [P(u|1,x) - P(u|0,x)]`. The two
/// agree when exposure carries no information beyond `u` (the exposure
/// distribution equal across arms and the `u` distribution constant in
/// exposure); the simplified form is otherwise a coarsened diagnostic.
pub fn prop2_bias(spec: &DiscreteSpec, assume_dg_independent: bool) -> Result<f64> {
    spec.validate()?;
    if assume_dg_independent {
        prop2_simplified_at(spec, 0)
    } else {
        Ok(prop2_general_at(spec, 0, 0))
    }
}

/// Ground truth for one estimand of a simulated design, with the Monte
/// Carlo error of the truth itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTruth {
    /// Mean of the per-replication potential-outcome contrasts.
    pub value: f64,
    /// Standard error of that mean over replications (zero when the
    /// contrast is deterministic or `reps` is one).
    pub mc_se: f64,
    /// Number of replications.
    pub reps: usize,
}

/// Reads an estimand's value off a design's counterfactual outcomes.
///
/// Replication `r` simulates the design with seed `seed + r`, forms the
/// per-unit potential-outcome contrast for the estimand, and averages it
/// over the estimand's conditioning set (treated units at the exposure
/// level for the direct effects, units of the spillover arm for the
/// spillover effects, all treated units for the overall and total
/// effects). The returned value averages the per-replication means.
///
/// The naive arm has no causal contrast of its own; its truth is defined
/// as the overall direct effect, which is what its bias is reported
/// against.
pub fn potential_outcome_att(
    cfg: &DgpConfig,
    estimand: Estimand,
    reps: usize,
    seed: u64,
) -> Result<OracleTruth> {
    if reps == 0 {
        return Err(Error::InvalidConfig(
            "potential-outcome oracle needs at least one replication".into(),
        ));
    }
    if let Estimand::Datt { level } | Estimand::Satt { level, .. } = estimand {
        if level > 1 {
            return Err(Error::LevelNotInSupport {
                level,
                levels: vec![0, 1],
            });
        }
    }
    let mut per_rep = Vec::with_capacity(reps);
    for r in 0..reps {
        let mut rep_cfg = cfg.clone();
        rep_cfg.seed = seed + r as u64;
        let sim = simulate(&rep_cfg)?;
        let n = sim.panel.n;
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            let d = sim.panel.d[i];
            let g = sim.g[i].min(1);
            let contrast = match estimand {
                Estimand::Datt { level } => {
                    if d != 1 || g != level {
                        continue;
                    }
                    sim.y_cf[1][level][i] - sim.y_cf[0][level][i]
                }
                Estimand::DattOverall | Estimand::Naive => {
                    if d != 1 {
                        continue;
                    }
                    sim.y_cf[1][g][i] - sim.y_cf[0][g][i]
                }
                Estimand::Satt { level, d: arm } => {
                    if d != arm || g != level {
                        continue;
                    }
                    sim.y_cf[usize::from(arm)][level][i] - sim.y_cf[usize::from(arm)][0][i]
                }
                Estimand::AttTotal => {
                    if d != 1 {
                        continue;
                    }
                    sim.y_cf[1][g][i] - sim.y_cf[0][0][i]
                }
            };
            total += contrast;
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyLeg {
                leg: "potential-outcome oracle",
                level: match estimand {
                    Estimand::Datt { level } | Estimand::Satt { level, .. } => level,
                    _ => 0,
                },
            });
        }
        per_rep.push(total / count as f64);
    }
    let value = per_rep.iter().sum::<f64>() / reps as f64;
    let mc_se = if reps > 1 {
        let var = per_rep.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (reps - 1) as f64;
        (var / reps as f64).sqrt()
    } else {
        0.0
    };
    Ok(OracleTruth {
        value,
        mc_se,
        reps,
    })
}
