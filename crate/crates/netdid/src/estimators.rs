//! Doubly robust difference-in-differences estimators under network
//! interference.
//!
//! Every estimator here follows one computational pattern. Units are given
//! weights for a primary leg and a comparison leg, the outcome change is
//! residualized against a fitted control trend, and the point estimate is
//! the difference of the two Hajek (self-normalized) weighted means over the
//! trimmed analysis set. Alongside the estimate, each estimator returns a
//! [`ScoreVector`] of per-unit scores whose sample mean reproduces the
//! estimate exactly; [`crate::variance`] turns those scores into
//! network-robust standard errors in the spirit of Kojevnikov, Marmer, and
//! Song (2021).
//!
//! Estimands:
//!
//! * [`datt_hat`]: direct effect of own treatment at a fixed exposure level,
//!   a network-aware version of the doubly robust estimator of Sant'Anna and
//!   Zhao (2020).
//! * [`datt_overall`]: the direct effect averaged over the exposure
//!   distribution of the treated.
//! * [`satt_hat`]: spillover effect of exposure level `g` versus `0` at
//!   fixed own treatment status.
//! * [`att_total`]: total effect on the treated, combining the direct and
//!   spillover channels.
//! * [`rcs_datt_hat`]: the direct effect from repeated cross sections.
//! * [`staggered_att`]: exposure-matched two-by-two aggregation for
//!   staggered adoption designs.
//! * [`naive_dr_did`]: an interference-blind benchmark in the style of
//!   Abadie (2005), fit as if the graph had no edges.
//!
//! The comparison leg of [`datt_hat`] reweights control units by the cell
//! odds `p1 / p0`, the ratio of the two fitted joint propensities at the
//! same exposure level. When the exposure support collapses to a single
//! level this reduces to the familiar `p / (1 - p)` odds because the two
//! one-vs-rest logistic fits are mirror images of each other.

use serde::{Deserialize, Serialize};

use crate::data::{delta_y, PanelDataset, RcsDataset, StaggeredPanel};
use crate::error::{Error, Result};
use crate::exposure::ExposureConfig;
use crate::graph::Graph;
use crate::nuisance::{
    fit_nuisances, fit_nuisances_rcs, fit_outcome_cell, LearnerConfig, NuisanceFit,
    RcsNuisanceFit,
};
use crate::variance::{bandwidth, confidence_interval, hac_variance, iid_variance};

/// Per-unit scores for one point estimate, restricted to the retained
/// analysis set.
///
/// The construction invariant is that the sample mean of `scores` equals
/// the point estimate they accompany, so the variance of the estimate is
/// the variance of this mean.
#[derive(Debug, Clone)]
pub struct ScoreVector {
    scores: Vec<f64>,
    set: Vec<usize>,
}

impl ScoreVector {
    /// Builds a score vector over `set` (strictly ascending node indices).
    ///
    /// Requires at least two retained units, one score per unit, and finite
    /// scores.
    pub fn new(scores: Vec<f64>, set: Vec<usize>) -> Result<Self> {
        if set.len() < 2 {
            return Err(Error::AnalysisSetTooSmall {
                m: set.len(),
                required: 2,
            });
        }
        if scores.len() != set.len() {
            return Err(Error::LengthMismatch {
                what: "score vector",
                got: scores.len(),
                expected: set.len(),
            });
        }
        if !set.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidData(
                "analysis set must be strictly ascending".into(),
            ));
        }
        for (row, &s) in scores.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::NonFinite {
                    what: "scores",
                    row,
                });
            }
        }
        Ok(ScoreVector { scores, set })
    }

    /// Number of retained units.
    pub fn m(&self) -> usize {
        self.set.len()
    }

    /// Scores, aligned with [`ScoreVector::set`].
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Retained node indices, ascending.
    pub fn set(&self) -> &[usize] {
        &self.set
    }

    /// Sample mean of the scores; equals the accompanying point estimate.
    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

/// Doubly robust score for the direct effect at one exposure level, written
/// exactly as the estimating equation:
///
/// ```text
/// (d 1{g = level} - (1 - d) 1{g = level} p / (1 - p)) (dy - m0)
/// ```
///
/// `p` is the fitted treated-cell propensity and `m0` the fitted control
/// trend, both evaluated at the unit. [`datt_hat`] aggregates a
/// self-normalized variant built on the cell odds; this raw form is the
/// single-level special case the two share.
pub fn dr_score(d: u8, g: usize, level: usize, p: f64, dy: f64, m0: f64) -> f64 {
    let at = f64::from(g == level);
    let treated = f64::from(d) * at;
    let reweighted = (1.0 - f64::from(d)) * at * p / (1.0 - p);
    (treated - reweighted) * (dy - m0)
}

/// Outcome of applying the overlap trimming rule.
#[derive(Debug, Clone, Serialize)]
pub struct TrimInfo {
    /// Retained node indices, ascending.
    pub set: Vec<usize>,
    /// Number of units dropped.
    pub dropped: usize,
    /// Trimming threshold used.
    pub eps: f64,
}

/// Units whose raw fitted treated-cell propensity lies strictly inside
/// `(eps, 1 - eps)`.
///
/// Trimming inspects the unclipped fit: clipping is a numerical guard on
/// the weights, while trimming defines which units the estimate refers to.
pub fn trim_analysis_set(fit: &NuisanceFit, eps: f64) -> Result<TrimInfo> {
    let set = trim_set(&fit.p1_raw, eps)?;
    Ok(TrimInfo {
        dropped: fit.n() - set.len(),
        set,
        eps,
    })
}

fn trim_set(p1_raw: &[f64], eps: f64) -> Result<Vec<usize>> {
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::InvalidConfig(format!(
            "trimming threshold must be in [0, 0.5), got {eps}"
        )));
    }
    Ok((0..p1_raw.len())
        .filter(|&i| p1_raw[i] > eps && p1_raw[i] < 1.0 - eps)
        .collect())
}

fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len().min(b.len()));
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Difference of Hajek means with influence-style scores.
///
/// All slices are aligned to the analysis set. The estimate is
/// `sum(w1 r) / sum(w1) - sum(w0 r) / sum(w0)`; the per-unit scores are
///
/// ```text
/// s_i = w1_i (r_i - rbar1) / wbar1 - w0_i (r_i - rbar0) / wbar0 + est
/// ```
///
/// with `wbar = sum(w) / m`, so the scores average exactly to the estimate.
fn hajek_contrast(
    w1: &[f64],
    w0: &[f64],
    r: &[f64],
    leg1: &'static str,
    leg0: &'static str,
    level: usize,
) -> Result<(f64, Vec<f64>)> {
    let m = r.len() as f64;
    if !w1.iter().any(|&w| w > 0.0) {
        return Err(Error::EmptyLeg { leg: leg1, level });
    }
    if !w0.iter().any(|&w| w > 0.0) {
        return Err(Error::EmptyLeg { leg: leg0, level });
    }
    let sw1: f64 = w1.iter().sum();
    let sw0: f64 = w0.iter().sum();
    let rbar1 = w1.iter().zip(r).map(|(w, v)| w * v).sum::<f64>() / sw1;
    let rbar0 = w0.iter().zip(r).map(|(w, v)| w * v).sum::<f64>() / sw0;
    let est = rbar1 - rbar0;
    let wbar1 = sw1 / m;
    let wbar0 = sw0 / m;
    let scores = (0..r.len())
        .map(|i| w1[i] * (r[i] - rbar1) / wbar1 - w0[i] * (r[i] - rbar0) / wbar0 + est)
        .collect();
    Ok((est, scores))
}

fn check_panel_shapes(panel: &PanelDataset, g: &[usize], fit_n: usize) -> Result<()> {
    if g.len() != panel.n {
        return Err(Error::LengthMismatch {
            what: "exposure vector",
            got: g.len(),
            expected: panel.n,
        });
    }
    if fit_n != panel.n {
        return Err(Error::LengthMismatch {
            what: "nuisance fit",
            got: fit_n,
            expected: panel.n,
        });
    }
    Ok(())
}

fn require_set(set: &[usize]) -> Result<()> {
    if set.len() < 2 {
        return Err(Error::AnalysisSetTooSmall {
            m: set.len(),
            required: 2,
        });
    }
    Ok(())
}

/// Direct effect of own treatment at exposure level `fit.level`.
///
/// Treated units at the level form the primary leg; control units at the
/// same level are reweighted by the cell odds `p1 / p0` and form the
/// comparison leg. Residuals subtract the fitted control trend `mu0`.
pub fn datt_hat(
    panel: &PanelDataset,
    g: &[usize],
    fit: &NuisanceFit,
    eps_trim: f64,
) -> Result<(f64, ScoreVector, TrimInfo)> {
    let trim = trim_analysis_set(fit, eps_trim)?;
    let (est, scores) = datt_on_set(panel, g, fit, &trim.set)?;
    let sv = ScoreVector::new(scores, trim.set.clone())?;
    Ok((est, sv, trim))
}

fn datt_on_set(
    panel: &PanelDataset,
    g: &[usize],
    fit: &NuisanceFit,
    set: &[usize],
) -> Result<(f64, Vec<f64>)> {
    check_panel_shapes(panel, g, fit.n())?;
    require_set(set)?;
    let dy = delta_y(panel);
    let level = fit.level;
    let mut w1 = Vec::with_capacity(set.len());
    let mut w0 = Vec::with_capacity(set.len());
    let mut r = Vec::with_capacity(set.len());
    for &i in set {
        let at = g[i] == level;
        w1.push(f64::from(panel.d[i] == 1 && at));
        w0.push(if panel.d[i] == 0 && at {
            fit.p1[i] / fit.p0[i]
        } else {
            0.0
        });
        r.push(dy[i] - fit.mu0[i]);
    }
    hajek_contrast(&w1, &w0, &r, "treated", "control", level)
}

/// Spillover effect of exposure level `fit_level.level` versus level `0`,
/// holding own treatment fixed at `d`.
///
/// For `d = 1` the comparison leg reweights treated zero-exposure units by
/// `p1(level) / p1(0)` and the residual subtracts `mu_base`, the fitted
/// treated zero-exposure trend. For `d = 0` the same construction uses the
/// `p0` propensities, and `mu_base` should be the control zero-exposure
/// trend. At `level = 0` both legs coincide and the estimate is exactly
/// zero.
pub fn satt_hat(
    panel: &PanelDataset,
    g: &[usize],
    d: u8,
    fit_level: &NuisanceFit,
    fit_zero: &NuisanceFit,
    mu_base: &[f64],
    eps_trim: f64,
) -> Result<(f64, ScoreVector, TrimInfo)> {
    let t_level = trim_analysis_set(fit_level, eps_trim)?;
    let t_zero = trim_analysis_set(fit_zero, eps_trim)?;
    let set = intersect_sorted(&t_level.set, &t_zero.set);
    let trim = TrimInfo {
        dropped: panel.n - set.len(),
        set,
        eps: eps_trim,
    };
    let (est, scores) = satt_on_set(panel, g, d, fit_level, fit_zero, mu_base, &trim.set)?;
    let sv = ScoreVector::new(scores, trim.set.clone())?;
    Ok((est, sv, trim))
}

fn satt_on_set(
    panel: &PanelDataset,
    g: &[usize],
    d: u8,
    fit_level: &NuisanceFit,
    fit_zero: &NuisanceFit,
    mu_base: &[f64],
    set: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if d > 1 {
        return Err(Error::InvalidConfig(format!(
            "own-treatment arm must be 0 or 1, got {d}"
        )));
    }
    if fit_zero.level != 0 {
        return Err(Error::InvalidConfig(format!(
            "spillover baseline fit must target level 0, got {}",
            fit_zero.level
        )));
    }
    check_panel_shapes(panel, g, fit_level.n())?;
    check_panel_shapes(panel, g, fit_zero.n())?;
    check_panel_shapes(panel, g, mu_base.len())?;
    require_set(set)?;
    let dy = delta_y(panel);
    let level = fit_level.level;
    let mut w1 = Vec::with_capacity(set.len());
    let mut w0 = Vec::with_capacity(set.len());
    let mut r = Vec::with_capacity(set.len());
    for &i in set {
        let own = panel.d[i] == d;
        let (num, den) = if d == 1 {
            (fit_level.p1[i], fit_zero.p1[i])
        } else {
            (fit_level.p0[i], fit_zero.p0[i])
        };
        w1.push(f64::from(own && g[i] == level));
        w0.push(if own && g[i] == 0 { num / den } else { 0.0 });
        r.push(dy[i] - mu_base[i]);
    }
    hajek_contrast(&w1, &w0, &r, "exposed", "zero-exposure", level)
}

/// Exposure-level breakdown of an aggregated estimate.
#[derive(Debug, Clone, Serialize)]
pub struct AttBreakdown {
    /// Exposure levels, ascending.
    pub levels: Vec<usize>,
    /// Empirical exposure shares among retained treated units.
    pub shares: Vec<f64>,
    /// Direct-effect component per level (NaN when the level has no
    /// retained treated unit).
    pub datt: Vec<f64>,
    /// Spillover component per level; empty for [`datt_overall`].
    pub satt: Vec<f64>,
}

fn level_map(fits: &[NuisanceFit]) -> Result<Vec<(usize, &NuisanceFit)>> {
    let mut out: Vec<(usize, &NuisanceFit)> = Vec::with_capacity(fits.len());
    for f in fits {
        if out.iter().any(|&(l, _)| l == f.level) {
            return Err(Error::InvalidConfig(format!(
                "duplicate nuisance fit for exposure level {}",
                f.level
            )));
        }
        out.push((f.level, f));
    }
    out.sort_by_key(|&(l, _)| l);
    Ok(out)
}

fn joint_trim_set(fits: &[NuisanceFit], eps: f64) -> Result<Vec<usize>> {
    let mut set: Option<Vec<usize>> = None;
    for f in fits {
        let t = trim_set(&f.p1_raw, eps)?;
        set = Some(match set {
            None => t,
            Some(s) => intersect_sorted(&s, &t),
        });
    }
    set.ok_or_else(|| Error::InvalidConfig("no nuisance fits supplied".into()))
}

fn treated_shares(
    panel: &PanelDataset,
    g: &[usize],
    levels: &[usize],
    set: &[usize],
) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; levels.len()];
    let mut total = 0usize;
    for &i in set {
        if panel.d[i] != 1 {
            continue;
        }
        total += 1;
        match levels.iter().position(|&l| l == g[i]) {
            Some(k) => counts[k] += 1,
            None => {
                return Err(Error::LevelNotInSupport {
                    level: g[i],
                    levels: levels.to_vec(),
                })
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyLeg {
            leg: "treated",
            level: 0,
        });
    }
    Ok(counts
        .iter()
        .map(|&c| c as f64 / total as f64)
        .collect())
}

/// Direct effect averaged over the exposure distribution of the treated:
/// the per-level direct effects weighted by the empirical exposure shares
/// among retained treated units.
///
/// `fits` must hold one nuisance fit per exposure level covering every
/// exposure value observed among retained treated units. Levels whose share
/// is zero are skipped and reported as NaN in the breakdown.
pub fn datt_overall(
    panel: &PanelDataset,
    g: &[usize],
    fits: &[NuisanceFit],
    eps_trim: f64,
) -> Result<(f64, ScoreVector, TrimInfo, AttBreakdown)> {
    let by_level = level_map(fits)?;
    let set = joint_trim_set(fits, eps_trim)?;
    require_set(&set)?;
    let levels: Vec<usize> = by_level.iter().map(|&(l, _)| l).collect();
    let shares = treated_shares(panel, g, &levels, &set)?;

    let mut est = 0.0;
    let mut scores = vec![0.0; set.len()];
    let mut datt = vec![f64::NAN; levels.len()];
    for (k, &(_, fit)) in by_level.iter().enumerate() {
        if shares[k] == 0.0 {
            continue;
        }
        let (e, s) = datt_on_set(panel, g, fit, &set)?;
        datt[k] = e;
        est += shares[k] * e;
        for (acc, v) in scores.iter_mut().zip(&s) {
            *acc += shares[k] * v;
        }
    }
    let trim = TrimInfo {
        dropped: panel.n - set.len(),
        set: set.clone(),
        eps: eps_trim,
    };
    let sv = ScoreVector::new(scores, set)?;
    let breakdown = AttBreakdown {
        levels,
        shares,
        datt,
        satt: Vec::new(),
    };
    Ok((est, sv, trim, breakdown))
}

/// Total effect of the policy on the treated: for each exposure level, the
/// direct effect plus the spillover effect under control, weighted by the
/// empirical exposure shares among retained treated units.
///
/// `mu_base` is the fitted control zero-exposure trend (the `mu0` of the
/// level-0 fit). The level-0 spillover term is identically zero, so that
/// level contributes only its direct effect.
pub fn att_total(
    panel: &PanelDataset,
    g: &[usize],
    fits: &[NuisanceFit],
    eps_trim: f64,
) -> Result<(f64, ScoreVector, TrimInfo, AttBreakdown)> {
    let by_level = level_map(fits)?;
    let fit_zero = by_level
        .iter()
        .find(|&&(l, _)| l == 0)
        .map(|&(_, f)| f)
        .ok_or_else(|| {
            Error::InvalidConfig("total effect needs a nuisance fit at exposure level 0".into())
        })?;
    let set = joint_trim_set(fits, eps_trim)?;
    require_set(&set)?;
    let levels: Vec<usize> = by_level.iter().map(|&(l, _)| l).collect();
    let shares = treated_shares(panel, g, &levels, &set)?;

    let mut est = 0.0;
    let mut scores = vec![0.0; set.len()];
    let mut datt = vec![f64::NAN; levels.len()];
    let mut satt = vec![f64::NAN; levels.len()];
    for (k, &(level, fit)) in by_level.iter().enumerate() {
        if shares[k] == 0.0 {
            continue;
        }
        let (de, ds) = datt_on_set(panel, g, fit, &set)?;
        datt[k] = de;
        let (se, ss) = if level == 0 {
            (0.0, vec![0.0; set.len()])
        } else {
            satt_on_set(panel, g, 0, fit, fit_zero, &fit_zero.mu0, &set)?
        };
        satt[k] = se;
        est += shares[k] * (de + se);
        for (i, acc) in scores.iter_mut().enumerate() {
            *acc += shares[k] * (ds[i] + ss[i]);
        }
    }
    let trim = TrimInfo {
        dropped: panel.n - set.len(),
        set: set.clone(),
        eps: eps_trim,
    };
    let sv = ScoreVector::new(scores, set)?;
    let breakdown = AttBreakdown {
        levels,
        shares,
        datt,
        satt,
    };
    Ok((est, sv, trim, breakdown))
}

/// Interference-blind benchmark: the classical doubly robust DiD estimator
/// computed as if the graph had no edges.
///
/// Features, propensities, and the outcome trend are all fit on an
/// edge-free copy of the data, so neighbor treatments play no role in the
/// point estimate. The returned fit allows callers to report clipping
/// counts; inference against the true graph is the driver's job.
pub fn naive_dr_did(
    panel: &PanelDataset,
    cfg: &LearnerConfig,
    eps_trim: f64,
) -> Result<(f64, ScoreVector, TrimInfo, NuisanceFit)> {
    let empty = Graph::empty(panel.n);
    let g = vec![0usize; panel.n];
    let fit = fit_nuisances(panel, &empty, &g, 0, cfg)?;
    let (est, sv, trim) = datt_hat(panel, &g, &fit, eps_trim)?;
    Ok((est, sv, trim, fit))
}

/// Direct effect at exposure level `fit.level` from repeated cross
/// sections.
///
/// The two-period contrast is rebuilt from four cells: within each leg
/// (treated at the level; cell-odds-reweighted controls at the level) the
/// post-wave Hajek mean minus the pre-wave Hajek mean, and then the
/// difference across legs. Residuals subtract the fitted control outcome
/// level of the row's own wave.
pub fn rcs_datt_hat(
    rcs: &RcsDataset,
    g: &[usize],
    fit: &RcsNuisanceFit,
    eps_trim: f64,
) -> Result<(f64, ScoreVector, TrimInfo)> {
    if g.len() != rcs.n {
        return Err(Error::LengthMismatch {
            what: "exposure vector",
            got: g.len(),
            expected: rcs.n,
        });
    }
    if fit.p1.len() != rcs.n {
        return Err(Error::LengthMismatch {
            what: "nuisance fit",
            got: fit.p1.len(),
            expected: rcs.n,
        });
    }
    let set = trim_set(&fit.p1_raw, eps_trim)?;
    require_set(&set)?;
    let level = fit.level;

    // Cell index: leg (0 = treated, 1 = reweighted control) times two plus
    // wave. Sign of each cell in the double difference:
    //   treated post +, treated pre -, control post -, control pre +.
    const SIGNS: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];
    const LEGS: [&str; 4] = [
        "treated pre-wave",
        "treated post-wave",
        "control pre-wave",
        "control post-wave",
    ];
    let m = set.len() as f64;
    let mut w = vec![0.0; set.len()];
    let mut r = vec![0.0; set.len()];
    let mut cell = vec![usize::MAX; set.len()];
    let mut sw = [0.0; 4];
    let mut swr = [0.0; 4];
    for (a, &i) in set.iter().enumerate() {
        if g[i] != level {
            continue;
        }
        let t = usize::from(rcs.t[i]);
        let (c, weight) = if rcs.d[i] == 1 {
            (t, 1.0)
        } else {
            (2 + t, fit.p1[i] / fit.p0[i])
        };
        let mu = if rcs.t[i] == 1 {
            fit.mu0_post[i]
        } else {
            fit.mu0_pre[i]
        };
        w[a] = weight;
        r[a] = rcs.y[i] - mu;
        cell[a] = c;
        sw[c] += weight;
        swr[c] += weight * r[a];
    }
    for c in 0..4 {
        if sw[c] <= 0.0 {
            return Err(Error::EmptyLeg {
                leg: LEGS[c],
                level,
            });
        }
    }
    let rbar: Vec<f64> = (0..4).map(|c| swr[c] / sw[c]).collect();
    let est = (rbar[1] - rbar[0]) - (rbar[3] - rbar[2]);
    let scores: Vec<f64> = (0..set.len())
        .map(|a| {
            let c = cell[a];
            if c == usize::MAX {
                est
            } else {
                SIGNS[c] * w[a] * (r[a] - rbar[c]) / (sw[c] / m) + est
            }
        })
        .collect();
    let trim = TrimInfo {
        dropped: rcs.n - set.len(),
        set: set.clone(),
        eps: eps_trim,
    };
    let sv = ScoreVector::new(scores, set)?;
    Ok((est, sv, trim))
}

/// One matched two-by-two comparison: a newly treated unit, an eligible
/// comparison unit with the same treated-neighbor count, and the adoption
/// period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StaggeredPair {
    /// Unit adopting treatment at period `t`.
    pub treated: usize,
    /// Matched comparison unit, not yet treated at `t`.
    pub control: usize,
    /// Adoption period of `treated` (1-based).
    pub t: usize,
}

/// Matches each adopter to every eligible comparison unit with an identical
/// treated-neighbor count at the adoption period.
///
/// At `t = adopt(i)` the treated set is everyone with `adopt <= t`,
/// including `i` itself. Eligible comparisons are units that adopt strictly
/// after `t` or never; unit `j` matches when its number of treated
/// neighbors at `t` equals that of `i`. Adopters in the first period are
/// skipped, since the later two-by-two contrast has no pre-period for them.
pub fn staggered_match(panel: &StaggeredPanel, graph: &Graph) -> Result<Vec<StaggeredPair>> {
    if graph.n() != panel.n {
        return Err(Error::LengthMismatch {
            what: "graph node count",
            got: graph.n(),
            expected: panel.n,
        });
    }
    let treated_neighbors = |j: usize, t: usize| -> usize {
        graph
            .neighbors(j)
            .iter()
            .filter(|&&k| panel.treated_at(k, t))
            .count()
    };
    let mut pairs = Vec::new();
    for i in 0..panel.n {
        let Some(a) = panel.adopt_time[i] else {
            continue;
        };
        if a < 2 {
            continue;
        }
        let expo_i = treated_neighbors(i, a);
        for j in 0..panel.n {
            if j == i {
                continue;
            }
            let eligible = match panel.adopt_time[j] {
                None => true,
                Some(b) => b > a,
            };
            if eligible && treated_neighbors(j, a) == expo_i {
                pairs.push(StaggeredPair {
                    treated: i,
                    control: j,
                    t: a,
                });
            }
        }
    }
    Ok(pairs)
}

/// Aggregated staggered-adoption estimate with per-adopter scores.
#[derive(Debug, Clone)]
pub struct StaggeredEstimate {
    /// Mean of the matched two-by-two contrasts.
    pub estimate: f64,
    /// One score per matched adopter, anchored at the adopter's node.
    pub scores: ScoreVector,
    /// All matched pairs, ascending by adopter then comparison unit.
    pub pairs: Vec<StaggeredPair>,
    /// Adopters with no eligible match (first-period adopters included).
    pub unmatched: usize,
}

/// Exposure-matched two-by-two aggregation for staggered adoption.
///
/// Each matched adopter contributes one score: its own outcome change over
/// the adoption period minus the average change of its matched comparison
/// units. The estimate is the mean score over matched adopters.
pub fn staggered_att(panel: &StaggeredPanel, graph: &Graph) -> Result<StaggeredEstimate> {
    let pairs = staggered_match(panel, graph)?;
    let mut set = Vec::new();
    let mut scores = Vec::new();
    let mut k = 0;
    while k < pairs.len() {
        let i = pairs[k].treated;
        let t = pairs[k].t;
        let mut ctrl = 0.0;
        let mut count = 0.0;
        while k < pairs.len() && pairs[k].treated == i {
            let j = pairs[k].control;
            ctrl += panel.y_at(j, t) - panel.y_at(j, t - 1);
            count += 1.0;
            k += 1;
        }
        set.push(i);
        scores.push(panel.y_at(i, t) - panel.y_at(i, t - 1) - ctrl / count);
    }
    let adopters = panel.adopt_time.iter().filter(|a| a.is_some()).count();
    let unmatched = adopters - set.len();
    let estimate = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
    let sv = ScoreVector::new(scores, set)?;
    Ok(StaggeredEstimate {
        estimate,
        scores: sv,
        pairs,
        unmatched,
    })
}

/// Which estimand the panel driver computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimand {
    /// Direct effect at one exposure level.
    Datt {
        /// Exposure level.
        level: usize,
    },
    /// Direct effect averaged over the treated exposure distribution.
    DattOverall,
    /// Spillover effect of exposure `level` versus `0` at own treatment
    /// `d`.
    Satt {
        /// Exposure level contrasted with zero.
        level: usize,
        /// Own-treatment arm, 0 or 1.
        d: u8,
    },
    /// Total effect on the treated.
    AttTotal,
    /// Interference-blind benchmark.
    Naive,
}

impl Estimand {
    /// Human-readable estimand tag.
    pub fn label(&self) -> String {
        match self {
            Estimand::Datt { level } => format!("datt(level={level})"),
            Estimand::DattOverall => "datt_overall".to_string(),
            Estimand::Satt { level, d } => format!("satt(level={level},d={d})"),
            Estimand::AttTotal => "att_total".to_string(),
            Estimand::Naive => "naive_datt".to_string(),
        }
    }
}

/// Trimming, confidence-level, and bandwidth-growth settings for the
/// estimation drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    /// Overlap trimming threshold, in `[0, 0.5)`.
    #[serde(default = "default_eps_trim")]
    pub eps_trim: f64,
    /// Two-sided miscoverage of the confidence interval, in `(0, 1)`.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Bandwidth growth exponent, non-negative.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_eps_trim() -> f64 {
    0.01
}
fn default_alpha() -> f64 {
    0.05
}
fn default_gamma() -> f64 {
    1.0
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            eps_trim: default_eps_trim(),
            alpha: default_alpha(),
            gamma: default_gamma(),
        }
    }
}

impl InferenceConfig {
    /// Validates parameter ranges.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.eps_trim) {
            return Err(Error::InvalidConfig(format!(
                "eps_trim must be in [0, 0.5), got {}",
                self.eps_trim
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Full estimation output: point estimate, analysis-set accounting, and
/// both network-robust and independence-based inference.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    /// Human-readable estimand tag.
    pub label: String,
    /// Point estimate.
    pub estimate: f64,
    /// Units in the sample.
    pub n: usize,
    /// Units retained after trimming.
    pub m_n: usize,
    /// Units dropped by trimming.
    pub trimmed: usize,
    /// Clipped treated-cell propensity predictions, summed over the fits
    /// used.
    pub clipped_p1: usize,
    /// Clipped control-cell propensity predictions, summed over the fits
    /// used.
    pub clipped_p0: usize,
    /// HAC bandwidth used.
    pub bandwidth: usize,
    /// Network-robust standard error (NaN when the HAC variance is
    /// negative).
    pub se_hac: f64,
    /// Independence-based standard error.
    pub se_iid: f64,
    /// Ordered node pairs accumulated by the HAC sum, diagonal included.
    pub hac_pairs: usize,
    /// True when the HAC variance estimate came out negative.
    pub hac_negative: bool,
    /// Two-sided miscoverage of the interval.
    pub alpha: f64,
    /// Lower end of the network-robust confidence interval.
    pub ci_lower: f64,
    /// Upper end of the network-robust confidence interval.
    pub ci_upper: f64,
    /// Exposure-level breakdown for the aggregated estimands.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<AttBreakdown>,
    /// Adopters without an eligible match (staggered designs only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unmatched: Option<usize>,
}

pub(crate) fn hac_bandwidth(graph: &Graph, n: usize, gamma: f64) -> Result<usize> {
    match graph.average_path_length() {
        Ok(l) => bandwidth(l, n, graph.average_degree(), gamma),
        // No connected pair: every cross-unit covariance term vanishes at
        // any positive bandwidth, so keep the smallest one.
        Err(Error::NoConnectedPair) => Ok(1),
        Err(e) => Err(e),
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble_report(
    label: String,
    estimate: f64,
    n: usize,
    trim: &TrimInfo,
    clipped: (usize, usize),
    scores: &ScoreVector,
    graph: &Graph,
    inference: &InferenceConfig,
) -> Result<EstimateReport> {
    let b = hac_bandwidth(graph, n, inference.gamma)?;
    let hac = hac_variance(scores, graph, b)?;
    let iid = iid_variance(scores);
    let (ci_lower, ci_upper) = confidence_interval(estimate, hac.se, inference.alpha)?;
    Ok(EstimateReport {
        label,
        estimate,
        n,
        m_n: scores.m(),
        trimmed: trim.dropped,
        clipped_p1: clipped.0,
        clipped_p0: clipped.1,
        bandwidth: b,
        se_hac: hac.se,
        se_iid: iid.se,
        hac_pairs: hac.pairs,
        hac_negative: hac.negative,
        alpha: inference.alpha,
        ci_lower,
        ci_upper,
        breakdown: None,
        unmatched: None,
    })
}

/// Fits one nuisance set per exposure level of `expo`.
pub fn fit_all_levels(
    panel: &PanelDataset,
    graph: &Graph,
    g: &[usize],
    expo: &ExposureConfig,
    cfg: &LearnerConfig,
) -> Result<Vec<NuisanceFit>> {
    expo.levels()
        .into_iter()
        .map(|level| fit_nuisances(panel, graph, g, level, cfg))
        .collect()
}

/// End-to-end panel estimation: exposure mapping, nuisance fitting, point
/// estimation, and network-robust inference.
pub fn estimate_with_inference(
    panel: &PanelDataset,
    graph: &Graph,
    expo: &ExposureConfig,
    estimand: Estimand,
    learner: &LearnerConfig,
    inference: &InferenceConfig,
) -> Result<(EstimateReport, ScoreVector)> {
    expo.validate()?;
    learner.validate()?;
    inference.validate()?;
    if graph.n() != panel.n {
        return Err(Error::LengthMismatch {
            what: "graph node count",
            got: graph.n(),
            expected: panel.n,
        });
    }
    let g = expo.compute(graph, &panel.d)?;
    let levels = expo.levels();
    let check_level = |level: usize| -> Result<()> {
        if levels.contains(&level) {
            Ok(())
        } else {
            Err(Error::LevelNotInSupport {
                level,
                levels: levels.clone(),
            })
        }
    };

    let (estimate, scores, trim, clipped, breakdown, unmatched) = match estimand {
        Estimand::Datt { level } => {
            check_level(level)?;
            let fit = fit_nuisances(panel, graph, &g, level, learner)?;
            let (est, sv, trim) = datt_hat(panel, &g, &fit, inference.eps_trim)?;
            (est, sv, trim, (fit.clipped_p1, fit.clipped_p0), None, None)
        }
        Estimand::Satt { level, d } => {
            check_level(level)?;
            let fit_level = fit_nuisances(panel, graph, &g, level, learner)?;
            let (fit_zero, extra_clip) = if level == 0 {
                (None, (0, 0))
            } else {
                let f = fit_nuisances(panel, graph, &g, 0, learner)?;
                let c = (f.clipped_p1, f.clipped_p0);
                (Some(f), c)
            };
            let zero_ref = fit_zero.as_ref().unwrap_or(&fit_level);
            let mu_base = if d == 1 {
                fit_outcome_cell(panel, graph, &g, 1, 0, learner)?
            } else {
                zero_ref.mu0.clone()
            };
            let (est, sv, trim) =
                satt_hat(panel, &g, d, &fit_level, zero_ref, &mu_base, inference.eps_trim)?;
            let clipped = (
                fit_level.clipped_p1 + extra_clip.0,
                fit_level.clipped_p0 + extra_clip.1,
            );
            (est, sv, trim, clipped, None, None)
        }
        Estimand::DattOverall => {
            let fits = fit_all_levels(panel, graph, &g, expo, learner)?;
            let (est, sv, trim, bd) = datt_overall(panel, &g, &fits, inference.eps_trim)?;
            let clipped = sum_clipped(&fits);
            (est, sv, trim, clipped, Some(bd), None)
        }
        Estimand::AttTotal => {
            let fits = fit_all_levels(panel, graph, &g, expo, learner)?;
            let (est, sv, trim, bd) = att_total(panel, &g, &fits, inference.eps_trim)?;
            let clipped = sum_clipped(&fits);
            (est, sv, trim, clipped, Some(bd), None)
        }
        Estimand::Naive => {
            let (est, sv, trim, fit) = naive_dr_did(panel, learner, inference.eps_trim)?;
            (est, sv, trim, (fit.clipped_p1, fit.clipped_p0), None, None)
        }
    };

    let mut report = assemble_report(
        estimand.label(),
        estimate,
        panel.n,
        &trim,
        clipped,
        &scores,
        graph,
        inference,
    )?;
    report.breakdown = breakdown;
    report.unmatched = unmatched;
    Ok((report, scores))
}

fn sum_clipped(fits: &[NuisanceFit]) -> (usize, usize) {
    fits.iter()
        .fold((0, 0), |(a, b), f| (a + f.clipped_p1, b + f.clipped_p0))
}

/// End-to-end repeated-cross-section estimation of the direct effect at
/// `level`.
pub fn rcs_estimate_with_inference(
    rcs: &RcsDataset,
    graph: &Graph,
    expo: &ExposureConfig,
    level: usize,
    learner: &LearnerConfig,
    inference: &InferenceConfig,
) -> Result<(EstimateReport, ScoreVector)> {
    expo.validate()?;
    learner.validate()?;
    inference.validate()?;
    let levels = expo.levels();
    if !levels.contains(&level) {
        return Err(Error::LevelNotInSupport { level, levels });
    }
    let g = expo.compute(graph, &rcs.d)?;
    let fit = fit_nuisances_rcs(rcs, graph, &g, level, learner)?;
    let (est, sv, trim) = rcs_datt_hat(rcs, &g, &fit, inference.eps_trim)?;
    let report = assemble_report(
        format!("rcs_datt(level={level})"),
        est,
        rcs.n,
        &trim,
        (fit.clipped_p1, fit.clipped_p0),
        &sv,
        graph,
        inference,
    )?;
    Ok((report, sv))
}

/// End-to-end staggered-adoption estimation.
pub fn staggered_estimate_with_inference(
    panel: &StaggeredPanel,
    graph: &Graph,
    inference: &InferenceConfig,
) -> Result<(EstimateReport, StaggeredEstimate)> {
    inference.validate()?;
    let est = staggered_att(panel, graph)?;
    let trim = TrimInfo {
        set: est.scores.set().to_vec(),
        dropped: 0,
        eps: 0.0,
    };
    let mut report = assemble_report(
        "staggered_att".to_string(),
        est.estimate,
        panel.n,
        &trim,
        (0, 0),
        &est.scores,
        graph,
        inference,
    )?;
    report.unmatched = Some(est.unmatched);
    Ok((report, est))
}
