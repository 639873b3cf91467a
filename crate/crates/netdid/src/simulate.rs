//! Synthetic data generating processes, equilibrium solvers, and
//! counterfactual bookkeeping for the Monte Carlo experiments.
//!
//! Two designs are implemented. The `main_s6` design draws a random
//! geometric graph, a discrete covariate, and outcome equations whose peer
//! terms make both the trend and the treatment rule depend on the
//! neighborhood: treatment is the equilibrium of a simultaneous threshold
//! game (solved by [`solve_treatment_fixed_point`]) and the post-period
//! outcome is a linear-in-means system with endogenous peer effects (solved
//! by [`solve_linear_in_means`]; see Manski, 1993). Because the post-period
//! equation contains no treatment term, every counterfactual outcome equals
//! the realized one, so all treatment effects are exactly zero by design.
//!
//! The `appendix_e` design isolates treatment interference: treatment is
//! independent Bernoulli given a nonlinear scalar covariate, exposure is
//! "any treated neighbor", and the outcome equations contain explicit own-
//! and spillover-treatment terms, so the exposure-specific direct effects
//! are 0.2 at exposure 0 and 0.4 at exposure 1 by construction.
//!
//! Randomness is drawn from per-stage ChaCha streams of a single seed so
//! that every stage is reproducible and insensitive to changes in the
//! others: stream 0 holds node positions (inside
//! [`crate::graph::sample_positions`]), stream 1 covariates, stream 2
//! pre-period errors, stream 3 treatment noise, and stream 4 post-period
//! errors. Within a stream, draws are made in node order.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{IdMap, PanelDataset};
use crate::error::{Error, Result};
use crate::exposure::{exposure_any, neighbor_mean};
use crate::graph::{rgg_from_positions, sample_positions, Graph};

/// Smallest sample size for which the designs are meaningful.
pub const MIN_N: usize = 50;

/// Which data generating process to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    /// Zero-effect design with network confounding through covariates,
    /// simultaneous treatment adoption, and endogenous outcome peer
    /// effects.
    MainS6,
    /// Treatment-spillover design with independent logistic treatment and
    /// additive direct and exposure effects.
    AppendixE,
}

impl DgpKind {
    /// The name used in config files.
    pub fn label(&self) -> &'static str {
        match self {
            DgpKind::MainS6 => "main_s6",
            DgpKind::AppendixE => "appendix_e",
        }
    }
}

/// Which period the outcome peer term refers to in the `main_s6` design.
///
/// The simultaneous reading treats the post-period equation as a
/// linear-in-means system in the post-period outcome itself; the lagged
/// reading plugs in the neighbor mean of the pre-period outcome. Both are
/// defensible readings of a peer term written without a time subscript, so
/// both are available; `simultaneous` is the default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeerOutcome {
    /// Solve `(I - beta W) y = rhs` for the post-period outcome.
    #[default]
    Simultaneous,
    /// Use the neighbor mean of the pre-period outcome.
    Lagged,
}

/// Structural coefficients of the `main_s6` design.
///
/// The pre-period outcome is
/// `y_pre = pre_intercept + nbr(x) + x + eps + nbr(eps)`,
/// treatment solves the simultaneous threshold rule
/// `d = 1{treat_intercept + treat_peer * nbr(d) + nbr(x) - x + nu + nbr(nu) > 0}`,
/// and the post-period outcome is `y_post = post_intercept +
/// outcome_peer * nbr(y) + post_neighbor_x * nbr(x) + x + mu + nbr(mu)`,
/// where `nbr` is the row-normalized neighbor mean and `eps`, `nu`, `mu`
/// are i.i.d. standard normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct S6Coefficients {
    /// Intercept of the pre-period outcome equation.
    pub pre_intercept: f64,
    /// Intercept of the latent treatment index. The default places the
    /// equilibrium treated share near 55% at n = 2000; raising it toward
    /// the peer coefficient's scale pushes the adoption cascade toward
    /// full treatment.
    pub treat_intercept: f64,
    /// Coefficient on the neighbor mean of treatment in the latent index.
    pub treat_peer: f64,
    /// Intercept of the post-period outcome equation.
    pub post_intercept: f64,
    /// Coefficient on the outcome peer term; must have absolute value
    /// below one for the linear-in-means system to be invertible.
    pub outcome_peer: f64,
    /// Coefficient on the neighbor mean of the covariate in the
    /// post-period equation.
    pub post_neighbor_x: f64,
    /// Which period the outcome peer term refers to.
    pub peer_outcome: PeerOutcome,
}

impl Default for S6Coefficients {
    fn default() -> Self {
        S6Coefficients {
            pre_intercept: 0.5,
            treat_intercept: -0.5,
            treat_peer: 1.5,
            post_intercept: 0.5,
            outcome_peer: 0.8,
            post_neighbor_x: 10.0,
            peer_outcome: PeerOutcome::Simultaneous,
        }
    }
}

/// Structural coefficients of the `appendix_e` design.
///
/// The covariate is `x = 1 + x2 / (1 + exp(x1))` with `x1, x2` i.i.d.
/// standard normal. Treatment is Bernoulli with probability
/// `sigmoid(theta_d[0] + theta_d[1] * x + sigma_nu * nu)`, exposure is
/// `1{any treated neighbor}`, and the outcomes are
/// `y_pre  = theta_pre[0] + theta_pre[1] d + theta_pre[2] d g + theta_pre[3] x
///  + sigma_eps * eps` and
/// `y_post = theta_post[0] + theta_post[1] d + theta_post[2] d g + theta_post[3] x
///  + sigma_mu * mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppendixECoefficients {
    /// Intercept and covariate slope of the latent treatment index. The
    /// default intercept puts the treated share near 40%.
    pub theta_d: [f64; 2],
    /// Scale of the latent treatment noise. The default of zero makes the
    /// treatment probability an exact function of the covariate, so the
    /// per-unit propensity stored on the simulated panel is closed form.
    pub sigma_nu: f64,
    /// Pre-period outcome coefficients: intercept, own treatment,
    /// treatment-exposure interaction, covariate.
    pub theta_pre: [f64; 4],
    /// Post-period outcome coefficients, in the same order. With the
    /// defaults, the direct effect is `theta_post[1] - theta_pre[1] = 0.2`
    /// at exposure 0 and `0.4` once the interaction term is switched on by
    /// exposure.
    pub theta_post: [f64; 4],
    /// Scale of the pre-period outcome noise. The defaults keep estimator
    /// sampling error near 0.03 at n = 2000.
    pub sigma_eps: f64,
    /// Scale of the post-period outcome noise.
    pub sigma_mu: f64,
}

impl Default for AppendixECoefficients {
    fn default() -> Self {
        AppendixECoefficients {
            theta_d: [-2.0, 1.5],
            sigma_nu: 0.0,
            theta_pre: [1.0, 0.0, 0.0, 0.6],
            theta_post: [0.5, 0.2, 0.2, 0.8],
            sigma_eps: 0.33,
            sigma_mu: 0.33,
        }
    }
}

/// Iteration budgets and tolerances for the equilibrium solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Iteration cap shared by the fixed-point and linear-in-means
    /// solvers.
    pub max_iterations: usize,
    /// Sup-norm residual target of the linear-in-means solver.
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 20_000,
            tolerance: 1e-13,
        }
    }
}

/// Full configuration of one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    /// Which design to simulate.
    pub kind: DgpKind,
    /// Number of units.
    pub n: usize,
    /// Seed for all randomness in the dataset.
    #[serde(default)]
    pub seed: u64,
    /// Mean degree of the random geometric graph; the connection radius is
    /// `sqrt(mean_degree / (pi n))`. `None` uses the design default: 5.0
    /// for `main_s6`, 1.3 for `appendix_e` (the latter keeps the
    /// exposed share among the treated near 40%).
    #[serde(default)]
    pub mean_degree: Option<f64>,
    /// Coefficients of the `main_s6` design; ignored by `appendix_e`.
    #[serde(default)]
    pub s6: S6Coefficients,
    /// Coefficients of the `appendix_e` design; ignored by `main_s6`.
    #[serde(default)]
    pub appendix_e: AppendixECoefficients,
    /// Solver budgets.
    #[serde(default)]
    pub solver: SolverConfig,
}

impl DgpConfig {
    /// A configuration of the given design with all defaults.
    pub fn new(kind: DgpKind, n: usize, seed: u64) -> Self {
        DgpConfig {
            kind,
            n,
            seed,
            mean_degree: None,
            s6: S6Coefficients::default(),
            appendix_e: AppendixECoefficients::default(),
            solver: SolverConfig::default(),
        }
    }

    /// Mean degree after applying the design default.
    pub fn mean_degree(&self) -> f64 {
        self.mean_degree.unwrap_or(match self.kind {
            DgpKind::MainS6 => 5.0,
            DgpKind::AppendixE => 1.3,
        })
    }

    /// Connection radius of the geometric graph.
    pub fn radius(&self) -> f64 {
        (self.mean_degree() / (std::f64::consts::PI * self.n as f64)).sqrt()
    }

    /// Validates sample size, coefficient finiteness, and invertibility of
    /// the outcome peer system.
    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_N {
            return Err(Error::InvalidConfig(format!(
                "simulation needs n >= {MIN_N}, got {}",
                self.n
            )));
        }
        let s6 = &self.s6;
        let ae = &self.appendix_e;
        let coefficients = [
            s6.pre_intercept,
            s6.treat_intercept,
            s6.treat_peer,
            s6.post_intercept,
            s6.outcome_peer,
            s6.post_neighbor_x,
            ae.theta_d[0],
            ae.theta_d[1],
            ae.sigma_nu,
            ae.sigma_eps,
            ae.sigma_mu,
        ];
        if coefficients.iter().any(|c| !c.is_finite())
            || ae.theta_pre.iter().any(|c| !c.is_finite())
            || ae.theta_post.iter().any(|c| !c.is_finite())
        {
            return Err(Error::InvalidConfig(
                "structural coefficients must be finite".into(),
            ));
        }
        if s6.outcome_peer.abs() >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "outcome peer coefficient must have absolute value below 1, got {}",
                s6.outcome_peer
            )));
        }
        if ae.sigma_nu < 0.0 || ae.sigma_eps < 0.0 || ae.sigma_mu < 0.0 {
            return Err(Error::InvalidConfig(
                "noise scales must be nonnegative".into(),
            ));
        }
        if let Some(deg) = self.mean_degree {
            if !(deg.is_finite() && deg > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "mean degree must be positive and finite, got {deg}"
                )));
            }
        }
        if self.solver.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "solver iteration cap must be at least 1".into(),
            ));
        }
        if !(self.solver.tolerance > 0.0 && self.solver.tolerance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "solver tolerance must be positive and finite, got {}",
                self.solver.tolerance
            )));
        }
        Ok(())
    }
}

/// Solver diagnostics recorded with a simulated dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimDiagnostics {
    /// Best-response sweeps used by the treatment fixed point (zero when
    /// the design has no simultaneous treatment).
    pub fixed_point_iterations: usize,
    /// True when the fixed-point solver hit a cycle and returned the
    /// least-inconsistent profile instead of an equilibrium.
    pub fixed_point_cycle: bool,
    /// Sweeps used by the linear-in-means solver (zero when the design has
    /// no simultaneous outcome).
    pub linear_iterations: usize,
    /// Final sup-norm residual of the linear-in-means solve.
    pub linear_residual: f64,
}

/// A simulated dataset: the observable panel plus the quantities only the
/// simulator knows.
///
/// `y_cf[d][g]` holds the counterfactual post-period outcome of every unit
/// with its own treatment forced to `d` and its exposure forced to `g`,
/// holding all other units' realized treatments fixed. The observed
/// post-period outcome equals `y_cf[d_i][g_i]` exactly for every unit.
#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    /// Observable two-period panel; the covariate block is a single
    /// column.
    pub panel: PanelDataset,
    /// The simulated interference graph.
    pub graph: Graph,
    /// Realized binary exposure (any treated neighbor).
    pub g: Vec<usize>,
    /// Counterfactual post-period outcomes indexed `[d][g]`.
    pub y_cf: [[Vec<f64>; 2]; 2],
    /// Per-unit treatment probability when the design admits a closed
    /// form (`appendix_e` with zero latent noise), used by oracle
    /// nuisance-injection experiments.
    pub propensity: Option<Vec<f64>>,
    /// Solver diagnostics.
    pub diagnostics: SimDiagnostics,
}

impl SimulatedPanel {
    /// Checks that the observed post-period outcome equals the stored
    /// counterfactual at the realized treatment and exposure, bit for bit.
    pub fn check_consistency(&self) -> Result<()> {
        for i in 0..self.panel.n {
            let d = usize::from(self.panel.d[i]);
            let g = self.g[i].min(1);
            let cf = self.y_cf[d][g][i];
            if self.panel.y_post[i].to_bits() != cf.to_bits() {
                return Err(Error::InvalidData(format!(
                    "counterfactual inconsistency at unit {i}: observed {} vs stored {cf}",
                    self.panel.y_post[i]
                )));
            }
        }
        Ok(())
    }
}

/// Result of the best-response iteration for simultaneous treatment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPointResult {
    /// The treatment profile.
    pub d: Vec<u8>,
    /// Best-response sweeps that changed the profile before it settled.
    pub iterations: usize,
    /// True when the iteration entered a cycle; the returned profile is
    /// then the cycle member with the fewest units off their best
    /// response, not an equilibrium.
    pub cycle: bool,
}

/// Packs a binary profile into machine words for cheap equality checks.
fn pack_profile(d: &[u8]) -> Vec<u64> {
    let mut words = vec![0u64; d.len().div_ceil(64)];
    for (i, &v) in d.iter().enumerate() {
        if v == 1 {
            words[i / 64] |= 1 << (i % 64);
        }
    }
    words
}

/// Synchronous best-response sweep: each unit's new treatment thresholds
/// its base index plus the peer term evaluated at the current profile.
fn best_response(graph: &Graph, base_index: &[f64], peer_coefficient: f64, d: &[u8]) -> Vec<u8> {
    let n = graph.n();
    let mut next = vec![0u8; n];
    for i in 0..n {
        let nbrs = graph.neighbors(i);
        let peer = if nbrs.is_empty() {
            0.0
        } else {
            nbrs.iter().map(|&j| f64::from(d[j])).sum::<f64>() / nbrs.len() as f64
        };
        next[i] = u8::from(base_index[i] + peer_coefficient * peer > 0.0);
    }
    next
}

/// Number of units whose best response differs from their current value.
fn flip_count(graph: &Graph, base_index: &[f64], peer_coefficient: f64, d: &[u8]) -> usize {
    best_response(graph, base_index, peer_coefficient, d)
        .iter()
        .zip(d)
        .filter(|(a, b)| a != b)
        .count()
}

/// Solves the simultaneous treatment rule
/// `d_i = 1{base_index_i + peer_coefficient * nbr_i(d) > 0}`
/// by synchronous best-response iteration from the all-zero profile.
///
/// With a nonnegative peer coefficient the iteration is monotone from
/// below and reaches the least equilibrium in at most `n + 1` sweeps. With
/// a negative coefficient the dynamics can cycle; a revisited profile ends
/// the iteration and the cycle member with the fewest off-best-response
/// units is returned with the `cycle` flag set. Exceeding the iteration
/// cap without repeating is reported as non-convergence.
pub fn solve_treatment_fixed_point(
    graph: &Graph,
    base_index: &[f64],
    peer_coefficient: f64,
    max_iterations: usize,
) -> Result<FixedPointResult> {
    let n = graph.n();
    if base_index.len() != n {
        return Err(Error::LengthMismatch {
            what: "treatment index",
            got: base_index.len(),
            expected: n,
        });
    }
    if !peer_coefficient.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "treatment peer coefficient must be finite, got {peer_coefficient}"
        )));
    }
    for (i, &v) in base_index.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "treatment index",
                row: i,
            });
        }
    }
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut history: Vec<Vec<u8>> = Vec::new();
    let mut d = vec![0u8; n];
    for sweep in 0..max_iterations {
        seen.insert(pack_profile(&d), history.len());
        history.push(d.clone());
        let next = best_response(graph, base_index, peer_coefficient, &d);
        if next == d {
            return Ok(FixedPointResult {
                d,
                iterations: sweep,
                cycle: false,
            });
        }
        if let Some(&start) = seen.get(&pack_profile(&next)) {
            let best = history[start..]
                .iter()
                .min_by_key(|p| flip_count(graph, base_index, peer_coefficient, p))
                .expect("cycle is non-empty")
                .clone();
            return Ok(FixedPointResult {
                d: best,
                iterations: sweep + 1,
                cycle: true,
            });
        }
        d = next;
    }
    Err(Error::NoConvergence {
        what: "treatment fixed point",
        iterations: max_iterations,
        residual: f64::NAN,
    })
}

/// Result of a linear-in-means solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolveResult {
    /// The solution of `(I - beta W) y = rhs`.
    pub y: Vec<f64>,
    /// Jacobi sweeps performed.
    pub iterations: usize,
    /// Sup-norm residual `max_i |y_i - rhs_i - beta * nbr_i(y)|` of the
    /// returned solution.
    pub residual: f64,
}

/// Solves the simultaneous system `y = rhs + beta W y`, where `W` is the
/// row-normalized adjacency (isolated rows are zero), by Jacobi iteration.
///
/// Because every row of `W` sums to at most one, the iteration map is a
/// `|beta|`-contraction in the sup norm, so `|beta| < 1` guarantees
/// geometric convergence to the unique solution.
pub fn solve_linear_in_means(
    graph: &Graph,
    rhs: &[f64],
    beta: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<LinearSolveResult> {
    if !(beta.is_finite() && beta.abs() < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "linear-in-means peer coefficient must have absolute value below 1, got {beta}"
        )));
    }
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "solver tolerance must be positive and finite, got {tolerance}"
        )));
    }
    for (i, &v) in rhs.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "linear-in-means right-hand side",
                row: i,
            });
        }
    }
    let mut y = rhs.to_vec();
    for sweep in 1..=max_iterations {
        let peer = neighbor_mean(graph, &y)?;
        let mut step = 0.0f64;
        for i in 0..y.len() {
            let next = rhs[i] + beta * peer[i];
            step = step.max((next - y[i]).abs());
            y[i] = next;
        }
        if step <= tolerance {
            let peer = neighbor_mean(graph, &y)?;
            let residual = y
                .iter()
                .zip(rhs)
                .zip(&peer)
                .map(|((&yi, &ri), &pi)| (yi - ri - beta * pi).abs())
                .fold(0.0f64, f64::max);
            return Ok(LinearSolveResult {
                y,
                iterations: sweep,
                residual,
            });
        }
    }
    let peer = neighbor_mean(graph, &y)?;
    let residual = y
        .iter()
        .zip(rhs)
        .zip(&peer)
        .map(|((&yi, &ri), &pi)| (yi - ri - beta * pi).abs())
        .fold(0.0f64, f64::max);
    Err(Error::NoConvergence {
        what: "linear-in-means solve",
        iterations: max_iterations,
        residual,
    })
}

/// RNG for one draw stage of a simulated dataset.
fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n` standard normal draws from the given stage stream.
fn normal_draws(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    let mut rng = stage_rng(seed, stream);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Simulates one dataset of the configured design.
pub fn simulate(cfg: &DgpConfig) -> Result<SimulatedPanel> {
    match cfg.kind {
        DgpKind::MainS6 => simulate_main_s6(cfg),
        DgpKind::AppendixE => simulate_appendix_e(cfg),
    }
}

/// Simulates the zero-effect network-confounding design.
///
/// The covariate is discrete uniform on `{0, 0.25, 0.5, 0.75, 1}`,
/// treatment is the least equilibrium of the simultaneous threshold rule,
/// and the post-period outcome solves the linear-in-means system (or uses
/// the lagged peer term when configured). Neither the treatment nor the
/// exposure enters the outcome equations, so forcing a unit's `(d, g)`
/// while holding everyone else's realized treatment fixed leaves the
/// solved outcome unchanged: all four counterfactual columns equal the
/// realized post-period outcome, and every treatment effect is exactly
/// zero.
pub fn simulate_main_s6(cfg: &DgpConfig) -> Result<SimulatedPanel> {
    cfg.validate()?;
    let n = cfg.n;
    let s6 = &cfg.s6;
    let positions = sample_positions(n, cfg.seed);
    let graph = rgg_from_positions(&positions, cfg.radius())?;

    let mut x_rng = stage_rng(cfg.seed, 1);
    let x: Vec<f64> = (0..n)
        .map(|_| 0.25 * x_rng.gen_range(0..5u32) as f64)
        .collect();
    let eps = normal_draws(cfg.seed, 2, n);
    let nu = normal_draws(cfg.seed, 3, n);
    let mu = normal_draws(cfg.seed, 4, n);

    let nbr_x = neighbor_mean(&graph, &x)?;
    let nbr_eps = neighbor_mean(&graph, &eps)?;
    let nbr_nu = neighbor_mean(&graph, &nu)?;
    let nbr_mu = neighbor_mean(&graph, &mu)?;

    let y_pre: Vec<f64> = (0..n)
        .map(|i| s6.pre_intercept + nbr_x[i] + x[i] + eps[i] + nbr_eps[i])
        .collect();

    let base_index: Vec<f64> = (0..n)
        .map(|i| s6.treat_intercept + nbr_x[i] - x[i] + nu[i] + nbr_nu[i])
        .collect();
    let fp = solve_treatment_fixed_point(
        &graph,
        &base_index,
        s6.treat_peer,
        cfg.solver.max_iterations,
    )?;
    let d = fp.d;

    let rhs: Vec<f64> = (0..n)
        .map(|i| s6.post_intercept + s6.post_neighbor_x * nbr_x[i] + x[i] + mu[i] + nbr_mu[i])
        .collect();
    let (y_post, linear_iterations, linear_residual) = match s6.peer_outcome {
        PeerOutcome::Simultaneous => {
            let solve = solve_linear_in_means(
                &graph,
                &rhs,
                s6.outcome_peer,
                cfg.solver.tolerance,
                cfg.solver.max_iterations,
            )?;
            (solve.y, solve.iterations, solve.residual)
        }
        PeerOutcome::Lagged => {
            let nbr_y_pre = neighbor_mean(&graph, &y_pre)?;
            let y: Vec<f64> = (0..n)
                .map(|i| rhs[i] + s6.outcome_peer * nbr_y_pre[i])
                .collect();
            (y, 0, 0.0)
        }
    };

    let g = exposure_any(&graph, &d)?;
    let y_cf = [
        [y_post.clone(), y_post.clone()],
        [y_post.clone(), y_post.clone()],
    ];
    let panel = PanelDataset::new(d, y_pre, y_post, x, 1, IdMap::default())?;
    let out = SimulatedPanel {
        panel,
        graph,
        g,
        y_cf,
        propensity: None,
        diagnostics: SimDiagnostics {
            fixed_point_iterations: fp.iterations,
            fixed_point_cycle: fp.cycle,
            linear_iterations,
            linear_residual,
        },
    };
    out.check_consistency()?;
    Ok(out)
}

/// Simulates the treatment-spillover design.
///
/// Counterfactual outcomes replace the realized `(d, g)` in the
/// post-period equation while keeping the unit's own noise draw, so the
/// contrasts `y_cf[1][g] - y_cf[0][g]` are deterministic:
/// `theta_post[1] - theta_pre[1]` plus the interaction difference when
/// `g = 1`.
pub fn simulate_appendix_e(cfg: &DgpConfig) -> Result<SimulatedPanel> {
    cfg.validate()?;
    let n = cfg.n;
    let ae = &cfg.appendix_e;
    let positions = sample_positions(n, cfg.seed);
    let graph = rgg_from_positions(&positions, cfg.radius())?;

    let mut x_rng = stage_rng(cfg.seed, 1);
    let x: Vec<f64> = (0..n)
        .map(|_| {
            let x1: f64 = x_rng.sample(StandardNormal);
            let x2: f64 = x_rng.sample(StandardNormal);
            1.0 + x2 / (1.0 + x1.exp())
        })
        .collect();
    let eps = normal_draws(cfg.seed, 2, n);
    let mu = normal_draws(cfg.seed, 4, n);

    let mut d_rng = stage_rng(cfg.seed, 3);
    let mut propensity = vec![0.0f64; n];
    let mut d = vec![0u8; n];
    for i in 0..n {
        let nu: f64 = d_rng.sample(StandardNormal);
        let pi = sigmoid(ae.theta_d[0] + ae.theta_d[1] * x[i] + ae.sigma_nu * nu);
        propensity[i] = pi;
        d[i] = u8::from(d_rng.gen::<f64>() < pi);
    }

    let g = exposure_any(&graph, &d)?;

    let outcome = |theta: &[f64; 4], dv: f64, gv: f64, xi: f64| -> f64 {
        theta[0] + theta[1] * dv + theta[2] * dv * gv + theta[3] * xi
    };
    let y_pre: Vec<f64> = (0..n)
        .map(|i| {
            let dv = f64::from(d[i]);
            let gv = if g[i] >= 1 { 1.0 } else { 0.0 };
            outcome(&ae.theta_pre, dv, gv, x[i]) + ae.sigma_eps * eps[i]
        })
        .collect();
    let mut y_cf = [
        [vec![0.0; n], vec![0.0; n]],
        [vec![0.0; n], vec![0.0; n]],
    ];
    for (dv, row) in y_cf.iter_mut().enumerate() {
        for (gv, col) in row.iter_mut().enumerate() {
            for (i, slot) in col.iter_mut().enumerate() {
                *slot =
                    outcome(&ae.theta_post, dv as f64, gv as f64, x[i]) + ae.sigma_mu * mu[i];
            }
        }
    }
    let y_post: Vec<f64> = (0..n)
        .map(|i| y_cf[usize::from(d[i])][g[i].min(1)][i])
        .collect();

    let propensity = if ae.sigma_nu == 0.0 {
        Some(propensity)
    } else {
        None
    };
    let panel = PanelDataset::new(d, y_pre, y_post, x, 1, IdMap::default())?;
    let out = SimulatedPanel {
        panel,
        graph,
        g,
        y_cf,
        propensity,
        diagnostics: SimDiagnostics::default(),
    };
    out.check_consistency()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn fixed_point_no_peer_is_direct_threshold() {
        let graph = path_graph(6);
        let base = [0.3, -0.2, 1.1, -0.9, 0.0, 0.6];
        let fp = solve_treatment_fixed_point(&graph, &base, 0.0, 100).unwrap();
        assert_eq!(fp.iterations, 1);
        assert!(!fp.cycle);
        let expect: Vec<u8> = base.iter().map(|&v| u8::from(v > 0.0)).collect();
        assert_eq!(fp.d, expect);
    }

    #[test]
    fn fixed_point_isolated_nodes_decide_independently() {
        let graph = Graph::empty(2);
        let fp = solve_treatment_fixed_point(&graph, &[0.4, -0.4], 5.0, 100).unwrap();
        assert_eq!(fp.d, vec![1, 0]);
        assert!(!fp.cycle);
    }

    #[test]
    fn fixed_point_cascade_converges_to_equilibrium() {
        // On a path, a strongly positive peer coefficient spreads adoption
        // outward from the one unit whose own index is positive.
        let graph = path_graph(5);
        let base = [0.2, -0.1, -0.1, -0.1, -0.1];
        let fp = solve_treatment_fixed_point(&graph, &base, 0.3, 100).unwrap();
        assert!(!fp.cycle);
        // Unit 1 sees half its neighbors treated once unit 0 adopts:
        // -0.1 + 0.3 * 0.5 > 0, and the cascade continues down the path.
        assert_eq!(fp.d, vec![1, 1, 1, 1, 1]);
        let back = best_response(&graph, &base, 0.3, &fp.d);
        assert_eq!(back, fp.d);
    }

    #[test]
    fn fixed_point_negative_peer_cycles_and_flags() {
        // Two adjacent units that each prefer to mismatch the other:
        // synchronous best responses oscillate between (1,1) and (0,0).
        let graph = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let base = [0.5, 0.5];
        let fp = solve_treatment_fixed_point(&graph, &base, -1.0, 100).unwrap();
        assert!(fp.cycle);
        assert_eq!(fp.d.len(), 2);
        // Both cycle members have every unit off its best response, so the
        // reported profile is one of them.
        assert!(fp.d == vec![0, 0] || fp.d == vec![1, 1]);
    }

    #[test]
    fn fixed_point_is_nash_on_small_graphs() {
        // Exhaustive unilateral-deviation check on every converged profile.
        let mut rng = stage_rng(11, 0);
        for trial in 0..50 {
            let n = 4 + trial % 9;
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.gen::<f64>() < 0.4 {
                        edges.push((i, j));
                    }
                }
            }
            let graph = Graph::from_edges(n, &edges).unwrap();
            let base: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let fp = solve_treatment_fixed_point(&graph, &base, 1.5, 10_000).unwrap();
            assert!(!fp.cycle);
            for (i, &bi) in base.iter().enumerate() {
                let nbrs = graph.neighbors(i);
                let peer = if nbrs.is_empty() {
                    0.0
                } else {
                    nbrs.iter().map(|&j| f64::from(fp.d[j])).sum::<f64>() / nbrs.len() as f64
                };
                let best = u8::from(bi + 1.5 * peer > 0.0);
                assert_eq!(fp.d[i], best, "unit {i} deviates in trial {trial}");
            }
        }
    }

    #[test]
    fn linear_in_means_zero_beta_returns_rhs() {
        let graph = path_graph(4);
        let rhs = [1.0, -2.0, 3.0, 0.5];
        let solve = solve_linear_in_means(&graph, &rhs, 0.0, 1e-13, 100).unwrap();
        assert_eq!(solve.y, rhs.to_vec());
        assert_eq!(solve.residual, 0.0);
    }

    #[test]
    fn linear_in_means_two_node_complete_graph() {
        // y_i = 1 + 0.8 y_j with j the single neighbor: y = (5, 5).
        let graph = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let solve = solve_linear_in_means(&graph, &[1.0, 1.0], 0.8, 1e-13, 10_000).unwrap();
        assert!((solve.y[0] - 5.0).abs() < 1e-10);
        assert!((solve.y[1] - 5.0).abs() < 1e-10);
        assert!(solve.residual <= 1e-10);
    }

    #[test]
    fn linear_in_means_residual_bound_on_random_instance() {
        let mut rng = stage_rng(3, 0);
        let n = 60;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < 0.1 {
                    edges.push((i, j));
                }
            }
        }
        let graph = Graph::from_edges(n, &edges).unwrap();
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let solve = solve_linear_in_means(&graph, &rhs, 0.8, 1e-13, 10_000).unwrap();
        assert!(solve.residual <= 1e-10, "residual {}", solve.residual);
    }

    #[test]
    fn linear_in_means_rejects_unit_beta() {
        let graph = path_graph(3);
        let err = solve_linear_in_means(&graph, &[1.0, 1.0, 1.0], 1.0, 1e-13, 100).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn config_validation() {
        let mut cfg = DgpConfig::new(DgpKind::MainS6, 30, 0);
        assert!(cfg.validate().is_err());
        cfg.n = 200;
        assert!(cfg.validate().is_ok());
        cfg.s6.outcome_peer = 1.0;
        assert!(cfg.validate().is_err());
        cfg.s6.outcome_peer = 0.8;
        cfg.mean_degree = Some(0.0);
        assert!(cfg.validate().is_err());
        cfg.mean_degree = Some(5.0);
        cfg.appendix_e.sigma_eps = -0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = DgpConfig::new(DgpKind::AppendixE, 500, 9);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: DgpConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        let partial: DgpConfig =
            serde_json::from_str(r#"{"kind": "main_s6", "n": 400}"#).unwrap();
        assert_eq!(partial.seed, 0);
        assert_eq!(partial.s6, S6Coefficients::default());
        assert_eq!(partial.mean_degree(), 5.0);
    }

    #[test]
    fn main_s6_is_deterministic_and_consistent() {
        let cfg = DgpConfig::new(DgpKind::MainS6, 200, 42);
        let a = simulate_main_s6(&cfg).unwrap();
        let b = simulate_main_s6(&cfg).unwrap();
        assert_eq!(a.panel.d, b.panel.d);
        assert_eq!(a.panel.y_pre, b.panel.y_pre);
        assert_eq!(a.panel.y_post, b.panel.y_post);
        assert_eq!(a.panel.x, b.panel.x);
        assert_eq!(a.g, b.g);
        a.check_consistency().unwrap();
        assert!(a.diagnostics.linear_residual <= 1e-10);
        assert!(!a.diagnostics.fixed_point_cycle);
    }

    #[test]
    fn main_s6_counterfactuals_are_all_equal() {
        let cfg = DgpConfig::new(DgpKind::MainS6, 150, 7);
        let sim = simulate_main_s6(&cfg).unwrap();
        for d in 0..2 {
            for g in 0..2 {
                assert_eq!(sim.y_cf[d][g], sim.panel.y_post);
            }
        }
    }

    #[test]
    fn main_s6_covariate_support() {
        let cfg = DgpConfig::new(DgpKind::MainS6, 300, 3);
        let sim = simulate_main_s6(&cfg).unwrap();
        for &v in &sim.panel.x {
            assert!(
                [0.0, 0.25, 0.5, 0.75, 1.0].contains(&v),
                "unexpected covariate value {v}"
            );
        }
    }

    #[test]
    fn main_s6_no_peer_reduction_matches_direct_threshold() {
        // With the treatment peer coefficient removed, the solved profile
        // must equal the single-pass threshold rule.
        let mut cfg = DgpConfig::new(DgpKind::MainS6, 250, 5);
        cfg.s6.treat_peer = 0.0;
        let sim = simulate_main_s6(&cfg).unwrap();
        assert_eq!(sim.diagnostics.fixed_point_iterations, 1);

        let positions = sample_positions(cfg.n, cfg.seed);
        let graph = rgg_from_positions(&positions, cfg.radius()).unwrap();
        let x = &sim.panel.x;
        let nu = normal_draws(cfg.seed, 3, cfg.n);
        let nbr_x = neighbor_mean(&graph, x).unwrap();
        let nbr_nu = neighbor_mean(&graph, &nu).unwrap();
        for i in 0..cfg.n {
            let idx = cfg.s6.treat_intercept + nbr_x[i] - x[i] + nu[i] + nbr_nu[i];
            assert_eq!(sim.panel.d[i], u8::from(idx > 0.0));
        }
    }

    #[test]
    fn appendix_e_is_deterministic_and_consistent() {
        let cfg = DgpConfig::new(DgpKind::AppendixE, 400, 17);
        let a = simulate_appendix_e(&cfg).unwrap();
        let b = simulate_appendix_e(&cfg).unwrap();
        assert_eq!(a.panel.d, b.panel.d);
        assert_eq!(a.panel.y_post, b.panel.y_post);
        a.check_consistency().unwrap();
        assert!(a.propensity.is_some());
    }

    #[test]
    fn appendix_e_counterfactual_contrasts_are_structural() {
        let cfg = DgpConfig::new(DgpKind::AppendixE, 300, 23);
        let sim = simulate_appendix_e(&cfg).unwrap();
        let ae = &cfg.appendix_e;
        for i in 0..cfg.n {
            let direct0 = sim.y_cf[1][0][i] - sim.y_cf[0][0][i];
            let direct1 = sim.y_cf[1][1][i] - sim.y_cf[0][1][i];
            assert!((direct0 - ae.theta_post[1]).abs() < 1e-12);
            assert!((direct1 - ae.theta_post[1] - ae.theta_post[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn appendix_e_propensity_matches_index() {
        let cfg = DgpConfig::new(DgpKind::AppendixE, 200, 31);
        let sim = simulate_appendix_e(&cfg).unwrap();
        let pi = sim.propensity.unwrap();
        for (i, &p) in pi.iter().enumerate() {
            let v = cfg.appendix_e.theta_d[0] + cfg.appendix_e.theta_d[1] * sim.panel.x[i];
            assert!((p - sigmoid(v)).abs() < 1e-15);
        }
    }

    #[test]
    fn appendix_e_latent_noise_disables_closed_form_propensity() {
        let mut cfg = DgpConfig::new(DgpKind::AppendixE, 200, 31);
        cfg.appendix_e.sigma_nu = 1.0;
        let sim = simulate_appendix_e(&cfg).unwrap();
        assert!(sim.propensity.is_none());
    }

    #[test]
    fn simulate_dispatches_on_kind() {
        let cfg = DgpConfig::new(DgpKind::MainS6, 120, 2);
        let sim = simulate(&cfg).unwrap();
        assert_eq!(sim.panel.n, 120);
        let cfg = DgpConfig::new(DgpKind::AppendixE, 120, 2);
        let sim = simulate(&cfg).unwrap();
        assert_eq!(sim.panel.n, 120);
    }

    #[test]
    fn lagged_peer_outcome_differs_from_simultaneous() {
        let cfg = DgpConfig::new(DgpKind::MainS6, 200, 6);
        let simultaneous = simulate_main_s6(&cfg).unwrap();
        let mut lagged_cfg = cfg.clone();
        lagged_cfg.s6.peer_outcome = PeerOutcome::Lagged;
        let lagged = simulate_main_s6(&lagged_cfg).unwrap();
        // Same graph, covariates, and treatment; different outcome closure.
        assert_eq!(simultaneous.panel.d, lagged.panel.d);
        assert_eq!(simultaneous.panel.y_pre, lagged.panel.y_pre);
        assert_ne!(simultaneous.panel.y_post, lagged.panel.y_post);
        lagged.check_consistency().unwrap();
    }
}

