//! Nuisance models: generalized propensities and outcome-trend regressions.
//!
//! The estimators need two fitted ingredients at each exposure level `g`:
//!
//! ```text
//! p_dg(i)  = P(D_i = d, G_i = g | X, A)      joint propensity, d in {0, 1}
//! mu_0g(i) = E[dY_i | D_i = 0, G_i = g, X, A] control outcome trend
//! ```
//!
//! Both are functions of the unit's covariates and its network context, and
//! both can be fit by either of two learners:
//!
//! * `nglm`: a generalized linear model on hand-built network features
//!   (own covariates, neighbor means, degree, higher-hop boundary means)
//!   expanded in a polynomial sieve. See [`build_features`].
//! * `gnn`: a message-passing network trained end to end on the raw
//!   covariates; the network topology enters through the aggregation steps.
//!   See [`gnn`].
//!
//! Propensities are one-vs-rest: each `p_dg` is a separate binary fit of the
//! joint indicator `1{D_i = d, G_i = g}` on all units. Outcome trends are fit
//! on the control cell `{D = 0, G = g}` only and predicted for every unit.
//! Propensity predictions are clipped into `[eps, 1 - eps]` before use;
//! unclipped copies are retained because trimming decisions are made on the
//! raw fitted values.

pub mod glm;
pub mod gnn;

use serde::{Deserialize, Serialize};

use crate::data::{delta_y, PanelDataset, RcsDataset};
use crate::error::{Error, Result};
use crate::exposure::neighbor_mean_covariates;
use crate::graph::Graph;

pub use glm::{fit_least_squares, fit_logistic, GlmConfig, GlmFit};
pub use gnn::{
    gnn_backward, gnn_forward, gnn_loss, gnn_train, Activation, AggregatorSet, GnnLoss,
    GnnParams, GnnTrainConfig, GnnTrainReport,
};

/// Dense design matrix with named columns, row-major storage.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    /// Number of rows (units).
    pub n: usize,
    /// Number of columns.
    pub q: usize,
    /// Row-major `n x q` values.
    pub data: Vec<f64>,
    /// Column names, `names.len() == q`.
    pub names: Vec<String>,
}

impl FeatureMatrix {
    /// Row `i` as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.q..(i + 1) * self.q]
    }

    /// Copies the given rows into a new matrix with the same columns.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.q);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            n: rows.len(),
            q: self.q,
            data,
            names: self.names.clone(),
        }
    }
}

/// Largest supported hop order / network depth.
pub const MAX_HOPS: usize = 3;
/// Largest supported polynomial degree for the sieve expansion.
pub const MAX_POLY_DEGREE: usize = 3;

/// Builds the network feature matrix used by the GLM learner.
///
/// Base regressors per unit, in column order:
///
/// ```text
/// x_1 .. x_p                     own covariates
/// nbr_1 .. nbr_p                 1-hop neighbor means (0 when isolated)
/// deg                            degree
/// b2_1 .. b2_p, b3_1 .. b3_p     k-hop boundary means for k = 2..L
/// ```
///
/// The returned matrix is a polynomial sieve over those base columns: a
/// leading intercept, then every monomial of total degree `1..=poly_degree`,
/// enumerated degree by degree in lexicographic order of the participating
/// column indices. Hop order `L` and `poly_degree` must lie in `{1, 2, 3}`.
pub fn build_features(
    graph: &Graph,
    x: &[f64],
    p: usize,
    hops: usize,
    poly_degree: usize,
) -> Result<FeatureMatrix> {
    let n = graph.n();
    if x.len() != n * p {
        return Err(Error::LengthMismatch {
            what: "covariate matrix",
            got: x.len(),
            expected: n * p,
        });
    }
    if hops == 0 || hops > MAX_HOPS {
        return Err(Error::InvalidConfig(format!(
            "hop order must be in 1..={MAX_HOPS}, got {hops}"
        )));
    }
    if poly_degree == 0 || poly_degree > MAX_POLY_DEGREE {
        return Err(Error::InvalidConfig(format!(
            "poly_degree must be in 1..={MAX_POLY_DEGREE}, got {poly_degree}"
        )));
    }

    // Base block.
    let n_base = 2 * p + 1 + (hops - 1) * p;
    let mut base = vec![0.0; n * n_base];
    let mut base_names = Vec::with_capacity(n_base);
    for j in 0..p {
        base_names.push(format!("x{}", j + 1));
    }
    for j in 0..p {
        base_names.push(format!("nbr{}", j + 1));
    }
    base_names.push("deg".to_string());
    for k in 2..=hops {
        for j in 0..p {
            base_names.push(format!("b{k}_{}", j + 1));
        }
    }

    let nbr_means = neighbor_mean_covariates(graph, x, p)?;
    for i in 0..n {
        let row = &mut base[i * n_base..(i + 1) * n_base];
        row[..p].copy_from_slice(&x[i * p..(i + 1) * p]);
        row[p..2 * p].copy_from_slice(&nbr_means[i * p..(i + 1) * p]);
        row[2 * p] = graph.degree(i) as f64;
        if hops > 1 {
            // One truncated BFS per node gives every boundary mean at once.
            let mut sums = vec![0.0; (hops - 1) * p];
            let mut counts = vec![0usize; hops - 1];
            for (node, dist) in graph.bfs_within(i, hops) {
                if dist >= 2 {
                    counts[dist - 2] += 1;
                    for j in 0..p {
                        sums[(dist - 2) * p + j] += x[node * p + j];
                    }
                }
            }
            for k in 0..(hops - 1) {
                if counts[k] > 0 {
                    let inv = 1.0 / counts[k] as f64;
                    for j in 0..p {
                        row[2 * p + 1 + k * p + j] = sums[k * p + j] * inv;
                    }
                }
            }
        }
    }

    // Monomial multisets of each total degree, lexicographic within degree.
    let mut monomials: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for deg in 1..=poly_degree {
        enumerate_multisets(n_base, deg, 0, &mut current, &mut monomials);
    }

    let q = 1 + monomials.len();
    let mut data = vec![0.0; n * q];
    let mut names = Vec::with_capacity(q);
    names.push("1".to_string());
    for mono in &monomials {
        names.push(
            mono.iter()
                .map(|&j| base_names[j].as_str())
                .collect::<Vec<_>>()
                .join("*"),
        );
    }
    for i in 0..n {
        let brow = &base[i * n_base..(i + 1) * n_base];
        let out = &mut data[i * q..(i + 1) * q];
        out[0] = 1.0;
        for (c, mono) in monomials.iter().enumerate() {
            out[c + 1] = mono.iter().map(|&j| brow[j]).product();
        }
    }
    Ok(FeatureMatrix { n, q, data, names })
}

fn enumerate_multisets(
    n_base: usize,
    remaining: usize,
    start: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if remaining == 0 {
        out.push(current.clone());
        return;
    }
    for j in start..n_base {
        current.push(j);
        enumerate_multisets(n_base, remaining - 1, j, current, out);
        current.pop();
    }
}

/// Which learner fits the nuisance functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    /// Polynomial-sieve generalized linear model on network features.
    Nglm,
    /// Message-passing network on raw covariates.
    Gnn,
}

/// Learner configuration shared by both nuisance learners.
///
/// `L` is the hop order of the feature builder for `nglm` and the number of
/// message-passing layers for `gnn`; `H`, `epochs`, and `lr` only affect the
/// `gnn` learner, `poly_degree` and `ridge` only the `nglm` learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    /// Learner selector.
    pub learner: LearnerKind,
    /// Hop order (nglm) or layer count (gnn), in `{1, 2, 3}`.
    #[serde(rename = "L", default = "default_l")]
    pub l: usize,
    /// Hidden width of the gnn, in `1..=8`.
    #[serde(rename = "H", default = "default_h")]
    pub h: usize,
    /// Total degree of the polynomial sieve, in `{1, 2, 3}`.
    #[serde(default = "default_poly_degree")]
    pub poly_degree: usize,
    /// Gradient steps for gnn training.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Initial gnn step size.
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Seed for gnn parameter initialization.
    #[serde(default)]
    pub seed: u64,
    /// Propensity clipping threshold.
    #[serde(default = "default_eps_clip")]
    pub eps_clip: f64,
    /// Ridge penalty for the GLM fits.
    #[serde(default = "default_ridge")]
    pub ridge: f64,
}

fn default_l() -> usize {
    1
}
fn default_h() -> usize {
    3
}
fn default_poly_degree() -> usize {
    2
}
fn default_epochs() -> usize {
    400
}
fn default_lr() -> f64 {
    0.05
}
fn default_eps_clip() -> f64 {
    0.01
}
fn default_ridge() -> f64 {
    1e-6
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            learner: LearnerKind::Nglm,
            l: default_l(),
            h: default_h(),
            poly_degree: default_poly_degree(),
            epochs: default_epochs(),
            lr: default_lr(),
            seed: 0,
            eps_clip: default_eps_clip(),
            ridge: default_ridge(),
        }
    }
}

impl LearnerConfig {
    /// Validates hyperparameter ranges.
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || self.l > MAX_HOPS {
            return Err(Error::InvalidConfig(format!(
                "L must be in 1..={MAX_HOPS}, got {}",
                self.l
            )));
        }
        if self.h == 0 || self.h > gnn::MAX_HIDDEN {
            return Err(Error::InvalidConfig(format!(
                "H must be in 1..={}, got {}",
                gnn::MAX_HIDDEN,
                self.h
            )));
        }
        if self.poly_degree == 0 || self.poly_degree > MAX_POLY_DEGREE {
            return Err(Error::InvalidConfig(format!(
                "poly_degree must be in 1..={MAX_POLY_DEGREE}, got {}",
                self.poly_degree
            )));
        }
        if !(self.eps_clip > 0.0 && self.eps_clip < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "eps_clip must be in (0, 0.5), got {}",
                self.eps_clip
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "ridge must be non-negative, got {}",
                self.ridge
            )));
        }
        Ok(())
    }

    fn gnn_config(&self, loss: GnnLoss, seed_offset: u64) -> GnnTrainConfig {
        GnnTrainConfig {
            layers: self.l,
            hidden: self.h,
            epochs: self.epochs,
            lr: self.lr,
            seed: self.seed.wrapping_add(seed_offset),
            loss,
            activation: Activation::Relu,
            aggregators: AggregatorSet::MeanMaxSum,
        }
    }
}

/// Fitted nuisance functions at one exposure level.
///
/// `p1`/`p0` are the clipped joint propensities `p_1g`/`p_0g`; the raw
/// (unclipped) fitted values are kept because the trimming rule inspects
/// them. `mu0` holds the control outcome-trend prediction for every unit,
/// whether or not the unit is in the fitting cell.
#[derive(Debug, Clone)]
pub struct NuisanceFit {
    /// Exposure level this fit targets.
    pub level: usize,
    /// Raw fitted `P(D=1, G=level | X, A)` per unit.
    pub p1_raw: Vec<f64>,
    /// Clipped copy of `p1_raw`.
    pub p1: Vec<f64>,
    /// Raw fitted `P(D=0, G=level | X, A)` per unit.
    pub p0_raw: Vec<f64>,
    /// Clipped copy of `p0_raw`.
    pub p0: Vec<f64>,
    /// Fitted control outcome trend `E[dY | D=0, G=level, X, A]` per unit.
    pub mu0: Vec<f64>,
    /// How many `p1` predictions the clipping moved.
    pub clipped_p1: usize,
    /// How many `p0` predictions the clipping moved.
    pub clipped_p0: usize,
    /// Clipping threshold used.
    pub eps_clip: f64,
    /// Learner configuration that produced the fit.
    pub config: LearnerConfig,
}

impl NuisanceFit {
    /// Number of units the fit covers.
    pub fn n(&self) -> usize {
        self.p1.len()
    }
}

/// Fits the propensities and the control outcome trend at `level`.
///
/// Errors when the control cell `{D = 0, G = level}` is empty, since the
/// outcome trend would then be unidentified.
pub fn fit_nuisances(
    panel: &PanelDataset,
    graph: &Graph,
    g: &[usize],
    level: usize,
    cfg: &LearnerConfig,
) -> Result<NuisanceFit> {
    cfg.validate()?;
    check_shapes(panel, graph, g)?;
    let dy = delta_y(panel);
    let n = panel.n;

    let label1: Vec<f64> = (0..n)
        .map(|i| f64::from(panel.d[i] == 1 && g[i] == level))
        .collect();
    let label0: Vec<f64> = (0..n)
        .map(|i| f64::from(panel.d[i] == 0 && g[i] == level))
        .collect();
    let cell0: Vec<usize> = (0..n).filter(|&i| label0[i] == 1.0).collect();
    if cell0.is_empty() {
        return Err(Error::EmptyCell {
            what: "outcome trend",
            d: 0,
            g: level,
        });
    }

    let (p1_raw, p0_raw, mu0) = match cfg.learner {
        LearnerKind::Nglm => {
            let features = build_features(graph, &panel.x, panel.p, cfg.l, cfg.poly_degree)?;
            let glm_cfg = GlmConfig {
                ridge: cfg.ridge,
                ..GlmConfig::default()
            };
            let f1 = fit_logistic(&features, &label1, &glm_cfg)?;
            let f0 = fit_logistic(&features, &label0, &glm_cfg)?;
            let targets: Vec<f64> = cell0.iter().map(|&i| dy[i]).collect();
            let fm = fit_least_squares(&features.select_rows(&cell0), &targets, &glm_cfg)?;
            (
                f1.predict_proba(&features),
                f0.predict_proba(&features),
                fm.predict_linear(&features),
            )
        }
        LearnerKind::Gnn => {
            let mask0: Vec<bool> = (0..n).map(|i| label0[i] == 1.0).collect();
            let (params1, _) = gnn_train(
                graph,
                &panel.x,
                panel.p,
                &label1,
                None,
                &cfg.gnn_config(GnnLoss::Logistic, 0),
            )?;
            let (params0, _) = gnn_train(
                graph,
                &panel.x,
                panel.p,
                &label0,
                None,
                &cfg.gnn_config(GnnLoss::Logistic, 1),
            )?;
            let (params_mu, _) = gnn_train(
                graph,
                &panel.x,
                panel.p,
                &dy,
                Some(&mask0),
                &cfg.gnn_config(GnnLoss::Square, 2),
            )?;
            let p1 = sigmoid_vec(&gnn_forward(&params1, graph, &panel.x, panel.p)?);
            let p0 = sigmoid_vec(&gnn_forward(&params0, graph, &panel.x, panel.p)?);
            let mu = gnn_forward(&params_mu, graph, &panel.x, panel.p)?;
            (p1, p0, mu)
        }
    };

    let (p1, clipped_p1) = clip_probs(&p1_raw, cfg.eps_clip);
    let (p0, clipped_p0) = clip_probs(&p0_raw, cfg.eps_clip);
    Ok(NuisanceFit {
        level,
        p1_raw,
        p1,
        p0_raw,
        p0,
        mu0,
        clipped_p1,
        clipped_p0,
        eps_clip: cfg.eps_clip,
        config: cfg.clone(),
    })
}

/// Fits the outcome trend `E[dY | D = d, G = level, X, A]` on that cell and
/// predicts it for every unit. Used by the spillover estimators, whose
/// baseline cell is not the one stored in [`NuisanceFit`].
pub fn fit_outcome_cell(
    panel: &PanelDataset,
    graph: &Graph,
    g: &[usize],
    d: u8,
    level: usize,
    cfg: &LearnerConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_shapes(panel, graph, g)?;
    let dy = delta_y(panel);
    let cell: Vec<usize> = (0..panel.n)
        .filter(|&i| panel.d[i] == d && g[i] == level)
        .collect();
    if cell.is_empty() {
        return Err(Error::EmptyCell {
            what: "outcome trend",
            d,
            g: level,
        });
    }
    match cfg.learner {
        LearnerKind::Nglm => {
            let features = build_features(graph, &panel.x, panel.p, cfg.l, cfg.poly_degree)?;
            let glm_cfg = GlmConfig {
                ridge: cfg.ridge,
                ..GlmConfig::default()
            };
            let targets: Vec<f64> = cell.iter().map(|&i| dy[i]).collect();
            let fit = fit_least_squares(&features.select_rows(&cell), &targets, &glm_cfg)?;
            Ok(fit.predict_linear(&features))
        }
        LearnerKind::Gnn => {
            let mask: Vec<bool> = (0..panel.n)
                .map(|i| panel.d[i] == d && g[i] == level)
                .collect();
            let seed_offset = 16 + 2 * level as u64 + u64::from(d);
            let (params, _) = gnn_train(
                graph,
                &panel.x,
                panel.p,
                &dy,
                Some(&mask),
                &cfg.gnn_config(GnnLoss::Square, seed_offset),
            )?;
            gnn_forward(&params, graph, &panel.x, panel.p)
        }
    }
}

/// Fitted nuisance functions for repeated cross sections at one exposure
/// level.
///
/// Propensities pool both waves; the control outcome *level* (not the
/// change) is fit separately per wave so each row can be residualized
/// against its own wave's fit.
#[derive(Debug, Clone)]
pub struct RcsNuisanceFit {
    /// Exposure level this fit targets.
    pub level: usize,
    /// Raw fitted `P(D=1, G=level | X, A)` per row, both waves pooled.
    pub p1_raw: Vec<f64>,
    /// Clipped copy of `p1_raw`.
    pub p1: Vec<f64>,
    /// Raw fitted `P(D=0, G=level | X, A)` per row.
    pub p0_raw: Vec<f64>,
    /// Clipped copy of `p0_raw`.
    pub p0: Vec<f64>,
    /// Fitted `E[Y | D=0, G=level, T=0, X, A]` per row.
    pub mu0_pre: Vec<f64>,
    /// Fitted `E[Y | D=0, G=level, T=1, X, A]` per row.
    pub mu0_post: Vec<f64>,
    /// How many `p1` predictions the clipping moved.
    pub clipped_p1: usize,
    /// How many `p0` predictions the clipping moved.
    pub clipped_p0: usize,
    /// Clipping threshold used.
    pub eps_clip: f64,
    /// Learner configuration that produced the fit.
    pub config: LearnerConfig,
}

/// Fits repeated-cross-section nuisances at `level`.
///
/// Errors when either wave's control cell `{D = 0, G = level, T = t}` is
/// empty.
pub fn fit_nuisances_rcs(
    rcs: &RcsDataset,
    graph: &Graph,
    g: &[usize],
    level: usize,
    cfg: &LearnerConfig,
) -> Result<RcsNuisanceFit> {
    cfg.validate()?;
    if graph.n() != rcs.n {
        return Err(Error::LengthMismatch {
            what: "graph node count",
            got: graph.n(),
            expected: rcs.n,
        });
    }
    if g.len() != rcs.n {
        return Err(Error::LengthMismatch {
            what: "exposure vector",
            got: g.len(),
            expected: rcs.n,
        });
    }
    let n = rcs.n;

    let label1: Vec<f64> = (0..n)
        .map(|i| f64::from(rcs.d[i] == 1 && g[i] == level))
        .collect();
    let label0: Vec<f64> = (0..n)
        .map(|i| f64::from(rcs.d[i] == 0 && g[i] == level))
        .collect();
    let in_cell =
        |i: usize, t: u8| -> bool { rcs.d[i] == 0 && g[i] == level && rcs.t[i] == t };
    let cell_pre: Vec<usize> = (0..n).filter(|&i| in_cell(i, 0)).collect();
    let cell_post: Vec<usize> = (0..n).filter(|&i| in_cell(i, 1)).collect();
    if cell_pre.is_empty() {
        return Err(Error::EmptyCell {
            what: "pre-wave outcome level",
            d: 0,
            g: level,
        });
    }
    if cell_post.is_empty() {
        return Err(Error::EmptyCell {
            what: "post-wave outcome level",
            d: 0,
            g: level,
        });
    }

    let (p1_raw, p0_raw, mu0_pre, mu0_post) = match cfg.learner {
        LearnerKind::Nglm => {
            let features = build_features(graph, &rcs.x, rcs.p, cfg.l, cfg.poly_degree)?;
            let glm_cfg = GlmConfig {
                ridge: cfg.ridge,
                ..GlmConfig::default()
            };
            let f1 = fit_logistic(&features, &label1, &glm_cfg)?;
            let f0 = fit_logistic(&features, &label0, &glm_cfg)?;
            let y_pre: Vec<f64> = cell_pre.iter().map(|&i| rcs.y[i]).collect();
            let y_post: Vec<f64> = cell_post.iter().map(|&i| rcs.y[i]).collect();
            let f_pre = fit_least_squares(&features.select_rows(&cell_pre), &y_pre, &glm_cfg)?;
            let f_post = fit_least_squares(&features.select_rows(&cell_post), &y_post, &glm_cfg)?;
            (
                f1.predict_proba(&features),
                f0.predict_proba(&features),
                f_pre.predict_linear(&features),
                f_post.predict_linear(&features),
            )
        }
        LearnerKind::Gnn => {
            let mask_pre: Vec<bool> = (0..n).map(|i| in_cell(i, 0)).collect();
            let mask_post: Vec<bool> = (0..n).map(|i| in_cell(i, 1)).collect();
            let (params1, _) = gnn_train(
                graph,
                &rcs.x,
                rcs.p,
                &label1,
                None,
                &cfg.gnn_config(GnnLoss::Logistic, 0),
            )?;
            let (params0, _) = gnn_train(
                graph,
                &rcs.x,
                rcs.p,
                &label0,
                None,
                &cfg.gnn_config(GnnLoss::Logistic, 1),
            )?;
            let (params_pre, _) = gnn_train(
                graph,
                &rcs.x,
                rcs.p,
                &rcs.y,
                Some(&mask_pre),
                &cfg.gnn_config(GnnLoss::Square, 4),
            )?;
            let (params_post, _) = gnn_train(
                graph,
                &rcs.x,
                rcs.p,
                &rcs.y,
                Some(&mask_post),
                &cfg.gnn_config(GnnLoss::Square, 5),
            )?;
            (
                sigmoid_vec(&gnn_forward(&params1, graph, &rcs.x, rcs.p)?),
                sigmoid_vec(&gnn_forward(&params0, graph, &rcs.x, rcs.p)?),
                gnn_forward(&params_pre, graph, &rcs.x, rcs.p)?,
                gnn_forward(&params_post, graph, &rcs.x, rcs.p)?,
            )
        }
    };

    let (p1, clipped_p1) = clip_probs(&p1_raw, cfg.eps_clip);
    let (p0, clipped_p0) = clip_probs(&p0_raw, cfg.eps_clip);
    Ok(RcsNuisanceFit {
        level,
        p1_raw,
        p1,
        p0_raw,
        p0,
        mu0_pre,
        mu0_post,
        clipped_p1,
        clipped_p0,
        eps_clip: cfg.eps_clip,
        config: cfg.clone(),
    })
}

fn check_shapes(panel: &PanelDataset, graph: &Graph, g: &[usize]) -> Result<()> {
    if graph.n() != panel.n {
        return Err(Error::LengthMismatch {
            what: "graph node count",
            got: graph.n(),
            expected: panel.n,
        });
    }
    if g.len() != panel.n {
        return Err(Error::LengthMismatch {
            what: "exposure vector",
            got: g.len(),
            expected: panel.n,
        });
    }
    Ok(())
}

fn clip_probs(raw: &[f64], eps: f64) -> (Vec<f64>, usize) {
    let mut clipped = 0;
    let out = raw
        .iter()
        .map(|&v| {
            let c = v.clamp(eps, 1.0 - eps);
            if c != v {
                clipped += 1;
            }
            c
        })
        .collect();
    (out, clipped)
}

fn sigmoid_vec(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&z| crate::nuisance::glm::sigmoid(z)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn feature_columns_on_path_graph() {
        // Path 0-1-2-3 with scalar covariate x = [1, 2, 4, 8].
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let x = vec![1.0, 2.0, 4.0, 8.0];
        let f = build_features(&g, &x, 1, 3, 1).unwrap();
        assert_eq!(
            f.names,
            vec!["1", "x1", "nbr1", "deg", "b2_1", "b3_1"]
        );
        // Node 0: nbr mean = 2, deg = 1, boundary-2 = {2}, boundary-3 = {3}.
        assert_eq!(f.row(0), &[1.0, 1.0, 2.0, 1.0, 4.0, 8.0]);
        // Node 1: nbr mean = (1+4)/2, deg = 2, boundary-2 = {3}, boundary-3
        // empty -> 0.
        assert_eq!(f.row(1), &[1.0, 2.0, 2.5, 2.0, 8.0, 0.0]);
    }

    #[test]
    fn polynomial_expansion_counts_and_values() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let x = vec![3.0, 5.0];
        // Base columns: x1, nbr1, deg -> 3 base columns.
        let f2 = build_features(&g, &x, 1, 1, 2).unwrap();
        // 1 + 3 + 6 monomials.
        assert_eq!(f2.q, 10);
        let f3 = build_features(&g, &x, 1, 1, 3).unwrap();
        // 1 + 3 + 6 + 10.
        assert_eq!(f3.q, 20);
        // Row for node 0: base (3, 5, 1); check a few monomials by name.
        let idx = |name: &str| f3.names.iter().position(|c| c == name).unwrap();
        let row = f3.row(0);
        assert_relative_eq!(row[idx("x1*x1")], 9.0);
        assert_relative_eq!(row[idx("x1*nbr1")], 15.0);
        assert_relative_eq!(row[idx("x1*x1*nbr1")], 45.0);
        assert_relative_eq!(row[idx("deg")], 1.0);
    }

    #[test]
    fn isolated_nodes_get_zero_network_features() {
        let g = Graph::empty(2);
        let x = vec![7.0, 9.0];
        let f = build_features(&g, &x, 1, 2, 1).unwrap();
        assert_eq!(f.row(0), &[1.0, 7.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn learner_config_round_trips_documented_keys() {
        let json = r#"{
            "learner": "gnn", "L": 2, "H": 5, "poly_degree": 2,
            "epochs": 300, "lr": 0.1, "seed": 9, "eps_clip": 0.01,
            "ridge": 1e-6
        }"#;
        let cfg: LearnerConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.learner, LearnerKind::Gnn);
        assert_eq!(cfg.l, 2);
        assert_eq!(cfg.h, 5);
        let back = serde_json::to_value(&cfg).unwrap();
        assert_eq!(back["L"], 2);
        assert_eq!(back["H"], 5);
        assert_eq!(back["learner"], "gnn");
        // Unknown keys are rejected rather than silently ignored.
        assert!(serde_json::from_str::<LearnerConfig>(r#"{"learner":"nglm","layers":2}"#).is_err());
        // Defaults fill everything but the learner tag.
        let minimal: LearnerConfig = serde_json::from_str(r#"{"learner":"nglm"}"#).unwrap();
        assert_eq!(minimal.poly_degree, 2);
        assert_eq!(minimal.eps_clip, 0.01);
    }

    #[test]
    fn config_validation_bounds() {
        let mut cfg = LearnerConfig {
            l: 4,
            ..LearnerConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.l = 1;
        cfg.h = 9;
        assert!(cfg.validate().is_err());
        cfg.h = 8;
        cfg.eps_clip = 0.5;
        assert!(cfg.validate().is_err());
    }
}
