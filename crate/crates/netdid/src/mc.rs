//! Monte Carlo replication harness: runs configured estimation methods
//! over independent replications of a simulated design and aggregates
//! estimates, standard errors, and confidence-interval coverage.
//!
//! Replication `r` simulates the design with seed `base + r` and hands the
//! same dataset to every method, so methods are compared on identical
//! draws. Results are stored per replication index, which makes the report
//! independent of scheduling and therefore bit-identical across runs and
//! thread counts. Failed replications are recorded and excluded from the
//! aggregates rather than retried, since redrawing conditions on success
//! and would tilt the surviving sample.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    assemble_report, datt_hat, datt_overall, Estimand, EstimateReport, InferenceConfig,
    ScoreVector,
};
use crate::exposure::ExposureConfig;
use crate::nuisance::{LearnerConfig, NuisanceFit};
use crate::oracle::{potential_outcome_att, OracleTruth};
use crate::simulate::{simulate, DgpConfig, DgpKind, SimulatedPanel};
use crate::variance::confidence_interval;

/// Cap on distinct failure messages kept per method.
const MAX_FAILURE_MESSAGES: usize = 5;

/// Which nuisance model an injected fit uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectedModel {
    /// The design's closed-form truth.
    Oracle,
    /// A deliberately misspecified model: cell frequencies that ignore
    /// the covariate for the propensity, a zero trend for the outcome.
    Wrong,
}

/// Nuisance injection: bypasses the learners and hands the estimator
/// closed-form (or deliberately broken) nuisance values.
///
/// Injection requires the `appendix_e` design with its closed-form
/// propensity (zero latent treatment noise), because the oracle models
/// are read off the structural equations. It exists to test the
/// double-robustness contract: either single misspecification leaves the
/// estimator unbiased, both together do not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionSpec {
    /// Propensity model to inject.
    pub propensity: InjectedModel,
    /// Outcome-trend model to inject.
    pub outcome: InjectedModel,
}

/// Where a method's nuisance values come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceSource {
    /// Fit by a configured learner.
    Learner(LearnerConfig),
    /// Injected closed-form or misspecified values.
    Injected(InjectionSpec),
}

/// One estimation method to run on every replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    /// Row label; generated from the parts when absent.
    #[serde(default)]
    pub name: Option<String>,
    /// Target estimand.
    pub estimand: Estimand,
    /// Nuisance source.
    pub nuisance: NuisanceSource,
}

impl MethodSpec {
    /// A learner-backed method with a generated name.
    pub fn learner(estimand: Estimand, learner: LearnerConfig) -> Self {
        MethodSpec {
            name: None,
            estimand,
            nuisance: NuisanceSource::Learner(learner),
        }
    }

    /// An injection-backed method with a generated name.
    pub fn injected(estimand: Estimand, injection: InjectionSpec) -> Self {
        MethodSpec {
            name: None,
            estimand,
            nuisance: NuisanceSource::Injected(injection),
        }
    }

    /// The display label: the configured name, or one derived from the
    /// nuisance source and the estimand.
    pub fn label(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        let source = match &self.nuisance {
            NuisanceSource::Learner(cfg) => match cfg.learner {
                crate::nuisance::LearnerKind::Nglm => format!("nglm_L{}", cfg.l),
                crate::nuisance::LearnerKind::Gnn => format!("gnn_L{}_H{}", cfg.l, cfg.h),
            },
            NuisanceSource::Injected(inj) => {
                let tag = |m: InjectedModel| match m {
                    InjectedModel::Oracle => "oracle",
                    InjectedModel::Wrong => "wrong",
                };
                format!("inject_p_{}_mu_{}", tag(inj.propensity), tag(inj.outcome))
            }
        };
        format!("{source}/{}", self.estimand.label())
    }
}

/// Full Monte Carlo configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    /// Design to replicate; its seed is the base seed, replication `r`
    /// uses `seed + r`.
    pub dgp: DgpConfig,
    /// Methods to run on every replication.
    pub methods: Vec<MethodSpec>,
    /// Number of replications.
    pub reps: usize,
    /// Exposure mapping handed to the estimators.
    #[serde(default)]
    pub exposure: ExposureConfig,
    /// Trimming, test level, and bandwidth decay settings.
    #[serde(default)]
    pub inference: InferenceConfig,
    /// Replications used by the potential-outcome oracle that fixes each
    /// method's ground truth.
    #[serde(default = "default_truth_reps")]
    pub truth_reps: usize,
    /// Seed offset for the truth oracle, kept away from the estimation
    /// replications' seed range.
    #[serde(default = "default_truth_seed_offset")]
    pub truth_seed_offset: u64,
    /// Run replications on the rayon thread pool.
    #[serde(default = "default_parallel")]
    pub parallel: bool,
}

fn default_truth_reps() -> usize {
    50
}
fn default_truth_seed_offset() -> u64 {
    1_000_000
}
fn default_parallel() -> bool {
    true
}

impl McConfig {
    /// Validates the configuration and every part it contains.
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        self.exposure.validate()?;
        self.inference.validate()?;
        if self.reps == 0 {
            return Err(Error::InvalidConfig(
                "monte carlo needs at least one replication".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig(
                "monte carlo needs at least one method".into(),
            ));
        }
        if self.truth_reps == 0 {
            return Err(Error::InvalidConfig(
                "truth oracle needs at least one replication".into(),
            ));
        }
        for method in &self.methods {
            match &method.nuisance {
                NuisanceSource::Learner(cfg) => cfg.validate()?,
                NuisanceSource::Injected(_) => {
                    if self.dgp.kind != DgpKind::AppendixE {
                        return Err(Error::InvalidConfig(
                            "nuisance injection needs the appendix_e design".into(),
                        ));
                    }
                    if self.dgp.appendix_e.sigma_nu != 0.0 {
                        return Err(Error::InvalidConfig(
                            "nuisance injection needs a closed-form propensity \
                             (zero latent treatment noise)"
                                .into(),
                        ));
                    }
                    if !matches!(
                        method.estimand,
                        Estimand::Datt { .. } | Estimand::DattOverall | Estimand::Naive
                    ) {
                        return Err(Error::InvalidConfig(format!(
                            "nuisance injection supports the direct effects and the naive \
                             contrast, not {}",
                            method.estimand.label()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One method's result on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    /// Replication index.
    pub rep: usize,
    /// Method label.
    pub method: String,
    /// Point estimate.
    pub estimate: f64,
    /// Network-robust standard error (NaN when the kernel sum was
    /// negative).
    pub se_hac: f64,
    /// Independence-assuming standard error.
    pub se_iid: f64,
    /// Whether the network-robust interval covered the truth.
    pub ci_hac_hit: bool,
    /// Whether the independence interval covered the truth.
    pub ci_iid_hit: bool,
    /// Bandwidth used by the network-robust variance.
    pub bandwidth: usize,
    /// Analysis-set size after trimming.
    pub m_n: usize,
}

/// One method's aggregate over the successful replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    /// Method label.
    pub method: String,
    /// Target estimand.
    pub estimand: Estimand,
    /// Ground truth the bias and coverage are measured against.
    pub truth: f64,
    /// Monte Carlo error of the truth itself.
    pub truth_mc_se: f64,
    /// Replications that produced an estimate.
    pub successes: usize,
    /// Replications that failed for this method.
    pub failures: usize,
    /// Mean estimate over successes.
    pub mean_estimate: f64,
    /// Mean estimate minus truth.
    pub bias: f64,
    /// Empirical standard deviation of the estimates.
    pub sd_estimate: f64,
    /// Mean network-robust standard error (negative-variance
    /// replications excluded).
    pub mean_se_hac: f64,
    /// Mean independence-assuming standard error.
    pub mean_se_iid: f64,
    /// Share of successes whose network-robust interval covered the
    /// truth.
    pub coverage_hac: f64,
    /// Share of successes whose independence interval covered the truth.
    pub coverage_iid: f64,
    /// Distinct failure messages, capped at a handful.
    pub failure_messages: Vec<String>,
}

/// Full Monte Carlo output: the configuration, per-replication rows, and
/// per-method aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    /// The configuration that produced the report.
    pub config: McConfig,
    /// Successful per-replication results in (replication, method) order.
    pub rows: Vec<McRow>,
    /// Per-method aggregates in configuration order.
    pub methods: Vec<MethodSummary>,
}

/// Outcome of one method on one replication, before labeling.
type RepOutcome = std::result::Result<(f64, f64, f64, usize, usize), String>;

/// Builds the injected nuisance fit for one exposure level of the
/// spillover design.
///
/// The oracle propensity multiplies the unit's own closed-form treatment
/// probability by the probability of the exposure level, which for the
/// any-treated-neighbor mapping is one minus the product of the
/// neighbors' non-treatment probabilities. The wrong propensity is the
/// sample frequency of the `(d, g)` cell, constant across units. The
/// oracle outcome trend is the structural control trend
/// `(theta_post[0] - theta_pre[0]) + (theta_post[3] - theta_pre[3]) x`;
/// the wrong one is identically zero.
fn injected_fit(
    sim: &SimulatedPanel,
    dgp: &DgpConfig,
    injection: &InjectionSpec,
    g: &[usize],
    level: usize,
    eps_clip: f64,
) -> Result<NuisanceFit> {
    let n = sim.panel.n;
    let pi = sim
        .propensity
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("injection needs a closed-form propensity".into()))?;
    let (p1_raw, p0_raw) = match injection.propensity {
        InjectedModel::Oracle => {
            let mut p1 = vec![0.0; n];
            let mut p0 = vec![0.0; n];
            for i in 0..n {
                let none_treated: f64 = sim
                    .graph
                    .neighbors(i)
                    .iter()
                    .map(|&j| 1.0 - pi[j])
                    .product();
                let exposure_prob = if level == 0 {
                    none_treated
                } else {
                    1.0 - none_treated
                };
                p1[i] = pi[i] * exposure_prob;
                p0[i] = (1.0 - pi[i]) * exposure_prob;
            }
            (p1, p0)
        }
        InjectedModel::Wrong => {
            let in_cell = |d: u8| -> f64 {
                (0..n)
                    .filter(|&i| sim.panel.d[i] == d && g[i] == level)
                    .count() as f64
                    / n as f64
            };
            (vec![in_cell(1); n], vec![in_cell(0); n])
        }
    };
    let mu0 = match injection.outcome {
        InjectedModel::Oracle => {
            let ae = &dgp.appendix_e;
            let slope = ae.theta_post[3] - ae.theta_pre[3];
            let intercept = ae.theta_post[0] - ae.theta_pre[0];
            sim.panel.x.iter().map(|&x| intercept + slope * x).collect()
        }
        InjectedModel::Wrong => vec![0.0; n],
    };
    let clip = |v: f64| v.clamp(eps_clip, 1.0 - eps_clip);
    let p1: Vec<f64> = p1_raw.iter().map(|&v| clip(v)).collect();
    let p0: Vec<f64> = p0_raw.iter().map(|&v| clip(v)).collect();
    let clipped_p1 = p1.iter().zip(&p1_raw).filter(|(a, b)| a != b).count();
    let clipped_p0 = p0.iter().zip(&p0_raw).filter(|(a, b)| a != b).count();
    Ok(NuisanceFit {
        level,
        p1_raw,
        p1,
        p0_raw,
        p0,
        mu0,
        clipped_p1,
        clipped_p0,
        eps_clip,
        config: LearnerConfig::default(),
    })
}

/// Runs one injected method on one replication and assembles the same
/// report the learner path produces.
fn run_injected(
    sim: &SimulatedPanel,
    dgp: &DgpConfig,
    injection: &InjectionSpec,
    estimand: Estimand,
    exposure: &ExposureConfig,
    inference: &InferenceConfig,
) -> Result<(EstimateReport, ScoreVector)> {
    let g = exposure.compute(&sim.graph, &sim.panel.d)?;
    let eps_clip = LearnerConfig::default().eps_clip;
    let (estimate, scores, trim, clipped) = match estimand {
        Estimand::Datt { level } => {
            let fit = injected_fit(sim, dgp, injection, &g, level, eps_clip)?;
            let (est, sv, trim) = datt_hat(&sim.panel, &g, &fit, inference.eps_trim)?;
            (est, sv, trim, (fit.clipped_p1, fit.clipped_p0))
        }
        Estimand::DattOverall => {
            let fits: Vec<NuisanceFit> = exposure
                .levels()
                .into_iter()
                .map(|level| injected_fit(sim, dgp, injection, &g, level, eps_clip))
                .collect::<Result<_>>()?;
            let (est, sv, trim, _) = datt_overall(&sim.panel, &g, &fits, inference.eps_trim)?;
            let clipped = fits
                .iter()
                .fold((0, 0), |(a, b), f| (a + f.clipped_p1, b + f.clipped_p0));
            (est, sv, trim, clipped)
        }
        Estimand::Naive => {
            // The naive contrast ignores the network: same injected
            // models, evaluated as if every unit had exposure zero,
            // which collapses the joint propensity to the own-treatment
            // one. Inference still runs on the real graph.
            let g_zero = vec![0usize; sim.panel.n];
            let pi = sim.propensity.as_ref().expect("validated closed form");
            let (p1_raw, p0_raw) = match injection.propensity {
                InjectedModel::Oracle => {
                    (pi.clone(), pi.iter().map(|&p| 1.0 - p).collect::<Vec<_>>())
                }
                InjectedModel::Wrong => {
                    let share = sim.panel.d.iter().filter(|&&d| d == 1).count() as f64
                        / sim.panel.n as f64;
                    (vec![share; sim.panel.n], vec![1.0 - share; sim.panel.n])
                }
            };
            let template = injected_fit(sim, dgp, injection, &g_zero, 0, eps_clip)?;
            let clip = |v: f64| v.clamp(eps_clip, 1.0 - eps_clip);
            let p1: Vec<f64> = p1_raw.iter().map(|&v| clip(v)).collect();
            let p0: Vec<f64> = p0_raw.iter().map(|&v| clip(v)).collect();
            let clipped_p1 = p1.iter().zip(&p1_raw).filter(|(a, b)| a != b).count();
            let clipped_p0 = p0.iter().zip(&p0_raw).filter(|(a, b)| a != b).count();
            let fit = NuisanceFit {
                level: 0,
                p1_raw,
                p1,
                p0_raw,
                p0,
                mu0: template.mu0,
                clipped_p1,
                clipped_p0,
                eps_clip,
                config: LearnerConfig::default(),
            };
            let (est, sv, trim) = datt_hat(&sim.panel, &g_zero, &fit, inference.eps_trim)?;
            (est, sv, trim, (fit.clipped_p1, fit.clipped_p0))
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "nuisance injection does not support {}",
                other.label()
            )))
        }
    };
    let report = assemble_report(
        estimand.label(),
        estimate,
        sim.panel.n,
        &trim,
        clipped,
        &scores,
        &sim.graph,
        inference,
    )?;
    Ok((report, scores))
}

/// Runs every method on one replication.
fn run_replication(cfg: &McConfig, rep: usize) -> Vec<RepOutcome> {
    let mut rep_dgp = cfg.dgp.clone();
    rep_dgp.seed = cfg.dgp.seed + rep as u64;
    let sim = match simulate(&rep_dgp) {
        Ok(sim) => sim,
        Err(e) => {
            let msg = format!("simulation: {e}");
            return vec![Err(msg); cfg.methods.len()];
        }
    };
    cfg.methods
        .iter()
        .map(|method| {
            let result = match &method.nuisance {
                NuisanceSource::Learner(learner) => {
                    let mut rep_learner = learner.clone();
                    rep_learner.seed = learner.seed + rep as u64;
                    crate::estimators::estimate_with_inference(
                        &sim.panel,
                        &sim.graph,
                        &cfg.exposure,
                        method.estimand,
                        &rep_learner,
                        &cfg.inference,
                    )
                }
                NuisanceSource::Injected(injection) => run_injected(
                    &sim,
                    &rep_dgp,
                    injection,
                    method.estimand,
                    &cfg.exposure,
                    &cfg.inference,
                ),
            };
            match result {
                Ok((report, _)) => Ok((
                    report.estimate,
                    report.se_hac,
                    report.se_iid,
                    report.bandwidth,
                    report.m_n,
                )),
                Err(e) => Err(e.to_string()),
            }
        })
        .collect()
}

/// Runs the configured Monte Carlo experiment.
///
/// Ground truth for each method comes from the potential-outcome oracle
/// at `truth_reps` replications seeded outside the estimation range.
/// Coverage indicators compare each replication's normal interval against
/// that truth. Errors only when every replication failed for every
/// method; partial failures are reported in the per-method summaries.
pub fn run_monte_carlo(cfg: &McConfig) -> Result<McReport> {
    cfg.validate()?;
    let z_alpha = cfg.inference.alpha;

    let truths: Vec<OracleTruth> = cfg
        .methods
        .iter()
        .map(|m| {
            potential_outcome_att(
                &cfg.dgp,
                m.estimand,
                cfg.truth_reps,
                cfg.dgp.seed + cfg.truth_seed_offset,
            )
        })
        .collect::<Result<_>>()?;

    let outcomes: Vec<Vec<RepOutcome>> = if cfg.parallel {
        (0..cfg.reps)
            .into_par_iter()
            .map(|rep| run_replication(cfg, rep))
            .collect()
    } else {
        (0..cfg.reps).map(|rep| run_replication(cfg, rep)).collect()
    };

    let labels: Vec<String> = cfg.methods.iter().map(MethodSpec::label).collect();
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (m, method) in cfg.methods.iter().enumerate() {
        let truth = &truths[m];
        let mut estimates = Vec::new();
        let mut se_hac_sum = 0.0;
        let mut se_hac_count = 0usize;
        let mut se_iid_sum = 0.0;
        let mut hac_hits = 0usize;
        let mut iid_hits = 0usize;
        let mut failures = 0usize;
        let mut messages: Vec<String> = Vec::new();
        for (rep, outcome) in outcomes.iter().enumerate() {
            match outcome[m].as_ref() {
                Ok(&(estimate, se_hac, se_iid, bandwidth, m_n)) => {
                    let (lo, hi) = confidence_interval(estimate, se_hac, z_alpha)?;
                    let ci_hac_hit = lo <= truth.value && truth.value <= hi;
                    let (lo, hi) = confidence_interval(estimate, se_iid, z_alpha)?;
                    let ci_iid_hit = lo <= truth.value && truth.value <= hi;
                    estimates.push(estimate);
                    if se_hac.is_finite() {
                        se_hac_sum += se_hac;
                        se_hac_count += 1;
                    }
                    se_iid_sum += se_iid;
                    hac_hits += usize::from(ci_hac_hit);
                    iid_hits += usize::from(ci_iid_hit);
                    rows.push(McRow {
                        rep,
                        method: labels[m].clone(),
                        estimate,
                        se_hac,
                        se_iid,
                        ci_hac_hit,
                        ci_iid_hit,
                        bandwidth,
                        m_n,
                    });
                }
                Err(msg) => {
                    failures += 1;
                    if !messages.contains(msg) && messages.len() < MAX_FAILURE_MESSAGES {
                        messages.push(msg.clone());
                    }
                }
            }
        }
        let successes = estimates.len();
        let mean_estimate = if successes > 0 {
            estimates.iter().sum::<f64>() / successes as f64
        } else {
            f64::NAN
        };
        let sd_estimate = if successes > 1 {
            let var = estimates
                .iter()
                .map(|e| (e - mean_estimate).powi(2))
                .sum::<f64>()
                / (successes - 1) as f64;
            var.sqrt()
        } else {
            f64::NAN
        };
        summaries.push(MethodSummary {
            method: labels[m].clone(),
            estimand: method.estimand,
            truth: truth.value,
            truth_mc_se: truth.mc_se,
            successes,
            failures,
            mean_estimate,
            bias: mean_estimate - truth.value,
            sd_estimate,
            mean_se_hac: if se_hac_count > 0 {
                se_hac_sum / se_hac_count as f64
            } else {
                f64::NAN
            },
            mean_se_iid: if successes > 0 {
                se_iid_sum / successes as f64
            } else {
                f64::NAN
            },
            coverage_hac: if successes > 0 {
                hac_hits as f64 / successes as f64
            } else {
                f64::NAN
            },
            coverage_iid: if successes > 0 {
                iid_hits as f64 / successes as f64
            } else {
                f64::NAN
            },
            failure_messages: messages,
        });
    }

    if rows.is_empty() {
        let detail = summaries
            .iter()
            .flat_map(|s| s.failure_messages.first().cloned())
            .next()
            .unwrap_or_else(|| "no diagnostics".into());
        return Err(Error::InvalidData(format!(
            "all {} replications failed for every method; first failure: {detail}",
            cfg.reps
        )));
    }

    // Rows are grouped by method above; reorder to (replication, method)
    // so the CSV reads chronologically.
    rows.sort_by(|a, b| (a.rep, &a.method).cmp(&(b.rep, &b.method)));

    Ok(McReport {
        config: cfg.clone(),
        rows,
        methods: summaries,
    })
}

/// Writes the per-replication rows as CSV.
pub fn write_rows_csv<W: std::io::Write>(report: &McReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "rep",
        "method",
        "estimate",
        "se_hac",
        "se_iid",
        "ci_hac_hit",
        "ci_iid_hit",
        "bandwidth",
        "m_n",
    ])?;
    for row in &report.rows {
        w.write_record([
            row.rep.to_string(),
            row.method.clone(),
            row.estimate.to_string(),
            row.se_hac.to_string(),
            row.se_iid.to_string(),
            (u8::from(row.ci_hac_hit)).to_string(),
            (u8::from(row.ci_iid_hit)).to_string(),
            row.bandwidth.to_string(),
            row.m_n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Renders the per-method aggregates as a whitespace-aligned table whose
/// header lines start with `#`, suitable for gnuplot's `plot ... using`.
pub fn summary_table(report: &McReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# reps={} design={} n={}\n",
        report.config.reps,
        report.config.dgp.kind.label(),
        report.config.dgp.n
    ));
    out.push_str(&format!(
        "# {:<38} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8} {:>8} {:>6}\n",
        "method", "truth", "mean", "bias", "sd", "se_hac", "cov_hac", "cov_iid", "fails"
    ));
    for s in &report.methods {
        out.push_str(&format!(
            "{:<40} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>8.4} {:>8.4} {:>6}\n",
            s.method,
            s.truth,
            s.mean_estimate,
            s.bias,
            s.sd_estimate,
            s.mean_se_hac,
            s.coverage_hac,
            s.coverage_iid,
            s.failures
        ));
    }
    out
}
