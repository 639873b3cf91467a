//! Command-line front end for the `netdid` library: estimation on dataset
//! files, dataset simulation, Monte Carlo experiments, and graph summaries.
//!
//! Every command accepts a `--config` JSON file whose keys mirror the
//! flags; flags win over config values. Exit codes: 0 on success, 1 when
//! the statistical machinery fails (estimation, simulation, replication),
//! 2 on input or usage problems.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use netdid::data::{
    load_edges, load_edges_standalone, load_panel, load_rcs, load_staggered, IdMap,
};
use netdid::estimators::{
    estimate_with_inference, rcs_estimate_with_inference, staggered_estimate_with_inference,
    Estimand, EstimateReport, InferenceConfig, ScoreVector,
};
use netdid::exposure::ExposureConfig;
use netdid::graph::{rgg_from_positions, sample_positions, Graph, GraphStats};
use netdid::mc::{run_monte_carlo, summary_table, write_rows_csv, McConfig, MethodSpec};
use netdid::nuisance::{LearnerConfig, LearnerKind};
use netdid::oracle::potential_outcome_att;
use netdid::simulate::{simulate, DgpConfig, DgpKind};
use netdid::variance::bandwidth;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_chain(&e.source));
            ExitCode::from(e.code)
        }
    }
}

/// Renders an error with its cause chain, skipping causes already spelled
/// out by a wrapper's message.
fn render_chain(e: &anyhow::Error) -> String {
    let mut text = e.to_string();
    for cause in e.chain().skip(1) {
        let cause = cause.to_string();
        if !text.contains(&cause) {
            text.push_str(": ");
            text.push_str(&cause);
        }
    }
    text
}

/// Failure with the exit code it maps to.
struct CliError {
    code: u8,
    source: anyhow::Error,
}

/// Input or usage problem: exit code 2.
fn usage<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError {
        code: 2,
        source: e.into(),
    }
}

/// Statistical failure: exit code 1.
fn stat<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError {
        code: 1,
        source: e.into(),
    }
}

#[derive(Parser)]
#[command(
    name = "netdid",
    version,
    about = "Doubly robust difference-in-differences under network interference"
)]
struct Cli {
    /// Worker threads for replications and path sweeps [default: available cores]
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a treatment effect from dataset and edge files
    Estimate(EstimateArgs),
    /// Simulate a dataset; write node and edge CSVs plus the oracle truth
    Simulate(SimulateArgs),
    /// Run a Monte Carlo experiment and write the replication report
    Mc(McArgs),
    /// Summarize a graph: degrees, path length, HAC bandwidth
    GraphStats(GraphStatsArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(usage)?;
    }
    match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Mc(args) => cmd_mc(args),
        Command::GraphStats(args) => cmd_graph_stats(args),
    }
}

/// Reads and parses a JSON config file.
fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Serializes `value` as pretty JSON with a trailing newline.
fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------------------
// estimate

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimandArg {
    /// Direct effect at exposure level --g
    Datt,
    /// Exposure-share-weighted direct effect over all levels
    DattOverall,
    /// Spillover effect of level --g vs 0 in arm --d
    Satt,
    /// Total effect: overall direct plus untreated spillover
    AttTotal,
    /// Interference-blind DR-DID baseline
    Naive,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExposureArg {
    /// Indicator of any treated neighbor (levels 0/1)
    Any,
    /// Treated-neighbor count, capped at --cap
    Count,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LearnerArg {
    /// Polynomial-sieve GLM on network features
    Nglm,
    /// Message-passing network on raw covariates
    Gnn,
}

impl From<LearnerArg> for LearnerKind {
    fn from(a: LearnerArg) -> Self {
        match a {
            LearnerArg::Nglm => LearnerKind::Nglm,
            LearnerArg::Gnn => LearnerKind::Gnn,
        }
    }
}

/// JSON run configuration for `estimate`; keys mirror the flags.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    panel: Option<PathBuf>,
    rcs: Option<PathBuf>,
    staggered: Option<PathBuf>,
    edges: Option<PathBuf>,
    estimand: Option<Estimand>,
    exposure: Option<ExposureConfig>,
    learner: Option<LearnerConfig>,
    inference: Option<InferenceConfig>,
    out: Option<PathBuf>,
    scores: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// JSON run config; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Two-period panel CSV (id,d,y_pre,y_post,x1..xp)
    #[arg(long)]
    panel: Option<PathBuf>,
    /// Repeated cross-section CSV (id,d,t,y,x1..xp)
    #[arg(long)]
    rcs: Option<PathBuf>,
    /// Staggered adoption CSV (id,adopt_time,y_1..y_T,x1..xp)
    #[arg(long)]
    staggered: Option<PathBuf>,
    /// Edge list CSV (src,dst)
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Target estimand [default: datt]
    #[arg(long, value_enum)]
    estimand: Option<EstimandArg>,
    /// Exposure level for datt and satt [default: 1]
    #[arg(long)]
    g: Option<usize>,
    /// Own-treatment arm for satt [default: 1]
    #[arg(long)]
    d: Option<u8>,
    /// Exposure mapping [default: any]
    #[arg(long, value_enum)]
    exposure: Option<ExposureArg>,
    /// Level cap for the count exposure mapping
    #[arg(long)]
    cap: Option<usize>,
    /// Nuisance learner [default: nglm]
    #[arg(long, value_enum)]
    learner: Option<LearnerArg>,
    /// Hop order (nglm) or layer count (gnn) [default: 1]
    #[arg(long = "L")]
    l: Option<usize>,
    /// Hidden width of the gnn [default: 3]
    #[arg(long = "H")]
    h: Option<usize>,
    /// Total degree of the polynomial sieve [default: 2]
    #[arg(long)]
    poly_degree: Option<usize>,
    /// Gradient steps for gnn training [default: 400]
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial gnn step size [default: 0.05]
    #[arg(long)]
    lr: Option<f64>,
    /// Seed for gnn parameter initialization [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Propensity clipping threshold [default: 0.01]
    #[arg(long)]
    eps_clip: Option<f64>,
    /// Ridge penalty for the GLM fits [default: 1e-6]
    #[arg(long)]
    ridge: Option<f64>,
    /// Propensity trimming threshold [default: 0.01]
    #[arg(long)]
    eps_trim: Option<f64>,
    /// Two-sided miscoverage of the confidence interval [default: 0.05]
    #[arg(long)]
    alpha: Option<f64>,
    /// Bandwidth decay exponent [default: 1]
    #[arg(long)]
    gamma: Option<f64>,
    /// Output path for the JSON report [default: estimate_report.json]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV export of per-unit scores (id,score)
    #[arg(long)]
    scores: Option<PathBuf>,
}

/// Echo of the input paths, as given.
#[derive(Serialize)]
struct InputsEcho {
    #[serde(skip_serializing_if = "Option::is_none")]
    panel: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rcs: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    staggered: Option<String>,
    edges: String,
}

/// Full `estimate` output: the resolved run settings and the report.
#[derive(Serialize)]
struct EstimateEnvelope<'a> {
    command: &'static str,
    inputs: InputsEcho,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimand: Option<Estimand>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exposure: Option<ExposureConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    learner: Option<&'a LearnerConfig>,
    inference: &'a InferenceConfig,
    report: &'a EstimateReport,
}

/// Which dataset file drives the estimation.
enum InputKind {
    Panel(PathBuf),
    Rcs(PathBuf),
    Staggered(PathBuf),
}

/// Everything `estimate` needs after config and flags are merged.
struct EstimatePlan {
    input: InputKind,
    edges: PathBuf,
    estimand: Estimand,
    exposure: ExposureConfig,
    learner: LearnerConfig,
    inference: InferenceConfig,
    out: PathBuf,
    scores: Option<PathBuf>,
}

fn merge_estimand(
    base: Option<Estimand>,
    arg: Option<EstimandArg>,
    g: Option<usize>,
    d: Option<u8>,
) -> anyhow::Result<Estimand> {
    if let Some(kind) = arg {
        return Ok(match kind {
            EstimandArg::Datt => Estimand::Datt {
                level: g.unwrap_or(1),
            },
            EstimandArg::DattOverall => Estimand::DattOverall,
            EstimandArg::Satt => Estimand::Satt {
                level: g.unwrap_or(1),
                d: d.unwrap_or(1),
            },
            EstimandArg::AttTotal => Estimand::AttTotal,
            EstimandArg::Naive => Estimand::Naive,
        });
    }
    let mut estimand = base.unwrap_or(Estimand::Datt { level: 1 });
    match (&mut estimand, g, d) {
        (_, None, None) => {}
        (Estimand::Datt { level }, Some(lv), None) => *level = lv,
        (Estimand::Satt { level, d: arm }, lv, dd) => {
            if let Some(lv) = lv {
                *level = lv;
            }
            if let Some(dd) = dd {
                *arm = dd;
            }
        }
        _ => {
            return Err(anyhow!(
                "--g applies to datt and satt, --d to satt; pass --estimand to switch"
            ))
        }
    }
    Ok(estimand)
}

fn plan_estimate(args: &EstimateArgs) -> anyhow::Result<EstimatePlan> {
    let cfg: RunConfig = match &args.config {
        Some(path) => read_config(path)?,
        None => RunConfig::default(),
    };

    let panel = args.panel.clone().or(cfg.panel);
    let rcs = args.rcs.clone().or(cfg.rcs);
    let staggered = args.staggered.clone().or(cfg.staggered);
    let input = match (panel, rcs, staggered) {
        (Some(p), None, None) => InputKind::Panel(p),
        (None, Some(p), None) => InputKind::Rcs(p),
        (None, None, Some(p)) => InputKind::Staggered(p),
        (None, None, None) => {
            return Err(anyhow!("one of --panel, --rcs, --staggered is required"))
        }
        _ => return Err(anyhow!("--panel, --rcs, --staggered are mutually exclusive")),
    };
    let edges = args
        .edges
        .clone()
        .or(cfg.edges)
        .ok_or_else(|| anyhow!("--edges is required"))?;

    if matches!(input, InputKind::Staggered(_)) {
        let extras = args.estimand.is_some()
            || args.g.is_some()
            || args.d.is_some()
            || args.exposure.is_some()
            || args.learner.is_some()
            || cfg.estimand.is_some()
            || cfg.exposure.is_some()
            || cfg.learner.is_some();
        if extras {
            return Err(anyhow!(
                "staggered estimation matches on realized exposure and fits no nuisances; \
                 it takes no estimand, exposure, or learner settings"
            ));
        }
    }

    let estimand = merge_estimand(cfg.estimand, args.estimand, args.g, args.d)?;

    let exposure = match args.exposure {
        Some(ExposureArg::Any) => ExposureConfig::Any,
        Some(ExposureArg::Count) => ExposureConfig::Count {
            cap: args
                .cap
                .ok_or_else(|| anyhow!("--exposure count requires --cap"))?,
        },
        None => match (args.cap, cfg.exposure) {
            (Some(cap), _) => ExposureConfig::Count { cap },
            (None, Some(e)) => e,
            (None, None) => ExposureConfig::default(),
        },
    };

    let mut learner = cfg.learner.unwrap_or_default();
    if let Some(kind) = args.learner {
        learner.learner = kind.into();
    }
    if let Some(v) = args.l {
        learner.l = v;
    }
    if let Some(v) = args.h {
        learner.h = v;
    }
    if let Some(v) = args.poly_degree {
        learner.poly_degree = v;
    }
    if let Some(v) = args.epochs {
        learner.epochs = v;
    }
    if let Some(v) = args.lr {
        learner.lr = v;
    }
    if let Some(v) = args.seed {
        learner.seed = v;
    }
    if let Some(v) = args.eps_clip {
        learner.eps_clip = v;
    }
    if let Some(v) = args.ridge {
        learner.ridge = v;
    }

    let mut inference = cfg.inference.unwrap_or_default();
    if let Some(v) = args.eps_trim {
        inference.eps_trim = v;
    }
    if let Some(v) = args.alpha {
        inference.alpha = v;
    }
    if let Some(v) = args.gamma {
        inference.gamma = v;
    }

    Ok(EstimatePlan {
        input,
        edges,
        estimand,
        exposure,
        learner,
        inference,
        out: args
            .out
            .clone()
            .or(cfg.out)
            .unwrap_or_else(|| PathBuf::from("estimate_report.json")),
        scores: args.scores.clone().or(cfg.scores),
    })
}

fn load_graph(path: &Path, ids: &IdMap) -> anyhow::Result<Graph> {
    load_edges(path, ids).with_context(|| format!("reading edges {}", path.display()))
}

fn write_scores(path: &Path, ids: &IdMap, scores: &ScoreVector) -> anyhow::Result<()> {
    let file =
        std::fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["id", "score"])?;
    for (&i, &s) in scores.set().iter().zip(scores.scores()) {
        w.write_record([ids.name(i).to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn print_estimate_summary(report: &EstimateReport) {
    println!(
        "{}  estimate {:.6}  HAC SE {:.6}  IID SE {:.6}",
        report.label, report.estimate, report.se_hac, report.se_iid
    );
    println!(
        "{:.0}% CI [{:.6}, {:.6}]  bandwidth {}  m_n {}/{} ({} trimmed)",
        100.0 * (1.0 - report.alpha),
        report.ci_lower,
        report.ci_upper,
        report.bandwidth,
        report.m_n,
        report.n,
        report.trimmed
    );
    if report.clipped_p1 + report.clipped_p0 > 0 {
        println!(
            "clipped propensities: {} treated-cell, {} control-cell",
            report.clipped_p1, report.clipped_p0
        );
    }
    if report.hac_negative {
        println!("warning: HAC variance came out negative; HAC SE is NaN");
    }
    if let Some(b) = &report.breakdown {
        for (k, &level) in b.levels.iter().enumerate() {
            let satt = b.satt.get(k).map(|s| format!("  satt {s:.6}")).unwrap_or_default();
            println!(
                "level {level}: share {:.4}  datt {:.6}{satt}",
                b.shares[k], b.datt[k]
            );
        }
    }
    if let Some(u) = report.unmatched {
        println!("unmatched adopters: {u}");
    }
}

fn cmd_estimate(args: EstimateArgs) -> Result<(), CliError> {
    let plan = plan_estimate(&args).map_err(usage)?;

    let (report, scores, ids, echoes) = match &plan.input {
        InputKind::Panel(path) => {
            let panel = load_panel(path)
                .with_context(|| format!("reading panel {}", path.display()))
                .map_err(usage)?;
            let graph = load_graph(&plan.edges, &panel.ids).map_err(usage)?;
            let (report, scores) = estimate_with_inference(
                &panel,
                &graph,
                &plan.exposure,
                plan.estimand,
                &plan.learner,
                &plan.inference,
            )
            .map_err(stat)?;
            (
                report,
                scores,
                panel.ids.clone(),
                (Some(path.display().to_string()), None, None),
            )
        }
        InputKind::Rcs(path) => {
            let level = match plan.estimand {
                Estimand::Datt { level } => level,
                other => {
                    return Err(usage(anyhow!(
                        "repeated cross sections support the direct effect at a level \
                         (--estimand datt --g L), not {}",
                        other.label()
                    )))
                }
            };
            let rcs = load_rcs(path)
                .with_context(|| format!("reading repeated cross sections {}", path.display()))
                .map_err(usage)?;
            let graph = load_graph(&plan.edges, &rcs.ids).map_err(usage)?;
            let (report, scores) = rcs_estimate_with_inference(
                &rcs,
                &graph,
                &plan.exposure,
                level,
                &plan.learner,
                &plan.inference,
            )
            .map_err(stat)?;
            (
                report,
                scores,
                rcs.ids.clone(),
                (None, Some(path.display().to_string()), None),
            )
        }
        InputKind::Staggered(path) => {
            let panel = load_staggered(path)
                .with_context(|| format!("reading staggered panel {}", path.display()))
                .map_err(usage)?;
            let graph = load_graph(&plan.edges, &panel.ids).map_err(usage)?;
            let (report, est) =
                staggered_estimate_with_inference(&panel, &graph, &plan.inference)
                    .map_err(stat)?;
            (
                report,
                est.scores,
                panel.ids.clone(),
                (None, None, Some(path.display().to_string())),
            )
        }
    };

    let staggered_run = matches!(plan.input, InputKind::Staggered(_));
    let envelope = EstimateEnvelope {
        command: "estimate",
        inputs: InputsEcho {
            panel: echoes.0,
            rcs: echoes.1,
            staggered: echoes.2,
            edges: plan.edges.display().to_string(),
        },
        estimand: (!staggered_run).then_some(plan.estimand),
        exposure: (!staggered_run).then_some(plan.exposure),
        learner: (!staggered_run).then_some(&plan.learner),
        inference: &plan.inference,
        report: &report,
    };
    write_json(&plan.out, &envelope).map_err(usage)?;
    if let Some(path) = &plan.scores {
        write_scores(path, &ids, &scores).map_err(usage)?;
    }
    print_estimate_summary(&report);
    println!("report written to {}", plan.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DgpArg {
    /// Peer-effects design: endogenous treatment and simultaneous outcomes
    MainS6,
    /// Spillover design with closed-form truths 0.4 (exposed) and 0.2 (unexposed)
    AppendixE,
}

impl From<DgpArg> for DgpKind {
    fn from(a: DgpArg) -> Self {
        match a {
            DgpArg::MainS6 => DgpKind::MainS6,
            DgpArg::AppendixE => DgpKind::AppendixE,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON design config (the full design document); flags override
    #[arg(long)]
    config: Option<PathBuf>,
    /// Design family
    #[arg(long, value_enum)]
    dgp: Option<DgpArg>,
    /// Number of units
    #[arg(long)]
    n: Option<usize>,
    /// Design seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Expected mean degree of the geometric graph [default: design-specific]
    #[arg(long)]
    mean_degree: Option<f64>,
    /// Replications for the truth oracle [default: 50]
    #[arg(long)]
    truth_reps: Option<usize>,
    /// Seed offset for the truth oracle [default: 1000000]
    #[arg(long)]
    truth_seed_offset: Option<u64>,
    /// Directory for nodes.csv, edges.csv, truth.json [default: .]
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// One estimand's oracle truth in `truth.json`.
#[derive(Serialize)]
struct TruthEntry {
    estimand: Estimand,
    label: String,
    value: f64,
    mc_se: f64,
    reps: usize,
}

/// The `truth.json` document.
#[derive(Serialize)]
struct TruthReport {
    config: DgpConfig,
    truth_seed: u64,
    entries: Vec<TruthEntry>,
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut cfg: DgpConfig = match &args.config {
        Some(path) => read_config(path).map_err(usage)?,
        None => {
            let kind = args
                .dgp
                .ok_or_else(|| usage(anyhow!("--dgp is required without --config")))?;
            let n = args
                .n
                .ok_or_else(|| usage(anyhow!("--n is required without --config")))?;
            DgpConfig::new(kind.into(), n, args.seed.unwrap_or(0))
        }
    };
    if let Some(kind) = args.dgp {
        cfg.kind = kind.into();
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(m) = args.mean_degree {
        cfg.mean_degree = Some(m);
    }
    cfg.validate().map_err(usage)?;

    let out_dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .map_err(usage)?;

    let sim = simulate(&cfg).map_err(stat)?;

    let nodes_path = out_dir.join("nodes.csv");
    let file = std::fs::File::create(&nodes_path)
        .with_context(|| format!("writing {}", nodes_path.display()))
        .map_err(usage)?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec![
        "id".to_string(),
        "d".to_string(),
        "y_pre".to_string(),
        "y_post".to_string(),
    ];
    for j in 0..sim.panel.p {
        header.push(format!("x{}", j + 1));
    }
    w.write_record(&header).map_err(usage)?;
    for i in 0..sim.panel.n {
        let mut record = vec![
            sim.panel.ids.name(i).to_string(),
            sim.panel.d[i].to_string(),
            sim.panel.y_pre[i].to_string(),
            sim.panel.y_post[i].to_string(),
        ];
        for j in 0..sim.panel.p {
            record.push(sim.panel.x(i, j).to_string());
        }
        w.write_record(&record).map_err(usage)?;
    }
    w.flush().map_err(usage)?;

    let edges_path = out_dir.join("edges.csv");
    let file = std::fs::File::create(&edges_path)
        .with_context(|| format!("writing {}", edges_path.display()))
        .map_err(usage)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["src", "dst"]).map_err(usage)?;
    for i in 0..sim.graph.n() {
        for &j in sim.graph.neighbors(i) {
            if i < j {
                w.write_record([sim.panel.ids.name(i), sim.panel.ids.name(j)])
                    .map_err(usage)?;
            }
        }
    }
    w.flush().map_err(usage)?;

    let truth_reps = args.truth_reps.unwrap_or(50);
    let truth_seed = cfg.seed + args.truth_seed_offset.unwrap_or(1_000_000);
    let estimands = [
        Estimand::Datt { level: 1 },
        Estimand::Datt { level: 0 },
        Estimand::DattOverall,
        Estimand::Satt { level: 1, d: 1 },
    ];
    let mut entries = Vec::new();
    for estimand in estimands {
        let truth =
            potential_outcome_att(&cfg, estimand, truth_reps, truth_seed).map_err(stat)?;
        entries.push(TruthEntry {
            estimand,
            label: estimand.label(),
            value: truth.value,
            mc_se: truth.mc_se,
            reps: truth.reps,
        });
    }
    for e in &entries {
        println!("truth {}: {:.6} (mc se {:.6})", e.label, e.value, e.mc_se);
    }
    let truth_path = out_dir.join("truth.json");
    write_json(
        &truth_path,
        &TruthReport {
            config: cfg,
            truth_seed,
            entries,
        },
    )
    .map_err(usage)?;

    println!(
        "wrote {}, {}, {}",
        nodes_path.display(),
        edges_path.display(),
        truth_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// mc

#[derive(Args)]
struct McArgs {
    /// JSON Monte Carlo config (full method list); flags override
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated method shortcuts (nglm, gnn, naive) when no config is given
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Estimand for shortcut methods [default: datt-overall]
    #[arg(long, value_enum)]
    estimand: Option<EstimandArg>,
    /// Exposure level for shortcut datt / satt estimands [default: 1]
    #[arg(long)]
    g: Option<usize>,
    /// Design family when no config is given [default: main-s6]
    #[arg(long, value_enum)]
    dgp: Option<DgpArg>,
    /// Number of units
    #[arg(long)]
    n: Option<usize>,
    /// Base design seed; replication r uses seed + r [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replications
    #[arg(long)]
    reps: Option<usize>,
    /// Replications for the truth oracle [default: 50]
    #[arg(long)]
    truth_reps: Option<usize>,
    /// Output path for the JSON report [default: mc_report.json]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV export of per-replication rows
    #[arg(long)]
    rows: Option<PathBuf>,
}

fn shortcut_method(token: &str, estimand: Estimand) -> anyhow::Result<MethodSpec> {
    let nglm = LearnerConfig::default();
    let gnn = LearnerConfig {
        learner: LearnerKind::Gnn,
        ..LearnerConfig::default()
    };
    match token {
        "nglm" => Ok(MethodSpec::learner(estimand, nglm)),
        "gnn" => Ok(MethodSpec::learner(estimand, gnn)),
        "naive" => Ok(MethodSpec::learner(Estimand::Naive, nglm)),
        other => Err(anyhow!(
            "unknown method '{other}'; known shortcuts: nglm, gnn, naive \
             (use --config for full method specs)"
        )),
    }
}

fn cmd_mc(args: McArgs) -> Result<(), CliError> {
    let mut cfg: McConfig = match &args.config {
        Some(path) => read_config(path).map_err(usage)?,
        None => {
            if args.methods.is_empty() {
                return Err(usage(anyhow!("--methods is required without --config")));
            }
            let n = args
                .n
                .ok_or_else(|| usage(anyhow!("--n is required without --config")))?;
            let kind = args.dgp.map(DgpKind::from).unwrap_or(DgpKind::MainS6);
            let estimand =
                merge_estimand(None, args.estimand.or(Some(EstimandArg::DattOverall)), args.g, None)
                    .map_err(usage)?;
            let methods = args
                .methods
                .iter()
                .map(|t| shortcut_method(t, estimand))
                .collect::<anyhow::Result<Vec<_>>>()
                .map_err(usage)?;
            McConfig {
                dgp: DgpConfig::new(kind, n, args.seed.unwrap_or(0)),
                methods,
                reps: args.reps.unwrap_or(100),
                exposure: ExposureConfig::default(),
                inference: InferenceConfig::default(),
                truth_reps: 50,
                truth_seed_offset: 1_000_000,
                parallel: true,
            }
        }
    };
    if let Some(kind) = args.dgp {
        cfg.dgp.kind = kind.into();
    }
    if let Some(n) = args.n {
        cfg.dgp.n = n;
    }
    if let Some(seed) = args.seed {
        cfg.dgp.seed = seed;
    }
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    if let Some(reps) = args.truth_reps {
        cfg.truth_reps = reps;
    }
    cfg.validate().map_err(usage)?;

    let report = run_monte_carlo(&cfg).map_err(stat)?;

    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("mc_report.json"));
    write_json(&out, &report).map_err(usage)?;
    if let Some(path) = &args.rows {
        let file = std::fs::File::create(path)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(usage)?;
        write_rows_csv(&report, file).map_err(usage)?;
    }
    print!("{}", summary_table(&report));
    println!("report written to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// graph-stats

#[derive(Args)]
struct GraphStatsArgs {
    /// Edge list CSV (src,dst); identifiers are interned in file order
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Generate a random geometric graph with this many nodes instead
    #[arg(long)]
    rgg_n: Option<usize>,
    /// Position seed for the generated graph [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Expected mean degree of the generated graph [default: 5]
    #[arg(long)]
    mean_degree: Option<f64>,
    /// Bandwidth decay exponent [default: 1]
    #[arg(long)]
    gamma: Option<f64>,
    /// Output path for the stats JSON; printed to stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Graph summary plus the HAC bandwidth the inference kernel would use.
#[derive(Serialize)]
struct GraphStatsReport {
    #[serde(flatten)]
    stats: GraphStats,
    bandwidth: usize,
}

fn cmd_graph_stats(args: GraphStatsArgs) -> Result<(), CliError> {
    let graph = match (&args.edges, args.rgg_n) {
        (Some(path), None) => {
            let (graph, _ids) = load_edges_standalone(path)
                .with_context(|| format!("reading edges {}", path.display()))
                .map_err(usage)?;
            graph
        }
        (None, Some(n)) => {
            let mean_degree = args.mean_degree.unwrap_or(5.0);
            if !(mean_degree.is_finite() && mean_degree > 0.0) {
                return Err(usage(anyhow!(
                    "--mean-degree must be positive, got {mean_degree}"
                )));
            }
            let radius = (mean_degree / (std::f64::consts::PI * n as f64)).sqrt();
            let positions = sample_positions(n, args.seed.unwrap_or(0));
            rgg_from_positions(&positions, radius).map_err(stat)?
        }
        (None, None) => return Err(usage(anyhow!("one of --edges, --rgg-n is required"))),
        (Some(_), Some(_)) => {
            return Err(usage(anyhow!("--edges and --rgg-n are mutually exclusive")))
        }
    };

    let stats = GraphStats::compute(&graph);
    let gamma = args.gamma.unwrap_or(1.0);
    // No connected pair: every cross-unit covariance vanishes at any
    // positive bandwidth, so report the smallest one.
    let b = match stats.avg_path_length {
        Some(l) => bandwidth(l, stats.n, stats.avg_degree, gamma).map_err(stat)?,
        None => 1,
    };
    let report = GraphStatsReport {
        stats,
        bandwidth: b,
    };
    let text = serde_json::to_string_pretty(&report).map_err(stat)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, format!("{text}\n"))
                .with_context(|| format!("writing {}", path.display()))
                .map_err(usage)?;
            println!("stats written to {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}
