//! Command-line front end. Exit status: 0 on success, 1 for invalid input, 2 when a run fails.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bounds::{bound_bs, lmi_feasible, CertificateFile};
use crate::config::{Overrides, ScenarioConfig};
use crate::covgraph::{load_graph, quantize, save_graph, CovarianceGraph};
use crate::error::{PlateError, Result};
use crate::exact::dyn_prog_exact;
use crate::mhplate::{Decider, GraphPolicy, StaticMethod};
use crate::qdp::{precompute_policy, qdp, Policy};
use crate::schedule::{evaluate_schedule, window_ticks, CostBreakdown, Schedule};
use crate::sim::{certificate_for, metrics, monte_carlo, run_rng, simulate_run, Quadrature, Scenario};

#[derive(Debug, Parser)]
#[command(name = "plate", version, about = "Latency-aware perception scheduling and estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file (JSON).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Where to write the result.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Override the cost window `cost.tf` (seconds).
    #[arg(long = "tf")]
    pub tf: Option<f64>,
    /// Override `sim.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override `sim.runs`.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample and expand the covariance graph, precompute the policy and save both.
    BuildGraph(Common),
    /// Exhaustive optimal schedule from the model's `p0`.
    ScheduleExact(Common),
    /// Quantized dynamic-programming schedule from the model's `p0`.
    ScheduleQdp {
        #[command(flatten)]
        common: Common,
        /// Saved graph to use instead of building one from the config.
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Check (or synthesize) a Lyapunov certificate and report the covariance bound.
    BoundCheck(Common),
    /// Simulate one run and write its trace as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Saved graph and policy to use instead of building them from the config.
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Use this method throughout instead of the moving-horizon policy.
        #[arg(long = "static")]
        static_method: Option<usize>,
    },
    /// Run the configured Monte-Carlo experiment and write the aggregate CSV.
    McEval(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::BuildGraph(c) | Command::ScheduleExact(c) | Command::BoundCheck(c) | Command::McEval(c) => c,
            Command::ScheduleQdp { common, .. } | Command::Simulate { common, .. } => common,
        }
    }
}

fn load(common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(&common.config).map_err(|e| match e {
        PlateError::Io(io) => PlateError::Config { path: common.config.display().to_string(), message: io.to_string() },
        other => other,
    })?;
    Overrides { tf: common.tf, seed: common.seed, runs: common.runs }.apply(&mut cfg);
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ScheduleReport {
    methods: Vec<usize>,
    /// Epoch start times in seconds, followed by the end of the last epoch.
    epochs: Vec<f64>,
    cost: CostBreakdown,
    attention: usize,
    cpu_load: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    calls: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    graph: Option<QdpDetails>,
}

#[derive(Debug, Serialize)]
struct QdpDetails {
    start_node: usize,
    nodes: usize,
    delta: f64,
    graph_cost: f64,
    relaxations: u64,
}

fn schedule_report(cfg: &ScenarioConfig, sc: &Scenario, schedule: Schedule) -> Result<ScheduleReport> {
    let window = window_ticks(cfg.cost.tf, sc.dynamics.dt_s())?;
    let cost = evaluate_schedule(&sc.model().p0, &schedule, cfg.cost.tf, cfg.cost.lambda, &sc.methods, &sc.dynamics)?;
    let dt = sc.dynamics.dt_s();
    Ok(ScheduleReport {
        epochs: schedule.epochs(&sc.methods)?.iter().map(|&t| t as f64 * dt).collect(),
        attention: schedule.attention(&sc.methods, window)?,
        cpu_load: schedule.cpu_load(&sc.methods, window)?,
        methods: schedule.methods,
        cost,
        calls: None,
        graph: None,
    })
}

fn graph_and_policy(cfg: &ScenarioConfig, sc: &Scenario, path: Option<&Path>) -> Result<(CovarianceGraph, Option<Policy>)> {
    match path {
        Some(p) => {
            let (g, policy) = load_graph(p)?;
            if g.nx() != sc.model().nx() || !g.is_closed(sc.methods.len()) {
                return Err(PlateError::Dimension("saved graph does not match the scenario".into()));
            }
            Ok((g, policy))
        }
        None => Ok((cfg.graph.build(sc)?, None)),
    }
}

#[derive(Debug, Serialize)]
struct BoundOutput {
    gamma: f64,
    b0: f64,
    feasible: bool,
    margin: Option<f64>,
    bs: Option<f64>,
    gbar: Option<f64>,
    condition: Option<f64>,
    certificate: Option<CertificateFile>,
}

fn bound_check(cfg: &ScenarioConfig, sc: &Scenario) -> Result<BoundOutput> {
    let mut out = BoundOutput {
        gamma: cfg.bounds.gamma,
        b0: cfg.bounds.b0,
        feasible: false,
        margin: None,
        bs: None,
        gbar: None,
        condition: None,
        certificate: None,
    };
    let Some(cert) = certificate_for(sc, &cfg.bounds)? else {
        log::warn!("no certificate found at gamma = {}", cfg.bounds.gamma);
        return Ok(out);
    };
    let check = lmi_feasible(&cert, &sc.methods, &sc.dynamics)?;
    out.gamma = cert.gamma;
    out.feasible = check.feasible;
    out.margin = Some(check.margin);
    out.certificate = Some(CertificateFile::from(&cert));
    if check.feasible {
        let rep = bound_bs(&cert, cfg.bounds.b0, &sc.methods, &sc.dynamics)?;
        out.bs = Some(rep.bs);
        out.gbar = Some(rep.gbar);
        out.condition = Some(rep.condition);
    }
    Ok(out)
}

pub fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common();
    let cfg = load(common)?;
    let sc = cfg.scenario()?;
    let (tf, lambda) = (cfg.cost.tf, cfg.cost.lambda);
    match &cli.command {
        Command::BuildGraph(c) => {
            let graph = cfg.graph.build(&sc)?;
            let policy = precompute_policy(&graph, tf, lambda, &sc.methods, &sc.dynamics)?;
            log::info!("graph: {} nodes, delta {:.4}", graph.len(), graph.delta);
            save_graph(&c.output, &graph, Some(&policy))?;
        }
        Command::ScheduleExact(c) => {
            let sol = dyn_prog_exact(&sc.model().p0, tf, lambda, &sc.methods, &sc.dynamics)?;
            let mut rep = schedule_report(&cfg, &sc, sol.schedule)?;
            rep.calls = Some(sol.calls);
            write_json(&c.output, &rep)?;
        }
        Command::ScheduleQdp { common: c, graph } => {
            let (g, _) = graph_and_policy(&cfg, &sc, graph.as_deref())?;
            let q0 = quantize(&sc.model().p0, &g)?;
            let sol = qdp(q0, tf, lambda, &g, &sc.methods, &sc.dynamics)?;
            let details = QdpDetails { start_node: q0, nodes: g.len(), delta: g.delta, graph_cost: sol.cost, relaxations: sol.relaxations };
            let mut rep = schedule_report(&cfg, &sc, sol.schedule)?;
            rep.graph = Some(details);
            write_json(&c.output, &rep)?;
        }
        Command::BoundCheck(c) => write_json(&c.output, &bound_check(&cfg, &sc)?)?,
        Command::Simulate { common: c, graph, static_method } => {
            let mut rng = run_rng(cfg.sim.seed, 0);
            let true_r = cfg.true_r(&sc)?;
            let loop_cfg = cfg.sim.loop_config();
            let trace = match static_method {
                Some(id) => {
                    crate::model::method_by_id(&sc.methods, *id)?;
                    simulate_run(&sc, &StaticMethod(*id), cfg.sim.horizon, cfg.sim.dt, &loop_cfg, &true_r, &mut rng)?
                }
                None => {
                    let (g, policy) = graph_and_policy(&cfg, &sc, graph.as_deref())?;
                    let policy = match policy {
                        Some(p) if p.tf == tf && p.lambda == lambda => p,
                        _ => precompute_policy(&g, tf, lambda, &sc.methods, &sc.dynamics)?,
                    };
                    let decider: &dyn Decider = &GraphPolicy { graph: &g, policy: &policy };
                    simulate_run(&sc, decider, cfg.sim.horizon, cfg.sim.dt, &loop_cfg, &true_r, &mut rng)?
                }
            };
            let mut w = create(&c.output)?;
            trace.write_csv(&mut w)?;
            w.flush()?;
            let quad = Quadrature::new(&sc.dynamics, cfg.sim.dt)?;
            let m = metrics(&trace, lambda, cfg.sim.horizon, &sc.methods, &sc.dynamics, &quad)?;
            eprintln!("{}", serde_json::to_string(&m)?);
        }
        Command::McEval(c) => {
            let exp = cfg
                .experiment
                .as_ref()
                .ok_or_else(|| PlateError::Config { path: "experiment".into(), message: "mc-eval needs an experiment block".into() })?;
            let table = monte_carlo(&sc, exp, cfg.sim.runs, cfg.sim.seed)?;
            let mut w = create(&c.output)?;
            table.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let jobs = cli.command.common().jobs;
    let result = match jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli)),
            Err(e) => Err(PlateError::Config { path: "--jobs".into(), message: e.to_string() }),
        },
        None => run(cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
