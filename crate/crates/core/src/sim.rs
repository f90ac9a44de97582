//! Ground-truth simulation, synthetic detections, metrics and Monte-Carlo drivers.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_bs, lmi_feasible, synthesize_certificate, CertificateFile, LyapunovCertificate};
use crate::covgraph::{expand_graph, quantize, sample_psd, sample_region, CovarianceGraph};
use crate::dynamics::{discretize, DiscretizedDynamics, Transition};
use crate::error::{PlateError, Result};
use crate::estimator::{covariance_step, switched_step, Measurement};
use crate::exact::dyn_prog_exact;
use crate::linalg::{Mat, Vector};
use crate::mhplate::{run_plate_loop, Decider, GraphPolicy, LoopConfig, MeasurementSource, PlateTrace, StaticMethod};
use crate::model::{method_by_id, validate_methods, ContinuousModel, PerceptionMethod};
use crate::qdp::{precompute_policy, qdp, Policy};
use crate::schedule::{evaluate_schedule, window_ticks, Schedule};

pub const DEFAULT_EULER_DT: f64 = 1e-3;

/// Model, methods and their discretization, validated together.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub methods: Vec<PerceptionMethod>,
    pub dynamics: DiscretizedDynamics,
}

impl Scenario {
    pub fn new(model: ContinuousModel, methods: Vec<PerceptionMethod>) -> Result<Self> {
        model.validate()?;
        validate_methods(&methods, model.nz())?;
        if methods.is_empty() {
            return Err(PlateError::InvalidModel("no perception methods".into()));
        }
        let dynamics = DiscretizedDynamics::for_methods(&model, &methods)?;
        Ok(Self { methods, dynamics })
    }

    pub fn model(&self) -> &ContinuousModel {
        self.dynamics.model()
    }

    pub fn tracking() -> Self {
        Self::new(crate::scenario::tracking_model(), crate::scenario::tracking_methods()).expect("built-in scenario")
    }
}

/// Number of Euler sub-steps per sampling period: the smallest count whose step is at most
/// `requested`, so that every sampling instant is a grid point.
pub fn euler_substeps(dt_s: f64, requested: f64) -> Result<usize> {
    if !(requested > 0.0 && requested.is_finite()) {
        return Err(PlateError::InvalidModel(format!("Euler step {requested} must be positive")));
    }
    Ok(((dt_s / requested) * (1.0 - 1e-12)).ceil().max(1.0) as usize)
}

/// Symmetric square root of a PSD matrix, negative round-off clamped to zero.
pub fn psd_sqrt(m: &Mat) -> Mat {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&d) * eig.eigenvectors.transpose()
}

fn normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Euler-Maruyama path on a grid of `substeps` points per sampling period.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthPath {
    pub dt: f64,
    pub substeps: usize,
    pub states: Vec<Vector>,
}

impl TruthPath {
    pub fn at_tick(&self, tick: u64) -> &Vector {
        &self.states[tick as usize * self.substeps]
    }

    pub fn ticks(&self) -> u64 {
        ((self.states.len() - 1) / self.substeps) as u64
    }
}

pub fn simulate_sde_with<R: Rng + ?Sized>(model: &ContinuousModel, horizon: f64, dt: f64, rng: &mut R) -> Result<TruthPath> {
    let ticks = crate::model::to_ticks(horizon, model.dt_s)?;
    let substeps = euler_substeps(model.dt_s, dt)?;
    let h = model.dt_s / substeps as f64;
    let noise = &model.b * psd_sqrt(&model.w) * h.sqrt();
    let mut x = &model.x0 + psd_sqrt(&model.p0) * normal_vector(model.nx(), rng);
    let n = ticks as usize * substeps;
    let mut states = Vec::with_capacity(n + 1);
    states.push(x.clone());
    for _ in 0..n {
        let xi = normal_vector(model.w.nrows(), rng);
        x = &x + &model.a * &x * h + &noise * xi;
        states.push(x.clone());
    }
    Ok(TruthPath { dt: h, substeps, states })
}

/// Seeded ground-truth path over `[0, horizon]`.
pub fn simulate_sde(model: &ContinuousModel, horizon: f64, dt: f64, seed: u64) -> Result<TruthPath> {
    simulate_sde_with(model, horizon, dt, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `z = C x + R^{1/2} ξ` using `true_r` when given.
pub fn synth_measurement<R: Rng + ?Sized>(
    x: &Vector,
    k: usize,
    tau: f64,
    method: &PerceptionMethod,
    model: &ContinuousModel,
    true_r: Option<&Mat>,
    rng: &mut R,
) -> Measurement {
    let r = true_r.unwrap_or(&method.r);
    let z = &model.c * x + psd_sqrt(r) * normal_vector(model.nz(), rng);
    Measurement { k, z, produced_at: tau + method.latency(model.dt_s), method_id: method.id, r_actual: None }
}

/// Detections of a simulated path. Noise is drawn per sampling instant up front, so two
/// controllers run on the same source see the same noise whenever they sample the same frame.
#[derive(Clone)]
pub struct SimSource<'a> {
    path: &'a TruthPath,
    c: Mat,
    factors: Vec<Mat>,
    noise: Vec<Vector>,
}

impl<'a> SimSource<'a> {
    pub fn new<R: Rng + ?Sized>(
        path: &'a TruthPath,
        model: &ContinuousModel,
        methods: &[PerceptionMethod],
        true_r: &[Option<Mat>],
        rng: &mut R,
    ) -> Self {
        let factors = methods
            .iter()
            .enumerate()
            .map(|(i, m)| psd_sqrt(true_r.get(i).and_then(Option::as_ref).unwrap_or(&m.r)))
            .collect();
        let noise = (0..=path.ticks()).map(|_| normal_vector(model.nz(), rng)).collect();
        Self { path, c: model.c.clone(), factors, noise }
    }
}

impl MeasurementSource for SimSource<'_> {
    fn measure(&mut self, tick: u64, method: &PerceptionMethod) -> Option<Vector> {
        if tick > self.path.ticks() {
            return None;
        }
        Some(&self.c * self.path.at_tick(tick) + &self.factors[method.id - 1] * &self.noise[tick as usize])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub truth: TruthPath,
    pub plate: PlateTrace,
}

impl SimTrace {
    /// Estimator rows joined with the true state and the squared estimation error.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let nx = self.truth.states.first().map_or(0, |x| x.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..nx).map(|i| format!("x{i}")));
        header.extend((0..nx).map(|i| format!("xhat{i}")));
        header.extend(["trace", "method", "measured", "sq_error"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for r in &self.plate.rows {
            let x = self.truth.at_tick(r.tick);
            let err: f64 = r.xhat.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            let mut cells = vec![r.t.to_string()];
            cells.extend(x.iter().map(|v| v.to_string()));
            cells.extend(r.xhat.iter().map(|v| v.to_string()));
            cells.extend([r.trace.to_string(), r.method.to_string(), (r.measured as u8).to_string(), err.to_string()]);
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cost: f64,
    pub attention: usize,
    pub cpu_load: f64,
    pub mse: f64,
}

/// Open-loop transitions at every Euler offset inside the longest stage.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub substeps: usize,
    transitions: Vec<Transition>,
}

impl Quadrature {
    pub fn new(dynamics: &DiscretizedDynamics, dt: f64) -> Result<Self> {
        let substeps = euler_substeps(dynamics.dt_s(), dt)?;
        let h = dynamics.dt_s() / substeps as f64;
        let n = dynamics.max_steps() as usize * substeps;
        let transitions = (0..=n).map(|i| discretize(dynamics.model(), i as f64 * h)).collect::<Result<_>>()?;
        Ok(Self { substeps, transitions })
    }

    fn trace_at(&self, p: &Mat, offset: usize) -> f64 {
        let t = &self.transitions[offset];
        (&t.ad * p * t.ad.transpose() + &t.wd).trace()
    }
}

/// Cost, attention, CPU load and MSE of a traced run over `[0, T_f]`.
pub fn metrics(
    trace: &SimTrace,
    lambda: f64,
    tf: f64,
    methods: &[PerceptionMethod],
    dynamics: &DiscretizedDynamics,
    quad: &Quadrature,
) -> Result<Metrics> {
    let window = window_ticks(tf, dynamics.dt_s())?;
    let plate = &trace.plate;
    if !plate.complete || plate.horizon_ticks < window {
        return Err(PlateError::IncompleteTrace(format!("trace covers {} ticks, window is {window}", plate.horizon_ticks)));
    }
    let tf = window as f64 * dynamics.dt_s();
    let h = dynamics.dt_s() / quad.substeps as f64;
    let (mut integral, mut penalty, mut busy) = (0.0, 0.0, 0.0);
    let mut attention = 0;
    for e in plate.epochs.iter().filter(|e| e.tick < window) {
        let m = method_by_id(methods, e.method)?;
        let end = (e.tick + m.steps as u64).min(window);
        let n = (end - e.tick) as usize * quad.substeps;
        let mut seg = 0.5 * (quad.trace_at(&e.belief.phat, 0) + quad.trace_at(&e.belief.phat, n));
        for i in 1..n {
            seg += quad.trace_at(&e.belief.phat, i);
        }
        integral += seg * h;
        penalty += m.penalty;
        busy += m.cpu * (end - e.tick) as f64 * dynamics.dt_s();
        if e.tick + m.steps as u64 <= window {
            attention += 1;
        }
    }
    let rows: Vec<_> = plate.rows.iter().filter(|r| r.tick <= window).collect();
    let mse = rows
        .iter()
        .map(|r| {
            let x = trace.truth.at_tick(r.tick);
            r.xhat.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .sum::<f64>()
        / rows.len() as f64;
    Ok(Metrics { cost: (integral + lambda * penalty) / tf, attention, cpu_load: busy / tf, mse })
}

/// Simulates a path and runs the controller on it.
#[allow(clippy::too_many_arguments)]
pub fn simulate_run<R: Rng + ?Sized>(
    scenario: &Scenario,
    decider: &dyn Decider,
    horizon: f64,
    dt: f64,
    config: &LoopConfig,
    true_r: &[Option<Mat>],
    rng: &mut R,
) -> Result<SimTrace> {
    let truth = simulate_sde_with(scenario.model(), horizon, dt, rng)?;
    let mut source = SimSource::new(&truth, scenario.model(), &scenario.methods, true_r, rng);
    let plate = run_plate_loop(&scenario.dynamics, &scenario.methods, decider, horizon, &mut source, config)?;
    Ok(SimTrace { truth, plate })
}

/// Independent stream for one Monte-Carlo run.
pub fn run_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

/// Uniformly random method sequence of `len` epochs.
pub fn random_schedule<R: Rng + ?Sized>(methods: &[PerceptionMethod], len: usize, rng: &mut R) -> Schedule {
    Schedule::new((0..len).map(|_| methods[rng.random_range(0..methods.len())].id).collect())
}

/// Random sequence that stops as soon as `window` ticks are covered.
pub fn random_cover<R: Rng + ?Sized>(methods: &[PerceptionMethod], window: u64, rng: &mut R) -> Schedule {
    let mut ids = Vec::new();
    let mut t = 0;
    while t < window {
        let m = &methods[rng.random_range(0..methods.len())];
        ids.push(m.id);
        t += m.steps as u64;
    }
    Schedule::new(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSpec {
    pub b0: f64,
    pub samples: usize,
    pub seed: u64,
    pub admit_tol: Option<f64>,
}

impl Default for GraphSpec {
    fn default() -> Self {
        Self { b0: 5.0, samples: 500, seed: 0, admit_tol: None }
    }
}

impl GraphSpec {
    pub fn build(&self, scenario: &Scenario) -> Result<CovarianceGraph> {
        let reps = sample_region(scenario.model().nx(), self.b0, self.samples, self.seed);
        expand_graph(reps, self.b0, &scenario.methods, &scenario.dynamics, self.admit_tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundValidation {
    pub gamma: f64,
    pub b0: f64,
    pub steps: usize,
    pub schedules_per_run: usize,
    pub certificate: Option<CertificateFile>,
}

impl Default for BoundValidation {
    fn default() -> Self {
        Self { gamma: 0.98, b0: 1.0, steps: 100, schedules_per_run: 100, certificate: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Oracle {
    /// Exhaustive search over all covering schedules.
    Exhaustive,
    /// Best of this many random covering schedules.
    Random(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostHistogram {
    pub tf: f64,
    pub lambda: f64,
    pub b0: f64,
    pub graph_sizes: Vec<usize>,
    pub graph_seed: u64,
    pub oracle: Oracle,
}

impl Default for CostHistogram {
    fn default() -> Self {
        Self { tf: 1.0, lambda: 5.0, b0: 1.0, graph_sizes: vec![50, 500, 5000], graph_seed: 0, oracle: Oracle::Exhaustive }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MovingHorizon {
    pub tf: f64,
    pub lambda: f64,
    pub graph: GraphSpec,
    pub horizon: f64,
    pub dt: f64,
    pub occlusions: Vec<(f64, f64)>,
}

impl Default for MovingHorizon {
    fn default() -> Self {
        Self {
            tf: 10.0,
            lambda: 5.0,
            graph: GraphSpec { samples: 5000, ..GraphSpec::default() },
            horizon: 10.0,
            dt: DEFAULT_EULER_DT,
            occlusions: vec![(4.0, 6.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveR {
    pub horizon: f64,
    pub dt: f64,
    /// Method used throughout.
    pub method: usize,
    /// Multiplies every nominal `R` to obtain the noise that is actually applied.
    pub r_scale: f64,
    pub window_len: usize,
}

impl Default for AdaptiveR {
    fn default() -> Self {
        Self { horizon: 10.0, dt: DEFAULT_EULER_DT, method: 1, r_scale: 4.0, window_len: crate::mhplate::DEFAULT_WINDOW_LEN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    BoundValidation(BoundValidation),
    CostHistogram(CostHistogram),
    MovingHorizon(MovingHorizon),
    AdaptiveR(AdaptiveR),
}

/// CSV table with one header.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric values of a column, skipping empty cells.
    pub fn values(&self, name: &str) -> Vec<f64> {
        let Some(i) = self.column(name) else { return Vec::new() };
        self.rows.iter().filter_map(|r| r[i].parse().ok()).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.header.join(","))?;
        for r in &self.rows {
            writeln!(w, "{}", r.join(","))?;
        }
        Ok(())
    }
}

fn cell(v: f64) -> String {
    v.to_string()
}

/// Runs `runs` independent repetitions in parallel; rows are ordered by run index.
pub fn monte_carlo(scenario: &Scenario, experiment: &Experiment, runs: usize, seed: u64) -> Result<Table> {
    match experiment {
        Experiment::BoundValidation(e) => bound_validation(scenario, e, runs, seed),
        Experiment::CostHistogram(e) => cost_histogram(scenario, e, runs, seed),
        Experiment::MovingHorizon(e) => moving_horizon(scenario, e, runs, seed),
        Experiment::AdaptiveR(e) => adaptive_r_experiment(scenario, e, runs, seed),
    }
}

fn collect_rows<F>(runs: usize, width: usize, f: F) -> Vec<Vec<String>>
where
    F: Fn(usize) -> Result<Vec<Vec<String>>> + Sync,
{
    let per_run: Vec<Vec<Vec<String>>> = (0..runs)
        .into_par_iter()
        .map(|run| {
            f(run).unwrap_or_else(|err| {
                let mut row = vec![String::new(); width];
                row[0] = run.to_string();
                row[width - 1] = err.to_string().replace(',', ";");
                vec![row]
            })
        })
        .collect();
    per_run.into_iter().flatten().collect()
}

/// Certificate from the experiment or synthesized; `None` when neither is available.
pub fn certificate_for(scenario: &Scenario, spec: &BoundValidation) -> Result<Option<LyapunovCertificate>> {
    match &spec.certificate {
        Some(f) => LyapunovCertificate::try_from(f).map(Some),
        None => synthesize_certificate(&scenario.methods, &scenario.dynamics, spec.gamma),
    }
}

fn bound_validation(scenario: &Scenario, spec: &BoundValidation, runs: usize, seed: u64) -> Result<Table> {
    let cert = certificate_for(scenario, spec)?
        .ok_or_else(|| PlateError::MalformedCertificate("no certificate supplied and synthesis failed".into()))?;
    let check = lmi_feasible(&cert, &scenario.methods, &scenario.dynamics)?;
    let report = bound_bs(&cert, spec.b0, &scenario.methods, &scenario.dynamics)?;
    let gains = cert.gains()?;
    let mut table = Table::new(&["run", "schedule", "max_norm", "max_switched_norm", "bs", "violations", "trace_dominated", "margin", "error"]);
    let c = &scenario.model().c;
    table.rows = collect_rows(runs, table.header.len(), |run| {
        let mut rng = run_rng(seed, run as u64);
        let p0 = sample_psd(scenario.model().nx(), spec.b0, &mut rng);
        let mut rows = Vec::new();
        for s in 0..spec.schedules_per_run {
            let sched = random_schedule(&scenario.methods, spec.steps, &mut rng);
            let (mut p, mut ps) = (p0.clone(), p0.clone());
            let (mut max_p, mut max_s) = (p.norm(), ps.norm());
            let mut violations = usize::from(max_p > report.bs);
            let mut dominated = true;
            for &id in &sched.methods {
                let m = method_by_id(&scenario.methods, id)?;
                p = covariance_step(&p, &scenario.dynamics.step(m.steps).transition, c, &m.r)?;
                ps = switched_step(&ps, id, &gains, &scenario.methods, &scenario.dynamics)?;
                max_p = max_p.max(p.norm());
                max_s = max_s.max(ps.norm());
                violations += usize::from(p.norm() > report.bs);
                dominated &= p.trace() <= ps.trace() * (1.0 + 1e-12);
            }
            rows.push(vec![
                run.to_string(),
                s.to_string(),
                cell(max_p),
                cell(max_s),
                cell(report.bs),
                violations.to_string(),
                dominated.to_string(),
                cell(check.margin),
                String::new(),
            ]);
        }
        Ok(rows)
    });
    Ok(table)
}

fn cost_histogram(scenario: &Scenario, spec: &CostHistogram, runs: usize, seed: u64) -> Result<Table> {
    let graphs = spec
        .graph_sizes
        .iter()
        .map(|&n| {
            let reps = sample_region(scenario.model().nx(), spec.b0, n, spec.graph_seed);
            expand_graph(reps, spec.b0, &scenario.methods, &scenario.dynamics, None)
        })
        .collect::<Result<Vec<_>>>()?;
    let window = window_ticks(spec.tf, scenario.dynamics.dt_s())?;
    let statics = scenario
        .methods
        .iter()
        .map(|m| Schedule::repeated(m.id, &scenario.methods, window))
        .collect::<Result<Vec<_>>>()?;
    let mut header = vec!["run", "samples", "nodes", "delta", "j_min", "j_qdp", "diff", "cpu_qdp"];
    let static_names: Vec<String> = scenario.methods.iter().map(|m| format!("j_static{}", m.id)).collect();
    header.extend(static_names.iter().map(String::as_str));
    header.push("error");
    let mut table = Table::new(&header);
    let (methods, dyns) = (&scenario.methods, &scenario.dynamics);
    table.rows = collect_rows(runs, table.header.len(), |run| {
        let mut rng = run_rng(seed, run as u64);
        let p0 = sample_psd(scenario.model().nx(), spec.b0, &mut rng);
        let eval = |s: &Schedule| evaluate_schedule(&p0, s, spec.tf, spec.lambda, methods, dyns).map(|c| c.total);
        let static_costs = statics.iter().map(eval).collect::<Result<Vec<_>>>()?;
        let mut j_min = match spec.oracle {
            Oracle::Exhaustive => dyn_prog_exact(&p0, spec.tf, spec.lambda, methods, dyns)?.cost,
            Oracle::Random(n) => (0..n)
                .map(|_| eval(&random_cover(methods, window, &mut rng)))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(f64::INFINITY, f64::min),
        };
        let mut qdp_costs = Vec::new();
        for g in &graphs {
            let sol = qdp(quantize(&p0, g)?, spec.tf, spec.lambda, g, methods, dyns)?;
            let j = eval(&sol.schedule)?;
            qdp_costs.push((j, sol.schedule.cpu_load(methods, window)?));
        }
        // a sampled oracle is only an upper bound on the optimum
        for &j in static_costs.iter().chain(qdp_costs.iter().map(|(j, _)| j)) {
            j_min = j_min.min(j);
        }
        Ok(graphs
            .iter()
            .zip(&spec.graph_sizes)
            .zip(&qdp_costs)
            .map(|((g, &n), &(j, cpu))| {
                let mut row = vec![
                    run.to_string(),
                    n.to_string(),
                    g.len().to_string(),
                    cell(g.delta),
                    cell(j_min),
                    cell(j),
                    cell((j_min - j).abs()),
                    cell(cpu),
                ];
                row.extend(static_costs.iter().map(|&c| cell(c)));
                row.push(String::new());
                row
            })
            .collect())
    });
    Ok(table)
}

/// Graph and policy for the moving-horizon controller.
pub fn plan(scenario: &Scenario, graph: &GraphSpec, tf: f64, lambda: f64) -> Result<(CovarianceGraph, Policy)> {
    let g = graph.build(scenario)?;
    let policy = precompute_policy(&g, tf, lambda, &scenario.methods, &scenario.dynamics)?;
    Ok((g, policy))
}

fn moving_horizon(scenario: &Scenario, spec: &MovingHorizon, runs: usize, seed: u64) -> Result<Table> {
    let (graph, policy) = plan(scenario, &spec.graph, spec.tf, spec.lambda)?;
    let quad = Quadrature::new(&scenario.dynamics, spec.dt)?;
    let config = LoopConfig { occlusions: spec.occlusions.clone(), ..LoopConfig::default() };
    let gp = GraphPolicy { graph: &graph, policy: &policy };
    let statics: Vec<(String, StaticMethod)> = scenario.methods.iter().map(|m| (format!("static{}", m.id), StaticMethod(m.id))).collect();
    let mut table = Table::new(&["run", "mode", "cost", "mean_trace", "cpu_load", "attention", "mse", "error"]);
    table.rows = collect_rows(runs, table.header.len(), |run| {
        let mut rng = run_rng(seed, run as u64);
        let truth = simulate_sde_with(scenario.model(), spec.horizon, spec.dt, &mut rng)?;
        let source = SimSource::new(&truth, scenario.model(), &scenario.methods, &[], &mut rng);
        let mut modes: Vec<(&str, &dyn Decider)> = vec![("plate", &gp)];
        modes.extend(statics.iter().map(|(n, d)| (n.as_str(), d as &dyn Decider)));
        let mut rows = Vec::new();
        for (name, decider) in modes {
            let mut src = source.clone();
            let plate = run_plate_loop(&scenario.dynamics, &scenario.methods, decider, spec.horizon, &mut src, &config)?;
            let mean_trace = plate.mean_trace();
            let trace = SimTrace { truth: truth.clone(), plate };
            let m = metrics(&trace, spec.lambda, spec.horizon, &scenario.methods, &scenario.dynamics, &quad)?;
            rows.push(vec![
                run.to_string(),
                name.to_string(),
                cell(m.cost),
                cell(mean_trace),
                cell(m.cpu_load),
                m.attention.to_string(),
                cell(m.mse),
                String::new(),
            ]);
        }
        Ok(rows)
    });
    Ok(table)
}

fn adaptive_r_experiment(scenario: &Scenario, spec: &AdaptiveR, runs: usize, seed: u64) -> Result<Table> {
    method_by_id(&scenario.methods, spec.method)?;
    let true_r: Vec<Option<Mat>> = scenario.methods.iter().map(|m| Some(&m.r * spec.r_scale)).collect();
    let decider = StaticMethod(spec.method);
    let mut table = Table::new(&["run", "mse_nominal", "mse_adaptive", "error"]);
    table.rows = collect_rows(runs, table.header.len(), |run| {
        let mut rng = run_rng(seed, run as u64);
        let truth = simulate_sde_with(scenario.model(), spec.horizon, spec.dt, &mut rng)?;
        let source = SimSource::new(&truth, scenario.model(), &scenario.methods, &true_r, &mut rng);
        let mut mse = Vec::new();
        for adaptive in [false, true] {
            let config = LoopConfig { adaptive_r: adaptive, window_len: spec.window_len, occlusions: Vec::new() };
            let mut src = source.clone();
            let plate = run_plate_loop(&scenario.dynamics, &scenario.methods, &decider, spec.horizon, &mut src, &config)?;
            let n = plate.rows.len() as f64;
            mse.push(
                plate
                    .rows
                    .iter()
                    .map(|r| {
                        let x = truth.at_tick(r.tick);
                        r.xhat.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                    })
                    .sum::<f64>()
                    / n,
            );
        }
        Ok(vec![vec![run.to_string(), cell(mse[0]), cell(mse[1]), String::new()]])
    });
    Ok(table)
}
