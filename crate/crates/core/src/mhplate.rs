//! Online moving-horizon controller: at every epoch boundary, fuse the measurement that just
//! became available (or predict through an occlusion), then look up the next method from
//! the policy at the quantized covariance.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::covgraph::{quantize, CovarianceGraph};
use crate::dynamics::DiscretizedDynamics;
use crate::error::{PlateError, Result};
use crate::estimator::{correct, predict, BeliefState, Measurement};
use crate::linalg::{floor_eigenvalues, symmetrize, Mat, Vector};
use crate::model::{method_by_id, ContinuousModel, PerceptionMethod};
use crate::qdp::Policy;

pub const DEFAULT_WINDOW_LEN: usize = 10;

/// Per-method ring buffers of recent innovations `e = C x̂ − z`.
#[derive(Debug, Clone)]
pub struct InnovationWindow {
    capacity: usize,
    buffers: Vec<VecDeque<(usize, Vector)>>,
}

impl InnovationWindow {
    pub fn new(method_count: usize, capacity: usize) -> Self {
        Self { capacity: capacity.max(1), buffers: vec![VecDeque::new(); method_count] }
    }

    pub fn push(&mut self, method_id: usize, k: usize, e: Vector) {
        let buf = &mut self.buffers[method_id - 1];
        if buf.len() == self.capacity {
            buf.pop_front();
        }
        buf.push_back((k, e));
    }

    /// `(epoch, innovation)` pairs for one method, oldest first.
    pub fn entries(&self, method_id: usize) -> &VecDeque<(usize, Vector)> {
        &self.buffers[method_id - 1]
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Innovation-based estimate `(1/n) Σ e eᵀ − C P̂⁻ Cᵀ`, floored to stay positive definite.
/// Falls back to the nominal `R` when no innovation has been seen for the method.
pub fn adaptive_r(window: &InnovationWindow, method: &PerceptionMethod, belief_pre: &BeliefState, model: &ContinuousModel) -> Mat {
    let entries = window.entries(method.id);
    if entries.is_empty() {
        return method.r.clone();
    }
    let nz = model.nz();
    let mut s = Mat::zeros(nz, nz);
    for (_, e) in entries {
        s += e * e.transpose();
    }
    s /= entries.len() as f64;
    s -= &model.c * &belief_pre.phat * model.c.transpose();
    symmetrize(&mut s);
    let floor = 1e-6 * method.r.trace() / nz as f64;
    floor_eigenvalues(s, floor)
}

/// Chooses the method for the next epoch from the current covariance.
pub trait Decider {
    fn decide(&self, phat: &Mat) -> Result<usize>;
}

/// Policy lookup at the nearest graph node.
pub struct GraphPolicy<'a> {
    pub graph: &'a CovarianceGraph,
    pub policy: &'a Policy,
}

impl Decider for GraphPolicy<'_> {
    fn decide(&self, phat: &Mat) -> Result<usize> {
        let q = quantize(phat, self.graph)?;
        self.policy.actions.get(q).copied().ok_or(PlateError::UnknownNode(q))
    }
}

/// Always the same method.
pub struct StaticMethod(pub usize);

impl Decider for StaticMethod {
    fn decide(&self, _: &Mat) -> Result<usize> {
        Ok(self.0)
    }
}

/// Produces raw detections.
pub trait MeasurementSource {
    /// Detection of the state sampled at `tick` with `method`; `None` once exhausted.
    fn measure(&mut self, tick: u64, method: &PerceptionMethod) -> Option<Vector>;
}

/// Replays a fixed list of detections in order.
pub struct ReplaySource {
    pub items: VecDeque<Vector>,
}

impl MeasurementSource for ReplaySource {
    fn measure(&mut self, _: u64, _: &PerceptionMethod) -> Option<Vector> {
        self.items.pop_front()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    #[serde(default)]
    pub adaptive_r: bool,
    #[serde(default = "default_window_len")]
    pub window_len: usize,
    /// Closed intervals `[t₁, t₂]` in seconds during which nothing is detected.
    #[serde(default)]
    pub occlusions: Vec<(f64, f64)>,
}

fn default_window_len() -> usize {
    DEFAULT_WINDOW_LEN
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self { adaptive_r: false, window_len: DEFAULT_WINDOW_LEN, occlusions: Vec::new() }
    }
}

impl LoopConfig {
    /// Whether a detection computed over `[start, end]` falls in an occlusion.
    pub fn occluded(&self, start: f64, end: f64) -> bool {
        self.occlusions.iter().any(|&(a, b)| start <= b && end >= a)
    }
}

/// Advances the belief from epoch `k` (where `method` was started) to epoch `k + 1` and
/// picks the method for the new epoch.
#[allow(clippy::too_many_arguments)]
pub fn mh_step(
    belief: &BeliefState,
    k: usize,
    method: &PerceptionMethod,
    incoming: Option<&Vector>,
    decider: &dyn Decider,
    window: &mut InnovationWindow,
    config: &LoopConfig,
    methods: &[PerceptionMethod],
    dynamics: &DiscretizedDynamics,
) -> Result<(BeliefState, usize)> {
    let next = match incoming {
        Some(z) => {
            let model = dynamics.model();
            let r_actual = if config.adaptive_r {
                window.push(method.id, k, &model.c * &belief.xhat - z);
                Some(adaptive_r(window, method, belief, model))
            } else {
                None
            };
            let meas = Measurement {
                k,
                z: z.clone(),
                produced_at: belief.t + method.latency(dynamics.dt_s()),
                method_id: method.id,
                r_actual,
            };
            correct(belief, &meas, method, dynamics)?
        }
        None => predict(belief, method.latency(dynamics.dt_s()), &dynamics.step(method.steps).transition),
    };
    let id = decider.decide(&next.phat)?;
    method_by_id(methods, id)?;
    Ok((next, id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub tick: u64,
    pub t: f64,
    pub xhat: Vec<f64>,
    pub trace: f64,
    /// Method in progress at this instant.
    pub method: usize,
    /// A detection was fused at this instant.
    pub measured: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub tick: u64,
    pub method: usize,
    /// The detection started here was delivered (not occluded).
    pub delivered: bool,
    /// Belief at the start of the epoch, before its own detection is fused.
    pub belief: BeliefState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateTrace {
    pub horizon_ticks: u64,
    /// One row per sampling instant in `[0, horizon]`.
    pub rows: Vec<TraceRow>,
    pub epochs: Vec<Epoch>,
    /// False when the measurement source ran dry before the horizon.
    pub complete: bool,
}

impl PlateTrace {
    /// Time average of `tr P̂` over the sampling grid (trapezoid).
    pub fn mean_trace(&self) -> f64 {
        let n = self.rows.len();
        if n < 2 {
            return self.rows.first().map_or(0.0, |r| r.trace);
        }
        let inner: f64 = self.rows[1..n - 1].iter().map(|r| r.trace).sum();
        (inner + 0.5 * (self.rows[0].trace + self.rows[n - 1].trace)) / (n - 1) as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let nx = self.rows.first().map_or(0, |r| r.xhat.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..nx).map(|i| format!("xhat{i}")));
        header.extend(["trace".into(), "method".into(), "measured".into()]);
        writeln!(w, "{}", header.join(","))?;
        for r in &self.rows {
            let xs: Vec<String> = r.xhat.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{},{},{},{}", r.t, xs.join(","), r.trace, r.method, r.measured as u8)?;
        }
        Ok(())
    }
}

/// Runs the event loop over `[0, horizon]` in simulated time.
pub fn run_plate_loop(
    dynamics: &DiscretizedDynamics,
    methods: &[PerceptionMethod],
    decider: &dyn Decider,
    horizon: f64,
    source: &mut dyn MeasurementSource,
    config: &LoopConfig,
) -> Result<PlateTrace> {
    let model = dynamics.model();
    let dt = dynamics.dt_s();
    let horizon_ticks = crate::model::to_ticks(horizon, dt)?;
    let mut window = InnovationWindow::new(methods.len(), config.window_len);
    let mut belief = BeliefState::new(0.0, model.x0.clone(), model.p0.clone());
    let mut id = decider.decide(&belief.phat)?;
    let mut tick = 0u64;
    let mut k = 0usize;
    let mut rows = Vec::with_capacity(horizon_ticks as usize + 1);
    let mut epochs = Vec::new();
    let row = |tick: u64, b: &BeliefState, method: usize, measured: bool| TraceRow {
        tick,
        t: tick as f64 * dt,
        xhat: b.xhat.iter().copied().collect(),
        trace: b.phat.trace(),
        method,
        measured,
    };
    rows.push(row(0, &belief, id, false));
    let mut complete = true;
    while tick < horizon_ticks {
        let method = method_by_id(methods, id)?;
        let end = tick + method.steps as u64;
        let Some(z) = source.measure(tick, method) else {
            complete = false;
            break;
        };
        let delivered = !config.occluded(tick as f64 * dt, end as f64 * dt);
        epochs.push(Epoch { tick, method: id, delivered, belief: belief.clone() });
        for j in 1..method.steps as u64 {
            if tick + j > horizon_ticks {
                break;
            }
            let b = predict(&belief, j as f64 * dt, &dynamics.step(j as u32).transition);
            rows.push(row(tick + j, &b, id, false));
        }
        let (mut next, next_id) = mh_step(&belief, k, method, delivered.then_some(&z), decider, &mut window, config, methods, dynamics)?;
        next.t = end as f64 * dt;
        if end <= horizon_ticks {
            rows.push(row(end, &next, next_id, delivered));
        }
        belief = next;
        id = next_id;
        tick = end;
        k += 1;
    }
    Ok(PlateTrace { horizon_ticks, rows, epochs, complete })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::covariance_step;
    use crate::scenario;

    fn setup() -> (Vec<PerceptionMethod>, DiscretizedDynamics) {
        let model = scenario::tracking_model();
        let methods = scenario::tracking_methods();
        let dyns = DiscretizedDynamics::for_methods(&model, &methods).unwrap();
        (methods, dyns)
    }

    struct Zeros;
    impl MeasurementSource for Zeros {
        fn measure(&mut self, _: u64, _: &PerceptionMethod) -> Option<Vector> {
            Some(Vector::zeros(2))
        }
    }

    #[test]
    fn adaptive_r_degenerate_cases() {
        let model = scenario::pixel_model(0.0);
        let method = PerceptionMethod::new(1, 1, Mat::identity(2, 2) * 2.0, 1.0, 0.0);
        let belief = BeliefState::new(0.0, Vector::zeros(2), Mat::zeros(2, 2));
        let mut w = InnovationWindow::new(1, 10);
        assert_eq!(adaptive_r(&w, &method, &belief, &model), method.r);
        w.push(1, 0, Vector::zeros(2));
        let r = adaptive_r(&w, &method, &belief, &model);
        assert!((r - Mat::identity(2, 2) * 2e-6).norm() < 1e-18);
        let mut w = InnovationWindow::new(1, 10);
        let e = Vector::from_vec(vec![1.0, 2.0]);
        w.push(1, 0, e.clone());
        let r = adaptive_r(&w, &method, &belief, &model);
        // rank one: the zero eigenvalue is lifted to the floor only
        let expect = &e * e.transpose();
        assert!((r - expect).norm() < 1e-5);
    }

    #[test]
    fn window_keeps_the_latest_entries() {
        let mut w = InnovationWindow::new(2, 3);
        for k in 0..5 {
            w.push(2, k, Vector::from_element(1, k as f64));
        }
        let ks: Vec<usize> = w.entries(2).iter().map(|(k, _)| *k).collect();
        assert_eq!(ks, vec![2, 3, 4]);
        assert!(w.entries(1).is_empty());
    }

    #[test]
    fn step_with_measurement_is_a_filter_step() {
        let (methods, dyns) = setup();
        let b = BeliefState::new(0.0, Vector::zeros(4), Mat::identity(4, 4));
        let mut w = InnovationWindow::new(2, 10);
        let z = Vector::from_vec(vec![0.3, -0.2]);
        let (next, id) = mh_step(&b, 0, &methods[1], Some(&z), &StaticMethod(1), &mut w, &LoopConfig::default(), &methods, &dyns).unwrap();
        let p = covariance_step(&b.phat, &dyns.step(9).transition, &dyns.model().c, &methods[1].r).unwrap();
        assert!((next.phat - p).norm() < 1e-14);
        assert_eq!(id, 1);
    }

    #[test]
    fn occluded_step_grows_uncertainty() {
        let (methods, dyns) = setup();
        let b = BeliefState::new(0.0, Vector::zeros(4), Mat::identity(4, 4));
        let mut w = InnovationWindow::new(2, 10);
        let (next, _) = mh_step(&b, 0, &methods[0], None, &StaticMethod(1), &mut w, &LoopConfig::default(), &methods, &dyns).unwrap();
        assert!(next.phat.trace() > b.phat.trace());
    }

    #[test]
    fn static_loop_reproduces_the_schedule() {
        let (methods, dyns) = setup();
        let trace = run_plate_loop(&dyns, &methods, &StaticMethod(2), 1.0, &mut Zeros, &LoopConfig::default()).unwrap();
        assert!(trace.complete);
        assert_eq!(trace.rows.len(), 31);
        let ticks: Vec<u64> = trace.epochs.iter().map(|e| e.tick).collect();
        assert_eq!(ticks, vec![0, 9, 18, 27]);
        assert!(trace.rows.iter().enumerate().all(|(i, r)| r.tick == i as u64));
        assert!(trace.rows.iter().filter(|r| r.measured).count() == 3);
    }

    #[test]
    fn exhausted_source_ends_cleanly() {
        let (methods, dyns) = setup();
        let mut src = ReplaySource { items: vec![Vector::zeros(2); 2].into() };
        let trace = run_plate_loop(&dyns, &methods, &StaticMethod(1), 1.0, &mut src, &LoopConfig::default()).unwrap();
        assert!(!trace.complete);
        assert_eq!(trace.epochs.len(), 2);
        assert_eq!(trace.rows.last().unwrap().tick, 6);
    }

    #[test]
    fn occlusion_drops_overlapping_detections() {
        let (methods, dyns) = setup();
        let cfg = LoopConfig { occlusions: vec![(0.4, 0.6)], ..LoopConfig::default() };
        let trace = run_plate_loop(&dyns, &methods, &StaticMethod(1), 1.0, &mut Zeros, &cfg).unwrap();
        let dropped: Vec<u64> = trace.epochs.iter().filter(|e| !e.delivered).map(|e| e.tick).collect();
        // epochs [9,12] .. [18,21] touch [12, 18] ticks
        assert_eq!(dropped, vec![9, 12, 15, 18]);
        let occl: Vec<f64> = trace.rows.iter().filter(|r| r.tick >= 12 && r.tick <= 21).map(|r| r.trace).collect();
        assert!(occl.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn csv_has_expected_columns() {
        let (methods, dyns) = setup();
        let trace = run_plate_loop(&dyns, &methods, &StaticMethod(1), 0.1, &mut Zeros, &LoopConfig::default()).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,xhat0,xhat1,xhat2,xhat3,trace,method,measured");
        assert_eq!(lines.count(), 4);
    }
}
